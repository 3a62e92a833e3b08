// baselines.hpp
//
// Fitted routing policies: the decoupled accuracy/cost baseline,
// regress-and-compare, causal kNN (CARROT-style), the network policies trained
// on counterfactual utilities, and the full-feedback oracle.
#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "core_types.hpp"
#include "io.hpp"
#include "counterfactual.hpp"
#include "policy_net.hpp"
#include "surrogates.hpp"

namespace rr {

enum class PolicyKind { baseline_decoupled, regress_compare, carrot_knn, cf_regression, rm_classification, rm_softmax, full_feedback };

inline const char* to_string(PolicyKind k) {
    switch (k) {
        case PolicyKind::baseline_decoupled: return "baseline_decoupled";
        case PolicyKind::regress_compare: return "regress_compare";
        case PolicyKind::carrot_knn: return "carrot_knn";
        case PolicyKind::cf_regression: return "cf_regression";
        case PolicyKind::rm_classification: return "rm_classification";
        case PolicyKind::rm_softmax: return "rm_softmax";
        case PolicyKind::full_feedback: return "full_feedback";
    }
    return "?";
}

inline PolicyKind parse_policy_kind(std::string_view s) {
    for (auto k : {PolicyKind::baseline_decoupled, PolicyKind::regress_compare, PolicyKind::carrot_knn, PolicyKind::cf_regression,
                   PolicyKind::rm_classification, PolicyKind::rm_softmax, PolicyKind::full_feedback})
        if (s == to_string(k)) return k;
    throw ConfigError("unknown method '" + std::string(s) + "'");
}

/// Whether fitting the kind needs a counterfactual utility matrix.
inline bool needs_counterfactual(PolicyKind k) {
    return k == PolicyKind::regress_compare || k == PolicyKind::carrot_knn || k == PolicyKind::cf_regression ||
           k == PolicyKind::rm_classification || k == PolicyKind::rm_softmax;
}

/// Nearest-neighbour table over training features and their utility rows.
struct KnnTable {
    Matrix features;  // d x n
    Matrix utility;   // n x T
    std::size_t k = 50;

    /// Indices of the k nearest rows, ties in distance broken by index.
    std::vector<std::size_t> neighbours(const Eigen::Ref<const Vector>& x) const {
        const auto n = static_cast<std::size_t>(features.cols());
        std::vector<double> dist(n);
        for (std::size_t j = 0; j < n; ++j) dist[j] = (features.col(static_cast<Eigen::Index>(j)) - x).squaredNorm();
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        auto closer = [&](std::size_t a, std::size_t b) { return dist[a] < dist[b] || (dist[a] == dist[b] && a < b); };
        std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), closer);
        idx.resize(k);
        return idx;
    }

    TreatmentId decide(const Eigen::Ref<const Vector>& x) const {
        Vector mean = Vector::Zero(utility.cols());
        for (auto j : neighbours(x)) mean += utility.row(static_cast<Eigen::Index>(j)).transpose();
        return argmax_lowest(Vector(mean / static_cast<double>(k)));
    }
};

class RouterPolicy {
public:
    PolicyKind kind() const { return kind_; }
    CostSensitivity lambda() const { return lambda_; }
    std::size_t treatments() const { return T_; }

    /// One decision per column of X (d x n).
    std::vector<TreatmentId> decide_batch(const Matrix& X) const {
        const Matrix S = scores(X);
        std::vector<TreatmentId> out(static_cast<std::size_t>(X.cols()));
        for (Eigen::Index j = 0; j < S.cols(); ++j) out[static_cast<std::size_t>(j)] = argmax_lowest(Vector(S.col(j)));
        return out;
    }

    TreatmentId decide(const FeatureVector& x) const {
        const Matrix X = Eigen::Map<const Matrix>(x.data(), static_cast<Eigen::Index>(x.size()), 1);
        return decide_batch(X).front();
    }

    /// Per-treatment decision scores (T x n); kNN policies return mean
    /// neighbour utilities.
    Matrix scores(const Matrix& X) const {
        switch (kind_) {
            case PolicyKind::cf_regression:
            case PolicyKind::rm_classification:
            case PolicyKind::rm_softmax:
            case PolicyKind::full_feedback: return forward_batch(*network_, X);
            case PolicyKind::regress_compare: {
                Matrix S(static_cast<Eigen::Index>(T_), X.cols());
                for (std::size_t t = 0; t < T_; ++t) S.row(static_cast<Eigen::Index>(t)) = forward_batch(regressors_[t], X).row(0);
                return S;
            }
            case PolicyKind::baseline_decoupled: {
                Matrix S(static_cast<Eigen::Index>(T_), X.cols());
                for (std::size_t t = 0; t < T_; ++t)
                    S.row(static_cast<Eigen::Index>(t)) =
                        forward_batch(regressors_[t], X).row(0) - lambda_.value() * cost_unit_ * forward_batch(regressors_[T_ + t], X).row(0);
                return S;
            }
            case PolicyKind::carrot_knn: {
                Matrix S(static_cast<Eigen::Index>(T_), X.cols());
                for (Eigen::Index j = 0; j < X.cols(); ++j) {
                    Vector mean = Vector::Zero(static_cast<Eigen::Index>(T_));
                    for (auto i : knn_->neighbours(X.col(j))) mean += knn_->utility.row(static_cast<Eigen::Index>(i)).transpose();
                    S.col(j) = mean / static_cast<double>(knn_->k);
                }
                return S;
            }
        }
        throw ConfigError("unknown policy kind");
    }

    static RouterPolicy from_network(PolicyKind kind, CostSensitivity lambda, NetworkParams net) {
        RouterPolicy p(kind, lambda, net.output_dim());
        p.network_ = std::move(net);
        return p;
    }
    static RouterPolicy from_regressors(CostSensitivity lambda, std::vector<NetworkParams> nets) {
        RouterPolicy p(PolicyKind::regress_compare, lambda, nets.size());
        p.regressors_ = std::move(nets);
        return p;
    }
    /// accuracy and cost regressors; cost predictions are in units of cost_unit.
    static RouterPolicy from_decoupled(CostSensitivity lambda, std::vector<NetworkParams> accuracy, std::vector<NetworkParams> cost, double cost_unit) {
        RouterPolicy p(PolicyKind::baseline_decoupled, lambda, accuracy.size());
        p.regressors_ = std::move(accuracy);
        p.regressors_.insert(p.regressors_.end(), cost.begin(), cost.end());
        p.cost_unit_ = cost_unit;
        return p;
    }
    static RouterPolicy from_knn(CostSensitivity lambda, KnnTable table) {
        RouterPolicy p(PolicyKind::carrot_knn, lambda, static_cast<std::size_t>(table.utility.cols()));
        p.knn_ = std::move(table);
        return p;
    }

    friend nlohmann::json policy_to_json(const RouterPolicy& p);
    friend RouterPolicy policy_from_json(const nlohmann::json& j);

private:
    RouterPolicy(PolicyKind k, CostSensitivity l, std::size_t T) : kind_(k), lambda_(l), T_(T) {}

    PolicyKind kind_;
    CostSensitivity lambda_;
    std::size_t T_ = 0;
    std::optional<NetworkParams> network_;
    std::vector<NetworkParams> regressors_;
    double cost_unit_ = 1.0;
    std::optional<KnnTable> knn_;
};

// ---------------------------------------------------------------------------
// Fitting

/// Accuracy and cost regressors fitted on logged cells only; independent of
/// lambda, so one fit serves every cost sensitivity.
struct DecoupledEstimates {
    std::vector<NetworkParams> accuracy;
    std::vector<NetworkParams> cost;
    double cost_unit = 1.0;

    RouterPolicy policy(CostSensitivity lambda) const { return RouterPolicy::from_decoupled(lambda, accuracy, cost, cost_unit); }
};

inline DecoupledEstimates fit_decoupled_estimates(const Dataset& ds, const TrainConfig& cfg) {
    DecoupledEstimates e;
    double sum = 0.0;
    const auto tr = ds.indices(Split::train);
    for (auto i : tr) sum += ds.samples[i].c;
    e.cost_unit = (tr.empty() || sum <= 0.0) ? 1.0 : sum / static_cast<double>(tr.size());
    e.accuracy = detail::fit_per_treatment(ds, cfg, [](const ObservationalSample& s) { return s.a; });
    TrainConfig cc = cfg;
    cc.seed = cfg.seed + 104729;
    e.cost = detail::fit_per_treatment(ds, cc, [unit = e.cost_unit](const ObservationalSample& s) { return s.c / unit; });
    return e;
}

inline RouterPolicy fit_baseline_decoupled(const Dataset& ds, CostSensitivity lambda, const TrainConfig& cfg) {
    return fit_decoupled_estimates(ds, cfg).policy(lambda);
}

/// Per-treatment regressors on the counterfactual targets of every train row.
inline RouterPolicy fit_regress_compare(const UtilityMatrix& um, const Dataset& ds, const TrainConfig& cfg) {
    if (um.rows() != ds.size()) throw DataError("fit_regress_compare: utility matrix rows do not match dataset");
    const auto tr = ds.indices(Split::train);
    const auto va = ds.indices(Split::validation);
    if (tr.empty() || va.empty()) throw DataError("fit_regress_compare: needs train and validation rows");
    const Matrix Xtr = ds.features(tr), Xva = ds.features(va);
    const Matrix Ytr = um.subset(tr).values.transpose(), Yva = um.subset(va).values.transpose();
    std::vector<NetworkParams> nets;
    for (std::size_t t = 0; t < ds.T; ++t) {
        TrainConfig c = cfg;
        c.seed = cfg.seed + 7919 * (t + 1);
        const auto r = static_cast<Eigen::Index>(t);
        nets.push_back(train_network(Xtr, Ytr.row(r), Xva, Yva.row(r), LossSpec::cf_regression(), c, Selection::loss).params);
    }
    return RouterPolicy::from_regressors(um.lambda, std::move(nets));
}

inline RouterPolicy fit_carrot_knn(const UtilityMatrix& um, const Dataset& ds, std::size_t k) {
    if (um.rows() != ds.size()) throw DataError("fit_carrot_knn: utility matrix rows do not match dataset");
    const auto tr = ds.indices(Split::train);
    if (k == 0) throw ConfigError("fit_carrot_knn: k must be >= 1");
    if (k > tr.size()) throw ConfigError("fit_carrot_knn: k exceeds the training set size");
    return RouterPolicy::from_knn(um.lambda, KnnTable{ds.features(tr), um.subset(tr).values, k});
}

/// Network policy trained against counterfactual utilities with the loss that
/// matches its kind (cf_regression, rm_classification or rm_softmax).
inline RouterPolicy fit_network_policy(PolicyKind kind, const UtilityMatrix& um, const Dataset& ds, const TrainConfig& cfg) {
    LossSpec spec;
    switch (kind) {
        case PolicyKind::cf_regression: spec = LossSpec::cf_regression(); break;
        case PolicyKind::rm_classification: spec = LossSpec::rm_classification(); break;
        case PolicyKind::rm_softmax: spec = LossSpec::rm_softmax(cfg.tau); break;
        default: throw ConfigError(std::string("fit_network_policy: ") + to_string(kind) + " is not a network policy");
    }
    return RouterPolicy::from_network(kind, um.lambda, train(ds, um, spec, cfg).params);
}

/// True utilities of full-feedback records as a matrix.
inline UtilityMatrix true_utility_matrix(const std::vector<FullFeedbackRecord>& records, CostSensitivity lambda) {
    validate_records(records);
    const std::size_t T = records.front().treatments();
    UtilityMatrix um{Matrix(static_cast<Eigen::Index>(records.size()), static_cast<Eigen::Index>(T)), lambda};
    for (std::size_t i = 0; i < records.size(); ++i)
        for (std::size_t t = 0; t < T; ++t)
            um.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)) = utility(records[i].accuracy[t], records[i].cost[t], lambda);
    return um;
}

/// Dataset view of full-feedback records (treatment fields unused) carrying
/// the given split tags.
inline Dataset records_as_dataset(const std::vector<FullFeedbackRecord>& records, const std::vector<Split>& split) {
    validate_records(records);
    if (split.size() != records.size()) throw DataError("split tags do not cover every record");
    Dataset ds;
    ds.d = records.front().x.size();
    ds.T = records.front().treatments();
    for (const auto& r : records) ds.samples.push_back({r.x, 0, r.accuracy[0], r.cost[0]});
    ds.split = split;
    return ds;
}

/// Oracle: multiclass classifier on the true optimal treatment labels.
inline RouterPolicy fit_full_feedback(const std::vector<FullFeedbackRecord>& records, const std::vector<Split>& split,
                                      CostSensitivity lambda, const TrainConfig& cfg) {
    const Dataset ds = records_as_dataset(records, split);
    const UtilityMatrix um = true_utility_matrix(records, lambda);
    return RouterPolicy::from_network(PolicyKind::full_feedback, lambda, train(ds, um, LossSpec::rm_classification(), cfg).params);
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json policy_to_json(const RouterPolicy& p) {
    nlohmann::json j = {{"format", "regret_router.policy"}, {"version", 1}, {"kind", to_string(p.kind_)},
                        {"lambda", p.lambda_.value()}, {"treatments", p.T_}};
    if (p.network_) j["network"] = params_to_json(*p.network_);
    if (!p.regressors_.empty()) {
        j["regressors"] = nlohmann::json::array();
        for (const auto& r : p.regressors_) j["regressors"].push_back(params_to_json(r));
        j["cost_unit"] = p.cost_unit_;
    }
    if (p.knn_) {
        j["knn"] = {{"k", p.knn_->k}, {"d", p.knn_->features.rows()}, {"n", p.knn_->features.cols()},
                    {"features", std::vector<double>(p.knn_->features.data(), p.knn_->features.data() + p.knn_->features.size())},
                    {"utility", std::vector<double>(p.knn_->utility.data(), p.knn_->utility.data() + p.knn_->utility.size())}};
    }
    return j;
}

inline RouterPolicy policy_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "regret_router.policy") throw DataError("not a policy file");
    RouterPolicy p(parse_policy_kind(j.at("kind").get<std::string>()), CostSensitivity(j.at("lambda").get<double>()),
                   j.at("treatments").get<std::size_t>());
    if (j.contains("network")) p.network_ = params_from_json(j.at("network"));
    if (j.contains("regressors")) {
        for (const auto& r : j.at("regressors")) p.regressors_.push_back(params_from_json(r));
        p.cost_unit_ = j.at("cost_unit").get<double>();
    }
    if (j.contains("knn")) {
        const auto& k = j.at("knn");
        const auto d = k.at("d").get<Eigen::Index>(), n = k.at("n").get<Eigen::Index>();
        const auto f = k.at("features").get<std::vector<double>>();
        const auto u = k.at("utility").get<std::vector<double>>();
        if (static_cast<Eigen::Index>(f.size()) != d * n || static_cast<Eigen::Index>(u.size()) != n * static_cast<Eigen::Index>(p.T_))
            throw DataError("policy file: knn table has wrong size");
        p.knn_ = KnnTable{Eigen::Map<const Matrix>(f.data(), d, n), Eigen::Map<const Matrix>(u.data(), n, static_cast<Eigen::Index>(p.T_)),
                          k.at("k").get<std::size_t>()};
    }
    const bool ok = (p.kind_ == PolicyKind::carrot_knn) ? p.knn_.has_value()
                    : (p.kind_ == PolicyKind::regress_compare) ? p.regressors_.size() == p.T_
                    : (p.kind_ == PolicyKind::baseline_decoupled) ? p.regressors_.size() == 2 * p.T_
                                                                  : p.network_.has_value();
    if (!ok) throw DataError("policy file: missing fitted models for kind " + std::string(to_string(p.kind_)));
    return p;
}

inline void save_policy(const std::string& path, const RouterPolicy& p) {
    write_file_atomic(path, policy_to_json(p).dump(1) + '\n');
}

inline RouterPolicy load_policy(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot read policy " + path);
    try {
        return policy_from_json(nlohmann::json::parse(is));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed policy " + path + ": " + e.what());
    }
}

}  // namespace rr
