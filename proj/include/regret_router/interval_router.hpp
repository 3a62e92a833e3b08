// interval_router.hpp
//
// Routing under heterogeneous cost sensitivity. One router per grid value of
// lambda, and for every adjacent pair of grid values a joint model
//
//     f(x, lambda) = H ([f_lo(x), f_hi(x)] + g(lambda)) + h,
//     g(lambda)    = GELU(w_g * s + b_g),  s = (lambda - lo) / (hi - lo),
//
// whose endpoint branches stay frozen while g and the head are fine-tuned.
#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "activations.hpp"
#include "core_types.hpp"
#include "io.hpp"
#include "policy_net.hpp"
#include "surrogates.hpp"

namespace rr {

inline constexpr double kGridMatchTolerance = 1e-9;

class LambdaGrid {
public:
    LambdaGrid() = default;
    explicit LambdaGrid(std::vector<double> values) : values_(std::move(values)) {
        if (values_.size() < 2) throw ConfigError("lambda grid needs at least two values");
        for (std::size_t j = 0; j < values_.size(); ++j) {
            (void)CostSensitivity(values_[j]);
            if (j > 0 && !(values_[j] > values_[j - 1])) throw ConfigError("lambda grid must be strictly increasing");
        }
    }

    const std::vector<double>& values() const { return values_; }
    std::size_t size() const { return values_.size(); }
    double operator[](std::size_t j) const { return values_[j]; }

    std::optional<std::size_t> match(double lambda) const {
        for (std::size_t j = 0; j < values_.size(); ++j)
            if (std::abs(values_[j] - lambda) <= kGridMatchTolerance) return j;
        return std::nullopt;
    }

    /// j such that values[j] < lambda < values[j+1]; throws outside the hull.
    std::size_t bracket(double lambda) const {
        if (!(lambda >= values_.front() - kGridMatchTolerance && lambda <= values_.back() + kGridMatchTolerance))
            throw ConfigError("lambda " + std::to_string(lambda) + " lies outside the grid hull [" + std::to_string(values_.front()) + ", " +
                              std::to_string(values_.back()) + "]");
        for (std::size_t j = 0; j + 1 < values_.size(); ++j)
            if (lambda <= values_[j + 1]) return j;
        return values_.size() - 2;
    }

private:
    std::vector<double> values_;
};

/// Weight of the left endpoint: (hi - lambda) / (hi - lo).
inline double alpha(double lambda, double lo, double hi) {
    if (!(lo < hi)) throw ConfigError("alpha: interval bounds must satisfy lo < hi");
    if (lambda < lo || lambda > hi) throw ConfigError("alpha: lambda outside the interval");
    return (hi - lambda) / (hi - lo);
}

/// max_t |Y^lambda(t) - [alpha Y^lo(t) + (1 - alpha) Y^hi(t)]| on true outcomes.
inline double affine_closure_check(const FullFeedbackRecord& r, double lambda, double lo, double hi) {
    const double a = alpha(lambda, lo, hi);
    double worst = 0.0;
    for (std::size_t t = 0; t < r.treatments(); ++t) {
        const double direct = r.accuracy[t] - lambda * r.cost[t];
        const double blended = a * (r.accuracy[t] - lo * r.cost[t]) + (1.0 - a) * (r.accuracy[t] - hi * r.cost[t]);
        worst = std::max(worst, std::abs(direct - blended));
    }
    return worst;
}

struct PolicySegment {
    double lo = 0.0;
    double hi = 0.0;
    TreatmentId t = 0;
};

/// Maximal lambda intervals on which argmax_t [a_t - lambda c_t] is constant,
/// found by walking the upper envelope of the utility lines. Each step moves
/// to a strictly cheaper treatment, so there are at most T - 1 breakpoints.
inline std::vector<PolicySegment> optimal_policy_breakpoints(const FullFeedbackRecord& r, double lo, double hi) {
    if (!(lo <= hi)) throw ConfigError("optimal_policy_breakpoints: empty lambda range");
    const std::size_t T = r.treatments();
    const auto& a = r.accuracy;
    const auto& c = r.cost;

    // the winner just right of lo: highest utility, then cheapest, then lowest index
    TreatmentId cur = 0;
    for (TreatmentId t = 1; t < T; ++t) {
        const double yt = a[t] - lo * c[t], yc = a[cur] - lo * c[cur];
        if (yt > yc || (yt == yc && c[t] < c[cur])) cur = t;
    }

    std::vector<PolicySegment> out;
    double at = lo;
    while (true) {
        double next = std::numeric_limits<double>::infinity();
        std::optional<TreatmentId> successor;
        for (TreatmentId s = 0; s < T; ++s) {
            if (!(c[s] < c[cur])) continue;
            const double cross = (a[cur] - a[s]) / (c[cur] - c[s]);
            if (!(cross > at)) continue;
            if (cross < next || (cross == next && successor && c[s] < c[*successor])) {
                next = cross;
                successor = s;
            }
        }
        if (!successor || next >= hi) {
            out.push_back({at, hi, cur});
            return out;
        }
        out.push_back({at, next, cur});
        at = next;
        cur = *successor;
    }
}

/// Trains one router per grid value against that value's utility matrix.
inline std::vector<NetworkParams> train_endpoints(const Dataset& ds, const LambdaGrid& grid, const std::vector<UtilityMatrix>& per_lambda,
                                                  const LossSpec& spec, const TrainConfig& cfg) {
    if (per_lambda.size() != grid.size()) throw DataError("train_endpoints: need one utility matrix per grid value");
    std::vector<NetworkParams> out;
    for (std::size_t j = 0; j < grid.size(); ++j) {
        if (std::abs(per_lambda[j].lambda.value() - grid[j]) > kGridMatchTolerance)
            throw DataError("train_endpoints: utility matrix lambda does not match the grid");
        TrainConfig c = cfg;
        c.seed = cfg.seed + 1000003 * j;
        out.push_back(train(ds, per_lambda[j], spec, c).params);
    }
    return out;
}

/// Interval-conditioned router over [lo, hi].
struct JointRouter {
    NetworkParams left, right;  // frozen endpoint routers
    double lo = 0.0, hi = 1.0;
    Vector wg, bg;  // 2T
    Matrix H;       // T x 2T
    Vector hb;      // T

    std::size_t treatments() const { return static_cast<std::size_t>(H.rows()); }
    double scaled(double lambda) const { return (lambda - lo) / (hi - lo); }

    Vector embed(double lambda) const {
        return (wg * scaled(lambda) + bg).unaryExpr([](double v) { return gelu(v); });
    }

    /// Head applied to precomputed endpoint scores.
    Vector head(const Vector& left_scores, const Vector& right_scores, double lambda) const {
        Vector u(H.cols());
        u << left_scores, right_scores;
        return H * (u + embed(lambda)) + hb;
    }

    /// T x n scores for features X (d x n) at one lambda.
    Matrix scores(const Matrix& X, double lambda) const {
        Matrix U(H.cols(), X.cols());
        const auto T = static_cast<Eigen::Index>(treatments());
        U.topRows(T) = forward_batch(left, X);
        U.bottomRows(T) = forward_batch(right, X);
        return ((H * (U.colwise() + embed(lambda))).colwise() + hb).eval();
    }

    /// Even blend of the endpoint scores with a zero lambda embedding.
    static JointRouter initial(NetworkParams left, NetworkParams right, double lo, double hi) {
        if (!(lo < hi)) throw ConfigError("joint router needs lo < hi");
        if (left.output_dim() != right.output_dim() || left.input_dim() != right.input_dim())
            throw DataError("joint router endpoints have different shapes");
        const auto T = static_cast<Eigen::Index>(left.output_dim());
        JointRouter j{std::move(left), std::move(right), lo, hi, Vector::Zero(2 * T), Vector::Zero(2 * T), Matrix::Zero(T, 2 * T), Vector::Zero(T)};
        j.H.leftCols(T) = 0.5 * Matrix::Identity(T, T);
        j.H.rightCols(T) = 0.5 * Matrix::Identity(T, T);
        return j;
    }

    /// Head that scores alpha * left + (1 - alpha) * right, the affine blend
    /// reproducing the utility at lambda when the endpoints are exact.
    void set_blend(double alpha_value) {
        const auto T = static_cast<Eigen::Index>(treatments());
        H.leftCols(T) = alpha_value * Matrix::Identity(T, T);
        H.rightCols(T) = (1.0 - alpha_value) * Matrix::Identity(T, T);
        hb.setZero();
        wg.setZero();
        bg.setZero();
        // GELU(0) = 0, so the embedding contributes nothing
    }
};

struct IntervalTrainResult {
    JointRouter router;
    std::size_t best_epoch = 0;
    std::size_t epochs_run = 0;
    double best_metric = 0.0;
};

struct HeadGradient {
    Vector wg, bg, hb;
    Matrix H;
    double loss = 0.0;
};

/// rm_softmax loss of the head averaged over both endpoint lambdas and the
/// given columns, with its gradient. U stacks left and right endpoint scores
/// (2T x n); Ylo and Yhi hold the endpoint utility rows as columns.
inline HeadGradient head_loss_gradient(const JointRouter& jr, const Matrix& U, const Matrix& Ylo, const Matrix& Yhi,
                                       const std::vector<Eigen::Index>& cols, const LossSpec& spec) {
    const auto T = static_cast<Eigen::Index>(jr.treatments());
    HeadGradient out{Vector::Zero(2 * T), Vector::Zero(2 * T), Vector::Zero(T), Matrix::Zero(T, 2 * T), 0.0};
    if (cols.empty()) return out;
    const double inv = 1.0 / (2.0 * static_cast<double>(cols.size()));
    Vector grad_s(T);
    for (int e = 0; e < 2; ++e) {
        const double s = e == 0 ? 0.0 : 1.0;
        const Vector z = jr.wg * s + jr.bg;
        const Vector g = z.unaryExpr([](double q) { return gelu(q); });
        const Vector gd = z.unaryExpr([](double q) { return gelu_derivative(q); });
        const Matrix& Y = e == 0 ? Ylo : Yhi;
        Vector du_sum = Vector::Zero(2 * T);
        for (const auto col : cols) {
            const Vector u = U.col(col) + g;
            const Vector sc = jr.H * u + jr.hb;
            out.loss += loss_with_gradient(spec, sc, Y.col(col), grad_s);
            out.H.noalias() += grad_s * u.transpose();
            out.hb += grad_s;
            du_sum.noalias() += jr.H.transpose() * grad_s;
        }
        const Vector dz = du_sum.cwiseProduct(gd);
        out.wg += dz * s;
        out.bg += dz;
    }
    out.H *= inv;
    out.hb *= inv;
    out.wg *= inv;
    out.bg *= inv;
    out.loss *= inv;
    return out;
}

/// Fine-tunes g and the head on the rm_softmax surrogate averaged over both
/// endpoint lambdas and their utility matrices; endpoints are not updated.
/// Early stopping tracks the mean hard-argmax validation regret of the two
/// endpoint lambdas.
inline IntervalTrainResult train_interval(const Dataset& ds, const NetworkParams& left, const NetworkParams& right,
                                          const UtilityMatrix& um_lo, const UtilityMatrix& um_hi, const TrainConfig& cfg) {
    cfg.validate();
    if (um_lo.rows() != ds.size() || um_hi.rows() != ds.size()) throw DataError("train_interval: utility matrices do not match dataset");
    const double lo = um_lo.lambda.value(), hi = um_hi.lambda.value();
    JointRouter jr = JointRouter::initial(left, right, lo, hi);
    const auto T = static_cast<Eigen::Index>(jr.treatments());
    const auto tr = ds.indices(Split::train);
    const auto va = ds.indices(Split::validation);
    if (tr.empty()) throw DataError("train_interval: empty training split");
    if (va.empty()) throw DataError("train_interval: empty validation split");

    auto endpoint_block = [&](const std::vector<std::size_t>& rows) {
        const Matrix X = ds.features(rows);
        Matrix U(2 * T, X.cols());
        U.topRows(T) = forward_batch(left, X);
        U.bottomRows(T) = forward_batch(right, X);
        return U;
    };
    const Matrix U_tr = endpoint_block(tr), U_va = endpoint_block(va);
    const Matrix Ylo_tr = um_lo.subset(tr).values.transpose(), Yhi_tr = um_hi.subset(tr).values.transpose();
    const Matrix Ylo_va = um_lo.subset(va).values.transpose(), Yhi_va = um_hi.subset(va).values.transpose();
    const LossSpec spec = LossSpec::rm_softmax(cfg.tau);

    auto val_regret = [&](const JointRouter& r) {
        const Matrix Slo = (r.H * (U_va.colwise() + r.embed(lo))).colwise() + r.hb;
        const Matrix Shi = (r.H * (U_va.colwise() + r.embed(hi))).colwise() + r.hb;
        return 0.5 * (detail::column_regret(Slo, Ylo_va) + detail::column_regret(Shi, Yhi_va));
    };

    // Adam over (wg, bg, H, hb)
    struct Moments {
        Vector wg, bg, hb;
        Matrix H;
    };
    auto zero_moments = [&] { return Moments{Vector::Zero(2 * T), Vector::Zero(2 * T), Vector::Zero(T), Matrix::Zero(T, 2 * T)}; };
    Moments m = zero_moments(), v = zero_moments();
    std::uint64_t step = 0;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    auto adam = [&](auto& param, const auto& grad, auto& mm, auto& vv, double c1, double c2) {
        mm = b1 * mm + (1.0 - b1) * grad;
        vv = b2 * vv + (1.0 - b2) * grad.cwiseProduct(grad);
        param.array() -= cfg.lr * (mm.array() / c1) / ((vv.array() / c2).sqrt() + eps);
    };

    IntervalTrainResult res{jr, 0, 0, val_regret(jr)};
    std::size_t since_improvement = 0;
    std::mt19937_64 rng(cfg.seed ^ 0xD1B54A32D192ED03ULL);
    const auto n = tr.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});

    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[static_cast<std::size_t>(rng() % i)]);
        for (std::size_t begin = 0; begin < n; begin += cfg.batch_size) {
            const std::size_t end = std::min(n, begin + cfg.batch_size);
            std::vector<Eigen::Index> cols;
            for (std::size_t k = begin; k < end; ++k) cols.push_back(static_cast<Eigen::Index>(order[k]));
            const HeadGradient g = head_loss_gradient(jr, U_tr, Ylo_tr, Yhi_tr, cols, spec);
            ++step;
            const double c1 = 1.0 - std::pow(b1, static_cast<double>(step)), c2 = 1.0 - std::pow(b2, static_cast<double>(step));
            adam(jr.H, g.H, m.H, v.H, c1, c2);
            adam(jr.hb, g.hb, m.hb, v.hb, c1, c2);
            adam(jr.wg, g.wg, m.wg, v.wg, c1, c2);
            adam(jr.bg, g.bg, m.bg, v.bg, c1, c2);
        }
        res.epochs_run = epoch;
        const double metric = val_regret(jr);
        if (metric < res.best_metric - 1e-12) {
            res.best_metric = metric;
            res.best_epoch = epoch;
            res.router = jr;
            since_improvement = 0;
        } else {
            if (metric <= res.best_metric) {
                res.best_epoch = epoch;
                res.router = jr;
            }
            if (++since_improvement >= cfg.patience) break;
        }
    }
    return res;
}

/// Dispatch table: exact grid hits use the endpoint router, anything strictly
/// inside an interval uses that interval's joint router.
struct RoutingTable {
    LambdaGrid grid;
    std::vector<NetworkParams> endpoints;  // one per grid value
    std::vector<JointRouter> intervals;    // one per adjacent pair

    void validate() const {
        if (endpoints.size() != grid.size()) throw DataError("routing table: need one endpoint per grid value");
        if (intervals.size() + 1 != grid.size()) throw DataError("routing table: need one joint router per interval");
    }

    Matrix scores(const Matrix& X, double lambda) const {
        if (const auto j = grid.match(lambda)) return forward_batch(endpoints[*j], X);
        return intervals[grid.bracket(lambda)].scores(X, lambda);
    }

    std::vector<TreatmentId> route_batch(const Matrix& X, double lambda) const {
        const Matrix S = scores(X, lambda);
        std::vector<TreatmentId> out(static_cast<std::size_t>(S.cols()));
        for (Eigen::Index j = 0; j < S.cols(); ++j) out[static_cast<std::size_t>(j)] = argmax_lowest(Vector(S.col(j)));
        return out;
    }
};

inline TreatmentId route(const FeatureVector& x, double lambda, const RoutingTable& table) {
    const Matrix X = Eigen::Map<const Matrix>(x.data(), static_cast<Eigen::Index>(x.size()), 1);
    return table.route_batch(X, lambda).front();
}

// ---------------------------------------------------------------------------
// Serialization. Joint-router files hold only the trainable head; endpoints
// are bound from the manifest.

inline nlohmann::json joint_head_to_json(const JointRouter& j) {
    auto flat = [](const auto& M) { return std::vector<double>(M.data(), M.data() + M.size()); };
    return {{"format", "regret_router.interval"}, {"version", 1}, {"lo", j.lo}, {"hi", j.hi}, {"treatments", j.treatments()},
            {"wg", flat(j.wg)}, {"bg", flat(j.bg)}, {"H", flat(j.H)}, {"hb", flat(j.hb)}};
}

inline JointRouter joint_from_json(const nlohmann::json& js, NetworkParams left, NetworkParams right) {
    if (js.value("format", "") != "regret_router.interval") throw DataError("not an interval checkpoint");
    JointRouter j = JointRouter::initial(std::move(left), std::move(right), js.at("lo").get<double>(), js.at("hi").get<double>());
    const auto T = static_cast<Eigen::Index>(js.at("treatments").get<std::size_t>());
    if (T != static_cast<Eigen::Index>(j.treatments())) throw DataError("interval checkpoint treatment count mismatch");
    auto load = [&](const char* key, auto& M) {
        const auto v = js.at(key).get<std::vector<double>>();
        if (static_cast<Eigen::Index>(v.size()) != M.size()) throw DataError(std::string("interval checkpoint block ") + key + " has wrong size");
        std::copy(v.begin(), v.end(), M.data());
    };
    load("wg", j.wg);
    load("bg", j.bg);
    load("H", j.H);
    load("hb", j.hb);
    return j;
}

struct Manifest {
    std::vector<double> grid;
    std::vector<std::string> endpoints;  // network checkpoint paths
    std::vector<std::string> intervals;  // interval checkpoint paths
};

inline void save_manifest(const std::string& path, const Manifest& m) {
    const nlohmann::json j{{"format", "regret_router.manifest"}, {"version", 1}, {"grid", m.grid}, {"endpoints", m.endpoints}, {"intervals", m.intervals}};
    write_file_atomic(path, j.dump(1) + '\n');
}

inline Manifest load_manifest(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot read manifest " + path);
    try {
        const auto j = nlohmann::json::parse(is);
        if (j.value("format", "") != "regret_router.manifest") throw DataError("not a manifest: " + path);
        return {j.at("grid").get<std::vector<double>>(), j.at("endpoints").get<std::vector<std::string>>(),
                j.at("intervals").get<std::vector<std::string>>()};
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed manifest " + path + ": " + e.what());
    }
}

}  // namespace rr
