// evaluation.hpp
//
// Test-set metrics, multi-seed experiment runner and report formatting.
// TrialResult keeps raw utilities in [−λc, 1]; reports print them ×100.
#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <exception>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "baselines.hpp"
#include "counterfactual.hpp"
#include "interval_router.hpp"
#include "io.hpp"
#include "synthetic.hpp"

namespace rr {

struct TrialResult {
    std::string method;
    double lambda = 0.0;
    std::uint64_t seed = 0;
    double utility = 0.0;
    double accuracy = 0.0;
    double cost = 0.0;
    double regret = 0.0;
};

struct CurvePoint {
    double cost = 0.0;
    double accuracy = 0.0;
    double lambda = 0.0;
};

inline Matrix record_features(const std::vector<FullFeedbackRecord>& records) {
    validate_records(records);
    const std::size_t d = records.front().x.size();
    Matrix X(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(records.size()));
    for (std::size_t i = 0; i < records.size(); ++i)
        for (std::size_t k = 0; k < d; ++k) X(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i)) = records[i].x[k];
    return X;
}

/// Scores decisions against the true outcomes of each record.
inline TrialResult evaluate_decisions(const std::vector<TreatmentId>& decisions, const std::vector<FullFeedbackRecord>& records,
                                      CostSensitivity lambda) {
    if (records.empty()) throw DataError("evaluate: empty test set");
    if (decisions.size() != records.size()) throw DataError("evaluate: one decision per record required");
    TrialResult r;
    r.lambda = lambda.value();
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& rec = records[i];
        const TreatmentId t = decisions[i];
        if (t >= rec.treatments()) throw DataError("evaluate: decision out of range");
        double best = utility(rec.accuracy[0], rec.cost[0], lambda);
        for (std::size_t k = 1; k < rec.treatments(); ++k) best = std::max(best, utility(rec.accuracy[k], rec.cost[k], lambda));
        r.accuracy += rec.accuracy[t];
        r.cost += rec.cost[t];
        r.regret += best - utility(rec.accuracy[t], rec.cost[t], lambda);
    }
    const double n = static_cast<double>(records.size());
    r.accuracy /= n;
    r.cost /= n;
    r.regret /= n;
    r.utility = r.accuracy - r.lambda * r.cost;
    return r;
}

inline TrialResult evaluate_policy(const RouterPolicy& policy, const std::vector<FullFeedbackRecord>& records, CostSensitivity lambda) {
    TrialResult r = evaluate_decisions(policy.decide_batch(record_features(records)), records, lambda);
    r.method = to_string(policy.kind());
    return r;
}

/// Mean accuracy and cost of one method per lambda, sorted by cost.
inline std::vector<CurvePoint> accuracy_cost_curve(const std::vector<TrialResult>& results) {
    std::map<double, std::tuple<double, double, std::size_t>> acc;
    for (const auto& r : results) {
        auto& [a, c, n] = acc[r.lambda];
        a += r.accuracy;
        c += r.cost;
        ++n;
    }
    if (acc.size() < 2) throw ConfigError("accuracy_cost_curve: needs at least two lambda values");
    std::vector<CurvePoint> pts;
    for (const auto& [lambda, v] : acc) {
        const auto& [a, c, n] = v;
        pts.push_back({c / static_cast<double>(n), a / static_cast<double>(n), lambda});
    }
    std::stable_sort(pts.begin(), pts.end(), [](const CurvePoint& p, const CurvePoint& q) {
        if (p.cost != q.cost) return p.cost < q.cost;
        return p.accuracy < q.accuracy;
    });
    return pts;
}

/// Trapezoidal area under accuracy over raw cost.
inline double auc(std::vector<CurvePoint> points) {
    std::sort(points.begin(), points.end(), [](const CurvePoint& p, const CurvePoint& q) {
        if (p.cost != q.cost) return p.cost < q.cost;
        return p.accuracy < q.accuracy;
    });
    std::size_t distinct = 0;
    for (std::size_t i = 0; i < points.size(); ++i)
        if (i == 0 || points[i].cost != points[i - 1].cost) ++distinct;
    if (distinct < 2) throw ConfigError("auc: needs at least two distinct costs");
    double area = 0.0;
    for (std::size_t i = 1; i < points.size(); ++i)
        area += 0.5 * (points[i].accuracy + points[i - 1].accuracy) * (points[i].cost - points[i - 1].cost);
    return area;
}

// ---------------------------------------------------------------------------
// Summaries and reports

struct SummaryRow {
    std::string method;
    double lambda = 0.0;
    double mean = 0.0;  // ×100
    double std = 0.0;   // ×100, sample convention
    std::size_t n = 0;
};

inline std::pair<double, double> mean_and_std(const std::vector<double>& v) {
    if (v.empty()) return {0.0, 0.0};
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    if (v.size() < 2) return {m, 0.0};
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return {m, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

/// Groups by (method, lambda) in order of first appearance.
inline std::vector<SummaryRow> summarize(const std::vector<TrialResult>& results) {
    std::vector<std::pair<std::string, double>> keys;
    std::map<std::pair<std::string, double>, std::vector<double>> groups;
    for (const auto& r : results) {
        const auto key = std::make_pair(r.method, r.lambda);
        auto [it, fresh] = groups.try_emplace(key);
        if (fresh) keys.push_back(key);
        it->second.push_back(100.0 * r.utility);
    }
    std::vector<SummaryRow> out;
    for (const auto& key : keys) {
        const auto& v = groups.at(key);
        const auto [m, s] = mean_and_std(v);
        out.push_back({key.first, key.second, m, s, v.size()});
    }
    return out;
}

inline std::string trials_csv(const std::vector<TrialResult>& results) {
    std::string out = "method,lambda,seed,utility,accuracy,cost,regret\n";
    for (const auto& r : results)
        out += r.method + ',' + format_double(r.lambda) + ',' + std::to_string(r.seed) + ',' + format_double(r.utility) + ',' +
               format_double(r.accuracy) + ',' + format_double(r.cost) + ',' + format_double(r.regret) + '\n';
    return out;
}

inline std::vector<TrialResult> parse_trials_csv(const std::string& text) {
    const CsvTable t = parse_csv(text);
    const auto cm = t.column("method"), cl = t.column("lambda"), cs = t.column("seed"), cu = t.column("utility"), ca = t.column("accuracy"),
               cc = t.column("cost"), cr = t.column("regret");
    auto parse_seed = [](const std::string& s) {
        std::uint64_t v = 0;
        const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
        if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) throw DataError("cannot parse seed value '" + s + "'");
        return v;
    };
    std::vector<TrialResult> out;
    for (const auto& row : t.rows)
        out.push_back({row[cm], parse_double(row[cl], "lambda"), parse_seed(row[cs]), parse_double(row[cu], "utility"),
                       parse_double(row[ca], "accuracy"), parse_double(row[cc], "cost"), parse_double(row[cr], "regret")});
    return out;
}

inline std::string report_csv(const std::vector<SummaryRow>& rows) {
    std::string out = "method,lambda,mean,std\n";
    for (const auto& r : rows) out += r.method + ',' + format_double(r.lambda) + ',' + format_double(r.mean) + ',' + format_double(r.std) + '\n';
    return out;
}

inline std::vector<SummaryRow> parse_report_csv(const std::string& text) {
    const CsvTable t = parse_csv(text);
    if (t.header != std::vector<std::string>{"method", "lambda", "mean", "std"}) throw DataError("report header must be method,lambda,mean,std");
    std::vector<SummaryRow> out;
    for (const auto& row : t.rows) out.push_back({row[0], parse_double(row[1], "lambda"), parse_double(row[2], "mean"), parse_double(row[3], "std"), 0});
    return out;
}

inline std::string fixed2(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

/// Methods as rows, lambdas as columns, cells "mean±std" with two decimals.
inline std::string report_table(const std::vector<SummaryRow>& rows) {
    std::vector<std::string> methods;
    std::vector<double> lambdas;
    std::map<std::pair<std::string, double>, std::string> cells;
    for (const auto& r : rows) {
        if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
        if (std::find(lambdas.begin(), lambdas.end(), r.lambda) == lambdas.end()) lambdas.push_back(r.lambda);
        cells[{r.method, r.lambda}] = fixed2(r.mean) + "±" + fixed2(r.std);
    }
    std::sort(lambdas.begin(), lambdas.end());
    // "±" is two bytes in UTF-8 but one column wide.
    auto width = [](const std::string& s) {
        std::size_t w = 0;
        for (unsigned char ch : s)
            if ((ch & 0xC0) != 0x80) ++w;
        return w;
    };
    std::size_t mw = std::string("Method").size();
    for (const auto& m : methods) mw = std::max(mw, m.size());
    std::vector<std::string> head;
    std::size_t cw = 0;
    for (double l : lambdas) {
        head.push_back("λ=" + format_double(l));
        cw = std::max(cw, width(head.back()));
    }
    for (const auto& [k, v] : cells) cw = std::max(cw, width(v));
    auto pad = [&](const std::string& s, std::size_t w, bool left) {
        const std::string fill(w > width(s) ? w - width(s) : 0, ' ');
        return left ? s + fill : fill + s;
    };
    std::string out = pad("Method", mw, true);
    for (const auto& h : head) out += "  " + pad(h, cw, false);
    out += '\n';
    for (const auto& m : methods) {
        out += pad(m, mw, true);
        for (double l : lambdas) {
            const auto it = cells.find({m, l});
            out += "  " + pad(it == cells.end() ? "-" : it->second, cw, false);
        }
        out += '\n';
    }
    return out;
}

/// Curve points of every method, grouped by method in order of appearance.
inline std::string curves_csv(const std::vector<TrialResult>& results) {
    std::vector<std::string> methods;
    for (const auto& r : results)
        if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
    std::string out = "method,lambda,cost,accuracy\n";
    for (const auto& m : methods) {
        std::vector<TrialResult> sub;
        for (const auto& r : results)
            if (r.method == m) sub.push_back(r);
        std::map<double, int> lambdas;
        for (const auto& r : sub) lambdas[r.lambda] = 1;
        if (lambdas.size() < 2) continue;
        for (const auto& p : accuracy_cost_curve(sub))
            out += m + ',' + format_double(p.lambda) + ',' + format_double(p.cost) + ',' + format_double(p.accuracy) + '\n';
    }
    return out;
}

inline std::string auc_csv(const std::vector<TrialResult>& results) {
    std::vector<std::string> methods;
    for (const auto& r : results)
        if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
    std::string out = "method,auc\n";
    for (const auto& m : methods) {
        std::vector<TrialResult> sub;
        for (const auto& r : results)
            if (r.method == m) sub.push_back(r);
        std::map<double, int> lambdas;
        for (const auto& r : sub) lambdas[r.lambda] = 1;
        if (lambdas.size() < 2) continue;
        const auto pts = accuracy_cost_curve(sub);
        bool distinct = false;
        for (std::size_t i = 1; i < pts.size(); ++i) distinct = distinct || pts[i].cost != pts[0].cost;
        out += m + ',' + (distinct ? format_double(auc(pts)) : std::string("nan")) + '\n';
    }
    return out;
}

// ---------------------------------------------------------------------------
// Experiment runner

/// Full-feedback records plus, optionally, the world that produced them. With
/// a world each seed redraws treatments from its logging policy; without one
/// the softmax-of-accuracy policy is used.
struct ExperimentData {
    std::vector<FullFeedbackRecord> records;
    std::optional<SyntheticWorld> world;
};

struct ExperimentConfig {
    std::vector<PolicyKind> methods{PolicyKind::baseline_decoupled, PolicyKind::rm_softmax};
    std::vector<double> lambdas{0, 100, 200, 300, 400, 500, 600, 700, 800, 900, 1000};
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    TrainConfig train;
    PropensityConfig propensity;
    ClipOptions clip;
    SplitFractions fractions;
    std::size_t knn_k = 50;
    std::size_t jobs = 1;
    // softmax temperature of the joint fine-tuning in interval runs
    double interval_tau = 1000.0;

    void validate() const {
        if (methods.empty()) throw ConfigError("no methods selected");
        if (lambdas.empty()) throw ConfigError("empty lambda grid");
        for (double l : lambdas) (void)CostSensitivity(l);
        if (seeds.empty()) throw ConfigError("no seeds");
        if (jobs == 0) throw ConfigError("jobs must be >= 1");
        if (knn_k == 0) throw ConfigError("knn k must be >= 1");
        if (!(interval_tau > 0.0)) throw ConfigError("interval tau must be positive");
        train.validate();
        (void)split_sizes(100, fractions);
    }
};

using LogFn = std::function<void(const std::string&)>;

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

struct SeedData {
    Dataset ds;
    std::vector<FullFeedbackRecord> test;
};

inline SeedData draw_seed(const ExperimentData& data, const ExperimentConfig& cfg, std::uint64_t seed) {
    SeedData s;
    Dataset obs = data.world ? observe(*data.world, data.records, mix_seed(seed, 1)) : make_observational(data.records, mix_seed(seed, 1));
    s.ds = split_dataset(std::move(obs), cfg.fractions, mix_seed(seed, 2));
    for (std::size_t i = 0; i < s.ds.size(); ++i)
        if (s.ds.split[i] == Split::test) s.test.push_back(data.records[i]);
    return s;
}

inline UtilityMatrix estimate_utilities(const Dataset& ds, const PropensityModel& prop, CostSensitivity lambda, const ExperimentConfig& cfg,
                                        std::uint64_t seed) {
    TrainConfig oc = cfg.train;
    oc.seed = mix_seed(seed, 100 + static_cast<std::uint64_t>(lambda.value()));
    const OutcomeModel outcome = fit_outcome(ds, lambda, oc);
    return dr_estimate(ds, outcome, prop, lambda, cfg.clip);
}

template <typename Work>
void run_parallel(std::size_t count, std::size_t jobs, Work&& work) {
    jobs = std::max<std::size_t>(1, std::min(jobs, count));
    if (jobs == 1) {
        for (std::size_t i = 0; i < count; ++i) work(i);
        return;
    }
    std::mutex m;
    std::size_t next = 0;
    std::exception_ptr failure;
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) {
        pool.emplace_back([&] {
            while (true) {
                std::size_t i;
                {
                    std::lock_guard<std::mutex> lock(m);
                    if (next >= count || failure) return;
                    i = next++;
                }
                try {
                    work(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(m);
                    if (!failure) failure = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

inline LogFn serialized(LogFn log) {
    if (!log) return {};
    auto m = std::make_shared<std::mutex>();
    return [log = std::move(log), m](const std::string& line) {
        std::lock_guard<std::mutex> lock(*m);
        log(line);
    };
}

inline std::string trial_log_line(const TrialResult& r) {
    return "trial method=" + r.method + " lambda=" + format_double(r.lambda) + " seed=" + std::to_string(r.seed) +
           " utility=" + format_double(100.0 * r.utility) + " regret=" + format_double(100.0 * r.regret);
}

}  // namespace detail

/// One trial per (seed, lambda, method), in that nesting order. Each seed
/// redraws the logged treatments and the split, then refits everything.
inline std::vector<TrialResult> run_trials(const ExperimentData& data, const ExperimentConfig& cfg, LogFn log = {}) {
    cfg.validate();
    validate_records(data.records);
    log = detail::serialized(std::move(log));
    std::vector<std::vector<TrialResult>> per_seed(cfg.seeds.size());
    detail::run_parallel(cfg.seeds.size(), cfg.jobs, [&](std::size_t si) {
        const std::uint64_t seed = cfg.seeds[si];
        const auto s = detail::draw_seed(data, cfg, seed);
        TrainConfig tc = cfg.train;
        std::optional<PropensityModel> prop;
        std::optional<DecoupledEstimates> decoupled;
        for (double lv : cfg.lambdas) {
            const CostSensitivity lambda(lv);
            std::optional<UtilityMatrix> um;
            for (const PolicyKind kind : cfg.methods) {
                tc.seed = detail::mix_seed(seed, 1000 + static_cast<std::uint64_t>(kind));
                std::optional<RouterPolicy> policy;
                if (needs_counterfactual(kind) && !um) {
                    if (!prop) prop = fit_propensity(s.ds, cfg.propensity);
                    um = detail::estimate_utilities(s.ds, *prop, lambda, cfg, seed);
                }
                switch (kind) {
                    case PolicyKind::baseline_decoupled:
                        if (!decoupled) decoupled = fit_decoupled_estimates(s.ds, tc);
                        policy = decoupled->policy(lambda);
                        break;
                    case PolicyKind::regress_compare: policy = fit_regress_compare(*um, s.ds, tc); break;
                    case PolicyKind::carrot_knn: policy = fit_carrot_knn(*um, s.ds, cfg.knn_k); break;
                    case PolicyKind::full_feedback: policy = fit_full_feedback(data.records, s.ds.split, lambda, tc); break;
                    default: policy = fit_network_policy(kind, *um, s.ds, tc); break;
                }
                TrialResult r = evaluate_policy(*policy, s.test, lambda);
                r.seed = seed;
                if (log) log(detail::trial_log_line(r));
                per_seed[si].push_back(std::move(r));
            }
        }
    });
    std::vector<TrialResult> out;
    for (auto& v : per_seed) out.insert(out.end(), v.begin(), v.end());
    return out;
}

inline constexpr const char* kIntervalMethod = "rm_interval";
inline constexpr const char* kLowerEndpointMethod = "endpoint_lower";
inline constexpr const char* kUpperEndpointMethod = "endpoint_upper";

/// Endpoints are rm_softmax routers on the grid; each interval gets a joint
/// router. Every evaluation lambda must lie inside the grid's hull. At each
/// one the joint router is compared with the two bracketing endpoints used
/// as-is. Grid hits dispatch to the endpoint itself.
inline std::vector<TrialResult> run_interval_trials(const ExperimentData& data, const ExperimentConfig& cfg, const LambdaGrid& grid,
                                                    const std::vector<double>& eval_lambdas, LogFn log = {}) {
    cfg.validate();
    validate_records(data.records);
    if (eval_lambdas.empty()) throw ConfigError("no evaluation lambdas");
    for (double l : eval_lambdas) (void)grid.bracket(l);
    log = detail::serialized(std::move(log));
    std::vector<std::vector<TrialResult>> per_seed(cfg.seeds.size());
    detail::run_parallel(cfg.seeds.size(), cfg.jobs, [&](std::size_t si) {
        const std::uint64_t seed = cfg.seeds[si];
        const auto s = detail::draw_seed(data, cfg, seed);
        const PropensityModel prop = fit_propensity(s.ds, cfg.propensity);
        std::vector<UtilityMatrix> ums;
        for (double g : grid.values()) ums.push_back(detail::estimate_utilities(s.ds, prop, CostSensitivity(g), cfg, seed));
        TrainConfig tc = cfg.train;
        tc.seed = detail::mix_seed(seed, 2000);
        RoutingTable table{grid, train_endpoints(s.ds, grid, ums, LossSpec::rm_softmax(cfg.train.tau), tc), {}};
        TrainConfig ic = cfg.train;
        ic.tau = cfg.interval_tau;
        for (std::size_t j = 0; j + 1 < grid.size(); ++j) {
            ic.seed = detail::mix_seed(seed, 3000 + j);
            table.intervals.push_back(train_interval(s.ds, table.endpoints[j], table.endpoints[j + 1], ums[j], ums[j + 1], ic).router);
        }
        const Matrix X = record_features(s.test);
        for (double lv : eval_lambdas) {
            const CostSensitivity lambda(lv);
            const std::size_t j = grid.bracket(lv);
            auto decide = [&](const Matrix& S) {
                std::vector<TreatmentId> out(static_cast<std::size_t>(S.cols()));
                for (Eigen::Index c = 0; c < S.cols(); ++c) out[static_cast<std::size_t>(c)] = argmax_lowest(Vector(S.col(c)));
                return out;
            };
            const std::pair<const char*, std::vector<TreatmentId>> rows[] = {
                {kIntervalMethod, table.route_batch(X, lv)},
                {kLowerEndpointMethod, decide(forward_batch(table.endpoints[j], X))},
                {kUpperEndpointMethod, decide(forward_batch(table.endpoints[j + 1], X))},
            };
            for (const auto& [name, decisions] : rows) {
                TrialResult r = evaluate_decisions(decisions, s.test, lambda);
                r.method = name;
                r.seed = seed;
                if (log) log(detail::trial_log_line(r));
                per_seed[si].push_back(std::move(r));
            }
        }
    });
    std::vector<TrialResult> out;
    for (auto& v : per_seed) out.insert(out.end(), v.begin(), v.end());
    return out;
}

}  // namespace rr
