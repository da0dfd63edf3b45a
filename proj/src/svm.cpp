#include "artenc/svm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

namespace artenc {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr double kSlackZero = 1e-7;

// Exact minimizer of  l1 * |t| + C * sum_k max(0, c_k - a_k * t).
// The function is convex piecewise linear; walk the sorted breakpoints
// until the accumulated slope turns non-negative.
double exact_pl_min(std::vector<std::pair<double, double>>& bp /* (t, slope jump) */,
                    double base_slope, double fallback) {
    if (bp.empty()) return fallback;
    std::sort(bp.begin(), bp.end());
    double slope = base_slope;
    for (const auto& [t, jump] : bp) {
        slope += jump;
        if (slope >= 0) return t;
    }
    return bp.back().first;  // slope stays negative only through rounding
}

struct Problem {
    int n = 0, d = 0;
    const std::vector<std::vector<float>>* x = nullptr;  // standardized lazily
    std::vector<double> mean, sd;

    double xat(int i, int j) const {
        return (static_cast<double>((*x)[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) -
                mean[static_cast<std::size_t>(j)]) /
               sd[static_cast<std::size_t>(j)];
    }
};

void standardization_stats(const std::vector<std::vector<float>>& xs, std::vector<double>& mean,
                           std::vector<double>& sd) {
    const std::size_t n = xs.size(), d = xs[0].size();
    mean.assign(d, 0.0);
    sd.assign(d, 0.0);
    for (const auto& row : xs)
        for (std::size_t j = 0; j < d; ++j) mean[j] += row[j];
    for (std::size_t j = 0; j < d; ++j) mean[j] /= static_cast<double>(n);
    for (const auto& row : xs)
        for (std::size_t j = 0; j < d; ++j) {
            const double c = row[j] - mean[j];
            sd[j] += c * c;
        }
    for (std::size_t j = 0; j < d; ++j) {
        sd[j] = std::sqrt(sd[j] / static_cast<double>(n));
        if (sd[j] < 1e-12) sd[j] = 1.0;  // constant feature
    }
}

}  // namespace

double SvmModel::score(const std::vector<float>& x) const {
    if (static_cast<int>(x.size()) != n_features())
        throw ConfigError("svm score: expected " + std::to_string(n_features()) +
                          " features, got " + std::to_string(x.size()));
    double s = bias;
    for (std::size_t j = 0; j < weights.size(); ++j)
        s += weights[j] * ((static_cast<double>(x[j]) - feat_mean[j]) / feat_sd[j]);
    if (!std::isfinite(s)) throw NumericError("svm score is not finite");
    return s;
}

std::size_t SvmModel::nonzero_weights(double tol) const {
    std::size_t k = 0;
    for (double w : weights)
        if (std::abs(w) > tol) ++k;
    return k;
}

SvmModel train_svm(const std::vector<std::vector<float>>& features,
                   const std::vector<double>& targets, const SvmTrainOptions& options) {
    if (features.empty() || features.size() != targets.size())
        throw ConfigError("train_svm: features/targets size mismatch or empty");
    const int n = static_cast<int>(features.size());
    const int d = static_cast<int>(features[0].size());
    for (const auto& row : features) {
        if (static_cast<int>(row.size()) != d) throw ConfigError("train_svm: ragged features");
        for (float v : row)
            if (!std::isfinite(v)) throw NumericError("train_svm: non-finite feature value");
    }
    if (options.C <= 0) throw ConfigError("train_svm: C must be positive");

    std::vector<double> y = targets;
    if (options.mode == SvmMode::Classifier) {
        int pos = 0, neg = 0;
        for (double& t : y) {
            t = t > 0 ? 1.0 : -1.0;
            (t > 0 ? pos : neg)++;
        }
        if (pos < 2 || neg < 2)
            throw ConfigError("train_svm: classifier needs at least 2 samples per class");
    } else if (n < 2) {
        throw ConfigError("train_svm: regressor needs at least 2 samples");
    }

    SvmModel model;
    model.mode = options.mode;
    model.C = options.C;
    model.epsilon = options.epsilon;
    standardization_stats(features, model.feat_mean, model.feat_sd);
    model.weights.assign(static_cast<std::size_t>(d), 0.0);
    model.bias = 0.0;

    Problem prob;
    prob.n = n;
    prob.d = d;
    prob.x = &features;
    prob.mean = model.feat_mean;
    prob.sd = model.feat_sd;

    const double C = options.C;
    const bool classify = options.mode == SvmMode::Classifier;
    const double eps = options.epsilon;

    // Residual state: classifier keeps slack_i = 1 - y_i f(x_i);
    // regressor keeps err_i = y_i - f(x_i). Bias starts at 0 so
    // f(x_i) = 0 initially.
    std::vector<double> state(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) state[static_cast<std::size_t>(i)] = classify ? 1.0 : y[static_cast<std::size_t>(i)];

    std::vector<int> order(static_cast<std::size_t>(d));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(options.seed);

    std::vector<std::pair<double, double>> bp;
    bp.reserve(static_cast<std::size_t>(2 * n + 1));

    auto update_coordinate = [&](int j, bool is_bias) {
        const double w_old = is_bias ? model.bias : model.weights[static_cast<std::size_t>(j)];
        bp.clear();
        double base_slope = 0.0;
        if (!is_bias) {
            base_slope -= 1.0;      // |t| slope left of zero
            bp.emplace_back(0.0, 2.0);
        }
        for (int i = 0; i < n; ++i) {
            const double xi = is_bias ? 1.0 : prob.xat(i, j);
            if (xi == 0.0) continue;
            if (classify) {
                // term: C * max(0, c - a t), a = y_i x_ij,
                // c = slack_i + a w_old
                const double a = y[static_cast<std::size_t>(i)] * xi;
                const double c = state[static_cast<std::size_t>(i)] + a * w_old;
                if (a > 0) base_slope -= C * a;
                bp.emplace_back(c / a, C * std::abs(a));
            } else {
                // |err - a t| - eps splits into two hinges, a = x_ij,
                // e = err_i + a w_old
                const double a = xi;
                const double e = state[static_cast<std::size_t>(i)] + a * w_old;
                // max(0, (e - eps) - a t)
                if (a > 0) base_slope -= C * a;
                bp.emplace_back((e - eps) / a, C * std::abs(a));
                // max(0, (-e - eps) + a t) == max(0, c' - a' t), a' = -a
                if (-a > 0) base_slope -= C * (-a);
                bp.emplace_back((e + eps) / a, C * std::abs(a));
            }
        }
        const double w_new = exact_pl_min(bp, base_slope, w_old);
        if (w_new == w_old) return 0.0;
        const double delta = w_old - w_new;
        for (int i = 0; i < n; ++i) {
            const double xi = is_bias ? 1.0 : prob.xat(i, j);
            if (xi == 0.0) continue;
            if (classify)
                state[static_cast<std::size_t>(i)] += y[static_cast<std::size_t>(i)] * xi * delta;
            else
                state[static_cast<std::size_t>(i)] += xi * delta;
        }
        if (is_bias)
            model.bias = w_new;
        else
            model.weights[static_cast<std::size_t>(j)] = w_new;
        return std::abs(w_new - w_old);
    };

    // Incremental slack updates drift by rounding over many passes, so a
    // pass only counts as converged when it follows a fresh recomputation
    // of the state from full dot products.
    auto refresh_state = [&]() {
        for (int i = 0; i < n; ++i) {
            double f = model.bias;
            for (int j = 0; j < d; ++j) f += model.weights[static_cast<std::size_t>(j)] * prob.xat(i, j);
            state[static_cast<std::size_t>(i)] =
                classify ? 1.0 - y[static_cast<std::size_t>(i)] * f : y[static_cast<std::size_t>(i)] - f;
        }
    };

    bool state_fresh = true;
    for (int pass = 0; pass < options.max_passes; ++pass) {
        rng.shuffle(order.begin(), order.end());
        double max_change = 0.0;
        for (int j : order) max_change = std::max(max_change, update_coordinate(j, false));
        max_change = std::max(max_change, update_coordinate(0, true));
        if (max_change >= options.tol) {
            state_fresh = false;
            continue;
        }
        if (state_fresh) break;
        refresh_state();
        state_fresh = true;
    }

    for (double w : model.weights)
        if (!std::isfinite(w)) throw NumericError("train_svm: non-finite weight after training");
    return model;
}

double svm_stationarity_residual(const SvmModel& model,
                                 const std::vector<std::vector<float>>& features,
                                 const std::vector<double>& targets) {
    const int n = static_cast<int>(features.size());
    const int d = model.n_features();
    const double C = model.C;
    const bool classify = model.mode == SvmMode::Classifier;

    std::vector<double> y = targets;
    if (classify)
        for (double& t : y) t = t > 0 ? 1.0 : -1.0;

    std::vector<double> pred(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) pred[static_cast<std::size_t>(i)] = model.score(features[static_cast<std::size_t>(i)]);

    double worst = 0.0;
    for (int j = 0; j <= d; ++j) {  // j == d is the bias
        const bool is_bias = j == d;
        double lo = 0.0, hi = 0.0;  // subgradient interval of the data term
        for (int i = 0; i < n; ++i) {
            const double xi =
                is_bias ? 1.0
                        : (static_cast<double>(features[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) -
                           model.feat_mean[static_cast<std::size_t>(j)]) /
                              model.feat_sd[static_cast<std::size_t>(j)];
            if (classify) {
                const double slack = 1.0 - y[static_cast<std::size_t>(i)] * pred[static_cast<std::size_t>(i)];
                const double g = -C * y[static_cast<std::size_t>(i)] * xi;  // active hinge gradient
                if (slack > kSlackZero) {
                    lo += g;
                    hi += g;
                } else if (std::abs(slack) <= kSlackZero) {
                    lo += std::min(0.0, g);
                    hi += std::max(0.0, g);
                }
            } else {
                const double err = y[static_cast<std::size_t>(i)] - pred[static_cast<std::size_t>(i)];
                const double gpos = -C * xi;  // d/dt of C*(err(t) - eps) style terms
                if (err - model.epsilon > kSlackZero) {
                    lo += gpos;
                    hi += gpos;
                } else if (std::abs(err - model.epsilon) <= kSlackZero) {
                    lo += std::min(0.0, gpos);
                    hi += std::max(0.0, gpos);
                }
                if (-err - model.epsilon > kSlackZero) {
                    lo += -gpos;
                    hi += -gpos;
                } else if (std::abs(-err - model.epsilon) <= kSlackZero) {
                    lo += std::min(0.0, -gpos);
                    hi += std::max(0.0, -gpos);
                }
            }
        }
        if (!is_bias) {
            const double w = model.weights[static_cast<std::size_t>(j)];
            if (w > 0) {
                lo += 1;
                hi += 1;
            } else if (w < 0) {
                lo -= 1;
                hi -= 1;
            } else {
                lo -= 1;
                hi += 1;
            }
        }
        double r = 0.0;
        if (lo > 0) r = lo;
        if (hi < 0) r = -hi;
        worst = std::max(worst, r);
    }
    return worst;
}

PatientAggregate aggregate_patient(const std::vector<double>& artery_scores,
                                   const std::vector<double>& artery_ffrs,
                                   double ffr_threshold) {
    if (artery_scores.empty() || artery_scores.size() != artery_ffrs.size())
        throw ConfigError("aggregate_patient: empty or mismatched artery lists");
    PatientAggregate out;
    out.score = *std::max_element(artery_scores.begin(), artery_scores.end());
    const double min_ffr = *std::min_element(artery_ffrs.begin(), artery_ffrs.end());
    out.positive = min_ffr <= ffr_threshold;
    return out;
}

RegressionCall regress_then_threshold(const SvmModel& model, const std::vector<float>& features,
                                      double threshold) {
    if (model.mode != SvmMode::Regressor)
        throw UsageError("regress_then_threshold needs a regressor model");
    RegressionCall call;
    call.predicted_ffr = model.score(features);
    call.positive = call.predicted_ffr <= threshold;  // boundary counts as positive
    call.roc_score = -call.predicted_ffr;
    return call;
}

GridSearchResult svm_grid_search(const std::vector<std::vector<float>>& features,
                                 const std::vector<double>& targets,
                                 const std::vector<std::string>& patient_ids,
                                 const SvmTrainOptions& base, const std::vector<double>& C_grid,
                                 int folds, std::uint64_t seed) {
    if (features.size() != targets.size() || features.size() != patient_ids.size())
        throw ConfigError("svm_grid_search: input size mismatch");
    if (C_grid.empty()) throw ConfigError("svm_grid_search: empty C grid");

    // Patient-grouped fold assignment.
    std::vector<std::string> patients;
    for (const auto& p : patient_ids)
        if (std::find(patients.begin(), patients.end(), p) == patients.end())
            patients.push_back(p);
    Rng rng(seed);
    rng.shuffle(patients.begin(), patients.end());
    std::map<std::string, int> fold_of;
    for (std::size_t i = 0; i < patients.size(); ++i)
        fold_of[patients[i]] = static_cast<int>(i % static_cast<std::size_t>(folds));

    GridSearchResult result;
    double best_metric = -std::numeric_limits<double>::infinity();
    for (double C : C_grid) {
        double metric_sum = 0;
        int metric_count = 0;
        for (int f = 0; f < folds; ++f) {
            std::vector<std::vector<float>> xtr, xva;
            std::vector<double> ytr, yva;
            for (std::size_t i = 0; i < features.size(); ++i) {
                if (fold_of[patient_ids[i]] == f) {
                    xva.push_back(features[i]);
                    yva.push_back(targets[i]);
                } else {
                    xtr.push_back(features[i]);
                    ytr.push_back(targets[i]);
                }
            }
            if (xva.empty() || xtr.empty()) continue;
            if (base.mode == SvmMode::Classifier) {
                int pos = 0, neg = 0;
                for (double t : ytr) (t > 0 ? pos : neg)++;
                if (pos < 2 || neg < 2) continue;
            }
            SvmTrainOptions opt = base;
            opt.C = C;
            opt.seed = derive_seed(seed, static_cast<std::uint64_t>(f) * 131 + 7);
            SvmModel m;
            try {
                m = train_svm(xtr, ytr, opt);
            } catch (const ConfigError&) {
                continue;
            }
            double metric;
            if (base.mode == SvmMode::Classifier) {
                int correct = 0;
                for (std::size_t i = 0; i < xva.size(); ++i) {
                    const bool pred_pos = m.score(xva[i]) > 0;
                    const bool is_pos = yva[i] > 0;
                    if (pred_pos == is_pos) ++correct;
                }
                metric = static_cast<double>(correct) / static_cast<double>(xva.size());
            } else {
                double err = 0;
                for (std::size_t i = 0; i < xva.size(); ++i)
                    err += std::abs(m.score(xva[i]) - yva[i]);
                metric = -err / static_cast<double>(xva.size());
            }
            metric_sum += metric;
            ++metric_count;
        }
        const double mean_metric = metric_count > 0
                                       ? metric_sum / metric_count
                                       : -std::numeric_limits<double>::infinity();
        result.scores.emplace_back(C, mean_metric);
        // strictly-better wins; ties keep the earlier (smaller) C
        if (mean_metric > best_metric + 1e-12) {
            best_metric = mean_metric;
            result.best_C = C;
        }
    }
    if (!std::isfinite(best_metric)) result.best_C = C_grid.front();
    return result;
}

void save_svm(const std::string& path, const SvmModel& model, const ordered_json& provenance) {
    ordered_json j;
    j["format"] = "artenc-svm";
    j["version"] = 1;
    j["mode"] = model.mode == SvmMode::Classifier ? "classifier" : "regressor";
    j["C"] = model.C;
    j["epsilon"] = model.epsilon;
    j["bias"] = model.bias;
    j["weights"] = model.weights;
    j["feat_mean"] = model.feat_mean;
    j["feat_sd"] = model.feat_sd;
    j["provenance"] = provenance;
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write svm model: " + path);
    out << j.dump(2) << "\n";
}

SvmModel load_svm(const std::string& path, json* provenance_out) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open svm model: " + path);
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw IoError("svm model is not valid JSON: " + path);
    if (j.value("format", "") != "artenc-svm") throw IoError("not an svm model: " + path);
    SvmModel m;
    m.mode = j.at("mode").get<std::string>() == "classifier" ? SvmMode::Classifier
                                                             : SvmMode::Regressor;
    m.C = j.at("C").get<double>();
    m.epsilon = j.value("epsilon", 0.02);
    m.bias = j.at("bias").get<double>();
    m.weights = j.at("weights").get<std::vector<double>>();
    m.feat_mean = j.at("feat_mean").get<std::vector<double>>();
    m.feat_sd = j.at("feat_sd").get<std::vector<double>>();
    if (provenance_out && j.contains("provenance")) *provenance_out = j.at("provenance");
    return m;
}

}  // namespace artenc
