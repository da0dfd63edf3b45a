#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "artenc/common.hpp"

namespace artenc {

enum class SvmMode { Classifier, Regressor };

// Linear model with L1 regularization:
//   classifier: minimize sum_i hinge(1 - y_i f(x_i)) + (1/C) * ||w||_1
//   regressor:  minimize sum_i max(0, |y_i - f(x_i)| - epsilon) + (1/C) * ||w||_1
// where f(x) = w . standardized(x) + b. Solved by cyclic coordinate
// descent with exact piecewise-linear line minimization per coordinate.
struct SvmModel {
    SvmMode mode = SvmMode::Classifier;
    double C = 1.0;
    double epsilon = 0.02;  // regressor only
    std::vector<double> weights;
    double bias = 0.0;
    std::vector<double> feat_mean;  // training-fold statistics
    std::vector<double> feat_sd;

    int n_features() const { return static_cast<int>(weights.size()); }

    // Signed score w . x_std + b (not thresholded).
    double score(const std::vector<float>& x) const;

    std::size_t nonzero_weights(double tol = 1e-8) const;
};

struct SvmTrainOptions {
    double C = 1.0;
    SvmMode mode = SvmMode::Classifier;
    double epsilon = 0.02;
    double tol = 1e-6;
    int max_passes = 100000;
    std::uint64_t seed = 1;
};

// labels: classifier wants +1/-1 (or any sign convention via >0);
// regressor takes continuous targets.
SvmModel train_svm(const std::vector<std::vector<float>>& features,
                   const std::vector<double>& targets, const SvmTrainOptions& options);

// Max over coordinates (and bias) of the distance from 0 to the
// objective's subgradient interval; 0 at an exact optimum.
double svm_stationarity_residual(const SvmModel& model,
                                 const std::vector<std::vector<float>>& features,
                                 const std::vector<double>& targets);

// Patient aggregation: score = max over the patient's artery scores;
// reference label positive iff min FFR <= threshold.
struct PatientAggregate {
    double score;
    bool positive;
};
PatientAggregate aggregate_patient(const std::vector<double>& artery_scores,
                                   const std::vector<double>& artery_ffrs, double ffr_threshold);

// Regressor output thresholded at the given FFR cutoff; equality counts
// as positive. For ROC use, the returned score is -predicted_ffr.
struct RegressionCall {
    double predicted_ffr;
    bool positive;
    double roc_score;
};
RegressionCall regress_then_threshold(const SvmModel& model, const std::vector<float>& features,
                                      double threshold);

// Patient-grouped k-fold grid search over C on the training fold only;
// ties prefer the smaller (more regularized) C.
struct GridSearchResult {
    double best_C = 1.0;
    std::vector<std::pair<double, double>> scores;  // (C, mean fold metric)
};
GridSearchResult svm_grid_search(const std::vector<std::vector<float>>& features,
                                 const std::vector<double>& targets,
                                 const std::vector<std::string>& patient_ids,
                                 const SvmTrainOptions& base, const std::vector<double>& C_grid,
                                 int folds, std::uint64_t seed);

void save_svm(const std::string& path, const SvmModel& model,
              const nlohmann::ordered_json& provenance = {});
SvmModel load_svm(const std::string& path, nlohmann::json* provenance_out = nullptr);

}  // namespace artenc
