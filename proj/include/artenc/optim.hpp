#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "artenc/common.hpp"
#include "artenc/net.hpp"
#include "artenc/tensor.hpp"

namespace artenc {

struct TrainConfig {
    double learning_rate = 0.001;
    int batch_size = 32;
    double l2_gamma = 0.001;
    int max_epochs = 200;
    int patience = 20;
    std::uint64_t rng_seed = 1;

    void validate() const {
        if (learning_rate <= 0) throw ConfigError("learning_rate must be positive");
        if (batch_size <= 0) throw ConfigError("batch_size must be positive");
        if (l2_gamma < 0) throw ConfigError("l2_gamma must be non-negative");
        if (max_epochs <= 0) throw ConfigError("max_epochs must be positive");
        if (patience <= 0) throw ConfigError("patience must be positive");
    }
};

// Adam with bias correction. L2 regularization adds l2_gamma * w to each
// gradient before the moment updates.
class Adam {
public:
    explicit Adam(const TrainConfig& cfg, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8)
        : lr_(cfg.learning_rate), l2_(cfg.l2_gamma), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(std::vector<ParamRef<float>> params) {
        if (m_.empty()) {
            for (const auto& p : params) {
                m_.emplace_back(p.value->shape());
                v_.emplace_back(p.value->shape());
            }
        }
        if (m_.size() != params.size()) throw UsageError("adam: parameter set changed between steps");
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        for (std::size_t k = 0; k < params.size(); ++k) {
            float* w = params[k].value->data();
            const float* g = params[k].grad->data();
            float* m = m_[k].data();
            float* v = v_[k].data();
            const std::size_t n = params[k].value->numel();
            for (std::size_t i = 0; i < n; ++i) {
                const double gi = static_cast<double>(g[i]) + l2_ * static_cast<double>(w[i]);
                const double mi = beta1_ * m[i] + (1.0 - beta1_) * gi;
                const double vi = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
                m[i] = static_cast<float>(mi);
                v[i] = static_cast<float>(vi);
                const double mhat = mi / bc1;
                const double vhat = vi / bc2;
                w[i] = static_cast<float>(w[i] - lr_ * mhat / (std::sqrt(vhat) + eps_));
            }
        }
    }

    std::int64_t steps() const { return t_; }

private:
    double lr_, l2_, beta1_, beta2_, eps_;
    std::int64_t t_ = 0;
    std::vector<Tensor> m_, v_;
};

// Early stopping on validation loss: stop after `patience` epochs without
// an improvement of at least `min_delta`, keeping the best epoch.
class EarlyStopper {
public:
    explicit EarlyStopper(int patience, double min_delta = 1e-4)
        : patience_(patience), min_delta_(min_delta) {}

    // Returns true if this is a new best epoch.
    bool observe(double val_loss) {
        ++epoch_;
        if (val_loss < best_ - min_delta_) {
            best_ = val_loss;
            best_epoch_ = epoch_;
            stale_ = 0;
            return true;
        }
        ++stale_;
        return false;
    }

    bool should_stop() const { return stale_ >= patience_; }
    double best() const { return best_; }
    int best_epoch() const { return best_epoch_; }

private:
    int patience_;
    double min_delta_;
    int epoch_ = 0;
    int stale_ = 0;
    int best_epoch_ = 0;
    double best_ = std::numeric_limits<double>::infinity();
};

struct TrainCurvePoint {
    int epoch;
    double train_loss;
    double val_loss;
};

}  // namespace artenc
