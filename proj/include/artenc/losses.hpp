#pragma once

#include "artenc/common.hpp"
#include "artenc/tensor.hpp"

namespace artenc {

// All reductions accumulate in double regardless of the tensor dtype.

template <typename T>
double mse_loss(const BasicTensor<T>& pred, const BasicTensor<T>& target) {
    if (pred.shape() != target.shape())
        throw ConfigError("mse_loss: shape mismatch " + shape_str(pred.shape()) + " vs " +
                          shape_str(target.shape()));
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(pred.numel());
}

template <typename T>
BasicTensor<T> mse_loss_grad(const BasicTensor<T>& pred, const BasicTensor<T>& target) {
    if (pred.shape() != target.shape()) throw ConfigError("mse_loss_grad: shape mismatch");
    BasicTensor<T> g(pred.shape());
    const double inv = 2.0 / static_cast<double>(pred.numel());
    for (std::size_t i = 0; i < pred.numel(); ++i)
        g[i] = static_cast<T>(inv * (static_cast<double>(pred[i]) - static_cast<double>(target[i])));
    return g;
}

// Mean over mask==1 elements only; the gradient is exactly zero at
// masked positions.
template <typename T>
double masked_mse_loss(const BasicTensor<T>& pred, const BasicTensor<T>& target,
                       const BasicTensor<T>& mask) {
    if (pred.shape() != target.shape() || pred.shape() != mask.shape())
        throw ConfigError("masked_mse_loss: shape mismatch");
    double acc = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        if (mask[i] == T(0)) continue;
        if (mask[i] != T(1)) throw ConfigError("masked_mse_loss: mask values must be 0 or 1");
        const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
        acc += d * d;
        ++count;
    }
    if (count == 0) throw ConfigError("masked_mse_loss: mask selects no elements");
    return acc / static_cast<double>(count);
}

template <typename T>
BasicTensor<T> masked_mse_loss_grad(const BasicTensor<T>& pred, const BasicTensor<T>& target,
                                    const BasicTensor<T>& mask) {
    if (pred.shape() != target.shape() || pred.shape() != mask.shape())
        throw ConfigError("masked_mse_loss_grad: shape mismatch");
    std::size_t count = 0;
    for (std::size_t i = 0; i < mask.numel(); ++i)
        if (mask[i] != T(0)) ++count;
    if (count == 0) throw ConfigError("masked_mse_loss_grad: mask selects no elements");
    BasicTensor<T> g(pred.shape());
    const double inv = 2.0 / static_cast<double>(count);
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        g[i] = mask[i] == T(0)
                   ? T(0)
                   : static_cast<T>(inv * (static_cast<double>(pred[i]) -
                                           static_cast<double>(target[i])));
    }
    return g;
}

// KL divergence from N(mu, sigma^2) to N(0, 1), summed over latent dims.
// For batched heads [N, latent] the result is averaged over the batch.
template <typename T>
double kl_loss(const BasicTensor<T>& mu, const BasicTensor<T>& log_var) {
    if (mu.shape() != log_var.shape()) throw ConfigError("kl_loss: mu/log_var shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < mu.numel(); ++i) {
        const double m = static_cast<double>(mu[i]);
        const double lv = static_cast<double>(log_var[i]);
        acc += 1.0 + lv - m * m - std::exp(lv);
    }
    const double batch = mu.rank() >= 2 ? static_cast<double>(mu.dim(0)) : 1.0;
    return -0.5 * acc / batch;
}

template <typename T>
void kl_loss_grad(const BasicTensor<T>& mu, const BasicTensor<T>& log_var,
                  BasicTensor<T>& d_mu, BasicTensor<T>& d_log_var, double weight = 1.0) {
    const double batch = mu.rank() >= 2 ? static_cast<double>(mu.dim(0)) : 1.0;
    d_mu = BasicTensor<T>(mu.shape());
    d_log_var = BasicTensor<T>(log_var.shape());
    for (std::size_t i = 0; i < mu.numel(); ++i) {
        d_mu[i] = static_cast<T>(weight * static_cast<double>(mu[i]) / batch);
        d_log_var[i] =
            static_cast<T>(weight * 0.5 * (std::exp(static_cast<double>(log_var[i])) - 1.0) / batch);
    }
}

}  // namespace artenc
