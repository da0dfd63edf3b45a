#pragma once

#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "artenc/common.hpp"
#include "artenc/tensor.hpp"

namespace artenc {

enum class Mode { Train, Infer };

template <typename T>
struct ParamRef {
    std::string name;
    BasicTensor<T>* value = nullptr;
    BasicTensor<T>* grad = nullptr;
};

// A layer owns its parameters and the forward cache needed for one
// backward pass. Stacks are strictly sequential; batching is the leading
// tensor dimension [N, ...] and shape contracts below are per-sample.
template <typename T>
class Layer {
public:
    virtual ~Layer() = default;

    virtual std::string kind() const = 0;
    virtual Shape output_shape(const Shape& in) const = 0;
    virtual BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode, Rng* rng) = 0;
    virtual BasicTensor<T> backward(const BasicTensor<T>& dy) = 0;
    virtual std::vector<ParamRef<T>> params() { return {}; }
    // Non-trainable buffers that still need to be persisted (BN running stats).
    virtual std::vector<ParamRef<T>> state_tensors() { return {}; }
    virtual std::size_t param_count() const { return 0; }

    virtual void hyper_to_json(nlohmann::ordered_json& j) const = 0;

    bool trainable() const { return trainable_; }
    void set_trainable(bool t) { trainable_ = t; }

    bool has_cache() const { return has_cache_; }
    virtual void clear_cache() { has_cache_ = false; }

protected:
    void require_cache(const char* who) const {
        if (!has_cache_)
            throw UsageError(std::string(who) + ": backward called without a preceding train-mode forward");
    }

    bool trainable_ = true;
    bool has_cache_ = false;
};

template <typename T>
using LayerPtr = std::unique_ptr<Layer<T>>;

// ---------------------------------------------------------------------------
// Convolution over 1, 2 or 3 spatial axes, channels-first layout
// [N, C, s0, s1, ...]. Zero padding; output extent per axis is
// (in + 2p - k) / s + 1.
// ---------------------------------------------------------------------------
template <typename T>
class ConvNd : public Layer<T> {
public:
    ConvNd(int spatial_rank, int in_channels, int out_channels,
           std::vector<int> kernel, std::vector<int> stride, std::vector<int> pad);

    // "same" spatial size: odd kernel, unit stride, pad = k/2.
    static std::unique_ptr<ConvNd<T>> same(int spatial_rank, int in_channels,
                                           int out_channels, int kernel);

    std::string kind() const override { return "conv" + std::to_string(rank_) + "d"; }
    Shape output_shape(const Shape& in) const override;
    BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode, Rng* rng) override;
    BasicTensor<T> backward(const BasicTensor<T>& dy) override;
    std::vector<ParamRef<T>> params() override;
    std::size_t param_count() const override { return weight_.numel() + bias_.numel(); }
    void hyper_to_json(nlohmann::ordered_json& j) const override;
    void clear_cache() override;

    void init_params(Rng& rng);
    BasicTensor<T>& weight() { return weight_; }
    BasicTensor<T>& bias() { return bias_; }

    int spatial_rank() const { return rank_; }
    int in_channels() const { return in_c_; }
    int out_channels() const { return out_c_; }
    const std::vector<int>& kernel() const { return kernel_; }
    const std::vector<int>& stride() const { return stride_; }
    const std::vector<int>& pad() const { return pad_; }

private:
    void check_input(const Shape& in) const;

    int rank_, in_c_, out_c_;
    std::vector<int> kernel_, stride_, pad_;
    BasicTensor<T> weight_;  // [out_c, in_c * prod(kernel)]
    BasicTensor<T> bias_;    // [out_c]
    BasicTensor<T> grad_w_, grad_b_;
    BasicTensor<T> cached_input_;
};

// ---------------------------------------------------------------------------
// Max pooling, kernel == stride (non-overlapping windows), per spatial axis.
// ---------------------------------------------------------------------------
template <typename T>
class MaxPool : public Layer<T> {
public:
    MaxPool(int spatial_rank, std::vector<int> kernel);

    std::string kind() const override { return "maxpool" + std::to_string(rank_) + "d"; }
    Shape output_shape(const Shape& in) const override;
    BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode, Rng* rng) override;
    BasicTensor<T> backward(const BasicTensor<T>& dy) override;
    void hyper_to_json(nlohmann::ordered_json& j) const override;
    void clear_cache() override;

private:
    int rank_;
    std::vector<int> kernel_;
    Shape in_shape_;
    std::vector<std::size_t> argmax_;  // flat input index per output element
};

// ---------------------------------------------------------------------------
// Nearest-neighbour upsampling by integer factors per spatial axis.
// ---------------------------------------------------------------------------
template <typename T>
class Upsample : public Layer<T> {
public:
    Upsample(int spatial_rank, std::vector<int> factor);

    std::string kind() const override { return "upsample" + std::to_string(rank_) + "d"; }
    Shape output_shape(const Shape& in) const override;
    BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode, Rng* rng) override;
    BasicTensor<T> backward(const BasicTensor<T>& dy) override;
    void hyper_to_json(nlohmann::ordered_json& j) const override;
    void clear_cache() override;

private:
    int rank_;
    std::vector<int> factor_;
    Shape in_shape_;
};

// ---------------------------------------------------------------------------
// Fully connected; flattens everything after the batch axis.
// ---------------------------------------------------------------------------
template <typename T>
class FullyConnected : public Layer<T> {
public:
    FullyConnected(int in_features, int out_features);

    std::string kind() const override { return "fc"; }
    Shape output_shape(const Shape& in) const override;
    BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode, Rng* rng) override;
    BasicTensor<T> backward(const BasicTensor<T>& dy) override;
    std::vector<ParamRef<T>> params() override;
    std::size_t param_count() const override { return weight_.numel() + bias_.numel(); }
    void hyper_to_json(nlohmann::ordered_json& j) const override;
    void clear_cache() override;

    void init_params(Rng& rng);
    BasicTensor<T>& weight() { return weight_; }
    BasicTensor<T>& bias() { return bias_; }
    int in_features() const { return in_f_; }
    int out_features() const { return out_f_; }

private:
    int in_f_, out_f_;
    BasicTensor<T> weight_;  // [out, in]
    BasicTensor<T> bias_;    // [out]
    BasicTensor<T> grad_w_, grad_b_;
    BasicTensor<T> cached_input_;  // flattened [N, in]
    Shape cached_in_shape_;
};

// ---------------------------------------------------------------------------
// Batch normalization over channel axis (dim 1); for rank-1 inputs [N, F]
// every feature is its own channel. 64-bit accumulation for the statistics.
// ---------------------------------------------------------------------------
template <typename T>
class BatchNorm : public Layer<T> {
public:
    explicit BatchNorm(int channels, double eps = 1e-5, double momentum = 0.9);

    std::string kind() const override { return "batchnorm"; }
    Shape output_shape(const Shape& in) const override { return in; }
    BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode, Rng* rng) override;
    BasicTensor<T> backward(const BasicTensor<T>& dy) override;
    std::vector<ParamRef<T>> params() override;
    std::vector<ParamRef<T>> state_tensors() override {
        return {{"running_mean", &run_mean_, nullptr}, {"running_var", &run_var_, nullptr}};
    }
    std::size_t param_count() const override { return gamma_.numel() + beta_.numel(); }
    void hyper_to_json(nlohmann::ordered_json& j) const override;
    void clear_cache() override;

    BasicTensor<T>& gamma() { return gamma_; }
    BasicTensor<T>& beta() { return beta_; }
    BasicTensor<T>& running_mean() { return run_mean_; }
    BasicTensor<T>& running_var() { return run_var_; }

private:
    int channels_;
    double eps_, momentum_;
    BasicTensor<T> gamma_, beta_, grad_gamma_, grad_beta_;
    BasicTensor<T> run_mean_, run_var_;
    // train cache
    BasicTensor<T> xhat_;
    std::vector<double> batch_mean_, batch_var_;
    Shape in_shape_;
};

// ---------------------------------------------------------------------------
// Activations.
// ---------------------------------------------------------------------------
template <typename T>
class ReLU : public Layer<T> {
public:
    std::string kind() const override { return "relu"; }
    Shape output_shape(const Shape& in) const override { return in; }
    BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode, Rng* rng) override;
    BasicTensor<T> backward(const BasicTensor<T>& dy) override;
    void hyper_to_json(nlohmann::ordered_json& j) const override;
    void clear_cache() override;

private:
    BasicTensor<T> cached_input_;
};

template <typename T>
class Elu : public Layer<T> {
public:
    explicit Elu(double alpha = 1.0) : alpha_(alpha) {}
    std::string kind() const override { return "elu"; }
    Shape output_shape(const Shape& in) const override { return in; }
    BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode, Rng* rng) override;
    BasicTensor<T> backward(const BasicTensor<T>& dy) override;
    void hyper_to_json(nlohmann::ordered_json& j) const override;
    void clear_cache() override;
    double alpha() const { return alpha_; }

private:
    double alpha_;
    BasicTensor<T> cached_input_;
};

// ---------------------------------------------------------------------------
// Inverted dropout: scales kept activations by 1/(1-p); identity at
// inference.
// ---------------------------------------------------------------------------
template <typename T>
class Dropout : public Layer<T> {
public:
    explicit Dropout(double p);
    std::string kind() const override { return "dropout"; }
    Shape output_shape(const Shape& in) const override { return in; }
    BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode, Rng* rng) override;
    BasicTensor<T> backward(const BasicTensor<T>& dy) override;
    void hyper_to_json(nlohmann::ordered_json& j) const override;
    void clear_cache() override;
    double rate() const { return p_; }

private:
    double p_;
    BasicTensor<T> mask_;
};

// ---------------------------------------------------------------------------
// Parameter-free view change between conv and FC sections.
// ---------------------------------------------------------------------------
template <typename T>
class Reshape : public Layer<T> {
public:
    explicit Reshape(Shape target) : target_(std::move(target)) {}
    std::string kind() const override { return "reshape"; }
    Shape output_shape(const Shape& in) const override;
    BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode, Rng* rng) override;
    BasicTensor<T> backward(const BasicTensor<T>& dy) override;
    void hyper_to_json(nlohmann::ordered_json& j) const override;
    void clear_cache() override;

private:
    Shape target_;  // per-sample
    Shape in_shape_;
};

// Factory used by the bundle loader.
template <typename T>
LayerPtr<T> layer_from_json(const nlohmann::json& j);

}  // namespace artenc
