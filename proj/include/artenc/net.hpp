#pragma once

#include <memory>
#include <string>
#include <vector>

#include "artenc/layers.hpp"
#include "artenc/tensor.hpp"

namespace artenc {

// Sequential layer stack. Forward validates shapes against the declared
// input shape and checks every activation for NaN/Inf, naming the layer
// that produced the first non-finite value.
template <typename T>
class Stack {
public:
    Stack() = default;
    explicit Stack(Shape input_shape) : input_shape_(std::move(input_shape)) {}

    Stack(Stack&&) noexcept = default;
    Stack& operator=(Stack&&) noexcept = default;

    void set_input_shape(Shape s) { input_shape_ = std::move(s); }
    const Shape& input_shape() const { return input_shape_; }

    Layer<T>& add(LayerPtr<T> layer) {
        layers_.push_back(std::move(layer));
        return *layers_.back();
    }

    std::size_t size() const { return layers_.size(); }
    Layer<T>& layer(std::size_t i) { return *layers_[i]; }
    const Layer<T>& layer(std::size_t i) const { return *layers_[i]; }

    Shape output_shape() const {
        Shape s = input_shape_;
        for (const auto& l : layers_) s = l->output_shape(s);
        return s;
    }

    // x is [N, input_shape...].
    BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode, Rng* rng = nullptr) {
        check_batch_shape(x);
        if (!x.all_finite()) throw NumericError("stack input contains non-finite values");
        BasicTensor<T> cur = x;
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            cur = layers_[i]->forward(cur, mode, rng);
            if (!cur.all_finite())
                throw NumericError("non-finite activation after layer " + std::to_string(i) +
                                   " (" + layers_[i]->kind() + ")");
        }
        forwarded_ = (mode == Mode::Train);
        return cur;
    }

    BasicTensor<T> backward(const BasicTensor<T>& dy) {
        if (!forwarded_)
            throw UsageError("stack backward called without a preceding train-mode forward");
        BasicTensor<T> cur = dy;
        for (std::size_t i = layers_.size(); i-- > 0;) cur = layers_[i]->backward(cur);
        return cur;
    }

    std::vector<ParamRef<T>> params() {
        std::vector<ParamRef<T>> out;
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            for (auto& p : layers_[i]->params()) {
                p.name = "layer" + std::to_string(i) + "." + layers_[i]->kind() + "." + p.name;
                out.push_back(p);
            }
        }
        return out;
    }

    std::vector<ParamRef<T>> state_tensors() {
        std::vector<ParamRef<T>> out;
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            for (auto& p : layers_[i]->state_tensors()) {
                p.name = "layer" + std::to_string(i) + ".state." + p.name;
                out.push_back(p);
            }
        }
        return out;
    }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& l : layers_) n += l->param_count();
        return n;
    }

    void zero_grad() {
        for (auto& p : params()) p.grad->fill(T(0));
    }

    void init_params(Rng& rng) {
        for (auto& l : layers_) {
            if (auto* c = dynamic_cast<ConvNd<T>*>(l.get())) c->init_params(rng);
            if (auto* f = dynamic_cast<FullyConnected<T>*>(l.get())) f->init_params(rng);
        }
    }

    void set_trainable(bool t) {
        for (auto& l : layers_) l->set_trainable(t);
    }

    void clear_caches() {
        for (auto& l : layers_) l->clear_cache();
        forwarded_ = false;
    }

private:
    void check_batch_shape(const BasicTensor<T>& x) const {
        if (x.rank() != static_cast<int>(input_shape_.size()) + 1)
            throw ConfigError("stack input rank mismatch: got " + shape_str(x.shape()) +
                              ", expected [N, " + shape_str(input_shape_) + "]");
        for (std::size_t i = 0; i < input_shape_.size(); ++i)
            if (x.shape()[i + 1] != input_shape_[i])
                throw ConfigError("stack input shape mismatch: got " + shape_str(x.shape()) +
                                  ", expected [N, " + shape_str(input_shape_) + "]");
    }

    Shape input_shape_;
    std::vector<LayerPtr<T>> layers_;
    bool forwarded_ = false;
};

// Variational head: two FC heads reading the trunk output. log-variance
// is clamped to [-30, 30] before exponentiation; the clamp saturates the
// gradient outside that range.
inline constexpr double kLogVarClamp = 30.0;

template <typename T>
struct VaeForward {
    BasicTensor<T> mu;       // [N, latent]
    BasicTensor<T> log_var;  // [N, latent], clamped
    BasicTensor<T> eps;      // [N, latent]
    BasicTensor<T> z;        // [N, latent]
    BasicTensor<T> recon;    // [N, output shape]
    std::vector<bool> lv_in_range;
};

// Encoder trunk -> (mu, log_var) -> reparameterized sample -> decoder.
template <typename T>
class VaeNet {
public:
    VaeNet() = default;

    Stack<T> trunk;
    std::unique_ptr<FullyConnected<T>> mu_head;
    std::unique_ptr<FullyConnected<T>> logvar_head;
    Stack<T> decoder;

    int latent_dim() const { return mu_head->out_features(); }

    VaeForward<T> forward_train(const BasicTensor<T>& x, Rng& rng) {
        VaeForward<T> f;
        BasicTensor<T> h = trunk.forward(x, Mode::Train, &rng);
        f.mu = mu_head->forward(h, Mode::Train, &rng);
        BasicTensor<T> lv_raw = logvar_head->forward(h, Mode::Train, &rng);
        f.log_var = lv_raw;
        f.lv_in_range.assign(lv_raw.numel(), true);
        for (std::size_t i = 0; i < lv_raw.numel(); ++i) {
            if (f.log_var[i] > T(kLogVarClamp)) {
                f.log_var[i] = T(kLogVarClamp);
                f.lv_in_range[i] = false;
            } else if (f.log_var[i] < T(-kLogVarClamp)) {
                f.log_var[i] = T(-kLogVarClamp);
                f.lv_in_range[i] = false;
            }
        }
        f.eps = BasicTensor<T>(f.mu.shape());
        for (std::size_t i = 0; i < f.eps.numel(); ++i)
            f.eps[i] = static_cast<T>(rng.normal());
        f.z = BasicTensor<T>(f.mu.shape());
        for (std::size_t i = 0; i < f.z.numel(); ++i)
            f.z[i] = f.mu[i] + std::exp(f.log_var[i] / T(2)) * f.eps[i];
        f.recon = decoder.forward(f.z, Mode::Train, &rng);
        return f;
    }

    // d_recon: gradient at the decoder output; d_mu / d_logvar: extra
    // gradients applied directly to the heads (the KL term).
    void backward(const VaeForward<T>& f, const BasicTensor<T>& d_recon,
                  const BasicTensor<T>& d_mu_extra, const BasicTensor<T>& d_logvar_extra) {
        BasicTensor<T> dz = decoder.backward(d_recon);
        BasicTensor<T> dmu(f.mu.shape());
        BasicTensor<T> dlv(f.log_var.shape());
        for (std::size_t i = 0; i < dz.numel(); ++i) {
            const T sigma = std::exp(f.log_var[i] / T(2));
            dmu[i] = dz[i] + d_mu_extra[i];
            T g = dz[i] * f.eps[i] * sigma / T(2) + d_logvar_extra[i];
            if (!f.lv_in_range[i]) g = T(0);
            dlv[i] = g;
        }
        BasicTensor<T> dh = mu_head->backward(dmu);
        BasicTensor<T> dh2 = logvar_head->backward(dlv);
        for (std::size_t i = 0; i < dh.numel(); ++i) dh[i] += dh2[i];
        trunk.backward(dh);
    }

    // Inference-mode encoding: mu only, no sampling.
    BasicTensor<T> encode(const BasicTensor<T>& x) {
        BasicTensor<T> h = trunk.forward(x, Mode::Infer, nullptr);
        return mu_head->forward(h, Mode::Infer, nullptr);
    }

    BasicTensor<T> decode(const BasicTensor<T>& z) {
        return decoder.forward(z, Mode::Infer, nullptr);
    }

    BasicTensor<T> reconstruct(const BasicTensor<T>& x) { return decode(encode(x)); }

    std::vector<ParamRef<T>> params() {
        std::vector<ParamRef<T>> out = trunk.params();
        for (auto& p : mu_head->params()) {
            p.name = "mu_head." + p.name;
            out.push_back(p);
        }
        for (auto& p : logvar_head->params()) {
            p.name = "logvar_head." + p.name;
            out.push_back(p);
        }
        for (auto& p : decoder.params()) {
            p.name = "decoder." + p.name;
            out.push_back(p);
        }
        return out;
    }

    // Parameters plus persistent state (BN running statistics).
    std::vector<ParamRef<T>> all_tensors() {
        std::vector<ParamRef<T>> out = params();
        for (auto& p : trunk.state_tensors()) out.push_back(p);
        for (auto& p : decoder.state_tensors()) out.push_back(p);
        return out;
    }

    std::size_t param_count() const {
        return trunk.param_count() + mu_head->param_count() + logvar_head->param_count() +
               decoder.param_count();
    }

    void zero_grad() {
        for (auto& p : params()) p.grad->fill(T(0));
    }

    void set_trainable(bool t) {
        trunk.set_trainable(t);
        mu_head->set_trainable(t);
        logvar_head->set_trainable(t);
        decoder.set_trainable(t);
    }
};

using StackF = Stack<float>;
using VaeNetF = VaeNet<float>;

// Hash of all parameter buffers, used by the inference-purity tests and
// by provenance records.
template <typename T>
std::uint64_t param_hash(std::vector<ParamRef<T>> params) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& p : params) {
        h = fnv1a64(p.value->data(), p.value->numel() * sizeof(T), h);
    }
    return h;
}

template <typename T>
std::vector<BasicTensor<T>> snapshot_tensors(std::vector<ParamRef<T>> refs) {
    std::vector<BasicTensor<T>> out;
    out.reserve(refs.size());
    for (const auto& r : refs) out.push_back(*r.value);
    return out;
}

template <typename T>
void restore_tensors(std::vector<ParamRef<T>> refs, const std::vector<BasicTensor<T>>& snap) {
    if (refs.size() != snap.size()) throw UsageError("snapshot size mismatch on restore");
    for (std::size_t i = 0; i < refs.size(); ++i) *refs[i].value = snap[i];
}

}  // namespace artenc
