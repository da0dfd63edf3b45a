#include "artenc/layers.hpp"

#include <algorithm>
#include <cmath>

#include "artenc/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace artenc {

namespace {

// Spatial positions are enumerated row-major over the output extents;
// this order is fixed and shared by forward, backward and col2im.
struct SpatialIdx {
    std::vector<int> extents;
    std::vector<std::size_t> strides;  // row-major strides

    explicit SpatialIdx(const std::vector<int>& e) : extents(e), strides(e.size()) {
        std::size_t s = 1;
        for (int r = static_cast<int>(e.size()) - 1; r >= 0; --r) {
            strides[static_cast<std::size_t>(r)] = s;
            s *= static_cast<std::size_t>(e[static_cast<std::size_t>(r)]);
        }
    }

    std::size_t total() const {
        std::size_t s = 1;
        for (int e : extents) s *= static_cast<std::size_t>(e);
        return s;
    }

    void decode(std::size_t flat, int* coords) const {
        for (std::size_t r = 0; r < extents.size(); ++r) {
            coords[r] = static_cast<int>(flat / strides[r]);
            flat %= strides[r];
        }
    }
};

std::vector<int> spatial_of(const Shape& per_sample) {
    return std::vector<int>(per_sample.begin() + 1, per_sample.end());
}

constexpr std::size_t kConvBlock = 4096;  // positions per im2col block

}  // namespace

// ===========================================================================
// ConvNd
// ===========================================================================

template <typename T>
ConvNd<T>::ConvNd(int spatial_rank, int in_channels, int out_channels,
                  std::vector<int> kernel, std::vector<int> stride, std::vector<int> pad)
    : rank_(spatial_rank), in_c_(in_channels), out_c_(out_channels),
      kernel_(std::move(kernel)), stride_(std::move(stride)), pad_(std::move(pad)) {
    if (rank_ < 1 || rank_ > 3) throw ConfigError("conv spatial rank must be 1..3");
    if (static_cast<int>(kernel_.size()) != rank_ || static_cast<int>(stride_.size()) != rank_ ||
        static_cast<int>(pad_.size()) != rank_)
        throw ConfigError("conv kernel/stride/pad rank mismatch");
    if (in_c_ <= 0 || out_c_ <= 0) throw ConfigError("conv channel counts must be positive");
    for (int i = 0; i < rank_; ++i) {
        if (kernel_[i] <= 0 || stride_[i] <= 0 || pad_[i] < 0)
            throw ConfigError("invalid conv hyperparameters");
    }
    int kvol = 1;
    for (int k : kernel_) kvol *= k;
    weight_ = BasicTensor<T>({out_c_, in_c_ * kvol});
    bias_ = BasicTensor<T>({out_c_});
    grad_w_ = BasicTensor<T>(weight_.shape());
    grad_b_ = BasicTensor<T>(bias_.shape());
}

template <typename T>
std::unique_ptr<ConvNd<T>> ConvNd<T>::same(int spatial_rank, int in_channels,
                                           int out_channels, int kernel) {
    if (kernel % 2 == 0) throw ConfigError("same-padding conv needs an odd kernel");
    std::vector<int> k(spatial_rank, kernel), s(spatial_rank, 1), p(spatial_rank, kernel / 2);
    return std::make_unique<ConvNd<T>>(spatial_rank, in_channels, out_channels, k, s, p);
}

template <typename T>
void ConvNd<T>::init_params(Rng& rng) {
    int kvol = 1;
    for (int k : kernel_) kvol *= k;
    const double fan_in = static_cast<double>(in_c_) * kvol;
    const double fan_out = static_cast<double>(out_c_) * kvol;
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    for (std::size_t i = 0; i < weight_.numel(); ++i)
        weight_[i] = static_cast<T>(rng.uniform(-limit, limit));
    bias_.fill(T(0));
}

template <typename T>
void ConvNd<T>::check_input(const Shape& in) const {
    if (static_cast<int>(in.size()) != rank_ + 1 || in[0] != in_c_)
        throw ConfigError(kind() + ": expected input [C=" + std::to_string(in_c_) + ", " +
                          std::to_string(rank_) + " spatial dims], got " + shape_str(in));
    for (int r = 0; r < rank_; ++r) {
        const int e = in[static_cast<std::size_t>(r) + 1];
        if (e + 2 * pad_[r] < kernel_[r])
            throw ConfigError(kind() + ": input extent " + std::to_string(e) +
                              " too small for kernel " + std::to_string(kernel_[r]));
    }
}

template <typename T>
Shape ConvNd<T>::output_shape(const Shape& in) const {
    check_input(in);
    Shape out{out_c_};
    for (int r = 0; r < rank_; ++r) {
        const int e = in[static_cast<std::size_t>(r) + 1];
        out.push_back((e + 2 * pad_[r] - kernel_[r]) / stride_[r] + 1);
    }
    return out;
}

template <typename T>
BasicTensor<T> ConvNd<T>::forward(const BasicTensor<T>& x, Mode mode, Rng*) {
    Shape per_sample(x.shape().begin() + 1, x.shape().end());
    const Shape out_ps = output_shape(per_sample);
    const int batch = x.dim(0);

    Shape out_shape{batch};
    out_shape.insert(out_shape.end(), out_ps.begin(), out_ps.end());
    BasicTensor<T> y(out_shape);

    const SpatialIdx in_idx(spatial_of(per_sample));
    const SpatialIdx out_idx(spatial_of(out_ps));
    const std::size_t in_spatial = in_idx.total();
    const std::size_t out_spatial = out_idx.total();
    int kvol = 1;
    for (int k : kernel_) kvol *= k;
    const std::size_t K = static_cast<std::size_t>(in_c_) * kvol;
    const SpatialIdx ker_idx(kernel_);

    std::vector<T> cols(K * std::min(kConvBlock, out_spatial));

    for (int n = 0; n < batch; ++n) {
        const T* xs = x.data() + static_cast<std::size_t>(n) * in_c_ * in_spatial;
        T* ys = y.data() + static_cast<std::size_t>(n) * out_c_ * out_spatial;

        for (std::size_t p0 = 0; p0 < out_spatial; p0 += kConvBlock) {
            const std::size_t bw = std::min(kConvBlock, out_spatial - p0);

            // im2col for this block of output positions
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
            for (long long kk = 0; kk < static_cast<long long>(K); ++kk) {
                const int c = static_cast<int>(kk) / kvol;
                const int kflat = static_cast<int>(kk) % kvol;
                int koff[3];
                ker_idx.decode(static_cast<std::size_t>(kflat), koff);
                T* row = cols.data() + static_cast<std::size_t>(kk) * bw;
                const T* xc = xs + static_cast<std::size_t>(c) * in_spatial;
                int oc[3];
                for (std::size_t p = 0; p < bw; ++p) {
                    out_idx.decode(p0 + p, oc);
                    std::size_t src = 0;
                    bool inside = true;
                    for (int r = 0; r < rank_; ++r) {
                        const int ic = oc[r] * stride_[r] - pad_[r] + koff[r];
                        if (ic < 0 || ic >= in_idx.extents[static_cast<std::size_t>(r)]) {
                            inside = false;
                            break;
                        }
                        src += static_cast<std::size_t>(ic) * in_idx.strides[static_cast<std::size_t>(r)];
                    }
                    row[p] = inside ? xc[src] : T(0);
                }
            }

            // y[o, block] += W[o, k] * cols[k, block]
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
            for (int o = 0; o < out_c_; ++o) {
                T* yrow = ys + static_cast<std::size_t>(o) * out_spatial + p0;
                const T* wrow = weight_.data() + static_cast<std::size_t>(o) * K;
                for (std::size_t p = 0; p < bw; ++p) yrow[p] = bias_[static_cast<std::size_t>(o)];
                for (std::size_t k = 0; k < K; ++k)
                    axpy_k(wrow[k], cols.data() + k * bw, yrow, bw);
            }
        }
    }

    if (mode == Mode::Train) {
        cached_input_ = x;
        this->has_cache_ = true;
    }
    return y;
}

template <typename T>
BasicTensor<T> ConvNd<T>::backward(const BasicTensor<T>& dy) {
    this->require_cache("conv");
    const BasicTensor<T>& x = cached_input_;
    Shape per_sample(x.shape().begin() + 1, x.shape().end());
    const Shape out_ps = output_shape(per_sample);
    const int batch = x.dim(0);

    const SpatialIdx in_idx(spatial_of(per_sample));
    const SpatialIdx out_idx(spatial_of(out_ps));
    const std::size_t in_spatial = in_idx.total();
    const std::size_t out_spatial = out_idx.total();
    int kvol = 1;
    for (int k : kernel_) kvol *= k;
    const std::size_t K = static_cast<std::size_t>(in_c_) * kvol;
    const SpatialIdx ker_idx(kernel_);

    BasicTensor<T> dx(x.shape());
    std::vector<T> cols(K * std::min(kConvBlock, out_spatial));
    std::vector<T> dcols(K * std::min(kConvBlock, out_spatial));

    for (int n = 0; n < batch; ++n) {
        const T* xs = x.data() + static_cast<std::size_t>(n) * in_c_ * in_spatial;
        const T* dys = dy.data() + static_cast<std::size_t>(n) * out_c_ * out_spatial;
        T* dxs = dx.data() + static_cast<std::size_t>(n) * in_c_ * in_spatial;

        for (std::size_t p0 = 0; p0 < out_spatial; p0 += kConvBlock) {
            const std::size_t bw = std::min(kConvBlock, out_spatial - p0);

            // rebuild im2col block (recompute instead of caching all blocks)
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
            for (long long kk = 0; kk < static_cast<long long>(K); ++kk) {
                const int c = static_cast<int>(kk) / kvol;
                const int kflat = static_cast<int>(kk) % kvol;
                int koff[3];
                ker_idx.decode(static_cast<std::size_t>(kflat), koff);
                T* row = cols.data() + static_cast<std::size_t>(kk) * bw;
                const T* xc = xs + static_cast<std::size_t>(c) * in_spatial;
                int oc[3];
                for (std::size_t p = 0; p < bw; ++p) {
                    out_idx.decode(p0 + p, oc);
                    std::size_t src = 0;
                    bool inside = true;
                    for (int r = 0; r < rank_; ++r) {
                        const int ic = oc[r] * stride_[r] - pad_[r] + koff[r];
                        if (ic < 0 || ic >= in_idx.extents[static_cast<std::size_t>(r)]) {
                            inside = false;
                            break;
                        }
                        src += static_cast<std::size_t>(ic) * in_idx.strides[static_cast<std::size_t>(r)];
                    }
                    row[p] = inside ? xc[src] : T(0);
                }
            }

            if (this->trainable_) {
                // dW[o, k] += dy[o, block] . cols[k, block]
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
                for (int o = 0; o < out_c_; ++o) {
                    const T* dyrow = dys + static_cast<std::size_t>(o) * out_spatial + p0;
                    T* gw = grad_w_.data() + static_cast<std::size_t>(o) * K;
                    for (std::size_t k = 0; k < K; ++k)
                        gw[k] += dot_k(dyrow, cols.data() + k * bw, bw);
                    T acc = T(0);
                    for (std::size_t p = 0; p < bw; ++p) acc += dyrow[p];
                    grad_b_[static_cast<std::size_t>(o)] += acc;
                }
            }

            // dcols[k, block] = sum_o W[o, k] * dy[o, block]
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
            for (long long kk = 0; kk < static_cast<long long>(K); ++kk) {
                T* drow = dcols.data() + static_cast<std::size_t>(kk) * bw;
                std::fill(drow, drow + bw, T(0));
                for (int o = 0; o < out_c_; ++o) {
                    const T w = weight_[static_cast<std::size_t>(o) * K + static_cast<std::size_t>(kk)];
                    axpy_k(w, dys + static_cast<std::size_t>(o) * out_spatial + p0, drow, bw);
                }
            }

            // col2im scatter; channels are disjoint so parallelize over c
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
            for (int c = 0; c < in_c_; ++c) {
                T* dxc = dxs + static_cast<std::size_t>(c) * in_spatial;
                int oc[3], koff[3];
                for (int kf = 0; kf < kvol; ++kf) {
                    ker_idx.decode(static_cast<std::size_t>(kf), koff);
                    const T* drow = dcols.data() +
                                    (static_cast<std::size_t>(c) * kvol + static_cast<std::size_t>(kf)) * bw;
                    for (std::size_t p = 0; p < bw; ++p) {
                        out_idx.decode(p0 + p, oc);
                        std::size_t dst = 0;
                        bool inside = true;
                        for (int r = 0; r < rank_; ++r) {
                            const int ic = oc[r] * stride_[r] - pad_[r] + koff[r];
                            if (ic < 0 || ic >= in_idx.extents[static_cast<std::size_t>(r)]) {
                                inside = false;
                                break;
                            }
                            dst += static_cast<std::size_t>(ic) * in_idx.strides[static_cast<std::size_t>(r)];
                        }
                        if (inside) dxc[dst] += drow[p];
                    }
                }
            }
        }
    }
    return dx;
}

template <typename T>
std::vector<ParamRef<T>> ConvNd<T>::params() {
    return {{"weight", &weight_, &grad_w_}, {"bias", &bias_, &grad_b_}};
}

template <typename T>
void ConvNd<T>::hyper_to_json(nlohmann::ordered_json& j) const {
    j["spatial_rank"] = rank_;
    j["in_channels"] = in_c_;
    j["out_channels"] = out_c_;
    j["kernel"] = kernel_;
    j["stride"] = stride_;
    j["pad"] = pad_;
}

template <typename T>
void ConvNd<T>::clear_cache() {
    cached_input_ = BasicTensor<T>();
    this->has_cache_ = false;
}

// ===========================================================================
// MaxPool
// ===========================================================================

template <typename T>
MaxPool<T>::MaxPool(int spatial_rank, std::vector<int> kernel)
    : rank_(spatial_rank), kernel_(std::move(kernel)) {
    if (static_cast<int>(kernel_.size()) != rank_) throw ConfigError("maxpool kernel rank mismatch");
    for (int k : kernel_)
        if (k <= 0) throw ConfigError("maxpool kernel must be positive");
}

template <typename T>
Shape MaxPool<T>::output_shape(const Shape& in) const {
    if (static_cast<int>(in.size()) != rank_ + 1)
        throw ConfigError(kind() + ": expected [C, spatial...], got " + shape_str(in));
    Shape out{in[0]};
    for (int r = 0; r < rank_; ++r) {
        const int e = in[static_cast<std::size_t>(r) + 1];
        if (e < kernel_[r]) throw ConfigError(kind() + ": extent smaller than pool kernel");
        out.push_back(e / kernel_[r]);
    }
    return out;
}

template <typename T>
BasicTensor<T> MaxPool<T>::forward(const BasicTensor<T>& x, Mode mode, Rng*) {
    Shape per_sample(x.shape().begin() + 1, x.shape().end());
    const Shape out_ps = output_shape(per_sample);
    const int batch = x.dim(0);
    const int channels = per_sample[0];

    Shape out_shape{batch};
    out_shape.insert(out_shape.end(), out_ps.begin(), out_ps.end());
    BasicTensor<T> y(out_shape);

    const SpatialIdx in_idx(spatial_of(per_sample));
    const SpatialIdx out_idx(spatial_of(out_ps));
    const SpatialIdx ker_idx(kernel_);
    const std::size_t in_spatial = in_idx.total();
    const std::size_t out_spatial = out_idx.total();
    const int kvol = static_cast<int>(ker_idx.total());

    argmax_.assign(y.numel(), 0);
    in_shape_ = x.shape();

    const long long planes = static_cast<long long>(batch) * channels;
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (long long nc = 0; nc < planes; ++nc) {
        const T* xp = x.data() + static_cast<std::size_t>(nc) * in_spatial;
        T* yp = y.data() + static_cast<std::size_t>(nc) * out_spatial;
        std::size_t* am = argmax_.data() + static_cast<std::size_t>(nc) * out_spatial;
        int oc[3], koff[3];
        for (std::size_t p = 0; p < out_spatial; ++p) {
            out_idx.decode(p, oc);
            T best = T(0);
            std::size_t best_src = 0;
            bool first = true;
            for (int kf = 0; kf < kvol; ++kf) {
                ker_idx.decode(static_cast<std::size_t>(kf), koff);
                std::size_t src = 0;
                for (int r = 0; r < rank_; ++r)
                    src += static_cast<std::size_t>(oc[r] * kernel_[r] + koff[r]) *
                           in_idx.strides[static_cast<std::size_t>(r)];
                if (first || xp[src] > best) {
                    best = xp[src];
                    best_src = src;
                    first = false;
                }
            }
            yp[p] = best;
            am[p] = best_src;
        }
    }

    if (mode == Mode::Train) this->has_cache_ = true;
    return y;
}

template <typename T>
BasicTensor<T> MaxPool<T>::backward(const BasicTensor<T>& dy) {
    this->require_cache("maxpool");
    BasicTensor<T> dx(in_shape_);
    Shape per_sample(in_shape_.begin() + 1, in_shape_.end());
    const SpatialIdx in_idx(spatial_of(per_sample));
    const std::size_t in_spatial = in_idx.total();
    const std::size_t out_spatial = dy.numel() / (static_cast<std::size_t>(in_shape_[0]) * per_sample[0]);

    const long long planes = static_cast<long long>(in_shape_[0]) * per_sample[0];
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (long long nc = 0; nc < planes; ++nc) {
        const T* dyp = dy.data() + static_cast<std::size_t>(nc) * out_spatial;
        T* dxp = dx.data() + static_cast<std::size_t>(nc) * in_spatial;
        const std::size_t* am = argmax_.data() + static_cast<std::size_t>(nc) * out_spatial;
        for (std::size_t p = 0; p < out_spatial; ++p) dxp[am[p]] += dyp[p];
    }
    return dx;
}

template <typename T>
void MaxPool<T>::hyper_to_json(nlohmann::ordered_json& j) const {
    j["spatial_rank"] = rank_;
    j["kernel"] = kernel_;
}

template <typename T>
void MaxPool<T>::clear_cache() {
    argmax_.clear();
    this->has_cache_ = false;
}

// ===========================================================================
// Upsample
// ===========================================================================

template <typename T>
Upsample<T>::Upsample(int spatial_rank, std::vector<int> factor)
    : rank_(spatial_rank), factor_(std::move(factor)) {
    if (static_cast<int>(factor_.size()) != rank_) throw ConfigError("upsample factor rank mismatch");
    for (int f : factor_)
        if (f <= 0) throw ConfigError("upsample factor must be positive");
}

template <typename T>
Shape Upsample<T>::output_shape(const Shape& in) const {
    if (static_cast<int>(in.size()) != rank_ + 1)
        throw ConfigError(kind() + ": expected [C, spatial...], got " + shape_str(in));
    Shape out{in[0]};
    for (int r = 0; r < rank_; ++r) out.push_back(in[static_cast<std::size_t>(r) + 1] * factor_[r]);
    return out;
}

template <typename T>
BasicTensor<T> Upsample<T>::forward(const BasicTensor<T>& x, Mode mode, Rng*) {
    Shape per_sample(x.shape().begin() + 1, x.shape().end());
    const Shape out_ps = output_shape(per_sample);
    const int batch = x.dim(0);
    const int channels = per_sample[0];

    Shape out_shape{batch};
    out_shape.insert(out_shape.end(), out_ps.begin(), out_ps.end());
    BasicTensor<T> y(out_shape);

    const SpatialIdx in_idx(spatial_of(per_sample));
    const SpatialIdx out_idx(spatial_of(out_ps));
    const std::size_t in_spatial = in_idx.total();
    const std::size_t out_spatial = out_idx.total();

    const long long planes = static_cast<long long>(batch) * channels;
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (long long nc = 0; nc < planes; ++nc) {
        const T* xp = x.data() + static_cast<std::size_t>(nc) * in_spatial;
        T* yp = y.data() + static_cast<std::size_t>(nc) * out_spatial;
        int oc[3];
        for (std::size_t p = 0; p < out_spatial; ++p) {
            out_idx.decode(p, oc);
            std::size_t src = 0;
            for (int r = 0; r < rank_; ++r)
                src += static_cast<std::size_t>(oc[r] / factor_[r]) *
                       in_idx.strides[static_cast<std::size_t>(r)];
            yp[p] = xp[src];
        }
    }

    if (mode == Mode::Train) {
        in_shape_ = x.shape();
        this->has_cache_ = true;
    }
    return y;
}

template <typename T>
BasicTensor<T> Upsample<T>::backward(const BasicTensor<T>& dy) {
    this->require_cache("upsample");
    BasicTensor<T> dx(in_shape_);
    Shape per_sample(in_shape_.begin() + 1, in_shape_.end());
    Shape out_ps = output_shape(per_sample);
    const SpatialIdx in_idx(spatial_of(per_sample));
    const SpatialIdx out_idx(spatial_of(out_ps));
    const std::size_t in_spatial = in_idx.total();
    const std::size_t out_spatial = out_idx.total();

    const long long planes = static_cast<long long>(in_shape_[0]) * per_sample[0];
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (long long nc = 0; nc < planes; ++nc) {
        const T* dyp = dy.data() + static_cast<std::size_t>(nc) * out_spatial;
        T* dxp = dx.data() + static_cast<std::size_t>(nc) * in_spatial;
        int oc[3];
        for (std::size_t p = 0; p < out_spatial; ++p) {
            out_idx.decode(p, oc);
            std::size_t src = 0;
            for (int r = 0; r < rank_; ++r)
                src += static_cast<std::size_t>(oc[r] / factor_[r]) *
                       in_idx.strides[static_cast<std::size_t>(r)];
            dxp[src] += dyp[p];
        }
    }
    return dx;
}

template <typename T>
void Upsample<T>::hyper_to_json(nlohmann::ordered_json& j) const {
    j["spatial_rank"] = rank_;
    j["factor"] = factor_;
}

template <typename T>
void Upsample<T>::clear_cache() {
    this->has_cache_ = false;
}

// ===========================================================================
// FullyConnected
// ===========================================================================

template <typename T>
FullyConnected<T>::FullyConnected(int in_features, int out_features)
    : in_f_(in_features), out_f_(out_features) {
    if (in_f_ <= 0 || out_f_ <= 0) throw ConfigError("fc feature counts must be positive");
    weight_ = BasicTensor<T>({out_f_, in_f_});
    bias_ = BasicTensor<T>({out_f_});
    grad_w_ = BasicTensor<T>(weight_.shape());
    grad_b_ = BasicTensor<T>(bias_.shape());
}

template <typename T>
void FullyConnected<T>::init_params(Rng& rng) {
    const double limit = std::sqrt(6.0 / (static_cast<double>(in_f_) + out_f_));
    for (std::size_t i = 0; i < weight_.numel(); ++i)
        weight_[i] = static_cast<T>(rng.uniform(-limit, limit));
    bias_.fill(T(0));
}

template <typename T>
Shape FullyConnected<T>::output_shape(const Shape& in) const {
    if (static_cast<int>(shape_numel(in)) != in_f_)
        throw ConfigError("fc: input " + shape_str(in) + " does not flatten to " +
                          std::to_string(in_f_) + " features");
    return {out_f_};
}

template <typename T>
BasicTensor<T> FullyConnected<T>::forward(const BasicTensor<T>& x, Mode mode, Rng*) {
    Shape per_sample(x.shape().begin() + 1, x.shape().end());
    output_shape(per_sample);  // validates
    const int batch = x.dim(0);

    BasicTensor<T> y({batch, out_f_});
    const long long cells = static_cast<long long>(batch) * out_f_;
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (long long i = 0; i < cells; ++i) {
        const int n = static_cast<int>(i) / out_f_;
        const int o = static_cast<int>(i) % out_f_;
        y[static_cast<std::size_t>(i)] =
            dot_k(weight_.data() + static_cast<std::size_t>(o) * in_f_,
                  x.data() + static_cast<std::size_t>(n) * in_f_, static_cast<std::size_t>(in_f_)) +
            bias_[static_cast<std::size_t>(o)];
    }

    if (mode == Mode::Train) {
        cached_input_ = x;
        cached_in_shape_ = x.shape();
        this->has_cache_ = true;
    }
    return y;
}

template <typename T>
BasicTensor<T> FullyConnected<T>::backward(const BasicTensor<T>& dy) {
    this->require_cache("fc");
    const int batch = cached_in_shape_[0];

    if (this->trainable_) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
        for (int o = 0; o < out_f_; ++o) {
            T* gw = grad_w_.data() + static_cast<std::size_t>(o) * in_f_;
            T gb = T(0);
            for (int n = 0; n < batch; ++n) {
                const T g = dy[static_cast<std::size_t>(n) * out_f_ + o];
                axpy_k(g, cached_input_.data() + static_cast<std::size_t>(n) * in_f_, gw,
                       static_cast<std::size_t>(in_f_));
                gb += g;
            }
            grad_b_[static_cast<std::size_t>(o)] += gb;
        }
    }

    BasicTensor<T> dx(cached_in_shape_);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int n = 0; n < batch; ++n) {
        T* dxn = dx.data() + static_cast<std::size_t>(n) * in_f_;
        for (int o = 0; o < out_f_; ++o) {
            const T g = dy[static_cast<std::size_t>(n) * out_f_ + o];
            axpy_k(g, weight_.data() + static_cast<std::size_t>(o) * in_f_, dxn,
                   static_cast<std::size_t>(in_f_));
        }
    }
    return dx;
}

template <typename T>
std::vector<ParamRef<T>> FullyConnected<T>::params() {
    return {{"weight", &weight_, &grad_w_}, {"bias", &bias_, &grad_b_}};
}

template <typename T>
void FullyConnected<T>::hyper_to_json(nlohmann::ordered_json& j) const {
    j["in_features"] = in_f_;
    j["out_features"] = out_f_;
}

template <typename T>
void FullyConnected<T>::clear_cache() {
    cached_input_ = BasicTensor<T>();
    this->has_cache_ = false;
}

// ===========================================================================
// BatchNorm
// ===========================================================================

template <typename T>
BatchNorm<T>::BatchNorm(int channels, double eps, double momentum)
    : channels_(channels), eps_(eps), momentum_(momentum) {
    if (channels_ <= 0) throw ConfigError("batchnorm channel count must be positive");
    gamma_ = BasicTensor<T>({channels_}, T(1));
    beta_ = BasicTensor<T>({channels_}, T(0));
    grad_gamma_ = BasicTensor<T>({channels_});
    grad_beta_ = BasicTensor<T>({channels_});
    run_mean_ = BasicTensor<T>({channels_}, T(0));
    run_var_ = BasicTensor<T>({channels_}, T(1));
}

template <typename T>
BasicTensor<T> BatchNorm<T>::forward(const BasicTensor<T>& x, Mode mode, Rng*) {
    if (x.rank() < 2 || x.dim(1) != channels_)
        throw ConfigError("batchnorm: expected [N, C=" + std::to_string(channels_) +
                          ", ...], got " + shape_str(x.shape()));
    const int batch = x.dim(0);
    std::size_t spatial = 1;
    for (int r = 2; r < x.rank(); ++r) spatial *= static_cast<std::size_t>(x.dim(r));
    const std::size_t plane = static_cast<std::size_t>(channels_) * spatial;

    BasicTensor<T> y(x.shape());

    if (mode == Mode::Train) {
        batch_mean_.assign(static_cast<std::size_t>(channels_), 0.0);
        batch_var_.assign(static_cast<std::size_t>(channels_), 0.0);
        xhat_ = BasicTensor<T>(x.shape());
        const double m = static_cast<double>(batch) * static_cast<double>(spatial);

#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
        for (int c = 0; c < channels_; ++c) {
            double sum = 0.0;
            for (int n = 0; n < batch; ++n) {
                const T* p = x.data() + static_cast<std::size_t>(n) * plane +
                             static_cast<std::size_t>(c) * spatial;
                for (std::size_t s = 0; s < spatial; ++s) sum += static_cast<double>(p[s]);
            }
            const double mean = sum / m;
            double sq = 0.0;
            for (int n = 0; n < batch; ++n) {
                const T* p = x.data() + static_cast<std::size_t>(n) * plane +
                             static_cast<std::size_t>(c) * spatial;
                for (std::size_t s = 0; s < spatial; ++s) {
                    const double d = static_cast<double>(p[s]) - mean;
                    sq += d * d;
                }
            }
            const double var = sq / m;
            batch_mean_[static_cast<std::size_t>(c)] = mean;
            batch_var_[static_cast<std::size_t>(c)] = var;
            const double inv_sd = 1.0 / std::sqrt(var + eps_);
            const double g = static_cast<double>(gamma_[static_cast<std::size_t>(c)]);
            const double b = static_cast<double>(beta_[static_cast<std::size_t>(c)]);
            for (int n = 0; n < batch; ++n) {
                const std::size_t off = static_cast<std::size_t>(n) * plane +
                                        static_cast<std::size_t>(c) * spatial;
                const T* p = x.data() + off;
                T* xh = xhat_.data() + off;
                T* yo = y.data() + off;
                for (std::size_t s = 0; s < spatial; ++s) {
                    const double h = (static_cast<double>(p[s]) - mean) * inv_sd;
                    xh[s] = static_cast<T>(h);
                    yo[s] = static_cast<T>(g * h + b);
                }
            }
            run_mean_[static_cast<std::size_t>(c)] = static_cast<T>(
                momentum_ * static_cast<double>(run_mean_[static_cast<std::size_t>(c)]) +
                (1.0 - momentum_) * mean);
            run_var_[static_cast<std::size_t>(c)] = static_cast<T>(
                momentum_ * static_cast<double>(run_var_[static_cast<std::size_t>(c)]) +
                (1.0 - momentum_) * var);
        }
        in_shape_ = x.shape();
        this->has_cache_ = true;
    } else {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
        for (int c = 0; c < channels_; ++c) {
            const double inv_sd =
                1.0 / std::sqrt(static_cast<double>(run_var_[static_cast<std::size_t>(c)]) + eps_);
            const double mean = static_cast<double>(run_mean_[static_cast<std::size_t>(c)]);
            const double g = static_cast<double>(gamma_[static_cast<std::size_t>(c)]);
            const double b = static_cast<double>(beta_[static_cast<std::size_t>(c)]);
            for (int n = 0; n < batch; ++n) {
                const std::size_t off = static_cast<std::size_t>(n) * plane +
                                        static_cast<std::size_t>(c) * spatial;
                const T* p = x.data() + off;
                T* yo = y.data() + off;
                for (std::size_t s = 0; s < spatial; ++s)
                    yo[s] = static_cast<T>(g * ((static_cast<double>(p[s]) - mean) * inv_sd) + b);
            }
        }
    }
    return y;
}

template <typename T>
BasicTensor<T> BatchNorm<T>::backward(const BasicTensor<T>& dy) {
    this->require_cache("batchnorm");
    const int batch = in_shape_[0];
    std::size_t spatial = 1;
    for (std::size_t r = 2; r < in_shape_.size(); ++r) spatial *= static_cast<std::size_t>(in_shape_[r]);
    const std::size_t plane = static_cast<std::size_t>(channels_) * spatial;
    const double m = static_cast<double>(batch) * static_cast<double>(spatial);

    BasicTensor<T> dx(in_shape_);

#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int c = 0; c < channels_; ++c) {
        const double inv_sd = 1.0 / std::sqrt(batch_var_[static_cast<std::size_t>(c)] + eps_);
        const double g = static_cast<double>(gamma_[static_cast<std::size_t>(c)]);

        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int n = 0; n < batch; ++n) {
            const std::size_t off = static_cast<std::size_t>(n) * plane +
                                    static_cast<std::size_t>(c) * spatial;
            const T* dyp = dy.data() + off;
            const T* xh = xhat_.data() + off;
            for (std::size_t s = 0; s < spatial; ++s) {
                sum_dy += static_cast<double>(dyp[s]);
                sum_dy_xhat += static_cast<double>(dyp[s]) * static_cast<double>(xh[s]);
            }
        }

        if (this->trainable_) {
            grad_gamma_[static_cast<std::size_t>(c)] += static_cast<T>(sum_dy_xhat);
            grad_beta_[static_cast<std::size_t>(c)] += static_cast<T>(sum_dy);
        }

        for (int n = 0; n < batch; ++n) {
            const std::size_t off = static_cast<std::size_t>(n) * plane +
                                    static_cast<std::size_t>(c) * spatial;
            const T* dyp = dy.data() + off;
            const T* xh = xhat_.data() + off;
            T* dxp = dx.data() + off;
            for (std::size_t s = 0; s < spatial; ++s) {
                const double t = m * static_cast<double>(dyp[s]) - sum_dy -
                                 static_cast<double>(xh[s]) * sum_dy_xhat;
                dxp[s] = static_cast<T>(g * inv_sd * t / m);
            }
        }
    }
    return dx;
}

template <typename T>
std::vector<ParamRef<T>> BatchNorm<T>::params() {
    return {{"gamma", &gamma_, &grad_gamma_}, {"beta", &beta_, &grad_beta_}};
}

template <typename T>
void BatchNorm<T>::hyper_to_json(nlohmann::ordered_json& j) const {
    j["channels"] = channels_;
    j["eps"] = eps_;
    j["momentum"] = momentum_;
}

template <typename T>
void BatchNorm<T>::clear_cache() {
    xhat_ = BasicTensor<T>();
    batch_mean_.clear();
    batch_var_.clear();
    this->has_cache_ = false;
}

// ===========================================================================
// Activations
// ===========================================================================

template <typename T>
BasicTensor<T> ReLU<T>::forward(const BasicTensor<T>& x, Mode mode, Rng*) {
    BasicTensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
    if (mode == Mode::Train) {
        cached_input_ = x;
        this->has_cache_ = true;
    }
    return y;
}

template <typename T>
BasicTensor<T> ReLU<T>::backward(const BasicTensor<T>& dy) {
    this->require_cache("relu");
    BasicTensor<T> dx(dy.shape());
    for (std::size_t i = 0; i < dy.numel(); ++i)
        dx[i] = cached_input_[i] > T(0) ? dy[i] : T(0);
    return dx;
}

template <typename T>
void ReLU<T>::hyper_to_json(nlohmann::ordered_json&) const {}

template <typename T>
void ReLU<T>::clear_cache() {
    cached_input_ = BasicTensor<T>();
    this->has_cache_ = false;
}

template <typename T>
BasicTensor<T> Elu<T>::forward(const BasicTensor<T>& x, Mode mode, Rng*) {
    BasicTensor<T> y(x.shape());
    const T a = static_cast<T>(alpha_);
    for (std::size_t i = 0; i < x.numel(); ++i)
        y[i] = x[i] > T(0) ? x[i] : a * (std::exp(x[i]) - T(1));
    if (mode == Mode::Train) {
        cached_input_ = x;
        this->has_cache_ = true;
    }
    return y;
}

template <typename T>
BasicTensor<T> Elu<T>::backward(const BasicTensor<T>& dy) {
    this->require_cache("elu");
    BasicTensor<T> dx(dy.shape());
    const T a = static_cast<T>(alpha_);
    for (std::size_t i = 0; i < dy.numel(); ++i) {
        const T x = cached_input_[i];
        dx[i] = x > T(0) ? dy[i] : dy[i] * a * std::exp(x);
    }
    return dx;
}

template <typename T>
void Elu<T>::hyper_to_json(nlohmann::ordered_json& j) const {
    j["alpha"] = alpha_;
}

template <typename T>
void Elu<T>::clear_cache() {
    cached_input_ = BasicTensor<T>();
    this->has_cache_ = false;
}

// ===========================================================================
// Dropout
// ===========================================================================

template <typename T>
Dropout<T>::Dropout(double p) : p_(p) {
    if (p_ < 0.0 || p_ >= 1.0) throw ConfigError("dropout rate must be in [0, 1)");
}

template <typename T>
BasicTensor<T> Dropout<T>::forward(const BasicTensor<T>& x, Mode mode, Rng* rng) {
    if (mode == Mode::Infer || p_ == 0.0) return x;
    if (rng == nullptr) throw UsageError("dropout: train-mode forward needs an rng");
    mask_ = BasicTensor<T>(x.shape());
    BasicTensor<T> y(x.shape());
    const T scale = static_cast<T>(1.0 / (1.0 - p_));
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const bool keep = rng->uniform() >= p_;
        mask_[i] = keep ? scale : T(0);
        y[i] = x[i] * mask_[i];
    }
    this->has_cache_ = true;
    return y;
}

template <typename T>
BasicTensor<T> Dropout<T>::backward(const BasicTensor<T>& dy) {
    if (p_ == 0.0) return dy;
    this->require_cache("dropout");
    BasicTensor<T> dx(dy.shape());
    for (std::size_t i = 0; i < dy.numel(); ++i) dx[i] = dy[i] * mask_[i];
    return dx;
}

template <typename T>
void Dropout<T>::hyper_to_json(nlohmann::ordered_json& j) const {
    j["rate"] = p_;
}

template <typename T>
void Dropout<T>::clear_cache() {
    mask_ = BasicTensor<T>();
    this->has_cache_ = false;
}

// ===========================================================================
// Reshape
// ===========================================================================

template <typename T>
Shape Reshape<T>::output_shape(const Shape& in) const {
    if (shape_numel(in) != shape_numel(target_))
        throw ConfigError("reshape: " + shape_str(in) + " -> " + shape_str(target_) +
                          " changes element count");
    return target_;
}

template <typename T>
BasicTensor<T> Reshape<T>::forward(const BasicTensor<T>& x, Mode mode, Rng*) {
    Shape per_sample(x.shape().begin() + 1, x.shape().end());
    output_shape(per_sample);
    BasicTensor<T> y = x;
    Shape out{x.dim(0)};
    out.insert(out.end(), target_.begin(), target_.end());
    y.reshape(out);
    if (mode == Mode::Train) {
        in_shape_ = x.shape();
        this->has_cache_ = true;
    }
    return y;
}

template <typename T>
BasicTensor<T> Reshape<T>::backward(const BasicTensor<T>& dy) {
    this->require_cache("reshape");
    BasicTensor<T> dx = dy;
    dx.reshape(in_shape_);
    return dx;
}

template <typename T>
void Reshape<T>::hyper_to_json(nlohmann::ordered_json& j) const {
    j["target"] = target_;
}

template <typename T>
void Reshape<T>::clear_cache() {
    this->has_cache_ = false;
}

// ===========================================================================
// Factory
// ===========================================================================

template <typename T>
LayerPtr<T> layer_from_json(const nlohmann::json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind.rfind("conv", 0) == 0) {
        return std::make_unique<ConvNd<T>>(
            j.at("spatial_rank").get<int>(), j.at("in_channels").get<int>(),
            j.at("out_channels").get<int>(), j.at("kernel").get<std::vector<int>>(),
            j.at("stride").get<std::vector<int>>(), j.at("pad").get<std::vector<int>>());
    }
    if (kind.rfind("maxpool", 0) == 0)
        return std::make_unique<MaxPool<T>>(j.at("spatial_rank").get<int>(),
                                            j.at("kernel").get<std::vector<int>>());
    if (kind.rfind("upsample", 0) == 0)
        return std::make_unique<Upsample<T>>(j.at("spatial_rank").get<int>(),
                                             j.at("factor").get<std::vector<int>>());
    if (kind == "fc")
        return std::make_unique<FullyConnected<T>>(j.at("in_features").get<int>(),
                                                   j.at("out_features").get<int>());
    if (kind == "batchnorm")
        return std::make_unique<BatchNorm<T>>(j.at("channels").get<int>(),
                                              j.at("eps").get<double>(),
                                              j.at("momentum").get<double>());
    if (kind == "relu") return std::make_unique<ReLU<T>>();
    if (kind == "elu") return std::make_unique<Elu<T>>(j.at("alpha").get<double>());
    if (kind == "dropout") return std::make_unique<Dropout<T>>(j.at("rate").get<double>());
    if (kind == "reshape") return std::make_unique<Reshape<T>>(j.at("target").get<Shape>());
    throw IoError("unknown layer kind '" + kind + "' in model header");
}

#define ARTENC_INSTANTIATE(T)           \
    template class ConvNd<T>;           \
    template class MaxPool<T>;          \
    template class Upsample<T>;         \
    template class FullyConnected<T>;   \
    template class BatchNorm<T>;        \
    template class ReLU<T>;             \
    template class Elu<T>;              \
    template class Dropout<T>;          \
    template class Reshape<T>;          \
    template LayerPtr<T> layer_from_json<T>(const nlohmann::json&);

ARTENC_INSTANTIATE(float)
ARTENC_INSTANTIATE(double)
#undef ARTENC_INSTANTIATE

}  // namespace artenc
