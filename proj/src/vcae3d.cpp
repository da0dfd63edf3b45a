#include "artenc/vcae3d.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "artenc/losses.hpp"

namespace artenc {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr int kEncodeChunk = 64;

int scaled(int base, double scale) {
    return std::max(1, static_cast<int>(std::lround(base * scale)));
}

}  // namespace

void write_emap(const std::string& path, const EncodingMap& map) {
    ordered_json hdr;
    hdr["format"] = "emap";
    hdr["version"] = 1;
    hdr["artery_id"] = map.artery_id;
    hdr["rows"] = map.rows;
    hdr["cols"] = map.cols;
    hdr["dtype"] = "f32le";
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write encoding map: " + path);
    const std::string hs = hdr.dump();
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    out.put('\n');
    out.write(reinterpret_cast<const char*>(map.values.data()),
              static_cast<std::streamsize>(map.values.size() * sizeof(float)));
    if (!out) throw IoError("short write on encoding map: " + path);
}

EncodingMap read_emap(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open encoding map: " + path);
    std::string line;
    if (!std::getline(in, line)) throw IoError("cannot read encoding map header: " + path);
    json hdr = json::parse(line, nullptr, false);
    if (hdr.is_discarded()) throw IoError("encoding map header is not valid JSON: " + path);
    EncodingMap map;
    map.rows = hdr.at("rows").get<int>();
    map.cols = hdr.at("cols").get<int>();
    map.artery_id = hdr.value("artery_id", "");
    if (map.rows <= 0 || map.cols <= 0) throw IoError("bad encoding map dimensions: " + path);
    map.values.resize(static_cast<std::size_t>(map.rows) * map.cols);
    in.read(reinterpret_cast<char*>(map.values.data()),
            static_cast<std::streamsize>(map.values.size() * sizeof(float)));
    if (static_cast<std::size_t>(in.gcount()) != map.values.size() * sizeof(float))
        throw IoError("truncated encoding map block: " + path);
    return map;
}

Vcae3dModel build_vcae3d(const Vcae3dConfig& config, std::uint64_t init_seed) {
    if (config.latent <= 0) throw ConfigError("vcae3d latent must be positive");
    if (config.window_depth < 1) throw ConfigError("vcae3d window depth must be positive");
    const int c1 = scaled(16, config.width_scale);
    const int c2 = scaled(32, config.width_scale);
    const int c3 = scaled(32, config.width_scale);
    const int hidden = scaled(128, config.width_scale);
    const int d = config.window_depth;
    const int flat = c3 * 10 * 10 * d;

    Vcae3dModel model;
    model.config = config;

    Stack<float>& enc = model.net.trunk;
    enc.set_input_shape({1, 40, 40, d});
    enc.add(ConvNd<float>::same(3, 1, c1, 3));
    enc.add(std::make_unique<BatchNorm<float>>(c1));
    enc.add(std::make_unique<ReLU<float>>());
    enc.add(std::make_unique<MaxPool<float>>(3, std::vector<int>{2, 2, 1}));
    enc.add(ConvNd<float>::same(3, c1, c2, 3));
    enc.add(std::make_unique<BatchNorm<float>>(c2));
    enc.add(std::make_unique<ReLU<float>>());
    enc.add(std::make_unique<MaxPool<float>>(3, std::vector<int>{2, 2, 1}));
    enc.add(ConvNd<float>::same(3, c2, c3, 3));
    enc.add(std::make_unique<BatchNorm<float>>(c3));
    enc.add(std::make_unique<ReLU<float>>());
    enc.add(std::make_unique<FullyConnected<float>>(flat, hidden));
    enc.add(std::make_unique<ReLU<float>>());

    model.net.mu_head = std::make_unique<FullyConnected<float>>(hidden, config.latent);
    model.net.logvar_head = std::make_unique<FullyConnected<float>>(hidden, config.latent);

    Stack<float>& dec = model.net.decoder;
    dec.set_input_shape({config.latent});
    dec.add(std::make_unique<FullyConnected<float>>(config.latent, hidden));
    dec.add(std::make_unique<ReLU<float>>());
    dec.add(std::make_unique<FullyConnected<float>>(hidden, flat));
    dec.add(std::make_unique<ReLU<float>>());
    dec.add(std::make_unique<Reshape<float>>(Shape{c3, 10, 10, d}));
    dec.add(ConvNd<float>::same(3, c3, c2, 3));
    dec.add(std::make_unique<BatchNorm<float>>(c2));
    dec.add(std::make_unique<ReLU<float>>());
    dec.add(std::make_unique<Upsample<float>>(3, std::vector<int>{2, 2, 1}));
    dec.add(ConvNd<float>::same(3, c2, c1, 3));
    dec.add(std::make_unique<BatchNorm<float>>(c1));
    dec.add(std::make_unique<ReLU<float>>());
    dec.add(std::make_unique<Upsample<float>>(3, std::vector<int>{2, 2, 1}));
    dec.add(ConvNd<float>::same(3, c1, 1, 3));  // output layer, no activation

    Rng rng(init_seed);
    model.net.trunk.init_params(rng);
    model.net.mu_head->init_params(rng);
    model.net.logvar_head->init_params(rng);
    model.net.decoder.init_params(rng);
    return model;
}

Tensor extract_window(const Vcae3dModel& model, const MprVolume& mpr, int index) {
    const int d = model.config.window_depth;
    const int half = d / 2;
    if (index < 0 || index >= mpr.length)
        throw ConfigError("window index outside artery length");
    Tensor w({1, 1, MprVolume::kCross, MprVolume::kCross, d});
    for (int dz = 0; dz < d; ++dz) {
        // Replicate padding at the artery ends.
        const int s = std::clamp(index - half + dz, 0, mpr.length - 1);
        for (int v = 0; v < MprVolume::kCross; ++v)
            for (int u = 0; u < MprVolume::kCross; ++u)
                w[static_cast<std::size_t>(u) +
                  MprVolume::kCross *
                      (static_cast<std::size_t>(v) +
                       static_cast<std::size_t>(MprVolume::kCross) * static_cast<std::size_t>(dz))] =
                    model.normalize(mpr.at(u, v, s));
    }
    return w;
}

std::vector<float> encode_window(Vcae3dModel& model, const Tensor& window) {
    const Shape want{1, 1, 40, 40, model.config.window_depth};
    if (window.shape() != want)
        throw ConfigError("encode_window: expected shape " + shape_str(want) + ", got " +
                          shape_str(window.shape()));
    Tensor mu = model.net.encode(window);
    return std::vector<float>(mu.data(), mu.data() + mu.numel());
}

namespace {

// Batched window tensor for points [first, first+count).
Tensor window_batch(const Vcae3dModel& model, const MprVolume& mpr, int first, int count) {
    const int d = model.config.window_depth;
    const int half = d / 2;
    Tensor batch({count, 1, MprVolume::kCross, MprVolume::kCross, d});
    const std::size_t slab = static_cast<std::size_t>(MprVolume::kCross) * MprVolume::kCross * d;
    for (int n = 0; n < count; ++n) {
        float* dst = batch.data() + static_cast<std::size_t>(n) * slab;
        const int center = first + n;
        for (int dz = 0; dz < d; ++dz) {
            const int s = std::clamp(center - half + dz, 0, mpr.length - 1);
            for (int v = 0; v < MprVolume::kCross; ++v)
                for (int u = 0; u < MprVolume::kCross; ++u)
                    dst[static_cast<std::size_t>(u) +
                        MprVolume::kCross * (static_cast<std::size_t>(v) +
                                             static_cast<std::size_t>(MprVolume::kCross) *
                                                 static_cast<std::size_t>(dz))] =
                        model.normalize(mpr.at(u, v, s));
        }
    }
    return batch;
}

}  // namespace

EncodingMap encode_artery(Vcae3dModel& model, const MprVolume& mpr) {
    if (mpr.length < 1) throw ConfigError("encode_artery: empty MPR");
    EncodingMap map;
    map.rows = model.config.latent;
    map.cols = mpr.length;
    map.artery_id = mpr.artery_id;
    map.values.assign(static_cast<std::size_t>(map.rows) * map.cols, 0.f);

    for (int first = 0; first < mpr.length; first += kEncodeChunk) {
        const int count = std::min(kEncodeChunk, mpr.length - first);
        Tensor mu = model.net.encode(window_batch(model, mpr, first, count));
        for (int n = 0; n < count; ++n)
            for (int r = 0; r < map.rows; ++r)
                map.at(r, first + n) = mu[static_cast<std::size_t>(n) * map.rows + r];
    }
    return map;
}

MprVolume reconstruct_from_map(Vcae3dModel& model, const EncodingMap& map,
                               const MprVolume& like) {
    if (map.rows != model.config.latent)
        throw ConfigError("reconstruct_from_map: latent dimension mismatch");
    if (map.cols != like.length)
        throw ConfigError("reconstruct_from_map: column count does not match MPR length");
    MprVolume out = like;  // copies geometry and shape
    const int d = model.config.window_depth;
    const int mid = d / 2;
    const std::size_t slab = static_cast<std::size_t>(MprVolume::kCross) * MprVolume::kCross * d;

    for (int first = 0; first < map.cols; first += kEncodeChunk) {
        const int count = std::min(kEncodeChunk, map.cols - first);
        Tensor z({count, model.config.latent});
        for (int n = 0; n < count; ++n)
            for (int r = 0; r < map.rows; ++r)
                z[static_cast<std::size_t>(n) * map.rows + r] = map.at(r, first + n);
        Tensor rec = model.net.decode(z);
        for (int n = 0; n < count; ++n) {
            const float* w = rec.data() + static_cast<std::size_t>(n) * slab;
            for (int v = 0; v < MprVolume::kCross; ++v)
                for (int u = 0; u < MprVolume::kCross; ++u)
                    out.at(u, v, first + n) = model.denormalize(
                        w[static_cast<std::size_t>(u) +
                          MprVolume::kCross * (static_cast<std::size_t>(v) +
                                               static_cast<std::size_t>(MprVolume::kCross) *
                                                   static_cast<std::size_t>(mid))]);
        }
    }
    return out;
}

MprVolume reconstruct_artery(Vcae3dModel& model, const MprVolume& mpr) {
    const EncodingMap map = encode_artery(model, mpr);
    return reconstruct_from_map(model, map, mpr);
}

namespace {

double eval_vcae_loss(Vcae3dModel& model, const Tensor& windows, double kl_weight) {
    Tensor h = model.net.trunk.forward(windows, Mode::Infer, nullptr);
    Tensor mu = model.net.mu_head->forward(h, Mode::Infer, nullptr);
    Tensor lv = model.net.logvar_head->forward(h, Mode::Infer, nullptr);
    for (std::size_t i = 0; i < lv.numel(); ++i)
        lv[i] = std::clamp(lv[i], static_cast<float>(-kLogVarClamp),
                           static_cast<float>(kLogVarClamp));
    Tensor rec = model.net.decoder.forward(mu, Mode::Infer, nullptr);
    return mse_loss(rec, windows) + kl_weight * kl_loss(mu, lv);
}

}  // namespace

Vcae3dModel train_vcae3d(const std::vector<MprVolume>& train_mprs,
                         const std::vector<MprVolume>& val_mprs,
                         const Vcae3dTrainOptions& options, TrainResult* result) {
    if (train_mprs.empty() || val_mprs.empty())
        throw ConfigError("train_vcae3d: empty training or validation set");
    options.base.validate();

    Vcae3dModel model = build_vcae3d(options.arch, derive_seed(options.base.rng_seed, 1));
    const std::size_t window_elems = static_cast<std::size_t>(MprVolume::kCross) *
                                     MprVolume::kCross * options.arch.window_depth;
    const double klw = options.kl_weight >= 0 ? options.kl_weight
                                              : 1.0 / static_cast<double>(window_elems);

    Rng sample_rng(derive_seed(options.base.rng_seed, 2));
    Rng train_rng(derive_seed(options.base.rng_seed, 3));

    // Fixed validation windows.
    std::vector<Tensor> val_batches;
    {
        std::vector<Tensor> windows;
        for (int i = 0; i < options.val_windows; ++i) {
            const auto& mpr = val_mprs[sample_rng.below(val_mprs.size())];
            const int idx = static_cast<int>(sample_rng.below(static_cast<std::uint64_t>(mpr.length)));
            windows.push_back(extract_window(model, mpr, idx).sample(0));
        }
        for (std::size_t i = 0; i < windows.size(); i += 32) {
            const std::size_t n = std::min<std::size_t>(32, windows.size() - i);
            val_batches.push_back(batch_of(std::vector<Tensor>(windows.begin() + static_cast<std::ptrdiff_t>(i),
                                                               windows.begin() + static_cast<std::ptrdiff_t>(i + n))));
        }
    }
    auto val_loss = [&]() {
        double total = 0;
        std::size_t count = 0;
        for (const Tensor& b : val_batches) {
            total += eval_vcae_loss(model, b, klw) * b.dim(0);
            count += static_cast<std::size_t>(b.dim(0));
        }
        return total / static_cast<double>(count);
    };

    Adam opt(options.base);
    EarlyStopper stopper(options.base.patience);
    TrainResult res;
    std::vector<Tensor> best = snapshot_tensors(model.net.all_tensors());

    const int steps = std::max(1, options.windows_per_epoch / options.base.batch_size);
    for (int epoch = 1; epoch <= options.base.max_epochs; ++epoch) {
        double train_total = 0;
        for (int step = 0; step < steps; ++step) {
            std::vector<Tensor> windows;
            for (int b = 0; b < options.base.batch_size; ++b) {
                const auto& mpr = train_mprs[sample_rng.below(train_mprs.size())];
                const int idx =
                    static_cast<int>(sample_rng.below(static_cast<std::uint64_t>(mpr.length)));
                windows.push_back(extract_window(model, mpr, idx).sample(0));
            }
            Tensor batch = batch_of(windows);

            model.net.zero_grad();
            VaeForward<float> f = model.net.forward_train(batch, train_rng);
            const double mse = mse_loss(f.recon, batch);
            const double kl = kl_loss(f.mu, f.log_var);
            train_total += mse + klw * kl;

            Tensor d_recon = mse_loss_grad(f.recon, batch);
            Tensor d_mu, d_lv;
            kl_loss_grad(f.mu, f.log_var, d_mu, d_lv, klw);
            model.net.backward(f, d_recon, d_mu, d_lv);
            opt.step(model.net.params());
        }

        const double vl = val_loss();
        res.curve.push_back({epoch, train_total / steps, vl});
        res.epochs_run = epoch;
        if (stopper.observe(vl)) best = snapshot_tensors(model.net.all_tensors());
        if (stopper.should_stop()) break;
    }

    restore_tensors(model.net.all_tensors(), best);
    res.best_val_loss = stopper.best();
    res.best_epoch = stopper.best_epoch();
    if (result) *result = res;

    // Frozen from here on.
    model.net.set_trainable(false);
    model.net.trunk.clear_caches();
    model.net.decoder.clear_caches();
    return model;
}

void save_vcae3d(const std::string& path, Vcae3dModel& model, const BundleMeta& meta) {
    BundleMeta m = meta;
    m.role = "vcae3d";
    m.extras["latent"] = model.config.latent;
    m.extras["window_depth"] = model.config.window_depth;
    m.extras["width_scale"] = model.config.width_scale;
    m.extras["hu_lo"] = model.hu_lo;
    m.extras["hu_hi"] = model.hu_hi;
    save_vae_bundle(path, model.net, m);
}

Vcae3dModel load_vcae3d(const std::string& path, BundleMeta* meta_out) {
    BundleMeta meta;
    Vcae3dModel model;
    model.net = load_vae_bundle(path, &meta);
    if (meta.role != "vcae3d") throw IoError("bundle role is not vcae3d: " + path);
    model.config.latent = meta.extras.at("latent").get<int>();
    model.config.window_depth = meta.extras.at("window_depth").get<int>();
    model.config.width_scale = meta.extras.value("width_scale", 1.0);
    model.hu_lo = meta.extras.at("hu_lo").get<double>();
    model.hu_hi = meta.extras.at("hu_hi").get<double>();
    model.net.set_trainable(false);
    if (meta_out) *meta_out = meta;
    return model;
}

}  // namespace artenc
