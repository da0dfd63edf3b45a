#include "artenc/cae1d.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "artenc/losses.hpp"

namespace artenc {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

int scaled(int base, double scale) {
    return std::max(1, static_cast<int>(std::lround(base * scale)));
}

// Encoder length after four stride-2 convolutions (k=5, p=2):
// each halves by ceil(n / 2).
int coarse_len(int max_len) {
    int n = max_len;
    for (int i = 0; i < 4; ++i) n = (n + 1) / 2;
    return n;
}

}  // namespace

Cae1dModel build_cae1d(const Cae1dConfig& config, std::uint64_t init_seed) {
    if (config.in_rows <= 0 || config.bottleneck <= 0 || config.max_len <= 0)
        throw ConfigError("cae1d config values must be positive");
    if (config.max_len % 16 != 0)
        throw ConfigError("cae1d max_len must be divisible by 16 for the upsampling path");
    const int c1 = scaled(16, config.width_scale);
    const int c2 = scaled(32, config.width_scale);
    const int coarse = coarse_len(config.max_len);
    const int flat = c2 * coarse;

    Cae1dModel model;
    model.config = config;
    model.row_mean.assign(static_cast<std::size_t>(config.in_rows), 0.f);
    model.row_sd.assign(static_cast<std::size_t>(config.in_rows), 1.f);

    auto strided = [](int in_c, int out_c) {
        return std::make_unique<ConvNd<float>>(1, in_c, out_c, std::vector<int>{5},
                                               std::vector<int>{2}, std::vector<int>{2});
    };
    auto same = [](int in_c, int out_c) {
        return ConvNd<float>::same(1, in_c, out_c, 5);
    };

    Stack<float>& enc = model.encoder;
    enc.set_input_shape({1, config.max_len});
    enc.add(strided(1, c1));
    enc.add(std::make_unique<Elu<float>>());
    enc.add(strided(c1, c2));
    enc.add(std::make_unique<Elu<float>>());
    enc.add(strided(c2, c2));
    enc.add(std::make_unique<Elu<float>>());
    enc.add(strided(c2, c2));
    enc.add(std::make_unique<Elu<float>>());
    enc.add(std::make_unique<FullyConnected<float>>(flat, config.bottleneck));  // layer e

    Stack<float>& dec = model.decoder;
    dec.set_input_shape({config.bottleneck});
    dec.add(std::make_unique<FullyConnected<float>>(config.bottleneck, flat));
    dec.add(std::make_unique<Elu<float>>());
    dec.add(std::make_unique<Reshape<float>>(Shape{c2, coarse}));
    dec.add(std::make_unique<Upsample<float>>(1, std::vector<int>{2}));
    dec.add(same(c2, c2));
    dec.add(std::make_unique<Elu<float>>());
    dec.add(std::make_unique<Upsample<float>>(1, std::vector<int>{2}));
    dec.add(same(c2, c2));
    dec.add(std::make_unique<Elu<float>>());
    dec.add(std::make_unique<Upsample<float>>(1, std::vector<int>{2}));
    dec.add(same(c2, c1));
    dec.add(std::make_unique<Elu<float>>());
    dec.add(std::make_unique<Upsample<float>>(1, std::vector<int>{2}));
    dec.add(same(c1, 1));  // output layer, no activation

    Rng rng(init_seed);
    model.encoder.init_params(rng);
    model.decoder.init_params(rng);
    return model;
}

PaddedSequences pad_sequences(const EncodingMap& map, int max_len) {
    if (map.cols > max_len)
        throw ConfigError("pad_sequences: sequence length " + std::to_string(map.cols) +
                          " exceeds max_len " + std::to_string(max_len));
    PaddedSequences out;
    out.rows = map.rows;
    out.real_cols = map.cols;
    out.max_len = max_len;
    out.data.assign(static_cast<std::size_t>(map.rows) * max_len, 0.f);
    out.mask.assign(static_cast<std::size_t>(max_len), 0.f);
    for (int r = 0; r < map.rows; ++r)
        for (int c = 0; c < map.cols; ++c)
            out.data[static_cast<std::size_t>(r) * max_len + c] = map.at(r, c);
    for (int c = 0; c < map.cols; ++c) out.mask[static_cast<std::size_t>(c)] = 1.f;
    return out;
}

EncodingMap unpad_sequences(const PaddedSequences& padded, const std::string& artery_id) {
    EncodingMap map;
    map.rows = padded.rows;
    map.cols = padded.real_cols;
    map.artery_id = artery_id;
    map.values.resize(static_cast<std::size_t>(map.rows) * map.cols);
    for (int r = 0; r < map.rows; ++r)
        for (int c = 0; c < map.cols; ++c)
            map.at(r, c) = padded.data[static_cast<std::size_t>(r) * padded.max_len + c];
    return map;
}

namespace {

// Standardized, padded row batch [rows, 1, max_len] for one artery, plus
// the replicated mask.
void artery_row_batch(const Cae1dModel& model, const EncodingMap& map, Tensor& rows,
                      Tensor& mask) {
    if (map.rows != model.config.in_rows)
        throw ConfigError("encoding map row count does not match the model");
    const int ml = model.config.max_len;
    const PaddedSequences padded = pad_sequences(map, ml);
    rows = Tensor({map.rows, 1, ml});
    mask = Tensor({map.rows, 1, ml});
    for (int r = 0; r < map.rows; ++r) {
        const float mean = model.row_mean[static_cast<std::size_t>(r)];
        const float sd = model.row_sd[static_cast<std::size_t>(r)];
        for (int c = 0; c < ml; ++c) {
            const bool real = c < padded.real_cols;
            rows[static_cast<std::size_t>(r) * ml + c] =
                real ? (padded.data[static_cast<std::size_t>(r) * ml + c] - mean) / sd : 0.f;
            mask[static_cast<std::size_t>(r) * ml + c] = real ? 1.f : 0.f;
        }
    }
}

void compute_row_stats(const std::vector<EncodingMap>& maps, Cae1dModel& model) {
    const int rows = model.config.in_rows;
    std::vector<double> sum(static_cast<std::size_t>(rows), 0.0);
    std::vector<double> sq(static_cast<std::size_t>(rows), 0.0);
    std::vector<std::size_t> count(static_cast<std::size_t>(rows), 0);
    for (const EncodingMap& m : maps) {
        if (m.rows != rows) throw ConfigError("encoding map row count mismatch in training set");
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < m.cols; ++c) {
                const double v = m.at(r, c);
                sum[static_cast<std::size_t>(r)] += v;
                sq[static_cast<std::size_t>(r)] += v * v;
                ++count[static_cast<std::size_t>(r)];
            }
    }
    for (int r = 0; r < rows; ++r) {
        const double n = static_cast<double>(count[static_cast<std::size_t>(r)]);
        const double mean = sum[static_cast<std::size_t>(r)] / n;
        const double var = std::max(sq[static_cast<std::size_t>(r)] / n - mean * mean, 0.0);
        model.row_mean[static_cast<std::size_t>(r)] = static_cast<float>(mean);
        model.row_sd[static_cast<std::size_t>(r)] =
            static_cast<float>(var > 1e-12 ? std::sqrt(var) : 1.0);
    }
}

double eval_cae_loss(Cae1dModel& model, const std::vector<EncodingMap>& maps) {
    double total = 0;
    for (const EncodingMap& m : maps) {
        Tensor rows, mask;
        artery_row_batch(model, m, rows, mask);
        Tensor z = model.encoder.forward(rows, Mode::Infer, nullptr);
        Tensor rec = model.decoder.forward(z, Mode::Infer, nullptr);
        total += masked_mse_loss(rec, rows, mask);
    }
    return total / static_cast<double>(maps.size());
}

}  // namespace

Cae1dModel train_cae1d(const std::vector<EncodingMap>& train_maps,
                       const std::vector<EncodingMap>& val_maps,
                       const Cae1dTrainOptions& options, TrainResult* result) {
    if (train_maps.empty() || val_maps.empty())
        throw ConfigError("train_cae1d: empty training or validation set");
    options.base.validate();

    Cae1dModel model = build_cae1d(options.arch, derive_seed(options.base.rng_seed, 11));
    compute_row_stats(train_maps, model);

    Adam opt(options.base);
    EarlyStopper stopper(options.base.patience);
    TrainResult res;

    auto tensors = [&]() {
        auto t = model.encoder.params();
        for (auto& p : model.decoder.params()) t.push_back(p);
        for (auto& p : model.encoder.state_tensors()) t.push_back(p);
        for (auto& p : model.decoder.state_tensors()) t.push_back(p);
        return t;
    };
    std::vector<Tensor> best = snapshot_tensors(tensors());

    Rng order_rng(derive_seed(options.base.rng_seed, 12));
    Rng train_rng(derive_seed(options.base.rng_seed, 13));
    std::vector<std::size_t> order(train_maps.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 1; epoch <= options.base.max_epochs; ++epoch) {
        order_rng.shuffle(order.begin(), order.end());
        double train_total = 0;
        int batches = 0;
        for (std::size_t off = 0; off < order.size(); off += static_cast<std::size_t>(options.base.batch_size)) {
            const std::size_t n =
                std::min<std::size_t>(static_cast<std::size_t>(options.base.batch_size),
                                      order.size() - off);
            // One batch = n artery sequence-sets, 16 shared-weight rows each.
            std::vector<Tensor> row_list, mask_list;
            for (std::size_t b = 0; b < n; ++b) {
                Tensor rows, mask;
                artery_row_batch(model, train_maps[order[off + b]], rows, mask);
                for (int r = 0; r < rows.dim(0); ++r) {
                    row_list.push_back(rows.sample(r));
                    mask_list.push_back(mask.sample(r));
                }
            }
            Tensor rows = batch_of(row_list);
            Tensor mask = batch_of(mask_list);

            model.encoder.zero_grad();
            model.decoder.zero_grad();
            Tensor z = model.encoder.forward(rows, Mode::Train, &train_rng);
            Tensor rec = model.decoder.forward(z, Mode::Train, &train_rng);
            train_total += masked_mse_loss(rec, rows, mask);
            ++batches;
            Tensor dz = model.decoder.backward(masked_mse_loss_grad(rec, rows, mask));
            model.encoder.backward(dz);
            auto params = model.encoder.params();
            for (auto& p : model.decoder.params()) params.push_back(p);
            opt.step(params);
        }

        const double vl = eval_cae_loss(model, val_maps);
        res.curve.push_back({epoch, train_total / batches, vl});
        res.epochs_run = epoch;
        if (stopper.observe(vl)) best = snapshot_tensors(tensors());
        if (stopper.should_stop()) break;
    }

    restore_tensors(tensors(), best);
    res.best_val_loss = stopper.best();
    res.best_epoch = stopper.best_epoch();
    if (result) *result = res;

    model.encoder.set_trainable(false);
    model.decoder.set_trainable(false);
    model.encoder.clear_caches();
    model.decoder.clear_caches();
    return model;
}

ArteryFeatureVector encode_features(Cae1dModel& model, const EncodingMap& map) {
    Tensor rows, mask;
    artery_row_batch(model, map, rows, mask);
    Tensor z = model.encoder.forward(rows, Mode::Infer, nullptr);
    ArteryFeatureVector out;
    out.artery_id = map.artery_id;
    out.original_length = map.cols;
    out.values.assign(z.data(), z.data() + z.numel());  // row 0..15 blocks in order
    return out;
}

EncodingMap roundtrip_map(Cae1dModel& model, const EncodingMap& map) {
    Tensor rows, mask;
    artery_row_batch(model, map, rows, mask);
    Tensor z = model.encoder.forward(rows, Mode::Infer, nullptr);
    Tensor rec = model.decoder.forward(z, Mode::Infer, nullptr);

    const int ml = model.config.max_len;
    EncodingMap out;
    out.rows = map.rows;
    out.cols = map.cols;
    out.artery_id = map.artery_id;
    out.values.resize(static_cast<std::size_t>(out.rows) * out.cols);
    for (int r = 0; r < out.rows; ++r) {
        const float mean = model.row_mean[static_cast<std::size_t>(r)];
        const float sd = model.row_sd[static_cast<std::size_t>(r)];
        for (int c = 0; c < out.cols; ++c)
            out.at(r, c) = rec[static_cast<std::size_t>(r) * ml + c] * sd + mean;
    }
    return out;
}

MprVolume decode_roundtrip(Vcae3dModel& vcae, Cae1dModel& cae, const MprVolume& mpr) {
    const EncodingMap map = encode_artery(vcae, mpr);
    const EncodingMap rec = roundtrip_map(cae, map);
    return reconstruct_from_map(vcae, rec, mpr);
}

void save_cae1d(const std::string& path, Cae1dModel& model, const BundleMeta& meta) {
    // Stored as one stack (encoder then decoder) with the split index and
    // normalization constants in extras.
    BundleMeta m = meta;
    if (m.role.empty()) m.role = "cae1d";
    m.extras["in_rows"] = model.config.in_rows;
    m.extras["bottleneck"] = model.config.bottleneck;
    m.extras["max_len"] = model.config.max_len;
    m.extras["width_scale"] = model.config.width_scale;
    m.extras["row_mean"] = model.row_mean;
    m.extras["row_sd"] = model.row_sd;

    ordered_json hdr;
    hdr["format"] = "artenc-bundle";
    hdr["format_version"] = kBundleVersion;
    hdr["role"] = m.role;
    hdr["graph"] = "cae";
    hdr["extras"] = m.extras;
    hdr["training"] = m.training;
    hdr["provenance"] = m.provenance;

    // Reuse the stack bundle writer by saving encoder and decoder into
    // one temporary container file layout: two stacks back to back.
    // Simpler: persist as two stack bundles side by side is awkward, so
    // write a combined header here.
    ordered_json enc_layers = ordered_json::array();
    for (std::size_t i = 0; i < model.encoder.size(); ++i) {
        ordered_json lj;
        lj["kind"] = model.encoder.layer(i).kind();
        model.encoder.layer(i).hyper_to_json(lj);
        enc_layers.push_back(lj);
    }
    ordered_json dec_layers = ordered_json::array();
    for (std::size_t i = 0; i < model.decoder.size(); ++i) {
        ordered_json lj;
        lj["kind"] = model.decoder.layer(i).kind();
        model.decoder.layer(i).hyper_to_json(lj);
        dec_layers.push_back(lj);
    }
    hdr["encoder_input_shape"] = model.encoder.input_shape();
    hdr["encoder_layers"] = enc_layers;
    hdr["decoder_input_shape"] = model.decoder.input_shape();
    hdr["decoder_layers"] = dec_layers;

    std::vector<ParamRef<float>> tensors;
    auto push_all = [&](Stack<float>& s, const std::string& prefix) {
        for (auto& p : s.params()) {
            p.name = prefix + p.name;
            tensors.push_back(p);
        }
        for (auto& p : s.state_tensors()) {
            p.name = prefix + p.name;
            tensors.push_back(p);
        }
    };
    push_all(model.encoder, "encoder.");
    push_all(model.decoder, "decoder.");

    ordered_json plist = ordered_json::array();
    for (const auto& p : tensors) {
        ordered_json pj;
        pj["name"] = p.name;
        pj["shape"] = p.value->shape();
        plist.push_back(pj);
    }
    hdr["params"] = plist;

    const std::string hs = hdr.dump();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write bundle: " + path);
    out.write(kBundleMagic, 8);
    const std::uint64_t hlen = hs.size();
    out.write(reinterpret_cast<const char*>(&hlen), 8);
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& p : tensors)
        out.write(reinterpret_cast<const char*>(p.value->data()),
                  static_cast<std::streamsize>(p.value->numel() * sizeof(float)));
    if (!out) throw IoError("short write on bundle: " + path);
}

Cae1dModel load_cae1d(const std::string& path, BundleMeta* meta_out) {
    json hdr = read_bundle_header(path);
    if (hdr.value("graph", "") != "cae") throw IoError("bundle is not a cae graph: " + path);

    Cae1dModel model;
    model.config.in_rows = hdr.at("extras").at("in_rows").get<int>();
    model.config.bottleneck = hdr.at("extras").at("bottleneck").get<int>();
    model.config.max_len = hdr.at("extras").at("max_len").get<int>();
    model.config.width_scale = hdr.at("extras").value("width_scale", 1.0);
    model.row_mean = hdr.at("extras").at("row_mean").get<std::vector<float>>();
    model.row_sd = hdr.at("extras").at("row_sd").get<std::vector<float>>();

    model.encoder.set_input_shape(hdr.at("encoder_input_shape").get<Shape>());
    for (const auto& lj : hdr.at("encoder_layers")) model.encoder.add(layer_from_json<float>(lj));
    model.decoder.set_input_shape(hdr.at("decoder_input_shape").get<Shape>());
    for (const auto& lj : hdr.at("decoder_layers")) model.decoder.add(layer_from_json<float>(lj));

    std::vector<ParamRef<float>> tensors;
    for (auto& p : model.encoder.params()) tensors.push_back(p);
    for (auto& p : model.encoder.state_tensors()) tensors.push_back(p);
    for (auto& p : model.decoder.params()) tensors.push_back(p);
    for (auto& p : model.decoder.state_tensors()) tensors.push_back(p);
    // Order in the file is encoder params+state then decoder params+state,
    // matching push order in save_cae1d.
    std::ifstream in(path, std::ios::binary);
    char magic[8];
    in.read(magic, 8);
    std::uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), 8);
    in.seekg(static_cast<std::streamoff>(16 + hlen));
    const auto& plist = hdr.at("params");
    if (plist.size() != tensors.size()) throw IoError("bundle parameter count mismatch: " + path);
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        const Shape want = plist[i].at("shape").get<Shape>();
        if (want != tensors[i].value->shape())
            throw IoError("bundle parameter shape mismatch in " + path);
        in.read(reinterpret_cast<char*>(tensors[i].value->data()),
                static_cast<std::streamsize>(tensors[i].value->numel() * sizeof(float)));
        if (!in) throw IoError("truncated parameter block in " + path);
    }
    model.encoder.set_trainable(false);
    model.decoder.set_trainable(false);
    if (meta_out) {
        meta_out->role = hdr.value("role", "");
        if (hdr.contains("extras")) meta_out->extras = hdr.at("extras");
        if (hdr.contains("training")) meta_out->training = hdr.at("training");
        if (hdr.contains("provenance")) meta_out->provenance = hdr.at("provenance");
    }
    return model;
}

void write_features_csv(const std::string& path,
                        const std::vector<ArteryFeatureVector>& features) {
    if (features.empty()) throw ConfigError("no features to write");
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write features: " + path);
    const std::size_t width = features.front().values.size();
    out << "artery_id,patient_id,length";
    for (std::size_t i = 0; i < width; ++i) out << ",f" << i;
    out << "\n";
    out.precision(9);
    for (const auto& f : features) {
        if (f.values.size() != width) throw ConfigError("ragged feature vectors");
        out << f.artery_id << ',' << f.patient_id << ',' << f.original_length;
        for (float v : f.values) out << ',' << v;
        out << "\n";
    }
    if (!out) throw IoError("short write on features: " + path);
}

std::vector<ArteryFeatureVector> read_features_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open features: " + path);
    std::string line;
    if (!std::getline(in, line) || line.rfind("artery_id,patient_id,length", 0) != 0)
        throw IoError("features CSV has an unexpected header: " + path);
    std::vector<ArteryFeatureVector> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string tok;
        ArteryFeatureVector f;
        if (!std::getline(ss, f.artery_id, ',') || !std::getline(ss, f.patient_id, ','))
            throw IoError("malformed feature row: " + path);
        if (!std::getline(ss, tok, ',')) throw IoError("malformed feature row: " + path);
        f.original_length = std::stoi(tok);
        while (std::getline(ss, tok, ',')) f.values.push_back(std::stof(tok));
        out.push_back(std::move(f));
    }
    return out;
}

}  // namespace artenc
