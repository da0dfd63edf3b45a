#pragma once

#include <string>
#include <vector>

#include "artenc/bundle.hpp"
#include "artenc/net.hpp"
#include "artenc/optim.hpp"
#include "artenc/vcae3d.hpp"

namespace artenc {

// Fixed-length artery descriptor: in_rows x bottleneck values in
// (sequence 0..in_rows-1) x (unit 0..bottleneck-1) order.
struct ArteryFeatureVector {
    std::string artery_id;
    std::string patient_id;
    int original_length = 0;
    std::vector<float> values;
};

struct Cae1dConfig {
    int in_rows = 16;     // sequences per artery (stage-1 latent)
    int bottleneck = 64;  // layer e width
    int max_len = 800;
    double width_scale = 1.0;
};

// Shared-weight 1D convolutional autoencoder: one weight set applied to
// each of the in_rows sequences independently. Sequences are
// standardized per row (training-cohort statistics stored here) and
// zero-padded to max_len.
struct Cae1dModel {
    Stack<float> encoder;  // [1, max_len] -> [bottleneck]
    Stack<float> decoder;  // [bottleneck] -> [1, max_len]
    Cae1dConfig config;
    std::vector<float> row_mean;  // per sequence row
    std::vector<float> row_sd;

    std::uint64_t weights_hash() {
        auto t = encoder.params();
        for (auto& p : decoder.params()) t.push_back(p);
        for (auto& p : encoder.state_tensors()) t.push_back(p);
        for (auto& p : decoder.state_tensors()) t.push_back(p);
        return param_hash(t);
    }
};

Cae1dModel build_cae1d(const Cae1dConfig& config, std::uint64_t init_seed);

// Right-pad with zeros to max_len; mask is 1 on real columns.
struct PaddedSequences {
    int rows = 0;
    int real_cols = 0;
    int max_len = 0;
    std::vector<float> data;  // rows x max_len, row-major
    std::vector<float> mask;  // 1 x max_len
};

PaddedSequences pad_sequences(const EncodingMap& map, int max_len = 800);
EncodingMap unpad_sequences(const PaddedSequences& padded, const std::string& artery_id = "");

struct Cae1dTrainOptions {
    TrainConfig base;
    Cae1dConfig arch;
};

// Masked MSE over all sequences with shared weights; padded columns
// contribute nothing to the loss or its gradients.
Cae1dModel train_cae1d(const std::vector<EncodingMap>& train_maps,
                       const std::vector<EncodingMap>& val_maps,
                       const Cae1dTrainOptions& options, TrainResult* result = nullptr);

// Shared encoder applied to each standardized padded sequence; layer e
// outputs concatenated in fixed row order.
ArteryFeatureVector encode_features(Cae1dModel& model, const EncodingMap& map);

// Full round trip through the 1D stage: encode rows, decode rows,
// unstandardize, unpad back to the original length.
EncodingMap roundtrip_map(Cae1dModel& model, const EncodingMap& map);

// Four-step inference: 3D encode -> 1D encode -> 1D decode -> 3D decode.
MprVolume decode_roundtrip(Vcae3dModel& vcae, Cae1dModel& cae, const MprVolume& mpr);

void save_cae1d(const std::string& path, Cae1dModel& model, const BundleMeta& meta);
Cae1dModel load_cae1d(const std::string& path, BundleMeta* meta_out = nullptr);

// Feature table: artery_id,patient_id,length,f0..f{n-1}.
void write_features_csv(const std::string& path, const std::vector<ArteryFeatureVector>& features);
std::vector<ArteryFeatureVector> read_features_csv(const std::string& path);

}  // namespace artenc
