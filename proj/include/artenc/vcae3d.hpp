#pragma once

#include <string>
#include <vector>

#include "artenc/bundle.hpp"
#include "artenc/net.hpp"
#include "artenc/optim.hpp"
#include "artenc/volume.hpp"

namespace artenc {

// Per-point latent codes along an artery: `latent` rows by L columns,
// column i belonging to centerline point i.
struct EncodingMap {
    int rows = 0;
    int cols = 0;
    std::vector<float> values;  // row-major [rows][cols]
    std::string artery_id;

    float& at(int r, int c) { return values[static_cast<std::size_t>(r) * cols + c]; }
    float at(int r, int c) const { return values[static_cast<std::size_t>(r) * cols + c]; }
};

void write_emap(const std::string& path, const EncodingMap& map);
EncodingMap read_emap(const std::string& path);

struct Vcae3dConfig {
    int latent = 16;
    int window_depth = 5;      // slices per window: 5, 13 or 23
    double width_scale = 1.0;  // scales kernel counts and the hidden FC
};

// Local spatial encoder: variational 3D convolutional autoencoder over
// 40x40xD windows sliding along the artery with stride 1.
struct Vcae3dModel {
    VaeNet<float> net;
    Vcae3dConfig config;
    // HU window mapped onto [0, 1]; values outside are clamped.
    double hu_lo = -1000.0;
    double hu_hi = 1500.0;

    float normalize(float hu) const {
        const double y = (static_cast<double>(hu) - hu_lo) / (hu_hi - hu_lo);
        return static_cast<float>(std::clamp(y, 0.0, 1.0));
    }
    float denormalize(float y) const {
        return static_cast<float>(static_cast<double>(y) * (hu_hi - hu_lo) + hu_lo);
    }

    std::uint64_t weights_hash() { return param_hash(net.all_tensors()); }
};

Vcae3dModel build_vcae3d(const Vcae3dConfig& config, std::uint64_t init_seed);

struct Vcae3dTrainOptions {
    TrainConfig base;
    Vcae3dConfig arch;
    // < 0 selects 1 / window-element-count, which reproduces the
    // sum-form reconstruction + KL objective up to a global scale.
    double kl_weight = -1.0;
    int windows_per_epoch = 2048;
    int val_windows = 256;
};

struct TrainResult {
    std::vector<TrainCurvePoint> curve;
    double best_val_loss = 0;
    int best_epoch = 0;
    int epochs_run = 0;
};

// Windows are randomly extracted along the training arteries each epoch;
// validation windows are fixed. Loss: reconstruction MSE plus
// kl_weight * KL, Adam, early stopping on the validation loss.
Vcae3dModel train_vcae3d(const std::vector<MprVolume>& train_mprs,
                         const std::vector<MprVolume>& val_mprs,
                         const Vcae3dTrainOptions& options, TrainResult* result = nullptr);

// Normalized window centered at point `index`, replicate-padded at the
// artery ends.
Tensor extract_window(const Vcae3dModel& model, const MprVolume& mpr, int index);

// mu of one normalized window (inference mode, no sampling).
std::vector<float> encode_window(Vcae3dModel& model, const Tensor& window);

// One latent column per centerline point; output is latent x L.
EncodingMap encode_artery(Vcae3dModel& model, const MprVolume& mpr);

// Decode each column and assemble the middle slice of every decoded
// window; values mapped back to HU.
MprVolume reconstruct_from_map(Vcae3dModel& model, const EncodingMap& map, const MprVolume& like);

MprVolume reconstruct_artery(Vcae3dModel& model, const MprVolume& mpr);

void save_vcae3d(const std::string& path, Vcae3dModel& model, const BundleMeta& meta);
Vcae3dModel load_vcae3d(const std::string& path, BundleMeta* meta_out = nullptr);

}  // namespace artenc
