#pragma once

#include <string>

#include <json.hpp>

#include "artenc/net.hpp"

namespace artenc {

// Model bundle: 8-byte magic, little-endian u64 header length, JSON
// header, then raw little-endian float32 parameter blocks in header
// order. Running statistics are persisted alongside the trainable
// parameters.
inline constexpr char kBundleMagic[8] = {'A', 'R', 'T', 'E', 'N', 'C', 'B', '\n'};
inline constexpr int kBundleVersion = 1;

struct BundleMeta {
    std::string role;
    nlohmann::ordered_json extras = nlohmann::ordered_json::object();
    nlohmann::ordered_json training = nlohmann::ordered_json::object();
    nlohmann::ordered_json provenance = nlohmann::ordered_json::object();
};

void save_stack_bundle(const std::string& path, Stack<float>& stack, const BundleMeta& meta);
Stack<float> load_stack_bundle(const std::string& path, BundleMeta* meta_out = nullptr);

void save_vae_bundle(const std::string& path, VaeNet<float>& net, const BundleMeta& meta);
VaeNet<float> load_vae_bundle(const std::string& path, BundleMeta* meta_out = nullptr);

// Reads only the JSON header (role checks, provenance audits).
nlohmann::json read_bundle_header(const std::string& path);

}  // namespace artenc
