#include "artenc/bundle.hpp"

#include <cstring>
#include <fstream>

namespace artenc {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

// Little-endian byte order is assumed; all supported targets are LE.
static_assert(sizeof(float) == 4);

void collect(Stack<float>& s, std::vector<ParamRef<float>>& out, const std::string& prefix) {
    for (std::size_t i = 0; i < s.size(); ++i) {
        auto push = [&](ParamRef<float> p, const char* role) {
            p.name = prefix + "layer" + std::to_string(i) + "." + s.layer(i).kind() + "." +
                     role + "." + p.name;
            out.push_back(p);
        };
        for (auto& p : s.layer(i).params()) push(p, "param");
        for (auto& p : s.layer(i).state_tensors()) push(p, "state");
    }
}

void collect_fc(FullyConnected<float>& fc, std::vector<ParamRef<float>>& out,
                const std::string& prefix) {
    for (auto& p : fc.params()) {
        p.name = prefix + "param." + p.name;
        out.push_back(p);
    }
}

ordered_json stack_layers_json(const Stack<float>& s) {
    ordered_json arr = ordered_json::array();
    for (std::size_t i = 0; i < s.size(); ++i) {
        ordered_json lj;
        lj["kind"] = s.layer(i).kind();
        s.layer(i).hyper_to_json(lj);
        arr.push_back(lj);
    }
    return arr;
}

Stack<float> stack_from_json(const json& layers, const Shape& input_shape) {
    Stack<float> s(input_shape);
    for (const auto& lj : layers) s.add(layer_from_json<float>(lj));
    return s;
}

ordered_json fc_json(const FullyConnected<float>& fc) {
    ordered_json j;
    j["kind"] = "fc";
    fc.hyper_to_json(j);
    return j;
}

void write_bundle(const std::string& path, const ordered_json& header,
                  const std::vector<ParamRef<float>>& tensors) {
    ordered_json hdr = header;
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

json read_header_stream(std::ifstream& in, const std::string& path) {
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kBundleMagic, 8) != 0)
        throw IoError("not a model bundle: " + path);
    std::uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), 8);
    if (!in || hlen == 0 || hlen > (1ULL << 30)) throw IoError("corrupt bundle header: " + path);
    std::string hs(hlen, '\0');
    in.read(hs.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw IoError("truncated bundle header: " + path);
    json hdr = json::parse(hs, nullptr, false);
    if (hdr.is_discarded()) throw IoError("bundle header is not valid JSON: " + path);
    return hdr;
}

void read_blocks(std::ifstream& in, const std::string& path, const json& hdr,
                 std::vector<ParamRef<float>> tensors) {
    const auto& plist = hdr.at("params");
    if (plist.size() != tensors.size())
        throw IoError("bundle parameter count mismatch in " + path);
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        const Shape want = plist[i].at("shape").get<Shape>();
        if (want != tensors[i].value->shape())
            throw IoError("bundle parameter shape mismatch for " +
                          plist[i].at("name").get<std::string>() + " in " + path);
        in.read(reinterpret_cast<char*>(tensors[i].value->data()),
                static_cast<std::streamsize>(tensors[i].value->numel() * sizeof(float)));
        if (!in) throw IoError("truncated parameter block in " + path);
    }
}

void fill_meta(const json& hdr, BundleMeta* meta) {
    if (!meta) return;
    meta->role = hdr.value("role", "");
    if (hdr.contains("extras")) meta->extras = hdr.at("extras");
    if (hdr.contains("training")) meta->training = hdr.at("training");
    if (hdr.contains("provenance")) meta->provenance = hdr.at("provenance");
}

ordered_json common_header(const BundleMeta& meta, const char* graph) {
    ordered_json hdr;
    hdr["format"] = "artenc-bundle";
    hdr["format_version"] = kBundleVersion;
    hdr["role"] = meta.role;
    hdr["graph"] = graph;
    hdr["extras"] = meta.extras;
    hdr["training"] = meta.training;
    hdr["provenance"] = meta.provenance;
    return hdr;
}

}  // namespace

void save_stack_bundle(const std::string& path, Stack<float>& stack, const BundleMeta& meta) {
    ordered_json hdr = common_header(meta, "stack");
    hdr["input_shape"] = stack.input_shape();
    hdr["layers"] = stack_layers_json(stack);
    std::vector<ParamRef<float>> tensors;
    collect(stack, tensors, "");
    write_bundle(path, hdr, tensors);
}

Stack<float> load_stack_bundle(const std::string& path, BundleMeta* meta_out) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open bundle: " + path);
    json hdr = read_header_stream(in, path);
    if (hdr.value("graph", "") != "stack") throw IoError("bundle is not a stack graph: " + path);
    Stack<float> s = stack_from_json(hdr.at("layers"), hdr.at("input_shape").get<Shape>());
    std::vector<ParamRef<float>> tensors;
    collect(s, tensors, "");
    read_blocks(in, path, hdr, tensors);
    fill_meta(hdr, meta_out);
    return s;
}

void save_vae_bundle(const std::string& path, VaeNet<float>& net, const BundleMeta& meta) {
    ordered_json hdr = common_header(meta, "vae");
    hdr["input_shape"] = net.trunk.input_shape();
    hdr["trunk_layers"] = stack_layers_json(net.trunk);
    hdr["mu_head"] = fc_json(*net.mu_head);
    hdr["logvar_head"] = fc_json(*net.logvar_head);
    hdr["decoder_input_shape"] = net.decoder.input_shape();
    hdr["decoder_layers"] = stack_layers_json(net.decoder);
    std::vector<ParamRef<float>> tensors;
    collect(net.trunk, tensors, "trunk.");
    collect_fc(*net.mu_head, tensors, "mu_head.");
    collect_fc(*net.logvar_head, tensors, "logvar_head.");
    collect(net.decoder, tensors, "decoder.");
    write_bundle(path, hdr, tensors);
}

VaeNet<float> load_vae_bundle(const std::string& path, BundleMeta* meta_out) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open bundle: " + path);
    json hdr = read_header_stream(in, path);
    if (hdr.value("graph", "") != "vae") throw IoError("bundle is not a vae graph: " + path);
    VaeNet<float> net;
    net.trunk = stack_from_json(hdr.at("trunk_layers"), hdr.at("input_shape").get<Shape>());
    net.mu_head = std::make_unique<FullyConnected<float>>(
        hdr.at("mu_head").at("in_features").get<int>(),
        hdr.at("mu_head").at("out_features").get<int>());
    net.logvar_head = std::make_unique<FullyConnected<float>>(
        hdr.at("logvar_head").at("in_features").get<int>(),
        hdr.at("logvar_head").at("out_features").get<int>());
    net.decoder = stack_from_json(hdr.at("decoder_layers"),
                                  hdr.at("decoder_input_shape").get<Shape>());
    std::vector<ParamRef<float>> tensors;
    collect(net.trunk, tensors, "trunk.");
    collect_fc(*net.mu_head, tensors, "mu_head.");
    collect_fc(*net.logvar_head, tensors, "logvar_head.");
    collect(net.decoder, tensors, "decoder.");
    read_blocks(in, path, hdr, tensors);
    fill_meta(hdr, meta_out);
    return net;
}

nlohmann::json read_bundle_header(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open bundle: " + path);
    return read_header_stream(in, path);
}

}  // namespace artenc
