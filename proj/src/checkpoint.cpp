#include "dangerdet/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "dangerdet/error.hpp"
#include "dangerdet/io.hpp"

namespace dangerdet {

using json = nlohmann::json;

namespace {

constexpr char kMagic[8] = {'D', 'D', 'E', 'T', 'C', 'K', 'P', 'T'};

std::string dtype_name(torch::ScalarType t) {
    switch (t) {
        case torch::kFloat32: return "f32";
        case torch::kFloat64: return "f64";
        case torch::kInt64: return "i64";
        default: throw Error("network", "ConfigMismatch", "unsupported tensor dtype in checkpoint");
    }
}

torch::ScalarType dtype_from_name(const std::string& s) {
    if (s == "f32") return torch::kFloat32;
    if (s == "f64") return torch::kFloat64;
    if (s == "i64") return torch::kInt64;
    throw Error("network", "ConfigMismatch", "unknown tensor dtype '" + s + "'");
}

template <typename T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

template <typename T>
T get(const std::string& in, std::size_t& at) {
    if (at + sizeof(T) > in.size()) throw Error("network", "IoError", "truncated checkpoint");
    T v;
    std::memcpy(&v, in.data() + at, sizeof(T));
    at += sizeof(T);
    return v;
}

}  // namespace

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
    json index = json::array();
    std::string blobs;
    for (const auto& [name, tensor] : ck.tensors) {
        auto t = tensor.detach().contiguous().cpu();
        const auto bytes = static_cast<std::size_t>(t.numel()) * t.element_size();
        index.push_back({{"name", name},
                         {"dtype", dtype_name(t.scalar_type())},
                         {"shape", t.sizes().vec()},
                         {"offset", blobs.size()},
                         {"bytes", bytes}});
        blobs.append(static_cast<const char*>(t.data_ptr()), bytes);
    }
    json header = {{"config", train_config_to_json(ck.config)},
                   {"model", backbone_to_json(ck.config.model)},
                   {"norm", {{"mean", ck.norm.mean}, {"std", ck.norm.std}}},
                   {"step", ck.step},
                   {"tensors", index},
                   {"meta", ck.meta}};
    const std::string header_text = header.dump();

    std::string out(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint64_t>(out, header_text.size());
    out += header_text;
    out += blobs;
    write_file_atomic(path, out, "network");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("network", "IoError", "cannot open checkpoint " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string data = ss.str();
    if (data.size() < sizeof(kMagic) || std::memcmp(data.data(), kMagic, sizeof(kMagic)) != 0)
        throw Error("network", "IoError", path.string() + " is not a checkpoint");
    std::size_t at = sizeof(kMagic);
    const auto version = get<std::uint32_t>(data, at);
    if (version != kCheckpointVersion)
        throw Error("network", "ConfigMismatch", "unsupported checkpoint version " + std::to_string(version));
    const auto header_len = get<std::uint64_t>(data, at);
    if (at + header_len > data.size()) throw Error("network", "IoError", "truncated checkpoint header");
    const json header = json::parse(data.substr(at, header_len));
    at += header_len;

    Checkpoint ck;
    ck.config = train_config_from_json(header.at("config"));
    if (!(backbone_from_json(header.at("model")) == ck.config.model))
        throw Error("network", "ConfigMismatch", "checkpoint model and config disagree");
    ck.norm.mean = header.at("norm").at("mean").get<std::array<double, 3>>();
    ck.norm.std = header.at("norm").at("std").get<std::array<double, 3>>();
    ck.step = header.at("step").get<int>();
    ck.meta = header.value("meta", json::object());
    for (const auto& e : header.at("tensors")) {
        const auto offset = e.at("offset").get<std::size_t>();
        const auto bytes = e.at("bytes").get<std::size_t>();
        if (at + offset + bytes > data.size()) throw Error("network", "IoError", "truncated tensor data");
        auto t = torch::empty(e.at("shape").get<std::vector<int64_t>>(),
                              torch::TensorOptions().dtype(dtype_from_name(e.at("dtype").get<std::string>())));
        if (static_cast<std::size_t>(t.numel()) * t.element_size() != bytes)
            throw Error("network", "IoError", "tensor size mismatch for " + e.at("name").get<std::string>());
        std::memcpy(t.data_ptr(), data.data() + at + offset, bytes);
        ck.tensors.emplace(e.at("name").get<std::string>(), t);
    }
    return ck;
}

std::map<std::string, torch::Tensor> parameter_tensors(DangerDet& model) {
    std::map<std::string, torch::Tensor> out;
    for (const auto& p : model->named_parameters()) out.emplace("param/" + p.key(), p.value().detach().clone());
    return out;
}

void load_parameters(DangerDet& model, const Checkpoint& ck) {
    torch::NoGradGuard guard;
    std::size_t used = 0;
    for (auto& p : model->named_parameters()) {
        auto it = ck.tensors.find("param/" + p.key());
        if (it == ck.tensors.end()) throw Error("network", "ConfigMismatch", "checkpoint lacks parameter " + p.key());
        if (it->second.sizes() != p.value().sizes())
            throw Error("network", "ConfigMismatch", "shape mismatch for parameter " + p.key());
        p.value().copy_(it->second);
        ++used;
    }
    std::size_t stored = 0;
    for (const auto& [name, _] : ck.tensors) stored += name.rfind("param/", 0) == 0;
    if (stored != used) throw Error("network", "ConfigMismatch", "checkpoint holds parameters the model lacks");
}

}  // namespace dangerdet
