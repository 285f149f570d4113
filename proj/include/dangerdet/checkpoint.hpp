#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "dangerdet/config.hpp"
#include "dangerdet/network.hpp"

namespace dangerdet {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Container layout: 8-byte magic "DDETCKPT", u32 format version, u64 header
/// length, JSON header, then raw little-endian tensor blobs in header order.
struct Checkpoint {
    TrainConfig config;
    NormStats norm;
    int step = 0;
    std::map<std::string, torch::Tensor> tensors;  // "param/<name>", "momentum/<name>"
    nlohmann::json meta = nlohmann::json::object();
};

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies "param/<name>" tensors of `checkpoint` into `model`. Raises
/// network::ConfigMismatch on missing, extra, or reshaped parameters.
void load_parameters(DangerDet& model, const Checkpoint& checkpoint);

/// Snapshot of the model parameters under "param/<name>".
std::map<std::string, torch::Tensor> parameter_tensors(DangerDet& model);

}  // namespace dangerdet
