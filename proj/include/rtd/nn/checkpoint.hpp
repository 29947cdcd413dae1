#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "rtd/nn/transformer.hpp"

namespace rtd::nn {

inline constexpr int kCheckpointVersion = 1;

struct CheckpointMeta {
  std::uint64_t steps = 0;
  std::uint64_t seed = 0;
  std::string note;
};

// Checkpoint file layout (JSON):
//   {"format_version": 1,
//    "kind": "encoder" | "causal_lm" | "cmlm",
//    "config": {...},                 // EncoderConfig, or {"encoder", "decoder"}
//    "heads": {"lm": bool, "disc": bool},   // encoder only
//    "metadata": {"steps": n, "seed": s, "note": "..."},
//    "parameters": [{"name": ..., "shape": [rows, cols], "data": [...]}, ...]}
// Values are written with round-trip precision so a reload is bit-exact.
void save_checkpoint(const EncoderModel& model, const CheckpointMeta& meta,
                     const std::filesystem::path& path);
void save_checkpoint(const CausalLmModel& model, const CheckpointMeta& meta,
                     const std::filesystem::path& path);
void save_checkpoint(const CmlmModel& model, const CheckpointMeta& meta,
                     const std::filesystem::path& path);

// Throw LoadError on version mismatch, wrong kind, corrupt or truncated files.
EncoderModel load_encoder(const std::filesystem::path& path, CheckpointMeta* meta = nullptr);
CausalLmModel load_causal_lm(const std::filesystem::path& path, CheckpointMeta* meta = nullptr);
CmlmModel load_cmlm(const std::filesystem::path& path, CheckpointMeta* meta = nullptr);

// Peeks at the "kind" field.
std::string checkpoint_kind(const std::filesystem::path& path);

nlohmann::json to_json(const EncoderConfig& config);
EncoderConfig encoder_config_from_json(const nlohmann::json& j);

}  // namespace rtd::nn
