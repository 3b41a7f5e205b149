#pragma once

#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "linpatch/model.hpp"

namespace linpatch {

inline constexpr char kCheckpointMagic[5] = "LPM1";
inline constexpr char kTraceMagic[5] = "LPT1";
inline constexpr std::uint32_t kFormatVersion = 1;

// Generic container: magic (4 bytes), u32 version, u64 metadata length, JSON
// metadata carrying a "tensors" manifest (name, shape, dtype, offset, length),
// then the raw little-endian f32 payload.
struct TensorArchive {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, TensorF>> tensors;

  const TensorF& get(const std::string& name) const;
};

void write_archive(const std::string& path, const char* magic, const TensorArchive& archive);
TensorArchive read_archive(const std::string& path, const char* magic);
std::vector<std::uint8_t> encode_archive(const char* magic, const TensorArchive& archive);
TensorArchive decode_archive(const std::vector<std::uint8_t>& bytes, const char* magic, const std::string& origin);

nlohmann::json config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const nlohmann::json& j);

void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);
std::vector<std::uint8_t> encode_checkpoint(const Model& model);

void save_trace(const Trace& trace, const std::string& path);
Trace load_trace(const std::string& path);

// SHA-256 (hex) over the serialized backbone weights, patch slots excluded.
std::string backbone_digest(const Model& model);
// SHA-256 (hex) over the patch matrices only (flags and provenance excluded).
std::string patch_digest(const Model& model);
std::string sha256_hex(const std::vector<std::uint8_t>& bytes);

}  // namespace linpatch
