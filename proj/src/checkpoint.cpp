#include "linpatch/checkpoint.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace linpatch {

using nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little, "payload I/O assumes a little-endian host");

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
std::uint64_t get_le(const std::uint8_t* p, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot open '" + path + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FileError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FileError("write to '" + path + "' failed");
}

template <typename T>
T field(const json& j, const char* name, const std::string& origin) {
  if (!j.is_object() || !j.contains(name)) throw FormatError(origin + ": missing field '" + name + "'");
  try {
    return j.at(name).get<T>();
  } catch (const json::exception&) {
    throw FormatError(origin + ": field '" + name + "' has the wrong type");
  }
}

std::string layer_name(std::size_t l, const char* part) { return "layers." + std::to_string(l) + "." + part; }

std::string slot_name(const SlotKey& k, const char* part) {
  return "patch." + std::to_string(k.layer) + "." + std::to_string(k.order) + "." + part;
}

TensorArchive backbone_archive(const Model& m) {
  TensorArchive a;
  a.tensors.emplace_back("token_embedding", m.token_embedding);
  a.tensors.emplace_back("position_embedding", m.position_embedding);
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const auto& w = m.layers[l];
    a.tensors.emplace_back(layer_name(l, "attn_norm"), w.attn_norm);
    a.tensors.emplace_back(layer_name(l, "wqkv"), w.wqkv);
    a.tensors.emplace_back(layer_name(l, "wo"), w.wo);
    a.tensors.emplace_back(layer_name(l, "mlp_norm"), w.mlp_norm);
    a.tensors.emplace_back(layer_name(l, "w1"), w.w1);
    a.tensors.emplace_back(layer_name(l, "w2"), w.w2);
  }
  a.tensors.emplace_back("final_norm", m.final_norm);
  a.tensors.emplace_back("lm_head", m.lm_head);
  a.meta["config"] = config_to_json(m.config);
  return a;
}

TensorArchive patch_archive(const Model& m) {
  TensorArchive a;
  json slots = json::array();
  for (const auto& [key, p] : m.patch_slots) {
    json s;
    s["layer"] = key.layer;
    s["order"] = key.order;
    s["matrix"] = slot_name(key, "matrix");
    a.tensors.emplace_back(slot_name(key, "matrix"), p.matrix);
    if (p.scaling) {
      s["scaling"] = slot_name(key, "scaling");
      a.tensors.emplace_back(slot_name(key, "scaling"), *p.scaling);
    } else {
      s["scaling"] = nullptr;
    }
    s["rotated"] = p.rotated;
    s["trained"] = p.trained;
    slots.push_back(std::move(s));
  }
  a.meta["patch_slots"] = std::move(slots);
  return a;
}

void expect_shape(const TensorF& t, const Shape& shape, const std::string& name, const std::string& origin) {
  if (t.shape() != shape) {
    throw FormatError(origin + ": tensor '" + name + "' has shape " + shape_str(t.shape()) + ", expected " +
                      shape_str(shape));
  }
}

}  // namespace

const TensorF& TensorArchive::get(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw FormatError("missing tensor '" + name + "'");
}

std::vector<std::uint8_t> encode_archive(const char* magic, const TensorArchive& archive) {
  json meta = archive.meta;
  json manifest = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : archive.tensors) {
    const std::uint64_t len = t.numel() * sizeof(float);
    manifest.push_back({{"name", name}, {"shape", t.shape()}, {"dtype", "f32"}, {"offset", offset}, {"length", len}});
    offset += len;
  }
  meta["tensors"] = std::move(manifest);
  const std::string text = meta.dump();
  std::vector<std::uint8_t> out(magic, magic + 4);
  put_u32(out, kFormatVersion);
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  out.reserve(out.size() + offset);
  for (const auto& [name, t] : archive.tensors) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(t.data());
    out.insert(out.end(), p, p + t.numel() * sizeof(float));
  }
  return out;
}

TensorArchive decode_archive(const std::vector<std::uint8_t>& bytes, const char* magic, const std::string& origin) {
  if (bytes.size() < 16) throw FormatError(origin + ": header truncated (" + std::to_string(bytes.size()) + " bytes)");
  if (std::memcmp(bytes.data(), magic, 4) != 0) {
    throw FormatError(origin + ": bad magic, expected '" + std::string(magic, 4) + "'");
  }
  const auto version = static_cast<std::uint32_t>(get_le(bytes.data() + 4, 4));
  if (version != kFormatVersion) throw FormatError(origin + ": unsupported version " + std::to_string(version));
  const std::uint64_t meta_len = get_le(bytes.data() + 8, 8);
  if (meta_len > bytes.size() - 16) throw FormatError(origin + ": metadata length exceeds file size");
  TensorArchive archive;
  try {
    archive.meta = json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(meta_len));
  } catch (const json::exception& e) {
    throw FormatError(origin + ": metadata is not valid JSON (" + e.what() + ")");
  }
  const std::uint64_t payload_start = 16 + meta_len;
  const std::uint64_t payload_size = bytes.size() - payload_start;
  const json manifest = field<json>(archive.meta, "tensors", origin);
  if (!manifest.is_array()) throw FormatError(origin + ": field 'tensors' must be an array");
  std::uint64_t expected_end = 0;
  for (const auto& entry : manifest) {
    const auto name = field<std::string>(entry, "name", origin);
    const auto shape = field<Shape>(entry, "shape", origin);
    const auto dtype = field<std::string>(entry, "dtype", origin);
    const auto offset = field<std::uint64_t>(entry, "offset", origin);
    const auto length = field<std::uint64_t>(entry, "length", origin);
    if (dtype != "f32") throw FormatError(origin + ": tensor '" + name + "' field 'dtype' is '" + dtype + "'");
    if (length != shape_numel(shape) * sizeof(float)) {
      throw FormatError(origin + ": tensor '" + name + "' field 'length' disagrees with its shape");
    }
    if (offset != expected_end) throw FormatError(origin + ": tensor '" + name + "' field 'offset' is not contiguous");
    if (offset + length > payload_size) {
      throw FormatError(origin + ": tensor '" + name + "' extends past end of payload (file truncated)");
    }
    TensorF t(shape);
    std::memcpy(t.data(), bytes.data() + payload_start + offset, length);
    archive.tensors.emplace_back(name, std::move(t));
    expected_end = offset + length;
  }
  if (expected_end != payload_size) {
    throw FormatError(origin + ": payload has " + std::to_string(payload_size) + " bytes, manifest describes " +
                      std::to_string(expected_end));
  }
  archive.meta.erase("tensors");
  return archive;
}

void write_archive(const std::string& path, const char* magic, const TensorArchive& archive) {
  write_file(path, encode_archive(magic, archive));
}

TensorArchive read_archive(const std::string& path, const char* magic) {
  return decode_archive(read_file(path), magic, path);
}

json config_to_json(const ModelConfig& c) {
  return {{"n_layers", c.n_layers},       {"hidden_dim", c.hidden_dim}, {"n_heads", c.n_heads},
          {"mlp_dim", c.mlp_dim},         {"vocab_size", c.vocab_size}, {"max_seq_len", c.max_seq_len},
          {"rms_eps", c.rms_eps}};
}

ModelConfig config_from_json(const json& j) {
  const std::string origin = "config";
  ModelConfig c;
  c.n_layers = field<std::size_t>(j, "n_layers", origin);
  c.hidden_dim = field<std::size_t>(j, "hidden_dim", origin);
  c.n_heads = field<std::size_t>(j, "n_heads", origin);
  c.mlp_dim = field<std::size_t>(j, "mlp_dim", origin);
  c.vocab_size = field<std::size_t>(j, "vocab_size", origin);
  c.max_seq_len = field<std::size_t>(j, "max_seq_len", origin);
  c.rms_eps = field<double>(j, "rms_eps", origin);
  try {
    c.validate();
  } catch (const InputError& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  return c;
}

std::vector<std::uint8_t> encode_checkpoint(const Model& model) {
  TensorArchive a = backbone_archive(model);
  TensorArchive p = patch_archive(model);
  a.meta["patch_slots"] = p.meta["patch_slots"];
  for (auto& t : p.tensors) a.tensors.push_back(std::move(t));
  return encode_archive(kCheckpointMagic, a);
}

void save_checkpoint(const Model& model, const std::string& path) { write_file(path, encode_checkpoint(model)); }

Model load_checkpoint(const std::string& path) {
  const TensorArchive a = read_archive(path, kCheckpointMagic);
  const auto get = [&](const std::string& name) -> const TensorF& {
    for (const auto& [n, t] : a.tensors)
      if (n == name) return t;
    throw FormatError(path + ": manifest is missing tensor '" + name + "'");
  };
  Model m;
  try {
    m.config = config_from_json(field<json>(a.meta, "config", path));
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
  const auto& c = m.config;
  const std::size_t C = c.hidden_dim;
  m.token_embedding = get("token_embedding");
  expect_shape(m.token_embedding, {c.vocab_size, C}, "token_embedding", path);
  m.position_embedding = get("position_embedding");
  expect_shape(m.position_embedding, {c.max_seq_len, C}, "position_embedding", path);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    LayerWeights<float> w;
    const auto load = [&](const char* part, const Shape& shape) {
      const std::string name = layer_name(l, part);
      TensorF t = get(name);
      expect_shape(t, shape, name, path);
      return t;
    };
    w.attn_norm = load("attn_norm", {C});
    w.wqkv = load("wqkv", {C, 3 * C});
    w.wo = load("wo", {C, C});
    w.mlp_norm = load("mlp_norm", {C});
    w.w1 = load("w1", {C, c.mlp_dim});
    w.w2 = load("w2", {c.mlp_dim, C});
    m.layers.push_back(std::move(w));
  }
  m.final_norm = get("final_norm");
  expect_shape(m.final_norm, {C}, "final_norm", path);
  m.lm_head = get("lm_head");
  expect_shape(m.lm_head, {C, c.vocab_size}, "lm_head", path);
  const json slots = field<json>(a.meta, "patch_slots", path);
  if (!slots.is_array()) throw FormatError(path + ": field 'patch_slots' must be an array");
  for (const auto& s : slots) {
    SlotKey key{field<std::size_t>(s, "layer", path), field<std::size_t>(s, "order", path)};
    if (key.layer > c.n_layers) throw FormatError(path + ": patch slot field 'layer' out of range");
    PatchMatrix<float> p;
    const auto mname = field<std::string>(s, "matrix", path);
    p.matrix = get(mname);
    expect_shape(p.matrix, {C, C}, mname, path);
    if (!s.contains("scaling")) throw FormatError(path + ": missing field 'scaling'");
    if (!s["scaling"].is_null()) {
      const auto sname = field<std::string>(s, "scaling", path);
      p.scaling = get(sname);
      expect_shape(*p.scaling, {C}, sname, path);
    }
    p.rotated = field<bool>(s, "rotated", path);
    p.trained = field<bool>(s, "trained", path);
    if (!m.patch_slots.emplace(key, std::move(p)).second) {
      throw FormatError(path + ": duplicate patch slot in field 'patch_slots'");
    }
  }
  return m;
}

void save_trace(const Trace& trace, const std::string& path) {
  TensorArchive a;
  a.meta["batch"] = trace.batch;
  a.meta["seq_len"] = trace.seq_len;
  a.meta["hidden_dim"] = trace.hidden_dim();
  a.meta["entries"] = trace.states.size();
  for (std::size_t i = 0; i < trace.states.size(); ++i) a.tensors.emplace_back("state." + std::to_string(i), trace.states[i]);
  write_archive(path, kTraceMagic, a);
}

Trace load_trace(const std::string& path) {
  const TensorArchive a = read_archive(path, kTraceMagic);
  Trace t;
  t.batch = field<std::size_t>(a.meta, "batch", path);
  t.seq_len = field<std::size_t>(a.meta, "seq_len", path);
  const auto c = field<std::size_t>(a.meta, "hidden_dim", path);
  const auto entries = field<std::size_t>(a.meta, "entries", path);
  if (a.tensors.size() != entries) throw FormatError(path + ": field 'entries' disagrees with the manifest");
  for (std::size_t i = 0; i < entries; ++i) {
    const std::string name = "state." + std::to_string(i);
    TensorF s = a.get(name);
    expect_shape(s, {t.batch, t.seq_len, c}, name, path);
    t.states.push_back(std::move(s));
  }
  return t;
}

std::string sha256_hex(const std::vector<std::uint8_t>& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 computation failed");
  }
  std::ostringstream os;
  os << std::hex;
  for (unsigned i = 0; i < len; ++i) os << ((md[i] >> 4) & 0xF) << (md[i] & 0xF);
  return os.str();
}

std::string backbone_digest(const Model& model) {
  return sha256_hex(encode_archive(kCheckpointMagic, backbone_archive(model)));
}

std::string patch_digest(const Model& model) {
  TensorArchive a;
  for (const auto& [key, p] : model.patch_slots) a.tensors.emplace_back(slot_name(key, "matrix"), p.matrix);
  return sha256_hex(encode_archive(kCheckpointMagic, a));
}

}  // namespace linpatch
