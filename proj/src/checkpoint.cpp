// SPDX-License-Identifier: Apache-2.0

#include "kd/checkpoint.hpp"

#include <cstring>

#include <zlib.h>

#include "binio.hpp"

namespace kd {

namespace {

constexpr char kMagic[4] = {'D', 'F', 'C', 'K'};

std::uint32_t payload_crc(const char* data, std::size_t n) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(n)));
}

std::string hex(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%08x", v);
  return buf;
}

std::string preset_of(const Checkpoint& ck) {
  if (ck.metadata.is_object() && ck.metadata.contains("model") &&
      ck.metadata["model"].is_object() && ck.metadata["model"].contains("preset")) {
    return ck.metadata["model"]["preset"].get<std::string>();
  }
  return "<unknown>";
}

/// The tensor block: count, then per tensor name/rank/dims/float32 data.
std::string serialize_tensors(const Checkpoint& ck) {
  std::string buf;
  binio::put_u32(buf, static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& [name, t] : ck.tensors) {
    binio::put_u32(buf, static_cast<std::uint32_t>(name.size()));
    buf += name;
    binio::put_u32(buf, static_cast<std::uint32_t>(t.rank()));
    for (Index d : t.shape()) binio::put_u32(buf, static_cast<std::uint32_t>(d));
    for (Index i = 0; i < t.numel(); ++i) {
      binio::put_f32(buf, static_cast<float>(t.values()(i)));
    }
  }
  return buf;
}

void copy_into(Model& model, const Checkpoint& ck, bool encoder_only,
               const char* what) {
  for (auto& p : model.params()) {
    if (encoder_only && p.name.rfind("head.", 0) == 0) continue;
    const Tensor* src = ck.find(p.name);
    if (!src) {
      throw DataError(std::string(what) + ": checkpoint lacks tensor '" + p.name + "'");
    }
    if (src->shape() != p.tensor.shape()) {
      throw ShapeError(std::string(what) + ": tensor '" + p.name + "' is " +
                       shape_str(src->shape()) + " in the checkpoint but " +
                       shape_str(p.tensor.shape()) + " in the model");
    }
    std::memcpy(p.tensor.data(), src->data(),
                sizeof(double) * static_cast<std::size_t>(src->numel()));
  }
}

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

Checkpoint checkpoint_from_model(const Model& model, nlohmann::json metadata) {
  Checkpoint ck;
  ck.spec_digest = spec_digest(model.spec());
  for (const auto& p : model.params()) {
    Tensor t = Tensor::zeros(p.tensor.shape());
    for (Index i = 0; i < t.numel(); ++i) {
      t.values()(i) = static_cast<double>(static_cast<float>(p.tensor.values()(i)));
    }
    ck.tensors.emplace_back(p.name, std::move(t));
  }
  if (!metadata.is_object()) metadata = nlohmann::json::object();
  metadata["model"] = {{"preset", model.spec().name},
                       {"input_shape", model.spec().input_shape},
                       {"num_classes", model.num_classes()}};
  ck.metadata = std::move(metadata);
  return ck;
}

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  const std::string tensors = serialize_tensors(ck);
  nlohmann::json md = ck.metadata.is_object() ? ck.metadata : nlohmann::json::object();
  md["payload_crc32"] = payload_crc(tensors.data(), tensors.size());
  const std::string md_text = md.dump();

  std::string buf;
  buf.append(kMagic, 4);
  binio::put_u32(buf, ck.version);
  binio::put_u32(buf, ck.spec_digest);
  buf += tensors;
  binio::put_u64(buf, static_cast<std::uint64_t>(md_text.size()));
  buf += md_text;
  binio::write_file(path, buf, "checkpoint");
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::string bytes = binio::read_file(path, "checkpoint");
  binio::Reader r(bytes, "checkpoint");
  r.need(4, "magic");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw DataError("checkpoint: bad magic at offset 0 in " + path);
  }
  (void)r.raw(4, "magic");

  Checkpoint ck;
  ck.version = r.u32("format version");
  if (ck.version != kCheckpointVersion) {
    throw DataError("checkpoint: unsupported format version " + std::to_string(ck.version) +
                    " (this build reads version " + std::to_string(kCheckpointVersion) + ")");
  }
  ck.spec_digest = r.u32("spec digest");

  const std::size_t tensor_block_begin = r.offset();
  const std::uint32_t count = r.u32("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.u32("tensor name length");
    if (name_len > 4096) {
      throw DataError("checkpoint: implausible tensor name length " +
                      std::to_string(name_len) + " at byte offset " +
                      std::to_string(r.offset() - 4));
    }
    std::string name(r.raw(name_len, "tensor name"), name_len);
    const std::uint32_t rank = r.u32("tensor rank");
    if (rank == 0 || rank > 8) {
      throw DataError("checkpoint: implausible rank " + std::to_string(rank) +
                      " for tensor '" + name + "'");
    }
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::uint32_t dim = r.u32("tensor dims");
      if (dim == 0) {
        throw DataError("checkpoint: zero dim for tensor '" + name + "'");
      }
      shape.push_back(static_cast<Index>(dim));
    }
    Tensor t = Tensor::zeros(shape);
    for (Index k = 0; k < t.numel(); ++k) {
      t.values()(k) = static_cast<double>(r.f32("tensor payload"));
    }
    ck.tensors.emplace_back(std::move(name), std::move(t));
  }
  const std::size_t tensor_block_end = r.offset();

  const std::uint64_t md_len = r.u64("metadata length");
  const char* md_bytes = r.raw(static_cast<std::size_t>(md_len), "metadata");
  try {
    ck.metadata = nlohmann::json::parse(md_bytes, md_bytes + md_len);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: metadata is not valid JSON: ") + e.what());
  }
  if (r.remaining() != 0) {
    throw DataError("checkpoint: " + std::to_string(r.remaining()) +
                    " trailing bytes at offset " + std::to_string(r.offset()));
  }

  if (!ck.metadata.is_object() || !ck.metadata.contains("payload_crc32")) {
    throw DataError("checkpoint: metadata lacks payload_crc32");
  }
  const std::uint32_t stored = ck.metadata["payload_crc32"].get<std::uint32_t>();
  const std::uint32_t computed = payload_crc(bytes.data() + tensor_block_begin,
                                             tensor_block_end - tensor_block_begin);
  if (stored != computed) {
    throw DataError("checkpoint: tensor payload digest mismatch (stored " + hex(stored) +
                    ", computed " + hex(computed) + ") — file is corrupt");
  }
  return ck;
}

Model model_from_checkpoint(const Checkpoint& ck) {
  if (!ck.metadata.is_object() || !ck.metadata.contains("model")) {
    throw DataError("checkpoint: metadata lacks a 'model' section");
  }
  const nlohmann::json& m = ck.metadata["model"];
  ModelSpec spec;
  try {
    spec = make_preset(m.at("preset").get<std::string>(),
                       m.at("input_shape").get<Shape>(),
                       m.at("num_classes").get<Index>());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: bad 'model' metadata: ") + e.what());
  }
  return model_for_spec(ck, spec);
}

Model model_for_spec(const Checkpoint& ck, const ModelSpec& target) {
  const std::uint32_t want = spec_digest(target);
  if (want != ck.spec_digest) {
    throw ConfigError("checkpoint: spec digest mismatch: file holds preset '" +
                      preset_of(ck) + "' (digest " + hex(ck.spec_digest) +
                      "), loading into preset '" + target.name + "' (digest " +
                      hex(want) + ")");
  }
  Model model(target);
  copy_into(model, ck, /*encoder_only=*/false, "checkpoint");
  return model;
}

Model load_pretrained(const ModelSpec& spec, const std::string& path,
                      std::uint64_t seed, double init_std) {
  const Checkpoint ck = load_checkpoint(path);
  Model model = init_truncated_normal(spec, init_std, seed);
  copy_into(model, ck, /*encoder_only=*/true, "pretrained init");
  return model;
}

}  // namespace kd
