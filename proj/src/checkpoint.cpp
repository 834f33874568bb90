// SPDX-License-Identifier: Apache-2.0

#include "super/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <set>

#include "super/io.hpp"
#include "super/network.hpp"

namespace super {

namespace {

static_assert(sizeof(float) == 4);

std::uint32_t to_little(std::uint32_t x) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap32(x);
  return x;
}

const char* kManifest = "checkpoint.json";
const char* kBlob = "checkpoint.bin";

}  // namespace

std::string pack_tensors(const ParamStore<float>& params) {
  std::string blob;
  blob.reserve(params.total_elements() * 4);
  for (const auto& p : params.items()) {
    for (float v : p.value.data()) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      bits = to_little(bits);
      char bytes[4];
      std::memcpy(bytes, &bits, 4);
      blob.append(bytes, 4);
    }
  }
  return blob;
}

void save_checkpoint(const std::filesystem::path& dir, const RunConfig& config, const ParamStore<float>& params) {
  std::filesystem::create_directories(dir);
  const std::string blob = pack_tensors(params);
  nlohmann::json tensors = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& p : params.items()) {
    const std::size_t length = p.value.numel() * 4;
    tensors.push_back({{"name", p.name},
                       {"shape", {p.value.rows(), p.value.cols()}},
                       {"dtype", "f32"},
                       {"offset", offset},
                       {"length", length}});
    offset += length;
  }
  nlohmann::json manifest = {{"format", "super-checkpoint"},
                             {"format_version", kCheckpointVersion},
                             {"config", to_json(config)},
                             {"tensors", tensors},
                             {"blob", kBlob},
                             {"sha256", sha256_hex(blob)}};
  // Blob first: a manifest never points at a blob that is not there yet.
  write_file(dir / kBlob, blob);
  write_file(dir / kManifest, manifest.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(dir / kManifest));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("checkpoint manifest is not valid JSON: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != "super-checkpoint")
    throw CheckpointError("not a checkpoint manifest: " + (dir / kManifest).string());
  if (manifest.value("format_version", 0) != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint format_version " + manifest["format_version"].dump());

  Checkpoint ck;
  ck.config = run_config_from_json(manifest.at("config"));
  const std::string blob = read_file(dir / manifest.value("blob", kBlob));
  if (sha256_hex(blob) != manifest.at("sha256").get<std::string>())
    throw CheckpointError("checkpoint blob checksum mismatch in " + dir.string());

  const auto expected = parameter_shapes(model_spec(ck.config));
  std::map<std::string, Shape> expected_shape(expected.begin(), expected.end());
  std::map<std::string, Tensor<float>> loaded;
  for (const auto& entry : manifest.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    const auto it = expected_shape.find(name);
    if (it == expected_shape.end()) throw CheckpointError("tensor " + name + " is not part of the configured model");
    if (loaded.count(name)) throw CheckpointError("tensor " + name + " appears twice");
    if (entry.value("dtype", "") != "f32") throw CheckpointError("tensor " + name + " has unsupported dtype");
    const Shape shape{entry.at("shape").at(0).get<std::size_t>(), entry.at("shape").at(1).get<std::size_t>()};
    if (shape != it->second)
      throw CheckpointError("tensor " + name + " has shape " + shape.str() + " but the config implies " +
                            it->second.str());
    const std::size_t offset = entry.at("offset").get<std::size_t>();
    const std::size_t length = entry.at("length").get<std::size_t>();
    if (length != shape.numel() * 4 || offset + length > blob.size())
      throw CheckpointError("tensor " + name + " has an inconsistent byte range");
    std::vector<float> values(shape.numel());
    for (std::size_t i = 0; i < values.size(); ++i) {
      std::uint32_t bits;
      std::memcpy(&bits, blob.data() + offset + 4 * i, 4);
      bits = to_little(bits);
      std::memcpy(&values[i], &bits, 4);
    }
    loaded.emplace(name, Tensor<float>(shape, std::move(values)));
  }
  for (const auto& [name, shape] : expected) {
    auto it = loaded.find(name);
    if (it == loaded.end()) throw CheckpointError("tensor " + name + " is missing from the checkpoint");
    ck.params.add(name, std::move(it->second));
  }
  return ck;
}

void check_data_compatible(const Dims& model_dims, const Dims& data_dims) {
  auto fail = [](const std::string& tensor, const std::string& detail) {
    throw ConfigError("dimension mismatch at tensor " + tensor + ": " + detail);
  };
  auto s = [](std::size_t v) { return std::to_string(v); };
  if (model_dims.d_v != data_dims.d_v)
    fail("proj.W_proj", "expects d_v=" + s(model_dims.d_v) + ", data has d_v=" + s(data_dims.d_v));
  if (model_dims.d != data_dims.d)
    fail("proj.W_Qhat", "expects question width d=" + s(model_dims.d) + ", data has d=" + s(data_dims.d));
  if (model_dims.d_k != data_dims.d_k)
    fail("proj.W_k", "expects d_k=" + s(model_dims.d_k) + ", data has d_k=" + s(data_dims.d_k));
  if (model_dims.A != data_dims.A)
    fail("head.W_y", "expects A=" + s(model_dims.A) + " answers, data has A=" + s(data_dims.A));
  if (model_dims.N != data_dims.N || model_dims.L != data_dims.L || model_dims.K != data_dims.K)
    fail("input", "N/L/K of the data (" + s(data_dims.N) + "/" + s(data_dims.L) + "/" + s(data_dims.K) +
                      ") differ from the config (" + s(model_dims.N) + "/" + s(model_dims.L) + "/" +
                      s(model_dims.K) + ")");
}

}  // namespace super
