// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint = checkpoint.json (config echo, tensor directory, checksum) plus
// checkpoint.bin (little-endian float32 tensors in directory order).

#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "super/config.hpp"
#include "super/params.hpp"

namespace super {

inline constexpr int kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  RunConfig config;
  ParamStore<float> params;
};

/// Serialized tensor blob for `params` (directory order = store order).
std::string pack_tensors(const ParamStore<float>& params);

void save_checkpoint(const std::filesystem::path& dir, const RunConfig& config, const ParamStore<float>& params);

/// Verifies the checksum and that every expected tensor is present once with
/// the shape implied by the stored config; errors name the offending tensor.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

/// Checks that instances of `data_dims` can be fed to a model built with
/// `model_dims`; the error names the first tensor whose shape disagrees.
void check_data_compatible(const Dims& model_dims, const Dims& data_dims);

}  // namespace super
