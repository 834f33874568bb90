// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace super {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Lowercase hex SHA-256 digest.
std::string sha256_hex(std::string_view bytes);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

/// Decimal with 9 significant digits ("%.9g"); exact round trip for float.
std::string format_float9(double v);

/// SplitMix64 mixing of a base seed with a stream tag; used to derive
/// independent, order-free substreams (per instance, per split, ...).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag);
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag1, std::uint64_t tag2);

using Rng = std::mt19937_64;

}  // namespace super
