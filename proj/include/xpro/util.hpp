#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace xpro {

/// Base error type; subclasses map to CLI exit codes.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Tensor shape / dimension mismatches.
struct ShapeError : Error {
  using Error::Error;
};

/// Violated API preconditions (non-scalar loss, empty mask, ...).
struct ContractError : Error {
  using Error::Error;
};

/// Invalid RunConfig / CorpusSpec. CLI exit code 2.
struct ConfigError : Error {
  using Error::Error;
};

/// Unreadable or malformed data files. CLI exit code 3.
struct DataError : Error {
  using Error::Error;
};

/// Non-finite values where finite ones are required. CLI exit code 4.
struct NumericError : Error {
  using Error::Error;
};

/// "[2x3]" style shape formatting for error messages.
std::string shape_str(const std::vector<int>& shape);

/// Derives an independent stream seed from a base seed and a salt
/// (splitmix64 finalizer), so module RNGs do not overlap.
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t salt);

/// FNV-1a over a byte string; used for config hashes in manifests.
std::uint64_t fnv1a(const std::string& bytes);

}  // namespace xpro
