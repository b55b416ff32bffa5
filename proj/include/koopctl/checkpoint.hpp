#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "koopctl/tensor.hpp"

namespace koopctl {

inline constexpr int kCheckpointVersion = 1;

/// On-disk snapshot: `<stem>.manifest` (text) + `<stem>.bin` (little-endian f64).
///
/// Manifest layout:
///   koopctl-checkpoint <version>
///   kind <kind>
///   blob <file name> <count of doubles>
///   [config] ... [/config]      config key = value lines
///   [scalars] ... [/scalars]    name value (integers)
///   [rng] ... [/rng]            engine states, one per line
///   [tensors] ... [/tensors]    name rows cols offset
/// Matrices are stored row-major.
struct Checkpoint {
  int version = kCheckpointVersion;
  std::string kind = "agent";
  std::string config_text;
  std::vector<std::pair<std::string, long long>> scalars;
  std::string rng_text;
  std::vector<std::pair<std::string, Matrix>> tensors;

  void add(const std::string& name, const Matrix& m) { tensors.emplace_back(name, m); }
  void add_scalar(const std::string& name, long long v) { scalars.emplace_back(name, v); }

  /// Throws CheckpointError if absent.
  const Matrix& tensor(const std::string& name) const;
  long long scalar(const std::string& name) const;
  bool has_tensor(const std::string& name) const;

  /// Writes both files; returns the manifest path.
  std::filesystem::path save(const std::filesystem::path& stem) const;
  /// Accepts the stem or either file. Throws CheckpointError on version
  /// mismatch, truncation or malformed text.
  static Checkpoint load(const std::filesystem::path& path);
};

/// Normalizes "<stem>", "<stem>.manifest" or "<stem>.bin" to the stem.
std::filesystem::path checkpoint_stem(const std::filesystem::path& path);

}  // namespace koopctl
