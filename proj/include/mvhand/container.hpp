#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace mvhand {

/// Base class for every error raised while reading or writing a
/// manifest + binary tensor container.
class ContainerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class CorruptManifest : public ContainerError {
 public:
  using ContainerError::ContainerError;
};
class ShapeMismatch : public ContainerError {
 public:
  using ContainerError::ContainerError;
};
class TruncatedPayload : public ContainerError {
 public:
  using ContainerError::ContainerError;
};

enum class DType { kFloat32, kInt32 };

struct TensorEntry {
  std::string name;
  std::vector<std::int64_t> shape;
  DType dtype = DType::kFloat32;
  std::vector<float> f32;
  std::vector<std::int32_t> i32;

  std::int64_t numel() const;
};

/// A directory holding `manifest.json` (UTF-8) and `data.bin`
/// (little-endian, row-major payloads at the offsets listed in the
/// manifest). Used for datasets and checkpoints alike.
class TensorContainer {
 public:
  nlohmann::json meta = nlohmann::json::object();

  void add_f32(std::string name, std::vector<std::int64_t> shape,
               std::vector<float> values);
  void add_i32(std::string name, std::vector<std::int64_t> shape,
               std::vector<std::int32_t> values);

  bool contains(const std::string& name) const;
  const TensorEntry& at(const std::string& name) const;
  const std::vector<TensorEntry>& entries() const { return entries_; }

  void write(const std::filesystem::path& dir) const;

  /// Validates the manifest completely before touching the payload.
  static TensorContainer read(const std::filesystem::path& dir);

 private:
  std::vector<TensorEntry> entries_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace mvhand
