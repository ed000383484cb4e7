#include "mvhand/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "mvhand/common.hpp"

namespace mvhand {

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

namespace {

constexpr const char* kFormat = "mvhand-container";
constexpr int kFormatVersion = 1;

const char* dtype_name(DType d) {
  return d == DType::kFloat32 ? "float32" : "int32";
}

void put_u32(std::vector<char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

}  // namespace

std::int64_t TensorEntry::numel() const {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

void TensorContainer::add_f32(std::string name, std::vector<std::int64_t> shape,
                              std::vector<float> values) {
  TensorEntry e;
  e.name = std::move(name);
  e.shape = std::move(shape);
  e.dtype = DType::kFloat32;
  e.f32 = std::move(values);
  if (e.numel() != static_cast<std::int64_t>(e.f32.size()))
    throw ShapeMismatch("tensor '" + e.name + "': value count does not match shape");
  if (index_.count(e.name)) throw ContainerError("duplicate tensor '" + e.name + "'");
  index_[e.name] = entries_.size();
  entries_.push_back(std::move(e));
}

void TensorContainer::add_i32(std::string name, std::vector<std::int64_t> shape,
                              std::vector<std::int32_t> values) {
  TensorEntry e;
  e.name = std::move(name);
  e.shape = std::move(shape);
  e.dtype = DType::kInt32;
  e.i32 = std::move(values);
  if (e.numel() != static_cast<std::int64_t>(e.i32.size()))
    throw ShapeMismatch("tensor '" + e.name + "': value count does not match shape");
  if (index_.count(e.name)) throw ContainerError("duplicate tensor '" + e.name + "'");
  index_[e.name] = entries_.size();
  entries_.push_back(std::move(e));
}

bool TensorContainer::contains(const std::string& name) const {
  return index_.count(name) > 0;
}

const TensorEntry& TensorContainer::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ShapeMismatch("missing tensor '" + name + "'");
  return entries_[it->second];
}

void TensorContainer::write(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::vector<char> payload;
  nlohmann::json index = nlohmann::json::array();
  for (const auto& e : entries_) {
    const std::size_t offset = payload.size();
    if (e.dtype == DType::kFloat32) {
      for (float f : e.f32) put_u32(payload, std::bit_cast<std::uint32_t>(f));
    } else {
      for (std::int32_t v : e.i32) put_u32(payload, static_cast<std::uint32_t>(v));
    }
    index.push_back({{"name", e.name},
                     {"shape", e.shape},
                     {"dtype", dtype_name(e.dtype)},
                     {"offset", offset},
                     {"nbytes", payload.size() - offset}});
  }
  nlohmann::json manifest = meta;
  manifest["format"] = kFormat;
  manifest["format_version"] = kFormatVersion;
  manifest["data_bytes"] = payload.size();
  manifest["tensor_index"] = index;

  {
    std::ofstream bin(dir / "data.bin", std::ios::binary | std::ios::trunc);
    if (!bin) throw ContainerError("cannot open " + (dir / "data.bin").string());
    bin.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!bin) throw ContainerError("write failed: " + (dir / "data.bin").string());
  }
  std::ofstream js(dir / "manifest.json", std::ios::trunc);
  if (!js) throw ContainerError("cannot open " + (dir / "manifest.json").string());
  js << manifest.dump(1) << '\n';
}

TensorContainer TensorContainer::read(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  const auto data_path = dir / "data.bin";
  std::ifstream js(manifest_path);
  if (!js) throw ContainerError("cannot open " + manifest_path.string());

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(js);
  } catch (const nlohmann::json::exception& ex) {
    throw CorruptManifest(manifest_path.string() + ": " + ex.what());
  }

  struct Slot {
    TensorEntry entry;
    std::uint64_t offset;
    std::uint64_t nbytes;
  };
  std::vector<Slot> slots;
  std::uint64_t data_bytes = 0;
  try {
    if (!manifest.is_object() || manifest.value("format", "") != kFormat)
      throw CorruptManifest("not an mvhand container manifest");
    if (manifest.at("format_version").get<int>() != kFormatVersion)
      throw CorruptManifest("unsupported format_version");
    data_bytes = manifest.at("data_bytes").get<std::uint64_t>();
    const auto& index = manifest.at("tensor_index");
    if (!index.is_array()) throw CorruptManifest("tensor_index is not an array");
    for (const auto& item : index) {
      Slot s;
      s.entry.name = item.at("name").get<std::string>();
      s.entry.shape = item.at("shape").get<std::vector<std::int64_t>>();
      const auto dtype = item.at("dtype").get<std::string>();
      if (dtype == "float32") {
        s.entry.dtype = DType::kFloat32;
      } else if (dtype == "int32") {
        s.entry.dtype = DType::kInt32;
      } else {
        throw CorruptManifest("unknown dtype '" + dtype + "'");
      }
      for (auto d : s.entry.shape)
        if (d < 0) throw CorruptManifest("negative dimension in '" + s.entry.name + "'");
      s.offset = item.at("offset").get<std::uint64_t>();
      s.nbytes = item.at("nbytes").get<std::uint64_t>();
      if (s.nbytes != static_cast<std::uint64_t>(s.entry.numel()) * 4)
        throw ShapeMismatch("tensor '" + s.entry.name + "': byte count does not match shape");
      slots.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw CorruptManifest(manifest_path.string() + ": " + ex.what());
  }

  // Offsets must be disjoint; bounds are checked against the real file size.
  std::vector<std::pair<std::uint64_t, std::uint64_t>> ranges;
  for (const auto& s : slots) ranges.emplace_back(s.offset, s.offset + s.nbytes);
  std::sort(ranges.begin(), ranges.end());
  for (std::size_t i = 1; i < ranges.size(); ++i)
    if (ranges[i].first < ranges[i - 1].second)
      throw CorruptManifest("overlapping tensor ranges");

  std::error_code ec;
  const auto file_size = std::filesystem::file_size(data_path, ec);
  if (ec) throw TruncatedPayload("missing payload " + data_path.string());
  if (file_size < data_bytes)
    throw TruncatedPayload("payload shorter than manifest data_bytes");
  for (const auto& r : ranges)
    if (r.second > file_size || r.second > data_bytes)
      throw TruncatedPayload("tensor range beyond end of payload");

  std::ifstream bin(data_path, std::ios::binary);
  std::vector<char> payload(file_size);
  bin.read(payload.data(), static_cast<std::streamsize>(file_size));
  if (!bin) throw TruncatedPayload("short read on " + data_path.string());

  TensorContainer out;
  out.meta = manifest;
  out.meta.erase("tensor_index");
  for (auto& s : slots) {
    const char* p = payload.data() + s.offset;
    const auto n = static_cast<std::size_t>(s.entry.numel());
    if (s.entry.dtype == DType::kFloat32) {
      s.entry.f32.resize(n);
      for (std::size_t i = 0; i < n; ++i) s.entry.f32[i] = std::bit_cast<float>(get_u32(p + 4 * i));
    } else {
      s.entry.i32.resize(n);
      for (std::size_t i = 0; i < n; ++i)
        s.entry.i32[i] = static_cast<std::int32_t>(get_u32(p + 4 * i));
    }
    if (out.index_.count(s.entry.name)) throw CorruptManifest("duplicate tensor '" + s.entry.name + "'");
    out.index_[s.entry.name] = out.entries_.size();
    out.entries_.push_back(std::move(s.entry));
  }
  return out;
}

}  // namespace mvhand
