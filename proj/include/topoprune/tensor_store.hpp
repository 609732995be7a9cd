#pragma once

// Named f32 tensor container.
//
// Layout: u64 little-endian header length n, n bytes of compact JSON mapping
// each tensor name to {"data_offsets":[b,e],"dtype":"F32","shape":[...]}
// plus an optional "__metadata__" string map, then the raw little-endian
// data block. Offsets are relative to the start of the data block. Readers
// of the safetensors format accept these files unchanged.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "topoprune/error.hpp"

namespace topoprune {

static_assert(std::endian::native == std::endian::little,
              "tensor store assumes a little-endian host");

using Shape = std::vector<std::int64_t>;

inline std::int64_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1},
                         std::multiplies<>());
}

// Row-major f32 tensor.
struct Tensor {
  std::string name;
  Shape shape;
  std::vector<float> data;

  Tensor() = default;
  Tensor(std::string n, Shape s) : name(std::move(n)), shape(std::move(s)) {
    data.assign(static_cast<std::size_t>(element_count(shape)), 0.0f);
  }
  Tensor(std::string n, Shape s, std::vector<float> d)
      : name(std::move(n)), shape(std::move(s)), data(std::move(d)) {
    require(static_cast<std::int64_t>(data.size()) == element_count(shape),
            "tensor '" + name + "': element count does not match shape");
  }

  std::int64_t rows() const { return shape.empty() ? 1 : shape[0]; }
  std::int64_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  float& at(std::int64_t r, std::int64_t c) {
    return data[static_cast<std::size_t>(r * cols() + c)];
  }
  float at(std::int64_t r, std::int64_t c) const {
    return data[static_cast<std::size_t>(r * cols() + c)];
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

struct ManifestEntry {
  Shape shape;
  std::uint64_t begin = 0;
  std::uint64_t end = 0;
};

using Metadata = std::map<std::string, std::string>;

namespace detail {

inline void check_name(const std::string& name) {
  require(!name.empty(), "tensor store: empty tensor name");
  require(name != "__metadata__", "tensor store: reserved tensor name");
}

}  // namespace detail

// Serialize to the container bytes. Tensors are laid out in ascending name
// order, so equal inputs always give equal bytes.
inline std::string serialize_store(std::span<const Tensor> tensors, const Metadata& metadata = {}) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& t : tensors) {
    detail::check_name(t.name);
    require(static_cast<std::int64_t>(t.data.size()) == element_count(t.shape),
            "tensor '" + t.name + "': element count does not match shape");
    for (const auto dim : t.shape) require(dim >= 0, "tensor '" + t.name + "': negative dimension");
    if (!by_name.emplace(t.name, &t).second) {
      throw Error(ErrorCode::kDuplicateName, "tensor store: duplicate tensor name '" + t.name + "'");
    }
  }

  nlohmann::json header = nlohmann::json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : by_name) {
    const std::uint64_t bytes = t->data.size() * sizeof(float);
    header[name] = {{"dtype", "F32"}, {"shape", t->shape}, {"data_offsets", {offset, offset + bytes}}};
    offset += bytes;
  }
  if (!metadata.empty()) header["__metadata__"] = metadata;

  const std::string json_text = header.dump();
  const std::uint64_t header_len = json_text.size();
  std::string out;
  out.reserve(8 + json_text.size() + offset);
  out.append(reinterpret_cast<const char*>(&header_len), 8);
  out += json_text;
  for (const auto& [name, t] : by_name) {
    out.append(reinterpret_cast<const char*>(t->data.data()), t->data.size() * sizeof(float));
  }
  return out;
}

inline void write_store(const std::filesystem::path& path, std::span<const Tensor> tensors,
                        const Metadata& metadata = {}) {
  const std::string bytes = serialize_store(tensors, metadata);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIo, "write failed for '" + path.string() + "'");
}

// An opened container. Only the header is parsed up front; tensor data is
// read on demand, so concurrent loads from one store are safe.
class TensorStore {
 public:
  static TensorStore open(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::kIo, "cannot open '" + path.string() + "'");
    std::error_code ec;
    const std::uint64_t file_size = std::filesystem::file_size(path, ec);
    if (ec) throw Error(ErrorCode::kIo, "cannot stat '" + path.string() + "'");
    if (file_size < 8) throw Error(ErrorCode::kHeaderLength, "tensor store: file shorter than 8 bytes");
    std::uint64_t header_len = 0;
    in.read(reinterpret_cast<char*>(&header_len), 8);
    if (header_len > file_size - 8) {
      throw Error(ErrorCode::kHeaderLength, "tensor store: header length exceeds file size");
    }
    std::string header(header_len, '\0');
    in.read(header.data(), static_cast<std::streamsize>(header_len));
    if (!in) throw Error(ErrorCode::kIo, "read failed for '" + path.string() + "'");
    TensorStore store = parse(header, file_size - 8 - header_len);
    store.path_ = path;
    return store;
  }

  // Parse an in-memory container; tensors are served from the buffer.
  static TensorStore from_bytes(std::string bytes) {
    if (bytes.size() < 8) throw Error(ErrorCode::kHeaderLength, "tensor store: buffer shorter than 8 bytes");
    std::uint64_t header_len = 0;
    std::memcpy(&header_len, bytes.data(), 8);
    if (header_len > bytes.size() - 8) {
      throw Error(ErrorCode::kHeaderLength, "tensor store: header length exceeds buffer size");
    }
    TensorStore store = parse(bytes.substr(8, header_len), bytes.size() - 8 - header_len);
    store.buffer_ = std::move(bytes);
    return store;
  }

  const std::map<std::string, ManifestEntry>& entries() const noexcept { return entries_; }
  const Metadata& metadata() const noexcept { return metadata_; }
  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [name, e] : entries_) out.push_back(name);
    return out;
  }

  const ManifestEntry& entry(const std::string& name) const {
    const auto it = entries_.find(name);
    if (it == entries_.end()) throw Error(ErrorCode::kNotFound, "tensor '" + name + "' not found");
    return it->second;
  }

  Tensor load(const std::string& name) const {
    const auto& e = entry(name);
    const std::size_t bytes = e.end - e.begin;
    std::vector<float> data(bytes / sizeof(float));
    if (path_.empty()) {
      std::memcpy(data.data(), buffer_.data() + data_start_ + e.begin, bytes);
    } else {
      std::ifstream in(path_, std::ios::binary);
      if (!in) throw Error(ErrorCode::kIo, "cannot reopen '" + path_.string() + "'");
      in.seekg(static_cast<std::streamoff>(data_start_ + e.begin));
      in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(bytes));
      if (!in) throw Error(ErrorCode::kTruncated, "short read for tensor '" + name + "'");
    }
    return Tensor(name, e.shape, std::move(data));
  }

  std::vector<Tensor> load_all() const {
    std::vector<Tensor> out;
    out.reserve(entries_.size());
    for (const auto& [name, e] : entries_) out.push_back(load(name));
    return out;
  }

 private:
  static TensorStore parse(const std::string& header_text, std::uint64_t data_size) {
    nlohmann::json header;
    try {
      header = nlohmann::json::parse(header_text);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kHeaderFormat, std::string("tensor store: bad header JSON: ") + e.what());
    }
    if (!header.is_object()) throw Error(ErrorCode::kHeaderFormat, "tensor store: header is not an object");

    TensorStore store;
    store.data_start_ = 8 + header_text.size();

    std::vector<std::pair<std::uint64_t, std::uint64_t>> ranges;
    for (const auto& [name, value] : header.items()) {
      if (name == "__metadata__") {
        if (!value.is_object()) throw Error(ErrorCode::kHeaderFormat, "tensor store: __metadata__ is not an object");
        for (const auto& [k, v] : value.items()) {
          if (!v.is_string()) throw Error(ErrorCode::kHeaderFormat, "tensor store: metadata values must be strings");
          store.metadata_[k] = v.get<std::string>();
        }
        continue;
      }
      if (name.empty()) throw Error(ErrorCode::kBadEntry, "tensor store: empty tensor name");
      ManifestEntry entry;
      try {
        if (value.at("dtype").get<std::string>() != "F32") {
          throw Error(ErrorCode::kBadEntry, "tensor '" + name + "': unsupported dtype");
        }
        entry.shape = value.at("shape").get<Shape>();
        const auto offsets = value.at("data_offsets").get<std::vector<std::uint64_t>>();
        if (offsets.size() != 2) throw Error(ErrorCode::kBadEntry, "tensor '" + name + "': bad data_offsets");
        entry.begin = offsets[0];
        entry.end = offsets[1];
      } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::kBadEntry, "tensor '" + name + "': " + e.what());
      }
      for (const auto dim : entry.shape) {
        if (dim < 0) throw Error(ErrorCode::kBadEntry, "tensor '" + name + "': negative dimension");
      }
      if (entry.end < entry.begin ||
          entry.end - entry.begin != 4 * static_cast<std::uint64_t>(element_count(entry.shape))) {
        throw Error(ErrorCode::kBadEntry, "tensor '" + name + "': byte range does not match shape");
      }
      if (entry.end > data_size) {
        throw Error(ErrorCode::kTruncated, "tensor '" + name + "': data extends past end of file");
      }
      ranges.emplace_back(entry.begin, entry.end);
      store.entries_.emplace(name, std::move(entry));
    }

    std::sort(ranges.begin(), ranges.end());
    for (std::size_t i = 1; i < ranges.size(); ++i) {
      if (ranges[i].first < ranges[i - 1].second) {
        throw Error(ErrorCode::kOverlap, "tensor store: overlapping tensor byte ranges");
      }
    }
    return store;
  }

  std::filesystem::path path_;
  std::string buffer_;
  std::uint64_t data_start_ = 0;
  std::map<std::string, ManifestEntry> entries_;
  Metadata metadata_;
};

// Fully loaded tensor set keyed by name, plus its metadata.
struct Checkpoint {
  std::map<std::string, Tensor> tensors;
  Metadata metadata;

  void add(Tensor t) {
    const std::string name = t.name;
    if (!tensors.emplace(name, std::move(t)).second) {
      throw Error(ErrorCode::kDuplicateName, "checkpoint: duplicate tensor '" + name + "'");
    }
  }

  const Tensor& get(const std::string& name) const {
    const auto it = tensors.find(name);
    if (it == tensors.end()) throw Error(ErrorCode::kNotFound, "checkpoint: missing tensor '" + name + "'");
    return it->second;
  }
  Tensor& get(const std::string& name) {
    const auto it = tensors.find(name);
    if (it == tensors.end()) throw Error(ErrorCode::kNotFound, "checkpoint: missing tensor '" + name + "'");
    return it->second;
  }
  bool contains(const std::string& name) const { return tensors.count(name) != 0; }

  std::vector<Tensor> list() const {
    std::vector<Tensor> out;
    out.reserve(tensors.size());
    for (const auto& [name, t] : tensors) out.push_back(t);
    return out;
  }

  std::string serialize() const { return serialize_store(list(), metadata); }

  static Checkpoint from_store(const TensorStore& store) {
    Checkpoint c;
    for (auto& t : store.load_all()) c.add(std::move(t));
    c.metadata = store.metadata();
    return c;
  }
};

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
  return Checkpoint::from_store(TensorStore::open(path));
}

inline void write_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  write_store(path, c.list(), c.metadata);
}

}  // namespace topoprune
