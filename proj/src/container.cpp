#include "clap/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "clap/error.hpp"
#include "json.hpp"

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

namespace clap {

TensorFile parse_tensor_file(const std::string& bytes) {
  if (bytes.size() < 8) throw IoError("tensor file truncated: missing 8-byte header length");
  std::uint64_t header_len = 0;
  std::memcpy(&header_len, bytes.data(), 8);
  if (header_len > bytes.size() - 8) {
    throw IoError("tensor file truncated: header length " + std::to_string(header_len) +
                  " exceeds file size " + std::to_string(bytes.size()));
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError(std::string("tensor file header is not valid JSON: ") + e.what());
  }
  if (!header.is_object()) throw SchemaError("tensor file header must be a JSON object");

  const std::size_t base = 8 + header_len;
  const std::size_t data_len = bytes.size() - base;
  TensorFile out;
  for (auto it = header.begin(); it != header.end(); ++it) {
    const std::string& name = it.key();
    const auto& entry = it.value();
    if (name == "__metadata__") {
      if (!entry.is_object()) throw SchemaError("__metadata__ must be an object");
      for (auto m = entry.begin(); m != entry.end(); ++m) {
        if (!m.value().is_string()) throw SchemaError("metadata value for '" + m.key() + "' must be a string");
        out.metadata[m.key()] = m.value().get<std::string>();
      }
      continue;
    }
    if (!entry.is_object() || !entry.contains("dtype") || !entry.contains("shape") ||
        !entry.contains("data_offsets")) {
      throw SchemaError("tensor '" + name + "' needs dtype, shape and data_offsets");
    }
    if (entry["dtype"] != "F32") {
      throw SchemaError("tensor '" + name + "' has dtype " + entry["dtype"].dump() + ", only F32 is supported");
    }
    Shape shape;
    for (const auto& d : entry["shape"]) {
      if (!d.is_number_unsigned()) throw SchemaError("tensor '" + name + "' has a non-integer dimension");
      shape.push_back(d.get<std::size_t>());
    }
    const auto& offs = entry["data_offsets"];
    if (!offs.is_array() || offs.size() != 2 || !offs[0].is_number_unsigned() || !offs[1].is_number_unsigned()) {
      throw SchemaError("tensor '" + name + "' has malformed data_offsets");
    }
    const auto begin = offs[0].get<std::size_t>();
    const auto end = offs[1].get<std::size_t>();
    if (end < begin) throw SchemaError("tensor '" + name + "' has end offset before begin");
    if (end > data_len) {
      throw IoError("tensor file truncated: '" + name + "' ends at " + std::to_string(end) +
                    " but only " + std::to_string(data_len) + " data bytes are present");
    }
    const std::size_t numel = shape_numel(shape);
    if (end - begin != numel * sizeof(float)) {
      throw ShapeError("tensor '" + name + "' shape " + shape_to_string(shape) + " needs " +
                       std::to_string(numel * sizeof(float)) + " bytes, offsets span " +
                       std::to_string(end - begin));
    }
    std::vector<float> data(numel);
    if (numel) std::memcpy(data.data(), bytes.data() + base + begin, numel * sizeof(float));
    out.tensors.emplace(name, Tensor(std::move(shape), std::move(data)));
  }
  return out;
}

TensorFile read_tensor_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open tensor file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_tensor_file(ss.str());
}

std::string serialize_tensor_file(const TensorFile& file, const std::vector<std::string>& order) {
  std::vector<std::string> names;
  std::set<std::string> placed;
  for (const auto& n : order) {
    if (file.tensors.contains(n) && placed.insert(n).second) names.push_back(n);
  }
  for (const auto& [n, t] : file.tensors) {
    if (placed.insert(n).second) names.push_back(n);
  }

  nlohmann::json header = nlohmann::json::object();
  std::size_t offset = 0;
  for (const auto& n : names) {
    const Tensor& t = file.tensors.at(n);
    const std::size_t bytes = t.numel() * sizeof(float);
    header[n] = {{"dtype", "F32"}, {"shape", t.shape()}, {"data_offsets", {offset, offset + bytes}}};
    offset += bytes;
  }
  if (!file.metadata.empty()) header["__metadata__"] = file.metadata;

  std::string json = header.dump();
  json.append((8 - json.size() % 8) % 8, ' ');
  const std::uint64_t header_len = json.size();

  std::string out;
  out.reserve(8 + json.size() + offset);
  out.append(reinterpret_cast<const char*>(&header_len), 8);
  out += json;
  for (const auto& n : names) {
    const Tensor& t = file.tensors.at(n);
    out.append(reinterpret_cast<const char*>(t.data().data()), t.numel() * sizeof(float));
  }
  return out;
}

void write_tensor_file(const std::filesystem::path& path, const TensorFile& file,
                       const std::vector<std::string>& order) {
  const std::string bytes = serialize_tensor_file(file, order);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write tensor file " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

}  // namespace clap
