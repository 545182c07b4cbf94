#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "clap/tensor.hpp"

namespace clap {

/// Named tensors plus string metadata, as stored in a tensor container:
///   u64 little-endian header length N | N bytes JSON header | raw F32 data
/// The header maps each name to {"dtype":"F32","shape":[...],"data_offsets":[b,e]}
/// (offsets relative to the end of the header) and holds "__metadata__".
struct TensorFile {
  std::map<std::string, Tensor> tensors;
  std::map<std::string, std::string> metadata;
};

/// Throws IoError on short reads and SchemaError/ShapeError on a bad header.
TensorFile read_tensor_file(const std::filesystem::path& path);
TensorFile parse_tensor_file(const std::string& bytes);

/// Data is laid out in `order` (remaining names follow alphabetically), the
/// header JSON has sorted keys and is space-padded to a multiple of 8 bytes,
/// so equal inputs give byte-identical files.
std::string serialize_tensor_file(const TensorFile& file, const std::vector<std::string>& order = {});
void write_tensor_file(const std::filesystem::path& path, const TensorFile& file,
                       const std::vector<std::string>& order = {});

}  // namespace clap
