#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ceph/nn.hpp"

namespace ceph {

// Binary parameter container:
//
//   "CEPHWTS1"                      magic
//   u32 length, bytes               architecture signature
//   u32 tensor count
//   per tensor: u32 length, name bytes, u32 rank, i32 dims[rank]
//   per tensor, same order: float64 values (little-endian, row-major)
//
// The name/shape table precedes the payload so a reader can reject an
// incompatible file before touching any values.
struct TensorFile {
  std::string signature;
  std::vector<std::string> names;
  std::vector<Tensor> tensors;
};

void write_tensor_file(const std::filesystem::path& path, const std::string& signature,
                       std::span<const nn::Parameter* const> params);
TensorFile read_tensor_file(const std::filesystem::path& path);

/// Copies values into `params`, matching by position and name. Throws
/// FormatError naming the first offending layer on any signature, name or
/// shape mismatch.
void assign_parameters(const TensorFile& file, const std::string& expected_signature,
                       std::span<nn::Parameter* const> params);

std::string sha256_hex(std::span<const unsigned char> bytes);
std::string sha256_file(const std::filesystem::path& path);
std::string sha256_string(const std::string& text);

}  // namespace ceph
