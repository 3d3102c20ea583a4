#include "ceph/serialize.hpp"

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <openssl/evp.h>

namespace ceph {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'C', 'E', 'P', 'H', 'W', 'T', 'S', '1'};
constexpr std::uint32_t kMaxString = 1u << 20;

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in, const fs::path& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw FormatError("truncated weight file: " + path.string());
  return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::string get_string(std::istream& in, const fs::path& path) {
  const std::uint32_t len = get_u32(in, path);
  if (len > kMaxString) throw FormatError("corrupt string length in " + path.string());
  std::string s(len, '\0');
  if (!in.read(s.data(), len)) throw FormatError("truncated weight file: " + path.string());
  return s;
}

}  // namespace

void write_tensor_file(const fs::path& path, const std::string& signature,
                       std::span<const nn::Parameter* const> params) {
  static_assert(sizeof(double) == 8);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write weights: " + path.string());
  out.write(kMagic, sizeof kMagic);
  put_u32(out, static_cast<std::uint32_t>(signature.size()));
  out.write(signature.data(), static_cast<std::streamsize>(signature.size()));
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const nn::Parameter* p : params) {
    put_u32(out, static_cast<std::uint32_t>(p->name.size()));
    out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    put_u32(out, static_cast<std::uint32_t>(p->value.rank()));
    for (int d : p->value.shape()) put_u32(out, static_cast<std::uint32_t>(d));
  }
  for (const nn::Parameter* p : params) {
    out.write(reinterpret_cast<const char*>(p->value.data()),
              static_cast<std::streamsize>(p->value.size() * sizeof(double)));
  }
  if (!out) throw IoError("write failed: " + path.string());
}

TensorFile read_tensor_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("weights not found: " + path.string());
  char magic[sizeof kMagic];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw FormatError("not a weight file: " + path.string());
  }
  TensorFile file;
  file.signature = get_string(in, path);
  const std::uint32_t count = get_u32(in, path);
  if (count > kMaxString) throw FormatError("corrupt tensor count in " + path.string());
  for (std::uint32_t i = 0; i < count; ++i) {
    file.names.push_back(get_string(in, path));
    const std::uint32_t rank = get_u32(in, path);
    if (rank == 0 || rank > 4) throw FormatError("bad rank for " + file.names.back());
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(get_u32(in, path));
    file.tensors.emplace_back(shape);
  }
  for (Tensor& t : file.tensors) {
    if (!in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)))) {
      throw FormatError("truncated weight file: " + path.string());
    }
  }
  return file;
}

void assign_parameters(const TensorFile& file, const std::string& expected_signature,
                       std::span<nn::Parameter* const> params) {
  // Shape table first, so the error names the layer rather than the signature.
  for (std::size_t i = 0; i < params.size(); ++i) {
    const nn::Parameter& p = *params[i];
    if (i >= file.tensors.size()) throw FormatError("weight file lacks layer " + p.name);
    if (file.names[i] != p.name) {
      throw FormatError("layer mismatch at position " + std::to_string(i) + ": file has " +
                        file.names[i] + ", model expects " + p.name);
    }
    if (file.tensors[i].shape() != p.value.shape()) {
      throw FormatError("shape mismatch in layer " + p.name + ": file " +
                        shape_string(file.tensors[i].shape()) + ", model " +
                        shape_string(p.value.shape()));
    }
  }
  if (file.tensors.size() != params.size()) {
    throw FormatError("weight file has " + std::to_string(file.tensors.size()) +
                      " tensors, model expects " + std::to_string(params.size()));
  }
  if (file.signature != expected_signature) {
    throw FormatError("architecture signature mismatch: file '" + file.signature +
                      "', model '" + expected_signature + "'");
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = file.tensors[i];
}

std::string sha256_hex(std::span<const unsigned char> bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return hex.str();
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return sha256_hex(bytes);
}

std::string sha256_string(const std::string& text) {
  return sha256_hex({reinterpret_cast<const unsigned char*>(text.data()), text.size()});
}

}  // namespace ceph
