#include "msw/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace msw {

namespace {

constexpr char kMagic[4] = {'M', 'S', 'W', 'T'};

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

void put_f64(std::ostream& os, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(os, bits);
}

bool get_bytes(std::istream& is, void* out, size_t n) {
  is.read(reinterpret_cast<char*>(out), static_cast<std::streamsize>(n));
  return static_cast<size_t>(is.gcount()) == n;
}

bool get_u32(std::istream& is, uint32_t& v) {
  unsigned char b[4];
  if (!get_bytes(is, b, 4)) return false;
  v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return true;
}

bool get_u64(std::istream& is, uint64_t& v) {
  unsigned char b[8];
  if (!get_bytes(is, b, 8)) return false;
  v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return true;
}

bool get_f64(std::istream& is, double& v) {
  uint64_t bits;
  if (!get_u64(is, bits)) return false;
  std::memcpy(&v, &bits, 8);
  return true;
}

}  // namespace

void save_checkpoint(const std::string& path,
                     const std::vector<ad::Tensor>& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os.write(kMagic, 4);
  put_u32(os, kCheckpointVersion);
  for (const auto& t : tensors) {
    const std::string& name = t.name();
    put_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(os, static_cast<uint32_t>(t.shape().size()));
    for (int e : t.shape()) put_u64(os, static_cast<uint64_t>(e));
    for (double v : t.data()) put_f64(os, v);
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

std::vector<ad::Tensor> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[4];
  if (!get_bytes(is, magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error("bad checkpoint magic in " + path);
  }
  uint32_t version = 0;
  if (!get_u32(is, version) || version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version in " + path);
  }
  std::vector<ad::Tensor> out;
  while (true) {
    uint32_t name_len = 0;
    if (!get_u32(is, name_len)) {
      if (is.eof() && is.gcount() == 0) break;  // clean end of records
      throw std::runtime_error("truncated checkpoint: " + path);
    }
    std::string name(name_len, '\0');
    if (name_len > 0 && !get_bytes(is, name.data(), name_len)) {
      throw std::runtime_error("truncated checkpoint: " + path);
    }
    uint32_t rank = 0;
    if (!get_u32(is, rank)) throw std::runtime_error("truncated checkpoint: " + path);
    ad::Shape shape(rank);
    int64_t count = 1;
    for (uint32_t i = 0; i < rank; ++i) {
      uint64_t e = 0;
      if (!get_u64(is, e) || e == 0) {
        throw std::runtime_error("bad extents in checkpoint: " + path);
      }
      shape[i] = static_cast<int>(e);
      count *= static_cast<int64_t>(e);
    }
    std::vector<double> data(static_cast<size_t>(count));
    for (auto& v : data) {
      if (!get_f64(is, v)) throw std::runtime_error("truncated checkpoint: " + path);
    }
    ad::Tensor t = ad::Tensor::from_data(std::move(shape), std::move(data));
    t.set_name(std::move(name));
    out.push_back(std::move(t));
  }
  return out;
}

ad::Tensor find_tensor(const std::vector<ad::Tensor>& tensors,
                       const std::string& name) {
  for (const auto& t : tensors) {
    if (t.name() == name) return t;
  }
  return {};
}

}  // namespace msw
