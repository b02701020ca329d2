#include "offnadir/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace offnadir {

static_assert(std::endian::native == std::endian::little,
              "tensor container assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'T', 'E', 'N', 'S'};
constexpr uint8_t kVersion = 1;

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("tensor stream: truncated header");
  return v;
}

template <typename T>
void write_impl(std::ostream& os, const TensorT<T>& t, uint8_t dtype) {
  os.write(kMagic, 4);
  put<uint8_t>(os, kVersion);
  put<uint8_t>(os, dtype);
  if (t.rank() > 0xFFFF) throw std::invalid_argument("tensor rank too large");
  put<uint16_t>(os, static_cast<uint16_t>(t.rank()));
  for (int d : t.shape()) put<uint32_t>(os, static_cast<uint32_t>(d));
  os.write(reinterpret_cast<const char*>(t.data()),
           static_cast<std::streamsize>(t.size() * sizeof(T)));
  if (!os) throw std::runtime_error("tensor stream: write failed");
}

template <typename T>
TensorT<T> read_payload(std::istream& is, const std::vector<int>& shape) {
  TensorT<T> t(shape);
  is.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(t.size() * sizeof(T)));
  if (!is) throw std::runtime_error("tensor stream: truncated payload");
  return t;
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) { write_impl(os, t, 0); }
void write_tensor(std::ostream& os, const TensorD& t) { write_impl(os, t, 1); }

void write_tensor(const std::filesystem::path& p, const Tensor& t) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + p.string());
  write_tensor(f, t);
}

void write_tensor(const std::filesystem::path& p, const TensorD& t) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + p.string());
  write_tensor(f, t);
}

AnyTensor read_tensor(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("tensor stream: bad magic");
  uint8_t ver = get<uint8_t>(is);
  if (ver != kVersion)
    throw std::runtime_error("tensor stream: unsupported version " + std::to_string(ver));
  uint8_t dtype = get<uint8_t>(is);
  uint16_t rank = get<uint16_t>(is);
  std::vector<int> shape(rank);
  for (int i = 0; i < rank; ++i) {
    uint32_t d = get<uint32_t>(is);
    if (d == 0) throw std::runtime_error("tensor stream: zero dim");
    shape[i] = static_cast<int>(d);
  }
  if (dtype == 0) return read_payload<float>(is, shape);
  if (dtype == 1) return read_payload<double>(is, shape);
  throw std::runtime_error("tensor stream: unknown dtype " + std::to_string(dtype));
}

AnyTensor read_tensor(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for read: " + p.string());
  return read_tensor(f);
}

Tensor read_tensor_f32(const std::filesystem::path& p) {
  AnyTensor t = read_tensor(p);
  if (auto* f = std::get_if<Tensor>(&t)) return std::move(*f);
  throw std::runtime_error("expected f32 tensor in " + p.string());
}

TensorD read_tensor_f64(const std::filesystem::path& p) {
  AnyTensor t = read_tensor(p);
  if (auto* d = std::get_if<TensorD>(&t)) return std::move(*d);
  throw std::runtime_error("expected f64 tensor in " + p.string());
}

}  // namespace offnadir
