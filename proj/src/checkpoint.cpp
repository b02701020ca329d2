#include "offnadir/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "offnadir/tensor_io.hpp"

namespace offnadir {

namespace {

constexpr char kMagic[7] = {'U', 'N', 'C', 'K', 'P', 'T', '1'};
constexpr uint8_t kVersion = 1;

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint: truncated stream");
  return v;
}

void put_string(std::ostream& os, const std::string& s) {
  if (s.size() > 0xFFFF) throw std::invalid_argument("checkpoint: name too long");
  put<uint16_t>(os, static_cast<uint16_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is) {
  uint16_t n = get<uint16_t>(is);
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw std::runtime_error("checkpoint: truncated string");
  return s;
}

void write_store(std::ostream& os, const ParameterStore& ps) {
  put<uint32_t>(os, static_cast<uint32_t>(ps.size()));
  for (const auto& e : ps) {
    put_string(os, e.name);
    put<uint8_t>(os, e.decay ? 1 : 0);
    write_tensor(os, e.value);
  }
}

// Reads stored entries into an already-built store; names, order and shapes
// must match the architecture implied by the config.
void read_store_into(std::istream& is, ParameterStore& ps, const char* what) {
  uint32_t n = get<uint32_t>(is);
  if (n != ps.size())
    throw std::runtime_error(std::string("checkpoint: ") + what + " count mismatch");
  for (uint32_t i = 0; i < n; ++i) {
    std::string name = get_string(is);
    uint8_t decay = get<uint8_t>(is);
    auto& e = ps.entry(i);
    if (e.name != name)
      throw std::runtime_error(std::string("checkpoint: unexpected ") + what + " '" + name +
                               "', wanted '" + e.name + "'");
    if ((decay != 0) != e.decay)
      throw std::runtime_error("checkpoint: decay flag mismatch for " + name);
    AnyTensor t = read_tensor(is);
    auto* f = std::get_if<Tensor>(&t);
    if (!f) throw std::runtime_error("checkpoint: non-f32 tensor for " + name);
    if (!f->same_shape(e.value))
      throw std::runtime_error("checkpoint: shape mismatch for " + name);
    e.value = std::move(*f);
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint for write: " + path.string());
  f.write(kMagic, sizeof(kMagic));
  put<uint8_t>(f, kVersion);
  const ModelConfig& c = ckpt.model.config;
  put<int32_t>(f, c.input_channels);
  put<int32_t>(f, c.base_channels);
  put<int32_t>(f, c.encoder_depth);
  put<int32_t>(f, c.metadata_dim);
  put<int32_t>(f, c.input_size);
  put<float>(f, c.dropout_rate);
  put<uint8_t>(f, static_cast<uint8_t>(c.uncertainty));
  put<uint8_t>(f, static_cast<uint8_t>(c.injection));
  put<double>(f, ckpt.stats.angle_mean);
  put<double>(f, ckpt.stats.angle_std);
  put<double>(f, ckpt.stats.gsd_mean);
  put<double>(f, ckpt.stats.gsd_std);
  put<int64_t>(f, ckpt.iterations);
  write_store(f, ckpt.model.params);
  write_store(f, ckpt.model.buffers);
  put<uint8_t>(f, ckpt.adam ? 1 : 0);
  if (ckpt.adam) {
    const AdamState& a = *ckpt.adam;
    put<int64_t>(f, a.step);
    for (const auto& t : a.m) write_tensor(f, t);
    for (const auto& t : a.v) write_tensor(f, t);
  }
  if (!f) throw std::runtime_error("checkpoint write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path.string());
  char magic[sizeof(kMagic)];
  f.read(magic, sizeof(magic));
  if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path.string());
  uint8_t ver = get<uint8_t>(f);
  if (ver != kVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(ver));
  ModelConfig c;
  c.input_channels = get<int32_t>(f);
  c.base_channels = get<int32_t>(f);
  c.encoder_depth = get<int32_t>(f);
  c.metadata_dim = get<int32_t>(f);
  c.input_size = get<int32_t>(f);
  c.dropout_rate = get<float>(f);
  c.uncertainty = static_cast<UncertaintyMode>(get<uint8_t>(f));
  c.injection = static_cast<InjectionMode>(get<uint8_t>(f));
  Checkpoint ck;
  ck.stats.angle_mean = get<double>(f);
  ck.stats.angle_std = get<double>(f);
  ck.stats.gsd_mean = get<double>(f);
  ck.stats.gsd_std = get<double>(f);
  ck.iterations = get<int64_t>(f);
  Rng dummy(0);
  ck.model = build_model(c, dummy);
  read_store_into(f, ck.model.params, "parameter");
  read_store_into(f, ck.model.buffers, "buffer");
  uint8_t has_adam = get<uint8_t>(f);
  if (has_adam) {
    AdamState a = init_adam(ck.model.params);
    a.step = get<int64_t>(f);
    auto read_slots = [&](std::vector<Tensor>& slots) {
      for (size_t i = 0; i < slots.size(); ++i) {
        AnyTensor t = read_tensor(f);
        auto* fl = std::get_if<Tensor>(&t);
        if (!fl || !fl->same_shape(slots[i]))
          throw std::runtime_error("checkpoint: bad optimizer slot");
        slots[i] = std::move(*fl);
      }
    };
    read_slots(a.m);
    read_slots(a.v);
    ck.adam = std::move(a);
  }
  return ck;
}

}  // namespace offnadir
