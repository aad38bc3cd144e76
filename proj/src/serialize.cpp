#include "hepi/serialize.hpp"

#include <cstdio>
#include <cstring>

namespace hepi {

namespace {

constexpr char kMagic[4] = {'H', 'E', 'P', 'I'};

struct File {
  FILE* f = nullptr;
  explicit File(FILE* f_) : f(f_) {}
  ~File() { if (f) std::fclose(f); }
};

void write_raw(FILE* f, const void* p, size_t n) {
  if (std::fwrite(p, 1, n, f) != n)
    throw NumericsError("checkpoint: write failed");
}

void read_raw(FILE* f, void* p, size_t n) {
  if (std::fread(p, 1, n, f) != n)
    throw NumericsError("checkpoint: truncated file");
}

template <typename T>
void write_pod(FILE* f, T v) { write_raw(f, &v, sizeof(T)); }

template <typename T>
T read_pod(FILE* f) {
  T v;
  read_raw(f, &v, sizeof(T));
  return v;
}

}  // namespace

void save_tensors(const std::string& path,
                  const std::vector<std::pair<std::string, Tensor>>& items,
                  bool as_f32) {
  File fh(std::fopen(path.c_str(), "wb"));
  if (!fh.f) throw NumericsError("checkpoint: cannot open " + path);
  FILE* f = fh.f;
  write_raw(f, kMagic, 4);
  write_pod<uint32_t>(f, kCheckpointVersion);
  write_pod<uint32_t>(f, static_cast<uint32_t>(items.size()));
  for (const auto& [name, t] : items) {
    write_pod<uint32_t>(f, static_cast<uint32_t>(name.size()));
    write_raw(f, name.data(), name.size());
    write_pod<uint8_t>(f, as_f32 ? 1 : 0);
    write_pod<uint32_t>(f, 2);
    write_pod<uint64_t>(f, static_cast<uint64_t>(t.rows()));
    write_pod<uint64_t>(f, static_cast<uint64_t>(t.cols()));
    if (as_f32) {
      std::vector<float> buf(t.numel());
      for (int64_t i = 0; i < t.numel(); ++i)
        buf[i] = static_cast<float>(t.data()[i]);
      write_raw(f, buf.data(), buf.size() * sizeof(float));
    } else {
      write_raw(f, t.data(), static_cast<size_t>(t.numel()) * sizeof(double));
    }
  }
}

std::vector<std::pair<std::string, Tensor>> load_tensors(const std::string& path) {
  File fh(std::fopen(path.c_str(), "rb"));
  if (!fh.f) throw NumericsError("checkpoint: cannot open " + path);
  FILE* f = fh.f;
  char magic[4];
  read_raw(f, magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw NumericsError("checkpoint: bad magic");
  const auto version = read_pod<uint32_t>(f);
  if (version != kCheckpointVersion)
    throw NumericsError("checkpoint: unsupported version " + std::to_string(version));
  const auto count = read_pod<uint32_t>(f);
  std::vector<std::pair<std::string, Tensor>> out;
  out.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    const auto name_len = read_pod<uint32_t>(f);
    std::string name(name_len, '\0');
    read_raw(f, name.data(), name_len);
    const auto dtype = read_pod<uint8_t>(f);
    if (dtype > 1) throw NumericsError("checkpoint: unknown dtype tag");
    const auto rank = read_pod<uint32_t>(f);
    if (rank != 2) throw NumericsError("checkpoint: unsupported rank");
    const auto rows = static_cast<int64_t>(read_pod<uint64_t>(f));
    const auto cols = static_cast<int64_t>(read_pod<uint64_t>(f));
    Tensor t(rows, cols);
    if (dtype == 1) {
      std::vector<float> buf(t.numel());
      read_raw(f, buf.data(), buf.size() * sizeof(float));
      for (int64_t j = 0; j < t.numel(); ++j) t.data()[j] = buf[j];
    } else {
      read_raw(f, t.data(), static_cast<size_t>(t.numel()) * sizeof(double));
    }
    out.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

}  // namespace hepi
