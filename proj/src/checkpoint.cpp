#include "doublematch/checkpoint.hpp"

#include <fmt/format.h>

#include <cstring>
#include <fstream>

#include "doublematch/error.hpp"

namespace dm {

namespace {

constexpr char kMagic[8] = {'D', 'M', 'C', 'K', 'P', 'T', '0', '1'};

void put_u64(std::ofstream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

void put_string(std::ofstream& out, const std::string& s) {
  put_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw DataError(fmt::format("cannot open checkpoint '{}'", path.string()));
  }
  void read(void* dst, std::size_t n) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n)
      throw DataError(fmt::format("checkpoint '{}' is truncated", path_.string()));
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    read(&v, sizeof v);
    return v;
  }
  std::string string() {
    const auto n = u64();
    if (n > (1u << 20)) throw DataError(fmt::format("checkpoint '{}' is corrupt", path_.string()));
    std::string s(n, '\0');
    read(s.data(), n);
    return s;
  }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
};

}  // namespace

const std::string& Archive::get_meta(const std::string& key) const {
  auto it = meta.find(key);
  if (it == meta.end()) throw DataError(fmt::format("checkpoint lacks metadata '{}'", key));
  return it->second;
}

const std::vector<float>& Archive::get_array(const std::string& key) const {
  auto it = arrays.find(key);
  if (it == arrays.end()) throw DataError(fmt::format("checkpoint lacks array '{}'", key));
  return it->second;
}

void save_archive(const Archive& archive, const std::filesystem::path& path) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError(fmt::format("cannot write checkpoint '{}'", tmp.string()));
    out.write(kMagic, sizeof kMagic);
    put_u64(out, archive.meta.size());
    for (const auto& [k, v] : archive.meta) {
      put_string(out, k);
      put_string(out, v);
    }
    put_u64(out, archive.arrays.size());
    for (const auto& [k, v] : archive.arrays) {
      put_string(out, k);
      put_u64(out, v.size());
      out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
    }
    if (!out) throw DataError(fmt::format("failed writing checkpoint '{}'", tmp.string()));
  }
  std::filesystem::rename(tmp, path);
}

Archive load_archive(const std::filesystem::path& path) {
  Reader in(path);
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw DataError(fmt::format("'{}' is not a checkpoint file", path.string()));
  Archive a;
  const auto nmeta = in.u64();
  for (std::uint64_t i = 0; i < nmeta; ++i) {
    auto k = in.string();
    a.meta[k] = in.string();
  }
  const auto narrays = in.u64();
  for (std::uint64_t i = 0; i < narrays; ++i) {
    auto k = in.string();
    const auto n = in.u64();
    if (n > (std::uint64_t{1} << 34)) throw DataError(fmt::format("checkpoint '{}' is corrupt", path.string()));
    std::vector<float> v(n);
    in.read(v.data(), n * sizeof(float));
    a.arrays[k] = std::move(v);
  }
  return a;
}

}  // namespace dm
