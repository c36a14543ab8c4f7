#include "matfile.hpp"

#include <fmt/format.h>
#include <zlib.h>

#include <cstring>
#include <fstream>
#include <numeric>

#include "doublematch/error.hpp"

namespace dm::mat {
namespace {

enum : std::uint32_t {
  miINT8 = 1,
  miUINT8 = 2,
  miINT16 = 3,
  miUINT16 = 4,
  miINT32 = 5,
  miUINT32 = 6,
  miSINGLE = 7,
  miDOUBLE = 9,
  miINT64 = 12,
  miUINT64 = 13,
  miMATRIX = 14,
  miCOMPRESSED = 15,
};

std::size_t type_size(std::uint32_t t) {
  switch (t) {
    case miINT8:
    case miUINT8: return 1;
    case miINT16:
    case miUINT16: return 2;
    case miINT32:
    case miUINT32:
    case miSINGLE: return 4;
    case miDOUBLE:
    case miINT64:
    case miUINT64: return 8;
    default: return 0;
  }
}

struct Cursor {
  const std::uint8_t* p;
  const std::uint8_t* end;
  std::string file;

  std::uint32_t u32() {
    need(4);
    std::uint32_t v;
    std::memcpy(&v, p, 4);
    p += 4;
    return v;
  }
  void need(std::size_t n) const {
    if (static_cast<std::size_t>(end - p) < n) throw DataError(fmt::format("{}: truncated MAT element", file));
  }
};

struct Element {
  std::uint32_t type;
  const std::uint8_t* data;
  std::size_t size;
};

Element next_element(Cursor& c, bool pad) {
  const std::uint32_t first = c.u32();
  if ((first >> 16) != 0) {
    // Small data element: type and size packed into one word, data in the next four bytes.
    Element e{first & 0xFFFF, c.p, first >> 16};
    c.need(4);
    c.p += 4;
    return e;
  }
  const std::uint32_t size = c.u32();
  c.need(size);
  Element e{first, c.p, size};
  std::size_t advance = size;
  if (pad && advance % 8 != 0) advance += 8 - advance % 8;
  c.p += std::min<std::size_t>(advance, static_cast<std::size_t>(c.end - c.p));
  return e;
}

std::vector<std::uint8_t> inflate_all(const std::uint8_t* data, std::size_t size, const std::string& file) {
  std::vector<std::uint8_t> out;
  z_stream zs{};
  if (inflateInit(&zs) != Z_OK) throw DataError(fmt::format("{}: zlib init failed", file));
  zs.next_in = const_cast<Bytef*>(data);
  zs.avail_in = static_cast<uInt>(size);
  std::size_t chunk = std::max<std::size_t>(size * 2, 1 << 16);
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    const std::size_t old = out.size();
    out.resize(old + chunk);
    zs.next_out = out.data() + old;
    zs.avail_out = static_cast<uInt>(chunk);
    rc = inflate(&zs, Z_NO_FLUSH);
    out.resize(old + chunk - zs.avail_out);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw DataError(fmt::format("{}: corrupt compressed MAT element", file));
    }
    if (rc == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) break;
  }
  inflateEnd(&zs);
  return out;
}

void parse_matrix(const std::uint8_t* data, std::size_t size, const std::string& file,
                  std::map<std::string, Array>& out) {
  Cursor c{data, data + size, file};
  next_element(c, true);  // array flags
  const Element dims = next_element(c, true);
  const Element name = next_element(c, true);
  const Element real = next_element(c, true);
  Array a;
  for (std::size_t i = 0; i + 4 <= dims.size; i += 4) {
    std::int32_t d;
    std::memcpy(&d, dims.data + i, 4);
    a.dims.push_back(d);
  }
  a.type = static_cast<int>(real.type);
  if (type_size(real.type) == 0) throw DataError(fmt::format("{}: unsupported MAT data type {}", file, real.type));
  a.raw.assign(real.data, real.data + real.size);
  out[std::string(reinterpret_cast<const char*>(name.data), name.size)] = std::move(a);
}

void parse_elements(const std::uint8_t* data, std::size_t size, const std::string& file,
                    std::map<std::string, Array>& out) {
  Cursor c{data, data + size, file};
  while (c.end - c.p >= 8) {
    const Element e = next_element(c, true);
    if (e.type == miCOMPRESSED) {
      const auto inflated = inflate_all(e.data, e.size, file);
      parse_elements(inflated.data(), inflated.size(), file, out);
    } else if (e.type == miMATRIX) {
      if (e.size > 0) parse_matrix(e.data, e.size, file, out);
    }
  }
}

}  // namespace

std::size_t Array::count() const {
  const std::size_t ts = type_size(static_cast<std::uint32_t>(type));
  return ts == 0 ? 0 : raw.size() / ts;
}

double Array::value(std::size_t i) const {
  const std::uint8_t* p = raw.data() + i * type_size(static_cast<std::uint32_t>(type));
  auto load = [p]<typename V>(V) {
    V v;
    std::memcpy(&v, p, sizeof(V));
    return static_cast<double>(v);
  };
  switch (static_cast<std::uint32_t>(type)) {
    case miINT8: return load(std::int8_t{});
    case miUINT8: return load(std::uint8_t{});
    case miINT16: return load(std::int16_t{});
    case miUINT16: return load(std::uint16_t{});
    case miINT32: return load(std::int32_t{});
    case miUINT32: return load(std::uint32_t{});
    case miSINGLE: return load(float{});
    case miDOUBLE: return load(double{});
    case miINT64: return load(std::int64_t{});
    case miUINT64: return load(std::uint64_t{});
    default: return 0.0;
  }
}

std::map<std::string, Array> read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open '{}'", path.string()));
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 128 || buf[126] != 'I' || buf[127] != 'M')
    throw DataError(fmt::format("'{}' is not a little-endian MAT v5 file", path.string()));
  std::map<std::string, Array> out;
  parse_elements(buf.data() + 128, buf.size() - 128, path.string(), out);
  return out;
}

}  // namespace dm::mat
