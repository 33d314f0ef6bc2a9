#include "mac/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>

#include "mac/errors.hpp"

namespace mac::ckpt {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'M', 'A', 'C', 'C', 'K', 'P', 'T', '1'};

class Writer {
 public:
  void u8(std::uint8_t v) { out.push_back(v); }
  void u16(std::uint16_t v) { le(v, 2); }
  void u32(std::uint32_t v) { le(v, 4); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void bytes(const void* p, std::size_t n) {
    auto b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  std::vector<std::uint8_t> out;

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& b, std::size_t begin, std::size_t end, std::string source)
      : b_(b), pos_(begin), end_(end), source_(std::move(source)) {}

  std::uint64_t le(int n, const std::string& what) {
    need(static_cast<std::size_t>(n), what);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::string str(std::size_t n, const std::string& what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == end_; }
  [[noreturn]] void fail(const std::string& what) const { throw FormatError(source_ + ": " + what); }

 private:
  void need(std::size_t n, const std::string& what) const {
    if (end_ - pos_ < n) fail("truncated while reading " + what);
  }
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_, end_;
  std::string source_;
};

}  // namespace

std::vector<std::uint8_t> encode(const std::vector<Entry>& entries) {
  Writer w;
  w.bytes(kMagic, sizeof(kMagic));
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(entries.size()));
  for (const Entry& e : entries) {
    if (e.name.empty() || e.name.size() > 0xffff) throw ContractError("checkpoint entry name length out of range");
    if (e.shape.size() > 0xff) throw ContractError("checkpoint entry '" + e.name + "' rank too large");
    if (diff::shape_size(e.shape) != e.values.size()) {
      throw ContractError("checkpoint entry '" + e.name + "' holds " + std::to_string(e.values.size()) +
                          " values for shape " + diff::shape_string(e.shape));
    }
    w.u16(static_cast<std::uint16_t>(e.name.size()));
    w.bytes(e.name.data(), e.name.size());
    w.u8(static_cast<std::uint8_t>(e.shape.size()));
    for (auto d : e.shape) w.u32(static_cast<std::uint32_t>(d));
    for (float v : e.values) w.f32(v);
  }
  const uLong crc = crc32(0L, w.out.data() + sizeof(kMagic), static_cast<uInt>(w.out.size() - sizeof(kMagic)));
  w.u32(static_cast<std::uint32_t>(crc));
  return w.out;
}

std::vector<Entry> decode(const std::vector<std::uint8_t>& bytes, const std::string& source) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw FormatError(source + ": bad magic, not a MACCKPT1 checkpoint");
  }
  if (bytes.size() < sizeof(kMagic) + 12) throw FormatError(source + ": CRC mismatch (file truncated)");
  const std::size_t body_end = bytes.size() - 4;
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i) stored |= static_cast<std::uint32_t>(bytes[body_end + i]) << (8 * i);
  const uLong crc = crc32(0L, bytes.data() + sizeof(kMagic), static_cast<uInt>(body_end - sizeof(kMagic)));
  if (static_cast<std::uint32_t>(crc) != stored) throw FormatError(source + ": CRC mismatch");

  Reader r(bytes, sizeof(kMagic), body_end, source);
  const auto version = r.le(4, "version");
  if (version != kVersion) r.fail("unsupported version " + std::to_string(version));
  const auto count = r.le(4, "entry count");
  std::vector<Entry> out;
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string at = "entry " + std::to_string(i);
    Entry e;
    e.name = r.str(r.le(2, at + " name length"), at + " name");
    const auto rank = r.le(1, "rank of '" + e.name + "'");
    for (std::uint64_t k = 0; k < rank; ++k) e.shape.push_back(r.le(4, "shape of '" + e.name + "'"));
    const std::size_t n = diff::shape_size(e.shape);
    e.values.resize(n);
    for (std::size_t k = 0; k < n; ++k) e.values[k] = std::bit_cast<float>(static_cast<std::uint32_t>(r.le(4, "values of '" + e.name + "'")));
    out.push_back(std::move(e));
  }
  if (!r.done()) r.fail("trailing bytes after " + std::to_string(count) + " entries");
  return out;
}

void save(const fs::path& path, const std::vector<Entry>& entries) {
  const auto bytes = encode(entries);
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot write checkpoint " + tmp.string());
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw FormatError("short write on checkpoint " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw FormatError("cannot move checkpoint into " + path.string() + ": " + ec.message());
}

std::vector<Entry> load(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode(bytes, path.string());
}

Entry from_array(const std::string& name, const diff::Array& a) {
  Entry e{name, a.shape(), {}};
  e.values.reserve(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) e.values.push_back(static_cast<float>(a[i]));
  return e;
}

diff::Array to_array(const Entry& e) {
  std::vector<double> v(e.values.begin(), e.values.end());
  return diff::Array(e.shape, std::move(v));
}

std::vector<float> pack_u64(std::uint64_t v) {
  std::vector<float> out;
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<float>((v >> (16 * i)) & 0xffff));
  return out;
}

std::uint64_t unpack_u64(const float* four) {
  std::uint64_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint64_t>(four[i]) << (16 * i);
  return v;
}

}  // namespace mac::ckpt
