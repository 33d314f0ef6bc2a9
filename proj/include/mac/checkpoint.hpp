#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mac/diffcore/array.hpp"

namespace mac::ckpt {

inline constexpr std::uint32_t kVersion = 1;

struct Entry {
  std::string name;
  diff::Shape shape;
  std::vector<float> values;
};

// "MACCKPT1", version u32, entry count u32, entries (u16 name length, name,
// u8 rank, u32 dims, f32 values), then CRC32 of everything between the magic
// and the CRC. Little-endian throughout.
std::vector<std::uint8_t> encode(const std::vector<Entry>& entries);
std::vector<Entry> decode(const std::vector<std::uint8_t>& bytes, const std::string& source = "checkpoint");

// Written to a sibling temp file and renamed into place.
void save(const std::filesystem::path& path, const std::vector<Entry>& entries);
std::vector<Entry> load(const std::filesystem::path& path);

Entry from_array(const std::string& name, const diff::Array& a);
diff::Array to_array(const Entry& e);

// u64 <-> four exact f32 values holding 16 bits each.
std::vector<float> pack_u64(std::uint64_t v);
std::uint64_t unpack_u64(const float* four);

}  // namespace mac::ckpt
