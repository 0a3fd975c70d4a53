#include "common/binary_io.hpp"

#include <fstream>
#include <iterator>

#include "common/error.hpp"

namespace lethe::io {

std::string ByteReader::bytes(std::size_t n) {
  if (remaining() < n) fail("truncated: expected " + std::to_string(n) + " bytes");
  std::string out(reinterpret_cast<const char*>(data_.data() + pos_), n);
  pos_ += n;
  return out;
}

std::uint64_t ByteReader::get(std::size_t n, const char* field) {
  if (remaining() < n) fail(std::string("truncated: expected ") + field);
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
  pos_ += n;
  return v;
}

void ByteReader::fail(const std::string& message) const { fail_at(pos_, message); }

void ByteReader::fail_at(std::size_t offset, const std::string& message) const {
  throw FormatError(what_ + ": " + message + " at byte offset " + std::to_string(offset));
}

std::uint64_t byte_sum(std::span<const std::uint8_t> bytes) {
  std::uint64_t total = 0;
  for (auto b : bytes) total += b;
  return total;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace lethe::io
