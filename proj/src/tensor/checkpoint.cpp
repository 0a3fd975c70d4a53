#include "tensor/checkpoint.hpp"

#include <limits>

#include "common/binary_io.hpp"
#include "common/error.hpp"

namespace lethe {
namespace {

constexpr std::string_view kMagic = "LTVT";

void put_payload(io::ByteWriter& w, const Tensor& t, std::uint64_t& checksum) {
  for (double v : t.values()) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    for (int i = 0; i < 4; ++i) checksum += (bits >> (8 * i)) & 0xFFu;
    w.u32(bits);
  }
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(std::span<const NamedTensor> tensors) {
  io::ByteWriter w;
  w.bytes(kMagic);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  std::uint64_t checksum = 0;
  for (const auto& nt : tensors) {
    if (nt.name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw FormatError("checkpoint: tensor name longer than 65535 bytes");
    }
    if (nt.tensor.rank() > std::numeric_limits<std::uint8_t>::max()) {
      throw FormatError("checkpoint: tensor " + nt.name + " has rank above 255");
    }
    w.u16(static_cast<std::uint16_t>(nt.name.size()));
    w.bytes(nt.name);
    w.u8(static_cast<std::uint8_t>(nt.tensor.rank()));
    for (auto d : nt.tensor.shape()) w.u32(static_cast<std::uint32_t>(d));
    put_payload(w, nt.tensor, checksum);
  }
  w.u64(checksum);
  return w.take();
}

std::vector<NamedTensor> decode_checkpoint(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes, "checkpoint");
  if (r.bytes(kMagic.size()) != kMagic) r.fail_at(0, "bad magic, expected \"LTVT\"");
  const auto version_offset = r.offset();
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    r.fail_at(version_offset, "unsupported format version " + std::to_string(version) + " (this build reads " +
                                  std::to_string(kCheckpointVersion) + ")");
  }
  const auto count = r.u32();
  std::vector<NamedTensor> out;
  std::uint64_t checksum = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor nt;
    nt.name = r.bytes(r.u16());
    Shape shape(r.u8());
    for (auto& d : shape) d = r.u32();
    const auto n = shape_numel(shape);
    if (r.remaining() / 4 < n) r.fail("truncated payload for tensor " + nt.name);
    std::vector<double> values(n);
    for (auto& v : values) {
      const auto bits = r.u32();
      for (int b = 0; b < 4; ++b) checksum += (bits >> (8 * b)) & 0xFFu;
      v = static_cast<double>(std::bit_cast<float>(bits));
    }
    try {
      nt.tensor = Tensor(std::move(shape), std::move(values));
    } catch (const NumericError&) {
      r.fail("non-finite value in tensor " + nt.name);
    }
    out.push_back(std::move(nt));
  }
  const auto trailer_offset = r.offset();
  const auto stored = r.u64();
  if (stored != checksum) {
    r.fail_at(trailer_offset, "checksum mismatch (stored " + std::to_string(stored) + ", computed " +
                                  std::to_string(checksum) + ")");
  }
  if (r.remaining() != 0) r.fail("trailing bytes after checksum");
  return out;
}

void save_checkpoint(const std::filesystem::path& path, std::span<const NamedTensor> tensors) {
  io::write_file(path, encode_checkpoint(tensors));
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(io::read_file(path));
}

std::uint64_t checkpoint_checksum(std::span<const NamedTensor> tensors) {
  std::uint64_t checksum = 0;
  io::ByteWriter scratch;
  for (const auto& nt : tensors) put_payload(scratch, nt.tensor, checksum);
  return checksum;
}

}  // namespace lethe
