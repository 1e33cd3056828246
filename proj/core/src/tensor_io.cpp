#include "stmotion/tensor_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>

STMOTION_BEGIN_NAMESPACE
namespace nd {

namespace le {

void put_u32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> bytes{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                                  static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(bytes.data(), 4);
}

void put_i32(std::ostream& out, std::int32_t v) { put_u32(out, static_cast<std::uint32_t>(v)); }

void put_f32(std::ostream& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

std::uint32_t get_u32(std::istream& in) {
  std::array<unsigned char, 4> b{};
  in.read(reinterpret_cast<char*>(b.data()), 4);
  if (in.gcount() != 4) throw FormatError("unexpected end of stream");
  return std::uint32_t{b[0]} | (std::uint32_t{b[1]} << 8) | (std::uint32_t{b[2]} << 16) |
         (std::uint32_t{b[3]} << 24);
}

std::int32_t get_i32(std::istream& in) { return static_cast<std::int32_t>(get_u32(in)); }

float get_f32(std::istream& in) { return std::bit_cast<float>(get_u32(in)); }

}  // namespace le

void write_tensors(std::ostream& out, const NamedTensors& tensors) {
  out.write(kTensorMagic, 4);
  for (const auto& [name, tensor] : tensors) {
    le::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    le::put_u32(out, static_cast<std::uint32_t>(tensor.rank()));
    for (std::size_t d : tensor.shape()) le::put_u32(out, static_cast<std::uint32_t>(d));
    for (Real v : tensor.data()) le::put_f32(out, static_cast<float>(v));
  }
  if (!out) throw FormatError("failed to write tensor archive");
}

NamedTensors read_tensors(std::istream& in) {
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() != 4 || !std::equal(magic, magic + 4, kTensorMagic))
    throw FormatError("not an STT1 tensor archive");
  NamedTensors tensors;
  while (in.peek() != std::char_traits<char>::eof()) {
    const std::uint32_t name_len = le::get_u32(in);
    if (name_len > (1u << 16)) throw FormatError("implausible tensor name length");
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (static_cast<std::uint32_t>(in.gcount()) != name_len) throw FormatError("truncated tensor name");
    const std::uint32_t rank = le::get_u32(in);
    if (rank == 0 || rank > 16) throw FormatError("invalid rank for tensor '" + name + "'");
    Shape shape(rank);
    for (auto& d : shape) d = le::get_u32(in);
    const std::size_t n = numel(shape);
    if (n == 0 || n > (std::size_t{1} << 32)) throw FormatError("invalid shape for tensor '" + name + "'");
    std::vector<Real> values(n);
    for (auto& v : values) v = static_cast<Real>(le::get_f32(in));
    tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  return tensors;
}

}  // namespace nd
STMOTION_END_NAMESPACE
