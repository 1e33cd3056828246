#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "stmotion/tensor.hpp"

STMOTION_BEGIN_NAMESPACE
namespace nd {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

// "STT1" tensor archive: the magic bytes, then for each tensor until end of
// stream: u32 name length, UTF-8 name, u32 rank, rank x u32 dims, and the
// values as 32-bit floats. All integers and floats are little-endian.
inline constexpr char kTensorMagic[4] = {'S', 'T', 'T', '1'};

void write_tensors(std::ostream& out, const NamedTensors& tensors);
NamedTensors read_tensors(std::istream& in);

// Little-endian primitives shared with the other binary formats.
namespace le {
void put_u32(std::ostream& out, std::uint32_t v);
void put_i32(std::ostream& out, std::int32_t v);
void put_f32(std::ostream& out, float v);
std::uint32_t get_u32(std::istream& in);
std::int32_t get_i32(std::istream& in);
float get_f32(std::istream& in);
}  // namespace le

}  // namespace nd
STMOTION_END_NAMESPACE
