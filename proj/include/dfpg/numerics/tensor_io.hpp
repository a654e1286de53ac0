#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "dfpg/numerics/tensor.hpp"

namespace dfpg {

/*
 * DFPT tensor record, all integers little-endian:
 *   "DFPT" | version u8 (=1) | dtype u8 (0 = f32) | rank u8 | rank x u32 dims | payload
 * Records may be concatenated; checkpoints are a sequence of them.
 */
inline constexpr std::uint8_t kDfptVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 0;

void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

void save_tensors(const std::filesystem::path& path, const std::vector<Tensor>& tensors);
std::vector<Tensor> load_tensors(const std::filesystem::path& path);

// Little-endian primitives shared with the pseudo-label format.
namespace le {
void put_u8(std::ostream& os, std::uint8_t v);
void put_u16(std::ostream& os, std::uint16_t v);
void put_u32(std::ostream& os, std::uint32_t v);
void put_f32(std::ostream& os, float v);
std::uint8_t get_u8(std::istream& is);
std::uint16_t get_u16(std::istream& is);
std::uint32_t get_u32(std::istream& is);
float get_f32(std::istream& is);
}  // namespace le

}  // namespace dfpg
