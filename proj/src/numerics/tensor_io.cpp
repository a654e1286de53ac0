#include "dfpg/numerics/tensor_io.hpp"

#include <array>
#include <bit>
#include <fstream>
#include <istream>
#include <ostream>

namespace dfpg {

namespace le {

namespace {
template <class U>
void put(std::ostream& os, U v) {
  std::array<char, sizeof(U)> bytes;
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(bytes.data(), bytes.size());
}

template <class U>
U get(std::istream& is) {
  std::array<unsigned char, sizeof(U)> bytes;
  if (!is.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) {
    throw DataError("unexpected end of binary stream");
  }
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes[i]) << (8 * i);
  return v;
}
}  // namespace

void put_u8(std::ostream& os, std::uint8_t v) { put(os, v); }
void put_u16(std::ostream& os, std::uint16_t v) { put(os, v); }
void put_u32(std::ostream& os, std::uint32_t v) { put(os, v); }
void put_f32(std::ostream& os, float v) { put(os, std::bit_cast<std::uint32_t>(v)); }
std::uint8_t get_u8(std::istream& is) { return get<std::uint8_t>(is); }
std::uint16_t get_u16(std::istream& is) { return get<std::uint16_t>(is); }
std::uint32_t get_u32(std::istream& is) { return get<std::uint32_t>(is); }
float get_f32(std::istream& is) { return std::bit_cast<float>(get<std::uint32_t>(is)); }

}  // namespace le

void write_tensor(std::ostream& os, const Tensor& t) {
  if (t.rank() > 255) throw ShapeError("write_tensor: rank exceeds 255");
  os.write("DFPT", 4);
  le::put_u8(os, kDfptVersion);
  le::put_u8(os, kDtypeF32);
  le::put_u8(os, static_cast<std::uint8_t>(t.rank()));
  for (std::size_t d : t.shape()) le::put_u32(os, static_cast<std::uint32_t>(d));
  for (float v : t.data()) le::put_f32(os, v);
  if (!os) throw DataError("write_tensor: stream write failed");
}

Tensor read_tensor(std::istream& is) {
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), 4) || std::string_view(magic.data(), 4) != "DFPT") {
    throw DataError("read_tensor: missing DFPT magic");
  }
  const auto version = le::get_u8(is);
  if (version != kDfptVersion) {
    throw DataError("read_tensor: unsupported format version " + std::to_string(version));
  }
  const auto dtype = le::get_u8(is);
  if (dtype != kDtypeF32) throw DataError("read_tensor: unsupported dtype " + std::to_string(dtype));
  const auto rank = le::get_u8(is);
  Shape shape(rank);
  for (auto& d : shape) {
    d = le::get_u32(is);
    if (d == 0) throw DataError("read_tensor: zero-length dimension");
  }
  std::vector<float> data(shape_numel(shape));
  for (float& v : data) v = le::get_f32(is);
  return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  save_tensors(path, {t});
}

Tensor load_tensor(const std::filesystem::path& path) {
  auto ts = load_tensors(path);
  if (ts.size() != 1) throw DataError(path.string() + ": expected exactly one tensor");
  return std::move(ts.front());
}

void save_tensors(const std::filesystem::path& path, const std::vector<Tensor>& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  for (const auto& t : tensors) write_tensor(os, t);
}

std::vector<Tensor> load_tensors(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  std::vector<Tensor> out;
  while (is.peek() != std::char_traits<char>::eof()) out.push_back(read_tensor(is));
  return out;
}

}  // namespace dfpg
