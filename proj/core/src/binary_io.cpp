#include "progspace/binary_io.hpp"

#include <fstream>

namespace progspace {

void ByteWriter::magic(std::string_view four_cc) {
  if (four_cc.size() != 4) throw Error(ErrorKind::invalid_argument, "magic must be four bytes");
  raw(four_cc);
}

void ByteWriter::f32_array(std::span<const float> values) {
  bytes_.reserve(bytes_.size() + values.size() * 4);
  for (float v : values) f32(v);
}

void ByteWriter::write_to(const std::filesystem::path& path) const { write_file_bytes(path, bytes_); }

ByteReader ByteReader::from_file(const std::filesystem::path& path) {
  return ByteReader(read_file_bytes(path), path.string());
}

void ByteReader::need(std::size_t n) const {
  if (pos_ + n > bytes_.size()) {
    throw Error(ErrorKind::malformed, "unexpected end of data in " + (origin_.empty() ? std::string("buffer") : origin_) +
                                          " at offset " + std::to_string(pos_));
  }
}

void ByteReader::expect_magic(std::string_view four_cc) {
  auto got = raw(4);
  if (std::string_view(reinterpret_cast<const char*>(got.data()), 4) != four_cc) {
    throw Error(ErrorKind::malformed, "bad magic in " + origin_ + ", expected " + std::string(four_cc));
  }
}

std::uint8_t ByteReader::u8() {
  need(1);
  return bytes_[pos_++];
}

std::span<const std::uint8_t> ByteReader::raw(std::size_t n) {
  need(n);
  std::span<const std::uint8_t> out(bytes_.data() + pos_, n);
  pos_ += n;
  return out;
}

void ByteReader::f32_array(std::span<float> out) {
  need(out.size() * 4);
  for (auto& v : out) v = f32();
}

void ByteReader::seek(std::size_t pos) {
  if (pos > bytes_.size()) throw Error(ErrorKind::malformed, "seek past end of " + origin_);
  pos_ = pos;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
  const auto size = static_cast<std::size_t>(in.tellg());
  std::vector<std::uint8_t> bytes(size);
  in.seekg(0);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (!in) throw Error(ErrorKind::io, "short read on " + path.string());
  return bytes;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::io, "write failed on " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
  auto bytes = read_file_bytes(path);
  return std::string(bytes.begin(), bytes.end());
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace progspace
