// Little-endian primitives shared by the feature cache, prediction dump and
// checkpoint formats.
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace psseg::io {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big,
              "mixed-endian hosts are not supported");

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ByteWriter {
 public:
  void put_bytes(std::string_view bytes) { buf_.insert(buf_.end(), bytes.begin(), bytes.end()); }

  void put_u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }

  void put_u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
  }

  void put_i32(std::int32_t v) { put_u32(static_cast<std::uint32_t>(v)); }

  void put_f32(float v) { put_u32(std::bit_cast<std::uint32_t>(v)); }

  void put_f32s(std::span<const float> values) {
    if constexpr (std::endian::native == std::endian::little) {
      const auto* p = reinterpret_cast<const char*>(values.data());
      buf_.insert(buf_.end(), p, p + values.size_bytes());
    } else {
      for (float v : values) put_f32(v);
    }
  }

  const std::vector<char>& bytes() const { return buf_; }

  void write_file(const std::filesystem::path& path) const;

 private:
  std::vector<char> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<char> bytes, std::string what = "file")
      : buf_(std::move(bytes)), what_(std::move(what)) {}

  static ByteReader from_file(const std::filesystem::path& path);

  std::size_t remaining() const { return buf_.size() - pos_; }
  std::size_t position() const { return pos_; }
  const std::string& what() const { return what_; }

  std::string get_bytes(std::size_t n) {
    need(n);
    std::string out(buf_.data() + pos_, n);
    pos_ += n;
    return out;
  }

  std::uint8_t get_u8() {
    need(1);
    return static_cast<std::uint8_t>(buf_[pos_++]);
  }

  std::uint32_t get_u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::int32_t get_i32() { return static_cast<std::int32_t>(get_u32()); }

  float get_f32() { return std::bit_cast<float>(get_u32()); }

  void get_f32s(std::span<float> out) {
    need(out.size_bytes());
    if constexpr (std::endian::native == std::endian::little) {
      std::memcpy(out.data(), buf_.data() + pos_, out.size_bytes());
      pos_ += out.size_bytes();
    } else {
      for (float& v : out) v = get_f32();
    }
  }

  void expect_end() const {
    if (pos_ != buf_.size())
      throw FormatError(what_ + ": " + std::to_string(buf_.size() - pos_) + " trailing bytes");
  }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n)
      throw FormatError(what_ + ": unexpected end of data at byte " + std::to_string(pos_) +
                        " (need " + std::to_string(n) + ", have " + std::to_string(buf_.size() - pos_) +
                        ")");
  }

  std::vector<char> buf_;
  std::size_t pos_ = 0;
  std::string what_;
};

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace psseg::io
