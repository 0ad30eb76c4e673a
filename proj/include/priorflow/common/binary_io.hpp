#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace priorflow::io {

std::uint32_t crc32(std::string_view bytes);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

// 64-bit FNV-1a as 16 lower-case hex digits; a short content fingerprint.
std::string fingerprint(std::string_view bytes);

// Little-endian serializer into an in-memory buffer.
class ByteWriter {
 public:
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f64(double v);
  void f64s(std::span<const double> values);
  void str(std::string_view s);  // u32 length prefix
  void raw(std::string_view bytes) { buf_.append(bytes); }

  // Appends crc32 of everything written so far.
  void seal() { u32(crc32(buf_)); }

  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

// Bounds-checked reader; any short read raises CorruptFile.
class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes, std::string what = "file");

  // Checks and strips the trailing crc32 written by ByteWriter::seal().
  static ByteReader verified(std::string_view bytes, std::string what);

  std::uint32_t u32();
  std::uint64_t u64();
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  double f64();
  void f64s(std::span<double> out);
  std::string str();
  std::string_view raw(std::size_t n);

  std::size_t remaining() const { return bytes_.size() - pos_; }
  void expect_end() const;
  [[noreturn]] void fail(const std::string& why) const;

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
  std::string what_;
};

}  // namespace priorflow::io
