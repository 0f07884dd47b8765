#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>

namespace twinforge::store {

enum class Durability {
  // Each record reaches the kernel with one write(2) before returning;
  // survives abrupt process termination.
  Write,
  // Additionally fdatasync(2) per record; survives power loss.
  Sync,
};

// Frame layout: u32 LE body length, u32 LE CRC-32 of body, body.
inline constexpr std::size_t kFrameHeaderBytes = 8;

std::uint32_t crc32(std::string_view bytes) noexcept;

// Append-only file of framed records. Not thread-safe; callers serialize.
class RecordWriter {
 public:
  RecordWriter() = default;
  RecordWriter(const std::filesystem::path& path, Durability durability);
  ~RecordWriter();
  RecordWriter(RecordWriter&& other) noexcept;
  RecordWriter& operator=(RecordWriter&& other) noexcept;
  RecordWriter(const RecordWriter&) = delete;
  RecordWriter& operator=(const RecordWriter&) = delete;

  // Returns the file position where the frame starts.
  std::uint64_t append(std::string_view body);
  std::uint64_t size() const noexcept { return size_; }
  int fd() const noexcept { return fd_; }
  bool is_open() const noexcept { return fd_ >= 0; }
  void close();

 private:
  int fd_ = -1;
  std::uint64_t size_ = 0;
  Durability durability_ = Durability::Write;
};

// Calls `fn(position, body)` for every intact frame. A torn or corrupt tail
// is truncated away so subsequent appends start on a frame boundary.
// Returns the number of valid bytes.
std::uint64_t scan_records(const std::filesystem::path& path,
                           const std::function<void(std::uint64_t, std::string_view)>& fn);

// Reads the frame that starts at `position` through `fd`. Throws
// Error(Corrupt) on CRC mismatch.
std::string read_record_at(int fd, std::uint64_t position);

// Write-then-rename replacement of a small file.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents, Durability durability);

// Escapes a logical name (may contain '/') into a single path component.
std::string escape_name(std::string_view name);
std::string unescape_name(std::string_view escaped);

// Little-endian scalar packing shared by the on-disk formats.
void put_u16(std::string& out, std::uint16_t v);
void put_u32(std::string& out, std::uint32_t v);
void put_u64(std::string& out, std::uint64_t v);
std::uint32_t get_u32(std::string_view in, std::size_t& pos);
std::uint64_t get_u64(std::string_view in, std::size_t& pos);
std::string_view get_bytes(std::string_view in, std::size_t& pos, std::size_t n);

}  // namespace twinforge::store
