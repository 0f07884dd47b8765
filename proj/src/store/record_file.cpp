#include "twinforge/store/record_file.hpp"

#include <fcntl.h>
#include <unistd.h>
#include <zlib.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <utility>

#include "twinforge/core/error.hpp"

namespace twinforge::store {

namespace fs = std::filesystem;

namespace {

[[noreturn]] void throw_io(const std::string& what) {
  throw Error(Errc::IoError, what + ": " + std::strerror(errno));
}

void write_all(int fd, const char* data, std::size_t n) {
  while (n > 0) {
    const ssize_t w = ::write(fd, data, n);
    if (w < 0) {
      if (errno == EINTR) continue;
      throw_io("write");
    }
    data += w;
    n -= static_cast<std::size_t>(w);
  }
}

std::uint32_t load_u32(const char* p) {
  return static_cast<std::uint32_t>(static_cast<unsigned char>(p[0])) |
         static_cast<std::uint32_t>(static_cast<unsigned char>(p[1])) << 8 |
         static_cast<std::uint32_t>(static_cast<unsigned char>(p[2])) << 16 |
         static_cast<std::uint32_t>(static_cast<unsigned char>(p[3])) << 24;
}

}  // namespace

std::uint32_t crc32(std::string_view bytes) noexcept {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(std::string_view in, std::size_t& pos) {
  if (pos + 4 > in.size()) throw Error(Errc::Corrupt, "record truncated reading u32");
  auto v = load_u32(in.data() + pos);
  pos += 4;
  return v;
}

std::uint64_t get_u64(std::string_view in, std::size_t& pos) {
  if (pos + 8 > in.size()) throw Error(Errc::Corrupt, "record truncated reading u64");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += 8;
  return v;
}

std::string_view get_bytes(std::string_view in, std::size_t& pos, std::size_t n) {
  if (pos + n > in.size()) throw Error(Errc::Corrupt, "record truncated reading bytes");
  auto v = in.substr(pos, n);
  pos += n;
  return v;
}

RecordWriter::RecordWriter(const fs::path& path, Durability durability) : durability_(durability) {
  fd_ = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd_ < 0) throw_io("open " + path.string());
  const off_t end = ::lseek(fd_, 0, SEEK_END);
  if (end < 0) throw_io("lseek " + path.string());
  size_ = static_cast<std::uint64_t>(end);
}

RecordWriter::~RecordWriter() { close(); }

RecordWriter::RecordWriter(RecordWriter&& other) noexcept
    : fd_(std::exchange(other.fd_, -1)), size_(other.size_), durability_(other.durability_) {}

RecordWriter& RecordWriter::operator=(RecordWriter&& other) noexcept {
  if (this != &other) {
    close();
    fd_ = std::exchange(other.fd_, -1);
    size_ = other.size_;
    durability_ = other.durability_;
  }
  return *this;
}

void RecordWriter::close() {
  if (fd_ >= 0) ::close(fd_);
  fd_ = -1;
}

std::uint64_t RecordWriter::append(std::string_view body) {
  if (fd_ < 0) throw Error(Errc::IoError, "append on closed record file");
  std::string frame;
  frame.reserve(kFrameHeaderBytes + body.size());
  put_u32(frame, static_cast<std::uint32_t>(body.size()));
  put_u32(frame, crc32(body));
  frame.append(body);
  const auto position = size_;
  write_all(fd_, frame.data(), frame.size());
  if (durability_ == Durability::Sync && ::fdatasync(fd_) != 0) throw_io("fdatasync");
  size_ += frame.size();
  return position;
}

std::uint64_t scan_records(const fs::path& path, const std::function<void(std::uint64_t, std::string_view)>& fn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return 0;
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  std::uint64_t pos = 0;
  while (pos + kFrameHeaderBytes <= data.size()) {
    const auto len = load_u32(data.data() + pos);
    const auto crc = load_u32(data.data() + pos + 4);
    if (pos + kFrameHeaderBytes + len > data.size()) break;
    std::string_view body(data.data() + pos + kFrameHeaderBytes, len);
    if (crc32(body) != crc) break;
    fn(pos, body);
    pos += kFrameHeaderBytes + len;
  }
  if (pos != data.size()) {
    std::error_code ec;
    fs::resize_file(path, pos, ec);
    if (ec) throw Error(Errc::IoError, "truncate " + path.string() + ": " + ec.message());
  }
  return pos;
}

std::string read_record_at(int fd, std::uint64_t position) {
  char head[kFrameHeaderBytes];
  if (::pread(fd, head, sizeof head, static_cast<off_t>(position)) != static_cast<ssize_t>(sizeof head))
    throw Error(Errc::Corrupt, "short read of frame header");
  const auto len = load_u32(head);
  const auto crc = load_u32(head + 4);
  std::string body(len, '\0');
  std::size_t got = 0;
  while (got < len) {
    const ssize_t r = ::pread(fd, body.data() + got, len - got, static_cast<off_t>(position + kFrameHeaderBytes + got));
    if (r <= 0) {
      if (r < 0 && errno == EINTR) continue;
      throw Error(Errc::Corrupt, "short read of frame body");
    }
    got += static_cast<std::size_t>(r);
  }
  if (crc32(body) != crc) throw Error(Errc::Corrupt, "CRC mismatch");
  return body;
}

void write_file_atomic(const fs::path& path, std::string_view contents, Durability durability) {
  auto tmp = path;
  tmp += ".tmp";
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd < 0) throw_io("open " + tmp.string());
  try {
    write_all(fd, contents.data(), contents.size());
    if (durability == Durability::Sync && ::fsync(fd) != 0) throw_io("fsync");
  } catch (...) {
    ::close(fd);
    throw;
  }
  ::close(fd);
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(Errc::IoError, "rename " + tmp.string() + ": " + ec.message());
}

std::string escape_name(std::string_view name) {
  static constexpr char kHex[] = "0123456789ABCDEF";
  std::string out;
  for (unsigned char c : name) {
    if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' || c == '_' ||
        (c == '.' && !out.empty())) {
      out.push_back(static_cast<char>(c));
    } else {
      out.push_back('%');
      out.push_back(kHex[c >> 4]);
      out.push_back(kHex[c & 0xf]);
    }
  }
  return out;
}

std::string unescape_name(std::string_view escaped) {
  auto hex = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    return -1;
  };
  std::string out;
  for (std::size_t i = 0; i < escaped.size(); ++i) {
    if (escaped[i] == '%' && i + 2 < escaped.size() && hex(escaped[i + 1]) >= 0 && hex(escaped[i + 2]) >= 0) {
      out.push_back(static_cast<char>(hex(escaped[i + 1]) * 16 + hex(escaped[i + 2])));
      i += 2;
    } else {
      out.push_back(escaped[i]);
    }
  }
  return out;
}

}  // namespace twinforge::store
