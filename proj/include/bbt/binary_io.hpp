#pragma once

// Little-endian byte writer/reader used by every on-disk and on-wire format.

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

namespace bbt {

using Bytes = std::vector<std::uint8_t>;

/// Raised when a buffer ends before a field is complete.
class TruncatedBuffer : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

template <typename T>
T byteswap_if_big(T value) {
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
    auto raw = std::bit_cast<std::array<std::uint8_t, sizeof(T)>>(value);
    std::reverse(raw.begin(), raw.end());
    return std::bit_cast<T>(raw);
  } else {
    return value;
  }
}

}  // namespace detail

class ByteWriter {
 public:
  ByteWriter() = default;
  explicit ByteWriter(std::size_t reserve) { buf_.reserve(reserve); }

  void magic(std::string_view tag) { buf_.insert(buf_.end(), tag.begin(), tag.end()); }

  template <typename T>
    requires std::is_arithmetic_v<T>
  void put(T value) {
    const T le = detail::byteswap_if_big(value);
    const auto* p = reinterpret_cast<const std::uint8_t*>(&le);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }

  template <typename T>
    requires std::is_arithmetic_v<T>
  void put_array(std::span<const T> values) {
    if constexpr (std::endian::native == std::endian::little || sizeof(T) == 1) {
      const auto* p = reinterpret_cast<const std::uint8_t*>(values.data());
      buf_.insert(buf_.end(), p, p + values.size_bytes());
    } else {
      for (T v : values) put(v);
    }
  }

  std::size_t size() const { return buf_.size(); }
  Bytes take() && { return std::move(buf_); }

 private:
  Bytes buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  /// Returns false when the next bytes are not `tag`; consumes them either way
  /// if enough bytes are present.
  bool magic(std::string_view tag) {
    need(tag.size(), "magic");
    const bool ok = std::memcmp(data_.data() + pos_, tag.data(), tag.size()) == 0;
    pos_ += tag.size();
    return ok;
  }

  template <typename T>
    requires std::is_arithmetic_v<T>
  T get(const char* what = "field") {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return detail::byteswap_if_big(v);
  }

  template <typename T>
    requires std::is_arithmetic_v<T>
  std::vector<T> get_array(std::size_t count, const char* what = "array") {
    if (count != 0 && count > (data_.size() - pos_) / sizeof(T)) {
      throw TruncatedBuffer(std::string("buffer truncated in ") + what);
    }
    std::vector<T> out(count);
    if (count != 0) std::memcpy(out.data(), data_.data() + pos_, count * sizeof(T));
    pos_ += count * sizeof(T);
    if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
      for (auto& v : out) v = detail::byteswap_if_big(v);
    }
    return out;
  }

  std::size_t remaining() const { return data_.size() - pos_; }
  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (data_.size() - pos_ < n) {
      throw TruncatedBuffer(std::string("buffer truncated in ") + what);
    }
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

Bytes read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> bytes);

}  // namespace bbt
