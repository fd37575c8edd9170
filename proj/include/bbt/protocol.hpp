#pragma once

// Wire format of the inference API. All integers little-endian, all floats f32.
//
// Request:  "BBT1" | version u8 | mode u8 | B u16 | S u16 | K u8 | plen u32 |
//           prompt f32[plen] | ids u16[B*S] | mask u8[B*S] | mask_pos u16[B]
// Response: "BBR1" | status u8 | B u16 | K u8 | logits f32[B*K]  (Ok only)
//
// On a stream transport every message is preceded by a u32 byte length.

#include "bbt/batch.hpp"
#include "bbt/binary_io.hpp"
#include "bbt/losses.hpp"

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace bbt::proto {

inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::size_t kRequestHeaderBytes = 15;
inline constexpr std::size_t kResponseHeaderBytes = 8;

enum class Mode : std::uint8_t { FullPrompt = 0, SubspaceVec = 1 };
enum class Status : std::uint8_t { Ok = 0, BadRequest = 1, ModelError = 2 };

struct EvalRequest {
  Mode mode = Mode::FullPrompt;
  std::uint8_t classes = 0;  ///< K, number of label words the client expects
  std::vector<float> prompt;  ///< D floats (FullPrompt) or d floats (SubspaceVec)
  EvalBatch batch;            ///< labels are never sent

  bool operator==(const EvalRequest&) const = default;
};

struct EvalResponse {
  Status status = Status::Ok;
  Logits logits;  ///< empty unless status == Ok

  bool operator==(const EvalResponse&) const = default;
};

enum class DecodeErrorKind { BadMagic, BadVersion, BadMode, Truncated, LengthMismatch, BadField };

class DecodeError : public std::runtime_error {
 public:
  DecodeError(DecodeErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  DecodeErrorKind kind() const { return kind_; }

 private:
  DecodeErrorKind kind_;
};

Bytes encode_request(const EvalRequest& request);
EvalRequest decode_request(std::span<const std::uint8_t> bytes);

Bytes encode_response(const EvalResponse& response);
EvalResponse decode_response(std::span<const std::uint8_t> bytes);

/// Byte counts of the variable sections, headers excluded.
struct PayloadSizes {
  std::size_t upload_ids = 0;
  std::size_t upload_mask = 0;
  std::size_t upload_prompt = 0;
  std::size_t download = 0;
  std::size_t upload_mask_pos = 0;  ///< reported apart from the three upload items above
  std::size_t request_header = kRequestHeaderBytes;
  std::size_t response_header = kResponseHeaderBytes;

  std::size_t upload_total() const { return upload_ids + upload_mask + upload_prompt + upload_mask_pos + request_header; }
  std::size_t download_total() const { return download + response_header; }
};

PayloadSizes payload_sizes(std::size_t batch, std::size_t seq_len, std::size_t classes, std::size_t prompt_len);

/// Prepends the u32 length.
Bytes frame(std::span<const std::uint8_t> payload);

}  // namespace bbt::proto
