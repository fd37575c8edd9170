#include "bbt/protocol.hpp"

#include <limits>
#include <string>

namespace bbt::proto {

namespace {

template <typename Fn>
auto guard_truncation(Fn&& fn) {
  try {
    return fn();
  } catch (const TruncatedBuffer& e) {
    throw DecodeError(DecodeErrorKind::Truncated, e.what());
  }
}

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

}  // namespace

Bytes encode_request(const EvalRequest& req) {
  const EvalBatch& b = req.batch;
  b.validate();
  require(b.batch <= std::numeric_limits<std::uint16_t>::max(), "encode_request: B exceeds u16");
  require(b.seq_len <= std::numeric_limits<std::uint16_t>::max(), "encode_request: S exceeds u16");
  require(req.prompt.size() <= std::numeric_limits<std::uint32_t>::max(), "encode_request: prompt exceeds u32");
  require(req.mode == Mode::FullPrompt || req.mode == Mode::SubspaceVec, "encode_request: unknown mode");

  ByteWriter w(kRequestHeaderBytes + 4 * req.prompt.size() + 3 * b.input_ids.size() + 2 * b.batch);
  w.magic("BBT1");
  w.put(kVersion);
  w.put(static_cast<std::uint8_t>(req.mode));
  w.put(static_cast<std::uint16_t>(b.batch));
  w.put(static_cast<std::uint16_t>(b.seq_len));
  w.put(req.classes);
  w.put(static_cast<std::uint32_t>(req.prompt.size()));
  w.put_array(std::span<const float>(req.prompt));
  w.put_array(std::span<const std::uint16_t>(b.input_ids));
  w.put_array(std::span<const std::uint8_t>(b.attention_mask));
  w.put_array(std::span<const std::uint16_t>(b.mask_pos));
  return std::move(w).take();
}

EvalRequest decode_request(std::span<const std::uint8_t> bytes) {
  return guard_truncation([&] {
    ByteReader r(bytes);
    if (!r.magic("BBT1")) throw DecodeError(DecodeErrorKind::BadMagic, "request: bad magic");
    const auto version = r.get<std::uint8_t>("version");
    if (version != kVersion) {
      throw DecodeError(DecodeErrorKind::BadVersion, "request: unsupported version " + std::to_string(version));
    }
    const auto mode = r.get<std::uint8_t>("mode");
    if (mode > static_cast<std::uint8_t>(Mode::SubspaceVec)) {
      throw DecodeError(DecodeErrorKind::BadMode, "request: unknown mode " + std::to_string(mode));
    }
    EvalRequest req;
    req.mode = static_cast<Mode>(mode);
    req.batch.batch = r.get<std::uint16_t>("B");
    req.batch.seq_len = r.get<std::uint16_t>("S");
    req.classes = r.get<std::uint8_t>("K");
    const auto plen = r.get<std::uint32_t>("plen");
    const std::size_t cells = req.batch.batch * req.batch.seq_len;
    const std::size_t expected = 4 * static_cast<std::size_t>(plen) + 3 * cells + 2 * req.batch.batch;
    if (r.remaining() < expected) throw DecodeError(DecodeErrorKind::Truncated, "request: payload truncated");
    if (r.remaining() > expected) {
      throw DecodeError(DecodeErrorKind::LengthMismatch, "request: trailing bytes after declared payload");
    }
    req.prompt = r.get_array<float>(plen, "prompt");
    req.batch.input_ids = r.get_array<std::uint16_t>(cells, "ids");
    req.batch.attention_mask = r.get_array<std::uint8_t>(cells, "mask");
    req.batch.mask_pos = r.get_array<std::uint16_t>(req.batch.batch, "mask_pos");
    try {
      req.batch.validate();
    } catch (const std::invalid_argument& e) {
      throw DecodeError(DecodeErrorKind::BadField, std::string("request: ") + e.what());
    }
    return req;
  });
}

Bytes encode_response(const EvalResponse& resp) {
  const bool ok = resp.status == Status::Ok;
  const Logits& l = resp.logits;
  if (ok) {
    require(l.values.size() == l.rows * l.cols, "encode_response: logits shape mismatch");
    require(l.rows <= std::numeric_limits<std::uint16_t>::max(), "encode_response: B exceeds u16");
    require(l.cols <= std::numeric_limits<std::uint8_t>::max(), "encode_response: K exceeds u8");
  }
  ByteWriter w(kResponseHeaderBytes + (ok ? 4 * l.values.size() : 0));
  w.magic("BBR1");
  w.put(static_cast<std::uint8_t>(resp.status));
  w.put(static_cast<std::uint16_t>(ok ? l.rows : 0));
  w.put(static_cast<std::uint8_t>(ok ? l.cols : 0));
  if (ok) w.put_array(std::span<const float>(l.values));
  return std::move(w).take();
}

EvalResponse decode_response(std::span<const std::uint8_t> bytes) {
  return guard_truncation([&] {
    ByteReader r(bytes);
    if (!r.magic("BBR1")) throw DecodeError(DecodeErrorKind::BadMagic, "response: bad magic");
    const auto status = r.get<std::uint8_t>("status");
    if (status > static_cast<std::uint8_t>(Status::ModelError)) {
      throw DecodeError(DecodeErrorKind::BadField, "response: unknown status " + std::to_string(status));
    }
    EvalResponse resp;
    resp.status = static_cast<Status>(status);
    const std::size_t rows = r.get<std::uint16_t>("B");
    const std::size_t cols = r.get<std::uint8_t>("K");
    const std::size_t count = resp.status == Status::Ok ? rows * cols : 0;
    if (r.remaining() < 4 * count) throw DecodeError(DecodeErrorKind::Truncated, "response: logits truncated");
    if (r.remaining() > 4 * count) {
      throw DecodeError(DecodeErrorKind::LengthMismatch, "response: trailing bytes after logits");
    }
    if (resp.status == Status::Ok) {
      resp.logits.rows = rows;
      resp.logits.cols = cols;
      resp.logits.values = r.get_array<float>(count, "logits");
    }
    return resp;
  });
}

PayloadSizes payload_sizes(std::size_t batch, std::size_t seq_len, std::size_t classes, std::size_t prompt_len) {
  PayloadSizes s;
  s.upload_ids = 2 * batch * seq_len;
  s.upload_mask = batch * seq_len;
  s.upload_prompt = 4 * prompt_len;
  s.download = 4 * batch * classes;
  s.upload_mask_pos = 2 * batch;
  return s;
}

Bytes frame(std::span<const std::uint8_t> payload) {
  require(payload.size() <= std::numeric_limits<std::uint32_t>::max(), "frame: payload too large");
  ByteWriter w(4 + payload.size());
  w.put(static_cast<std::uint32_t>(payload.size()));
  w.put_array(payload);
  return std::move(w).take();
}

}  // namespace bbt::proto
