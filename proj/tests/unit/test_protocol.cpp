#include "bbt/protocol.hpp"

#include "../support/requests.hpp"

#include <doctest.h>

#include <cstring>
#include <random>

using namespace bbt::proto;
using bbt::Bytes;
using testing_support::random_request;

namespace {

EvalResponse random_response(std::mt19937_64& rng, std::size_t B, std::size_t K) {
  EvalResponse r;
  r.logits = bbt::Logits(B, K);
  std::normal_distribution<float> n(0, 5);
  for (auto& v : r.logits.values) v = n(rng);
  return r;
}

}  // namespace

TEST_CASE("appendix worked example") {
  const auto s = payload_sizes(32, 47, 2, 500);
  CHECK(s.upload_ids == 3008);
  CHECK(s.upload_mask == 1504);
  CHECK(s.upload_prompt == 2000);
  CHECK(s.download == 256);
  CHECK(s.upload_mask_pos == 64);

  const auto t = payload_sizes(1, 1, 1, 1);
  CHECK(t.upload_ids == 2);
  CHECK(t.upload_mask == 1);
  CHECK(t.upload_prompt == 4);
  CHECK(t.download == 4);

  const auto u = payload_sizes(32, 107, 4, 500);
  CHECK(u.upload_ids + u.upload_mask + u.upload_prompt == 12272);
}

TEST_CASE("size accountant equals encoded lengths") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t B = 1 + rng() % 40, S = 1 + rng() % 60, plen = rng() % 700;
    const auto req = random_request(rng, B, S, plen);
    const auto s = payload_sizes(B, S, req.classes, plen);
    CHECK(encode_request(req).size() == s.upload_total());
    CHECK(encode_request(req).size() ==
          kRequestHeaderBytes + s.upload_ids + s.upload_mask + s.upload_prompt + s.upload_mask_pos);
    const auto resp = random_response(rng, B, req.classes);
    CHECK(encode_response(resp).size() == s.download_total());
    CHECK(encode_response(resp).size() == kResponseHeaderBytes + s.download);
  }
}

TEST_CASE("request layout is bit exact") {
  EvalRequest r;
  r.mode = Mode::SubspaceVec;
  r.classes = 2;
  r.prompt = {1.0f, -2.5f};
  r.batch.batch = 1;
  r.batch.seq_len = 2;
  r.batch.input_ids = {0x0102, 0xfffe};
  r.batch.attention_mask = {1, 0};
  r.batch.mask_pos = {1};
  const Bytes b = encode_request(r);
  const Bytes expect{'B', 'B', 'T', '1', 1, 1, 1, 0, 2, 0, 2, 2, 0, 0, 0,
                     0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x20, 0xc0,
                     0x02, 0x01, 0xfe, 0xff, 1, 0, 1, 0};
  CHECK(b == expect);
}

TEST_CASE("response layout is bit exact") {
  EvalResponse r;
  r.logits = bbt::Logits(1, 2);
  r.logits.values = {0.5f, -1.0f};
  const Bytes expect{'B', 'B', 'R', '1', 0, 1, 0, 2, 0x00, 0x00, 0x00, 0x3f, 0x00, 0x00, 0x80, 0xbf};
  CHECK(encode_response(r) == expect);

  EvalResponse bad;
  bad.status = Status::BadRequest;
  const Bytes b = encode_response(bad);
  CHECK(b.size() == kResponseHeaderBytes);
  const auto back = decode_response(b);
  CHECK(back.status == Status::BadRequest);
  CHECK(back.logits.values.empty());
}

TEST_CASE("round trips both ways") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t B = 1 + rng() % 20, S = 1 + rng() % 30, plen = rng() % 200;
    auto req = random_request(rng, B, S, plen);
    if (trial % 10 == 0 && plen > 0) {
      // NaN payloads survive bit for bit.
      const std::uint32_t nan_bits = 0x7fc01234;
      std::memcpy(&req.prompt[0], &nan_bits, 4);
    }
    const Bytes bytes = encode_request(req);
    const EvalRequest back = decode_request(bytes);
    CHECK(encode_request(back) == bytes);
    if (trial % 10 != 0) CHECK(back == req);
    CHECK(back.batch.labels.empty());

    const auto resp = random_response(rng, B, 1 + rng() % 8);
    const Bytes rb = encode_response(resp);
    CHECK(decode_response(rb) == resp);
    CHECK(encode_response(decode_response(rb)) == rb);
  }
}

TEST_CASE("labels never reach the wire") {
  std::mt19937_64 rng(3);
  auto req = random_request(rng, 4, 5, 3);
  const Bytes plain = encode_request(req);
  req.batch.labels = {1, 0, 1, 1};
  CHECK(encode_request(req) == plain);
}

TEST_CASE("every truncation is a decode error") {
  std::mt19937_64 rng(4);
  const auto req = random_request(rng, 3, 4, 5);
  const Bytes bytes = encode_request(req);
  for (std::size_t n = 0; n < bytes.size(); ++n) {
    CHECK_THROWS_AS(decode_request(std::span(bytes.data(), n)), DecodeError);
  }
  const Bytes rb = encode_response(random_response(rng, 3, 2));
  for (std::size_t n = 0; n < rb.size(); ++n) {
    CHECK_THROWS_AS(decode_response(std::span(rb.data(), n)), DecodeError);
  }
}

TEST_CASE("malformed headers") {
  std::mt19937_64 rng(5);
  const Bytes good = encode_request(random_request(rng, 2, 3, 4));
  auto expect_kind = [](const Bytes& b, DecodeErrorKind kind) {
    try {
      decode_request(b);
      FAIL("decode accepted a malformed request");
    } catch (const DecodeError& e) {
      CHECK(e.kind() == kind);
    }
  };
  Bytes b = good;
  b[0] = 'X';
  expect_kind(b, DecodeErrorKind::BadMagic);
  b = good;
  b[4] = 2;
  expect_kind(b, DecodeErrorKind::BadVersion);
  b = good;
  b[5] = 7;
  expect_kind(b, DecodeErrorKind::BadMode);
  b = good;
  b.push_back(0);
  expect_kind(b, DecodeErrorKind::LengthMismatch);
  b = good;
  b.pop_back();
  expect_kind(b, DecodeErrorKind::Truncated);
  // mask_pos of row 0 pointing past S.
  b = good;
  b[b.size() - 4] = 9;
  expect_kind(b, DecodeErrorKind::BadField);
}

TEST_CASE("random bytes never crash the decoders") {
  std::mt19937_64 rng(6);
  const Bytes seed_req = encode_request(random_request(rng, 2, 3, 4));
  int accepted = 0;
  for (int trial = 0; trial < 20000; ++trial) {
    Bytes b = seed_req;
    const int flips = 1 + static_cast<int>(rng() % 4);
    for (int f = 0; f < flips; ++f) b[rng() % b.size()] = static_cast<std::uint8_t>(rng());
    if (rng() % 3 == 0) b.resize(rng() % (b.size() + 8));
    try {
      const auto r = decode_request(b);
      CHECK(encode_request(r) == b);
      ++accepted;
    } catch (const DecodeError&) {
    }
    try {
      decode_response(b);
    } catch (const DecodeError&) {
    }
  }
  CHECK(accepted > 0);
}

TEST_CASE("framing prefixes the length") {
  const Bytes payload{1, 2, 3};
  CHECK(frame(payload) == Bytes{3, 0, 0, 0, 1, 2, 3});
}
