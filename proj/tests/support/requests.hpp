#pragma once

#include "bbt/protocol.hpp"

#include <random>

namespace testing_support {

inline bbt::EvalBatch random_batch(std::mt19937_64& rng, std::size_t B, std::size_t S, std::size_t vocab) {
  bbt::EvalBatch b;
  b.batch = B;
  b.seq_len = S;
  b.input_ids.resize(B * S);
  b.attention_mask.resize(B * S);
  for (auto& id : b.input_ids) id = static_cast<std::uint16_t>(rng() % vocab);
  for (std::size_t i = 0; i < B; ++i) {
    const std::size_t len = 1 + rng() % S;
    for (std::size_t j = 0; j < S; ++j) b.attention_mask[i * S + j] = j < len ? 1 : 0;
    b.mask_pos.push_back(static_cast<std::uint16_t>(rng() % len));
  }
  return b;
}

inline bbt::proto::EvalRequest random_request(std::mt19937_64& rng, std::size_t B, std::size_t S, std::size_t plen,
                                              std::size_t vocab = 65536) {
  bbt::proto::EvalRequest r;
  r.mode = rng() % 2 ? bbt::proto::Mode::SubspaceVec : bbt::proto::Mode::FullPrompt;
  r.classes = static_cast<std::uint8_t>(2 + rng() % 10);
  std::normal_distribution<float> n(0, 3);
  r.prompt.resize(plen);
  for (auto& v : r.prompt) v = n(rng);
  r.batch = random_batch(rng, B, S, vocab);
  return r;
}

}  // namespace testing_support
