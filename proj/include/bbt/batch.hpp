#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace bbt {

/// A batch of token sequences with one designated mask position per row.
/// ids and mask are row-major B x S. Labels stay on the client; batches
/// decoded from the wire carry none.
struct EvalBatch {
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  std::vector<std::uint16_t> input_ids;
  std::vector<std::uint8_t> attention_mask;
  std::vector<std::uint16_t> mask_pos;
  std::vector<std::uint8_t> labels;

  std::span<const std::uint16_t> ids_row(std::size_t i) const { return {input_ids.data() + i * seq_len, seq_len}; }
  std::span<const std::uint8_t> mask_row(std::size_t i) const {
    return {attention_mask.data() + i * seq_len, seq_len};
  }

  /// Throws std::invalid_argument if the vectors disagree with (batch, seq_len)
  /// or a mask position is out of range. Labels are checked only when present.
  void validate() const;

  /// Rows [begin, begin + count) as a new batch.
  EvalBatch slice(std::size_t begin, std::size_t count) const;

  bool operator==(const EvalBatch&) const = default;
};

}  // namespace bbt
