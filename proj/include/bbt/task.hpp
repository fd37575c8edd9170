#pragma once

// Synthetic few-shot classification tasks labeled by a hidden teacher prompt
// that lies inside the search subspace.

#include "bbt/batch.hpp"
#include "bbt/binary_io.hpp"
#include "bbt/subspace.hpp"
#include "bbt/surrogate.hpp"

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

namespace bbt {

struct PlantedTask {
  std::size_t shots = 0;    ///< k samples per class in train and dev
  std::size_t classes = 0;  ///< K
  std::size_t seq_len = 0;  ///< S
  std::size_t vocab = 0;    ///< V
  ProjectionSpec spec;      ///< only full_dim/sub_dim survive a file round trip
  std::vector<float> teacher_z;
  EvalBatch train;
  EvalBatch dev;
  EvalBatch test;

  bool operator==(const PlantedTask& other) const;
};

struct PlantOptions {
  std::uint64_t seed = 0;
  std::size_t shots = 16;
  std::size_t classes = 2;
  std::size_t seq_len = 47;
  std::size_t test_per_class = 64;
  double teacher_bound = 4.0;
  double min_margin = 0.1;
  /// Rows whose teacher gap exceeds this are skipped, keeping the sample near
  /// the teacher's decision boundary.
  double max_margin = std::numeric_limits<double>::infinity();
  std::size_t max_draws = 1'000'000;
};

/// Draws teacher_z in [-bound, bound]^d, samples random sequences, labels them
/// with the teacher prompt and keeps only rows whose top1 - top2 logit gap is
/// at least min_margin, until each split holds its per-class quota. Rows are
/// ordered class-major within a split.
PlantedTask plant_task(const PlantOptions& options, const SurrogateModel& model, const ProjectionSpec& spec,
                       const Projection& projection, const PromptBase& p0);

/// "BBTK" | u32 k, K, S, V, d, D | f32 teacher_z[d] | train, dev, test where
/// each split is u32 B | u16 ids[B*S] | u8 mask[B*S] | u8 labels[B] | u16 mask_pos[B].
Bytes encode_task(const PlantedTask& task);
PlantedTask decode_task(std::span<const std::uint8_t> bytes);
void save_task(const PlantedTask& task, const std::string& path);
PlantedTask load_task(const std::string& path);

}  // namespace bbt
