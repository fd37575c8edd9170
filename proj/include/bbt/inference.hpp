#pragma once

// The black-box API as seen by the tuner: send a subspace point and a batch,
// get label-word logits back. Nothing else (weights, gradients, activations)
// is reachable through this interface.

#include "bbt/batch.hpp"
#include "bbt/losses.hpp"
#include "bbt/subspace.hpp"
#include "bbt/surrogate.hpp"

#include <atomic>
#include <cstdint>
#include <memory>
#include <span>

namespace bbt {

/// Projection and base prompt shared by whoever turns z into a prompt.
struct SubspaceContext {
  std::shared_ptr<const Projection> projection;
  PromptBase p0;

  std::vector<float> prompt_for(std::span<const float> z) const { return project(*projection, z, p0); }
};

/// Builds A from `spec` and p0 from random vocabulary rows of `model`.
SubspaceContext make_subspace_context(const ProjectionSpec& spec, const SurrogateModel& model,
                                      std::uint64_t p0_seed, PromptSource source = PromptSource::RandomVocabTokens);

class InferenceApi {
 public:
  virtual ~InferenceApi() = default;
  /// One API call. Must be safe to call concurrently.
  virtual Logits query(std::span<const float> z, const EvalBatch& batch) = 0;
  /// Calls issued so far, retries included.
  virtual std::uint64_t calls() const = 0;
};

/// In-process service: projects z and runs the surrogate.
class LocalInference final : public InferenceApi {
 public:
  LocalInference(std::shared_ptr<const SurrogateModel> model, SubspaceContext context)
      : model_(std::move(model)), context_(std::move(context)) {}

  Logits query(std::span<const float> z, const EvalBatch& batch) override {
    calls_.fetch_add(1, std::memory_order_relaxed);
    return model_->forward(context_.prompt_for(z), batch);
  }
  std::uint64_t calls() const override { return calls_.load(std::memory_order_relaxed); }

 private:
  std::shared_ptr<const SurrogateModel> model_;
  SubspaceContext context_;
  std::atomic<std::uint64_t> calls_{0};
};

}  // namespace bbt
