#include "bbt/inference.hpp"

namespace bbt {

SubspaceContext make_subspace_context(const ProjectionSpec& spec, const SurrogateModel& model, std::uint64_t p0_seed,
                                      PromptSource source) {
  if (spec.full_dim % model.embed_dim() != 0) {
    throw std::invalid_argument("prompt dimension is not a multiple of the model embedding width");
  }
  SubspaceContext ctx;
  ctx.projection = std::make_shared<const Projection>(spec);
  const std::size_t prompt_length = spec.full_dim / model.embed_dim();
  ctx.p0 = make_prompt_base(source, prompt_length, model.embed_dim(), &model.vocab_embeddings(), p0_seed);
  return ctx;
}

}  // namespace bbt
