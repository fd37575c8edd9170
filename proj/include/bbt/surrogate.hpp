#pragma once

// A deliberately small masked-LM stand-in: embedding table, mean pooling of
// the attended tokens alongside the mean prompt vector, and a two-layer tanh
// MLP emitting one score per label word. Pure and deterministic.

#include "bbt/batch.hpp"
#include "bbt/losses.hpp"
#include "bbt/subspace.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <stdexcept>

namespace bbt {

/// Input the model cannot process (token id outside the vocabulary, a row
/// with nothing attended). Mapped to ModelError by the service.
class ModelInputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SurrogateConfig {
  std::size_t vocab = 2048;
  std::size_t embed_dim = 64;
  std::size_t hidden = 4;
  std::size_t classes = 2;
  std::uint64_t seed = 1;
  /// Gains on the first layer for the token and prompt halves of the input.
  double token_gain = 6.0;
  double prompt_gain = 3.0;
  double output_gain = 4.0;
};

class SurrogateModel {
 public:
  explicit SurrogateModel(SurrogateConfig config);

  const SurrogateConfig& config() const { return config_; }
  std::size_t classes() const { return config_.classes; }
  std::size_t embed_dim() const { return config_.embed_dim; }
  std::size_t vocab_size() const { return config_.vocab; }
  const EmbeddingTable& vocab_embeddings() const { return embeddings_; }

  /// Logits rounded to f32, as the service returns them.
  Logits forward(std::span<const float> prompt, const EvalBatch& batch) const;
  /// Same computation kept in double.
  Eigen::MatrixXd forward_exact(const Eigen::VectorXd& prompt, const EvalBatch& batch) const;

  /// Batch loss at `prompt` and its gradient with respect to the prompt.
  double loss_and_prompt_gradient(const Eigen::VectorXd& prompt, const EvalBatch& batch, LossKind kind,
                                  Eigen::VectorXd* gradient) const;

 private:
  Eigen::VectorXd mean_prompt_vector(const Eigen::VectorXd& prompt) const;
  Eigen::VectorXd pooled_tokens(const EvalBatch& batch, std::size_t row) const;
  void check_inputs(std::size_t prompt_size, const EvalBatch& batch) const;

  SurrogateConfig config_;
  EmbeddingTable embeddings_;
  Eigen::MatrixXd w_tokens_;  // hidden x e
  Eigen::MatrixXd w_prompt_;  // hidden x e
  Eigen::VectorXd b_hidden_;
  Eigen::MatrixXd w_out_;     // classes x hidden
  Eigen::VectorXd b_out_;
};

}  // namespace bbt
