#include "bbt/surrogate.hpp"

#include <cmath>
#include <random>
#include <string>

namespace bbt {

void EvalBatch::validate() const {
  const std::size_t cells = batch * seq_len;
  if (input_ids.size() != cells || attention_mask.size() != cells) {
    throw std::invalid_argument("batch: ids/mask size does not match B x S");
  }
  if (mask_pos.size() != batch) throw std::invalid_argument("batch: mask_pos size does not match B");
  for (std::uint16_t pos : mask_pos) {
    if (pos >= seq_len) throw std::invalid_argument("batch: mask position beyond sequence length");
  }
  for (std::uint8_t m : attention_mask) {
    if (m > 1) throw std::invalid_argument("batch: attention mask entries must be 0 or 1");
  }
  if (!labels.empty() && labels.size() != batch) throw std::invalid_argument("batch: labels size does not match B");
}

EvalBatch EvalBatch::slice(std::size_t begin, std::size_t count) const {
  if (begin + count > batch) throw std::out_of_range("batch slice out of range");
  EvalBatch out;
  out.batch = count;
  out.seq_len = seq_len;
  const auto cell0 = static_cast<std::ptrdiff_t>(begin * seq_len);
  const auto cell1 = static_cast<std::ptrdiff_t>((begin + count) * seq_len);
  out.input_ids.assign(input_ids.begin() + cell0, input_ids.begin() + cell1);
  out.attention_mask.assign(attention_mask.begin() + cell0, attention_mask.begin() + cell1);
  const auto b0 = static_cast<std::ptrdiff_t>(begin);
  const auto b1 = static_cast<std::ptrdiff_t>(begin + count);
  out.mask_pos.assign(mask_pos.begin() + b0, mask_pos.begin() + b1);
  if (!labels.empty()) out.labels.assign(labels.begin() + b0, labels.begin() + b1);
  return out;
}

SurrogateModel::SurrogateModel(SurrogateConfig config) : config_(config) {
  if (config_.vocab == 0 || config_.vocab > 65536) throw std::invalid_argument("surrogate: vocab must be in [1, 65536]");
  if (config_.embed_dim == 0 || config_.hidden == 0) throw std::invalid_argument("surrogate: empty layer");
  if (config_.classes < 2 || config_.classes > 255) throw std::invalid_argument("surrogate: classes must be in [2, 255]");

  const auto v = static_cast<Eigen::Index>(config_.vocab);
  const auto e = static_cast<Eigen::Index>(config_.embed_dim);
  const auto h = static_cast<Eigen::Index>(config_.hidden);
  const auto k = static_cast<Eigen::Index>(config_.classes);

  std::mt19937_64 rng(config_.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto draw = [&](double scale) { return scale * normal(rng); };

  embeddings_.resize(v, e);
  for (Eigen::Index i = 0; i < embeddings_.size(); ++i) embeddings_.data()[i] = static_cast<float>(draw(1.0));

  const double in_scale = 1.0 / std::sqrt(static_cast<double>(e));
  w_tokens_.resize(h, e);
  for (Eigen::Index i = 0; i < w_tokens_.size(); ++i) w_tokens_.data()[i] = draw(config_.token_gain * in_scale);
  w_prompt_.resize(h, e);
  for (Eigen::Index i = 0; i < w_prompt_.size(); ++i) w_prompt_.data()[i] = draw(config_.prompt_gain * in_scale);
  b_hidden_ = Eigen::VectorXd::Zero(h);
  w_out_.resize(k, h);
  const double out_scale = 1.0 / std::sqrt(static_cast<double>(h));
  for (Eigen::Index i = 0; i < w_out_.size(); ++i) w_out_.data()[i] = draw(config_.output_gain * out_scale);
  b_out_ = Eigen::VectorXd::Zero(k);
}

void SurrogateModel::check_inputs(std::size_t prompt_size, const EvalBatch& batch) const {
  if (prompt_size == 0 || prompt_size % config_.embed_dim != 0) {
    throw std::invalid_argument("surrogate: prompt length " + std::to_string(prompt_size) +
                                " is not a positive multiple of embed_dim " + std::to_string(config_.embed_dim));
  }
  batch.validate();
  for (std::uint16_t id : batch.input_ids) {
    if (id >= config_.vocab) {
      throw ModelInputError("token id " + std::to_string(id) + " outside vocabulary of " +
                            std::to_string(config_.vocab));
    }
  }
}

Eigen::VectorXd SurrogateModel::mean_prompt_vector(const Eigen::VectorXd& prompt) const {
  const auto e = static_cast<Eigen::Index>(config_.embed_dim);
  const Eigen::Index rows = prompt.size() / e;
  Eigen::VectorXd q = Eigen::VectorXd::Zero(e);
  for (Eigen::Index l = 0; l < rows; ++l) q += prompt.segment(l * e, e);
  return q / static_cast<double>(rows);
}

Eigen::VectorXd SurrogateModel::pooled_tokens(const EvalBatch& batch, std::size_t row) const {
  const auto ids = batch.ids_row(row);
  const auto mask = batch.mask_row(row);
  Eigen::VectorXd t = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(config_.embed_dim));
  std::size_t count = 0;
  for (std::size_t j = 0; j < ids.size(); ++j) {
    if (mask[j] == 0) continue;
    t += embeddings_.row(ids[j]).transpose().cast<double>();
    ++count;
  }
  if (count == 0) throw ModelInputError("row " + std::to_string(row) + " has no attended tokens");
  return t / static_cast<double>(count);
}

Eigen::MatrixXd SurrogateModel::forward_exact(const Eigen::VectorXd& prompt, const EvalBatch& batch) const {
  check_inputs(static_cast<std::size_t>(prompt.size()), batch);
  const Eigen::VectorXd shift = w_prompt_ * mean_prompt_vector(prompt) + b_hidden_;
  Eigen::MatrixXd out(static_cast<Eigen::Index>(batch.batch), static_cast<Eigen::Index>(config_.classes));
  for (std::size_t i = 0; i < batch.batch; ++i) {
    const Eigen::VectorXd hidden = (w_tokens_ * pooled_tokens(batch, i) + shift).array().tanh().matrix();
    out.row(static_cast<Eigen::Index>(i)) = (w_out_ * hidden + b_out_).transpose();
  }
  return out;
}

Logits SurrogateModel::forward(std::span<const float> prompt, const EvalBatch& batch) const {
  Eigen::VectorXd p(static_cast<Eigen::Index>(prompt.size()));
  for (std::size_t i = 0; i < prompt.size(); ++i) p[static_cast<Eigen::Index>(i)] = prompt[i];
  const Eigen::MatrixXd exact = forward_exact(p, batch);
  Logits out(batch.batch, config_.classes);
  for (std::size_t i = 0; i < out.rows; ++i) {
    for (std::size_t k = 0; k < out.cols; ++k) {
      out.at(i, k) = static_cast<float>(exact(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)));
    }
  }
  return out;
}

double SurrogateModel::loss_and_prompt_gradient(const Eigen::VectorXd& prompt, const EvalBatch& batch, LossKind kind,
                                                Eigen::VectorXd* gradient) const {
  check_inputs(static_cast<std::size_t>(prompt.size()), batch);
  if (batch.labels.size() != batch.batch) throw std::invalid_argument("surrogate: gradient needs labels");
  const Eigen::VectorXd shift = w_prompt_ * mean_prompt_vector(prompt) + b_hidden_;
  const auto b = static_cast<Eigen::Index>(batch.batch);
  Eigen::MatrixXd hidden(static_cast<Eigen::Index>(config_.hidden), b);
  Eigen::MatrixXd logits(b, static_cast<Eigen::Index>(config_.classes));
  for (Eigen::Index i = 0; i < b; ++i) {
    hidden.col(i) = (w_tokens_ * pooled_tokens(batch, static_cast<std::size_t>(i)) + shift).array().tanh().matrix();
    logits.row(i) = (w_out_ * hidden.col(i) + b_out_).transpose();
  }
  const double loss = batch_loss(kind, logits, batch.labels);
  if (gradient == nullptr) return loss;

  const Eigen::MatrixXd g_logits = batch_loss_logit_gradient(kind, logits, batch.labels);
  // Every row shares the same prompt shift, so the pre-activation gradients sum.
  const Eigen::MatrixXd g_pre =
      (w_out_.transpose() * g_logits.transpose()).cwiseProduct((1.0 - hidden.array().square()).matrix());
  const Eigen::VectorXd g_mean_prompt = w_prompt_.transpose() * g_pre.rowwise().sum();

  const auto e = static_cast<Eigen::Index>(config_.embed_dim);
  const Eigen::Index rows = prompt.size() / e;
  gradient->resize(prompt.size());
  for (Eigen::Index l = 0; l < rows; ++l) gradient->segment(l * e, e) = g_mean_prompt / static_cast<double>(rows);
  return loss;
}

}  // namespace bbt
