#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace bbt {

/// Row-major B x K matrix of label-word scores.
struct Logits {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> values;

  Logits() = default;
  Logits(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c, 0.0f) {}

  std::span<const float> row(std::size_t i) const { return {values.data() + i * cols, cols}; }
  std::span<float> row(std::size_t i) { return {values.data() + i * cols, cols}; }
  float& at(std::size_t i, std::size_t k) { return values[i * cols + k]; }
  float at(std::size_t i, std::size_t k) const { return values[i * cols + k]; }
  bool operator==(const Logits&) const = default;
};

enum class LossKind : std::uint8_t { CrossEntropy, Hinge, NegAccuracy };

std::string to_string(LossKind kind);
/// Accepts "ce", "hinge", "acc".
LossKind loss_kind_from_string(const std::string& name);

inline constexpr double kHingeMargin = 2.0;

/// -log softmax(logits)[label] via max-shifted log-sum-exp.
double cross_entropy(std::span<const double> logits, std::size_t label);
/// sum_{i != label} max(0, margin + y_i - y_label)
double hinge(std::span<const double> logits, std::size_t label, double margin = kHingeMargin);
/// Index of the largest entry; ties go to the lowest index.
std::size_t argmax(std::span<const double> logits);

double neg_accuracy(const Logits& logits, std::span<const std::uint8_t> labels);
/// CE and hinge are averaged over rows; NegAccuracy is batch-level already.
double batch_loss(LossKind kind, const Logits& logits, std::span<const std::uint8_t> labels);

// Double-precision variants over a B x K Eigen matrix.
double neg_accuracy(const Eigen::MatrixXd& logits, std::span<const std::uint8_t> labels);
double batch_loss(LossKind kind, const Eigen::MatrixXd& logits, std::span<const std::uint8_t> labels);
/// d(batch_loss)/d(logits) for CE (exact) and hinge (subgradient).
Eigen::MatrixXd batch_loss_logit_gradient(LossKind kind, const Eigen::MatrixXd& logits,
                                          std::span<const std::uint8_t> labels);

}  // namespace bbt
