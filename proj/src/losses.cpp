#include "bbt/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace bbt {

namespace {

void check_label(std::size_t label, std::size_t classes) {
  if (label >= classes) {
    throw std::out_of_range("label " + std::to_string(label) + " out of range for " +
                            std::to_string(classes) + " classes");
  }
}

void check_shapes(std::size_t rows, std::size_t labels) {
  if (rows == 0) throw std::invalid_argument("empty batch");
  if (rows != labels) throw std::invalid_argument("logits rows and labels differ in length");
}

std::vector<double> widen(std::span<const float> row) { return {row.begin(), row.end()}; }

std::vector<double> row_of(const Eigen::MatrixXd& m, Eigen::Index i) {
  std::vector<double> r(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index k = 0; k < m.cols(); ++k) r[static_cast<std::size_t>(k)] = m(i, k);
  return r;
}

double row_loss(LossKind kind, std::span<const double> row, std::size_t label) {
  switch (kind) {
    case LossKind::CrossEntropy: return cross_entropy(row, label);
    case LossKind::Hinge: return hinge(row, label);
    case LossKind::NegAccuracy: break;
  }
  throw std::logic_error("row_loss: negative accuracy has no per-row form");
}

}  // namespace

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::CrossEntropy: return "ce";
    case LossKind::Hinge: return "hinge";
    case LossKind::NegAccuracy: return "acc";
  }
  return "unknown";
}

LossKind loss_kind_from_string(const std::string& name) {
  if (name == "ce") return LossKind::CrossEntropy;
  if (name == "hinge") return LossKind::Hinge;
  if (name == "acc") return LossKind::NegAccuracy;
  throw std::invalid_argument("unknown loss '" + name + "' (expected ce, hinge or acc)");
}

double cross_entropy(std::span<const double> logits, std::size_t label) {
  check_label(label, logits.size());
  const double top = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - top);
  return std::log(sum) - (logits[label] - top);
}

double hinge(std::span<const double> logits, std::size_t label, double margin) {
  check_label(label, logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (i != label) total += std::max(0.0, margin + logits[i] - logits[label]);
  }
  return total;
}

std::size_t argmax(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("argmax of an empty row");
  return static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

double neg_accuracy(const Logits& logits, std::span<const std::uint8_t> labels) {
  check_shapes(logits.rows, labels.size());
  std::size_t correct = 0;
  for (std::size_t i = 0; i < logits.rows; ++i) {
    if (argmax(widen(logits.row(i))) == labels[i]) ++correct;
  }
  return -static_cast<double>(correct) / static_cast<double>(logits.rows);
}

double batch_loss(LossKind kind, const Logits& logits, std::span<const std::uint8_t> labels) {
  if (kind == LossKind::NegAccuracy) return neg_accuracy(logits, labels);
  check_shapes(logits.rows, labels.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.rows; ++i) total += row_loss(kind, widen(logits.row(i)), labels[i]);
  return total / static_cast<double>(logits.rows);
}

double neg_accuracy(const Eigen::MatrixXd& logits, std::span<const std::uint8_t> labels) {
  check_shapes(static_cast<std::size_t>(logits.rows()), labels.size());
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    if (argmax(row_of(logits, i)) == labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return -static_cast<double>(correct) / static_cast<double>(logits.rows());
}

double batch_loss(LossKind kind, const Eigen::MatrixXd& logits, std::span<const std::uint8_t> labels) {
  if (kind == LossKind::NegAccuracy) return neg_accuracy(logits, labels);
  check_shapes(static_cast<std::size_t>(logits.rows()), labels.size());
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    total += row_loss(kind, row_of(logits, i), labels[static_cast<std::size_t>(i)]);
  }
  return total / static_cast<double>(logits.rows());
}

Eigen::MatrixXd batch_loss_logit_gradient(LossKind kind, const Eigen::MatrixXd& logits,
                                          std::span<const std::uint8_t> labels) {
  check_shapes(static_cast<std::size_t>(logits.rows()), labels.size());
  if (kind == LossKind::NegAccuracy) {
    throw std::invalid_argument("negative accuracy is piecewise constant and has no useful gradient");
  }
  const double scale = 1.0 / static_cast<double>(logits.rows());
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const auto label = static_cast<Eigen::Index>(labels[static_cast<std::size_t>(i)]);
    check_label(static_cast<std::size_t>(label), static_cast<std::size_t>(logits.cols()));
    if (kind == LossKind::CrossEntropy) {
      const double top = logits.row(i).maxCoeff();
      Eigen::RowVectorXd p = (logits.row(i).array() - top).exp();
      p /= p.sum();
      p[label] -= 1.0;
      grad.row(i) = scale * p;
    } else {
      for (Eigen::Index k = 0; k < logits.cols(); ++k) {
        if (k != label && kHingeMargin + logits(i, k) - logits(i, label) > 0.0) {
          grad(i, k) += scale;
          grad(i, label) -= scale;
        }
      }
    }
  }
  return grad;
}

}  // namespace bbt
