#include "milgrad/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace milgrad {

std::int64_t ConfusionMatrix3::total() const {
  std::int64_t t = 0;
  for (const auto& row : counts) {
    for (auto v : row) {
      t += v;
    }
  }
  return t;
}

double binary_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw std::runtime_error("binary_auc: scores and labels differ in length");
  }
  const std::size_t n = scores.size();
  std::size_t positives = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) {
      throw std::runtime_error("binary_auc: labels must be 0 or 1");
    }
    positives += static_cast<std::size_t>(l);
  }
  if (positives == 0 || positives == n) {
    throw std::runtime_error("AUC undefined");
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Midranks over tied score groups.
  double positive_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) {
      ++j;
    }
    const double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) {
        positive_rank_sum += midrank;
      }
    }
    i = j;
  }
  const double p = static_cast<double>(positives);
  const double m = static_cast<double>(n - positives);
  return (positive_rank_sum - p * (p + 1.0) / 2.0) / (p * m);
}

double micro_auc(const std::vector<Vector>& probabilities, std::span<const int> labels) {
  if (probabilities.size() != labels.size()) {
    throw std::runtime_error("micro_auc: probabilities and labels differ in length");
  }
  if (probabilities.empty()) {
    throw std::runtime_error("micro_auc: empty input");
  }
  bool all_same = true;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= kNumClasses) {
      throw std::runtime_error("micro_auc: label out of range");
    }
    all_same = all_same && labels[i] == labels[0];
  }
  if (all_same) {
    throw std::runtime_error("AUC undefined");
  }
  std::vector<double> flat_scores;
  std::vector<int> flat_labels;
  flat_scores.reserve(probabilities.size() * kNumClasses);
  flat_labels.reserve(probabilities.size() * kNumClasses);
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    const Vector& p = probabilities[i];
    if (p.size() != kNumClasses) {
      throw std::runtime_error("micro_auc: probability vector has wrong length");
    }
    if (std::abs(p.sum() - 1.0) > 1e-9) {
      throw std::runtime_error("micro_auc: probability vector does not sum to 1");
    }
    for (int c = 0; c < kNumClasses; ++c) {
      flat_scores.push_back(p(c));
      flat_labels.push_back(labels[i] == c ? 1 : 0);
    }
  }
  return binary_auc(flat_scores, flat_labels);
}

double weighted_kappa(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) {
    throw std::runtime_error("weighted_kappa: predictions and labels differ in length");
  }
  if (predictions.empty()) {
    throw std::runtime_error("weighted_kappa: empty input");
  }
  const double n = static_cast<double>(predictions.size());
  std::array<std::array<double, 3>, 3> observed{};
  std::array<double, 3> pred_marginal{}, label_marginal{};
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const int p = predictions[i];
    const int l = labels[i];
    if (p < 0 || p >= kNumClasses || l < 0 || l >= kNumClasses) {
      throw std::runtime_error("weighted_kappa: class out of range");
    }
    observed[static_cast<std::size_t>(l)][static_cast<std::size_t>(p)] += 1.0 / n;
    pred_marginal[static_cast<std::size_t>(p)] += 1.0 / n;
    label_marginal[static_cast<std::size_t>(l)] += 1.0 / n;
  }
  double weighted_observed = 0.0;
  double weighted_expected = 0.0;
  for (int i = 0; i < kNumClasses; ++i) {
    for (int j = 0; j < kNumClasses; ++j) {
      const double w = std::abs(i - j) / 2.0;
      weighted_observed += w * observed[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      weighted_expected += w * label_marginal[static_cast<std::size_t>(i)] *
                           pred_marginal[static_cast<std::size_t>(j)];
    }
  }
  if (weighted_expected == 0.0) {
    return 1.0;  // both marginals degenerate at one class => perfect agreement
  }
  return 1.0 - weighted_observed / weighted_expected;
}

ConfusionMatrix3 confusion(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) {
    throw std::runtime_error("confusion: predictions and labels differ in length");
  }
  ConfusionMatrix3 out;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const int p = predictions[i];
    const int l = labels[i];
    if (p < 0 || p >= kNumClasses || l < 0 || l >= kNumClasses) {
      throw std::runtime_error("confusion: class out of range");
    }
    ++out.at(l, p);
  }
  return out;
}

double recall_at_fraction(const DetectionCurve& curve, double fraction) {
  if (!(fraction > 0.0) || fraction > 1.0) {
    throw std::runtime_error("fraction must be in (0, 1]");
  }
  if (curve.fraction_inspected.empty() ||
      curve.fraction_inspected.size() != curve.fraction_found.size()) {
    throw std::runtime_error("malformed detection curve");
  }
  double value = 0.0;
  for (std::size_t i = 0; i < curve.fraction_inspected.size(); ++i) {
    if (curve.fraction_inspected[i] <= fraction + 1e-12) {
      value = curve.fraction_found[i];
    } else {
      break;
    }
  }
  return value;
}

double curve_area(const DetectionCurve& curve) {
  if (curve.fraction_found.empty()) {
    throw std::runtime_error("malformed detection curve");
  }
  double sum = 0.0;
  for (double y : curve.fraction_found) {
    sum += y;
  }
  return sum / static_cast<double>(curve.fraction_found.size());
}

}  // namespace milgrad
