#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "milgrad/types.hpp"

namespace milgrad {

// 3x3 counts; rows = true class, columns = predicted class, order
// mild, moderate, severe.
struct ConfusionMatrix3 {
  std::array<std::array<std::int64_t, 3>, 3> counts{};

  std::int64_t total() const;
  std::int64_t& at(int truth, int predicted) {
    return counts[static_cast<std::size_t>(truth)][static_cast<std::size_t>(predicted)];
  }
  std::int64_t at(int truth, int predicted) const {
    return counts[static_cast<std::size_t>(truth)][static_cast<std::size_t>(predicted)];
  }
};

// AUC of a binary ranking problem via the rank statistic with midrank tie
// handling. Labels are 0/1; both classes must be present.
double binary_auc(std::span<const double> scores, std::span<const int> labels);

// Micro-average one-vs-rest AUC: every (bag, class) pair becomes one binary
// decision scored by that class's probability, flattened into a single
// ranking problem. Probability vectors must sum to 1 within 1e-9.
double micro_auc(const std::vector<Vector>& probabilities, std::span<const int> labels);

// Linearly weighted Cohen's kappa: kappa = 1 - sum(w o) / sum(w e) with
// w_ij = |i - j| / 2. Degenerate zero expected disagreement with perfect
// agreement yields 1 by convention.
double weighted_kappa(std::span<const int> predictions, std::span<const int> labels);

ConfusionMatrix3 confusion(std::span<const int> predictions, std::span<const int> labels);

// Monotone step curve: after inspecting the top i of B ranked bags, what
// fraction of the flagged ones has been found.
struct DetectionCurve {
  std::vector<double> fraction_inspected;  // i / B, strictly increasing
  std::vector<double> fraction_found;      // found_i / F, non-decreasing
};

// Curve value at the largest inspected fraction <= the requested one
// (step interpolation); 0 when the request precedes the first point.
double recall_at_fraction(const DetectionCurve& curve, double fraction);

// Mean height of the step curve; a uniformly random ranking gives ~0.5.
double curve_area(const DetectionCurve& curve);

struct MetricBundle {
  double auc = 0.0;
  double kappa = 0.0;
  ConfusionMatrix3 matrix;
};

}  // namespace milgrad
