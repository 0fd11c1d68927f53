#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "milgrad/types.hpp"

namespace milgrad {

// One patient visit: N feature-vector instances under a single bag-level
// label. The presence mask is the removal mechanism — instances stay in
// storage, absent ones take no part in attention pooling or loss.
struct Bag {
  std::uint32_t id = 0;
  Matrix features;  // N x F, one row per instance
  int reader1_label = kMild;
  std::optional<int> reader2_label;
  double latent_severity = 0.0;
  std::vector<std::uint8_t> presence;  // N flags

  Index num_instances() const { return features.rows(); }

  Index num_present() const {
    Index n = 0;
    for (auto f : presence) {
      n += (f != 0);
    }
    return n;
  }

  bool is_present(Index i) const {
    return i >= 0 && i < static_cast<Index>(presence.size()) &&
           presence[static_cast<std::size_t>(i)] != 0;
  }
};

}  // namespace milgrad
