#pragma once

// Independent reference implementations used as test oracles. Everything in
// here is straight-line loop code over raw coefficients, deliberately not
// sharing any computation path with the library (no Graph, no Eigen products,
// no metric rank statistics).

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "milgrad/bag.hpp"
#include "milgrad/model.hpp"
#include "milgrad/rng.hpp"
#include "milgrad/types.hpp"

namespace oracles {

using milgrad::Bag;
using milgrad::Index;
using milgrad::Matrix;
using milgrad::ModelParams;
using milgrad::Vector;

inline double activate(double x, milgrad::Activation act) {
  return act == milgrad::Activation::kTanh ? std::tanh(x) : (x > 0.0 ? x : 0.0);
}

// Per-instance encoder as plain loops: one or two layers, activation after
// every layer.
inline std::vector<double> encode_oracle(const ModelParams& p, const Bag& bag, Index row) {
  const auto& cfg = p.config;
  std::vector<double> h1;
  if (cfg.encoder_hidden > 0) {
    h1.resize(static_cast<std::size_t>(cfg.encoder_hidden));
    for (Index j = 0; j < cfg.encoder_hidden; ++j) {
      double acc = p.enc_b1(0, j);
      for (Index f = 0; f < cfg.feature_dim; ++f) {
        acc += bag.features(row, f) * p.enc_w1(f, j);
      }
      h1[static_cast<std::size_t>(j)] = activate(acc, cfg.activation);
    }
    std::vector<double> out(static_cast<std::size_t>(cfg.embed_dim));
    for (Index d = 0; d < cfg.embed_dim; ++d) {
      double acc = p.enc_b2(0, d);
      for (Index j = 0; j < cfg.encoder_hidden; ++j) {
        acc += h1[static_cast<std::size_t>(j)] * p.enc_w2(j, d);
      }
      out[static_cast<std::size_t>(d)] = activate(acc, cfg.activation);
    }
    return out;
  }
  std::vector<double> out(static_cast<std::size_t>(cfg.embed_dim));
  for (Index d = 0; d < cfg.embed_dim; ++d) {
    double acc = p.enc_b1(0, d);
    for (Index f = 0; f < cfg.feature_dim; ++f) {
      acc += bag.features(row, f) * p.enc_w1(f, d);
    }
    out[static_cast<std::size_t>(d)] = activate(acc, cfg.activation);
  }
  return out;
}

struct MilForwardOracle {
  std::vector<double> probabilities;  // 3
  std::vector<double> attention;      // N
  std::vector<double> bag_embedding;  // D
  double loss = 0.0;                  // -log prob of label when label >= 0
};

inline MilForwardOracle mil_forward_oracle(const ModelParams& p, const Bag& bag, int label = -1) {
  const auto& cfg = p.config;
  const Index n = bag.num_instances();

  std::vector<std::vector<double>> h(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    h[static_cast<std::size_t>(i)] = encode_oracle(p, bag, i);
  }

  // Gated tanh attention scores, masked softmax over present instances.
  std::vector<double> score(static_cast<std::size_t>(n), 0.0);
  for (Index i = 0; i < n; ++i) {
    double s = 0.0;
    for (Index a = 0; a < cfg.attention_dim; ++a) {
      double gate = 0.0;
      for (Index d = 0; d < cfg.embed_dim; ++d) {
        gate += h[static_cast<std::size_t>(i)][static_cast<std::size_t>(d)] * p.attn_v(d, a);
      }
      s += std::tanh(gate) * p.attn_w(a, 0);
    }
    score[static_cast<std::size_t>(i)] = s;
  }
  double max_present = -1e300;
  for (Index i = 0; i < n; ++i) {
    if (bag.is_present(i)) {
      max_present = std::max(max_present, score[static_cast<std::size_t>(i)]);
    }
  }
  MilForwardOracle out;
  out.attention.assign(static_cast<std::size_t>(n), 0.0);
  double denom = 0.0;
  for (Index i = 0; i < n; ++i) {
    if (bag.is_present(i)) {
      denom += std::exp(score[static_cast<std::size_t>(i)] - max_present);
    }
  }
  for (Index i = 0; i < n; ++i) {
    if (bag.is_present(i)) {
      out.attention[static_cast<std::size_t>(i)] =
          std::exp(score[static_cast<std::size_t>(i)] - max_present) / denom;
    }
  }

  out.bag_embedding.assign(static_cast<std::size_t>(cfg.embed_dim), 0.0);
  for (Index d = 0; d < cfg.embed_dim; ++d) {
    double acc = 0.0;
    for (Index i = 0; i < n; ++i) {
      acc += out.attention[static_cast<std::size_t>(i)] *
             h[static_cast<std::size_t>(i)][static_cast<std::size_t>(d)];
    }
    out.bag_embedding[static_cast<std::size_t>(d)] = acc;
  }

  std::vector<double> c1(static_cast<std::size_t>(cfg.head_hidden));
  for (Index j = 0; j < cfg.head_hidden; ++j) {
    double acc = p.head_b1(0, j);
    for (Index d = 0; d < cfg.embed_dim; ++d) {
      acc += out.bag_embedding[static_cast<std::size_t>(d)] * p.head_w1(d, j);
    }
    c1[static_cast<std::size_t>(j)] = activate(acc, cfg.activation);
  }
  std::vector<double> logits(3);
  for (Index c = 0; c < 3; ++c) {
    double acc = p.head_b2(0, c);
    for (Index j = 0; j < cfg.head_hidden; ++j) {
      acc += c1[static_cast<std::size_t>(j)] * p.head_w2(j, c);
    }
    logits[static_cast<std::size_t>(c)] = acc;
  }
  const double max_logit = std::max({logits[0], logits[1], logits[2]});
  double z = 0.0;
  for (double l : logits) {
    z += std::exp(l - max_logit);
  }
  out.probabilities.resize(3);
  for (int c = 0; c < 3; ++c) {
    out.probabilities[static_cast<std::size_t>(c)] =
        std::exp(logits[static_cast<std::size_t>(c)] - max_logit) / z;
  }
  if (label >= 0) {
    out.loss = -(logits[static_cast<std::size_t>(label)] - max_logit - std::log(z));
  }
  return out;
}

// Bag with the masked-out instances physically deleted (brute-force removal).
inline Bag physically_reduced(const Bag& bag, const std::vector<std::uint8_t>& keep) {
  Bag out;
  out.id = bag.id;
  out.reader1_label = bag.reader1_label;
  out.reader2_label = bag.reader2_label;
  out.latent_severity = bag.latent_severity;
  Index rows = 0;
  for (auto f : keep) {
    rows += (f != 0);
  }
  out.features.resize(rows, bag.features.cols());
  Index at = 0;
  for (Index i = 0; i < bag.num_instances(); ++i) {
    if (keep[static_cast<std::size_t>(i)]) {
      out.features.row(at++) = bag.features.row(i);
    }
  }
  out.presence.assign(static_cast<std::size_t>(rows), std::uint8_t{1});
  return out;
}

// O(n^2) AUC: concordant pairs plus half ties over positive x negative pairs.
inline double auc_pair_counting(const std::vector<double>& scores, const std::vector<int>& labels) {
  double concordant = 0.0;
  double ties = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) {
      continue;
    }
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) {
        continue;
      }
      ++pairs;
      if (scores[i] > scores[j]) {
        concordant += 1.0;
      } else if (scores[i] == scores[j]) {
        ties += 1.0;
      }
    }
  }
  return (concordant + 0.5 * ties) / static_cast<double>(pairs);
}

// Micro-average one-vs-rest flattening, then the pair-counting AUC.
inline double micro_auc_oracle(const std::vector<Vector>& probs, const std::vector<int>& labels) {
  std::vector<double> scores;
  std::vector<int> flat;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    for (int c = 0; c < 3; ++c) {
      scores.push_back(probs[i](c));
      flat.push_back(labels[i] == c ? 1 : 0);
    }
  }
  return auc_pair_counting(scores, flat);
}

// Direct evaluation of kappa = 1 - sum(w O) / sum(w E), w_ij = |i-j|/2.
inline double kappa_oracle(const std::vector<int>& predictions, const std::vector<int>& labels) {
  const double n = static_cast<double>(predictions.size());
  double o[3][3] = {};
  double pm[3] = {};
  double lm[3] = {};
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    o[labels[i]][predictions[i]] += 1.0;
    lm[labels[i]] += 1.0;
    pm[predictions[i]] += 1.0;
  }
  double num = 0.0;
  double den = 0.0;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      const double w = std::abs(i - j) / 2.0;
      num += w * o[i][j] / n;
      den += w * (lm[i] / n) * (pm[j] / n);
    }
  }
  if (den == 0.0) {
    return 1.0;
  }
  return 1.0 - num / den;
}

// Random model/bag builders shared by the suites.
inline ModelParams random_params(const milgrad::ModelConfig& cfg, std::uint64_t seed) {
  milgrad::Rng rng(seed);
  return milgrad::init_model_params(cfg, rng);
}

inline Bag random_bag(Index n, Index f, std::uint64_t seed, int label = 0) {
  milgrad::Rng rng(seed);
  Bag bag;
  bag.id = static_cast<std::uint32_t>(seed & 0xffff);
  bag.reader1_label = label;
  bag.features.resize(n, f);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < f; ++j) {
      bag.features(i, j) = rng.normal();
    }
  }
  bag.presence.assign(static_cast<std::size_t>(n), std::uint8_t{1});
  return bag;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("milgrad_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open " + path.string());
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace oracles
