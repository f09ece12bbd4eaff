// matcher.hpp: learned pairwise affinity head.
//
// Each (current, past) embedding pair is concatenated and fed through a small
// shared MLP (the 1x1-convolution stack over the pair tensor), giving one raw
// affinity per pair. A constant non-match logit column is appended and rows are
// softmaxed, in both the backward (current -> past) and forward (past -> current)
// directions.
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace deft {

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
};

/// Layer stack 2e -> ... -> 1. ReLU between layers, identity on the output.
struct MatcherParams {
  std::vector<DenseLayer> layers;

  int input_dim() const;
  int embedding_dim() const { return input_dim() / 2; }

  /// Throws std::invalid_argument if the chain is inconsistent, the output is not
  /// scalar, or any weight is non-finite.
  void check() const;

  /// Learnable tensors in a fixed order (weight0, bias0, weight1, ...).
  std::vector<std::span<double>> tensors();
  std::vector<std::span<const double>> tensors() const;

  static MatcherParams zeros_like(const MatcherParams& other);
};

/// Hidden widths used by init_matcher when none are given.
std::vector<int> default_hidden_widths(int embedding_dim);

/// Builds a 4-6 layer head with fan-in scaled uniform weights and zero biases.
/// Throws std::invalid_argument unless 3 <= hidden.size() <= 5.
MatcherParams init_matcher(int embedding_dim, std::span<const int> hidden, std::uint64_t seed);
MatcherParams init_matcher(int embedding_dim, std::uint64_t seed);

struct AffinityPair {
  Eigen::MatrixXd raw;  // N_t x N_m
  Eigen::MatrixXd bwd;  // N_t x (N_m + 1), row-stochastic
  Eigen::MatrixXd fwd;  // N_m x (N_t + 1), row-stochastic
};

/// First-layer projection of the current frame (plus bias), shared by every
/// past frame compared against it.
struct CurrentProjection {
  Eigen::MatrixXd values;  // h0 x N_t
  Eigen::Index n = 0;
};
CurrentProjection project_current(const Eigen::MatrixXd& emb_t, const MatcherParams& params);

/// A(i, j) = MLP([emb_t.row(i), emb_past.row(j)]).
Eigen::MatrixXd raw_affinity(const Eigen::MatrixXd& emb_t, const Eigen::MatrixXd& emb_past,
                             const MatcherParams& params);
Eigen::MatrixXd raw_affinity(const CurrentProjection& current, const Eigen::MatrixXd& emb_past,
                             const MatcherParams& params);

/// Appends a column of `c` and applies a max-shifted softmax to every row.
Eigen::MatrixXd augment_softmax(const Eigen::MatrixXd& a, double c);

AffinityPair matcher_forward(const Eigen::MatrixXd& emb_t, const Eigen::MatrixXd& emb_past,
                             const MatcherParams& params, double c);
AffinityPair matcher_forward(const CurrentProjection& current, const Eigen::MatrixXd& emb_past,
                             const MatcherParams& params, double c);

struct MatcherGradients {
  MatcherParams params;
  Eigen::MatrixXd emb_t;
  Eigen::MatrixXd emb_past;
};

/// Reverse-mode gradients of sum(grad_bwd .* bwd) + sum(grad_fwd .* fwd).
MatcherGradients matcher_backward(const Eigen::MatrixXd& emb_t, const Eigen::MatrixXd& emb_past,
                                  const MatcherParams& params, double c,
                                  const Eigen::MatrixXd& grad_bwd,
                                  const Eigen::MatrixXd& grad_fwd);

/// Gradient of a row softmax: given probabilities and upstream gradient.
Eigen::MatrixXd softmax_backward(const Eigen::MatrixXd& probs, const Eigen::MatrixXd& grad);

}  // namespace deft
