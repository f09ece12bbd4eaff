// training.hpp: matching supervision, balanced joint loss and the matcher training loop.
#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "deft/core.hpp"
#include "deft/matcher.hpp"

namespace deft {

/// N_max x (N_max + 1) binary matrices; column N_max is "no match".
struct GroundTruthMatch {
  Eigen::MatrixXd fwd;  // rows: past-frame objects
  Eigen::MatrixXd bwd;  // rows: current-frame objects
  int n_t = 0;
  int n_past = 0;
  int n_max = 0;
};

/// Negative ids never match. Throws std::invalid_argument when a list exceeds
/// n_max or repeats a non-negative id.
GroundTruthMatch build_gt_matrices(std::span<const int> ids_t, std::span<const int> ids_past,
                                   int n_max);

inline constexpr double kLogEpsilon = 1e-12;

/// (L_fwd + L_bwd) / (2 (N_t + N_past)) with L_* = -sum M log(max(A_hat, eps)).
/// `a_hat_bwd` is N_t x (N_past + 1) and `a_hat_fwd` is N_past x (N_t + 1).
double matching_loss(const Eigen::MatrixXd& a_hat_fwd, const Eigen::MatrixXd& a_hat_bwd,
                     const GroundTruthMatch& gt, int n_t, int n_past);

struct MatchingLossGrad {
  double loss = 0.0;
  Eigen::MatrixXd d_fwd;
  Eigen::MatrixXd d_bwd;
};

MatchingLossGrad matching_loss_grad(const Eigen::MatrixXd& a_hat_fwd,
                                    const Eigen::MatrixXd& a_hat_bwd,
                                    const GroundTruthMatch& gt, int n_t, int n_past);

/// Learnable log-scale weights of the detection and matching terms.
struct LossBalancer {
  double lambda_det = 0.0;
  double lambda_match = 0.0;
};

struct JointLoss {
  double value = 0.0;
  double d_lambda_det = 0.0;
  double d_lambda_match = 0.0;
  double d_match = 0.0;  // derivative w.r.t. the matching loss
};

/// e^-l1 (L_det_t + L_det_tn)/2 + e^-l2 L_match + l1 + l2 with analytic derivatives.
JointLoss joint_loss(double det_t, double det_tn, double match, const LossBalancer& balancer);

struct FramePair {
  int past = 0;
  int current = 0;
};

/// Frame indices in [0, length) separated by n ~ U[1, min(n_gap, length - 1)].
/// Throws std::invalid_argument for sequences shorter than two frames.
FramePair sample_pair(int length, int n_gap, std::mt19937_64& rng);

struct LabeledFrame {
  Eigen::MatrixXd embeddings;  // one row per detection
  std::vector<int> ids;        // identity per row, -1 for clutter
};
using LabeledSequence = std::vector<LabeledFrame>;

/// Scalar detection loss for the two frames of a training pair.
using DetectionLossProvider = std::function<double(int current_frame, int past_frame)>;

struct MatcherTrainOptions {
  int epochs = 20;
  int pairs_per_epoch = 400;
  int batch_size = 8;
  double lr = 1e-3;
  std::vector<int> lr_drop_epochs{8, 15, 18};
  double lr_drop_factor = 5.0;
  std::uint64_t seed = 1;
  DetectionLossProvider detection_loss;  // constant 1 when empty
  int validation_pairs = 64;

  /// 80 epochs from 1e-4, divided by 5 at epochs 30, 60 and 70.
  static MatcherTrainOptions long_schedule();
};

struct MatcherTrainResult {
  MatcherParams params;
  LossBalancer balancer;
  std::vector<double> loss_curve;        // mean training matching loss per epoch
  std::vector<double> validation_curve;  // frozen validation batch, index 0 = before training
};

/// Adam on the joint loss over randomly sampled frame pairs.
/// Throws std::runtime_error if the loss becomes non-finite.
MatcherTrainResult train_matcher(std::span<const LabeledSequence> dataset,
                                 const TrackerConfig& config, MatcherParams init,
                                 const MatcherTrainOptions& options);

/// Matching loss of one frame pair and its parameter gradient.
struct PairLoss {
  double loss = 0.0;
  MatcherParams grad;
};
PairLoss pair_matching_loss(const LabeledFrame& current, const LabeledFrame& past,
                            const MatcherParams& params, double c, int n_max);

/// Fraction of rows (both directions) whose argmax, including the non-match
/// column, equals the ground truth.
double pair_association_accuracy(std::span<const LabeledSequence> dataset,
                                 const MatcherParams& params, double c, int n_gap, int n_pairs,
                                 std::uint64_t seed);

}  // namespace deft
