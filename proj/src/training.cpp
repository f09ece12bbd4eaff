#include "deft/training.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "deft/optim.hpp"

namespace deft {

GroundTruthMatch build_gt_matrices(std::span<const int> ids_t, std::span<const int> ids_past,
                                   int n_max) {
  const int n_t = static_cast<int>(ids_t.size());
  const int n_p = static_cast<int>(ids_past.size());
  if (n_max < 1 || n_t > n_max || n_p > n_max) {
    throw std::invalid_argument("build_gt_matrices: more objects than n_max");
  }
  auto index_of = [](std::span<const int> ids) {
    std::unordered_map<int, int> idx;
    for (int k = 0; k < static_cast<int>(ids.size()); ++k) {
      if (ids[k] < 0) continue;
      if (!idx.emplace(ids[k], k).second) {
        throw std::invalid_argument("build_gt_matrices: duplicate id " + std::to_string(ids[k]));
      }
    }
    return idx;
  };
  const auto idx_t = index_of(ids_t);
  const auto idx_p = index_of(ids_past);

  GroundTruthMatch gt;
  gt.n_t = n_t;
  gt.n_past = n_p;
  gt.n_max = n_max;
  gt.bwd = Eigen::MatrixXd::Zero(n_max, n_max + 1);
  gt.fwd = Eigen::MatrixXd::Zero(n_max, n_max + 1);
  for (int i = 0; i < n_t; ++i) {
    const auto it = ids_t[i] < 0 ? idx_p.end() : idx_p.find(ids_t[i]);
    gt.bwd(i, it == idx_p.end() ? n_max : it->second) = 1.0;
  }
  for (int j = 0; j < n_p; ++j) {
    const auto it = ids_past[j] < 0 ? idx_t.end() : idx_t.find(ids_past[j]);
    gt.fwd(j, it == idx_t.end() ? n_max : it->second) = 1.0;
  }
  return gt;
}

MatchingLossGrad matching_loss_grad(const Eigen::MatrixXd& a_hat_fwd,
                                    const Eigen::MatrixXd& a_hat_bwd,
                                    const GroundTruthMatch& gt, int n_t, int n_past) {
  if (a_hat_bwd.rows() != n_t || a_hat_bwd.cols() != n_past + 1 || a_hat_fwd.rows() != n_past ||
      a_hat_fwd.cols() != n_t + 1 || n_t > gt.n_max || n_past > gt.n_max) {
    throw std::invalid_argument("matching_loss: shape mismatch");
  }
  if (n_t + n_past == 0) throw std::invalid_argument("matching_loss: no objects in either frame");
  const double norm = 2.0 * (n_t + n_past);
  MatchingLossGrad out;
  out.d_fwd = Eigen::MatrixXd::Zero(a_hat_fwd.rows(), a_hat_fwd.cols());
  out.d_bwd = Eigen::MatrixXd::Zero(a_hat_bwd.rows(), a_hat_bwd.cols());

  // Column `cols` of the predictions corresponds to column n_max of the ground truth.
  auto accumulate = [&](const Eigen::MatrixXd& a_hat, const Eigen::MatrixXd& m, int rows, int cols,
                        Eigen::MatrixXd& grad) {
    for (int i = 0; i < rows; ++i) {
      for (int j = 0; j <= cols; ++j) {
        const double target = m(i, j == cols ? gt.n_max : j);
        if (target == 0.0) continue;
        const double p = a_hat(i, j);
        out.loss -= target * std::log(std::max(p, kLogEpsilon)) / norm;
        if (p > kLogEpsilon) grad(i, j) = -target / (p * norm);
      }
    }
  };
  accumulate(a_hat_bwd, gt.bwd, n_t, n_past, out.d_bwd);
  accumulate(a_hat_fwd, gt.fwd, n_past, n_t, out.d_fwd);
  return out;
}

double matching_loss(const Eigen::MatrixXd& a_hat_fwd, const Eigen::MatrixXd& a_hat_bwd,
                     const GroundTruthMatch& gt, int n_t, int n_past) {
  return matching_loss_grad(a_hat_fwd, a_hat_bwd, gt, n_t, n_past).loss;
}

JointLoss joint_loss(double det_t, double det_tn, double match, const LossBalancer& balancer) {
  const double det_mean = 0.5 * (det_t + det_tn);
  const double w_det = std::exp(-balancer.lambda_det);
  const double w_match = std::exp(-balancer.lambda_match);
  JointLoss out;
  out.value = w_det * det_mean + w_match * match + balancer.lambda_det + balancer.lambda_match;
  out.d_lambda_det = -w_det * det_mean + 1.0;
  out.d_lambda_match = -w_match * match + 1.0;
  out.d_match = w_match;
  return out;
}

FramePair sample_pair(int length, int n_gap, std::mt19937_64& rng) {
  if (length < 2) throw std::invalid_argument("sample_pair: sequence needs at least two frames");
  if (n_gap < 1) throw std::invalid_argument("sample_pair: n_gap < 1");
  const int max_gap = std::min(n_gap, length - 1);
  std::uniform_int_distribution<int> gap_dist(1, max_gap);
  const int n = gap_dist(rng);
  std::uniform_int_distribution<int> cur_dist(n, length - 1);
  const int current = cur_dist(rng);
  return {current - n, current};
}

MatcherTrainOptions MatcherTrainOptions::long_schedule() {
  MatcherTrainOptions o;
  o.epochs = 80;
  o.lr = 1e-4;
  o.batch_size = 8;
  o.lr_drop_epochs = {30, 60, 70};
  o.lr_drop_factor = 5.0;
  return o;
}

PairLoss pair_matching_loss(const LabeledFrame& current, const LabeledFrame& past,
                            const MatcherParams& params, double c, int n_max) {
  const int n_t = static_cast<int>(current.embeddings.rows());
  const int n_p = static_cast<int>(past.embeddings.rows());
  const auto gt = build_gt_matrices(current.ids, past.ids, n_max);
  const auto pair = matcher_forward(current.embeddings, past.embeddings, params, c);
  const auto lg = matching_loss_grad(pair.fwd, pair.bwd, gt, n_t, n_p);
  auto grads = matcher_backward(current.embeddings, past.embeddings, params, c, lg.d_bwd, lg.d_fwd);
  return {lg.loss, std::move(grads.params)};
}

namespace {

struct PairRef {
  std::size_t sequence;
  FramePair frames;
};

std::vector<std::size_t> usable_sequences(std::span<const LabeledSequence> dataset) {
  std::vector<std::size_t> out;
  for (std::size_t s = 0; s < dataset.size(); ++s) {
    if (dataset[s].size() >= 2) out.push_back(s);
  }
  return out;
}

PairRef draw_pair(std::span<const LabeledSequence> dataset, const std::vector<std::size_t>& usable,
                  int n_gap, std::mt19937_64& rng) {
  for (int attempt = 0; attempt < 64; ++attempt) {
    std::uniform_int_distribution<std::size_t> pick(0, usable.size() - 1);
    const std::size_t s = usable[pick(rng)];
    const auto fp = sample_pair(static_cast<int>(dataset[s].size()), n_gap, rng);
    if (dataset[s][fp.current].ids.size() + dataset[s][fp.past].ids.size() > 0) return {s, fp};
  }
  throw std::invalid_argument("train_matcher: dataset frames are empty");
}

double validation_loss(std::span<const LabeledSequence> dataset, const std::vector<PairRef>& pairs,
                       const MatcherParams& params, double c, int n_max) {
  if (pairs.empty()) return 0.0;
  double total = 0.0;
  for (const auto& p : pairs) {
    const auto& cur = dataset[p.sequence][p.frames.current];
    const auto& past = dataset[p.sequence][p.frames.past];
    const auto gt = build_gt_matrices(cur.ids, past.ids, n_max);
    const auto pair = matcher_forward(cur.embeddings, past.embeddings, params, c);
    total += matching_loss(pair.fwd, pair.bwd, gt, static_cast<int>(cur.ids.size()),
                           static_cast<int>(past.ids.size()));
  }
  return total / static_cast<double>(pairs.size());
}

}  // namespace

MatcherTrainResult train_matcher(std::span<const LabeledSequence> dataset,
                                 const TrackerConfig& config, MatcherParams init,
                                 const MatcherTrainOptions& options) {
  init.check();
  MatcherTrainResult result;
  result.params = std::move(init);
  const auto usable = usable_sequences(dataset);
  if (options.epochs <= 0) return result;
  if (usable.empty()) throw std::invalid_argument("train_matcher: no sequence with two frames");

  const double c = config.non_match_logit;
  std::mt19937_64 rng(options.seed);
  std::vector<PairRef> validation;
  for (int k = 0; k < options.validation_pairs; ++k) {
    validation.push_back(draw_pair(dataset, usable, config.n_gap, rng));
  }
  result.validation_curve.push_back(
      validation_loss(dataset, validation, result.params, c, config.n_max));

  Adam adam(options.lr);
  auto params = result.params.tensors();
  auto& balancer = result.balancer;
  const int batch = std::max(1, options.batch_size);
  const DetectionLossProvider det_loss =
      options.detection_loss ? options.detection_loss : [](int, int) { return 1.0; };

  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    for (int drop : options.lr_drop_epochs) {
      if (epoch == drop) adam.set_lr(adam.lr() / options.lr_drop_factor);
    }
    double epoch_loss = 0.0;
    int n_steps = 0;
    for (int start = 0; start < options.pairs_per_epoch; start += batch) {
      MatcherParams grad = MatcherParams::zeros_like(result.params);
      double d_l1 = 0.0, d_l2 = 0.0, batch_match = 0.0;
      const int count = std::min(batch, options.pairs_per_epoch - start);
      for (int b = 0; b < count; ++b) {
        const auto ref = draw_pair(dataset, usable, config.n_gap, rng);
        const auto& cur = dataset[ref.sequence][ref.frames.current];
        const auto& past = dataset[ref.sequence][ref.frames.past];
        auto pl = pair_matching_loss(cur, past, result.params, c, config.n_max);
        const auto jl = joint_loss(det_loss(ref.frames.current, ref.frames.past),
                                   det_loss(ref.frames.past, ref.frames.current), pl.loss, balancer);
        if (!std::isfinite(jl.value) || !std::isfinite(pl.loss)) {
          std::ostringstream msg;
          msg << "train_matcher: non-finite loss at epoch " << epoch << ", pair (" << ref.sequence
              << ": " << ref.frames.past << " -> " << ref.frames.current << ")";
          throw std::runtime_error(msg.str());
        }
        for (std::size_t l = 0; l < grad.layers.size(); ++l) {
          grad.layers[l].weight += (jl.d_match / count) * pl.grad.layers[l].weight;
          grad.layers[l].bias += (jl.d_match / count) * pl.grad.layers[l].bias;
        }
        d_l1 += jl.d_lambda_det / count;
        d_l2 += jl.d_lambda_match / count;
        batch_match += pl.loss;
      }
      // Balancer weights are appended as two extra scalar tensors.
      auto all_params = params;
      all_params.emplace_back(&balancer.lambda_det, 1);
      all_params.emplace_back(&balancer.lambda_match, 1);
      auto all_grads = std::as_const(grad).tensors();
      all_grads.emplace_back(&d_l1, 1);
      all_grads.emplace_back(&d_l2, 1);
      adam.step(all_params, all_grads);
      epoch_loss += batch_match / count;
      ++n_steps;
    }
    result.loss_curve.push_back(n_steps > 0 ? epoch_loss / n_steps : 0.0);
    result.validation_curve.push_back(
        validation_loss(dataset, validation, result.params, c, config.n_max));
  }
  return result;
}

double pair_association_accuracy(std::span<const LabeledSequence> dataset,
                                 const MatcherParams& params, double c, int n_gap, int n_pairs,
                                 std::uint64_t seed) {
  const auto usable = usable_sequences(dataset);
  if (usable.empty()) throw std::invalid_argument("pair_association_accuracy: empty dataset");
  std::mt19937_64 rng(seed);
  std::size_t correct = 0, total = 0;
  for (int k = 0; k < n_pairs; ++k) {
    const auto ref = draw_pair(dataset, usable, n_gap, rng);
    const auto& cur = dataset[ref.sequence][ref.frames.current];
    const auto& past = dataset[ref.sequence][ref.frames.past];
    const int n_t = static_cast<int>(cur.ids.size());
    const int n_p = static_cast<int>(past.ids.size());
    const int n_max = std::max({n_t, n_p, 1});
    const auto gt = build_gt_matrices(cur.ids, past.ids, n_max);
    const auto pair = matcher_forward(cur.embeddings, past.embeddings, params, c);
    auto score = [&](const Eigen::MatrixXd& a_hat, const Eigen::MatrixXd& m, int rows, int cols) {
      for (int i = 0; i < rows; ++i) {
        Eigen::Index best = 0;
        a_hat.row(i).maxCoeff(&best);
        const int truth_col = m(i, gt.n_max) == 1.0 ? cols : [&] {
          for (int j = 0; j < cols; ++j) {
            if (m(i, j) == 1.0) return j;
          }
          return cols;
        }();
        correct += static_cast<int>(best) == truth_col ? 1 : 0;
        ++total;
      }
    };
    score(pair.bwd, gt.bwd, n_t, n_p);
    score(pair.fwd, gt.fwd, n_p, n_t);
  }
  return total == 0 ? 1.0 : static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace deft
