// metrics.hpp: CLEAR-MOT (MOTA, MOTP, FP, FN, IDS, MT, ML) and IDF1.
#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "deft/core.hpp"

namespace deft::metrics {

struct TrackedBox {
  int id = 0;
  Box box;
};

/// frame -> boxes present in that frame
using Sequence = std::map<int, std::vector<TrackedBox>>;

enum class MatchCriterion { kIou, kCenterDistance };

struct EvalOptions {
  MatchCriterion criterion = MatchCriterion::kIou;
  double iou_threshold = 0.5;
  double max_distance = 2.0;  // metres, center-distance criterion
};

/// Similarity in [0, 1] used for matching and MOTP, or a negative value when the
/// pair is not a valid match under `options`.
double match_similarity(const Box& gt, const Box& hyp, const EvalOptions& options);

struct FrameLog {
  int frame = 0;
  std::vector<std::pair<int, int>> matches;  // (gt id, hyp id)
  int fp = 0;
  int fn = 0;
  int ids = 0;
};

struct SequenceEval {
  double mota = 0.0;
  double motp = 0.0;
  double idf1 = 0.0;
  int fp = 0;
  int fn = 0;
  int ids = 0;
  int gt_count = 0;
  int hyp_count = 0;
  int matches = 0;
  int idtp = 0;
  double mt = 0.0;
  double ml = 0.0;
  int gt_tracks = 0;
  std::vector<FrameLog> log;
};

/// Per frame: correspondences from the previous match of each GT object are kept
/// while still valid; the remainder is matched by maximum cardinality, then maximum
/// total similarity. Throws std::invalid_argument on empty ground truth.
SequenceEval clear_mot(const Sequence& gt, const Sequence& hyp, const EvalOptions& options = {});

/// 2 IDTP / (#gt + #hyp) under the best one-to-one GT/hypothesis identity mapping.
double idf1(const Sequence& gt, const Sequence& hyp, const EvalOptions& options = {});

/// Pools several sequences: counts add up, MT/ML are fractions over all GT tracks.
SequenceEval combine(const std::vector<SequenceEval>& evals);

std::string to_json(const SequenceEval& eval);
std::string to_table(const std::vector<std::pair<std::string, SequenceEval>>& rows);

}  // namespace deft::metrics
