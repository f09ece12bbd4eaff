// associator.hpp: online detection-to-track association.
//
// Per class: one matcher evaluation per distinct remembered frame, track
// similarity averaged over each track's memory, the augmented matrix D = [S | X]
// solved with the Hungarian algorithm, a similarity threshold, an optional
// motion gate and an optional IoU second stage.
#pragma once

#include <map>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "deft/core.hpp"
#include "deft/matcher.hpp"
#include "deft/motion.hpp"

namespace deft {

/// Matcher outputs between the current frame and every remembered past frame.
class AffinityCache {
 public:
  struct Entry {
    AffinityPair pair;
    std::map<int, int> column_of_track;  // track id -> row index in that past frame
  };

  AffinityCache() = default;

  /// `emb_t` holds one current detection per row.
  static AffinityCache build(const Eigen::MatrixXd& emb_t, std::span<const Track* const> tracks,
                             const MatcherParams& params, double non_match_logit);

  /// Inserts a precomputed entry (used for hand-built instances).
  void insert(int past_frame, Entry entry);

  /// Throws std::out_of_range when the frame is missing.
  const Entry& at(int past_frame) const;
  bool contains(int past_frame) const { return entries_.count(past_frame) != 0; }
  std::size_t size() const { return entries_.size(); }

 private:
  std::map<int, Entry> entries_;
};

/// Mean over the track's observations of (fwd[k, i] + bwd[i, k]) / 2.
/// Throws std::out_of_range if an observation's frame or track is not cached.
double track_similarity(int detection, const Track& track, const AffinityCache& cache);

/// Mean over the track's observations of the forward non-match probability.
double track_non_match(const Track& track, const AffinityCache& cache);

/// |K| x (N_t + |K|): similarities, then a diagonal of non-match scores with
/// kForbidden elsewhere.
Eigen::MatrixXd build_association_matrix(std::span<const Track* const> tracks, int n_detections,
                                         const AffinityCache& cache);

struct TrackOutput {
  int track_id = 0;
  int class_id = 0;
  Box box;
  double confidence = 1.0;
  int detection = 0;  // index into the frame's input detections
};

struct FrameResult {
  std::vector<Assignment> assignments;  // detection indices refer to the input span
  std::vector<int> newborn;
  std::vector<int> removed;
  std::vector<TrackOutput> outputs;     // every track associated or born this frame
};

/// Associates one frame and updates `store` and `motion`.
/// Throws std::invalid_argument on box kind / embedding dimension mismatches
/// or when embeddings are enabled without a matcher.
FrameResult associate_frame(int frame, std::span<const Detection> detections, TrackStore& store,
                            const TrackerConfig& config, const MatcherParams* matcher,
                            MotionForecaster& motion);

/// Convenience owner of store, config and forecaster for one sequence.
class Tracker {
 public:
  Tracker(TrackerConfig config, const MatcherParams* matcher, const LstmParams* lstm);

  FrameResult step(int frame, std::span<const Detection> detections);

  const TrackStore& store() const { return store_; }
  const TrackerConfig& config() const { return config_; }

 private:
  TrackerConfig config_;
  const MatcherParams* matcher_;
  TrackStore store_;
  std::unique_ptr<MotionForecaster> motion_;
};

}  // namespace deft
