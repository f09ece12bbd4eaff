#include "deft/associator.hpp"

#include <algorithm>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <tuple>

#include "deft/hungarian.hpp"

namespace deft {

AffinityCache AffinityCache::build(const Eigen::MatrixXd& emb_t,
                                   std::span<const Track* const> tracks,
                                   const MatcherParams& params, double non_match_logit) {
  std::map<int, std::vector<std::pair<int, const Eigen::VectorXd*>>> by_frame;
  for (const Track* track : tracks) {
    for (const auto& obs : track->memory) by_frame[obs.frame].emplace_back(track->id, &obs.embedding);
  }
  AffinityCache cache;
  if (by_frame.empty()) return cache;
  const CurrentProjection current = project_current(emb_t, params);
  for (const auto& [frame, rows] : by_frame) {
    Eigen::MatrixXd emb_past(static_cast<Eigen::Index>(rows.size()), emb_t.cols());
    Entry entry;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].second->size() != emb_t.cols()) {
        throw std::invalid_argument("AffinityCache: remembered embedding dim mismatch");
      }
      emb_past.row(static_cast<Eigen::Index>(r)) = rows[r].second->transpose();
      entry.column_of_track[rows[r].first] = static_cast<int>(r);
    }
    entry.pair = matcher_forward(current, emb_past, params, non_match_logit);
    cache.entries_.emplace(frame, std::move(entry));
  }
  return cache;
}

void AffinityCache::insert(int past_frame, Entry entry) { entries_[past_frame] = std::move(entry); }

const AffinityCache::Entry& AffinityCache::at(int past_frame) const {
  const auto it = entries_.find(past_frame);
  if (it == entries_.end()) {
    throw std::out_of_range("AffinityCache: no entry for frame " + std::to_string(past_frame));
  }
  return it->second;
}

double track_similarity(int detection, const Track& track, const AffinityCache& cache) {
  if (track.memory.empty()) throw std::invalid_argument("track_similarity: empty track");
  double sum = 0.0;
  for (const auto& obs : track.memory) {
    const auto& entry = cache.at(obs.frame);
    const int k = entry.column_of_track.at(track.id);
    sum += 0.5 * (entry.pair.fwd(k, detection) + entry.pair.bwd(detection, k));
  }
  return sum / static_cast<double>(track.memory.size());
}

double track_non_match(const Track& track, const AffinityCache& cache) {
  if (track.memory.empty()) throw std::invalid_argument("track_non_match: empty track");
  double sum = 0.0;
  for (const auto& obs : track.memory) {
    const auto& entry = cache.at(obs.frame);
    const int k = entry.column_of_track.at(track.id);
    sum += entry.pair.fwd(k, entry.pair.fwd.cols() - 1);
  }
  return sum / static_cast<double>(track.memory.size());
}

Eigen::MatrixXd build_association_matrix(std::span<const Track* const> tracks, int n_detections,
                                         const AffinityCache& cache) {
  const auto n_k = static_cast<Eigen::Index>(tracks.size());
  Eigen::MatrixXd d = Eigen::MatrixXd::Constant(n_k, n_detections + n_k, kForbidden);
  // Same sums as track_similarity, one cache lookup per observation.
  Eigen::RowVectorXd sum(n_detections);
  for (Eigen::Index j = 0; j < n_k; ++j) {
    const Track& track = *tracks[j];
    if (track.memory.empty()) throw std::invalid_argument("build_association_matrix: empty track");
    sum.setZero();
    for (const auto& obs : track.memory) {
      const auto& entry = cache.at(obs.frame);
      const int k = entry.column_of_track.at(track.id);
      if (entry.pair.bwd.rows() != n_detections) {
        throw std::invalid_argument("build_association_matrix: cache has " +
                                    std::to_string(entry.pair.bwd.rows()) + " detections");
      }
      sum += 0.5 * (entry.pair.fwd.row(k).head(n_detections) + entry.pair.bwd.col(k).transpose());
    }
    d.row(j).head(n_detections) = sum / static_cast<double>(track.memory.size());
    d(j, n_detections + j) = track_non_match(track, cache);
  }
  return d;
}

FrameResult associate_frame(int frame, std::span<const Detection> detections, TrackStore& store,
                            const TrackerConfig& config, const MatcherParams* matcher,
                            MotionForecaster& motion) {
  if (config.use_embeddings && matcher == nullptr) {
    throw std::invalid_argument("associate_frame: embeddings enabled without a matcher");
  }
  std::vector<int> kept_to_input;
  std::vector<Detection> kept;
  for (int d = 0; d < static_cast<int>(detections.size()); ++d) {
    const auto& det = detections[d];
    if (box_mode(det.box) != config.mode) {
      throw std::invalid_argument("associate_frame: detection box kind does not match config mode");
    }
    if (config.use_embeddings && det.embedding.size() != config.embedding_dim) {
      throw std::invalid_argument("associate_frame: embedding dim " +
                                  std::to_string(det.embedding.size()) + " != config " +
                                  std::to_string(config.embedding_dim));
    }
    if (det.confidence < config.min_confidence) continue;
    kept_to_input.push_back(d);
    kept.push_back(det);
  }

  std::set<int> classes;
  for (const auto& det : kept) classes.insert(det.class_id);

  std::vector<Assignment> assignments;
  for (int cls : classes) {
    std::vector<int> dets;
    for (int d = 0; d < static_cast<int>(kept.size()); ++d) {
      if (kept[d].class_id == cls) dets.push_back(d);
    }
    std::vector<const Track*> tracks;
    for (const auto& t : store.tracks()) {
      if (t.class_id == cls) tracks.push_back(&t);
    }
    if (tracks.empty()) continue;
    const int n = static_cast<int>(dets.size());
    const int k = static_cast<int>(tracks.size());

    std::vector<std::optional<Box>> predicted(k);
    for (int j = 0; j < k; ++j) predicted[j] = motion.predict(*tracks[j], frame);
    auto blocked = [&](int j, int i) {
      return predicted[j].has_value() && gate_blocks(*predicted[j], kept[dets[i]].box);
    };

    std::vector<char> track_done(k, 0), det_done(n, 0);
    if (config.use_embeddings) {
      Eigen::MatrixXd emb_t(n, config.embedding_dim);
      for (int i = 0; i < n; ++i) emb_t.row(i) = kept[dets[i]].embedding.transpose();
      const auto cache = AffinityCache::build(emb_t, tracks, *matcher, config.non_match_logit);
      Eigen::MatrixXd d = build_association_matrix(tracks, n, cache);
      const Eigen::MatrixXd similarity = d.leftCols(n);
      for (int j = 0; j < k; ++j) {
        for (int i = 0; i < n; ++i) {
          if (blocked(j, i)) d(j, i) = kForbidden;
        }
      }
      const auto solved = hungarian(d, /*maximize=*/true);
      for (int j = 0; j < k; ++j) {
        const int i = solved.row_to_col[j];
        if (i < 0 || i >= n || d(j, i) <= kForbiddenCutoff) continue;
        if (similarity(j, i) <= config.similarity_threshold) continue;
        assignments.push_back({tracks[j]->id, dets[i]});
        track_done[j] = det_done[i] = 1;
      }
    }

    if (config.iou_second_stage) {
      std::vector<std::tuple<double, int, int>> candidates;
      for (int j = 0; j < k; ++j) {
        if (track_done[j] || tracks[j]->age > config.iou_max_age) continue;
        const Box& ref = predicted[j] ? *predicted[j] : tracks[j]->last().box;
        for (int i = 0; i < n; ++i) {
          if (det_done[i] || blocked(j, i)) continue;
          const double v = iou(ref, kept[dets[i]].box);
          if (v > 0.0 && v >= config.iou_threshold) candidates.emplace_back(v, j, i);
        }
      }
      std::stable_sort(candidates.begin(), candidates.end(),
                       [](const auto& a, const auto& b) { return std::get<0>(a) > std::get<0>(b); });
      for (const auto& [v, j, i] : candidates) {
        if (track_done[j] || det_done[i]) continue;
        assignments.push_back({tracks[j]->id, dets[i]});
        track_done[j] = det_done[i] = 1;
      }
    }
  }

  const auto update = store.update(assignments, kept, frame);

  FrameResult result;
  result.newborn = update.newborn;
  result.removed = update.removed;
  for (int id : update.removed) motion.on_removed(id);
  for (const auto& a : assignments) {
    motion.on_associated(*store.find(a.track_id));
    result.assignments.push_back({a.track_id, kept_to_input[a.detection]});
  }
  for (int id : update.newborn) motion.on_born(*store.find(id));

  std::vector<int> det_of_track(kept.size(), 0);
  for (const auto& a : assignments) det_of_track[a.detection] = a.track_id;
  std::size_t next_born = 0;
  for (int d = 0; d < static_cast<int>(kept.size()); ++d) {
    const int id = det_of_track[d] != 0 ? det_of_track[d] : update.newborn.at(next_born++);
    result.outputs.push_back(
        {id, kept[d].class_id, kept[d].box, kept[d].confidence, kept_to_input[d]});
  }
  return result;
}

Tracker::Tracker(TrackerConfig config, const MatcherParams* matcher, const LstmParams* lstm)
    : config_(std::move(config)),
      matcher_(matcher),
      store_(config_.memory_size, config_.max_age),
      motion_(make_forecaster(config_, lstm)) {
  config_.validate();
  if (matcher_ != nullptr) {
    matcher_->check();
    if (config_.use_embeddings && matcher_->embedding_dim() != config_.embedding_dim) {
      throw std::invalid_argument("Tracker: matcher embedding dim does not match config");
    }
  }
}

FrameResult Tracker::step(int frame, std::span<const Detection> detections) {
  return associate_frame(frame, detections, store_, config_, matcher_, *motion_);
}

}  // namespace deft
