#include "deft/core.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <unordered_set>

namespace deft {

namespace {

bool finite_all(std::initializer_list<double> values) {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

double overlap_1d(double c1, double e1, double c2, double e2) {
  // Concentric intervals: exact, so identical boxes give IoU 1.
  if (c1 == c2) return std::min(e1, e2);
  const double lo = std::max(c1 - e1 / 2.0, c2 - e2 / 2.0);
  const double hi = std::min(c1 + e1 / 2.0, c2 + e2 / 2.0);
  return std::max(0.0, hi - lo);
}

}  // namespace

bool BBox2D::valid() const { return finite_all({cx, cy, w, h}) && w > 0.0 && h > 0.0; }

bool BBox3D::valid() const {
  return finite_all({cx, cy, cz, w, h, l, yaw}) && w > 0.0 && h > 0.0 && l > 0.0;
}

Mode box_mode(const Box& box) {
  return std::holds_alternative<BBox2D>(box) ? Mode::k2D : Mode::k3D;
}

bool box_valid(const Box& box) {
  return std::visit([](const auto& b) { return b.valid(); }, box);
}

double normalize_angle(double radians) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double r = std::fmod(radians + std::numbers::pi, two_pi);
  if (r < 0.0) r += two_pi;
  r -= std::numbers::pi;
  // fmod rounding can land exactly on +pi
  if (r >= std::numbers::pi) r -= two_pi;
  return r;
}

double iou_2d(const BBox2D& a, const BBox2D& b) {
  const double inter = overlap_1d(a.cx, a.w, b.cx, b.w) * overlap_1d(a.cy, a.h, b.cy, b.h);
  if (inter <= 0.0) return 0.0;
  const double uni = a.area() + b.area() - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double iou_3d(const BBox3D& a, const BBox3D& b) {
  const double inter = overlap_1d(a.cx, a.w, b.cx, b.w) * overlap_1d(a.cy, a.l, b.cy, b.l) *
                       overlap_1d(a.cz, a.h, b.cz, b.h);
  if (inter <= 0.0) return 0.0;
  const double uni = a.volume() + b.volume() - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double iou(const Box& a, const Box& b) {
  if (a.index() != b.index()) throw std::invalid_argument("iou: mixed 2D/3D boxes");
  if (const auto* a2 = std::get_if<BBox2D>(&a)) return iou_2d(*a2, std::get<BBox2D>(b));
  return iou_3d(std::get<BBox3D>(a), std::get<BBox3D>(b));
}

double center_distance(const Box& a, const Box& b) {
  if (a.index() != b.index()) throw std::invalid_argument("center_distance: mixed 2D/3D boxes");
  if (const auto* a2 = std::get_if<BBox2D>(&a)) {
    const auto& b2 = std::get<BBox2D>(b);
    return std::hypot(a2->cx - b2.cx, a2->cy - b2.cy);
  }
  const auto& a3 = std::get<BBox3D>(a);
  const auto& b3 = std::get<BBox3D>(b);
  return std::sqrt((a3.cx - b3.cx) * (a3.cx - b3.cx) + (a3.cy - b3.cy) * (a3.cy - b3.cy) +
                   (a3.cz - b3.cz) * (a3.cz - b3.cz));
}

double half_diagonal(const Box& box) {
  if (const auto* b2 = std::get_if<BBox2D>(&box)) return 0.5 * std::hypot(b2->w, b2->h);
  const auto& b3 = std::get<BBox3D>(box);
  return 0.5 * std::sqrt(b3.w * b3.w + b3.h * b3.h + b3.l * b3.l);
}

std::string_view to_string(MotionModelKind kind) {
  switch (kind) {
    case MotionModelKind::kNone: return "none";
    case MotionModelKind::kKalman: return "kalman";
    case MotionModelKind::kLstm: return "lstm";
  }
  return "none";
}

MotionModelKind motion_model_from_string(std::string_view name) {
  if (name == "none") return MotionModelKind::kNone;
  if (name == "kalman") return MotionModelKind::kKalman;
  if (name == "lstm") return MotionModelKind::kLstm;
  throw std::invalid_argument("unknown motion model: " + std::string(name));
}

std::string_view to_string(Mode mode) { return mode == Mode::k2D ? "2d" : "3d"; }

Mode mode_from_string(std::string_view name) {
  if (name == "2d" || name == "2D") return Mode::k2D;
  if (name == "3d" || name == "3D") return Mode::k3D;
  throw std::invalid_argument("unknown mode: " + std::string(name));
}

void TrackerConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("invalid tracker config: ") + what);
  };
  require(n_max >= 1, "n_max >= 1");
  require(similarity_threshold > 0.0 && similarity_threshold < 1.0, "0 < similarity_threshold < 1");
  require(iou_threshold >= 0.0 && iou_threshold <= 1.0, "0 <= iou_threshold <= 1");
  require(memory_size >= 1, "memory_size >= 1");
  require(max_age >= 1, "max_age >= 1");
  require(n_gap >= 1, "n_gap >= 1");
  require(past_window >= 1, "past_window >= 1");
  require(pred_horizon >= 1, "pred_horizon >= 1");
  require(iou_max_age >= 1, "iou_max_age >= 1");
  require(non_match_logit > 0.0 && std::isfinite(non_match_logit), "non_match_logit > 0");
  require(embedding_dim >= 1, "embedding_dim >= 1");
  require(min_confidence >= 0.0 && min_confidence <= 1.0, "0 <= min_confidence <= 1");
  require(kalman_process_noise >= 0.0 && kalman_measurement_noise >= 0.0, "kalman noise >= 0");
}

TrackerConfig TrackerConfig::preset(std::string_view name) {
  TrackerConfig cfg;
  if (name == "mot17") {
    cfg.n_max = 100; cfg.n_gap = 60; cfg.memory_size = 50; cfg.iou_max_age = 5;
    cfg.similarity_threshold = 0.1; cfg.iou_threshold = 0.4; cfg.max_age = 50;
    cfg.non_match_logit = 10.0; cfg.past_window = 15; cfg.pred_horizon = 10;
    cfg.embedding_dim = 416; cfg.mode = Mode::k2D;
  } else if (name == "kitti") {
    cfg.n_max = 100; cfg.n_gap = 30; cfg.memory_size = 25; cfg.iou_max_age = 3;
    cfg.similarity_threshold = 0.1; cfg.iou_threshold = 0.6; cfg.max_age = 30;
    cfg.non_match_logit = 10.0; cfg.past_window = 10; cfg.pred_horizon = 5;
    cfg.embedding_dim = 672; cfg.mode = Mode::k2D;
  } else if (name == "nuscenes") {
    cfg.n_max = 100; cfg.n_gap = 6; cfg.memory_size = 5; cfg.iou_max_age = 1;
    cfg.similarity_threshold = 0.1; cfg.iou_threshold = 0.2; cfg.max_age = 6;
    cfg.non_match_logit = 10.0; cfg.past_window = 10; cfg.pred_horizon = 4;
    cfg.embedding_dim = 704; cfg.mode = Mode::k3D;
  } else {
    throw std::invalid_argument("unknown preset: " + std::string(name));
  }
  return cfg;
}

TrackStore::TrackStore(int memory_size, int max_age) : memory_size_(memory_size), max_age_(max_age) {
  if (memory_size < 1 || max_age < 1) {
    throw std::invalid_argument("TrackStore: memory_size and max_age must be >= 1");
  }
}

const Track* TrackStore::find(int id) const {
  auto it = std::lower_bound(tracks_.begin(), tracks_.end(), id,
                             [](const Track& t, int v) { return t.id < v; });
  return (it != tracks_.end() && it->id == id) ? &*it : nullptr;
}

StoreUpdate TrackStore::update(std::span<const Assignment> assignments,
                               std::span<const Detection> detections, int frame) {
  if (started_ && frame <= last_frame_) {
    throw std::invalid_argument("TrackStore::update: frame " + std::to_string(frame) +
                                " does not follow frame " + std::to_string(last_frame_));
  }
  const auto n_det = static_cast<int>(detections.size());
  std::vector<int> det_owner(detections.size(), 0);
  std::unordered_set<int> matched_tracks;
  for (const auto& a : assignments) {
    if (a.detection < 0 || a.detection >= n_det) {
      throw std::invalid_argument("TrackStore::update: detection index out of range");
    }
    if (det_owner[a.detection] != 0) {
      throw std::invalid_argument("TrackStore::update: duplicate detection index " +
                                  std::to_string(a.detection));
    }
    const Track* t = find(a.track_id);
    if (t == nullptr) {
      throw std::invalid_argument("TrackStore::update: unknown track " + std::to_string(a.track_id));
    }
    if (!matched_tracks.insert(a.track_id).second) {
      throw std::invalid_argument("TrackStore::update: track assigned twice " +
                                  std::to_string(a.track_id));
    }
    if (t->last().frame >= frame) {
      throw std::invalid_argument("TrackStore::update: frame must increase along a track");
    }
    det_owner[a.detection] = a.track_id;
  }

  started_ = true;
  last_frame_ = frame;
  StoreUpdate result;
  std::vector<Track> kept;
  kept.reserve(tracks_.size() + detections.size());
  for (auto& track : tracks_) {
    if (matched_tracks.count(track.id) == 0) {
      if (++track.age > max_age_) {
        result.removed.push_back(track.id);
        continue;
      }
    }
    kept.push_back(std::move(track));
  }
  for (int d = 0; d < n_det; ++d) {
    if (det_owner[d] == 0) continue;
    auto it = std::lower_bound(kept.begin(), kept.end(), det_owner[d],
                               [](const Track& t, int v) { return t.id < v; });
    const auto& det = detections[d];
    it->memory.push_back({frame, det.box, det.embedding});
    if (static_cast<int>(it->memory.size()) > memory_size_) it->memory.erase(it->memory.begin());
    it->age = 0;
    ++it->hits;
  }
  for (int d = 0; d < n_det; ++d) {
    if (det_owner[d] != 0) continue;
    const auto& det = detections[d];
    Track t;
    t.id = next_id_++;
    t.class_id = det.class_id;
    t.memory.push_back({frame, det.box, det.embedding});
    t.hits = 1;
    result.newborn.push_back(t.id);
    kept.push_back(std::move(t));
  }
  tracks_ = std::move(kept);
  return result;
}

}  // namespace deft
