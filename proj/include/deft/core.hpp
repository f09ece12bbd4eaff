// core.hpp: domain types, box geometry, tracker configuration and the track store.
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Dense>

namespace deft {

/// Axis-aligned image box in center convention (pixels).
struct BBox2D {
  double cx = 0.0;
  double cy = 0.0;
  double w = 1.0;
  double h = 1.0;

  bool valid() const;
  double area() const { return w * h; }
  bool operator==(const BBox2D&) const = default;
};

/// 3D box: center in metres, extents w (x), l (y), h (z), yaw about z.
struct BBox3D {
  double cx = 0.0;
  double cy = 0.0;
  double cz = 0.0;
  double w = 1.0;
  double h = 1.0;
  double l = 1.0;
  double yaw = 0.0;

  bool valid() const;
  double volume() const { return w * h * l; }
  bool operator==(const BBox3D&) const = default;
};

using Box = std::variant<BBox2D, BBox3D>;

enum class Mode { k2D, k3D };

Mode box_mode(const Box& box);
bool box_valid(const Box& box);

/// Wraps an angle into [-pi, pi).
double normalize_angle(double radians);

double iou_2d(const BBox2D& a, const BBox2D& b);
/// Yaw is ignored: both boxes are treated as axis-aligned.
double iou_3d(const BBox3D& a, const BBox3D& b);
/// Throws std::invalid_argument when the two boxes are of different kinds.
double iou(const Box& a, const Box& b);

double center_distance(const Box& a, const Box& b);
/// Half of the box diagonal (2D: w,h; 3D: w,h,l).
double half_diagonal(const Box& box);

struct Detection {
  int frame = 0;
  Box box;
  double confidence = 1.0;
  int class_id = 0;
  Eigen::VectorXd embedding;
  // Ground-truth identity when known (simulator, labelled files); -1 otherwise.
  int label = -1;
};

struct Observation {
  int frame = 0;
  Box box;
  Eigen::VectorXd embedding;
};

struct Track {
  int id = 0;
  int class_id = 0;
  std::vector<Observation> memory;  // oldest first
  int age = 0;                      // frames since last association
  int hits = 0;

  const Observation& last() const { return memory.back(); }
};

enum class MotionModelKind { kNone, kKalman, kLstm };

std::string_view to_string(MotionModelKind kind);
MotionModelKind motion_model_from_string(std::string_view name);
std::string_view to_string(Mode mode);
Mode mode_from_string(std::string_view name);

struct TrackerConfig {
  int n_max = 100;                   // max objects per frame during training
  int n_gap = 60;                    // max frame gap of training pairs
  int memory_size = 50;              // observations remembered per track
  int iou_max_age = 5;               // max track age for the IoU stage
  double similarity_threshold = 0.1; // minimum accepted track similarity
  double iou_threshold = 0.4;        // minimum IoU in the IoU stage
  int max_age = 50;                  // unassociated frames before deletion
  double non_match_logit = 10.0;     // constant logit of the non-match column
  int past_window = 15;              // motion model input length
  int pred_horizon = 10;             // motion model forecast length
  int embedding_dim = 416;
  Mode mode = Mode::k2D;
  MotionModelKind motion_model = MotionModelKind::kLstm;
  bool iou_second_stage = false;
  bool use_embeddings = true;
  double min_confidence = 0.0;

  // Constant-velocity filter noise (per-step variances).
  double kalman_process_noise = 1.0;
  double kalman_measurement_noise = 1.0;

  /// Throws std::invalid_argument naming the first violated constraint.
  void validate() const;

  /// Parameter sets "mot17", "kitti" and "nuscenes".
  static TrackerConfig preset(std::string_view name);

  bool operator==(const TrackerConfig&) const = default;
};

struct Assignment {
  int track_id = 0;
  int detection = 0;
  bool operator==(const Assignment&) const = default;
};

struct StoreUpdate {
  std::vector<int> newborn;
  std::vector<int> removed;
};

/// Owns live tracks. Ids start at 1 and are never reused.
class TrackStore {
 public:
  TrackStore(int memory_size, int max_age);

  const std::vector<Track>& tracks() const { return tracks_; }
  const Track* find(int id) const;
  int memory_size() const { return memory_size_; }
  int max_age() const { return max_age_; }
  int next_id() const { return next_id_; }

  /// Applies one frame: appends observations for `assignments`, ages the rest,
  /// deletes tracks older than max_age and spawns a track per unmatched detection.
  /// Throws std::invalid_argument on duplicate/out-of-range detection indices,
  /// duplicate or unknown track ids, or a non-increasing frame.
  StoreUpdate update(std::span<const Assignment> assignments,
                     std::span<const Detection> detections, int frame);

 private:
  std::vector<Track> tracks_;
  int memory_size_;
  int max_age_;
  int next_id_ = 1;
  bool started_ = false;
  int last_frame_ = 0;
};

}  // namespace deft
