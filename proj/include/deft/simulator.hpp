// simulator.hpp: synthetic tracking scenarios with oracle embeddings, controlled
// occlusion and detector noise, difficulty scoring and component ablations.
#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "deft/associator.hpp"
#include "deft/core.hpp"
#include "deft/metrics.hpp"
#include "deft/motion.hpp"
#include "deft/training.hpp"

namespace deft::sim {

enum class MotionProfile { kConstantVelocity, kTurning, kRandomWalk };

struct OcclusionWindow {
  int object = 0;  // 0-based object index
  int first = 0;   // inclusive frame range
  int last = 0;
};

struct OcclusionSpec {
  std::vector<OcclusionWindow> windows;
  double probability = 0.0;  // chance that an object gets one random window
  int min_length = 5;
  int max_length = 20;
};

struct NoiseSpec {
  double clutter_rate = 0.0;  // per object and frame
  double miss_rate = 0.0;
  double jitter_sigma = 0.0;  // box jitter, pixels (2D) or metres (3D)
};

struct EmbeddingSpec {
  int dim = 32;
  double min_angle_deg = 60.0;       // between distinct identity latents
  double noise_sigma = 0.05;         // per-dimension observation noise
  double confusable_fraction = 0.0;  // identities paired with a near-duplicate latent
  double confusable_angle_deg = 8.0;
};

struct ScenarioConfig {
  Mode mode = Mode::k2D;
  int n_objects = 10;
  int n_frames = 100;
  int frame_stride = 1;  // frame-rate proxy: simulation steps per output frame
  MotionProfile profile = MotionProfile::kConstantVelocity;
  double min_speed = 1.0;  // per simulation step
  double max_speed = 4.0;
  double turn_rate = 0.03;     // rad per step, turning profile
  double walk_sigma = 0.3;     // velocity noise per step, random-walk profile
  double width = 1920.0;       // scene extent (pixels or metres)
  double height = 1080.0;
  double min_size = 40.0;
  double max_size = 120.0;
  OcclusionSpec occlusion;
  NoiseSpec noise;
  EmbeddingSpec embedding;
  bool shuffle = true;  // shuffle detection order within a frame
  std::uint64_t seed = 1;

  void validate() const;
};

struct GtTrack {
  int id = 0;                  // 1-based
  std::map<int, Box> boxes;    // true box in every frame
  std::set<int> occluded;      // frames hidden by an occlusion window
  Eigen::VectorXd latent;      // identity embedding
};

struct Scenario {
  ScenarioConfig config;
  std::vector<GtTrack> tracks;
  std::vector<std::vector<Detection>> frames;  // frames[f - 1] holds frame f

  int n_frames() const { return static_cast<int>(frames.size()); }
};

/// Deterministic under config.seed.
Scenario generate(const ScenarioConfig& config);

/// Visible (non-occluded) GT boxes per frame.
metrics::Sequence ground_truth(const Scenario& scenario);

/// Identity-labelled embeddings for matcher training.
LabeledSequence labeled_sequence(const Scenario& scenario);

/// Keeps the first `dim` embedding coordinates of every detection.
Scenario truncate_embeddings(const Scenario& scenario, int dim);

/// Motion-model supervision from every GT trajectory.
std::vector<MotionSample> motion_samples(const Scenario& scenario, int past_window, int horizon);

// --- Difficulty scoring -------------------------------------------------------

/// Occluded frames summed over all tracks.
double occlusion_raw(const Scenario& scenario);
/// Mean of the ten largest per-track mean consecutive-frame center displacements.
double displacement_raw(const Scenario& scenario);
/// Min-max rescale to [0, 1]; a singleton or constant set maps to 0.
std::vector<double> rescale(std::span<const double> raw);
std::vector<double> occlusion_scores(std::span<const Scenario> scenarios);
std::vector<double> displacement_scores(std::span<const Scenario> scenarios);
/// Maximum of the two rescaled scores.
std::vector<double> combined_scores(std::span<const Scenario> scenarios);

enum class Difficulty { kEasy, kModerate, kHard };
double median(std::span<const double> values);
/// Easy at or below the median, hard above it.
std::vector<Difficulty> median_split(std::span<const double> scores);
/// Thresholds at median -/+ half the population standard deviation.
std::vector<Difficulty> three_way_split(std::span<const double> scores);

// --- Tracking and ablation ----------------------------------------------------

/// Runs a tracker over every frame and returns its output as a metric sequence.
metrics::Sequence run_tracker(const Scenario& scenario, const TrackerConfig& config,
                              const MatcherParams* matcher, const LstmParams* lstm);

metrics::SequenceEval evaluate(const Scenario& scenario, const TrackerConfig& config,
                               const MatcherParams* matcher, const LstmParams* lstm);

enum class EmbeddingVariant { kNone, kSingleScale, kMultiScale };

struct Variant {
  EmbeddingVariant embedding = EmbeddingVariant::kMultiScale;
  MotionModelKind motion = MotionModelKind::kLstm;
  bool iou_stage = false;
  std::string name() const;
};

/// The six rows of the ablation table, baseline first.
std::vector<Variant> ablation_variants();

struct ModelBank {
  const MatcherParams* full = nullptr;     // embedding dim e
  const MatcherParams* reduced = nullptr;  // embedding dim e / 4
  const LstmParams* lstm = nullptr;
};

struct AblationRow {
  Variant variant;
  metrics::SequenceEval eval;  // pooled over the scenario set
};

AblationRow run_variant(std::span<const Scenario> scenarios, const Variant& variant,
                        const TrackerConfig& base, const ModelBank& models);

std::vector<AblationRow> ablation_run(std::span<const Scenario> scenarios,
                                      std::span<const Variant> variants,
                                      const TrackerConfig& base, const ModelBank& models);

std::string ablation_table(const std::vector<AblationRow>& rows);

}  // namespace deft::sim
