// io.hpp: detection/result CSV files, the binary embedding sidecar, model
// checkpoints and JSON configuration.
#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "deft/core.hpp"
#include "deft/matcher.hpp"
#include "deft/metrics.hpp"
#include "deft/motion.hpp"
#include "deft/simulator.hpp"
#include "deft/training.hpp"

namespace deft::io {

struct FrameDetections {
  int frame = 0;
  std::vector<Detection> detections;  // the id column is kept in Detection::label
};

/// Sorted by frame; detections keep file order inside a frame.
using DetectionSequence = std::vector<FrameDetections>;

// --- CSV ----------------------------------------------------------------------
//
// 2D rows: frame,id,bb_left,bb_top,w,h,conf,class,visibility (top-left corner).
// 3D rows: frame,id,x,y,z,w,h,l,yaw,conf,class.
// The kind is picked per line from the column count. Blank lines and lines
// starting with '#' are skipped.

/// Throws std::runtime_error("<source>:<line>: ...") on a malformed line.
DetectionSequence parse_detections(std::istream& in, const std::string& source = "<input>");
/// Throws std::runtime_error if the file cannot be opened.
DetectionSequence read_detections(const std::filesystem::path& path);

void write_detections(std::ostream& out, const DetectionSequence& seq);
void write_detections(const std::filesystem::path& path, const DetectionSequence& seq);

/// Boxes keyed by the id column.
metrics::Sequence to_metric_sequence(const DetectionSequence& seq);
DetectionSequence from_metric_sequence(const metrics::Sequence& seq);

// --- Embedding sidecar ----------------------------------------------------------
//
// "DEFTEMB1", u32 version, u32 e, u32 frame count, then per frame i32 frame,
// u32 rows, followed by rows * e float32 values. Little-endian.

struct EmbeddingFrame {
  int frame = 0;
  Eigen::MatrixXd rows;  // one detection per row
};

struct EmbeddingFile {
  int dim = 0;
  std::vector<EmbeddingFrame> frames;
};

inline constexpr std::uint32_t kEmbeddingVersion = 1;

EmbeddingFile read_embeddings(const std::filesystem::path& path);
void write_embeddings(const std::filesystem::path& path, const EmbeddingFile& file);

/// Embedding rows of every detection, in sequence order.
EmbeddingFile collect_embeddings(const DetectionSequence& seq, int dim);

/// Copies rows into the detections. A frame whose row count differs from its
/// detection count raises std::runtime_error naming the frame.
void attach_embeddings(DetectionSequence& seq, const EmbeddingFile& file);

// --- Checkpoints ----------------------------------------------------------------
//
// "DEFTCKPT", u32 version, u32 section count; every section is a 4-byte tag
// ("MTCH" or "LSTM"), u32 tensor count, then per tensor u32 rows, u32 cols and
// row-major float64 values.

struct Checkpoint {
  std::optional<MatcherParams> matcher;
  std::optional<LstmParams> lstm;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// --- JSON configuration ---------------------------------------------------------

nlohmann::json to_json(const TrackerConfig& config);
/// Keys override `base`; unknown keys and wrongly typed values throw
/// std::invalid_argument. The result is validated.
TrackerConfig tracker_config_from_json(const nlohmann::json& j, TrackerConfig base = {});

nlohmann::json to_json(const sim::ScenarioConfig& config);
sim::ScenarioConfig scenario_config_from_json(const nlohmann::json& j,
                                              sim::ScenarioConfig base = {});

nlohmann::json to_json(const MatcherTrainOptions& options);
MatcherTrainOptions matcher_options_from_json(const nlohmann::json& j,
                                              MatcherTrainOptions base = {});

nlohmann::json to_json(const LstmTrainOptions& options);
LstmTrainOptions lstm_options_from_json(const nlohmann::json& j, LstmTrainOptions base = {});

/// Throws std::runtime_error on a missing file or a parse error.
nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

// --- Scenario export ------------------------------------------------------------

/// Writes detections.csv (id column = identity label, -1 for clutter),
/// embeddings.bin, gt.csv (visible boxes) and scenario.json under `dir`.
void write_scenario(const std::filesystem::path& dir, const sim::Scenario& scenario);

/// Reads detections.csv and embeddings.bin from a directory written by write_scenario.
DetectionSequence read_dataset(const std::filesystem::path& dir);

/// Identity-labelled frames for matcher training, one per frame from the first
/// to the last frame of the sequence (missing frames are empty).
LabeledSequence to_labeled(const DetectionSequence& seq, int dim);

}  // namespace deft::io
