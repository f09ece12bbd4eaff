#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <unistd.h>

#include <gtest/gtest.h>

#include "deft/io.hpp"
#include "deft/simulator.hpp"
#include "test_util.hpp"

namespace deft::io {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("deft_test_io_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

DetectionSequence parse(const std::string& text) {
  std::istringstream in(text);
  return parse_detections(in, "dets.csv");
}

std::string error_of(const std::string& text) {
  try {
    parse(text);
  } catch (const std::runtime_error& e) {
    return e.what();
  }
  return "";
}

TEST(Csv, TopLeftRowBecomesCenterBox) {
  const auto seq = parse("1,-1,10,20,30,40,0.9,1,1.0\n");
  ASSERT_EQ(seq.size(), 1u);
  EXPECT_EQ(seq[0].frame, 1);
  ASSERT_EQ(seq[0].detections.size(), 1u);
  const auto& d = seq[0].detections[0];
  EXPECT_EQ(d.box, Box(BBox2D{25.0, 40.0, 30.0, 40.0}));
  EXPECT_DOUBLE_EQ(d.confidence, 0.9);
  EXPECT_EQ(d.class_id, 1);
  EXPECT_EQ(d.label, -1);
  EXPECT_EQ(d.frame, 1);
}

TEST(Csv, EmptyCommentsAndBlankLines) {
  EXPECT_TRUE(parse("").empty());
  const auto seq = parse("# header\n\n   \n2,3,0,0,10,10,1,0,1\r\n# tail\n");
  ASSERT_EQ(seq.size(), 1u);
  EXPECT_EQ(seq[0].detections[0].label, 3);
}

TEST(Csv, TrailingColumnAccepted) {
  const auto seq = parse("1,1,0,0,10,10,1,0,1,-1\n");
  ASSERT_EQ(seq.size(), 1u);
}

TEST(Csv, ErrorsNameTheLine) {
  EXPECT_EQ(error_of("1,1,0,0,10,10,1,0,1\n1,2,3\n"),
            "dets.csv:2: expected 9 (2D) or 11 (3D) columns, got 3");
  EXPECT_NE(error_of("\n1,1,0,0,abc,10,1,0,1\n").find("dets.csv:2:"), std::string::npos);
  EXPECT_NE(error_of("1,1,0,0,1x,10,1,0,1\n").find("not a number"), std::string::npos);
  EXPECT_EQ(error_of("1,1,0,0,-5,10,1,0,1\n"), "dets.csv:1: box has non-positive extent");
  EXPECT_EQ(error_of("1,1,0,0,10,0,1,0,1\n"), "dets.csv:1: box has non-positive extent");
}

TEST(Csv, ThreeDimensionalRow) {
  const auto seq = parse("4,7,1.5,2.5,0.5,1.8,1.6,4.2,0.3,0.8,2\n");
  const auto& d = seq.at(0).detections.at(0);
  EXPECT_EQ(d.box, Box(BBox3D{1.5, 2.5, 0.5, 1.8, 1.6, 4.2, 0.3}));
  EXPECT_DOUBLE_EQ(d.confidence, 0.8);
  EXPECT_EQ(d.class_id, 2);
  EXPECT_EQ(d.label, 7);
}

TEST(Csv, FramesSortedDetectionsKeepFileOrder) {
  const auto seq = parse(
      "5,1,0,0,10,10,1,0,1\n"
      "2,9,0,0,10,10,1,0,1\n"
      "5,2,0,0,10,10,1,0,1\n"
      "2,8,0,0,10,10,1,0,1\n");
  ASSERT_EQ(seq.size(), 2u);
  EXPECT_EQ(seq[0].frame, 2);
  EXPECT_EQ(seq[1].frame, 5);
  EXPECT_EQ(seq[0].detections[0].label, 9);
  EXPECT_EQ(seq[0].detections[1].label, 8);
  EXPECT_EQ(seq[1].detections[0].label, 1);
}

TEST(Csv, WriteParseRoundTripProperty) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    DetectionSequence seq;
    const bool three_d = trial % 2 == 1;
    for (int f = 1; f <= 5; ++f) {
      FrameDetections fd{f * 2, {}};
      const int n = static_cast<int>(rng() % 4) + 1;
      for (int k = 0; k < n; ++k) {
        Detection d;
        d.frame = fd.frame;
        d.box = three_d ? Box(testing::random_box3d(rng)) : Box(testing::random_box2d(rng));
        d.confidence = std::uniform_real_distribution<double>(0, 1)(rng);
        d.class_id = static_cast<int>(rng() % 3);
        d.label = static_cast<int>(rng() % 7) - 1;
        fd.detections.push_back(d);
      }
      seq.push_back(fd);
    }
    std::ostringstream out;
    write_detections(out, seq);
    const auto back = parse(out.str());
    ASSERT_EQ(back.size(), seq.size());
    for (std::size_t f = 0; f < seq.size(); ++f) {
      ASSERT_EQ(back[f].frame, seq[f].frame);
      ASSERT_EQ(back[f].detections.size(), seq[f].detections.size());
      for (std::size_t k = 0; k < seq[f].detections.size(); ++k) {
        const auto& a = seq[f].detections[k];
        const auto& b = back[f].detections[k];
        EXPECT_EQ(a.label, b.label);
        EXPECT_EQ(a.class_id, b.class_id);
        EXPECT_NEAR(a.confidence, b.confidence, 1e-8);
        EXPECT_LT(center_distance(a.box, b.box), 1e-6);
        EXPECT_NEAR(half_diagonal(a.box), half_diagonal(b.box), 1e-6);
      }
    }
  }
}

TEST(Csv, MetricSequenceConversion) {
  const auto seq = parse("1,4,0,0,10,10,1,0,1\n3,4,5,5,10,10,1,0,1\n3,6,50,5,10,10,1,0,1\n");
  const auto m = to_metric_sequence(seq);
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m.at(3).size(), 2u);
  EXPECT_EQ(m.at(3)[1].id, 6);
  const auto back = from_metric_sequence(m);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].detections[1].label, 6);
  EXPECT_EQ(back[1].detections[1].box, seq[1].detections[1].box);
}

TEST(Files, MissingFileThrows) {
  EXPECT_THROW(read_detections("/nonexistent/dets.csv"), std::runtime_error);
  EXPECT_THROW(read_embeddings("/nonexistent/emb.bin"), std::runtime_error);
  EXPECT_THROW(load_checkpoint("/nonexistent/model.ckpt"), std::runtime_error);
  EXPECT_THROW(read_json("/nonexistent/config.json"), std::runtime_error);
}

EmbeddingFile sample_embeddings(int dim, std::mt19937_64& rng) {
  EmbeddingFile file;
  file.dim = dim;
  file.frames.push_back({1, testing::random_matrix(3, dim, rng)});
  file.frames.push_back({2, Eigen::MatrixXd(0, dim)});
  file.frames.push_back({4, testing::random_matrix(1, dim, rng)});
  return file;
}

TEST(Embeddings, RoundTripAtFloatPrecision) {
  TempDir dir;
  std::mt19937_64 rng(5);
  const auto file = sample_embeddings(416, rng);
  write_embeddings(dir.path() / "e.bin", file);
  const auto back = read_embeddings(dir.path() / "e.bin");
  EXPECT_EQ(back.dim, 416);
  ASSERT_EQ(back.frames.size(), 3u);
  for (std::size_t f = 0; f < 3; ++f) {
    EXPECT_EQ(back.frames[f].frame, file.frames[f].frame);
    ASSERT_EQ(back.frames[f].rows.rows(), file.frames[f].rows.rows());
    ASSERT_EQ(back.frames[f].rows.cols(), 416);
    if (file.frames[f].rows.size() > 0) {
      EXPECT_LT((back.frames[f].rows - file.frames[f].rows).cwiseAbs().maxCoeff(), 1e-7);
    }
  }
  // Header: magic, version, e, frame count.
  std::ifstream in(dir.path() / "e.bin", std::ios::binary);
  char magic[8];
  in.read(magic, 8);
  EXPECT_EQ(std::string(magic, 8), "DEFTEMB1");
  std::uint32_t header[3];
  in.read(reinterpret_cast<char*>(header), sizeof header);
  EXPECT_EQ(header[0], kEmbeddingVersion);
  EXPECT_EQ(header[1], 416u);
  EXPECT_EQ(header[2], 3u);
  EXPECT_EQ(header[1], static_cast<std::uint32_t>(TrackerConfig::preset("mot17").embedding_dim));
}

TEST(Embeddings, CorruptFilesRejected) {
  TempDir dir;
  std::mt19937_64 rng(6);
  write_embeddings(dir.path() / "e.bin", sample_embeddings(8, rng));
  std::string bytes;
  {
    std::ifstream in(dir.path() / "e.bin", std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  auto write_bytes = [&](const std::string& name, const std::string& b) {
    std::ofstream out(dir.path() / name, std::ios::binary);
    out << b;
    return dir.path() / name;
  };
  auto message = [&](const fs::path& p) {
    try {
      read_embeddings(p);
    } catch (const std::runtime_error& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_NE(message(write_bytes("magic.bin", bad)).find("bad magic"), std::string::npos);
  EXPECT_NE(message(write_bytes("short.bin", bytes.substr(0, bytes.size() - 3))).find("truncated"),
            std::string::npos);
  std::string version = bytes;
  version[8] = 9;
  EXPECT_NE(message(write_bytes("ver.bin", version)).find("unsupported version"),
            std::string::npos);
}

TEST(Embeddings, AttachChecksRowCounts) {
  auto seq = parse("1,1,0,0,10,10,1,0,1\n1,2,20,0,10,10,1,0,1\n3,1,0,0,10,10,1,0,1\n");
  std::mt19937_64 rng(7);
  EmbeddingFile file;
  file.dim = 4;
  file.frames.push_back({1, testing::random_matrix(2, 4, rng)});
  file.frames.push_back({3, testing::random_matrix(1, 4, rng)});
  auto ok = seq;
  attach_embeddings(ok, file);
  EXPECT_EQ(ok[0].detections[1].embedding, file.frames[0].rows.row(1).transpose());
  EXPECT_EQ(collect_embeddings(ok, 4).frames[1].rows, file.frames[1].rows);

  // One row short in frame 1.
  file.frames[0].rows = testing::random_matrix(1, 4, rng);
  try {
    attach_embeddings(seq, file);
    FAIL() << "expected a row-count error";
  } catch (const std::runtime_error& e) {
    EXPECT_EQ(std::string(e.what()), "embeddings: frame 1 has 1 rows but 2 detections");
  }

  // Rows for a frame without detections.
  file.frames[0].rows = testing::random_matrix(2, 4, rng);
  file.frames.push_back({2, testing::random_matrix(1, 4, rng)});
  EXPECT_THROW(attach_embeddings(seq, file), std::runtime_error);
}

TEST(Checkpoint, MatcherAndLstmRoundTripExactly) {
  TempDir dir;
  Checkpoint ckpt;
  ckpt.matcher = init_matcher(16, 11);
  ckpt.lstm = init_lstm(Mode::k3D, 8, 4, 12);
  save_checkpoint(dir.path() / "m.ckpt", ckpt);
  const auto back = load_checkpoint(dir.path() / "m.ckpt");
  ASSERT_TRUE(back.matcher && back.lstm);
  ASSERT_EQ(back.matcher->layers.size(), ckpt.matcher->layers.size());
  for (std::size_t l = 0; l < ckpt.matcher->layers.size(); ++l) {
    EXPECT_EQ(back.matcher->layers[l].weight, ckpt.matcher->layers[l].weight);
    EXPECT_EQ(back.matcher->layers[l].bias, ckpt.matcher->layers[l].bias);
  }
  const auto& a = *ckpt.lstm;
  const auto& b = *back.lstm;
  EXPECT_EQ(b.mode, Mode::k3D);
  EXPECT_EQ(b.horizon, 4);
  EXPECT_EQ(b.output_scale, a.output_scale);
  EXPECT_EQ(b.w_input, a.w_input);
  EXPECT_EQ(b.w_hidden, a.w_hidden);
  EXPECT_EQ(b.bias, a.bias);
  EXPECT_EQ(b.w_out, a.w_out);
  EXPECT_EQ(b.b_out, a.b_out);
  EXPECT_EQ(b.input_scale, a.input_scale);
}

TEST(Checkpoint, PartialAndCorrupt) {
  TempDir dir;
  Checkpoint only;
  only.lstm = zero_lstm(Mode::k2D, 4, 2);
  save_checkpoint(dir.path() / "l.ckpt", only);
  const auto back = load_checkpoint(dir.path() / "l.ckpt");
  EXPECT_FALSE(back.matcher.has_value());
  EXPECT_TRUE(back.lstm.has_value());

  {
    std::ofstream out(dir.path() / "bad.ckpt", std::ios::binary);
    out << "NOTACKPT";
  }
  EXPECT_THROW(load_checkpoint(dir.path() / "bad.ckpt"), std::runtime_error);
  std::string bytes;
  {
    std::ifstream in(dir.path() / "l.ckpt", std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  {
    std::ofstream out(dir.path() / "short.ckpt", std::ios::binary);
    out << bytes.substr(0, bytes.size() / 2);
  }
  EXPECT_THROW(load_checkpoint(dir.path() / "short.ckpt"), std::runtime_error);
}

TEST(Config, TrackerRoundTripAndOverrides) {
  for (const char* name : {"mot17", "kitti", "nuscenes"}) {
    const auto c = TrackerConfig::preset(name);
    EXPECT_EQ(tracker_config_from_json(to_json(c)), c) << name;
  }
  const auto c = tracker_config_from_json(json{{"max_age", 7}, {"motion_model", "kalman"}},
                                          TrackerConfig::preset("kitti"));
  EXPECT_EQ(c.max_age, 7);
  EXPECT_EQ(c.motion_model, MotionModelKind::kKalman);
  EXPECT_EQ(c.n_gap, 30);
}

TEST(Config, UnknownKeysAndWrongTypesRejected) {
  try {
    tracker_config_from_json(json{{"max_agee", 7}});
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("unknown key 'max_agee'"), std::string::npos);
  }
  EXPECT_THROW(tracker_config_from_json(json{{"max_age", "7"}}), std::invalid_argument);
  EXPECT_THROW(tracker_config_from_json(json{{"max_age", 1.5}}), std::invalid_argument);
  EXPECT_THROW(tracker_config_from_json(json{{"mode", "4d"}}), std::invalid_argument);
  EXPECT_THROW(tracker_config_from_json(json::array()), std::invalid_argument);
  // Validation runs after parsing.
  EXPECT_THROW(tracker_config_from_json(json{{"memory_size", 0}}), std::invalid_argument);
}

TEST(Config, ScenarioAndTrainingOptionsRoundTrip) {
  sim::ScenarioConfig s;
  s.mode = Mode::k3D;
  s.profile = sim::MotionProfile::kTurning;
  s.occlusion.windows = {{1, 3, 9}};
  s.noise.clutter_rate = 0.05;
  s.embedding.confusable_fraction = 0.2;
  s.seed = 99;
  EXPECT_EQ(to_json(scenario_config_from_json(to_json(s))), to_json(s));
  EXPECT_THROW(scenario_config_from_json(json{{"n_objectz", 3}}), std::invalid_argument);

  auto m = MatcherTrainOptions::long_schedule();
  m.seed = 4;
  const auto mb = matcher_options_from_json(to_json(m));
  EXPECT_EQ(mb.epochs, 80);
  EXPECT_EQ(mb.lr_drop_epochs, m.lr_drop_epochs);
  EXPECT_EQ(mb.seed, 4u);
  EXPECT_EQ(to_json(mb), to_json(m));

  LstmTrainOptions l;
  l.epochs = 3;
  EXPECT_EQ(to_json(lstm_options_from_json(to_json(l))), to_json(l));
}

TEST(Config, JsonFileRoundTrip) {
  TempDir dir;
  const json j = to_json(TrackerConfig::preset("nuscenes"));
  write_json(dir.path() / "c.json", j);
  EXPECT_EQ(read_json(dir.path() / "c.json"), j);
  {
    std::ofstream out(dir.path() / "broken.json");
    out << "{\"a\": ";
  }
  EXPECT_THROW(read_json(dir.path() / "broken.json"), std::runtime_error);
}

TEST(Scenario, ExportReadBack) {
  TempDir dir;
  sim::ScenarioConfig c;
  c.n_objects = 4;
  c.n_frames = 12;
  c.embedding.dim = 8;
  c.noise.clutter_rate = 0.1;
  c.occlusion.windows = {{0, 4, 6}};
  const auto scenario = sim::generate(c);
  write_scenario(dir.path() / "s", scenario);
  for (const char* f : {"detections.csv", "embeddings.bin", "gt.csv", "scenario.json"}) {
    EXPECT_TRUE(fs::exists(dir.path() / "s" / f)) << f;
  }
  const auto seq = read_dataset(dir.path() / "s");
  for (const auto& fd : seq) {
    const auto& frame = scenario.frames.at(fd.frame - 1);
    ASSERT_EQ(fd.detections.size(), frame.size());
    for (std::size_t k = 0; k < frame.size(); ++k) {
      EXPECT_EQ(fd.detections[k].label, frame[k].label);
      EXPECT_LT(center_distance(fd.detections[k].box, frame[k].box), 1e-4);
      EXPECT_LT((fd.detections[k].embedding - frame[k].embedding).cwiseAbs().maxCoeff(), 1e-4);
    }
  }
  const auto gt = to_metric_sequence(read_detections(dir.path() / "s" / "gt.csv"));
  const auto expected = sim::ground_truth(scenario);
  for (const auto& [frame, boxes] : expected) {
    EXPECT_EQ(gt.count(frame) ? gt.at(frame).size() : 0u, boxes.size()) << frame;
  }
  // Object 1 is hidden in frames 4..6.
  for (int f = 4; f <= 6; ++f) {
    for (const auto& b : gt.count(f) ? gt.at(f) : std::vector<metrics::TrackedBox>{}) {
      EXPECT_NE(b.id, 1);
    }
  }
  const auto cfg = scenario_config_from_json(read_json(dir.path() / "s" / "scenario.json"));
  EXPECT_EQ(to_json(cfg), to_json(c));
}

TEST(Scenario, ResultsFileIsValidGroundTruthInput) {
  // Tracker output written as a results file parses back as a detection file.
  metrics::Sequence hyp;
  hyp[1] = {{1, BBox2D{50, 50, 20, 30}}, {2, BBox2D{150, 50, 20, 30}}};
  hyp[2] = {{1, BBox2D{52, 50, 20, 30}}};
  std::ostringstream out;
  write_detections(out, from_metric_sequence(hyp));
  const auto back = to_metric_sequence(parse(out.str()));
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back.at(1).size(), 2u);
  EXPECT_EQ(back.at(2)[0].id, 1);
  EXPECT_LT(center_distance(back.at(2)[0].box, hyp.at(2)[0].box), 1e-9);
}

TEST(Scenario, ToLabeledFillsMissingFrames) {
  auto seq = parse("2,5,0,0,10,10,1,0,1\n4,5,0,0,10,10,1,0,1\n4,6,20,0,10,10,1,0,1\n");
  std::mt19937_64 rng(8);
  EmbeddingFile file;
  file.dim = 3;
  file.frames = {{2, testing::random_matrix(1, 3, rng)}, {4, testing::random_matrix(2, 3, rng)}};
  attach_embeddings(seq, file);
  const auto labeled = to_labeled(seq, 3);
  ASSERT_EQ(labeled.size(), 3u);  // frames 2, 3, 4
  EXPECT_EQ(labeled[0].ids, std::vector<int>{5});
  EXPECT_TRUE(labeled[1].ids.empty());
  EXPECT_EQ(labeled[1].embeddings.rows(), 0);
  EXPECT_EQ(labeled[1].embeddings.cols(), 3);
  EXPECT_EQ(labeled[2].ids, (std::vector<int>{5, 6}));
  EXPECT_EQ(labeled[2].embeddings, file.frames[1].rows);
  EXPECT_THROW(to_labeled(seq, 4), std::invalid_argument);
}

}  // namespace
}  // namespace deft::io
