#include "deft/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <stdexcept>

#include <CLI11.hpp>

#include "deft/associator.hpp"
#include "deft/io.hpp"
#include "deft/metrics.hpp"
#include "deft/simulator.hpp"
#include "deft/training.hpp"

namespace deft {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct GlobalOptions {
  std::optional<std::uint64_t> seed;
  std::string config_path;
  std::string preset;
};

// Everything resolved from --preset, --config and --seed.
struct Settings {
  TrackerConfig tracker;
  sim::ScenarioConfig scenario;
  MatcherTrainOptions matcher;
  LstmTrainOptions lstm;
  std::uint64_t seed = 1;
};

sim::ScenarioConfig scenario_defaults(Mode mode) {
  sim::ScenarioConfig c;
  c.mode = mode;
  if (mode == Mode::k3D) {
    c.width = 200.0;
    c.height = 200.0;
    c.min_size = 3.5;
    c.max_size = 5.0;
    c.min_speed = 0.3;
    c.max_speed = 1.5;
    c.embedding.noise_sigma = 0.05;
  }
  return c;
}

Settings resolve(const GlobalOptions& g) {
  Settings s;
  if (!g.preset.empty()) s.tracker = TrackerConfig::preset(g.preset);
  s.scenario = scenario_defaults(s.tracker.mode);
  if (!g.config_path.empty()) {
    const json j = io::read_json(g.config_path);
    if (!j.is_object()) throw std::invalid_argument(g.config_path + ": expected a JSON object");
    for (const auto& [key, value] : j.items()) {
      if (key == "tracker") {
        s.tracker = io::tracker_config_from_json(value, s.tracker);
      } else if (key == "scenario") {
        s.scenario = io::scenario_config_from_json(value, s.scenario);
      } else if (key == "matcher_training") {
        s.matcher = io::matcher_options_from_json(value, s.matcher);
      } else if (key == "lstm_training") {
        s.lstm = io::lstm_options_from_json(value, s.lstm);
      } else {
        throw std::invalid_argument(g.config_path + ": unknown section '" + key + "'");
      }
    }
  }
  if (g.seed) {
    s.seed = *g.seed;
    s.scenario.seed = *g.seed;
    s.matcher.seed = *g.seed;
    s.lstm.seed = *g.seed;
  }
  s.tracker.validate();
  return s;
}

Mode sequence_mode(const io::DetectionSequence& seq, Mode fallback) {
  for (const auto& fd : seq) {
    if (!fd.detections.empty()) return box_mode(fd.detections.front().box);
  }
  return fallback;
}

// --- track ----------------------------------------------------------------------

struct TrackArgs {
  std::string detections, embeddings, checkpoint, out, motion;
};

int cmd_track(const Settings& s, const TrackArgs& a, std::ostream& out) {
  auto seq = io::read_detections(a.detections);
  TrackerConfig cfg = s.tracker;
  cfg.mode = sequence_mode(seq, cfg.mode);
  if (!a.motion.empty()) cfg.motion_model = motion_model_from_string(a.motion);

  io::Checkpoint ckpt;
  if (!a.checkpoint.empty()) ckpt = io::load_checkpoint(a.checkpoint);
  if (cfg.use_embeddings) {
    if (a.embeddings.empty()) throw std::invalid_argument("track: --embeddings is required when embeddings are enabled");
    if (!ckpt.matcher) throw std::invalid_argument("track: the checkpoint has no matcher");
    io::attach_embeddings(seq, io::read_embeddings(a.embeddings));
    cfg.embedding_dim = ckpt.matcher->embedding_dim();
  }
  if (cfg.motion_model == MotionModelKind::kLstm && !ckpt.lstm) {
    throw std::invalid_argument("track: LSTM motion needs an LSTM in the checkpoint (or --motion kalman|none)");
  }
  Tracker tracker(cfg, ckpt.matcher ? &*ckpt.matcher : nullptr, ckpt.lstm ? &*ckpt.lstm : nullptr);

  io::DetectionSequence results;
  if (!seq.empty()) {
    std::map<int, const io::FrameDetections*> by_frame;
    for (const auto& fd : seq) by_frame[fd.frame] = &fd;
    const std::vector<Detection> none;
    for (int f = seq.front().frame; f <= seq.back().frame; ++f) {
      const auto it = by_frame.find(f);
      const auto& dets = it == by_frame.end() ? none : it->second->detections;
      const auto r = tracker.step(f, dets);
      io::FrameDetections fd{f, {}};
      for (const auto& o : r.outputs) {
        Detection d;
        d.frame = f;
        d.box = o.box;
        d.confidence = o.confidence;
        d.class_id = o.class_id;
        d.label = o.track_id;
        fd.detections.push_back(std::move(d));
      }
      results.push_back(std::move(fd));
    }
  }
  io::write_detections(a.out, results);
  int boxes = 0;
  for (const auto& fd : results) boxes += static_cast<int>(fd.detections.size());
  out << "tracked " << results.size() << " frames, " << boxes << " boxes -> " << a.out << '\n';
  return 0;
}

// --- simulate -------------------------------------------------------------------

int cmd_simulate(const Settings& s, const std::string& dir, std::ostream& out) {
  const auto scenario = sim::generate(s.scenario);
  io::write_scenario(dir, scenario);
  int n = 0;
  for (const auto& f : scenario.frames) n += static_cast<int>(f.size());
  out << "wrote " << scenario.n_frames() << " frames, " << n << " detections to " << dir << '\n';
  return 0;
}

// --- train-matcher --------------------------------------------------------------

struct TrainArgs {
  std::vector<std::string> data;
  std::string out, init;
  int epochs = -1;
  int hidden = 64;
  bool long_schedule = false;
};

io::Checkpoint initial_checkpoint(const std::string& path) {
  return path.empty() ? io::Checkpoint{} : io::load_checkpoint(path);
}

int cmd_train_matcher(const Settings& s, const TrainArgs& a, std::ostream& out) {
  std::vector<LabeledSequence> dataset;
  int dim = 0;
  for (const auto& dir : a.data) {
    const auto seq = io::read_dataset(dir);
    for (const auto& fd : seq) {
      if (!fd.detections.empty()) {
        dim = static_cast<int>(fd.detections.front().embedding.size());
        break;
      }
    }
    if (dim == 0) throw std::invalid_argument("train-matcher: " + dir + " has no detections");
    dataset.push_back(io::to_labeled(seq, dim));
  }
  MatcherTrainOptions opts = a.long_schedule ? MatcherTrainOptions::long_schedule() : s.matcher;
  opts.seed = s.matcher.seed;
  if (a.epochs >= 0) opts.epochs = a.epochs;
  TrackerConfig cfg = s.tracker;
  cfg.embedding_dim = dim;

  auto ckpt = initial_checkpoint(a.init);
  const auto result = train_matcher(dataset, cfg, init_matcher(dim, opts.seed), opts);
  for (std::size_t e = 0; e < result.loss_curve.size(); ++e) {
    out << "epoch " << e + 1 << " loss " << result.loss_curve[e] << " val "
        << result.validation_curve[e + 1] << '\n';
  }
  const double acc = pair_association_accuracy(dataset, result.params, cfg.non_match_logit,
                                               cfg.n_gap, 200, opts.seed + 1);
  out << "pair association accuracy " << acc << '\n';
  ckpt.matcher = result.params;
  io::save_checkpoint(a.out, ckpt);
  return 0;
}

// --- train-lstm -----------------------------------------------------------------

int cmd_train_lstm(const Settings& s, const TrainArgs& a, std::ostream& out) {
  std::vector<MotionSample> samples;
  std::optional<Mode> mode;
  for (const auto& dir : a.data) {
    const fs::path p = fs::path(dir) / "gt.csv";
    const auto gt = io::read_detections(fs::exists(p) ? p : fs::path(dir));
    std::map<int, std::map<int, Box>> trajectories;
    for (const auto& fd : gt) {
      for (const auto& d : fd.detections) {
        if (mode && *mode != box_mode(d.box)) throw std::invalid_argument("train-lstm: mixed 2D/3D data");
        mode = box_mode(d.box);
        trajectories[d.label][fd.frame] = d.box;
      }
    }
    for (const auto& [id, traj] : trajectories) {
      auto part = motion_samples(traj, *mode, s.tracker.past_window, s.tracker.pred_horizon);
      samples.insert(samples.end(), part.begin(), part.end());
    }
  }
  if (samples.empty()) throw std::invalid_argument("train-lstm: no trajectory is long enough");
  LstmTrainOptions opts = s.lstm;
  if (a.epochs >= 0) opts.epochs = a.epochs;
  auto ckpt = initial_checkpoint(a.init);
  LstmParams params = init_lstm(*mode, a.hidden, s.tracker.pred_horizon, opts.seed);
  const auto curve = train_lstm(samples, params, opts);
  for (std::size_t e = 0; e < curve.size(); ++e) out << "epoch " << e + 1 << " loss " << curve[e] << '\n';
  out << samples.size() << " samples\n";
  ckpt.lstm = std::move(params);
  io::save_checkpoint(a.out, ckpt);
  return 0;
}

// --- evaluate -------------------------------------------------------------------

struct EvalArgs {
  std::string gt, results, json_out, criterion;
  double iou_threshold = 0.5;
  double max_distance = 2.0;
};

int cmd_evaluate(const EvalArgs& a, std::ostream& out) {
  const auto gt = io::read_detections(a.gt);
  const auto hyp = io::read_detections(a.results);
  metrics::EvalOptions opts;
  opts.iou_threshold = a.iou_threshold;
  opts.max_distance = a.max_distance;
  if (a.criterion.empty()) {
    if (sequence_mode(gt, Mode::k2D) == Mode::k3D) opts.criterion = metrics::MatchCriterion::kCenterDistance;
  } else if (a.criterion == "distance") {
    opts.criterion = metrics::MatchCriterion::kCenterDistance;
  } else if (a.criterion != "iou") {
    throw std::invalid_argument("evaluate: --criterion must be iou or distance");
  }
  const auto ev = metrics::clear_mot(io::to_metric_sequence(gt), io::to_metric_sequence(hyp), opts);
  out << metrics::to_table({{fs::path(a.results).filename().string(), ev}});
  if (a.json_out == "-") {
    out << metrics::to_json(ev) << '\n';
  } else if (!a.json_out.empty()) {
    std::ofstream f(a.json_out);
    if (!f) throw std::runtime_error("cannot write " + a.json_out);
    f << metrics::to_json(ev) << '\n';
  }
  return 0;
}

// --- ablate ---------------------------------------------------------------------

struct AblateArgs {
  int scenarios = 3;
  int train_scenarios = 3;
  int epochs = -1;
  std::string out;
};

int cmd_ablate(const Settings& s, const AblateArgs& a, std::ostream& out) {
  if (a.scenarios < 1 || a.train_scenarios < 1) throw std::invalid_argument("ablate: need at least one scenario");
  const int dim = s.scenario.embedding.dim;
  if (dim < 4) throw std::invalid_argument("ablate: embedding dim must be at least 4");
  std::vector<sim::Scenario> train, eval;
  for (int k = 0; k < a.train_scenarios; ++k) {
    auto c = s.scenario;
    c.seed = s.seed * 1000 + 500 + k;
    train.push_back(sim::generate(c));
  }
  for (int k = 0; k < a.scenarios; ++k) {
    auto c = s.scenario;
    c.seed = s.seed * 1000 + k;
    eval.push_back(sim::generate(c));
  }

  TrackerConfig cfg = s.tracker;
  cfg.mode = s.scenario.mode;
  MatcherTrainOptions mopts = s.matcher;
  if (a.epochs >= 0) mopts.epochs = a.epochs;

  auto train_on = [&](int d) {
    std::vector<LabeledSequence> data;
    for (const auto& sc : train) data.push_back(sim::labeled_sequence(d == dim ? sc : sim::truncate_embeddings(sc, d)));
    TrackerConfig c = cfg;
    c.embedding_dim = d;
    return train_matcher(data, c, init_matcher(d, mopts.seed), mopts).params;
  };
  const MatcherParams full = train_on(dim);
  const MatcherParams reduced = train_on(dim / 4);

  std::vector<MotionSample> samples;
  for (const auto& sc : train) {
    auto part = sim::motion_samples(sc, cfg.past_window, cfg.pred_horizon);
    samples.insert(samples.end(), part.begin(), part.end());
  }
  LstmParams lstm = init_lstm(cfg.mode, 64, cfg.pred_horizon, s.lstm.seed);
  if (!samples.empty()) train_lstm(samples, lstm, s.lstm);

  const auto variants = sim::ablation_variants();
  const auto rows = sim::ablation_run(eval, variants, cfg, {&full, &reduced, &lstm});
  const std::string table = sim::ablation_table(rows);
  out << table;
  if (!a.out.empty()) {
    std::ofstream f(a.out);
    if (!f) throw std::runtime_error("cannot write " + a.out);
    f << table;
  }
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Online multi-object tracking association."};
  app.name("deft");
  app.require_subcommand(0, 1);

  GlobalOptions g;
  bool print_config = false;
  app.add_flag("--print-config", print_config, "Print the resolved settings as JSON and exit");
  app.add_option("--seed", g.seed, "Seed for every random choice");
  app.add_option("--config", g.config_path, "JSON file with tracker/scenario/matcher_training/lstm_training sections")
      ->check(CLI::ExistingFile);
  app.add_option("--preset", g.preset, "Tracker parameter set")
      ->check(CLI::IsMember({"mot17", "kitti", "nuscenes"}));

  TrackArgs track_args;
  auto* track = app.add_subcommand("track", "Associate detections into tracks");
  track->add_option("--detections", track_args.detections, "Detection CSV")->required()->check(CLI::ExistingFile);
  track->add_option("--embeddings", track_args.embeddings, "Embedding sidecar")->check(CLI::ExistingFile);
  track->add_option("--checkpoint", track_args.checkpoint, "Model checkpoint")->check(CLI::ExistingFile);
  track->add_option("--out", track_args.out, "Result CSV")->required();
  track->add_option("--motion", track_args.motion, "Motion model override")
      ->check(CLI::IsMember({"none", "kalman", "lstm"}));

  std::string sim_out;
  auto* simulate = app.add_subcommand("simulate", "Generate a synthetic dataset");
  simulate->add_option("--out", sim_out, "Output directory")->required();

  TrainArgs tm_args;
  auto* train_m = app.add_subcommand("train-matcher", "Train the affinity head");
  train_m->add_option("--data", tm_args.data, "Dataset directories")->required()->check(CLI::ExistingDirectory);
  train_m->add_option("--out", tm_args.out, "Checkpoint to write")->required();
  train_m->add_option("--init", tm_args.init, "Checkpoint whose other sections are kept")->check(CLI::ExistingFile);
  train_m->add_option("--epochs", tm_args.epochs, "Override the epoch count")->check(CLI::NonNegativeNumber);
  train_m->add_flag("--long-schedule", tm_args.long_schedule, "80 epochs from lr 1e-4");

  TrainArgs tl_args;
  auto* train_l = app.add_subcommand("train-lstm", "Train the LSTM motion forecaster");
  train_l->add_option("--data", tl_args.data, "Dataset directories (gt.csv) or GT files")->required()->check(CLI::ExistingPath);
  train_l->add_option("--out", tl_args.out, "Checkpoint to write")->required();
  train_l->add_option("--init", tl_args.init, "Checkpoint whose other sections are kept")->check(CLI::ExistingFile);
  train_l->add_option("--epochs", tl_args.epochs, "Override the epoch count")->check(CLI::NonNegativeNumber);
  train_l->add_option("--hidden", tl_args.hidden, "Hidden units")->check(CLI::PositiveNumber);

  EvalArgs eval_args;
  auto* evaluate = app.add_subcommand("evaluate", "CLEAR-MOT and IDF1 of a result file");
  evaluate->add_option("--gt", eval_args.gt, "Ground-truth CSV")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--results", eval_args.results, "Result CSV")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--json", eval_args.json_out, "Write a JSON report ('-' for stdout)");
  evaluate->add_option("--criterion", eval_args.criterion, "iou or distance (default by box kind)")
      ->check(CLI::IsMember({"iou", "distance"}));
  evaluate->add_option("--iou-threshold", eval_args.iou_threshold, "IoU match threshold");
  evaluate->add_option("--max-distance", eval_args.max_distance, "Center-distance threshold");

  AblateArgs ablate_args;
  auto* ablate = app.add_subcommand("ablate", "Component ablation on simulated scenarios");
  ablate->add_option("--scenarios", ablate_args.scenarios, "Evaluation scenarios");
  ablate->add_option("--train-scenarios", ablate_args.train_scenarios, "Training scenarios");
  ablate->add_option("--epochs", ablate_args.epochs, "Matcher epochs")->check(CLI::NonNegativeNumber);
  ablate->add_option("--out", ablate_args.out, "Also write the table here");

  for (auto* sub : {track, simulate, train_m, train_l, evaluate, ablate}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    const Settings s = resolve(g);
    if (print_config) {
      out << json{{"tracker", io::to_json(s.tracker)},
                  {"scenario", io::to_json(s.scenario)},
                  {"matcher_training", io::to_json(s.matcher)},
                  {"lstm_training", io::to_json(s.lstm)}}
                 .dump(2)
          << '\n';
      return 0;
    }
    if (track->parsed()) return cmd_track(s, track_args, out);
    if (simulate->parsed()) return cmd_simulate(s, sim_out, out);
    if (train_m->parsed()) return cmd_train_matcher(s, tm_args, out);
    if (train_l->parsed()) return cmd_train_lstm(s, tl_args, out);
    if (evaluate->parsed()) return cmd_evaluate(eval_args, out);
    if (ablate->parsed()) return cmd_ablate(s, ablate_args, out);
    err << "deft: a subcommand is required\n" << app.help();
    return 2;
  } catch (const std::exception& e) {
    err << "deft: " << e.what() << '\n';
    return 1;
  }
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"deft"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace deft
