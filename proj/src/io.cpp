#include "deft/io.hpp"

#include <algorithm>
#include <array>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <stdexcept>

namespace deft::io {

namespace fs = std::filesystem;
using nlohmann::json;

// --- CSV ----------------------------------------------------------------------

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double to_double(const std::string& s, const std::string& where) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw std::runtime_error(where + ": not a number: '" + s + "'");
  }
  while (used < s.size() && std::isspace(static_cast<unsigned char>(s[used]))) ++used;
  if (used != s.size()) throw std::runtime_error(where + ": not a number: '" + s + "'");
  return v;
}

int to_int(const std::string& s, const std::string& where) {
  const double v = to_double(s, where);
  if (v != std::floor(v) || std::abs(v) > 2e9) {
    throw std::runtime_error(where + ": not an integer: '" + s + "'");
  }
  return static_cast<int>(v);
}

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(path, mode);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

std::ifstream open_in(const fs::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return in;
}

}  // namespace

DetectionSequence parse_detections(std::istream& in, const std::string& source) {
  std::map<int, std::vector<Detection>> by_frame;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    const std::string where = source + ":" + std::to_string(line_no);
    const auto cells = split_csv(line);
    Detection d;
    if (cells.size() == 9 || cells.size() == 10) {
      // MOT rows may carry a trailing unused column.
      d.frame = to_int(cells[0], where);
      d.label = to_int(cells[1], where);
      const double left = to_double(cells[2], where);
      const double top = to_double(cells[3], where);
      const double w = to_double(cells[4], where);
      const double h = to_double(cells[5], where);
      d.box = BBox2D{left + w / 2.0, top + h / 2.0, w, h};
      d.confidence = to_double(cells[6], where);
      d.class_id = to_int(cells[7], where);
    } else if (cells.size() == 11) {
      d.frame = to_int(cells[0], where);
      d.label = to_int(cells[1], where);
      std::array<double, 7> v{};
      for (int k = 0; k < 7; ++k) v[k] = to_double(cells[2 + k], where);
      d.box = BBox3D{v[0], v[1], v[2], v[3], v[4], v[5], v[6]};
      d.confidence = to_double(cells[9], where);
      d.class_id = to_int(cells[10], where);
    } else {
      throw std::runtime_error(where + ": expected 9 (2D) or 11 (3D) columns, got " +
                               std::to_string(cells.size()));
    }
    if (!box_valid(d.box)) throw std::runtime_error(where + ": box has non-positive extent");
    by_frame[d.frame].push_back(std::move(d));
  }
  DetectionSequence seq;
  for (auto& [frame, dets] : by_frame) seq.push_back({frame, std::move(dets)});
  return seq;
}

DetectionSequence read_detections(const fs::path& path) {
  auto in = open_in(path);
  return parse_detections(in, path.string());
}

void write_detections(std::ostream& out, const DetectionSequence& seq) {
  out << std::setprecision(10);
  for (const auto& fd : seq) {
    for (const auto& d : fd.detections) {
      if (const auto* b = std::get_if<BBox2D>(&d.box)) {
        out << fd.frame << ',' << d.label << ',' << b->cx - b->w / 2.0 << ','
            << b->cy - b->h / 2.0 << ',' << b->w << ',' << b->h << ',' << d.confidence << ','
            << d.class_id << ",1\n";
      } else {
        const auto& b3 = std::get<BBox3D>(d.box);
        out << fd.frame << ',' << d.label << ',' << b3.cx << ',' << b3.cy << ',' << b3.cz << ','
            << b3.w << ',' << b3.h << ',' << b3.l << ',' << b3.yaw << ',' << d.confidence << ','
            << d.class_id << '\n';
      }
    }
  }
}

void write_detections(const fs::path& path, const DetectionSequence& seq) {
  auto out = open_out(path);
  write_detections(out, seq);
}

metrics::Sequence to_metric_sequence(const DetectionSequence& seq) {
  metrics::Sequence out;
  for (const auto& fd : seq) {
    auto& boxes = out[fd.frame];
    for (const auto& d : fd.detections) boxes.push_back({d.label, d.box});
  }
  return out;
}

DetectionSequence from_metric_sequence(const metrics::Sequence& seq) {
  DetectionSequence out;
  for (const auto& [frame, boxes] : seq) {
    FrameDetections fd{frame, {}};
    for (const auto& b : boxes) {
      Detection d;
      d.frame = frame;
      d.box = b.box;
      d.label = b.id;
      fd.detections.push_back(std::move(d));
    }
    out.push_back(std::move(fd));
  }
  return out;
}

// --- Binary helpers -----------------------------------------------------------

namespace {

template <class T>
void put(std::ostream& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.write(buf, sizeof(T));
}

template <class T>
T get(std::istream& in, const std::string& what) {
  char buf[sizeof(T)];
  if (!in.read(buf, sizeof(T))) throw std::runtime_error(what + ": truncated file");
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

void expect_magic(std::istream& in, const char (&magic)[9], const std::string& what) {
  char buf[8];
  if (!in.read(buf, 8) || std::memcmp(buf, magic, 8) != 0) {
    throw std::runtime_error(what + ": bad magic, expected " + std::string(magic));
  }
}

}  // namespace

// --- Embeddings -----------------------------------------------------------------

EmbeddingFile read_embeddings(const fs::path& path) {
  auto in = open_in(path, std::ios::binary);
  const std::string what = path.string();
  expect_magic(in, "DEFTEMB1", what);
  const auto version = get<std::uint32_t>(in, what);
  if (version != kEmbeddingVersion) {
    throw std::runtime_error(what + ": unsupported version " + std::to_string(version));
  }
  EmbeddingFile file;
  file.dim = static_cast<int>(get<std::uint32_t>(in, what));
  const auto n_frames = get<std::uint32_t>(in, what);
  for (std::uint32_t k = 0; k < n_frames; ++k) {
    EmbeddingFrame ef;
    ef.frame = get<std::int32_t>(in, what);
    const auto rows = get<std::uint32_t>(in, what);
    ef.rows.resize(rows, file.dim);
    for (std::uint32_t r = 0; r < rows; ++r) {
      for (int c = 0; c < file.dim; ++c) ef.rows(r, c) = get<float>(in, what);
    }
    file.frames.push_back(std::move(ef));
  }
  return file;
}

void write_embeddings(const fs::path& path, const EmbeddingFile& file) {
  auto out = open_out(path, std::ios::binary);
  out.write("DEFTEMB1", 8);
  put<std::uint32_t>(out, kEmbeddingVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(file.dim));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(file.frames.size()));
  for (const auto& ef : file.frames) {
    if (ef.rows.rows() > 0 && ef.rows.cols() != file.dim) {
      throw std::invalid_argument("write_embeddings: frame " + std::to_string(ef.frame) +
                                  " has the wrong width");
    }
    put<std::int32_t>(out, ef.frame);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ef.rows.rows()));
    for (Eigen::Index r = 0; r < ef.rows.rows(); ++r) {
      for (int c = 0; c < file.dim; ++c) put<float>(out, static_cast<float>(ef.rows(r, c)));
    }
  }
}

EmbeddingFile collect_embeddings(const DetectionSequence& seq, int dim) {
  EmbeddingFile file;
  file.dim = dim;
  for (const auto& fd : seq) {
    EmbeddingFrame ef{fd.frame, Eigen::MatrixXd(static_cast<Eigen::Index>(fd.detections.size()), dim)};
    for (std::size_t k = 0; k < fd.detections.size(); ++k) {
      const auto& e = fd.detections[k].embedding;
      if (e.size() != dim) {
        throw std::invalid_argument("collect_embeddings: frame " + std::to_string(fd.frame) +
                                    " has an embedding of dim " + std::to_string(e.size()));
      }
      ef.rows.row(static_cast<Eigen::Index>(k)) = e.transpose();
    }
    file.frames.push_back(std::move(ef));
  }
  return file;
}

void attach_embeddings(DetectionSequence& seq, const EmbeddingFile& file) {
  std::map<int, const EmbeddingFrame*> by_frame;
  for (const auto& ef : file.frames) {
    if (!by_frame.emplace(ef.frame, &ef).second) {
      throw std::runtime_error("embeddings: frame " + std::to_string(ef.frame) + " repeated");
    }
  }
  std::set<int> seen;
  for (auto& fd : seq) {
    seen.insert(fd.frame);
    const auto it = by_frame.find(fd.frame);
    const Eigen::Index rows = it == by_frame.end() ? 0 : it->second->rows.rows();
    if (rows != static_cast<Eigen::Index>(fd.detections.size())) {
      throw std::runtime_error("embeddings: frame " + std::to_string(fd.frame) + " has " +
                               std::to_string(rows) + " rows but " +
                               std::to_string(fd.detections.size()) + " detections");
    }
    for (Eigen::Index r = 0; r < rows; ++r) {
      fd.detections[r].embedding = it->second->rows.row(r).transpose();
    }
  }
  for (const auto& ef : file.frames) {
    if (seen.count(ef.frame) == 0 && ef.rows.rows() != 0) {
      throw std::runtime_error("embeddings: frame " + std::to_string(ef.frame) + " has " +
                               std::to_string(ef.rows.rows()) + " rows but 0 detections");
    }
  }
}

// --- Checkpoints ----------------------------------------------------------------

namespace {

void put_tensor(std::ostream& out, const Eigen::MatrixXd& m) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(m.rows()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) put<double>(out, m(r, c));
  }
}

Eigen::MatrixXd get_tensor(std::istream& in, const std::string& what) {
  const auto rows = get<std::uint32_t>(in, what);
  const auto cols = get<std::uint32_t>(in, what);
  if (static_cast<std::uint64_t>(rows) * cols > (1ull << 28)) {
    throw std::runtime_error(what + ": implausible tensor size");
  }
  Eigen::MatrixXd m(rows, cols);
  for (std::uint32_t r = 0; r < rows; ++r) {
    for (std::uint32_t c = 0; c < cols; ++c) m(r, c) = get<double>(in, what);
  }
  return m;
}

Eigen::VectorXd as_vector(const Eigen::MatrixXd& m, const std::string& what) {
  if (m.cols() != 1) throw std::runtime_error(what + ": expected a column vector");
  return m.col(0);
}

}  // namespace

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
  auto out = open_out(path, std::ios::binary);
  out.write("DEFTCKPT", 8);
  put<std::uint32_t>(out, 1);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.matcher.has_value()) +
                              static_cast<std::uint32_t>(ckpt.lstm.has_value()));
  if (ckpt.matcher) {
    out.write("MTCH", 4);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(2 * ckpt.matcher->layers.size()));
    for (const auto& layer : ckpt.matcher->layers) {
      put_tensor(out, layer.weight);
      put_tensor(out, layer.bias);
    }
  }
  if (ckpt.lstm) {
    const auto& p = *ckpt.lstm;
    out.write("LSTM", 4);
    put<std::uint32_t>(out, 7);
    Eigen::MatrixXd meta(3, 1);
    meta << (p.mode == Mode::k3D ? 1.0 : 0.0), p.horizon, p.output_scale;
    put_tensor(out, meta);
    put_tensor(out, p.w_input);
    put_tensor(out, p.w_hidden);
    put_tensor(out, p.bias);
    put_tensor(out, p.w_out);
    put_tensor(out, p.b_out);
    put_tensor(out, p.input_scale);
  }
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

Checkpoint load_checkpoint(const fs::path& path) {
  auto in = open_in(path, std::ios::binary);
  const std::string what = path.string();
  expect_magic(in, "DEFTCKPT", what);
  const auto version = get<std::uint32_t>(in, what);
  if (version != 1) throw std::runtime_error(what + ": unsupported version " + std::to_string(version));
  const auto sections = get<std::uint32_t>(in, what);
  Checkpoint ckpt;
  for (std::uint32_t s = 0; s < sections; ++s) {
    char tag[4];
    if (!in.read(tag, 4)) throw std::runtime_error(what + ": truncated file");
    const auto count = get<std::uint32_t>(in, what);
    std::vector<Eigen::MatrixXd> t;
    for (std::uint32_t k = 0; k < count; ++k) t.push_back(get_tensor(in, what));
    if (std::memcmp(tag, "MTCH", 4) == 0) {
      if (count == 0 || count % 2 != 0) throw std::runtime_error(what + ": bad matcher section");
      MatcherParams m;
      for (std::uint32_t k = 0; k < count; k += 2) {
        m.layers.push_back({t[k], as_vector(t[k + 1], what)});
      }
      m.check();
      ckpt.matcher = std::move(m);
    } else if (std::memcmp(tag, "LSTM", 4) == 0) {
      if (count != 7 || t[0].rows() != 3) throw std::runtime_error(what + ": bad lstm section");
      LstmParams p;
      p.mode = t[0](0, 0) != 0.0 ? Mode::k3D : Mode::k2D;
      p.horizon = static_cast<int>(t[0](1, 0));
      p.output_scale = t[0](2, 0);
      p.w_input = t[1];
      p.w_hidden = t[2];
      p.bias = as_vector(t[3], what);
      p.w_out = t[4];
      p.b_out = as_vector(t[5], what);
      p.input_scale = as_vector(t[6], what);
      p.check();
      ckpt.lstm = std::move(p);
    } else {
      throw std::runtime_error(what + ": unknown section " + std::string(tag, 4));
    }
  }
  return ckpt;
}

// --- JSON -----------------------------------------------------------------------

namespace {

// Reads the keys of an object into typed fields, rejecting anything unknown.
class Reader {
 public:
  Reader(const json& j, std::string context) : j_(j), context_(std::move(context)) {
    if (!j_.is_object()) throw std::invalid_argument(context_ + ": expected a JSON object");
  }

  void field(const char* key, int& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_integer()) fail(key, "an integer");
      out = v->get<int>();
    }
  }
  void field(const char* key, std::uint64_t& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<long long>() >= 0)) {
        fail(key, "a non-negative integer");
      }
      out = v->get<std::uint64_t>();
    }
  }
  void field(const char* key, double& out) {
    if (const json* v = take(key)) {
      if (!v->is_number()) fail(key, "a number");
      out = v->get<double>();
    }
  }
  void field(const char* key, bool& out) {
    if (const json* v = take(key)) {
      if (!v->is_boolean()) fail(key, "a boolean");
      out = v->get<bool>();
    }
  }
  void field(const char* key, std::string& out) {
    if (const json* v = take(key)) {
      if (!v->is_string()) fail(key, "a string");
      out = v->get<std::string>();
    }
  }
  void field(const char* key, std::vector<int>& out) {
    if (const json* v = take(key)) {
      if (!v->is_array()) fail(key, "an array of integers");
      out.clear();
      for (const auto& e : *v) {
        if (!e.is_number_integer()) fail(key, "an array of integers");
        out.push_back(e.get<int>());
      }
    }
  }
  const json* object(const char* key) {
    const json* v = take(key);
    if (v != nullptr && !v->is_object()) fail(key, "an object");
    return v;
  }
  const json* array(const char* key) {
    const json* v = take(key);
    if (v != nullptr && !v->is_array()) fail(key, "an array");
    return v;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (used_.count(key) == 0) throw std::invalid_argument(context_ + ": unknown key '" + key + "'");
    }
  }

 private:
  const json* take(const char* key) {
    used_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  [[noreturn]] void fail(const char* key, const char* expected) const {
    throw std::invalid_argument(context_ + ": '" + key + "' must be " + expected);
  }

  const json& j_;
  std::string context_;
  std::set<std::string> used_;
};

template <class T, class Parse>
void enum_field(Reader& r, const char* key, T& out, Parse parse, std::string current) {
  std::string s = std::move(current);
  r.field(key, s);
  try {
    out = parse(s);
  } catch (const std::exception& e) {
    throw std::invalid_argument(std::string(key) + ": " + e.what());
  }
}

std::string_view profile_name(sim::MotionProfile p) {
  switch (p) {
    case sim::MotionProfile::kConstantVelocity: return "constant_velocity";
    case sim::MotionProfile::kTurning: return "turning";
    case sim::MotionProfile::kRandomWalk: return "random_walk";
  }
  return "constant_velocity";
}

sim::MotionProfile profile_from(std::string_view s) {
  if (s == "constant_velocity") return sim::MotionProfile::kConstantVelocity;
  if (s == "turning") return sim::MotionProfile::kTurning;
  if (s == "random_walk") return sim::MotionProfile::kRandomWalk;
  throw std::invalid_argument("unknown motion profile '" + std::string(s) + "'");
}

}  // namespace

json to_json(const TrackerConfig& c) {
  return {{"n_max", c.n_max},
          {"n_gap", c.n_gap},
          {"memory_size", c.memory_size},
          {"iou_max_age", c.iou_max_age},
          {"similarity_threshold", c.similarity_threshold},
          {"iou_threshold", c.iou_threshold},
          {"max_age", c.max_age},
          {"non_match_logit", c.non_match_logit},
          {"past_window", c.past_window},
          {"pred_horizon", c.pred_horizon},
          {"embedding_dim", c.embedding_dim},
          {"mode", std::string(to_string(c.mode))},
          {"motion_model", std::string(to_string(c.motion_model))},
          {"iou_second_stage", c.iou_second_stage},
          {"use_embeddings", c.use_embeddings},
          {"min_confidence", c.min_confidence},
          {"kalman_process_noise", c.kalman_process_noise},
          {"kalman_measurement_noise", c.kalman_measurement_noise}};
}

TrackerConfig tracker_config_from_json(const json& j, TrackerConfig c) {
  Reader r(j, "tracker config");
  r.field("n_max", c.n_max);
  r.field("n_gap", c.n_gap);
  r.field("memory_size", c.memory_size);
  r.field("iou_max_age", c.iou_max_age);
  r.field("similarity_threshold", c.similarity_threshold);
  r.field("iou_threshold", c.iou_threshold);
  r.field("max_age", c.max_age);
  r.field("non_match_logit", c.non_match_logit);
  r.field("past_window", c.past_window);
  r.field("pred_horizon", c.pred_horizon);
  r.field("embedding_dim", c.embedding_dim);
  enum_field(r, "mode", c.mode, mode_from_string, std::string(to_string(c.mode)));
  enum_field(r, "motion_model", c.motion_model, motion_model_from_string,
             std::string(to_string(c.motion_model)));
  r.field("iou_second_stage", c.iou_second_stage);
  r.field("use_embeddings", c.use_embeddings);
  r.field("min_confidence", c.min_confidence);
  r.field("kalman_process_noise", c.kalman_process_noise);
  r.field("kalman_measurement_noise", c.kalman_measurement_noise);
  r.finish();
  c.validate();
  return c;
}

json to_json(const sim::ScenarioConfig& c) {
  json windows = json::array();
  for (const auto& w : c.occlusion.windows) {
    windows.push_back({{"object", w.object}, {"first", w.first}, {"last", w.last}});
  }
  return {{"mode", std::string(to_string(c.mode))},
          {"n_objects", c.n_objects},
          {"n_frames", c.n_frames},
          {"frame_stride", c.frame_stride},
          {"profile", std::string(profile_name(c.profile))},
          {"min_speed", c.min_speed},
          {"max_speed", c.max_speed},
          {"turn_rate", c.turn_rate},
          {"walk_sigma", c.walk_sigma},
          {"width", c.width},
          {"height", c.height},
          {"min_size", c.min_size},
          {"max_size", c.max_size},
          {"occlusion",
           {{"windows", windows},
            {"probability", c.occlusion.probability},
            {"min_length", c.occlusion.min_length},
            {"max_length", c.occlusion.max_length}}},
          {"noise",
           {{"clutter_rate", c.noise.clutter_rate},
            {"miss_rate", c.noise.miss_rate},
            {"jitter_sigma", c.noise.jitter_sigma}}},
          {"embedding",
           {{"dim", c.embedding.dim},
            {"min_angle_deg", c.embedding.min_angle_deg},
            {"noise_sigma", c.embedding.noise_sigma},
            {"confusable_fraction", c.embedding.confusable_fraction},
            {"confusable_angle_deg", c.embedding.confusable_angle_deg}}},
          {"shuffle", c.shuffle},
          {"seed", c.seed}};
}

sim::ScenarioConfig scenario_config_from_json(const json& j, sim::ScenarioConfig c) {
  Reader r(j, "scenario config");
  enum_field(r, "mode", c.mode, mode_from_string, std::string(to_string(c.mode)));
  r.field("n_objects", c.n_objects);
  r.field("n_frames", c.n_frames);
  r.field("frame_stride", c.frame_stride);
  enum_field(r, "profile", c.profile, profile_from, std::string(profile_name(c.profile)));
  r.field("min_speed", c.min_speed);
  r.field("max_speed", c.max_speed);
  r.field("turn_rate", c.turn_rate);
  r.field("walk_sigma", c.walk_sigma);
  r.field("width", c.width);
  r.field("height", c.height);
  r.field("min_size", c.min_size);
  r.field("max_size", c.max_size);
  if (const json* o = r.object("occlusion")) {
    Reader ro(*o, "scenario config.occlusion");
    if (const json* ws = ro.array("windows")) {
      c.occlusion.windows.clear();
      for (const auto& w : *ws) {
        Reader rw(w, "scenario config.occlusion.windows");
        sim::OcclusionWindow win;
        rw.field("object", win.object);
        rw.field("first", win.first);
        rw.field("last", win.last);
        rw.finish();
        c.occlusion.windows.push_back(win);
      }
    }
    ro.field("probability", c.occlusion.probability);
    ro.field("min_length", c.occlusion.min_length);
    ro.field("max_length", c.occlusion.max_length);
    ro.finish();
  }
  if (const json* o = r.object("noise")) {
    Reader rn(*o, "scenario config.noise");
    rn.field("clutter_rate", c.noise.clutter_rate);
    rn.field("miss_rate", c.noise.miss_rate);
    rn.field("jitter_sigma", c.noise.jitter_sigma);
    rn.finish();
  }
  if (const json* o = r.object("embedding")) {
    Reader re(*o, "scenario config.embedding");
    re.field("dim", c.embedding.dim);
    re.field("min_angle_deg", c.embedding.min_angle_deg);
    re.field("noise_sigma", c.embedding.noise_sigma);
    re.field("confusable_fraction", c.embedding.confusable_fraction);
    re.field("confusable_angle_deg", c.embedding.confusable_angle_deg);
    re.finish();
  }
  r.field("shuffle", c.shuffle);
  r.field("seed", c.seed);
  r.finish();
  c.validate();
  return c;
}

json to_json(const MatcherTrainOptions& o) {
  return {{"epochs", o.epochs},
          {"pairs_per_epoch", o.pairs_per_epoch},
          {"batch_size", o.batch_size},
          {"lr", o.lr},
          {"lr_drop_epochs", o.lr_drop_epochs},
          {"lr_drop_factor", o.lr_drop_factor},
          {"seed", o.seed},
          {"validation_pairs", o.validation_pairs}};
}

MatcherTrainOptions matcher_options_from_json(const json& j, MatcherTrainOptions o) {
  Reader r(j, "matcher training");
  r.field("epochs", o.epochs);
  r.field("pairs_per_epoch", o.pairs_per_epoch);
  r.field("batch_size", o.batch_size);
  r.field("lr", o.lr);
  r.field("lr_drop_epochs", o.lr_drop_epochs);
  r.field("lr_drop_factor", o.lr_drop_factor);
  r.field("seed", o.seed);
  r.field("validation_pairs", o.validation_pairs);
  r.finish();
  return o;
}

json to_json(const LstmTrainOptions& o) {
  return {{"epochs", o.epochs}, {"batch_size", o.batch_size}, {"lr", o.lr}, {"seed", o.seed}};
}

LstmTrainOptions lstm_options_from_json(const json& j, LstmTrainOptions o) {
  Reader r(j, "lstm training");
  r.field("epochs", o.epochs);
  r.field("batch_size", o.batch_size);
  r.field("lr", o.lr);
  r.field("seed", o.seed);
  r.finish();
  return o;
}

json read_json(const fs::path& path) {
  auto in = open_in(path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  auto out = open_out(path);
  out << j.dump(2) << '\n';
}

// --- Scenario export ------------------------------------------------------------

void write_scenario(const fs::path& dir, const sim::Scenario& scenario) {
  fs::create_directories(dir);
  DetectionSequence seq;
  for (int f = 1; f <= scenario.n_frames(); ++f) seq.push_back({f, scenario.frames[f - 1]});
  write_detections(dir / "detections.csv", seq);
  write_embeddings(dir / "embeddings.bin", collect_embeddings(seq, scenario.config.embedding.dim));
  write_detections(dir / "gt.csv", from_metric_sequence(sim::ground_truth(scenario)));
  write_json(dir / "scenario.json", to_json(scenario.config));
}

DetectionSequence read_dataset(const fs::path& dir) {
  auto seq = read_detections(dir / "detections.csv");
  attach_embeddings(seq, read_embeddings(dir / "embeddings.bin"));
  return seq;
}

LabeledSequence to_labeled(const DetectionSequence& seq, int dim) {
  LabeledSequence out;
  if (seq.empty()) return out;
  std::map<int, const FrameDetections*> by_frame;
  for (const auto& fd : seq) by_frame[fd.frame] = &fd;
  for (int f = seq.front().frame; f <= seq.back().frame; ++f) {
    LabeledFrame lf;
    const auto it = by_frame.find(f);
    const std::size_t n = it == by_frame.end() ? 0 : it->second->detections.size();
    lf.embeddings.resize(static_cast<Eigen::Index>(n), dim);
    for (std::size_t k = 0; k < n; ++k) {
      const auto& d = it->second->detections[k];
      if (d.embedding.size() != dim) {
        throw std::invalid_argument("to_labeled: frame " + std::to_string(f) +
                                    " lacks embeddings of dim " + std::to_string(dim));
      }
      lf.embeddings.row(static_cast<Eigen::Index>(k)) = d.embedding.transpose();
      lf.ids.push_back(d.label);
    }
    out.push_back(std::move(lf));
  }
  return out;
}

}  // namespace deft::io
