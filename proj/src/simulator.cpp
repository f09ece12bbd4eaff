#include "deft/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>

namespace deft::sim {

void ScenarioConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("invalid scenario config: ") + what);
  };
  auto rate = [](double r) { return r >= 0.0 && r <= 1.0; };
  require(n_objects >= 0 && n_frames >= 1, "n_objects >= 0 and n_frames >= 1");
  require(frame_stride >= 1, "frame_stride >= 1");
  require(min_speed >= 0.0 && max_speed >= min_speed, "0 <= min_speed <= max_speed");
  require(width > 0.0 && height > 0.0, "positive scene extent");
  require(min_size > 0.0 && max_size >= min_size, "0 < min_size <= max_size");
  require(rate(occlusion.probability), "occlusion probability in [0,1]");
  require(occlusion.min_length >= 1 && occlusion.max_length >= occlusion.min_length,
          "occlusion lengths");
  require(rate(noise.clutter_rate) && rate(noise.miss_rate), "noise rates in [0,1]");
  require(noise.jitter_sigma >= 0.0, "jitter_sigma >= 0");
  require(embedding.dim >= 1, "embedding dim >= 1");
  require(embedding.noise_sigma >= 0.0, "embedding noise >= 0");
  require(rate(embedding.confusable_fraction), "confusable fraction in [0,1]");
  require(walk_sigma >= 0.0, "walk_sigma >= 0");
}

namespace {

Eigen::VectorXd random_unit(int dim, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::VectorXd v(dim);
  do {
    for (int k = 0; k < dim; ++k) v[k] = n(rng);
  } while (v.norm() < 1e-9);
  return v.normalized();
}

// Unit vector at `angle` radians from `base`.
Eigen::VectorXd rotate_towards_random(const Eigen::VectorXd& base, double angle,
                                      std::mt19937_64& rng) {
  if (base.size() == 1) return base;
  Eigen::VectorXd ortho;
  do {
    ortho = random_unit(static_cast<int>(base.size()), rng);
    ortho -= ortho.dot(base) * base;
  } while (ortho.norm() < 1e-6);
  ortho.normalize();
  return std::cos(angle) * base + std::sin(angle) * ortho;
}

std::vector<Eigen::VectorXd> identity_latents(int n, const EmbeddingSpec& spec,
                                              std::mt19937_64& rng) {
  const int n_conf = static_cast<int>(std::lround(spec.confusable_fraction * n / 2.0));
  const double min_cos = std::cos(spec.min_angle_deg * std::numbers::pi / 180.0);
  std::vector<Eigen::VectorXd> latents;
  for (int k = 0; k < n; ++k) {
    // The partner of a confusable pair sits at a small angle from its twin.
    if (k % 2 == 1 && k / 2 < n_conf) {
      latents.push_back(rotate_towards_random(
          latents.back(), spec.confusable_angle_deg * std::numbers::pi / 180.0, rng));
      continue;
    }
    Eigen::VectorXd best;
    double best_cos = 2.0;
    for (int attempt = 0; attempt < 200; ++attempt) {
      Eigen::VectorXd cand = random_unit(spec.dim, rng);
      double worst = -1.0;
      for (const auto& l : latents) worst = std::max(worst, cand.dot(l));
      if (worst < best_cos) {
        best_cos = worst;
        best = cand;
      }
      if (worst <= min_cos) break;
    }
    latents.push_back(best);
  }
  return latents;
}

struct ObjectState {
  double x, y, vx, vy, size, aspect, turn;
};

Box make_box(const ScenarioConfig& cfg, const ObjectState& s) {
  if (cfg.mode == Mode::k2D) return BBox2D{s.x, s.y, s.size, s.size * s.aspect};
  const double l = s.size;
  const double w = s.size / s.aspect;
  return BBox3D{s.x, s.y, 0.75, w, 1.5, l, normalize_angle(std::atan2(s.vy, s.vx))};
}

void advance(const ScenarioConfig& cfg, ObjectState& s, std::mt19937_64& rng) {
  switch (cfg.profile) {
    case MotionProfile::kConstantVelocity:
      break;
    case MotionProfile::kTurning: {
      const double c = std::cos(s.turn), sn = std::sin(s.turn);
      const double vx = c * s.vx - sn * s.vy;
      s.vy = sn * s.vx + c * s.vy;
      s.vx = vx;
      break;
    }
    case MotionProfile::kRandomWalk: {
      std::normal_distribution<double> n(0.0, cfg.walk_sigma);
      s.vx += n(rng);
      s.vy += n(rng);
      const double speed = std::hypot(s.vx, s.vy);
      const double cap = std::max(cfg.max_speed * 2.0, 1e-9);
      if (speed > cap) {
        s.vx *= cap / speed;
        s.vy *= cap / speed;
      }
      break;
    }
  }
  s.x += s.vx;
  s.y += s.vy;
  // Reflect at the scene border.
  if (s.x < 0.0) { s.x = -s.x; s.vx = std::abs(s.vx); }
  if (s.x > cfg.width) { s.x = 2.0 * cfg.width - s.x; s.vx = -std::abs(s.vx); }
  if (s.y < 0.0) { s.y = -s.y; s.vy = std::abs(s.vy); }
  if (s.y > cfg.height) { s.y = 2.0 * cfg.height - s.y; s.vy = -std::abs(s.vy); }
}

Box jitter(const Box& box, double sigma, std::mt19937_64& rng) {
  if (sigma <= 0.0) return box;
  std::normal_distribution<double> n(0.0, sigma);
  if (const auto* b = std::get_if<BBox2D>(&box)) {
    BBox2D out = *b;
    out.cx += n(rng);
    out.cy += n(rng);
    out.w = std::max(1.0, out.w + n(rng));
    out.h = std::max(1.0, out.h + n(rng));
    return out;
  }
  BBox3D out = std::get<BBox3D>(box);
  out.cx += n(rng);
  out.cy += n(rng);
  out.cz += 0.1 * n(rng);
  return out;
}

}  // namespace

Scenario generate(const ScenarioConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Scenario sc;
  sc.config = config;
  const auto latents = identity_latents(config.n_objects, config.embedding, rng);

  std::vector<ObjectState> states;
  for (int k = 0; k < config.n_objects; ++k) {
    ObjectState s{};
    s.size = config.min_size + unit(rng) * (config.max_size - config.min_size);
    s.aspect = config.mode == Mode::k2D ? 1.5 + unit(rng) : 2.0 + unit(rng);
    s.x = s.size + unit(rng) * std::max(0.0, config.width - 2.0 * s.size);
    s.y = s.size + unit(rng) * std::max(0.0, config.height - 2.0 * s.size);
    const double heading = unit(rng) * 2.0 * std::numbers::pi;
    const double speed = config.min_speed + unit(rng) * (config.max_speed - config.min_speed);
    s.vx = speed * std::cos(heading);
    s.vy = speed * std::sin(heading);
    s.turn = (unit(rng) < 0.5 ? -1.0 : 1.0) * config.turn_rate;
    states.push_back(s);
    GtTrack t;
    t.id = k + 1;
    t.latent = latents[k];
    sc.tracks.push_back(std::move(t));
  }

  for (const auto& w : config.occlusion.windows) {
    if (w.object < 0 || w.object >= config.n_objects) {
      throw std::invalid_argument("scenario: occlusion window references unknown object");
    }
    for (int f = w.first; f <= w.last; ++f) {
      if (f >= 1 && f <= config.n_frames) sc.tracks[w.object].occluded.insert(f);
    }
  }
  if (config.occlusion.probability > 0.0) {
    std::uniform_int_distribution<int> len_dist(config.occlusion.min_length,
                                                config.occlusion.max_length);
    for (auto& t : sc.tracks) {
      if (unit(rng) >= config.occlusion.probability) continue;
      const int len = len_dist(rng);
      const int lo = 3;
      const int hi = config.n_frames - len - 2;
      if (hi < lo) continue;
      std::uniform_int_distribution<int> start_dist(lo, hi);
      const int start = start_dist(rng);
      for (int f = start; f < start + len; ++f) t.occluded.insert(f);
    }
  }

  sc.frames.resize(config.n_frames);
  std::normal_distribution<double> emb_noise(0.0, config.embedding.noise_sigma);
  for (int f = 1; f <= config.n_frames; ++f) {
    if (f > 1) {
      for (auto& s : states) {
        for (int k = 0; k < config.frame_stride; ++k) advance(config, s, rng);
      }
    }
    auto& dets = sc.frames[f - 1];
    for (int k = 0; k < config.n_objects; ++k) {
      auto& track = sc.tracks[k];
      const Box box = make_box(config, states[k]);
      track.boxes[f] = box;
      if (track.occluded.count(f) != 0) continue;
      if (config.noise.miss_rate > 0.0 && unit(rng) < config.noise.miss_rate) continue;
      Detection d;
      d.frame = f;
      d.box = jitter(box, config.noise.jitter_sigma, rng);
      d.confidence = 1.0;
      d.label = track.id;
      d.embedding = track.latent;
      if (config.embedding.noise_sigma > 0.0) {
        for (int e = 0; e < config.embedding.dim; ++e) d.embedding[e] += emb_noise(rng);
      }
      dets.push_back(std::move(d));
    }
    if (config.noise.clutter_rate > 0.0) {
      for (int k = 0; k < config.n_objects; ++k) {
        if (unit(rng) >= config.noise.clutter_rate) continue;
        ObjectState s{};
        s.size = config.min_size + unit(rng) * (config.max_size - config.min_size);
        s.aspect = config.mode == Mode::k2D ? 1.5 + unit(rng) : 2.0 + unit(rng);
        s.x = unit(rng) * config.width;
        s.y = unit(rng) * config.height;
        s.vx = 1.0;
        Detection d;
        d.frame = f;
        d.box = make_box(config, s);
        d.confidence = 0.3 + 0.7 * unit(rng);
        d.label = -1;
        d.embedding = random_unit(config.embedding.dim, rng);
        dets.push_back(std::move(d));
      }
    }
    if (config.shuffle) std::shuffle(dets.begin(), dets.end(), rng);
  }
  return sc;
}

metrics::Sequence ground_truth(const Scenario& scenario) {
  metrics::Sequence seq;
  for (int f = 1; f <= scenario.n_frames(); ++f) seq[f];
  for (const auto& t : scenario.tracks) {
    for (const auto& [f, box] : t.boxes) {
      if (t.occluded.count(f) == 0) seq[f].push_back({t.id, box});
    }
  }
  return seq;
}

LabeledSequence labeled_sequence(const Scenario& scenario) {
  LabeledSequence seq;
  for (const auto& dets : scenario.frames) {
    LabeledFrame lf;
    const int dim = dets.empty() ? scenario.config.embedding.dim
                                 : static_cast<int>(dets.front().embedding.size());
    lf.embeddings.resize(static_cast<Eigen::Index>(dets.size()), dim);
    for (std::size_t k = 0; k < dets.size(); ++k) {
      lf.embeddings.row(static_cast<Eigen::Index>(k)) = dets[k].embedding.transpose();
      lf.ids.push_back(dets[k].label);
    }
    seq.push_back(std::move(lf));
  }
  return seq;
}

Scenario truncate_embeddings(const Scenario& scenario, int dim) {
  if (dim < 1 || dim > scenario.config.embedding.dim) {
    throw std::invalid_argument("truncate_embeddings: bad dimension");
  }
  Scenario out = scenario;
  out.config.embedding.dim = dim;
  for (auto& frame : out.frames) {
    for (auto& d : frame) d.embedding = Eigen::VectorXd(d.embedding.head(dim));
  }
  for (auto& t : out.tracks) t.latent = Eigen::VectorXd(t.latent.head(dim));
  return out;
}

std::vector<MotionSample> motion_samples(const Scenario& scenario, int past_window, int horizon) {
  std::vector<MotionSample> out;
  for (const auto& t : scenario.tracks) {
    auto s = deft::motion_samples(t.boxes, scenario.config.mode, past_window, horizon);
    out.insert(out.end(), std::make_move_iterator(s.begin()), std::make_move_iterator(s.end()));
  }
  return out;
}

double occlusion_raw(const Scenario& scenario) {
  double total = 0.0;
  for (const auto& t : scenario.tracks) total += static_cast<double>(t.occluded.size());
  return total;
}

double displacement_raw(const Scenario& scenario) {
  std::vector<double> per_track;
  for (const auto& t : scenario.tracks) {
    double sum = 0.0;
    int n = 0;
    const Box* prev = nullptr;
    int prev_frame = 0;
    for (const auto& [f, box] : t.boxes) {
      if (prev != nullptr && f == prev_frame + 1) {
        double dx, dy;
        if (const auto* b = std::get_if<BBox2D>(&box)) {
          const auto& p = std::get<BBox2D>(*prev);
          dx = b->cx - p.cx;
          dy = b->cy - p.cy;
        } else {
          const auto& b3 = std::get<BBox3D>(box);
          const auto& p = std::get<BBox3D>(*prev);
          dx = b3.cx - p.cx;
          dy = b3.cy - p.cy;
        }
        sum += std::hypot(dx, dy);
        ++n;
      }
      prev = &box;
      prev_frame = f;
    }
    if (n > 0) per_track.push_back(sum / n);
  }
  if (per_track.empty()) return 0.0;
  std::sort(per_track.begin(), per_track.end(), std::greater<>());
  const std::size_t top = std::min<std::size_t>(10, per_track.size());
  return std::accumulate(per_track.begin(), per_track.begin() + static_cast<long>(top), 0.0) /
         static_cast<double>(top);
}

std::vector<double> rescale(std::span<const double> raw) {
  std::vector<double> out(raw.size(), 0.0);
  if (raw.size() < 2) return out;
  const auto [lo, hi] = std::minmax_element(raw.begin(), raw.end());
  if (*hi - *lo <= 0.0) return out;
  for (std::size_t k = 0; k < raw.size(); ++k) out[k] = (raw[k] - *lo) / (*hi - *lo);
  return out;
}

std::vector<double> occlusion_scores(std::span<const Scenario> scenarios) {
  std::vector<double> raw;
  for (const auto& s : scenarios) raw.push_back(occlusion_raw(s));
  return rescale(raw);
}

std::vector<double> displacement_scores(std::span<const Scenario> scenarios) {
  std::vector<double> raw;
  for (const auto& s : scenarios) raw.push_back(displacement_raw(s));
  return rescale(raw);
}

std::vector<double> combined_scores(std::span<const Scenario> scenarios) {
  const auto occ = occlusion_scores(scenarios);
  const auto disp = displacement_scores(scenarios);
  std::vector<double> out(occ.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = std::max(occ[k], disp[k]);
  return out;
}

double median(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("median: empty input");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<Difficulty> median_split(std::span<const double> scores) {
  std::vector<Difficulty> out;
  if (scores.empty()) return out;
  const double m = median(scores);
  for (double s : scores) out.push_back(s <= m ? Difficulty::kEasy : Difficulty::kHard);
  return out;
}

std::vector<Difficulty> three_way_split(std::span<const double> scores) {
  std::vector<Difficulty> out;
  if (scores.empty()) return out;
  const double m = median(scores);
  const double mean = std::accumulate(scores.begin(), scores.end(), 0.0) / scores.size();
  double var = 0.0;
  for (double s : scores) var += (s - mean) * (s - mean);
  const double half_sd = 0.5 * std::sqrt(var / scores.size());
  for (double s : scores) {
    if (s < m - half_sd) {
      out.push_back(Difficulty::kEasy);
    } else if (s > m + half_sd) {
      out.push_back(Difficulty::kHard);
    } else {
      out.push_back(Difficulty::kModerate);
    }
  }
  return out;
}

}  // namespace deft::sim
