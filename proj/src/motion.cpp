#include "deft/motion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>

#include "deft/optim.hpp"

namespace deft {

int feature_dim(Mode mode) { return mode == Mode::k2D ? 8 : 11; }
int position_dim(Mode mode) { return mode == Mode::k2D ? 2 : 3; }

namespace {

// Raw (x, y, w, h) or (x, y, z, w, h, l, r) of a box.
Eigen::VectorXd box_state(const Box& box) {
  if (const auto* b = std::get_if<BBox2D>(&box)) {
    Eigen::VectorXd s(4);
    s << b->cx, b->cy, b->w, b->h;
    return s;
  }
  const auto& b = std::get<BBox3D>(box);
  Eigen::VectorXd s(7);
  s << b.cx, b.cy, b.cz, b.w, b.h, b.l, normalize_angle(b.yaw);
  return s;
}

Box box_from_state(const Eigen::VectorXd& s, Mode mode) {
  constexpr double kMinExtent = 1e-3;
  if (mode == Mode::k2D) {
    return BBox2D{s[0], s[1], std::max(s[2], kMinExtent), std::max(s[3], kMinExtent)};
  }
  return BBox3D{s[0], s[1], s[2], std::max(s[3], kMinExtent), std::max(s[4], kMinExtent),
                std::max(s[5], kMinExtent), normalize_angle(s[6])};
}

Eigen::VectorXd feature_row(const Observation& obs, const Observation* prev, Mode mode) {
  const Eigen::VectorXd s = box_state(obs.box);
  Eigen::VectorXd f = Eigen::VectorXd::Zero(feature_dim(mode));
  if (mode == Mode::k2D) {
    f.head(4) = s;
    if (prev != nullptr) {
      const double dt = obs.frame - prev->frame;
      const Eigen::VectorXd d = (s - box_state(prev->box)) / dt;
      f.tail(4) = d;  // vx, vy, dw/dt, dh/dt
    }
  } else {
    f.head(7) = s;
    if (prev != nullptr) {
      const double dt = obs.frame - prev->frame;
      const Eigen::VectorXd p = box_state(prev->box);
      f[7] = (s[0] - p[0]) / dt;
      f[8] = (s[1] - p[1]) / dt;
      f[9] = (s[2] - p[2]) / dt;
      f[10] = normalize_angle(s[6] - p[6]) / dt;
    }
  }
  return f;
}

Eigen::VectorXd default_input_scale(Mode mode) {
  Eigen::VectorXd s(feature_dim(mode));
  if (mode == Mode::k2D) {
    s << 50, 50, 100, 100, 10, 10, 10, 10;
  } else {
    s << 10, 10, 10, 5, 5, 5, std::numbers::pi, 2, 2, 2, 1;
  }
  return s;
}

double default_output_scale(Mode mode) { return mode == Mode::k2D ? 10.0 : 2.0; }

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct LstmTrace {
  std::vector<Eigen::VectorXd> x, i, f, g, o, c, h;  // h[0], c[0] are the zero initial state
  Eigen::VectorXd y;
};

Eigen::MatrixXd normalize_input(const Eigen::MatrixXd& features, const LstmParams& params) {
  const int p = position_dim(params.mode);
  Eigen::MatrixXd x = features;
  const Eigen::RowVectorXd last = features.row(features.rows() - 1);
  for (Eigen::Index t = 0; t < x.rows(); ++t) {
    x.row(t).head(p) -= last.head(p);
  }
  for (Eigen::Index k = 0; k < x.cols(); ++k) x.col(k) /= params.input_scale[k];
  return x;
}

LstmTrace run_lstm(const Eigen::MatrixXd& features, const LstmParams& params) {
  if (features.rows() == 0 || features.cols() != params.input_dim()) {
    throw std::invalid_argument("lstm: feature dim " + std::to_string(features.cols()) +
                                " does not match params " + std::to_string(params.input_dim()));
  }
  const int hd = params.hidden();
  const Eigen::MatrixXd x = normalize_input(features, params);
  LstmTrace tr;
  tr.h.push_back(Eigen::VectorXd::Zero(hd));
  tr.c.push_back(Eigen::VectorXd::Zero(hd));
  for (Eigen::Index t = 0; t < x.rows(); ++t) {
    const Eigen::VectorXd xt = x.row(t).transpose();
    const Eigen::VectorXd z = params.w_input * xt + params.w_hidden * tr.h.back() + params.bias;
    Eigen::VectorXd i = z.segment(0, hd).unaryExpr(&sigmoid);
    Eigen::VectorXd f = z.segment(hd, hd).unaryExpr(&sigmoid);
    Eigen::VectorXd g = z.segment(2 * hd, hd).array().tanh();
    Eigen::VectorXd o = z.segment(3 * hd, hd).unaryExpr(&sigmoid);
    Eigen::VectorXd c = f.cwiseProduct(tr.c.back()) + i.cwiseProduct(g);
    Eigen::VectorXd h = o.cwiseProduct(c.array().tanh().matrix());
    tr.x.push_back(xt);
    tr.i.push_back(std::move(i));
    tr.f.push_back(std::move(f));
    tr.g.push_back(std::move(g));
    tr.o.push_back(std::move(o));
    tr.c.push_back(std::move(c));
    tr.h.push_back(std::move(h));
  }
  tr.y = params.w_out * tr.h.back() + params.b_out;
  return tr;
}

Eigen::MatrixXd centers_from_output(const Eigen::VectorXd& y, const Eigen::MatrixXd& features,
                                    const LstmParams& params) {
  const int p = position_dim(params.mode);
  Eigen::MatrixXd centers(params.horizon, p);
  const Eigen::RowVectorXd last = features.row(features.rows() - 1);
  for (int k = 0; k < params.horizon; ++k) {
    for (int d = 0; d < p; ++d) centers(k, d) = last[d] + params.output_scale * y[k * p + d];
  }
  return centers;
}

}  // namespace

Eigen::MatrixXd build_features(std::span<const Observation> memory, Mode mode, int past_window) {
  if (memory.empty()) throw std::invalid_argument("build_features: empty memory");
  if (past_window < 1) throw std::invalid_argument("build_features: past_window < 1");
  for (const auto& obs : memory) {
    if (box_mode(obs.box) != mode) throw std::invalid_argument("build_features: box kind mismatch");
  }
  const int n = static_cast<int>(memory.size());
  const int used = std::min(n, past_window);
  Eigen::MatrixXd out(past_window, feature_dim(mode));
  const int pad = past_window - used;
  for (int k = 0; k < used; ++k) {
    const int idx = n - used + k;
    const Observation* prev = idx > 0 ? &memory[idx - 1] : nullptr;
    out.row(pad + k) = feature_row(memory[idx], prev, mode).transpose();
  }
  for (int k = 0; k < pad; ++k) out.row(k) = out.row(pad);
  return out;
}

void LstmParams::check() const {
  const int d = feature_dim(mode);
  const int hd = hidden();
  const int p = position_dim(mode);
  if (hd < 1 || horizon < 1) throw std::invalid_argument("lstm: hidden and horizon must be >= 1");
  if (w_input.rows() != 4 * hd || w_input.cols() != d || w_hidden.rows() != 4 * hd ||
      bias.size() != 4 * hd || w_out.rows() != horizon * p || w_out.cols() != hd ||
      b_out.size() != horizon * p || input_scale.size() != d) {
    throw std::invalid_argument("lstm: inconsistent parameter dimensions");
  }
  if (!w_input.allFinite() || !w_hidden.allFinite() || !bias.allFinite() || !w_out.allFinite() ||
      !b_out.allFinite() || !input_scale.allFinite() || !std::isfinite(output_scale)) {
    throw std::invalid_argument("lstm: non-finite parameters");
  }
  if ((input_scale.array() <= 0.0).any() || output_scale <= 0.0) {
    throw std::invalid_argument("lstm: scales must be positive");
  }
}

std::vector<std::span<double>> LstmParams::tensors() {
  auto span_of = [](auto& m) {
    return std::span<double>(m.data(), static_cast<std::size_t>(m.size()));
  };
  return {span_of(w_input), span_of(w_hidden), span_of(bias), span_of(w_out), span_of(b_out)};
}

std::vector<std::span<const double>> LstmParams::tensors() const {
  auto span_of = [](const auto& m) {
    return std::span<const double>(m.data(), static_cast<std::size_t>(m.size()));
  };
  return {span_of(w_input), span_of(w_hidden), span_of(bias), span_of(w_out), span_of(b_out)};
}

LstmParams LstmParams::zeros_like(const LstmParams& other) {
  LstmParams z = other;
  z.w_input.setZero();
  z.w_hidden.setZero();
  z.bias.setZero();
  z.w_out.setZero();
  z.b_out.setZero();
  return z;
}

LstmParams zero_lstm(Mode mode, int hidden, int horizon) {
  if (hidden < 1 || horizon < 1) throw std::invalid_argument("lstm: hidden and horizon >= 1");
  const int d = feature_dim(mode);
  const int p = position_dim(mode);
  LstmParams params;
  params.mode = mode;
  params.horizon = horizon;
  params.w_input = Eigen::MatrixXd::Zero(4 * hidden, d);
  params.w_hidden = Eigen::MatrixXd::Zero(4 * hidden, hidden);
  params.bias = Eigen::VectorXd::Zero(4 * hidden);
  params.w_out = Eigen::MatrixXd::Zero(horizon * p, hidden);
  params.b_out = Eigen::VectorXd::Zero(horizon * p);
  params.input_scale = default_input_scale(mode);
  params.output_scale = default_output_scale(mode);
  return params;
}

LstmParams init_lstm(Mode mode, int hidden, int horizon, std::uint64_t seed) {
  LstmParams params = zero_lstm(mode, hidden, horizon);
  std::mt19937_64 rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  std::uniform_real_distribution<double> dist(-bound, bound);
  auto fill = [&](Eigen::MatrixXd& m) {
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = dist(rng);
  };
  fill(params.w_input);
  fill(params.w_hidden);
  fill(params.w_out);
  params.w_out *= 0.1;
  // Forget gate bias of 1 keeps early gradients alive through time.
  params.bias.segment(hidden, hidden).setOnes();
  return params;
}

Eigen::MatrixXd lstm_forward(const Eigen::MatrixXd& features, const LstmParams& params) {
  // The run_lstm recurrence without keeping the trace.
  if (features.rows() == 0 || features.cols() != params.input_dim()) {
    throw std::invalid_argument("lstm: feature dim " + std::to_string(features.cols()) +
                                " does not match params " + std::to_string(params.input_dim()));
  }
  const int hd = params.hidden();
  const Eigen::MatrixXd x = normalize_input(features, params);
  Eigen::VectorXd h = Eigen::VectorXd::Zero(hd);
  Eigen::VectorXd c = Eigen::VectorXd::Zero(hd);
  Eigen::VectorXd z(4 * hd);
  for (Eigen::Index t = 0; t < x.rows(); ++t) {
    z = params.w_input * x.row(t).transpose() + params.w_hidden * h + params.bias;
    for (int k = 0; k < hd; ++k) {
      const double i = sigmoid(z[k]);
      const double f = sigmoid(z[hd + k]);
      const double g = std::tanh(z[2 * hd + k]);
      const double o = sigmoid(z[3 * hd + k]);
      c[k] = f * c[k] + i * g;
      h[k] = o * std::tanh(c[k]);
    }
  }
  const Eigen::VectorXd y = params.w_out * h + params.b_out;
  return centers_from_output(y, features, params);
}

LstmLoss lstm_loss_and_grad(std::span<const MotionSample> batch, const LstmParams& params) {
  if (batch.empty()) throw std::invalid_argument("lstm_loss_and_grad: empty batch");
  const int hd = params.hidden();
  const int p = position_dim(params.mode);
  const double n_terms = static_cast<double>(batch.size()) * params.horizon * p;

  LstmLoss out{0.0, LstmParams::zeros_like(params)};
  auto& g = out.grad;
  for (const auto& sample : batch) {
    if (sample.target.rows() != params.horizon || sample.target.cols() != p) {
      throw std::invalid_argument("lstm_loss_and_grad: target shape mismatch");
    }
    const auto tr = run_lstm(sample.features, params);
    const Eigen::MatrixXd pred = centers_from_output(tr.y, sample.features, params);

    Eigen::VectorXd dy(params.horizon * p);
    for (int k = 0; k < params.horizon; ++k) {
      for (int d = 0; d < p; ++d) {
        const double r = (pred(k, d) - sample.target(k, d)) / params.output_scale;
        const double a = std::abs(r);
        out.loss += (a < 1.0 ? 0.5 * r * r : a - 0.5) / n_terms;
        // d r / d y = 1 since pred = last + scale * y.
        dy[k * p + d] = (a < 1.0 ? r : (r > 0 ? 1.0 : -1.0)) / n_terms;
      }
    }

    g.w_out += dy * tr.h.back().transpose();
    g.b_out += dy;
    Eigen::VectorXd dh = params.w_out.transpose() * dy;
    Eigen::VectorXd dc = Eigen::VectorXd::Zero(hd);
    for (int t = static_cast<int>(tr.x.size()) - 1; t >= 0; --t) {
      const auto& i = tr.i[t];
      const auto& f = tr.f[t];
      const auto& gg = tr.g[t];
      const auto& o = tr.o[t];
      const Eigen::ArrayXd tc = tr.c[t + 1].array().tanh();
      const Eigen::ArrayXd d_o = dh.array() * tc;
      dc.array() += dh.array() * o.array() * (1.0 - tc * tc);
      Eigen::VectorXd dz(4 * hd);
      dz.segment(0, hd) = (dc.array() * gg.array() * i.array() * (1.0 - i.array())).matrix();
      dz.segment(hd, hd) = (dc.array() * tr.c[t].array() * f.array() * (1.0 - f.array())).matrix();
      dz.segment(2 * hd, hd) = (dc.array() * i.array() * (1.0 - gg.array() * gg.array())).matrix();
      dz.segment(3 * hd, hd) = (d_o * o.array() * (1.0 - o.array())).matrix();
      g.w_input += dz * tr.x[t].transpose();
      g.w_hidden += dz * tr.h[t].transpose();
      g.bias += dz;
      dh = params.w_hidden.transpose() * dz;
      dc = (dc.array() * f.array()).matrix();
    }
  }
  return out;
}

double lstm_train_step(std::span<const MotionSample> batch, LstmParams& params, double lr) {
  const auto res = lstm_loss_and_grad(batch, params);
  if (!std::isfinite(res.loss)) throw std::runtime_error("lstm_train_step: non-finite loss");
  if (lr != 0.0) {
    auto ps = params.tensors();
    const auto gs = res.grad.tensors();
    for (std::size_t k = 0; k < ps.size(); ++k) {
      for (std::size_t n = 0; n < ps[k].size(); ++n) ps[k][n] -= lr * gs[k][n];
    }
  }
  return res.loss;
}

std::vector<double> train_lstm(std::span<const MotionSample> samples, LstmParams& params,
                               const LstmTrainOptions& options) {
  params.check();
  std::vector<double> curve;
  if (samples.empty() || options.epochs <= 0) return curve;
  std::mt19937_64 rng(options.seed);
  Adam adam(options.lr);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  const auto bs = static_cast<std::size_t>(std::max(1, options.batch_size));
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      std::vector<MotionSample> batch;
      for (std::size_t k = start; k < std::min(order.size(), start + bs); ++k) {
        batch.push_back(samples[order[k]]);
      }
      const auto res = lstm_loss_and_grad(batch, params);
      if (!std::isfinite(res.loss)) throw std::runtime_error("train_lstm: non-finite loss");
      adam.step(params.tensors(), res.grad.tensors());
      total += res.loss;
      ++n_batches;
    }
    curve.push_back(total / static_cast<double>(n_batches));
  }
  return curve;
}

std::vector<MotionSample> motion_samples(const std::map<int, Box>& trajectory, Mode mode,
                                         int past_window, int horizon) {
  std::vector<MotionSample> out;
  std::vector<Observation> obs;
  const int p = position_dim(mode);
  for (const auto& [frame, box] : trajectory) obs.push_back({frame, box, {}});
  for (std::size_t t = 0; t < obs.size(); ++t) {
    if (t + horizon >= obs.size()) break;
    // Targets must be the next `horizon` consecutive frames.
    bool dense = true;
    for (int k = 1; k <= horizon; ++k) {
      if (obs[t + k].frame != obs[t].frame + k) dense = false;
    }
    if (!dense) continue;
    const std::size_t first = t + 1 > static_cast<std::size_t>(past_window + 1)
                                  ? t + 1 - static_cast<std::size_t>(past_window + 1)
                                  : 0;
    std::span<const Observation> memory(obs.data() + first, t + 1 - first);
    MotionSample sample;
    sample.features = build_features(memory, mode, past_window);
    sample.target.resize(horizon, p);
    for (int k = 1; k <= horizon; ++k) {
      sample.target.row(k - 1) = box_state(obs[t + k].box).head(p).transpose();
    }
    out.push_back(std::move(sample));
  }
  return out;
}

std::vector<Box> forecast_boxes(std::span<const Observation> memory, const LstmParams& params,
                                int past_window) {
  const auto features = build_features(memory, params.mode, past_window);
  const Eigen::MatrixXd centers = lstm_forward(features, params);
  const Eigen::VectorXd last = box_state(memory.back().box);
  std::vector<Box> out;
  for (int k = 0; k < params.horizon; ++k) {
    Eigen::VectorXd s = last;
    s.head(position_dim(params.mode)) = centers.row(k).transpose();
    out.push_back(box_from_state(s, params.mode));
  }
  return out;
}

// --- Kalman -------------------------------------------------------------------

namespace {

Eigen::MatrixXd transition(int d) {
  Eigen::MatrixXd f = Eigen::MatrixXd::Identity(2 * d, 2 * d);
  f.topRightCorner(d, d) = Eigen::MatrixXd::Identity(d, d);
  return f;
}

Eigen::MatrixXd process_cov(int d, double q) {
  Eigen::MatrixXd m(2 * d, 2 * d);
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(d, d);
  m << id / 3.0, id / 2.0, id / 2.0, id;
  return q * m;
}

void symmetrize(Eigen::MatrixXd& p) { p = 0.5 * (p + p.transpose()); }

}  // namespace

KalmanState kalman_init(const Box& box, int frame, const KalmanNoise& noise) {
  const Eigen::VectorXd z = box_state(box);
  const auto d = z.size();
  KalmanState s;
  s.mode = box_mode(box);
  s.frame = frame;
  s.x = Eigen::VectorXd::Zero(2 * d);
  s.x.head(d) = z;
  s.p = Eigen::MatrixXd::Zero(2 * d, 2 * d);
  s.p.topLeftCorner(d, d).diagonal().setConstant(noise.measurement);
  s.p.bottomRightCorner(d, d).diagonal().setConstant(noise.initial_velocity);
  return s;
}

KalmanState kalman_predict(const KalmanState& state, int steps, const KalmanNoise& noise) {
  if (steps < 0) throw std::invalid_argument("kalman_predict: negative steps");
  const int d = static_cast<int>(state.x.size() / 2);
  const Eigen::MatrixXd f = transition(d);
  const Eigen::MatrixXd q = process_cov(d, noise.process);
  KalmanState s = state;
  for (int k = 0; k < steps; ++k) {
    s.x = f * s.x;
    s.p = f * s.p * f.transpose() + q;
    symmetrize(s.p);
  }
  if (s.mode == Mode::k3D) s.x[6] = normalize_angle(s.x[6]);
  s.frame = state.frame + steps;
  return s;
}

KalmanState kalman_update(const KalmanState& state, const Box& measurement,
                          const KalmanNoise& noise) {
  if (box_mode(measurement) != state.mode) throw std::invalid_argument("kalman_update: box kind");
  const Eigen::VectorXd z = box_state(measurement);
  const auto d = z.size();
  const auto n = 2 * d;
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(d, n);
  h.leftCols(d) = Eigen::MatrixXd::Identity(d, d);
  const Eigen::MatrixXd r = noise.measurement * Eigen::MatrixXd::Identity(d, d);

  Eigen::VectorXd innovation = z - h * state.x;
  if (state.mode == Mode::k3D) innovation[6] = normalize_angle(innovation[6]);
  const Eigen::MatrixXd s = h * state.p * h.transpose() + r;
  const Eigen::MatrixXd k = state.p * h.transpose() * s.completeOrthogonalDecomposition().pseudoInverse();

  KalmanState out = state;
  out.x = state.x + k * innovation;
  if (out.mode == Mode::k3D) out.x[6] = normalize_angle(out.x[6]);
  // Joseph form keeps the covariance symmetric positive semi-definite.
  const Eigen::MatrixXd ikh = Eigen::MatrixXd::Identity(n, n) - k * h;
  out.p = ikh * state.p * ikh.transpose() + k * r * k.transpose();
  symmetrize(out.p);
  return out;
}

Box kalman_box(const KalmanState& state) {
  return box_from_state(state.x.head(state.x.size() / 2), state.mode);
}

KalmanStep kalman_predict_update(const KalmanState& state, const std::optional<Box>& detection,
                                 const KalmanNoise& noise) {
  KalmanStep step{kalman_predict(state, 1, noise), {}};
  step.predicted = kalman_box(step.state);
  if (detection) step.state = kalman_update(step.state, *detection, noise);
  return step;
}

// --- Gate and forecasters -----------------------------------------------------

bool gate_blocks(const Box& predicted, const Box& detection) {
  if (iou(predicted, detection) > 0.0) return false;
  return center_distance(predicted, detection) > half_diagonal(predicted);
}

LstmForecaster::LstmForecaster(LstmParams params, int past_window)
    : params_(std::move(params)), past_window_(past_window) {
  params_.check();
}

std::optional<Box> LstmForecaster::predict(const Track& track, int frame) const {
  const int steps = frame - track.last().frame;
  if (steps < 1 || steps > params_.horizon) return std::nullopt;
  return forecast_boxes(track.memory, params_, past_window_)[steps - 1];
}

KalmanForecaster::KalmanForecaster(KalmanNoise noise, int horizon)
    : noise_(noise), horizon_(horizon) {}

std::optional<Box> KalmanForecaster::predict(const Track& track, int frame) const {
  const auto it = states_.find(track.id);
  if (it == states_.end()) return std::nullopt;
  const int steps = frame - track.last().frame;
  if (steps < 1 || steps > horizon_) return std::nullopt;
  return kalman_box(kalman_predict(it->second, frame - it->second.frame, noise_));
}

void KalmanForecaster::on_associated(const Track& track) {
  auto it = states_.find(track.id);
  if (it == states_.end()) {
    on_born(track);
    return;
  }
  const auto& obs = track.last();
  it->second = kalman_update(kalman_predict(it->second, obs.frame - it->second.frame, noise_),
                             obs.box, noise_);
}

void KalmanForecaster::on_born(const Track& track) {
  states_[track.id] = kalman_init(track.last().box, track.last().frame, noise_);
}

void KalmanForecaster::on_removed(int track_id) { states_.erase(track_id); }

std::unique_ptr<MotionForecaster> make_forecaster(const TrackerConfig& config,
                                                  const LstmParams* lstm) {
  switch (config.motion_model) {
    case MotionModelKind::kNone:
      return std::make_unique<NoMotion>();
    case MotionModelKind::kKalman:
      return std::make_unique<KalmanForecaster>(
          KalmanNoise{config.kalman_process_noise, config.kalman_measurement_noise, 100.0},
          config.pred_horizon);
    case MotionModelKind::kLstm:
      if (lstm == nullptr) throw std::invalid_argument("lstm motion model requires parameters");
      if (lstm->mode != config.mode) throw std::invalid_argument("lstm params mode mismatch");
      return std::make_unique<LstmForecaster>(*lstm, config.past_window);
  }
  return std::make_unique<NoMotion>();
}

}  // namespace deft
