// motion.hpp: motion features, LSTM forecaster, constant-velocity Kalman filter
// and the plausibility gate built on their predictions.
#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "deft/core.hpp"

namespace deft {

/// 8 for 2D (x, y, w, h, vx, vy, dw/dt, dh/dt), 11 for 3D
/// (x, y, z, w, h, l, r, vx, vy, vz, vr).
int feature_dim(Mode mode);
/// Center coordinates predicted by the forecaster: 2 (2D) or 3 (3D).
int position_dim(Mode mode);

/// One feature row per step, oldest first, exactly `past_window` rows. Velocities
/// are differences over the frame gap to the previous observation (zero for the
/// first one). Short histories are front-padded by repeating the earliest row.
Eigen::MatrixXd build_features(std::span<const Observation> memory, Mode mode, int past_window);

struct LstmParams {
  Mode mode = Mode::k2D;
  int horizon = 1;
  Eigen::MatrixXd w_input;   // 4H x D, gate order i, f, g, o
  Eigen::MatrixXd w_hidden;  // 4H x H
  Eigen::VectorXd bias;      // 4H
  Eigen::MatrixXd w_out;     // horizon*P x H
  Eigen::VectorXd b_out;     // horizon*P
  // Fixed input normalisation: positions are taken relative to the last
  // observation, then every column is divided by its scale.
  Eigen::VectorXd input_scale;  // D
  double output_scale = 1.0;    // offsets are predicted in these units

  int hidden() const { return static_cast<int>(w_hidden.cols()); }
  int input_dim() const { return static_cast<int>(w_input.cols()); }
  void check() const;

  std::vector<std::span<double>> tensors();
  std::vector<std::span<const double>> tensors() const;
  static LstmParams zeros_like(const LstmParams& other);
};

LstmParams init_lstm(Mode mode, int hidden, int horizon, std::uint64_t seed);
/// All learnable tensors zero; scales set to the mode defaults.
LstmParams zero_lstm(Mode mode, int hidden, int horizon);

/// Predicted centers for the next `horizon` frames (horizon x P), each the last
/// observed center plus a learned offset.
Eigen::MatrixXd lstm_forward(const Eigen::MatrixXd& features, const LstmParams& params);

struct MotionSample {
  Eigen::MatrixXd features;  // past_window x D
  Eigen::MatrixXd target;    // horizon x P absolute future centers
};

struct LstmLoss {
  double loss = 0.0;
  LstmParams grad;
};

/// Mean smooth-L1 loss over (prediction - target) / output_scale and its gradient.
LstmLoss lstm_loss_and_grad(std::span<const MotionSample> batch, const LstmParams& params);

/// One plain gradient-descent step. Returns the loss before the step.
/// Throws std::runtime_error (leaving params untouched) on a non-finite loss.
double lstm_train_step(std::span<const MotionSample> batch, LstmParams& params, double lr);

struct LstmTrainOptions {
  int epochs = 30;
  int batch_size = 16;
  double lr = 3e-3;
  std::uint64_t seed = 7;
};

/// Adam over shuffled mini-batches. Returns the mean training loss per epoch.
std::vector<double> train_lstm(std::span<const MotionSample> samples, LstmParams& params,
                               const LstmTrainOptions& options);

/// Supervision samples from a dense per-frame trajectory (frame -> box).
std::vector<MotionSample> motion_samples(const std::map<int, Box>& trajectory, Mode mode,
                                         int past_window, int horizon);

/// Boxes for the next `horizon` frames: LSTM centers, extents from the last observation.
std::vector<Box> forecast_boxes(std::span<const Observation> memory, const LstmParams& params,
                                int past_window);

// --- Constant-velocity Kalman filter ------------------------------------------

struct KalmanNoise {
  double process = 1.0;
  double measurement = 1.0;
  double initial_velocity = 100.0;
};

/// State is (position..., velocity...) with positions cx, cy, w, h (2D) or
/// cx, cy, cz, w, h, l, yaw (3D).
struct KalmanState {
  Mode mode = Mode::k2D;
  Eigen::VectorXd x;
  Eigen::MatrixXd p;
  int frame = 0;
};

KalmanState kalman_init(const Box& box, int frame, const KalmanNoise& noise);
KalmanState kalman_predict(const KalmanState& state, int steps, const KalmanNoise& noise);
KalmanState kalman_update(const KalmanState& state, const Box& measurement,
                          const KalmanNoise& noise);
Box kalman_box(const KalmanState& state);

struct KalmanStep {
  KalmanState state;
  Box predicted;  // prior box for the new frame
};

/// Advances one frame, then fuses `detection` when present.
KalmanStep kalman_predict_update(const KalmanState& state, const std::optional<Box>& detection,
                                 const KalmanNoise& noise);

// --- Forecasters used by the associator ---------------------------------------

/// True when a detection is implausible for a predicted box: no overlap and the
/// center lies farther than half the predicted diagonal.
bool gate_blocks(const Box& predicted, const Box& detection);

class MotionForecaster {
 public:
  virtual ~MotionForecaster() = default;
  /// Predicted box of `track` at `frame`, or nullopt when no forecast is available.
  virtual std::optional<Box> predict(const Track& track, int frame) const = 0;
  virtual void on_associated(const Track& /*track*/) {}
  virtual void on_born(const Track& /*track*/) {}
  virtual void on_removed(int /*track_id*/) {}
};

class NoMotion final : public MotionForecaster {
 public:
  std::optional<Box> predict(const Track&, int) const override { return std::nullopt; }
};

class LstmForecaster final : public MotionForecaster {
 public:
  LstmForecaster(LstmParams params, int past_window);
  std::optional<Box> predict(const Track& track, int frame) const override;

 private:
  LstmParams params_;
  int past_window_;
};

class KalmanForecaster final : public MotionForecaster {
 public:
  KalmanForecaster(KalmanNoise noise, int horizon);
  std::optional<Box> predict(const Track& track, int frame) const override;
  void on_associated(const Track& track) override;
  void on_born(const Track& track) override;
  void on_removed(int track_id) override;

 private:
  KalmanNoise noise_;
  int horizon_;
  std::map<int, KalmanState> states_;
};

/// Forecaster selected by config.motion_model. `lstm` is required for kLstm.
std::unique_ptr<MotionForecaster> make_forecaster(const TrackerConfig& config,
                                                  const LstmParams* lstm);

}  // namespace deft
