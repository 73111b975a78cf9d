#pragma once

// Closed-loop orchestration: scenario files, controllers, the
// plant/estimator/detector/attacker loop, success evaluation and export.

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cpsa/attack.hpp"
#include "cpsa/detection.hpp"
#include "cpsa/estimation.hpp"
#include "cpsa/models.hpp"

namespace cpsa {

// ---- controllers ----------------------------------------------------------

/// u_t = pi(x_hat_t). Controllers only ever see the estimate.
class Controller {
 public:
  virtual ~Controller() = default;
  [[nodiscard]] virtual std::string id() const = 0;
  [[nodiscard]] virtual VectorXd control(const VectorXd& x_hat, long t) const = 0;
};

/// u = -K x_hat.
class StateFeedback final : public Controller {
 public:
  explicit StateFeedback(MatrixXd K) : K_(std::move(K)) {}
  [[nodiscard]] std::string id() const override { return "state_feedback"; }
  [[nodiscard]] VectorXd control(const VectorXd& x_hat, long t) const override;

 private:
  MatrixXd K_;
};

/// Road centre line Y = r(X). Straight: r = 0. Curvy: r = A sin(2 pi X / wavelength).
struct Road {
  enum class Shape { Straight, Curvy } shape = Shape::Straight;
  double amplitude = 5.0;
  double wavelength = 200.0;

  [[nodiscard]] double lateral(double X) const;
  [[nodiscard]] double slope(double X) const;
  [[nodiscard]] double curvature(double X) const;
};

/// Lane keeping for the bicycle model. Steering from lateral and heading
/// error plus a curvature feedforward, clamped to +-max_steer; acceleration
/// is a proportional speed loop.
///   steer = atan(wheelbase * kappa) - k_lat * e_lat - k_head * e_head
///   accel = k_speed * (speed - v)
class LaneKeeping final : public Controller {
 public:
  struct Gains {
    double k_lat = 2.0;
    double k_head = 2.0;
    double k_speed = 1.0;
    double max_steer = 0.5;
  };
  LaneKeeping(Road road, double speed, double wheelbase, Gains gains);
  [[nodiscard]] std::string id() const override { return "lane_keeping"; }
  [[nodiscard]] VectorXd control(const VectorXd& x_hat, long t) const override;
  [[nodiscard]] const Road& road() const { return road_; }

 private:
  Road road_;
  double speed_;
  double wheelbase_;
  Gains gains_;
};

/// Cascaded quadrotor control: PD on altitude gives thrust, PD on the
/// horizontal position gives desired roll/pitch, PD on attitude gives the
/// torques. The altitude reference is either a constant or the ramp
/// Z(t) = climb_rate * t (t in seconds).
class QuadrotorTracker final : public Controller {
 public:
  enum class Reference { Altitude, Ramp };
  struct Gains {
    double kp_z = 16.0, kd_z = 8.0;
    double kp_xy = 1.0, kd_xy = 2.0;
    double kp_att = 16.0, kd_att = 8.0;
    double max_tilt = 0.3;
    double max_vertical_accel = 5.0;
  };
  QuadrotorTracker(QuadrotorModel::Constants c, double dt, Reference ref,
                   double altitude, double climb_rate, Gains gains);
  [[nodiscard]] std::string id() const override { return "quadrotor"; }
  [[nodiscard]] VectorXd control(const VectorXd& x_hat, long t) const override;
  [[nodiscard]] double altitude_reference(long t) const;

 private:
  QuadrotorModel::Constants c_;
  double dt_;
  Reference ref_;
  double altitude_;
  double climb_rate_;
  Gains gains_;
};

// ---- scenarios ------------------------------------------------------------

enum class AttackKind { None, Theorem1, Fnn, Dfnn };

std::string to_string(AttackKind kind);

struct Scenario {
  // model.*
  std::string model_type = "lti";  // lti | vehicle | quadrotor
  double Q_scale = 0.01;
  double R_scale = 1.0;
  double dt = 1.0;
  LtiMatrices lti;
  VectorXd x0;

  // controller.*
  MatrixXd K;  // state feedback gain (lti)
  Road road;
  double speed = 10.0;
  LaneKeeping::Gains lane_gains;
  QuadrotorTracker::Reference reference = QuadrotorTracker::Reference::Altitude;
  double altitude = 20.0;
  double climb_rate = 0.2;

  // detector.*
  double epsilon = 0.05;

  // attack.*
  AttackKind attack = AttackKind::None;
  std::vector<int> support;  // 0-based; empty means every sensor
  long t0 = 0;
  double phi_scale = 0.5;

  // train.*
  TrainingConfig train;
  std::vector<int> hidden{15, 15};
  int latent = 3;
  InputFrame frame = InputFrame::Relative;
  double init_scale = 1.0;
  std::uint64_t train_seed_offset = 1000003;

  // run.*
  std::uint64_t seed = 1;
  long duration = 100;  // attacked steps after t0
  double alpha = 1.0;
  bool log_covariance = false;

  // estimator.*
  double x0_sigma = 0.1;
  double P0_scale = 1.0;
  GainForm gain_form = GainForm::Filter;

  /// Sets one dotted key; throws ConfigError naming the key on bad input.
  void set(const std::string& key, const std::string& value);
  /// Cross-field checks; throws ConfigError with the offending field path.
  void validate() const;
  [[nodiscard]] long total_steps() const { return t0 + duration; }
};

/// Flat "key = value" text with '#' comments. model.type is applied first
/// so that per-model defaults can be overridden by later keys.
Scenario parse_scenario(std::string_view text);
Scenario load_scenario(const std::string& path);

ModelPtr build_model(const Scenario& s);
std::unique_ptr<Controller> build_controller(const Scenario& s,
                                             const PlantModel& model);
SensorSupport build_support(const Scenario& s, const PlantModel& model);

// ---- records --------------------------------------------------------------

struct StepRow {
  long t = 0;
  VectorXd x, x_hat, x_pred, u, y, a, y_c, z;
  double g = 0.0;
  bool alarm = false;
  MatrixXd S;  // only when covariance logging is on
};

struct SuccessReport {
  double max_error = 0.0;
  std::optional<long> first_crossing;
  double alarm_rate_before = 0.0;
  double alarm_rate_after = 0.0;
  std::size_t attacked_steps = 0;
  double allowance = 0.0;
  bool error_reached = false;
  bool stealthy = false;
  bool success = false;
};

struct RunRecord {
  std::string model_id;
  int n = 0, m = 0, p = 0;
  double dt = 1.0;
  long t0 = 0;
  double epsilon = 0.05;
  double eta = 0.0;
  double alpha = 0.0;
  bool log_covariance = false;
  std::vector<StepRow> rows;
  bool escaped = false;  // the run stopped early on a numeric failure
  std::string escape_message;
  SuccessReport summary;
};

/// Error reached: some t >= t0 with ||x_t - x_hat_t|| >= alpha. Stealthy:
/// alarm rate over [t0, end] <= epsilon + one-sided 95% binomial allowance.
SuccessReport evaluate_success(const RunRecord& rec, double alpha, double epsilon);

// ---- runs -----------------------------------------------------------------

/// Runs the loop for s.total_steps() steps with the given attacker (may be
/// null) active from t0, seeded by `seed`.
RunRecord simulate(const Scenario& s, const PlantModel& model,
                   const Controller& controller, Attacker* attacker,
                   std::uint64_t seed);

/// Builds the attacker for s.attack. Neural attackers are created untrained
/// and train online for the first train.T attacked steps unless `frozen`
/// supplies parameters.
std::unique_ptr<Attacker> make_attacker(const Scenario& s, const PlantModel& model,
                                        const GeneratorArtifact* frozen = nullptr);

/// Everything from the scenario with run.seed.
RunRecord run_scenario(const Scenario& s);

struct TrainingResult {
  GeneratorArtifact artifact;
  RunRecord record;  // the training run (t0 + train.T steps)
  TrainingLog log;
};

/// Online training (interleaved with the closed loop) on the training seed
/// run.seed + train_seed_offset.
TrainingResult train_generator(const Scenario& s);

/// Frozen-generator rollout for run.duration attacked steps on run.seed.
RunRecord run_attack(const Scenario& s, const GeneratorArtifact& artifact);

struct SweepEntry {
  std::uint64_t seed = 0;
  SuccessReport report;
  bool escaped = false;
};

/// Runs seeds first_seed .. first_seed + count - 1. Neural attacks are
/// trained per seed and evaluated on a fresh rollout.
std::vector<SweepEntry> sweep(const Scenario& s, std::uint64_t first_seed, int count);

// ---- export ---------------------------------------------------------------

/// Header: t, x*, xhat*, u*, y*, a*, z*, g, alarm (+ S* when logged).
/// Floats are written with 17 significant digits.
void export_csv(const RunRecord& rec, const std::string& path);
std::string csv_text(const RunRecord& rec);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};
CsvTable parse_csv(std::string_view text);

/// Writes <dir>/run.csv, <dir>/run_meta.json and <dir>/plot_run.py; the
/// script renders trajectory, estimation error and detection panels.
void export_plots(const RunRecord& rec, const std::string& dir);

}  // namespace cpsa
