#include "cpsa/harness.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "json.hpp"

namespace cpsa {

// ---- controllers ----------------------------------------------------------

VectorXd StateFeedback::control(const VectorXd& x_hat, long) const {
  return -K_ * x_hat;
}

double Road::lateral(double X) const {
  if (shape == Shape::Straight) return 0.0;
  return amplitude * std::sin(2.0 * std::numbers::pi * X / wavelength);
}

double Road::slope(double X) const {
  if (shape == Shape::Straight) return 0.0;
  const double w = 2.0 * std::numbers::pi / wavelength;
  return amplitude * w * std::cos(w * X);
}

double Road::curvature(double X) const {
  if (shape == Shape::Straight) return 0.0;
  const double w = 2.0 * std::numbers::pi / wavelength;
  const double d1 = amplitude * w * std::cos(w * X);
  const double d2 = -amplitude * w * w * std::sin(w * X);
  return d2 / std::pow(1.0 + d1 * d1, 1.5);
}

LaneKeeping::LaneKeeping(Road road, double speed, double wheelbase, Gains gains)
    : road_(road), speed_(speed), wheelbase_(wheelbase), gains_(gains) {}

VectorXd LaneKeeping::control(const VectorXd& x_hat, long) const {
  const double X = x_hat(0), Y = x_hat(1), psi = x_hat(2), v = x_hat(3);
  const double e_lat = (Y - road_.lateral(X)) * std::cos(std::atan(road_.slope(X)));
  const double e_head = std::remainder(psi - std::atan(road_.slope(X)),
                                       2.0 * std::numbers::pi);
  double steer = std::atan(wheelbase_ * road_.curvature(X)) -
                 gains_.k_lat * e_lat - gains_.k_head * e_head;
  steer = std::clamp(steer, -gains_.max_steer, gains_.max_steer);
  VectorXd u(2);
  u << gains_.k_speed * (speed_ - v), steer;
  return u;
}

QuadrotorTracker::QuadrotorTracker(QuadrotorModel::Constants c, double dt,
                                   Reference ref, double altitude,
                                   double climb_rate, Gains gains)
    : c_(c), dt_(dt), ref_(ref), altitude_(altitude), climb_rate_(climb_rate),
      gains_(gains) {}

double QuadrotorTracker::altitude_reference(long t) const {
  if (ref_ == Reference::Altitude) return altitude_;
  return climb_rate_ * dt_ * static_cast<double>(t);
}

VectorXd QuadrotorTracker::control(const VectorXd& x, long t) const {
  using Q = QuadrotorModel;
  const double z_ref = altitude_reference(t);
  const double vz_ref = ref_ == Reference::Ramp ? climb_rate_ : 0.0;
  const double az = std::clamp(gains_.kp_z * (z_ref - x(Q::Z)) + gains_.kd_z * (vz_ref - x(Q::VZ)),
                               -gains_.max_vertical_accel, gains_.max_vertical_accel);
  const double tilt = std::max(std::cos(x(Q::PHI)) * std::cos(x(Q::THETA)), 0.5);
  const double thrust = c_.mass * (c_.gravity + az) / tilt;

  // Hold the horizontal position at the origin; rotate the commanded
  // accelerations into the yaw frame to get pitch/roll set-points.
  const double ax = -gains_.kp_xy * x(Q::X) - gains_.kd_xy * x(Q::VX);
  const double ay = -gains_.kp_xy * x(Q::Y) - gains_.kd_xy * x(Q::VY);
  const double cps = std::cos(x(Q::PSI)), sps = std::sin(x(Q::PSI));
  const double theta_ref =
      std::clamp((ax * cps + ay * sps) / c_.gravity, -gains_.max_tilt, gains_.max_tilt);
  const double phi_ref =
      std::clamp((ax * sps - ay * cps) / c_.gravity, -gains_.max_tilt, gains_.max_tilt);

  VectorXd u(4);
  u(0) = thrust;
  u(1) = c_.Ix * (gains_.kp_att * (phi_ref - x(Q::PHI)) - gains_.kd_att * x(Q::PHI_D));
  u(2) = c_.Iy * (gains_.kp_att * (theta_ref - x(Q::THETA)) - gains_.kd_att * x(Q::THETA_D));
  u(3) = c_.Iz * (gains_.kp_att * (0.0 - x(Q::PSI)) - gains_.kd_att * x(Q::PSI_D));
  return u;
}

// ---- scenario parsing -----------------------------------------------------

std::string to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::None: return "none";
    case AttackKind::Theorem1: return "theorem1";
    case AttackKind::Fnn: return "fnn";
    case AttackKind::Dfnn: return "dfnn";
  }
  return "none";
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

double parse_double(const std::string& key, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size() || errno == ERANGE || !std::isfinite(d)) {
    throw ConfigError(key + ": expected a finite number, got '" + v + "'");
  }
  return d;
}

long long parse_int(const std::string& key, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  const long long i = std::strtoll(v.c_str(), &end, 10);
  if (v.empty() || end != v.c_str() + v.size() || errno == ERANGE) {
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
  }
  return i;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(trim(item));
  return out;
}

VectorXd parse_vector(const std::string& key, const std::string& v) {
  const auto parts = split(v, ',');
  VectorXd out(static_cast<Index>(parts.size()));
  for (std::size_t i = 0; i < parts.size(); ++i) {
    out(static_cast<Index>(i)) = parse_double(key, parts[i]);
  }
  return out;
}

// Rows separated by ';', entries by ','.
MatrixXd parse_matrix(const std::string& key, const std::string& v) {
  const auto rows = split(v, ';');
  MatrixXd out;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const VectorXd row = parse_vector(key, rows[r]);
    if (r == 0) out.resize(static_cast<Index>(rows.size()), row.size());
    if (row.size() != out.cols()) throw ConfigError(key + ": ragged matrix rows");
    out.row(static_cast<Index>(r)) = row.transpose();
  }
  return out;
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  for (const auto& part : split(v, ',')) {
    out.push_back(static_cast<int>(parse_int(key, part)));
  }
  return out;
}

void apply_model_defaults(Scenario& s, const std::string& type) {
  s.model_type = type;
  if (type == "lti") {
    s.Q_scale = 0.01;
    s.R_scale = 1.0;
    s.dt = 1.0;
  } else if (type == "vehicle") {
    s.Q_scale = 0.001;
    s.R_scale = 0.01;
    s.dt = 0.05;
    s.x0 = (VectorXd(4) << 0.0, 0.0, 0.0, 10.0).finished();
    s.hidden = {15, 15};
    s.latent = 3;
  } else if (type == "quadrotor") {
    s.Q_scale = 0.001;
    s.R_scale = 0.05;
    s.dt = 0.05;
    s.x0 = VectorXd::Zero(12);
    s.hidden = {50, 100, 100, 100};
    s.latent = 20;
  } else {
    throw ConfigError("model.type: unknown model '" + type +
                      "' (expected lti|vehicle|quadrotor)");
  }
}

}  // namespace

void Scenario::set(const std::string& key, const std::string& value) {
  const std::string& v = value;
  if (key == "model.type") {
    apply_model_defaults(*this, v);
  } else if (key == "model.Q_scale") {
    Q_scale = parse_double(key, v);
  } else if (key == "model.R_scale") {
    R_scale = parse_double(key, v);
  } else if (key == "model.dt") {
    dt = parse_double(key, v);
  } else if (key == "model.A") {
    lti.A = parse_matrix(key, v);
  } else if (key == "model.B") {
    lti.B = parse_matrix(key, v);
  } else if (key == "model.C") {
    lti.C = parse_matrix(key, v);
  } else if (key == "model.x0") {
    x0 = parse_vector(key, v);
  } else if (key == "controller.K") {
    K = parse_matrix(key, v);
  } else if (key == "controller.road") {
    if (v == "straight") {
      road.shape = Road::Shape::Straight;
    } else if (v == "curvy") {
      road.shape = Road::Shape::Curvy;
    } else {
      throw ConfigError(key + ": expected straight or curvy, got '" + v + "'");
    }
  } else if (key == "controller.road_amplitude") {
    road.amplitude = parse_double(key, v);
  } else if (key == "controller.road_wavelength") {
    road.wavelength = parse_double(key, v);
  } else if (key == "controller.speed") {
    speed = parse_double(key, v);
  } else if (key == "controller.k_lat") {
    lane_gains.k_lat = parse_double(key, v);
  } else if (key == "controller.k_head") {
    lane_gains.k_head = parse_double(key, v);
  } else if (key == "controller.k_speed") {
    lane_gains.k_speed = parse_double(key, v);
  } else if (key == "controller.max_steer") {
    lane_gains.max_steer = parse_double(key, v);
  } else if (key == "controller.reference") {
    if (v == "altitude") {
      reference = QuadrotorTracker::Reference::Altitude;
    } else if (v == "ramp") {
      reference = QuadrotorTracker::Reference::Ramp;
    } else {
      throw ConfigError(key + ": expected altitude or ramp, got '" + v + "'");
    }
  } else if (key == "controller.altitude") {
    altitude = parse_double(key, v);
  } else if (key == "controller.climb_rate") {
    climb_rate = parse_double(key, v);
  } else if (key == "detector.epsilon") {
    epsilon = parse_double(key, v);
  } else if (key == "attack.kind") {
    if (v == "none") {
      attack = AttackKind::None;
    } else if (v == "theorem1") {
      attack = AttackKind::Theorem1;
    } else if (v == "fnn") {
      attack = AttackKind::Fnn;
    } else if (v == "dfnn") {
      attack = AttackKind::Dfnn;
    } else {
      throw ConfigError(key + ": expected none|theorem1|fnn|dfnn, got '" + v + "'");
    }
  } else if (key == "attack.support") {
    support.clear();
    if (v != "all") {
      for (int i : parse_int_list(key, v)) {
        if (i < 1) throw ConfigError(key + ": sensor indices are 1-based");
        support.push_back(i - 1);
      }
    }
  } else if (key == "attack.t0") {
    t0 = static_cast<long>(parse_int(key, v));
  } else if (key == "attack.phi_scale") {
    phi_scale = parse_double(key, v);
  } else if (key == "train.delta") {
    train.delta = parse_double(key, v);
  } else if (key == "train.lambda") {
    train.lambda = parse_double(key, v);
  } else if (key == "train.beta") {
    train.beta = parse_double(key, v);
  } else if (key == "train.T") {
    train.horizon_T = static_cast<int>(parse_int(key, v));
  } else if (key == "train.inner_max") {
    train.inner_max = static_cast<int>(parse_int(key, v));
  } else if (key == "train.inner_tol") {
    train.inner_tol = parse_double(key, v);
  } else if (key == "train.eps_smooth") {
    train.eps_smooth = parse_double(key, v);
  } else if (key == "train.optimizer") {
    if (v == "sgd") {
      train.optimizer = OptimizerKind::Sgd;
    } else if (v == "adam") {
      train.optimizer = OptimizerKind::Adam;
    } else {
      throw ConfigError(key + ": expected sgd or adam, got '" + v + "'");
    }
  } else if (key == "train.hidden") {
    hidden = parse_int_list(key, v);
  } else if (key == "train.latent") {
    latent = static_cast<int>(parse_int(key, v));
  } else if (key == "train.frame") {
    try {
      frame = input_frame_from_string(v);
    } catch (const ConfigError& e) {
      throw ConfigError(key + ": " + e.what());
    }
  } else if (key == "train.init_scale") {
    init_scale = parse_double(key, v);
  } else if (key == "train.seed_offset") {
    train_seed_offset = static_cast<std::uint64_t>(parse_int(key, v));
  } else if (key == "run.seed") {
    seed = static_cast<std::uint64_t>(parse_int(key, v));
  } else if (key == "run.duration") {
    duration = static_cast<long>(parse_int(key, v));
  } else if (key == "run.alpha") {
    alpha = parse_double(key, v);
  } else if (key == "run.log_covariance") {
    log_covariance = parse_bool(key, v);
  } else if (key == "estimator.x0_sigma") {
    x0_sigma = parse_double(key, v);
  } else if (key == "estimator.P0_scale") {
    P0_scale = parse_double(key, v);
  } else if (key == "estimator.gain_form") {
    if (v == "filter") {
      gain_form = GainForm::Filter;
    } else if (v == "predictor") {
      gain_form = GainForm::Predictor;
    } else {
      throw ConfigError(key + ": expected filter or predictor, got '" + v + "'");
    }
  } else {
    throw ConfigError("unknown scenario key '" + key + "'");
  }
}

void Scenario::validate() const {
  int n = 0, m = 0, p = 0;
  if (model_type == "lti") {
    if (lti.A.size() == 0 || lti.B.size() == 0 || lti.C.size() == 0) {
      throw ConfigError("model.A, model.B and model.C are required for the lti model");
    }
    if (lti.A.rows() != lti.A.cols()) throw ConfigError("model.A: must be square");
    if (lti.B.rows() != lti.A.rows()) throw ConfigError("model.B: row count must match model.A");
    if (lti.C.cols() != lti.A.rows()) throw ConfigError("model.C: column count must match model.A");
    n = static_cast<int>(lti.A.rows());
    m = static_cast<int>(lti.B.cols());
    p = static_cast<int>(lti.C.rows());
    if (K.size() != 0 && (K.rows() != m || K.cols() != n)) {
      throw ConfigError("controller.K: must be " + std::to_string(m) + "x" + std::to_string(n));
    }
  } else if (model_type == "vehicle") {
    n = 4, m = 2, p = 2;
  } else {
    n = 12, m = 4, p = 9;
  }
  if (!(Q_scale >= 0.0)) throw ConfigError("model.Q_scale: must be nonnegative");
  if (!(R_scale > 0.0)) throw ConfigError("model.R_scale: must be positive");
  if (!(dt > 0.0)) throw ConfigError("model.dt: must be positive");
  if (x0.size() != 0 && x0.size() != n) {
    throw ConfigError("model.x0: expected " + std::to_string(n) + " entries");
  }
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw ConfigError("detector.epsilon: must lie in (0, 1)");
  if (t0 < 0) throw ConfigError("attack.t0: must be nonnegative");
  if (duration <= 0) throw ConfigError("run.duration: must be positive");
  if (!(alpha >= 0.0)) throw ConfigError("run.alpha: must be nonnegative");
  for (int i : support) {
    if (i >= p) {
      throw ConfigError("attack.support: sensor " + std::to_string(i + 1) +
                        " outside 1.." + std::to_string(p));
    }
  }
  if (!(x0_sigma >= 0.0)) throw ConfigError("estimator.x0_sigma: must be nonnegative");
  if (!(P0_scale > 0.0)) throw ConfigError("estimator.P0_scale: must be positive");
  if (attack == AttackKind::Theorem1) {
    if (model_type != "lti") throw ConfigError("attack.kind: theorem1 needs the lti model");
    if (!(phi_scale >= 0.0)) throw ConfigError("attack.phi_scale: must be nonnegative");
  }
  if (attack == AttackKind::Fnn || attack == AttackKind::Dfnn) {
    train.validate();
    if (hidden.empty()) throw ConfigError("train.hidden: at least one hidden layer is required");
    for (int h : hidden) {
      if (h <= 0) throw ConfigError("train.hidden: layer sizes must be positive");
    }
    if (latent <= 0) throw ConfigError("train.latent: must be positive");
    if (!(init_scale > 0.0)) throw ConfigError("train.init_scale: must be positive");
  }
  if (model_type == "vehicle") {
    if (!(speed > 0.0)) throw ConfigError("controller.speed: must be positive");
    if (!(road.wavelength > 0.0)) throw ConfigError("controller.road_wavelength: must be positive");
  }
}

Scenario parse_scenario(std::string_view text) {
  std::vector<std::pair<std::string, std::string>> entries;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    }
    std::string key = trim(std::string_view(body).substr(0, eq));
    std::string value = trim(std::string_view(body).substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    for (const auto& e : entries) {
      if (e.first == key) throw ConfigError(key + ": given more than once");
    }
    entries.emplace_back(std::move(key), std::move(value));
  }
  Scenario s;
  for (const auto& [k, v] : entries) {
    if (k == "model.type") s.set(k, v);
  }
  for (const auto& [k, v] : entries) {
    if (k != "model.type") s.set(k, v);
  }
  s.validate();
  return s;
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scenario '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scenario(ss.str());
}

ModelPtr build_model(const Scenario& s) {
  if (s.model_type == "lti") {
    const auto n = s.lti.A.rows();
    const auto p = s.lti.C.rows();
    return std::make_shared<LinearModel>(s.lti, s.Q_scale * MatrixXd::Identity(n, n),
                                         s.R_scale * MatrixXd::Identity(p, p), s.dt);
  }
  if (s.model_type == "vehicle") {
    return std::make_shared<BicycleModel>(s.Q_scale * MatrixXd::Identity(4, 4),
                                          s.R_scale * MatrixXd::Identity(2, 2), s.dt);
  }
  return std::make_shared<QuadrotorModel>(s.Q_scale * MatrixXd::Identity(12, 12),
                                          s.R_scale * MatrixXd::Identity(9, 9), s.dt);
}

std::unique_ptr<Controller> build_controller(const Scenario& s, const PlantModel& model) {
  if (const auto* bike = dynamic_cast<const BicycleModel*>(&model)) {
    const double wheelbase = bike->geometry().lf + bike->geometry().lr;
    return std::make_unique<LaneKeeping>(s.road, s.speed, wheelbase, s.lane_gains);
  }
  if (const auto* quad = dynamic_cast<const QuadrotorModel*>(&model)) {
    return std::make_unique<QuadrotorTracker>(quad->constants(), model.dt(), s.reference,
                                              s.altitude, s.climb_rate,
                                              QuadrotorTracker::Gains{});
  }
  MatrixXd K = s.K.size() != 0 ? s.K : MatrixXd::Zero(model.m(), model.n());
  return std::make_unique<StateFeedback>(std::move(K));
}

SensorSupport build_support(const Scenario& s, const PlantModel& model) {
  if (s.support.empty()) return SensorSupport::all(model.p());
  return SensorSupport::from_indices(s.support, model.p());
}

// ---- success --------------------------------------------------------------

SuccessReport evaluate_success(const RunRecord& rec, double alpha, double epsilon) {
  SuccessReport r;
  std::size_t alarms_before = 0, n_before = 0, alarms_after = 0;
  for (const auto& row : rec.rows) {
    if (row.t < rec.t0) {
      ++n_before;
      alarms_before += row.alarm ? 1 : 0;
      continue;
    }
    ++r.attacked_steps;
    alarms_after += row.alarm ? 1 : 0;
    const double err = (row.x - row.x_hat).norm();
    r.max_error = std::max(r.max_error, err);
    if (!r.first_crossing && err >= alpha) r.first_crossing = row.t;
  }
  if (n_before > 0) r.alarm_rate_before = static_cast<double>(alarms_before) / n_before;
  if (r.attacked_steps == 0) return r;
  r.alarm_rate_after = static_cast<double>(alarms_after) / r.attacked_steps;
  r.allowance = stealth_allowance(epsilon, r.attacked_steps);
  r.error_reached = r.first_crossing.has_value();
  r.stealthy = r.alarm_rate_after <= epsilon + r.allowance;
  r.success = r.error_reached && r.stealthy;
  return r;
}

// ---- runs -----------------------------------------------------------------

namespace {

Rng stream(std::uint64_t seed, std::uint32_t id) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), id};
  return Rng(seq);
}

enum Stream : std::uint32_t { kPlant = 1, kEstimator = 2, kAttack = 3, kInit = 4 };

}  // namespace

RunRecord simulate(const Scenario& s, const PlantModel& model,
                   const Controller& controller, Attacker* attacker,
                   std::uint64_t seed) {
  Rng plant_rng = stream(seed, kPlant);
  Rng est_rng = stream(seed, kEstimator);
  Rng atk_rng = stream(seed, kAttack);

  const DetectorConfig det = DetectorConfig::calibrate(s.epsilon, model.p());
  RunRecord rec;
  rec.model_id = model.id();
  rec.n = model.n();
  rec.m = model.m();
  rec.p = model.p();
  rec.dt = model.dt();
  rec.t0 = s.t0;
  rec.epsilon = s.epsilon;
  rec.eta = det.eta;
  rec.alpha = s.alpha;
  rec.log_covariance = s.log_covariance;
  rec.rows.reserve(static_cast<std::size_t>(s.total_steps()));

  PlantState state{s.x0.size() != 0 ? s.x0 : VectorXd::Zero(model.n()), 0};
  VectorXd x_hat0 = state.x;
  if (s.x0_sigma > 0.0) {
    x_hat0 += GaussianSampler(s.x0_sigma * s.x0_sigma *
                              MatrixXd::Identity(model.n(), model.n()))(est_rng);
  }
  EstimatorState est = make_estimator(
      x_hat0, s.P0_scale * MatrixXd::Identity(model.n(), model.n()), s.gain_form);
  VectorXd u = controller.control(est.x_hat, 0);
  VectorXd y_prev = observe(model, state, plant_rng);

  bool started = false;
  for (long t = 1; t <= s.total_steps(); ++t) {
    try {
      state = step(model, state, u, plant_rng);
      const VectorXd y = observe(model, state, plant_rng);
      const VectorXd x_hat_prev = est.x_hat;
      est = predict(std::move(est), model, u);

      VectorXd a = VectorXd::Zero(model.p());
      if (attacker != nullptr && t >= s.t0) {
        if (!started) {
          attacker->start();
          started = true;
        }
        const AttackContext ctx{t, model, y, y_prev, x_hat_prev, u, est, atk_rng};
        a = attacker->act(ctx);
        if (!a.allFinite()) throw NumericError("attack vector is not finite");
      }
      const VectorXd y_c = y + a;
      auto [next, res] = update(std::move(est), model, y_c);
      est = std::move(next);

      StepRow row;
      row.t = t;
      row.x = state.x;
      row.x_hat = est.x_hat;
      row.x_pred = est.x_pred;
      row.y = y;
      row.a = a;
      row.y_c = y_c;
      row.z = res.z;
      row.g = res.g;
      row.alarm = evaluate(det, res.g);
      if (s.log_covariance) row.S = res.S;

      u = controller.control(est.x_hat, t);
      if (!u.allFinite()) throw NumericError("control input is not finite");
      row.u = u;
      rec.rows.push_back(std::move(row));
      y_prev = y;
    } catch (const TrainingError&) {
      throw;
    } catch (const NumericError& e) {
      rec.escaped = true;
      rec.escape_message = "t=" + std::to_string(t) + ": " + e.what();
      break;
    }
  }
  rec.summary = evaluate_success(rec, s.alpha, s.epsilon);
  return rec;
}

std::unique_ptr<Attacker> make_attacker(const Scenario& s, const PlantModel& model,
                                        const GeneratorArtifact* frozen) {
  const SensorSupport support = build_support(s, model);
  const int train_steps = static_cast<int>(std::min<long>(s.train.horizon_T, s.duration));
  switch (s.attack) {
    case AttackKind::None:
      return nullptr;
    case AttackKind::Theorem1: {
      const auto* lin = dynamic_cast<const LinearModel*>(&model);
      if (lin == nullptr) throw ConfigError("attack.kind: theorem1 needs the lti model");
      return std::make_unique<Theorem1Attacker>(lin->matrices(), s.phi_scale, support);
    }
    case AttackKind::Fnn: {
      if (frozen != nullptr) {
        if (!frozen->fnn) throw ConfigError("generator artifact does not hold an fnn");
        if (frozen->fnn->net.input_dim() != model.n() + model.p() ||
            frozen->fnn->net.output_dim() != model.p()) {
          throw ConfigError("generator artifact does not fit model '" + model.id() + "'");
        }
        return std::make_unique<FnnAttacker>(*frozen->fnn, s.train, 0);
      }
      Rng rng = stream(s.seed, kInit);
      return std::make_unique<FnnAttacker>(
          FnnGenerator::create(model, s.hidden, support, s.frame, rng, s.init_scale),
          s.train, train_steps);
    }
    case AttackKind::Dfnn: {
      if (frozen != nullptr) {
        if (!frozen->dfnn) throw ConfigError("generator artifact does not hold a dfnn");
        if (frozen->dfnn->W.rows() != model.p()) {
          throw ConfigError("generator artifact does not fit model '" + model.id() + "'");
        }
        return std::make_unique<DfnnAttacker>(*frozen->dfnn, s.train, 0);
      }
      Rng rng = stream(s.seed, kInit);
      return std::make_unique<DfnnAttacker>(
          DfnnGenerator::create(model, s.hidden, s.latent, support, s.frame, rng,
                                s.init_scale),
          s.train, train_steps);
    }
  }
  return nullptr;
}

RunRecord run_scenario(const Scenario& s) {
  s.validate();
  const ModelPtr model = build_model(s);
  const auto controller = build_controller(s, *model);
  auto attacker = make_attacker(s, *model);
  return simulate(s, *model, *controller, attacker.get(), s.seed);
}

TrainingResult train_generator(const Scenario& s) {
  s.validate();
  if (s.attack != AttackKind::Fnn && s.attack != AttackKind::Dfnn) {
    throw ConfigError("attack.kind: training needs fnn or dfnn");
  }
  Scenario ts = s;
  ts.seed = s.seed + s.train_seed_offset;
  ts.duration = s.train.horizon_T;
  const ModelPtr model = build_model(ts);
  const auto controller = build_controller(ts, *model);
  auto attacker = make_attacker(ts, *model);

  TrainingResult out;
  out.record = simulate(ts, *model, *controller, attacker.get(), ts.seed);
  out.artifact.kind = to_string(s.attack);
  out.artifact.model_id = model->id();
  out.artifact.training = s.train;
  if (auto* f = dynamic_cast<FnnAttacker*>(attacker.get())) {
    out.artifact.fnn = f->generator();
    out.log = f->log();
  } else if (auto* d = dynamic_cast<DfnnAttacker*>(attacker.get())) {
    out.artifact.dfnn = d->generator();
    out.log = d->log();
  }
  return out;
}

RunRecord run_attack(const Scenario& s, const GeneratorArtifact& artifact) {
  s.validate();
  const ModelPtr model = build_model(s);
  if (artifact.model_id != model->id()) {
    throw ConfigError("generator was trained on '" + artifact.model_id +
                      "' but the scenario uses '" + model->id() + "'");
  }
  Scenario rs = s;
  rs.attack = artifact.kind == "dfnn" ? AttackKind::Dfnn : AttackKind::Fnn;
  const auto controller = build_controller(rs, *model);
  auto attacker = make_attacker(rs, *model, &artifact);
  return simulate(rs, *model, *controller, attacker.get(), rs.seed);
}

std::vector<SweepEntry> sweep(const Scenario& s, std::uint64_t first_seed, int count) {
  std::vector<SweepEntry> out;
  for (int i = 0; i < count; ++i) {
    Scenario si = s;
    si.seed = first_seed + static_cast<std::uint64_t>(i);
    RunRecord rec;
    if (si.attack == AttackKind::Fnn || si.attack == AttackKind::Dfnn) {
      const auto trained = train_generator(si);
      rec = run_attack(si, trained.artifact);
    } else {
      rec = run_scenario(si);
    }
    out.push_back({si.seed, rec.summary, rec.escaped});
  }
  return out;
}

// ---- export ---------------------------------------------------------------

namespace {

void append_number(std::string& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out += buf;
}

void append_vector(std::string& out, const VectorXd& v) {
  for (Index i = 0; i < v.size(); ++i) {
    out += ',';
    append_number(out, v(i));
  }
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw IoError("failed writing '" + path + "'");
}

constexpr const char* kPlotScript = R"PY(import csv
import json
import os
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))
with open(os.path.join(here, "run_meta.json")) as f:
    meta = json.load(f)
with open(os.path.join(here, "run.csv")) as f:
    rows = list(csv.DictReader(f))
if not rows:
    sys.exit("empty record")

n = meta["n"]
t = [float(r["t"]) * meta["dt"] for r in rows]
col = lambda name: [float(r[name]) for r in rows]
t0 = meta["t0"] * meta["dt"]

fig, ax = plt.subplots(figsize=(6, 4))
if meta["model"] == "vehicle":
    ax.plot(col("x0"), col("x1"), label="actual")
    ax.plot(col("xhat0"), col("xhat1"), "--", label="estimated")
    ax.set_xlabel("X [m]")
    ax.set_ylabel("Y [m]")
elif meta["model"] == "quadrotor":
    ax.plot(t, col("x2"), label="actual")
    ax.plot(t, col("xhat2"), "--", label="estimated")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("altitude [m]")
else:
    ax.plot(t, col("x0"), label="actual")
    ax.plot(t, col("xhat0"), "--", label="estimated")
    ax.set_xlabel("time")
    ax.set_ylabel("x0")
ax.legend()
fig.tight_layout()
fig.savefig(os.path.join(here, "trajectory.png"), dpi=120)

fig, ax = plt.subplots(figsize=(6, 4))
for i in range(n):
    ax.plot(t, [a - b for a, b in zip(col("x%d" % i), col("xhat%d" % i))], label="dx%d" % i)
ax.axvline(t0, color="k", ls=":", label="attack start")
ax.set_xlabel("time")
ax.set_ylabel("estimation error")
ax.legend(fontsize="small")
fig.tight_layout()
fig.savefig(os.path.join(here, "estimation_error.png"), dpi=120)

fig, ax = plt.subplots(figsize=(6, 4))
ax.plot(t, col("g"), lw=0.7, label="g")
ax.axhline(meta["eta"], color="r", label="eta")
ax.axvline(t0, color="k", ls=":", label="attack start")
ax.set_xlabel("time")
ax.set_ylabel("detection statistic")
ax.legend()
fig.tight_layout()
fig.savefig(os.path.join(here, "detection.png"), dpi=120)
)PY";

}  // namespace

std::string csv_text(const RunRecord& rec) {
  std::string out = "t";
  const auto names = [&](const char* prefix, int count) {
    for (int i = 0; i < count; ++i) out += std::string(",") + prefix + std::to_string(i);
  };
  names("x", rec.n);
  names("xhat", rec.n);
  names("u", rec.m);
  names("y", rec.p);
  names("a", rec.p);
  names("z", rec.p);
  out += ",g,alarm";
  if (rec.log_covariance) {
    for (int i = 0; i < rec.p; ++i)
      for (int j = 0; j < rec.p; ++j) out += ",S" + std::to_string(i) + "_" + std::to_string(j);
  }
  out += '\n';
  for (const auto& row : rec.rows) {
    out += std::to_string(row.t);
    append_vector(out, row.x);
    append_vector(out, row.x_hat);
    append_vector(out, row.u);
    append_vector(out, row.y);
    append_vector(out, row.a);
    append_vector(out, row.z);
    out += ',';
    append_number(out, row.g);
    out += row.alarm ? ",1" : ",0";
    if (rec.log_covariance) {
      for (Index i = 0; i < row.S.rows(); ++i)
        for (Index j = 0; j < row.S.cols(); ++j) {
          out += ',';
          append_number(out, row.S(i, j));
        }
    }
    out += '\n';
  }
  return out;
}

void export_csv(const RunRecord& rec, const std::string& path) {
  write_file(path, csv_text(rec));
}

CsvTable parse_csv(std::string_view text) {
  CsvTable table;
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line)) return table;
  table.header = split(line, ',');
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    for (const auto& cell : split(line, ',')) row.push_back(std::strtod(cell.c_str(), nullptr));
    if (row.size() != table.header.size()) throw InputError("csv row width differs from header");
    table.rows.push_back(std::move(row));
  }
  return table;
}

void export_plots(const RunRecord& rec, const std::string& dir) {
  if (rec.rows.empty()) throw ContractError("export_plots: record is empty");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir + "': " + ec.message());
  const std::filesystem::path base(dir);
  export_csv(rec, (base / "run.csv").string());

  const nlohmann::json meta = {{"model", rec.model_id}, {"n", rec.n},     {"m", rec.m},
                               {"p", rec.p},            {"t0", rec.t0},   {"eta", rec.eta},
                               {"epsilon", rec.epsilon}, {"alpha", rec.alpha},
                               {"dt", rec.dt}};
  write_file((base / "run_meta.json").string(), meta.dump(1) + "\n");
  write_file((base / "plot_run.py").string(), kPlotScript);
}

}  // namespace cpsa
