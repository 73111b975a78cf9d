#pragma once

// Attack synthesis: the analytic attack for unstable LTI plants, the two
// neural generators (feedforward on (y_t, x_hat_{t-1}); delayed feedforward
// with a latent state r_t and linear read-out), and the online training
// steps that minimise the cumulative stealth/effect objective over the
// attack history.

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cpsa/autodiff.hpp"
#include "cpsa/estimation.hpp"
#include "cpsa/models.hpp"
#include "cpsa/nn.hpp"

namespace cpsa {

/// Sensors the attacker can corrupt, stored 0-based and sorted.
class SensorSupport {
 public:
  SensorSupport() = default;
  static SensorSupport all(int p);
  static SensorSupport none() { return {}; }
  /// Builds from 0-based indices; duplicates are removed.
  static SensorSupport from_indices(std::vector<int> indices, int p);

  [[nodiscard]] const std::vector<int>& indices() const { return indices_; }
  [[nodiscard]] bool empty() const { return indices_.empty(); }
  [[nodiscard]] bool contains(int i) const;
  [[nodiscard]] VectorXd mask(int p) const;
  /// Zeroes every entry outside the support.
  [[nodiscard]] VectorXd apply(const VectorXd& a) const;

 private:
  std::vector<int> indices_;
};

// ---- analytic LTI attack --------------------------------------------------

struct AnalyticAttack {
  VectorXd a;
  VectorXd phi;
};

/// a = -y + C B u_prev + C A x_hat_prev + phi, phi ~ N(0, phi_cov).
/// Requires S - phi_cov to be PSD (within 1e-9); throws ContractError
/// otherwise. Applied to the Kalman filter it makes the residue equal phi.
AnalyticAttack theorem1_attack(const LtiMatrices& lti, const VectorXd& x_hat_prev,
                               const VectorXd& u_prev, const VectorXd& y,
                               const MatrixXd& phi_cov, const MatrixXd& S,
                               Rng& rng);

/// True if A has an eigenvalue of modulus strictly above one.
bool has_unstable_mode(const MatrixXd& A);

// ---- neural generators ----------------------------------------------------

/// How generator inputs are presented to the network.
///  - Raw:      FNN sees [y_t; x_hat_{t-1}], dFNN sees y_t.
///  - Relative: translation coordinates are re-expressed so inputs stay
///              bounded on unbounded paths. FNN: position channels of y_t
///              minus the matching coordinates of x_hat_{t-1}, and those
///              state coordinates zeroed. dFNN: position channels replaced
///              by their increment y_t - y_{t-1}.
enum class InputFrame { Raw, Relative };

std::string to_string(InputFrame frame);
InputFrame input_frame_from_string(const std::string& s);

VectorXd fnn_features(const PlantModel& model, InputFrame frame,
                      const VectorXd& y, const VectorXd& x_hat_prev);
VectorXd dfnn_features(const PlantModel& model, InputFrame frame,
                       const VectorXd& y, const VectorXd& y_prev);

/// a_t = H_theta(y_t, x_hat_{t-1}), masked to the support.
struct FnnGenerator {
  ad::Mlp net;  // in = n + p, out = p
  SensorSupport support;
  InputFrame frame = InputFrame::Relative;

  static FnnGenerator create(const PlantModel& model,
                             const std::vector<int>& hidden,
                             SensorSupport support, InputFrame frame, Rng& rng,
                             double init_scale = 1.0);
  [[nodiscard]] std::vector<ad::Tensor> parameters() const { return net.parameters(); }
};

VectorXd fnn_generate(const FnnGenerator& gen, const PlantModel& model,
                      const VectorXd& y, const VectorXd& x_hat_prev);

/// r_t = G_theta(y_t, r_{t-1}), a_t = W r_t, masked to the support.
/// W is stored as p x l so that a = W r.
struct DfnnGenerator {
  ad::Mlp net;  // in = p + l, out = l
  ad::Tensor W;
  SensorSupport support;
  InputFrame frame = InputFrame::Relative;

  static DfnnGenerator create(const PlantModel& model,
                              const std::vector<int>& hidden, int latent_dim,
                              SensorSupport support, InputFrame frame, Rng& rng,
                              double init_scale = 1.0);
  [[nodiscard]] int latent_dim() const { return net.output_dim(); }
  [[nodiscard]] std::vector<ad::Tensor> parameters() const;
};

struct DfnnOutput {
  VectorXd a;
  VectorXd r_next;
};

/// One recurrent step from latent r (zeros at attack start). `features` are
/// the already-framed measurements (see dfnn_features).
DfnnOutput dfnn_generate(const DfnnGenerator& gen, const VectorXd& features,
                         const VectorXd& r);

// ---- training -------------------------------------------------------------

enum class OptimizerKind { Sgd, Adam };

struct TrainingConfig {
  double delta = 0.2;
  double lambda = 0.05;
  double beta = 1e-3;
  int horizon_T = 1000;
  int inner_max = 50;
  double inner_tol = 1e-4;
  double eps_smooth = 1e-12;
  OptimizerKind optimizer = OptimizerKind::Sgd;

  void validate() const;
};

/// What the attacker stored at step j of the attack window.
struct HistoryEntry {
  VectorXd y;           // clean measurement y_j
  VectorXd x_hat_prev;  // x_hat_{j-1} (FNN input)
  VectorXd y_prev;      // y_{j-1} (dFNN relative frame)
  VectorXd x_pred;      // x_hat_{j|j-1}
  VectorXd y_pred;      // h(x_pred)
  MatrixXd L_gain;
  MatrixXd S_inv;
};

HistoryEntry make_history_entry(const EstimatorState& est, const VectorXd& y,
                                const VectorXd& x_hat_prev,
                                const VectorXd& y_prev);

/// Append-only store of per-step records during training.
class HistoryBuffer {
 public:
  void append(HistoryEntry e) { entries_.push_back(std::move(e)); }
  [[nodiscard]] std::span<const HistoryEntry> entries() const { return entries_; }
  [[nodiscard]] std::size_t size() const { return entries_.size(); }
  [[nodiscard]] bool empty() const { return entries_.empty(); }
  void clear() { entries_.clear(); }

 private:
  std::vector<HistoryEntry> entries_;
};

/// J = g_a - delta * smooth_norm(y - h(x_hat_a)).
ad::Tensor instantaneous_cost(ad::Tape& tape, const ad::Tensor& g_a,
                              const ad::Tensor& y, const ad::Tensor& x_hat_a,
                              const PlantModel& model, double delta,
                              double eps_smooth);

struct Objective {
  ad::Tensor total;     // lambda * sum_{j<t} J_j + J_t
  ad::Tensor per_step;  // 1 x (t+1) row of J_j
};

/// Cumulative objective over the entries; the last entry is the current step.
Objective fnn_objective(ad::Tape& tape, const FnnGenerator& gen,
                        const PlantModel& model,
                        std::span<const HistoryEntry> history,
                        const TrainingConfig& cfg);
/// As fnn_objective; latents are re-derived from r = 0 under the current
/// parameters, so gradients flow through the whole latent chain.
Objective dfnn_objective(ad::Tape& tape, const DfnnGenerator& gen,
                         const PlantModel& model,
                         std::span<const HistoryEntry> history,
                         const TrainingConfig& cfg);

class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double beta) : kind_(kind), beta_(beta), adam_(beta) {}
  void step(std::span<ad::Tensor> params);

 private:
  OptimizerKind kind_;
  double beta_;
  ad::Adam adam_;
};

struct TrainStepReport {
  int iterations = 0;
  double initial_objective = 0.0;
  double final_objective = 0.0;
  double grad_norm = 0.0;
};

TrainStepReport train_step_fnn(FnnGenerator& gen, const PlantModel& model,
                               const HistoryBuffer& buffer,
                               const TrainingConfig& cfg, Optimizer& opt);
TrainStepReport train_step_dfnn(DfnnGenerator& gen, const PlantModel& model,
                                const HistoryBuffer& buffer,
                                const TrainingConfig& cfg, Optimizer& opt);

// ---- attackers plugged into the closed loop -------------------------------

/// Everything the attacker may read at step t, after the estimator predicted.
struct AttackContext {
  long t;
  const PlantModel& model;
  const VectorXd& y;           // clean output y_t
  const VectorXd& y_prev;      // clean output y_{t-1}
  const VectorXd& x_hat_prev;  // x_hat_{t-1}
  const VectorXd& u_prev;      // u_{t-1}
  const EstimatorState& est;   // after predict
  Rng& rng;
};

class Attacker {
 public:
  virtual ~Attacker() = default;
  [[nodiscard]] virtual std::string kind() const = 0;
  /// Called once at the first attacked step, before act().
  virtual void start() {}
  virtual VectorXd act(const AttackContext& ctx) = 0;
  /// Residue drawn by the last act(), if the attacker knows it.
  [[nodiscard]] virtual std::optional<VectorXd> last_phi() const { return std::nullopt; }
};

class Theorem1Attacker final : public Attacker {
 public:
  /// phi covariance = phi_scale * S_t at each step.
  Theorem1Attacker(LtiMatrices lti, double phi_scale, SensorSupport support);
  [[nodiscard]] std::string kind() const override { return "theorem1"; }
  VectorXd act(const AttackContext& ctx) override;
  [[nodiscard]] std::optional<VectorXd> last_phi() const override { return phi_; }

 private:
  LtiMatrices lti_;
  double phi_scale_;
  SensorSupport support_;
  std::optional<VectorXd> phi_;
};

struct TrainingLog {
  std::vector<TrainStepReport> steps;
};

/// Feedforward attacker. While `train_steps` remain it runs the online
/// training step before each attack (Algorithm-style interleaving); after
/// that the parameters are frozen.
class FnnAttacker final : public Attacker {
 public:
  FnnAttacker(FnnGenerator gen, TrainingConfig cfg, int train_steps);
  [[nodiscard]] std::string kind() const override { return "fnn"; }
  VectorXd act(const AttackContext& ctx) override;
  [[nodiscard]] const FnnGenerator& generator() const { return gen_; }
  [[nodiscard]] const TrainingLog& log() const { return log_; }

 private:
  FnnGenerator gen_;
  TrainingConfig cfg_;
  int train_steps_;
  HistoryBuffer buffer_;
  Optimizer opt_;
  TrainingLog log_;
  VectorXd y_prev_;
};

class DfnnAttacker final : public Attacker {
 public:
  DfnnAttacker(DfnnGenerator gen, TrainingConfig cfg, int train_steps);
  [[nodiscard]] std::string kind() const override { return "dfnn"; }
  void start() override;
  VectorXd act(const AttackContext& ctx) override;
  [[nodiscard]] const DfnnGenerator& generator() const { return gen_; }
  [[nodiscard]] const TrainingLog& log() const { return log_; }

 private:
  DfnnGenerator gen_;
  TrainingConfig cfg_;
  int train_steps_;
  HistoryBuffer buffer_;
  Optimizer opt_;
  TrainingLog log_;
  VectorXd r_;
  VectorXd y_prev_;
};

// ---- generator artifacts --------------------------------------------------

struct GeneratorArtifact {
  std::string kind;  // "fnn" | "dfnn"
  std::string model_id;
  TrainingConfig training;
  std::optional<FnnGenerator> fnn;
  std::optional<DfnnGenerator> dfnn;
};

/// Versioned JSON: layer shapes, row-major weights, support, frame, model id
/// and training configuration. Doubles round-trip exactly.
void save_generator(const GeneratorArtifact& artifact, const std::string& path);
GeneratorArtifact load_generator(const std::string& path);
std::string serialize_generator(const GeneratorArtifact& artifact);
GeneratorArtifact deserialize_generator(const std::string& text);

}  // namespace cpsa
