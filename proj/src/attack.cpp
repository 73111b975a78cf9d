#include "cpsa/attack.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace cpsa {

using ad::Tape;
using ad::Tensor;

// ---- SensorSupport --------------------------------------------------------

SensorSupport SensorSupport::all(int p) {
  SensorSupport s;
  for (int i = 0; i < p; ++i) s.indices_.push_back(i);
  return s;
}

SensorSupport SensorSupport::from_indices(std::vector<int> indices, int p) {
  std::sort(indices.begin(), indices.end());
  indices.erase(std::unique(indices.begin(), indices.end()), indices.end());
  for (int i : indices) {
    if (i < 0 || i >= p) {
      throw InputError("sensor index " + std::to_string(i + 1) +
                       " outside 1.." + std::to_string(p));
    }
  }
  SensorSupport s;
  s.indices_ = std::move(indices);
  return s;
}

bool SensorSupport::contains(int i) const {
  return std::binary_search(indices_.begin(), indices_.end(), i);
}

VectorXd SensorSupport::mask(int p) const {
  VectorXd m = VectorXd::Zero(p);
  for (int i : indices_) {
    if (i < p) m(i) = 1.0;
  }
  return m;
}

VectorXd SensorSupport::apply(const VectorXd& a) const {
  VectorXd out = VectorXd::Zero(a.size());
  for (int i : indices_) {
    if (i < a.size()) out(i) = a(i);
  }
  return out;
}

// ---- analytic attack ------------------------------------------------------

AnalyticAttack theorem1_attack(const LtiMatrices& lti, const VectorXd& x_hat_prev,
                               const VectorXd& u_prev, const VectorXd& y,
                               const MatrixXd& phi_cov, const MatrixXd& S,
                               Rng& rng) {
  const Index p = lti.C.rows();
  if (phi_cov.rows() != p || phi_cov.cols() != p || S.rows() != p || S.cols() != p) {
    throw DimensionError("theorem1_attack: covariances must be p x p");
  }
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * ((S - phi_cov) + (S - phi_cov).transpose()),
                                             Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -1e-9) {
    throw ContractError("theorem1_attack: phi covariance is not dominated by S");
  }
  AnalyticAttack out;
  out.phi = GaussianSampler(phi_cov)(rng);
  out.a = -y + lti.C * (lti.B * u_prev) + lti.C * (lti.A * x_hat_prev) + out.phi;
  return out;
}

bool has_unstable_mode(const MatrixXd& A) {
  Eigen::EigenSolver<MatrixXd> es(A, false);
  return (es.eigenvalues().array().abs() > 1.0).any();
}

// ---- generators -----------------------------------------------------------

std::string to_string(InputFrame frame) {
  return frame == InputFrame::Raw ? "raw" : "relative";
}

InputFrame input_frame_from_string(const std::string& s) {
  if (s == "raw") return InputFrame::Raw;
  if (s == "relative") return InputFrame::Relative;
  throw ConfigError("unknown input frame '" + s + "' (expected raw|relative)");
}

VectorXd fnn_features(const PlantModel& model, InputFrame frame,
                      const VectorXd& y, const VectorXd& x_hat_prev) {
  VectorXd yf = y;
  VectorXd xf = x_hat_prev;
  if (frame == InputFrame::Relative) {
    const auto states = model.translation_states();
    const auto outputs = model.translation_outputs();
    for (std::size_t k = 0; k < states.size() && k < outputs.size(); ++k) {
      yf(outputs[k]) -= x_hat_prev(states[k]);
      xf(states[k]) = 0.0;
    }
  }
  VectorXd f(yf.size() + xf.size());
  f << yf, xf;
  return f;
}

VectorXd dfnn_features(const PlantModel& model, InputFrame frame,
                       const VectorXd& y, const VectorXd& y_prev) {
  VectorXd f = y;
  if (frame == InputFrame::Relative) {
    for (int o : model.translation_outputs()) f(o) -= y_prev(o);
  }
  return f;
}

FnnGenerator FnnGenerator::create(const PlantModel& model,
                                  const std::vector<int>& hidden,
                                  SensorSupport support, InputFrame frame,
                                  Rng& rng, double init_scale) {
  std::vector<int> sizes{model.n() + model.p()};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(model.p());
  return {ad::Mlp(sizes, rng, init_scale), std::move(support), frame};
}

VectorXd fnn_generate(const FnnGenerator& gen, const PlantModel& model,
                      const VectorXd& y, const VectorXd& x_hat_prev) {
  const VectorXd a =
      gen.net.evaluate(fnn_features(model, gen.frame, y, x_hat_prev)).col(0);
  return gen.support.apply(a);
}

DfnnGenerator DfnnGenerator::create(const PlantModel& model,
                                    const std::vector<int>& hidden,
                                    int latent_dim, SensorSupport support,
                                    InputFrame frame, Rng& rng,
                                    double init_scale) {
  if (latent_dim <= 0) throw InputError("latent dimension must be positive");
  std::vector<int> sizes{model.p() + latent_dim};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(latent_dim);
  DfnnGenerator gen{ad::Mlp(sizes, rng, init_scale), {}, std::move(support), frame};
  const double s = init_scale * std::sqrt(1.0 / latent_dim);
  std::uniform_real_distribution<double> dist(-s, s);
  MatrixXd W(model.p(), latent_dim);
  for (Index i = 0; i < W.rows(); ++i)
    for (Index j = 0; j < W.cols(); ++j) W(i, j) = dist(rng);
  gen.W = Tensor::parameter(std::move(W));
  return gen;
}

std::vector<Tensor> DfnnGenerator::parameters() const {
  auto p = net.parameters();
  p.push_back(W);
  return p;
}

DfnnOutput dfnn_generate(const DfnnGenerator& gen, const VectorXd& features,
                         const VectorXd& r) {
  VectorXd in(features.size() + r.size());
  in << features, r;
  DfnnOutput out;
  out.r_next = gen.net.evaluate(in).col(0);
  out.a = gen.support.apply(gen.W.value() * out.r_next);
  return out;
}

// ---- training -------------------------------------------------------------

void TrainingConfig::validate() const {
  if (!(delta >= 0.0)) throw ConfigError("train.delta must be nonnegative");
  if (!(lambda >= 0.0)) throw ConfigError("train.lambda must be nonnegative");
  if (!(beta > 0.0)) throw ConfigError("train.beta must be positive");
  if (horizon_T <= 0) throw ConfigError("train.T must be positive");
  if (inner_max <= 0) throw ConfigError("train.inner_max must be positive");
  if (!(inner_tol > 0.0)) throw ConfigError("train.inner_tol must be positive");
  if (!(eps_smooth > 0.0)) throw ConfigError("train.eps_smooth must be positive");
}

HistoryEntry make_history_entry(const EstimatorState& est, const VectorXd& y,
                                const VectorXd& x_hat_prev,
                                const VectorXd& y_prev) {
  if (!est.predicted) throw ContractError("history entry needs a predicted estimator");
  return {y, x_hat_prev, y_prev, est.x_pred, est.y_pred, est.L_gain, est.S_inv};
}

Tensor instantaneous_cost(Tape& tape, const Tensor& g_a, const Tensor& y,
                          const Tensor& x_hat_a, const PlantModel& model,
                          double delta, double eps_smooth) {
  const Tensor hx = ad::columnwise_map(
      tape, x_hat_a, [&model](const VectorXd& x) { return model.output(x); },
      [&model](const VectorXd& x) { return model.output_jacobian(x); });
  const Tensor err = ad::sub(tape, y, hx);
  const Tensor norm = ad::smooth_norm(tape, err, eps_smooth);
  return ad::sub(tape, g_a, ad::scale(tape, norm, delta));
}

namespace {

// Column-stacked view of a history window, built once per training step and
// shared by every inner iteration.
struct HistoryBatch {
  MatrixXd Y, Y_pred, X_pred, features;
  ad::MatrixList gains, s_inv;
  VectorXd weights;
};

HistoryBatch make_batch(const PlantModel& model, std::span<const HistoryEntry> h,
                        const TrainingConfig& cfg, bool dfnn, InputFrame frame) {
  if (h.empty()) throw ContractError("training objective needs a nonempty history");
  const Index N = static_cast<Index>(h.size());
  HistoryBatch b;
  b.Y.resize(model.p(), N);
  b.Y_pred.resize(model.p(), N);
  b.X_pred.resize(model.n(), N);
  b.features.resize(dfnn ? model.p() : model.n() + model.p(), N);
  auto gains = std::make_shared<std::vector<MatrixXd>>();
  auto s_inv = std::make_shared<std::vector<MatrixXd>>();
  gains->reserve(h.size());
  s_inv->reserve(h.size());
  for (Index j = 0; j < N; ++j) {
    const auto& e = h[static_cast<std::size_t>(j)];
    b.Y.col(j) = e.y;
    b.Y_pred.col(j) = e.y_pred;
    b.X_pred.col(j) = e.x_pred;
    b.features.col(j) = dfnn ? dfnn_features(model, frame, e.y, e.y_prev)
                             : fnn_features(model, frame, e.y, e.x_hat_prev);
    gains->push_back(e.L_gain);
    s_inv->push_back(e.S_inv);
  }
  b.gains = std::move(gains);
  b.s_inv = std::move(s_inv);
  b.weights = VectorXd::Constant(N, cfg.lambda);
  b.weights(N - 1) = 1.0;
  return b;
}

// Everything downstream of the attack matrix A (p x N).
Objective objective_from_attacks(Tape& tape, const Tensor& A,
                                 const HistoryBatch& b, const PlantModel& model,
                                 const TrainingConfig& cfg) {
  const Tensor Y = Tensor::constant(b.Y);
  const Tensor Z = ad::sub(tape, ad::add(tape, Y, A), Tensor::constant(b.Y_pred));
  const Tensor X_a =
      ad::add(tape, Tensor::constant(b.X_pred), ad::columnwise_linear(tape, Z, b.gains));
  const Tensor G = ad::columnwise_quadratic(tape, Z, b.s_inv);
  Tensor HX;
  if (const auto C = model.output_matrix()) {
    HX = ad::matmul(tape, Tensor::constant(*C), X_a);
  } else {
    HX = ad::columnwise_map(
        tape, X_a, [&model](const VectorXd& x) { return model.output(x); },
        [&model](const VectorXd& x) { return model.output_jacobian(x); });
  }
  const Tensor norms =
      ad::columnwise_smooth_norm(tape, ad::sub(tape, Y, HX), cfg.eps_smooth);
  const Tensor J = ad::sub(tape, G, ad::scale(tape, norms, cfg.delta));
  return {ad::weighted_sum(tape, J, b.weights), J};
}

Objective fnn_objective_batch(Tape& tape, const FnnGenerator& gen,
                              const PlantModel& model, const HistoryBatch& b,
                              const TrainingConfig& cfg) {
  const Tensor raw = gen.net.forward(tape, Tensor::constant(b.features));
  const Tensor A = ad::mask_rows(tape, raw, gen.support.mask(model.p()));
  return objective_from_attacks(tape, A, b, model, cfg);
}

Objective dfnn_objective_batch(Tape& tape, const DfnnGenerator& gen,
                               const PlantModel& model, const HistoryBatch& b,
                               const TrainingConfig& cfg) {
  const Tensor R =
      gen.net.unroll(tape, b.features, VectorXd::Zero(gen.latent_dim()));
  const Tensor A = ad::mask_rows(tape, ad::matmul(tape, gen.W, R),
                                 gen.support.mask(model.p()));
  return objective_from_attacks(tape, A, b, model, cfg);
}

template <typename Generator, typename ObjectiveFn>
TrainStepReport run_inner_loop(Generator& gen, const HistoryBatch& batch,
                               const PlantModel& model, const TrainingConfig& cfg,
                               Optimizer& opt, ObjectiveFn objective) {
  std::vector<Tensor> params = gen.parameters();
  TrainStepReport report;
  Tape tape;
  for (int it = 0; it < cfg.inner_max; ++it) {
    tape.clear();
    const Objective obj = objective(tape, gen, model, batch, cfg);
    const double value = obj.total.item();
    if (!std::isfinite(value)) {
      throw TrainingError("training objective diverged (value " +
                          std::to_string(value) + ") at inner iteration " +
                          std::to_string(it) + " with " +
                          std::to_string(batch.Y.cols()) + " history steps");
    }
    if (it == 0) report.initial_objective = value;
    tape.backward(obj.total);
    report.grad_norm = ad::grad_inf_norm(params);
    report.iterations = it + 1;
    if (!std::isfinite(report.grad_norm)) {
      throw TrainingError("training gradient is not finite");
    }
    if (report.grad_norm < cfg.inner_tol) {
      for (auto& p : params) p.zero_grad();
      break;
    }
    opt.step(params);
  }
  tape.clear();
  report.final_objective = objective(tape, gen, model, batch, cfg).total.item();
  if (!std::isfinite(report.final_objective)) {
    throw TrainingError("training objective diverged after the parameter update");
  }
  return report;
}

}  // namespace

Objective fnn_objective(Tape& tape, const FnnGenerator& gen,
                        const PlantModel& model,
                        std::span<const HistoryEntry> history,
                        const TrainingConfig& cfg) {
  return fnn_objective_batch(tape, gen, model,
                             make_batch(model, history, cfg, false, gen.frame), cfg);
}

Objective dfnn_objective(Tape& tape, const DfnnGenerator& gen,
                         const PlantModel& model,
                         std::span<const HistoryEntry> history,
                         const TrainingConfig& cfg) {
  return dfnn_objective_batch(tape, gen, model,
                              make_batch(model, history, cfg, true, gen.frame), cfg);
}

void Optimizer::step(std::span<Tensor> params) {
  if (kind_ == OptimizerKind::Adam) {
    adam_.step(params);
  } else {
    ad::sgd_step(params, beta_);
  }
}

TrainStepReport train_step_fnn(FnnGenerator& gen, const PlantModel& model,
                               const HistoryBuffer& buffer,
                               const TrainingConfig& cfg, Optimizer& opt) {
  const auto batch = make_batch(model, buffer.entries(), cfg, false, gen.frame);
  return run_inner_loop(gen, batch, model, cfg, opt, fnn_objective_batch);
}

TrainStepReport train_step_dfnn(DfnnGenerator& gen, const PlantModel& model,
                                const HistoryBuffer& buffer,
                                const TrainingConfig& cfg, Optimizer& opt) {
  const auto batch = make_batch(model, buffer.entries(), cfg, true, gen.frame);
  return run_inner_loop(gen, batch, model, cfg, opt, dfnn_objective_batch);
}

// ---- attackers ------------------------------------------------------------

Theorem1Attacker::Theorem1Attacker(LtiMatrices lti, double phi_scale,
                                   SensorSupport support)
    : lti_(std::move(lti)), phi_scale_(phi_scale), support_(std::move(support)) {
  if (!(phi_scale_ >= 0.0)) throw ConfigError("attack.phi_scale must be nonnegative");
}

VectorXd Theorem1Attacker::act(const AttackContext& ctx) {
  const auto atk = theorem1_attack(lti_, ctx.x_hat_prev, ctx.u_prev, ctx.y,
                                   phi_scale_ * ctx.est.S, ctx.est.S, ctx.rng);
  phi_ = atk.phi;
  return support_.apply(atk.a);
}

FnnAttacker::FnnAttacker(FnnGenerator gen, TrainingConfig cfg, int train_steps)
    : gen_(std::move(gen)), cfg_(cfg), train_steps_(train_steps),
      opt_(cfg.optimizer, cfg.beta) {}

VectorXd FnnAttacker::act(const AttackContext& ctx) {
  if (static_cast<int>(buffer_.size()) < train_steps_) {
    buffer_.append(make_history_entry(ctx.est, ctx.y, ctx.x_hat_prev, ctx.y_prev));
    log_.steps.push_back(train_step_fnn(gen_, ctx.model, buffer_, cfg_, opt_));
  }
  return fnn_generate(gen_, ctx.model, ctx.y, ctx.x_hat_prev);
}

DfnnAttacker::DfnnAttacker(DfnnGenerator gen, TrainingConfig cfg, int train_steps)
    : gen_(std::move(gen)), cfg_(cfg), train_steps_(train_steps),
      opt_(cfg.optimizer, cfg.beta) {}

void DfnnAttacker::start() { r_ = VectorXd::Zero(gen_.latent_dim()); }

VectorXd DfnnAttacker::act(const AttackContext& ctx) {
  if (r_.size() != gen_.latent_dim()) start();
  if (static_cast<int>(buffer_.size()) < train_steps_) {
    buffer_.append(make_history_entry(ctx.est, ctx.y, ctx.x_hat_prev, ctx.y_prev));
    log_.steps.push_back(train_step_dfnn(gen_, ctx.model, buffer_, cfg_, opt_));
  }
  const auto out =
      dfnn_generate(gen_, dfnn_features(ctx.model, gen_.frame, ctx.y, ctx.y_prev), r_);
  r_ = out.r_next;
  return out.a;
}

// ---- serialization --------------------------------------------------------

namespace {

using nlohmann::json;
constexpr const char* kFormat = "cpsa-generator";
constexpr int kVersion = 1;

json matrix_to_json(const MatrixXd& m) {
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(m.size()));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

MatrixXd matrix_from_json(const json& j) {
  const Index rows = j.at("rows").get<Index>();
  const Index cols = j.at("cols").get<Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (rows <= 0 || cols <= 0 || static_cast<Index>(data.size()) != rows * cols) {
    throw InputError("generator artifact: inconsistent matrix shape");
  }
  MatrixXd m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index c = 0; c < cols; ++c) m(i, c) = data[static_cast<std::size_t>(i * cols + c)];
  return m;
}

json mlp_to_json(const ad::Mlp& net) {
  json layers = json::array();
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    layers.push_back({{"weight", matrix_to_json(net.weights()[l].value())},
                      {"bias", matrix_to_json(net.biases()[l].value())}});
  }
  return layers;
}

ad::Mlp mlp_from_json(const json& layers) {
  std::vector<int> sizes;
  std::vector<MatrixXd> ws, bs;
  for (const auto& layer : layers) {
    ws.push_back(matrix_from_json(layer.at("weight")));
    bs.push_back(matrix_from_json(layer.at("bias")));
  }
  if (ws.empty()) throw InputError("generator artifact: network has no layers");
  sizes.push_back(static_cast<int>(ws.front().cols()));
  for (std::size_t l = 0; l < ws.size(); ++l) {
    if (l > 0 && ws[l].cols() != ws[l - 1].rows()) {
      throw InputError("generator artifact: layer shapes do not chain");
    }
    if (bs[l].rows() != ws[l].rows() || bs[l].cols() != 1) {
      throw InputError("generator artifact: bias shape mismatch");
    }
    sizes.push_back(static_cast<int>(ws[l].rows()));
  }
  ad::Mlp net = ad::Mlp::zeros(sizes);
  for (std::size_t l = 0; l < ws.size(); ++l) {
    net.weights()[l].mutable_value() = ws[l];
    net.biases()[l].mutable_value() = bs[l];
  }
  return net;
}

json training_to_json(const TrainingConfig& c) {
  return {{"delta", c.delta},         {"lambda", c.lambda},
          {"beta", c.beta},           {"T", c.horizon_T},
          {"inner_max", c.inner_max}, {"inner_tol", c.inner_tol},
          {"eps_smooth", c.eps_smooth},
          {"optimizer", c.optimizer == OptimizerKind::Adam ? "adam" : "sgd"}};
}

TrainingConfig training_from_json(const json& j) {
  TrainingConfig c;
  c.delta = j.at("delta").get<double>();
  c.lambda = j.at("lambda").get<double>();
  c.beta = j.at("beta").get<double>();
  c.horizon_T = j.at("T").get<int>();
  c.inner_max = j.at("inner_max").get<int>();
  c.inner_tol = j.at("inner_tol").get<double>();
  c.eps_smooth = j.at("eps_smooth").get<double>();
  c.optimizer = j.at("optimizer").get<std::string>() == "adam" ? OptimizerKind::Adam
                                                               : OptimizerKind::Sgd;
  return c;
}

}  // namespace

std::string serialize_generator(const GeneratorArtifact& artifact) {
  json j;
  j["format"] = kFormat;
  j["version"] = kVersion;
  j["kind"] = artifact.kind;
  j["model"] = artifact.model_id;
  j["training"] = training_to_json(artifact.training);
  const SensorSupport* support = nullptr;
  if (artifact.kind == "fnn" && artifact.fnn) {
    j["frame"] = to_string(artifact.fnn->frame);
    j["layers"] = mlp_to_json(artifact.fnn->net);
    support = &artifact.fnn->support;
  } else if (artifact.kind == "dfnn" && artifact.dfnn) {
    j["frame"] = to_string(artifact.dfnn->frame);
    j["layers"] = mlp_to_json(artifact.dfnn->net);
    j["readout"] = matrix_to_json(artifact.dfnn->W.value());
    support = &artifact.dfnn->support;
  } else {
    throw ContractError("serialize_generator: artifact kind and payload disagree");
  }
  std::vector<int> one_based;
  for (int i : support->indices()) one_based.push_back(i + 1);
  j["support"] = one_based;
  // dump() uses shortest round-trip formatting for doubles.
  return j.dump(1);
}

GeneratorArtifact deserialize_generator(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw InputError(std::string("generator artifact is not valid JSON: ") + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != kFormat) {
      throw InputError("not a generator artifact");
    }
    if (j.at("version").get<int>() != kVersion) {
      throw InputError("unsupported generator artifact version " +
                       std::to_string(j.at("version").get<int>()));
    }
    GeneratorArtifact a;
    a.kind = j.at("kind").get<std::string>();
    a.model_id = j.at("model").get<std::string>();
    a.training = training_from_json(j.at("training"));
    const InputFrame frame = input_frame_from_string(j.at("frame").get<std::string>());
    ad::Mlp net = mlp_from_json(j.at("layers"));
    std::vector<int> support;
    for (int i : j.at("support").get<std::vector<int>>()) support.push_back(i - 1);
    if (a.kind == "fnn") {
      const int p = net.output_dim();
      a.fnn = FnnGenerator{std::move(net), SensorSupport::from_indices(support, p), frame};
    } else if (a.kind == "dfnn") {
      MatrixXd W = matrix_from_json(j.at("readout"));
      if (W.cols() != net.output_dim()) {
        throw InputError("generator artifact: read-out does not match latent size");
      }
      const int p = static_cast<int>(W.rows());
      a.dfnn = DfnnGenerator{std::move(net), Tensor::parameter(std::move(W)),
                             SensorSupport::from_indices(support, p), frame};
    } else {
      throw InputError("generator artifact: unknown kind '" + a.kind + "'");
    }
    return a;
  } catch (const json::exception& e) {
    throw InputError(std::string("generator artifact is malformed: ") + e.what());
  }
}

void save_generator(const GeneratorArtifact& artifact, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << serialize_generator(artifact) << '\n';
  if (!out) throw IoError("failed writing '" + path + "'");
}

GeneratorArtifact load_generator(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return deserialize_generator(ss.str());
}

}  // namespace cpsa
