#include "ldr/trainer.hpp"

#include <cmath>

namespace ldr {

using ad::Graph;
using ad::Var;

CeHeads init_ce_heads(Index feature_dim, int num_classes, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(feature_dim));
  std::uniform_real_distribution<double> u(-bound, bound);
  auto fill = [&](Index r, Index c) {
    Matrix m(r, c);
    for (Index j = 0; j < c; ++j)
      for (Index i = 0; i < r; ++i) m(i, j) = u(rng);
    return m;
  };
  CeHeads h;
  h.w = fill(feature_dim, num_classes);
  h.disc_w = fill(num_classes, feature_dim);
  h.disc_b = Matrix::Zero(num_classes, 1);
  return h;
}

std::vector<ParamRef> player_params(Model& model, Player player) {
  using namespace param_tag;
  std::vector<ParamRef> out;
  NetParams& net = player == Player::Encoder ? model.encoder : model.decoder;
  const std::uint32_t wtag = player == Player::Encoder ? kEncoderWeight : kDecoderWeight;
  const std::uint32_t btag = player == Player::Encoder ? kEncoderBias : kDecoderBias;
  for (std::size_t l = 0; l < net.depth(); ++l) {
    out.push_back({wtag, static_cast<std::uint32_t>(l), &net.weights[l]});
    if (net.layers[l].bias) out.push_back({btag, static_cast<std::uint32_t>(l), &net.biases[l]});
  }
  if (player == Player::Encoder && model.heads) {
    out.push_back({kHeadW, 0, &model.heads->w});
    out.push_back({kHeadDiscW, 0, &model.heads->disc_w});
    out.push_back({kHeadDiscB, 0, &model.heads->disc_b});
  }
  return out;
}

void TrainConfig::validate(int num_classes) const {
  if (!(lr > 0.0) || !(epsilon_sq > 0.0) || !(adam_eps > 0.0)) throw UsageError("rates must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw UsageError("Adam betas must lie in [0, 1)");
  if (iterations < 0) throw UsageError("iterations must be non-negative");
  if (batch_size != 0 && batch_size < num_classes) {
    throw UsageError("batch size " + std::to_string(batch_size) + " is smaller than the class count " +
                     std::to_string(num_classes));
  }
  if (encoder_steps < 1 || decoder_steps < 1) throw UsageError("each player needs at least one inner step");
  if (eval_interval < 1) throw UsageError("eval interval must be >= 1");
  if (collapse_window < 1) throw UsageError("collapse window must be >= 1");
}

void AdamState::init(const std::vector<ParamRef>& params) {
  m.clear();
  v.clear();
  for (const ParamRef& p : params) {
    m.push_back(Matrix::Zero(p.value->rows(), p.value->cols()));
    v.push_back(Matrix::Zero(p.value->rows(), p.value->cols()));
  }
  step = 0;
}

void adam_update(const std::vector<ParamRef>& params, const std::vector<Matrix>& grads, AdamState& state, double lr,
                 double beta1, double beta2, double eps, double direction) {
  if (grads.size() != params.size() || state.m.size() != params.size()) {
    throw UsageError("adam_update: parameter, gradient and moment lists differ in length");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(beta1, t);
  const double c2 = 1.0 - std::pow(beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& m = state.m[i];
    Matrix& v = state.v[i];
    const Matrix& g = grads[i];
    m = beta1 * m + (1.0 - beta1) * g;
    v = beta2 * v + (1.0 - beta2) * g.cwiseProduct(g);
    const auto step = (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
    params[i].value->array() += direction * lr * step;
  }
}

double learning_rate(const TrainConfig& config, Index iteration) {
  if (config.lr_decay == LrDecay::None || config.iterations == 0) return config.lr;
  return config.lr * (1.0 - static_cast<double>(iteration) / static_cast<double>(config.iterations));
}

namespace {

struct BoundModel {
  NetVars theta;
  NetVars eta;
  CeHeadVars heads;
  bool has_heads = false;
};

BoundModel bind_model(Graph& g, const Model& model, bool encoder_trainable, bool decoder_trainable) {
  BoundModel b;
  b.theta = bind_net(g, model.encoder, encoder_trainable);
  b.eta = bind_net(g, model.decoder, decoder_trainable);
  if (model.heads) {
    auto leaf = [&](const Matrix& m, const char* name) {
      return encoder_trainable ? g.parameter(m, name) : g.constant(m, name);
    };
    b.heads = {leaf(model.heads->w, "head.w"), leaf(model.heads->disc_w, "head.disc_w"),
               leaf(model.heads->disc_b, "head.disc_b")};
    b.has_heads = true;
  }
  return b;
}

std::vector<Var> player_vars(const BoundModel& b, const Model& model, Player player) {
  std::vector<Var> out;
  const NetVars& vars = player == Player::Encoder ? b.theta : b.eta;
  const NetParams& net = player == Player::Encoder ? model.encoder : model.decoder;
  for (std::size_t l = 0; l < net.depth(); ++l) {
    out.push_back(vars.weights[l]);
    if (net.layers[l].bias) out.push_back(vars.biases[l]);
  }
  if (player == Player::Encoder && b.has_heads) {
    out.push_back(b.heads.w);
    out.push_back(b.heads.disc_w);
    out.push_back(b.heads.disc_b);
  }
  return out;
}

double value_or_zero(Var v) { return v.valid() ? v.scalar() : 0.0; }

Index validated_batch_size(const TrainConfig& config, const Dataset& data) {
  config.validate(data.num_classes);
  if (config.batch_size > 0) return config.batch_size;
  return std::max<Index>(static_cast<Index>(data.train.size()), data.num_classes);
}

}  // namespace

StepMetrics evaluate_terms(const Model& model, const Matrix& x, const Membership& m, Objective variant,
                           double epsilon_sq) {
  Graph g;
  const BoundModel b = bind_model(g, model, false, false);
  const Var xin = g.constant(x, "x");
  const ClosedLoop loop = closed_loop(model.encoder, b.theta, model.decoder, b.eta, xin);
  const ObjectiveTerms all = objective_multi(loop.z, loop.z_hat, m, epsilon_sq);
  Var total = all.total;
  if (variant != Objective::Multi && variant != Objective::AblationI) {
    total = build_objective(variant, loop.z, loop.z_hat, m, epsilon_sq, b.has_heads ? &b.heads : nullptr).total;
  }
  g.forward();
  return {all.delta_r_z.scalar(), all.delta_r_zhat.scalar(), all.pairwise_sum.scalar(), total.scalar()};
}

Model init_model(std::vector<LayerSpec> encoder_layers, std::vector<LayerSpec> decoder_layers, Objective objective,
                 int num_classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Model model;
  model.encoder = init_net(NetRole::Encoder, std::move(encoder_layers), rng);
  model.decoder = init_net(NetRole::Decoder, std::move(decoder_layers), rng);
  if (objective == Objective::CrossEntropy) model.heads = init_ce_heads(model.encoder.output_dim(), num_classes, rng);
  return model;
}

Trainer::Trainer(Model model, TrainConfig config, const Dataset& data)
    : model_(std::move(model)),
      config_(config),
      data_(&data),
      batches_(data, data.train,
               validated_batch_size(config, data), config.seed),
      start_(std::chrono::steady_clock::now()) {
  if (config_.objective == Objective::CrossEntropy && !model_.heads) {
    throw UsageError("cross-entropy objective needs classifier heads in the model");
  }
  if (model_.encoder.input_dim() != data.dim()) {
    throw ShapeError("encoder expects " + std::to_string(model_.encoder.input_dim()) + "-dim samples, data has " +
                     std::to_string(data.dim()));
  }
  encoder_adam_.init(player_params(model_, Player::Encoder));
  decoder_adam_.init(player_params(model_, Player::Decoder));
}

void Trainer::set_iteration(Index iteration) {
  iteration_ = iteration;
  batches_ = StratifiedBatches(*data_, data_->train, validated_batch_size(config_, *data_),
                               config_.seed + static_cast<std::uint64_t>(iteration));
}

std::vector<Matrix> Trainer::player_gradient(Player player, const Batch& batch, const Membership& m,
                                             StepMetrics* metrics) {
  Graph g;
  const BoundModel b = bind_model(g, model_, player == Player::Encoder, player == Player::Decoder);
  const Var x = g.constant(batch.x, "x");
  const ClosedLoop loop = closed_loop(model_.encoder, b.theta, model_.decoder, b.eta, x);
  const ObjectiveTerms terms =
      build_objective(config_.objective, loop.z, loop.z_hat, m, config_.epsilon_sq, b.has_heads ? &b.heads : nullptr);
  g.forward();
  if (metrics != nullptr) {
    metrics->delta_r_z = value_or_zero(terms.delta_r_z);
    metrics->delta_r_zhat = value_or_zero(terms.delta_r_zhat);
    metrics->pairwise_sum = value_or_zero(terms.pairwise_sum);
    metrics->total = terms.total.scalar();
  }
  const ad::Gradient grad = g.backward(terms.total);
  std::vector<Matrix> out;
  bool finite = true;
  for (Var v : player_vars(b, model_, player)) {
    out.push_back(grad[v]);
    finite = finite && out.back().allFinite();
  }
  if (!finite) {
    std::string culprit = "total";
    const std::pair<const char*, Var> parts[] = {{"dR(Z)", terms.delta_r_z},
                                                 {"dR(Z_hat)", terms.delta_r_zhat},
                                                 {"sum_j dR(Z_j, Z_hat_j)", terms.pairwise_sum},
                                                 {"CE(Z)", terms.ce_z},
                                                 {"CE(Z_hat)", terms.ce_zhat},
                                                 {"discriminators", terms.discriminator}};
    for (const auto& [name, var] : parts) {
      if (!var.valid() || !g.requires_grad(var)) continue;
      const ad::Gradient part = g.backward(var);
      bool ok = true;
      for (Var v : player_vars(b, model_, player)) ok = ok && part[v].allFinite();
      if (!ok) {
        culprit = name;
        break;
      }
    }
    throw NumericalError("non-finite " + std::string(player == Player::Encoder ? "encoder" : "decoder") +
                         " gradient at iteration " + std::to_string(iteration_) + " from term " + culprit);
  }
  return out;
}

StepMetrics Trainer::gda_step(const Batch& batch) {
  const Membership m(batch.labels, data_->num_classes);
  const double lr = learning_rate(config_, iteration_);
  update_spectral_estimates(model_.encoder);
  update_spectral_estimates(model_.decoder);

  StepMetrics metrics;
  const auto enc_params = player_params(model_, Player::Encoder);
  for (int s = 0; s < config_.encoder_steps; ++s) {
    const auto grads = player_gradient(Player::Encoder, batch, m, s == 0 ? &metrics : nullptr);
    adam_update(enc_params, grads, encoder_adam_, lr, config_.beta1, config_.beta2, config_.adam_eps, +1.0);
  }
  const auto dec_params = player_params(model_, Player::Decoder);
  for (int s = 0; s < config_.decoder_steps; ++s) {
    const auto grads = player_gradient(Player::Decoder, batch, m, nullptr);
    adam_update(dec_params, grads, decoder_adam_, lr, config_.beta1, config_.beta2, config_.adam_eps, -1.0);
  }
  ++iteration_;
  return metrics;
}

TrainRecord Trainer::evaluate() const {
  const std::vector<Index> train = data_->class_sorted(data_->train);
  const Batch tb = make_batch(*data_, train);
  const Membership m(tb.labels, data_->num_classes);

  TrainRecord rec;
  rec.iteration = iteration_;
  rec.terms = evaluate_terms(model_, tb.x, m, config_.objective, config_.epsilon_sq);
  rec.lr = learning_rate(config_, std::min(iteration_, config_.iterations));

  const Matrix z = encode_values(model_.encoder, tb.x);
  const Matrix z_hat = encode_values(model_.encoder, decode_values(model_.decoder, z));
  const AlignmentReport rep = alignment_heatmap(z, z_hat, tb.labels, data_->num_classes);
  rec.on_block_mean = rep.on_block_mean;
  rec.off_block_mean = rep.off_block_mean;

  const auto models = fit_subspaces(z, tb.labels, data_->num_classes, config_.rank_rule);
  rec.nsc_train = accuracy(classify_nearest_subspace(z, models), tb.labels);
  if (!data_->heldout.empty()) {
    const Batch hb = make_batch(*data_, data_->heldout);
    rec.nsc_heldout = accuracy(classify_nearest_subspace(encode_values(model_.encoder, hb.x), models), hb.labels);
  } else {
    rec.nsc_heldout = rec.nsc_train;
  }
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  return rec;
}

void Trainer::record_eval(const EvalHook& on_eval) {
  const TrainRecord rec = evaluate();
  log_.records.push_back(rec);
  if (rec.terms.delta_r_zhat < 0.01 * rec.terms.delta_r_z) {
    ++collapse_run_;
    if (collapse_run_ >= config_.collapse_window && !log_.collapse_flagged) {
      log_.collapse_flagged = true;
      log_.collapse_iteration = rec.iteration;
    }
  } else {
    collapse_run_ = 0;
  }
  if (on_eval) on_eval(rec);
}

const TrainLog& Trainer::train(const EvalHook& on_eval, const CheckpointHook& on_checkpoint) {
  start_ = std::chrono::steady_clock::now();
  record_eval(on_eval);
  const bool full_batch = config_.batch_size == 0;
  const Batch full = full_batch ? make_batch(*data_, data_->class_sorted(data_->train)) : Batch{};
  while (iteration_ < config_.iterations) {
    if (full_batch) {
      gda_step(full);
    } else {
      gda_step(batches_.next());
    }
    if (iteration_ % config_.eval_interval == 0 || iteration_ == config_.iterations) {
      record_eval(on_eval);
      if (on_checkpoint) on_checkpoint(*this);
    }
  }
  return log_;
}

}  // namespace ldr
