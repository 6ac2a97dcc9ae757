#pragma once

// Two-player minimax training by gradient descent-ascent.
//
// Each outer iteration first takes Adam ascent steps on T over the encoder
// side (theta, plus the classifier heads of the cross-entropy baseline) with
// the decoder frozen, then Adam descent steps on T over the decoder (eta) with
// the encoder frozen. Both players share one learning rate schedule.

#include "ldr/analysis.hpp"
#include "ldr/data.hpp"
#include "ldr/nets.hpp"
#include "ldr/rate.hpp"

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace ldr {

struct CeHeads {
  Matrix w;       // d x k class projection
  Matrix disc_w;  // k x d, row j is discriminator j
  Matrix disc_b;  // k x 1
};

CeHeads init_ce_heads(Index feature_dim, int num_classes, std::mt19937_64& rng);

struct Model {
  NetParams encoder;
  NetParams decoder;
  std::optional<CeHeads> heads;
};

enum class Player : std::uint32_t { Encoder = 1, Decoder = 2 };

// Stable identity of one trainable matrix; used for Adam slots and checkpoints.
struct ParamRef {
  std::uint32_t tag = 0;
  std::uint32_t layer = 0;
  Matrix* value = nullptr;
};

namespace param_tag {
inline constexpr std::uint32_t kEncoderWeight = 0x01;
inline constexpr std::uint32_t kEncoderBias = 0x02;
inline constexpr std::uint32_t kEncoderSnVector = 0x03;
inline constexpr std::uint32_t kEncoderSnSigma = 0x04;
inline constexpr std::uint32_t kDecoderWeight = 0x11;
inline constexpr std::uint32_t kDecoderBias = 0x12;
inline constexpr std::uint32_t kDecoderSnVector = 0x13;
inline constexpr std::uint32_t kDecoderSnSigma = 0x14;
inline constexpr std::uint32_t kHeadW = 0x21;
inline constexpr std::uint32_t kHeadDiscW = 0x22;
inline constexpr std::uint32_t kHeadDiscB = 0x23;
inline constexpr std::uint32_t kAdamFirstMoment = 0x100;   // or-ed with a parameter tag
inline constexpr std::uint32_t kAdamSecondMoment = 0x200;  // or-ed with a parameter tag
inline constexpr std::uint32_t kAdamStep = 0x300;          // or-ed with the Player value
}  // namespace param_tag

// Trainable matrices of one player in a fixed order.
std::vector<ParamRef> player_params(Model& model, Player player);

enum class LrDecay { Linear, None };

struct TrainConfig {
  Objective objective = Objective::Multi;
  double epsilon_sq = kDefaultEpsilonSq;
  double lr = 1.5e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  Index iterations = 0;
  Index batch_size = 0;  // 0 = whole training split every step
  LrDecay lr_decay = LrDecay::Linear;
  int encoder_steps = 1;
  int decoder_steps = 1;
  Index eval_interval = 100;
  Index collapse_window = 5;
  std::uint64_t seed = 1;
  RankRule rank_rule;

  void validate(int num_classes) const;
};

// Adam moments for one player, aligned with player_params().
struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  std::uint64_t step = 0;

  void init(const std::vector<ParamRef>& params);
};

// One Adam step. direction = +1 ascends the objective, -1 descends it.
void adam_update(const std::vector<ParamRef>& params, const std::vector<Matrix>& grads, AdamState& state, double lr,
                 double beta1, double beta2, double eps, double direction);

// lr0 * (1 - t / T) under linear decay, lr0 otherwise.
double learning_rate(const TrainConfig& config, Index iteration);

struct StepMetrics {
  double delta_r_z = 0.0;
  double delta_r_zhat = 0.0;
  double pairwise_sum = 0.0;
  double total = 0.0;
};

struct TrainRecord {
  Index iteration = 0;
  StepMetrics terms;
  double lr = 0.0;
  double off_block_mean = 0.0;
  double on_block_mean = 0.0;
  double nsc_train = 0.0;
  double nsc_heldout = 0.0;
  double wall_seconds = 0.0;
};

struct TrainLog {
  std::vector<TrainRecord> records;
  bool collapse_flagged = false;
  Index collapse_iteration = -1;
};

// Evaluates all objective terms (whatever the variant) on a batch.
StepMetrics evaluate_terms(const Model& model, const Matrix& x, const Membership& m, Objective variant,
                           double epsilon_sq);

Model init_model(std::vector<LayerSpec> encoder_layers, std::vector<LayerSpec> decoder_layers, Objective objective,
                 int num_classes, std::uint64_t seed);

class Trainer {
 public:
  using EvalHook = std::function<void(const TrainRecord&)>;
  using CheckpointHook = std::function<void(const Trainer&)>;

  Trainer(Model model, TrainConfig config, const Dataset& data);

  // One outer GDA iteration on the batch at the current iteration counter.
  StepMetrics gda_step(const Batch& batch);

  // Metrics on the training split, NSC accuracy on train and held-out.
  TrainRecord evaluate() const;

  // Runs until config.iterations. Evaluates at the current iteration, then
  // every eval_interval steps and at the end. The checkpoint hook fires at the
  // same points (except the initial evaluation).
  const TrainLog& train(const EvalHook& on_eval = {}, const CheckpointHook& on_checkpoint = {});

  const Model& model() const { return model_; }
  Model& model() { return model_; }
  const TrainConfig& config() const { return config_; }
  const TrainLog& log() const { return log_; }
  Index iteration() const { return iteration_; }
  AdamState& adam(Player p) { return p == Player::Encoder ? encoder_adam_ : decoder_adam_; }
  const AdamState& adam(Player p) const { return p == Player::Encoder ? encoder_adam_ : decoder_adam_; }

  // Resume support: sets the iteration counter and re-seeds the batch stream.
  void set_iteration(Index iteration);

 private:
  std::vector<Matrix> player_gradient(Player player, const Batch& batch, const Membership& m,
                                      StepMetrics* metrics);
  void record_eval(const EvalHook& on_eval);

  Model model_;
  TrainConfig config_;
  const Dataset* data_;
  AdamState encoder_adam_;
  AdamState decoder_adam_;
  StratifiedBatches batches_;
  Index iteration_ = 0;
  TrainLog log_;
  Index collapse_run_ = 0;
  std::chrono::steady_clock::time_point start_;
};

}  // namespace ldr
