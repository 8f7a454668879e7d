#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "aufa/adaptation.hpp"
#include "aufa/connectome.hpp"
#include "aufa/encoder.hpp"
#include "aufa/evalreport.hpp"
#include "aufa/model.hpp"
#include "aufa/rng.hpp"

#include "json.hpp"

namespace aufa {

struct GammaPolicy {
  enum class Kind { Fixed, Uniform };
  Kind kind = Kind::Uniform;
  double value = 0.0;  // Fixed
  double max = 0.5;    // Uniform(0, max)

  static GammaPolicy fixed(double v) { return {Kind::Fixed, v, 0.0}; }
  static GammaPolicy uniform(double max) { return {Kind::Uniform, 0.0, max}; }

  double draw(Rng& rng) const;
  void validate() const;
};

struct TrainConfig {
  double lr = 1e-5;
  std::size_t epochs_pretrain = 15;
  std::size_t epochs_adapt = 30;
  std::size_t batch_size = 32;
  LossWeights weights;       // lambda1 (mmd), lambda2 (aug)
  double epsilon = 0.8;      // confidence threshold
  GammaPolicy gamma;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_head = 0;
  std::size_t ffn_hidden = 256;
  double ln_eps = 1e-5;
  std::size_t classifier_hidden = 4096;
  // Evaluate held-out target labels after every epoch (never used for
  // training, only logged).
  bool eval_each_epoch = true;

  void validate() const;
  EncoderConfig encoder_config(std::size_t n_rois) const;
};

// Field names mirror TrainConfig; unknown keys are rejected.
nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

struct OptimizerState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  std::uint64_t t = 0;
};

OptimizerState init_optimizer(const std::vector<diff::Parameter*>& params);

struct AdamConfig {
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One bias-corrected Adam update from the parameters' current gradients.
void adam_step(const std::vector<diff::Parameter*>& params, OptimizerState& state, const AdamConfig& cfg);

// A training step's subjects. partner[i] is the position, within `target`,
// of the subject mixed into target[i]; partner[i] != i always.
struct PairedBatch {
  std::vector<std::size_t> source;
  std::vector<std::size_t> target;
  std::vector<std::size_t> partner;
};

// Class-balanced source batches (within +-1) for global epoch `epoch`:
// floor(n / B) batches, the ragged remainder dropped.
std::vector<std::vector<std::size_t>> source_epoch_batches(const std::vector<int>& labels, std::size_t batch_size,
                                                           std::uint64_t seed, std::size_t epoch);

// Target batches of one pass: every subject at most once, floor(n / B)
// batches, the ragged remainder dropped.
std::vector<std::vector<std::size_t>> target_pass_batches(std::size_t n_target, std::size_t batch_size,
                                                          std::uint64_t seed, std::size_t pass);

// Uniformly random cyclic permutation of [0, n): never a fixed point.
std::vector<std::size_t> random_derangement(std::size_t n, Rng& rng);

// Batches for global epoch `epoch`. Target batches come from a continuous
// stream of passes indexed by the global adaptation step, so the source
// sequence is the same whether or not a target is present.
std::vector<PairedBatch> sample_paired_batches(const Dataset& source, const Dataset& target, std::size_t batch_size,
                                               std::uint64_t seed, std::size_t epoch, std::uint64_t first_step);

// One adaptation step's losses on a tape bound to the model. L_M is
// computed whenever the target batch is encoded; the augmented pass runs
// only when L_A can be nonzero.
struct StepGraph {
  diff::Value loss, l_c, l_m, l_a;
  double kept_fraction = 0.0;
};

StepGraph adaptation_graph(const BoundModel& m, const Dataset& source, const std::vector<int>& source_labels,
                           const Dataset& target, const PairedBatch& batch, std::size_t layer, double gamma,
                           const TrainConfig& cfg);

struct EpochRecord {
  std::string stage;  // "pretrain" or "adapt"
  std::size_t epoch = 0;  // global epoch index
  std::size_t steps = 0;
  double loss_c = 0.0;
  double loss_m = 0.0;
  double loss_a = 0.0;
  double loss = 0.0;
  double kept_fraction = 0.0;
  double gamma_mean = 0.0;
  std::optional<double> target_accuracy;
  std::optional<double> target_auc;
};

struct RunLog {
  std::vector<EpochRecord> epochs;
};

nlohmann::json to_json(const EpochRecord& r);
void write_run_log(const std::filesystem::path& path, const RunLog& log);

struct TrainState {
  Model model;
  OptimizerState optimizer;
  std::size_t epochs_done = 0;
};

TrainState init_train_state(const TrainConfig& config, std::size_t n_rois);

struct TrainOutcome {
  TrainState state;
  RunLog log;
};

// Stage 1: minimizes source cross-entropy for config.epochs_pretrain epochs,
// continuing from `start` (epochs and optimizer state carry over).
// `eval` is an optional labeled set whose accuracy is only logged.
TrainOutcome pretrain(TrainState start, const Dataset& source, const TrainConfig& config,
                      const Dataset* eval = nullptr);

// Stage 2: minimizes L_C + lambda1 L_M + lambda2 L_A for config.epochs_adapt
// epochs. Target labels, if any, are ignored.
TrainOutcome adapt(TrainState start, const Dataset& source, const Dataset& target, const TrainConfig& config,
                   const Dataset* eval = nullptr);

// Checkpoint: {"format", "config", "encoder", "classifier", "epochs_done",
// "params": {name: {"shape": [r, c], "data": [...]}}, "optimizer": {...}}.
void save_checkpoint(const std::filesystem::path& path, const TrainConfig& config, const TrainState& state);

struct LoadedCheckpoint {
  TrainConfig config;
  TrainState state;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

// Variants sharing one pretrained model: "pretrain-only", then adaptation
// with "AUFA-C" (L_C), "AUFA-AUG" (L_C + L_A), "AUFA-MMD" (L_C + L_M) and
// "AUFA" (all three, at config.weights). Target labels are used for
// scoring only.
struct AblationRow {
  std::string variant;
  MetricsReport metrics;
  double seconds = 0.0;
};

std::vector<AblationRow> run_ablation(const Dataset& source, const Dataset& target, const TrainConfig& config);

}  // namespace aufa
