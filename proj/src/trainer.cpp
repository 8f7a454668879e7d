#include "aufa/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <set>

#include "aufa/error.hpp"
#include "aufa/evalreport.hpp"
#include "aufa/kernels.hpp"

namespace aufa {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

enum : std::uint64_t { kSourceStream = 11, kTargetStream = 12, kPartnerStream = 13, kAugStream = 14 };

[[noreturn]] void bad_config(const std::string& what) {
  throw Error(ErrorKind::InvalidConfig, "train config: " + what);
}

}  // namespace

double GammaPolicy::draw(Rng& rng) const {
  if (kind == Kind::Fixed) return value;
  if (max == 0.0) return 0.0;
  return std::uniform_real_distribution<double>(0.0, max)(rng);
}

void GammaPolicy::validate() const {
  if (kind == Kind::Fixed && !(value >= 0.0 && value <= 1.0)) bad_config("fixed gamma must lie in [0, 1]");
  if (kind == Kind::Uniform && !(max >= 0.0 && max <= 1.0)) bad_config("gamma max must lie in [0, 1]");
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) bad_config("lr must be > 0");
  if (batch_size < 2) bad_config("batch_size must be >= 2");
  if (!(weights.mmd >= 0.0) || !(weights.aug >= 0.0)) bad_config("lambda1 and lambda2 must be >= 0");
  if (!(epsilon > 0.5 && epsilon < 1.0)) bad_config("epsilon must lie in (0.5, 1)");
  gamma.validate();
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) bad_config("adam_beta1 must lie in [0, 1)");
  if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) bad_config("adam_beta2 must lie in [0, 1)");
  if (!(adam_eps > 0.0)) bad_config("adam_eps must be > 0");
  if (n_layers == 0 || n_heads == 0) bad_config("n_layers and n_heads must be >= 1");
  if (ffn_hidden == 0 || classifier_hidden == 0) bad_config("hidden widths must be >= 1");
  if (!(ln_eps > 0.0)) bad_config("ln_eps must be > 0");
}

EncoderConfig TrainConfig::encoder_config(std::size_t n_rois) const {
  EncoderConfig e;
  e.n_layers = n_layers;
  e.n_heads = n_heads;
  e.d_model = n_rois;
  e.d_head = d_head;
  e.ffn_hidden = ffn_hidden;
  e.ln_eps = ln_eps;
  e.validate();
  return e;
}

json to_json(const TrainConfig& c) {
  json gamma = c.gamma.kind == GammaPolicy::Kind::Fixed ? json{{"kind", "fixed"}, {"value", c.gamma.value}}
                                                        : json{{"kind", "uniform"}, {"max", c.gamma.max}};
  return json{{"lr", c.lr},
              {"epochs_pretrain", c.epochs_pretrain},
              {"epochs_adapt", c.epochs_adapt},
              {"batch_size", c.batch_size},
              {"lambda1", c.weights.mmd},
              {"lambda2", c.weights.aug},
              {"epsilon", c.epsilon},
              {"gamma_policy", gamma},
              {"adam_beta1", c.adam_beta1},
              {"adam_beta2", c.adam_beta2},
              {"adam_eps", c.adam_eps},
              {"seed", c.seed},
              {"n_layers", c.n_layers},
              {"n_heads", c.n_heads},
              {"d_head", c.d_head},
              {"ffn_hidden", c.ffn_hidden},
              {"ln_eps", c.ln_eps},
              {"classifier_hidden", c.classifier_hidden},
              {"eval_each_epoch", c.eval_each_epoch}};
}

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
  if (!j.is_object()) bad_config("expected a JSON object");
  static const std::set<std::string> known = {
      "lr",         "epochs_pretrain", "epochs_adapt", "batch_size", "lambda1",  "lambda2",
      "epsilon",    "gamma_policy",    "adam_beta1",   "adam_beta2", "adam_eps", "seed",
      "n_layers",   "n_heads",         "d_head",       "ffn_hidden", "ln_eps",   "classifier_hidden",
      "eval_each_epoch"};
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) bad_config("unknown field '" + key + "'");
  try {
    c.lr = j.value("lr", c.lr);
    c.epochs_pretrain = j.value("epochs_pretrain", c.epochs_pretrain);
    c.epochs_adapt = j.value("epochs_adapt", c.epochs_adapt);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.weights.mmd = j.value("lambda1", c.weights.mmd);
    c.weights.aug = j.value("lambda2", c.weights.aug);
    c.epsilon = j.value("epsilon", c.epsilon);
    if (j.contains("gamma_policy")) {
      const json& g = j["gamma_policy"];
      const std::string kind = g.at("kind").get<std::string>();
      if (kind == "fixed") {
        c.gamma = GammaPolicy::fixed(g.at("value").get<double>());
      } else if (kind == "uniform") {
        c.gamma = GammaPolicy::uniform(g.at("max").get<double>());
      } else {
        bad_config("gamma_policy.kind must be 'fixed' or 'uniform'");
      }
    }
    c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
    c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.seed = j.value("seed", c.seed);
    c.n_layers = j.value("n_layers", c.n_layers);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.d_head = j.value("d_head", c.d_head);
    c.ffn_hidden = j.value("ffn_hidden", c.ffn_hidden);
    c.ln_eps = j.value("ln_eps", c.ln_eps);
    c.classifier_hidden = j.value("classifier_hidden", c.classifier_hidden);
    c.eval_each_epoch = j.value("eval_each_epoch", c.eval_each_epoch);
  } catch (const json::exception& e) {
    bad_config(e.what());
  }
  c.validate();
  return c;
}

// ---- Adam -----------------------------------------------------------------

OptimizerState init_optimizer(const std::vector<diff::Parameter*>& params) {
  OptimizerState s;
  for (const auto* p : params) {
    s.m.emplace_back(p->value.rows(), p->value.cols());
    s.v.emplace_back(p->value.rows(), p->value.cols());
  }
  return s;
}

void adam_step(const std::vector<diff::Parameter*>& params, OptimizerState& state, const AdamConfig& cfg) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw Error(ErrorKind::DimensionMismatch, "adam_step: optimizer state does not match parameters");
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    diff::Parameter& p = *params[k];
    Matrix& m = state.m[k];
    Matrix& v = state.v[k];
    if (!p.grad.same_shape(p.value) || !m.same_shape(p.value) || !v.same_shape(p.value)) {
      throw Error(ErrorKind::DimensionMismatch, "adam_step: shape mismatch for '" + p.name + "'");
    }
    const std::size_t n = p.value.size();
    double* w = p.value.data();
    const double* g = p.grad.data();
    double* md = m.data();
    double* vd = v.data();
#pragma omp parallel for schedule(static) if (!kernels::serial() && n >= (1u << 15))
    for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(n); ++ii) {
      const auto i = static_cast<std::size_t>(ii);
      md[i] = cfg.beta1 * md[i] + (1.0 - cfg.beta1) * g[i];
      vd[i] = cfg.beta2 * vd[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = md[i] / c1;
      const double vhat = vd[i] / c2;
      w[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

// ---- batching -------------------------------------------------------------

std::vector<std::size_t> random_derangement(std::size_t n, Rng& rng) {
  if (n < 2) throw Error(ErrorKind::InvalidArgument, "random_derangement: need at least 2 elements");
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  // Sattolo's algorithm: a uniformly random single n-cycle.
  for (std::size_t i = n - 1; i > 0; --i) {
    const std::size_t j = std::uniform_int_distribution<std::size_t>(0, i - 1)(rng);
    std::swap(p[i], p[j]);
  }
  return p;
}

std::vector<std::vector<std::size_t>> source_epoch_batches(const std::vector<int>& labels, std::size_t batch_size,
                                                           std::uint64_t seed, std::size_t epoch) {
  if (labels.size() < batch_size) {
    throw Error(ErrorKind::InvalidArgument, "source dataset has " + std::to_string(labels.size()) +
                                                " subjects, fewer than the batch size " + std::to_string(batch_size));
  }
  Rng rng = make_rng(seed, {kSourceStream, epoch});
  std::vector<std::size_t> pools[2];
  for (std::size_t i = 0; i < labels.size(); ++i) pools[labels[i] == 1 ? 1 : 0].push_back(i);
  for (auto& p : pools) std::shuffle(p.begin(), p.end(), rng);

  const std::size_t steps = labels.size() / batch_size;
  std::vector<std::vector<std::size_t>> out(steps);
  std::size_t cursor[2] = {0, 0};
  for (std::size_t s = 0; s < steps; ++s) {
    // Odd batch sizes alternate which class gets the extra slot.
    std::size_t want[2] = {batch_size / 2, batch_size / 2};
    if (batch_size % 2) ++want[s % 2];
    for (int c = 0; c < 2; ++c) {
      if (pools[c].empty()) {
        want[1 - c] += want[c];
        want[c] = 0;
      }
    }
    for (int c = 0; c < 2; ++c) {
      for (std::size_t k = 0; k < want[c]; ++k) {
        out[s].push_back(pools[c][cursor[c] % pools[c].size()]);
        ++cursor[c];
      }
    }
    std::shuffle(out[s].begin(), out[s].end(), rng);
  }
  return out;
}

std::vector<std::vector<std::size_t>> target_pass_batches(std::size_t n_target, std::size_t batch_size,
                                                          std::uint64_t seed, std::size_t pass) {
  if (n_target < batch_size) {
    throw Error(ErrorKind::InvalidArgument, "target dataset has " + std::to_string(n_target) +
                                                " subjects, fewer than the batch size " + std::to_string(batch_size));
  }
  Rng rng = make_rng(seed, {kTargetStream, pass});
  std::vector<std::size_t> order(n_target);
  for (std::size_t i = 0; i < n_target; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out(n_target / batch_size);
  for (std::size_t s = 0; s < out.size(); ++s)
    out[s].assign(order.begin() + static_cast<std::ptrdiff_t>(s * batch_size),
                  order.begin() + static_cast<std::ptrdiff_t>((s + 1) * batch_size));
  return out;
}

std::vector<PairedBatch> sample_paired_batches(const Dataset& source, const Dataset& target, std::size_t batch_size,
                                               std::uint64_t seed, std::size_t epoch, std::uint64_t first_step) {
  const auto src = source_epoch_batches(source.labels(), batch_size, seed, epoch);
  const std::size_t per_pass = target.size() / std::max<std::size_t>(batch_size, 1);
  if (target.size() < batch_size) {
    throw Error(ErrorKind::InvalidArgument, "target dataset has " + std::to_string(target.size()) +
                                                " subjects, fewer than the batch size " + std::to_string(batch_size));
  }
  std::vector<PairedBatch> out;
  std::size_t cached_pass = static_cast<std::size_t>(-1);
  std::vector<std::vector<std::size_t>> pass_batches;
  for (std::size_t s = 0; s < src.size(); ++s) {
    const std::uint64_t step = first_step + s;
    const std::size_t pass = static_cast<std::size_t>(step / per_pass);
    if (pass != cached_pass) {
      pass_batches = target_pass_batches(target.size(), batch_size, seed, pass);
      cached_pass = pass;
    }
    PairedBatch b;
    b.source = src[s];
    b.target = pass_batches[static_cast<std::size_t>(step % per_pass)];
    Rng rng = make_rng(seed, {kPartnerStream, step});
    b.partner = random_derangement(batch_size, rng);
    out.push_back(std::move(b));
  }
  return out;
}

// ---- run log ----------------------------------------------------------------

json to_json(const EpochRecord& r) {
  json j{{"stage", r.stage},   {"epoch", r.epoch},   {"steps", r.steps},
         {"loss_c", r.loss_c}, {"loss_m", r.loss_m}, {"loss_a", r.loss_a},
         {"loss", r.loss},     {"kept_fraction", r.kept_fraction}, {"gamma_mean", r.gamma_mean}};
  if (r.target_accuracy) j["target_accuracy"] = *r.target_accuracy;
  if (r.target_auc) j["target_auc"] = *r.target_auc;
  return j;
}

void write_run_log(const fs::path& path, const RunLog& log) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::MissingFile, "cannot write " + path.string());
  for (const auto& r : log.epochs) out << to_json(r).dump() << '\n';
}

// ---- training ---------------------------------------------------------------

TrainState init_train_state(const TrainConfig& config, std::size_t n_rois) {
  config.validate();
  TrainState s{init_model(config.encoder_config(n_rois), config.classifier_hidden, config.seed), {}, 0};
  s.optimizer = init_optimizer(s.model.parameters());
  return s;
}

StepGraph adaptation_graph(const BoundModel& m, const Dataset& source, const std::vector<int>& source_labels,
                           const Dataset& target, const PairedBatch& batch, std::size_t layer, double gamma,
                           const TrainConfig& cfg) {
  if (batch.partner.size() != batch.target.size()) {
    throw Error(ErrorKind::DimensionMismatch, "adaptation_graph: partner list does not match the target batch");
  }
  if (layer >= m.encoder.layers.size()) throw Error(ErrorKind::InvalidArgument, "adaptation_graph: layer out of range");
  diff::Tape& tape = *m.classifier.w1.tape();
  StepGraph g;
  const BatchEncoding src = encode_batch(m, source, batch.source);
  const Prediction ps = classify(m.classifier, src.features);
  std::vector<int> y;
  for (std::size_t i : batch.source) y.push_back(source_labels.at(i));
  g.l_c = diff::cross_entropy(ps.logits, y);
  g.l_m = tape.constant(Matrix(1, 1));
  g.l_a = tape.constant(Matrix(1, 1));
  g.loss = g.l_c;
  // With both weights at zero the target batch cannot affect the update,
  // so it is not encoded at all.
  if (cfg.weights.mmd == 0.0 && cfg.weights.aug == 0.0) return g;

  const BatchEncoding tgt = encode_batch(m, target, batch.target);
  const Prediction pt = classify(m.classifier, tgt.features);
  g.l_m = mmd_loss(ps.fc_features(), pt.fc_features());
  // Rows need a confident clean prediction to pass the filter; without one
  // the augmented pass cannot contribute and is skipped.
  const FilterMask clean = confidence_filter(pt.probs.data(), pt.probs.data(), cfg.epsilon);
  if (cfg.weights.aug != 0.0 && clean.kept() > 0) {
    std::vector<diff::Value> aug_rows;
    aug_rows.reserve(batch.target.size());
    for (std::size_t i = 0; i < batch.target.size(); ++i) {
      const diff::Value& own = tgt.per_subject[i].layer_inputs[layer];
      const diff::Value& partner = tgt.per_subject[batch.partner.at(i)].layer_inputs[layer];
      aug_rows.push_back(run_layers(m.encoder, diff::lerp(own, partner, gamma), layer, false).features);
    }
    const Prediction pa = classify(m.classifier, diff::concat_rows(aug_rows));
    const FilterMask mask = confidence_filter(pt, pa, cfg.epsilon);
    g.l_a = self_opt_loss(pt, pa, mask);
    g.kept_fraction = mask.kept_fraction();
  }
  g.loss = joint_loss(g.l_c, g.l_m, g.l_a, cfg.weights);
  return g;
}

namespace {

struct StepResult {
  double lc = 0.0, lm = 0.0, la = 0.0, loss = 0.0, kept = 0.0, gamma = 0.0;
};

std::vector<int> gather(const std::vector<int>& labels, const std::vector<std::size_t>& idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(labels[i]);
  return out;
}

AdamConfig adam_config(const TrainConfig& c) { return {c.lr, c.adam_beta1, c.adam_beta2, c.adam_eps}; }

StepResult source_step(TrainState& st, const Dataset& source, const std::vector<int>& labels,
                       const std::vector<std::size_t>& batch, const TrainConfig& cfg) {
  st.model.zero_grad();
  diff::Tape tape;
  const BoundModel bm = bind_model(tape, st.model);
  const BatchEncoding enc = encode_batch(bm, source, batch);
  const Prediction p = classify(bm.classifier, enc.features);
  const auto y = gather(labels, batch);
  const diff::Value lc = diff::cross_entropy(p.logits, y);
  tape.backward(lc);
  auto params = st.model.parameters();
  adam_step(params, st.optimizer, adam_config(cfg));
  StepResult r;
  r.lc = r.loss = lc.item();
  return r;
}

StepResult adapt_step(TrainState& st, const Dataset& source, const std::vector<int>& labels, const Dataset& target,
                      const PairedBatch& batch, const TrainConfig& cfg) {
  const std::uint64_t step = st.optimizer.t;
  Rng rng = make_rng(cfg.seed, {kAugStream, step});
  const std::size_t layer =
      std::uniform_int_distribution<std::size_t>(0, st.model.encoder.config.n_layers - 1)(rng);
  const double gamma = cfg.gamma.draw(rng);

  st.model.zero_grad();
  diff::Tape tape;
  const BoundModel bm = bind_model(tape, st.model);
  const StepGraph g = adaptation_graph(bm, source, labels, target, batch, layer, gamma, cfg);
  tape.backward(g.loss);
  auto params = st.model.parameters();
  adam_step(params, st.optimizer, adam_config(cfg));
  return {g.l_c.item(), g.l_m.item(), g.l_a.item(), g.loss.item(), g.kept_fraction, gamma};
}

void evaluate_into(EpochRecord& rec, const TrainState& st, const Dataset* eval, const TrainConfig& cfg) {
  if (!eval || !cfg.eval_each_epoch || !eval->fully_labeled() || eval->size() == 0) return;
  const Inference inf = infer(st.model, *eval);
  const auto y = eval->labels();
  std::vector<int> pred(y.size());
  std::vector<double> score(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    score[i] = inf.probs(i, 1);
    pred[i] = inf.probs(i, 1) > inf.probs(i, 0) ? 1 : 0;
  }
  rec.target_accuracy = hard_metrics(pred, y).accuracy;
  const bool both = std::count(y.begin(), y.end(), 1) > 0 && std::count(y.begin(), y.end(), 0) > 0;
  if (both) rec.target_auc = auc(score, y);
}

void accumulate(EpochRecord& rec, const StepResult& r) {
  rec.loss_c += r.lc;
  rec.loss_m += r.lm;
  rec.loss_a += r.la;
  rec.loss += r.loss;
  rec.kept_fraction += r.kept;
  rec.gamma_mean += r.gamma;
  ++rec.steps;
}

void finish(EpochRecord& rec) {
  if (rec.steps == 0) return;
  const double n = static_cast<double>(rec.steps);
  rec.loss_c /= n;
  rec.loss_m /= n;
  rec.loss_a /= n;
  rec.loss /= n;
  rec.kept_fraction /= n;
  rec.gamma_mean /= n;
  for (double v : {rec.loss_c, rec.loss_m, rec.loss_a, rec.loss}) {
    if (!std::isfinite(v)) throw Error(ErrorKind::InvalidArgument, "training diverged: non-finite loss");
  }
}

void check_model_matches(const TrainState& st, const Dataset& ds) {
  if (st.model.encoder.config.d_model != ds.n_rois) {
    throw Error(ErrorKind::DimensionMismatch, "model expects " + std::to_string(st.model.encoder.config.d_model) +
                                                  " ROIs, dataset has " + std::to_string(ds.n_rois));
  }
}

}  // namespace

TrainOutcome pretrain(TrainState start, const Dataset& source, const TrainConfig& config, const Dataset* eval) {
  config.validate();
  check_model_matches(start, source);
  const std::vector<int> labels = source.labels();
  TrainOutcome out{std::move(start), {}};
  TrainState& st = out.state;
  for (std::size_t e = 0; e < config.epochs_pretrain; ++e) {
    EpochRecord rec;
    rec.stage = "pretrain";
    rec.epoch = st.epochs_done;
    for (const auto& batch : source_epoch_batches(labels, config.batch_size, config.seed, st.epochs_done)) {
      accumulate(rec, source_step(st, source, labels, batch, config));
    }
    finish(rec);
    ++st.epochs_done;
    evaluate_into(rec, st, eval, config);
    out.log.epochs.push_back(rec);
  }
  return out;
}

TrainOutcome adapt(TrainState start, const Dataset& source, const Dataset& target, const TrainConfig& config,
                   const Dataset* eval) {
  config.validate();
  check_model_matches(start, source);
  check_model_matches(start, target);
  const std::vector<int> labels = source.labels();
  TrainOutcome out{std::move(start), {}};
  TrainState& st = out.state;
  for (std::size_t e = 0; e < config.epochs_adapt; ++e) {
    EpochRecord rec;
    rec.stage = "adapt";
    rec.epoch = st.epochs_done;
    const auto batches =
        sample_paired_batches(source, target, config.batch_size, config.seed, st.epochs_done, st.optimizer.t);
    for (const auto& batch : batches) accumulate(rec, adapt_step(st, source, labels, target, batch, config));
    finish(rec);
    ++st.epochs_done;
    evaluate_into(rec, st, eval, config);
    out.log.epochs.push_back(rec);
  }
  return out;
}

// ---- checkpoints --------------------------------------------------------------

namespace {

json matrix_json(const Matrix& m) { return json{{"shape", {m.rows(), m.cols()}}, {"data", m.values()}}; }

Matrix matrix_from_json(const json& j, const std::string& name) {
  try {
    const auto shape = j.at("shape").get<std::vector<std::size_t>>();
    if (shape.size() != 2) throw Error(ErrorKind::Format, "checkpoint entry '" + name + "' needs a 2-d shape");
    return Matrix(shape[0], shape[1], j.at("data").get<std::vector<double>>());
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Format, "checkpoint entry '" + name + "': " + e.what());
  } catch (const Error& e) {
    throw Error(ErrorKind::Format, "checkpoint entry '" + name + "': " + e.what());
  }
}

constexpr const char* kCheckpointFormat = "aufa-checkpoint-1";

}  // namespace

void save_checkpoint(const fs::path& path, const TrainConfig& config, const TrainState& state) {
  json params = json::object();
  json m = json::object(), v = json::object();
  TrainState& s = const_cast<TrainState&>(state);
  auto ptrs = s.model.parameters();
  for (std::size_t k = 0; k < ptrs.size(); ++k) {
    params[ptrs[k]->name] = matrix_json(ptrs[k]->value);
    if (k < state.optimizer.m.size()) {
      m[ptrs[k]->name] = matrix_json(state.optimizer.m[k]);
      v[ptrs[k]->name] = matrix_json(state.optimizer.v[k]);
    }
  }
  const EncoderConfig& ec = state.model.encoder.config;
  json doc{{"format", kCheckpointFormat},
           {"config", to_json(config)},
           {"encoder",
            {{"n_layers", ec.n_layers},
             {"n_heads", ec.n_heads},
             {"d_model", ec.d_model},
             {"d_head", ec.head_dim()},
             {"ffn_hidden", ec.ffn_hidden},
             {"ln_eps", ec.ln_eps}}},
           {"classifier",
            {{"in_dim", state.model.classifier.config.in_dim}, {"hidden", state.model.classifier.config.hidden}}},
           {"epochs_done", state.epochs_done},
           {"params", params},
           {"optimizer", {{"t", state.optimizer.t}, {"m", m}, {"v", v}}}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::MissingFile, "cannot write " + path.string());
  out << doc.dump() << '\n';
}

LoadedCheckpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::MissingFile, "missing checkpoint " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Format, "checkpoint " + path.string() + ": " + e.what());
  }
  if (doc.value("format", "") != kCheckpointFormat) throw Error(ErrorKind::Format, "not an aufa checkpoint");
  LoadedCheckpoint out;
  out.config = train_config_from_json(doc.at("config"));
  try {
    const json& e = doc.at("encoder");
    EncoderConfig ec;
    ec.n_layers = e.at("n_layers").get<std::size_t>();
    ec.n_heads = e.at("n_heads").get<std::size_t>();
    ec.d_model = e.at("d_model").get<std::size_t>();
    ec.d_head = e.at("d_head").get<std::size_t>();
    ec.ffn_hidden = e.at("ffn_hidden").get<std::size_t>();
    ec.ln_eps = e.at("ln_eps").get<double>();
    const std::size_t hidden = doc.at("classifier").at("hidden").get<std::size_t>();
    out.state.model = init_model(ec, hidden, 0);
    out.state.epochs_done = doc.at("epochs_done").get<std::size_t>();
  } catch (const json::exception& ex) {
    throw Error(ErrorKind::Format, std::string("checkpoint header: ") + ex.what());
  }
  auto ptrs = out.state.model.parameters();
  out.state.optimizer = init_optimizer(ptrs);
  const json& params = doc.at("params");
  for (std::size_t k = 0; k < ptrs.size(); ++k) {
    const std::string& name = ptrs[k]->name;
    if (!params.contains(name)) throw Error(ErrorKind::Format, "checkpoint lacks parameter '" + name + "'");
    Matrix value = matrix_from_json(params[name], name);
    if (!value.same_shape(ptrs[k]->value)) {
      throw Error(ErrorKind::Format, "checkpoint parameter '" + name + "' has shape " + value.shape_string());
    }
    ptrs[k]->value = std::move(value);
  }
  if (params.size() != ptrs.size()) throw Error(ErrorKind::Format, "checkpoint has unexpected parameters");
  if (doc.contains("optimizer")) {
    const json& opt = doc["optimizer"];
    out.state.optimizer.t = opt.value("t", std::uint64_t{0});
    for (std::size_t k = 0; k < ptrs.size(); ++k) {
      const std::string& name = ptrs[k]->name;
      if (opt.contains("m") && opt["m"].contains(name)) out.state.optimizer.m[k] = matrix_from_json(opt["m"][name], name);
      if (opt.contains("v") && opt["v"].contains(name)) out.state.optimizer.v[k] = matrix_from_json(opt["v"][name], name);
    }
  }
  return out;
}

// ---- ablation -----------------------------------------------------------------

std::vector<AblationRow> run_ablation(const Dataset& source, const Dataset& target, const TrainConfig& config) {
  using clock = std::chrono::steady_clock;
  const std::vector<int> truth = target.labels();
  const Dataset unlabeled = target.without_labels();
  TrainConfig quiet = config;
  quiet.eval_each_epoch = false;

  std::vector<AblationRow> rows;
  auto t0 = clock::now();
  TrainOutcome pre = pretrain(init_train_state(quiet, source.n_rois), source, quiet);
  rows.push_back({"pretrain-only", evaluate_probs(infer(pre.state.model, target).probs, truth),
                  std::chrono::duration<double>(clock::now() - t0).count()});

  const std::pair<const char*, LossWeights> variants[] = {
      {"AUFA-C", {0.0, 0.0}},
      {"AUFA-AUG", {0.0, config.weights.aug}},
      {"AUFA-MMD", {config.weights.mmd, 0.0}},
      {"AUFA", config.weights},
  };
  for (const auto& [name, weights] : variants) {
    TrainConfig c = quiet;
    c.weights = weights;
    t0 = clock::now();
    TrainOutcome out = adapt(pre.state, source, unlabeled, c);
    rows.push_back({name, evaluate_probs(infer(out.state.model, target).probs, truth),
                    std::chrono::duration<double>(clock::now() - t0).count()});
  }
  return rows;
}

}  // namespace aufa
