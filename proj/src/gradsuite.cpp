#include "aufa/gradsuite.hpp"

#include <algorithm>
#include <random>

#include "aufa/adaptation.hpp"
#include "aufa/encoder.hpp"
#include "aufa/rng.hpp"
#include "aufa/trainer.hpp"

namespace aufa {

using diff::Parameter;
using diff::Tape;
using diff::Value;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = u(rng);
  return m;
}

// Entries bounded away from zero so relu kinks stay out of reach of the
// finite-difference step.
Matrix away_from_zero(std::size_t r, std::size_t c, Rng& rng) {
  Matrix m = random_matrix(r, c, rng, 0.1, 1.0);
  std::bernoulli_distribution sign(0.5);
  for (std::size_t i = 0; i < m.size(); ++i)
    if (sign(rng)) m[i] = -m[i];
  return m;
}

// sum(y .* R) for a fixed random R, so every output entry matters.
Value project(Tape& t, const Value& y, const Matrix& r) { return diff::sum(diff::hadamard(y, t.constant(r))); }

struct Case {
  std::string name;
  std::vector<Parameter> params;
  std::function<Value(Tape&, std::vector<Value>&)> body;
};

GradCheckCase run(Case c) {
  std::vector<Parameter*> ptrs;
  for (auto& p : c.params) ptrs.push_back(&p);
  auto objective = [&](Tape& t) {
    std::vector<Value> vs;
    for (auto* p : ptrs) vs.push_back(t.param(*p));
    return c.body(t, vs);
  };
  return {c.name, diff::finite_diff_check(objective, ptrs)};
}

}  // namespace

std::vector<GradCheckCase> primitive_gradchecks(std::uint64_t seed) {
  Rng rng = make_rng(seed, {0x67726164});
  auto P = [](const char* n, Matrix m) { return Parameter(n, std::move(m)); };
  const Matrix r35 = random_matrix(3, 5, rng), r34 = random_matrix(3, 4, rng), r43 = random_matrix(4, 3, rng);
  const Matrix r38 = random_matrix(3, 8, rng), r64 = random_matrix(6, 4, rng), r1_12 = random_matrix(1, 12, rng);
  const Matrix r14 = random_matrix(1, 4, rng), r33 = random_matrix(3, 3, rng);

  std::vector<Case> cases;
  cases.push_back({"matmul", {P("a", random_matrix(3, 4, rng)), P("b", random_matrix(4, 5, rng))},
                   [&](Tape& t, auto& v) { return project(t, diff::matmul(v[0], v[1]), r35); }});
  cases.push_back({"transpose", {P("a", random_matrix(3, 4, rng))},
                   [&](Tape& t, auto& v) { return project(t, diff::transpose(v[0]), r43); }});
  cases.push_back({"add", {P("a", random_matrix(3, 4, rng)), P("b", random_matrix(3, 4, rng))},
                   [&](Tape& t, auto& v) { return project(t, diff::add(v[0], v[1]), r34); }});
  cases.push_back({"sub", {P("a", random_matrix(3, 4, rng)), P("b", random_matrix(3, 4, rng))},
                   [&](Tape& t, auto& v) { return project(t, diff::sub(v[0], v[1]), r34); }});
  cases.push_back({"scale", {P("a", random_matrix(3, 4, rng))},
                   [&](Tape& t, auto& v) { return project(t, diff::scale(v[0], -2.5), r34); }});
  cases.push_back({"hadamard", {P("a", random_matrix(3, 4, rng)), P("b", random_matrix(3, 4, rng))},
                   [&](Tape& t, auto& v) { return project(t, diff::hadamard(v[0], v[1]), r34); }});
  cases.push_back({"relu", {P("a", away_from_zero(3, 4, rng))},
                   [&](Tape& t, auto& v) { return project(t, diff::relu(v[0]), r34); }});
  cases.push_back({"row_softmax", {P("a", random_matrix(3, 4, rng, -2.0, 2.0))},
                   [&](Tape& t, auto& v) { return project(t, diff::row_softmax(v[0], 0.7), r34); }});
  cases.push_back({"row_layer_norm",
                   {P("x", random_matrix(3, 4, rng)), P("g", random_matrix(1, 4, rng, 0.5, 1.5)),
                    P("b", random_matrix(1, 4, rng))},
                   [&](Tape& t, auto& v) { return project(t, diff::row_layer_norm(v[0], v[1], v[2]), r34); }});
  cases.push_back({"affine",
                   {P("x", random_matrix(3, 4, rng)), P("w", random_matrix(4, 5, rng)),
                    P("b", random_matrix(1, 5, rng))},
                   [&](Tape& t, auto& v) { return project(t, diff::affine(v[0], v[1], v[2]), r35); }});
  cases.push_back({"concat_cols", {P("a", random_matrix(3, 3, rng)), P("b", random_matrix(3, 5, rng))},
                   [&](Tape& t, auto& v) {
                     const Value xs[] = {v[0], v[1]};
                     return project(t, diff::concat_cols(xs), r38);
                   }});
  cases.push_back({"concat_rows", {P("a", random_matrix(2, 4, rng)), P("b", random_matrix(4, 4, rng))},
                   [&](Tape& t, auto& v) {
                     const Value xs[] = {v[0], v[1]};
                     return project(t, diff::concat_rows(xs), r64);
                   }});
  cases.push_back({"flatten", {P("a", random_matrix(3, 4, rng))},
                   [&](Tape& t, auto& v) { return project(t, diff::flatten(v[0]), r1_12); }});
  cases.push_back({"sum", {P("a", random_matrix(3, 4, rng))},
                   [&](Tape&, auto& v) { return diff::scale(diff::sum(diff::hadamard(v[0], v[0])), 0.5); }});
  cases.push_back({"column_sum", {P("a", random_matrix(3, 4, rng))},
                   [&](Tape& t, auto& v) { return project(t, diff::column_sum(v[0]), r14); }});
  cases.push_back({"select_rows", {P("a", random_matrix(4, 3, rng))},
                   [&](Tape& t, auto& v) {
                     const std::size_t rows[] = {2, 0, 2};
                     return project(t, diff::select_rows(v[0], rows), r33);
                   }});
  cases.push_back({"lerp", {P("a", random_matrix(3, 4, rng)), P("b", random_matrix(3, 4, rng))},
                   [&](Tape& t, auto& v) { return project(t, diff::lerp(v[0], v[1], 0.3), r34); }});
  cases.push_back({"cross_entropy", {P("z", random_matrix(4, 2, rng, -2.0, 2.0))},
                   [&](Tape&, auto& v) {
                     const int labels[] = {0, 1, 1, 0};
                     return diff::cross_entropy(v[0], labels);
                   }});
  cases.push_back({"kl_divergence",
                   {P("p", random_matrix(4, 2, rng, -2.0, 2.0)), P("q", random_matrix(4, 2, rng, -2.0, 2.0))},
                   [&](Tape&, auto& v) { return diff::kl_divergence(diff::row_softmax(v[0]), diff::row_softmax(v[1])); }});
  cases.push_back({"mmd_loss",
                   {P("s1", random_matrix(4, 3, rng)), P("s2", random_matrix(4, 2, rng)),
                    P("t1", random_matrix(4, 3, rng)), P("t2", random_matrix(4, 2, rng))},
                   [&](Tape&, auto& v) {
                     const Value s[] = {v[0], v[1]};
                     const Value tt[] = {v[2], v[3]};
                     return mmd_loss(s, tt);
                   }});
  cases.push_back({"self_opt_loss",
                   {P("zt", random_matrix(4, 2, rng, -3.0, 3.0)), P("za", random_matrix(4, 2, rng, -3.0, 3.0))},
                   [&](Tape&, auto& v) {
                     Prediction pt{v[0], v[0], diff::row_softmax(v[0])};
                     Prediction pa{v[1], v[1], diff::row_softmax(v[1])};
                     FilterMask mask;
                     mask.keep = {true, false, true, true};
                     return self_opt_loss(pt, pa, mask);
                   }});
  cases.push_back({"attention_head",
                   {P("z", random_matrix(5, 4, rng)), P("wq", random_matrix(4, 2, rng)),
                    P("wk", random_matrix(4, 2, rng)), P("wv", random_matrix(4, 2, rng))},
                   [&, r52 = random_matrix(5, 2, rng)](Tape& t, auto& v) {
                     const HeadOutput h = attention_head({v[1], v[2], v[3]}, v[0]);
                     return project(t, h.features, r52);
                   }});

  std::vector<GradCheckCase> out;
  for (auto& c : cases) out.push_back(run(std::move(c)));
  return out;
}

GradCheckCase joint_loss_gradcheck(std::uint64_t seed) {
  SiteSpec src;
  src.n_subjects_per_class = 2;
  src.n_rois = 6;
  src.series_length = 40;
  src.seed = seed;
  src.site_id = "toy-src";
  SiteSpec tgt = src;
  tgt.seed = seed + 1000;
  tgt.site_id = "toy-tgt";
  tgt.shift_rotation_strength = kDefaultShiftRotation;
  tgt.shift_offset_strength = kDefaultShiftOffset;
  const auto [source, target] = synth_multisite(src, tgt);

  EncoderConfig ec;
  ec.n_layers = 2;
  ec.n_heads = 2;
  ec.d_model = 6;
  ec.ffn_hidden = 8;
  Model model = init_model(ec, 8, seed);
  // Larger output weights spread the confidences, so some rows pass the
  // filter and L_A is active.
  Parameter& w2 = model.classifier.store.at("clf.W2");
  for (std::size_t i = 0; i < w2.value.size(); ++i) w2.value[i] *= 4.0;

  Rng rng = make_rng(seed, {0x6a6f696e74});
  PairedBatch batch;
  batch.source = {0, 1, 2, 3};
  batch.target = {0, 1, 2, 3};
  batch.partner = random_derangement(4, rng);
  const std::size_t layer = seed % 2;
  const double gamma = 0.3;
  const std::vector<int> labels = source.labels();
  const Dataset unlabeled = target.without_labels();

  TrainConfig cfg;
  cfg.weights = {1.0, 1.0};
  // The filter is a step function, so the threshold goes in the middle of
  // the widest gap between row confidences; no row then sits within reach
  // of the difference step.
  {
    Tape t;
    const BoundModel bm = bind_model(t, model);
    const BatchEncoding enc = encode_batch(bm, unlabeled, batch.target);
    std::vector<Value> aug;
    for (std::size_t i = 0; i < 4; ++i) {
      aug.push_back(run_layers(bm.encoder,
                               diff::lerp(enc.per_subject[i].layer_inputs[layer],
                                          enc.per_subject[batch.partner[i]].layer_inputs[layer], gamma),
                               layer, false)
                        .features);
    }
    std::vector<double> conf = {0.5};
    for (const Matrix* p : {&classify(bm.classifier, enc.features).probs.data(),
                            &classify(bm.classifier, diff::concat_rows(aug)).probs.data()}) {
      for (std::size_t r = 0; r < p->rows(); ++r) conf.push_back(std::max((*p)(r, 0), (*p)(r, 1)));
    }
    std::sort(conf.begin(), conf.end());
    double best_gap = -1.0;
    for (std::size_t k = 0; k + 1 < conf.size(); ++k) {
      if (conf[k + 1] - conf[k] > best_gap) {
        best_gap = conf[k + 1] - conf[k];
        cfg.epsilon = 0.5 * (conf[k] + conf[k + 1]);
      }
    }
    cfg.epsilon = std::clamp(cfg.epsilon, 0.5 + 1e-6, 1.0 - 1e-6);
  }

  std::vector<Parameter*> params = model.parameters();
  auto objective = [&](Tape& t) {
    const BoundModel bm = bind_model(t, model);
    return adaptation_graph(bm, source, labels, unlabeled, batch, layer, gamma, cfg).loss;
  };
  return {"joint_loss", diff::finite_diff_check(objective, params)};
}

std::vector<GradCheckCase> gradcheck_suite(const std::vector<std::uint64_t>& seeds) {
  std::vector<GradCheckCase> out;
  for (std::uint64_t s : seeds) {
    for (auto& c : primitive_gradchecks(s)) out.push_back(std::move(c));
    out.push_back(joint_loss_gradcheck(s));
  }
  return out;
}

}  // namespace aufa
