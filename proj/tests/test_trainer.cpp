#include "doctest.h"

#include <cmath>
#include <set>

#include "aufa/error.hpp"
#include "aufa/trainer.hpp"
#include "test_util.hpp"

using namespace aufa;
using diff::Parameter;

namespace {

std::pair<Dataset, Dataset> small_sites(std::size_t per_class, double separation, std::uint64_t seed) {
  SiteSpec s;
  s.n_subjects_per_class = per_class;
  s.n_rois = 8;
  s.series_length = 60;
  s.class_separation = separation;
  s.seed = seed;
  SiteSpec t = s;
  t.seed = seed + 1;
  t.shift_rotation_strength = kDefaultShiftRotation;
  t.shift_offset_strength = kDefaultShiftOffset;
  return synth_multisite(s, t);
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.lr = 1e-3;
  c.epochs_pretrain = 2;
  c.epochs_adapt = 2;
  c.batch_size = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  c.ffn_hidden = 8;
  c.classifier_hidden = 16;
  c.epsilon = 0.6;
  c.eval_each_epoch = false;
  return c;
}

std::vector<Matrix> values_of(Model& m) {
  std::vector<Matrix> out;
  for (auto* p : m.parameters()) out.push_back(p->value);
  return out;
}

bool same(const std::vector<Matrix>& a, const std::vector<Matrix>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!bitwise_equal(a[i], b[i])) return false;
  return true;
}

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("first adam step moves each entry by about lr against the gradient sign") {
    Parameter p("p", Matrix{{1.0, -2.0, 0.5}});
    p.grad = Matrix{{3.0, -0.01, 0.0}};
    std::vector<Parameter*> ps{&p};
    OptimizerState st = init_optimizer(ps);
    adam_step(ps, st, {0.01, 0.9, 0.999, 1e-8});
    CHECK(st.t == 1);
    CHECK(p.value(0, 0) == doctest::Approx(1.0 - 0.01).epsilon(1e-8));
    CHECK(p.value(0, 1) == doctest::Approx(-2.0 + 0.01).epsilon(1e-6));
    CHECK(p.value(0, 2) == 0.5);
  }

  TEST_CASE("adam minimizes a quadratic") {
    Parameter p("x", Matrix{{1.0}});
    std::vector<Parameter*> ps{&p};
    OptimizerState st = init_optimizer(ps);
    for (int i = 0; i < 100; ++i) {
      p.grad(0, 0) = 2.0 * p.value(0, 0);
      adam_step(ps, st, {0.1, 0.9, 0.999, 1e-8});
    }
    CHECK(std::abs(p.value(0, 0)) < 0.2);
  }

  TEST_CASE("derangements have no fixed points") {
    auto rng = make_rng(1);
    for (std::size_t n = 2; n < 40; ++n) {
      const auto d = random_derangement(n, rng);
      CHECK(std::set<std::size_t>(d.begin(), d.end()).size() == n);
      for (std::size_t i = 0; i < n; ++i) CHECK(d[i] != i);
    }
    CHECK_THROWS_AS(random_derangement(1, rng), Error);
  }

  TEST_CASE("source batches are balanced, distinct and seeded") {
    std::vector<int> labels;
    for (int i = 0; i < 37; ++i) labels.push_back(i % 2);
    const auto a = source_epoch_batches(labels, 8, 5, 2);
    CHECK(a == source_epoch_batches(labels, 8, 5, 2));
    CHECK(a != source_epoch_batches(labels, 8, 5, 3));
    CHECK(a.size() == 4);
    std::set<std::size_t> seen;
    for (const auto& b : a) {
      CHECK(b.size() == 8);
      int ones = 0;
      for (std::size_t i : b) {
        ones += labels[i];
        CHECK(seen.insert(i).second);
      }
      CHECK(ones == 4);
    }
  }

  TEST_CASE("minority class is resampled to keep batches balanced") {
    std::vector<int> labels;
    for (int i = 0; i < 37; ++i) labels.push_back(i % 3 == 0 ? 1 : 0);
    for (const auto& b : source_epoch_batches(labels, 7, 1, 0)) {
      CHECK(std::set<std::size_t>(b.begin(), b.end()).size() == b.size());
      int ones = 0;
      for (std::size_t i : b) ones += labels[i];
      CHECK(std::abs(2 * ones - 7) == 1);
    }
  }

  TEST_CASE("source batches with one class present") {
    const std::vector<int> labels(20, 1);
    const auto a = source_epoch_batches(labels, 4, 0, 0);
    CHECK(a.size() == 5);
    CHECK_THROWS_AS(source_epoch_batches(labels, 32, 0, 0), Error);
  }

  TEST_CASE("each target subject appears at most once per pass") {
    const auto p = target_pass_batches(30, 8, 7, 4);
    CHECK(p.size() == 3);
    std::set<std::size_t> seen;
    for (const auto& b : p)
      for (std::size_t i : b) {
        CHECK(i < 30);
        CHECK(seen.insert(i).second);
      }
    CHECK(p == target_pass_batches(30, 8, 7, 4));
    CHECK(p != target_pass_batches(30, 8, 7, 5));
  }

  TEST_CASE("paired batches") {
    const auto [src, tgt] = small_sites(10, 1.0, 3);
    const auto batches = sample_paired_batches(src, tgt, 8, 1, 0, 0);
    CHECK(batches.size() == 2);
    for (const auto& b : batches) {
      CHECK(b.source.size() == 8);
      CHECK(b.target.size() == 8);
      for (std::size_t i = 0; i < 8; ++i) {
        CHECK(b.partner[i] != i);
        CHECK(b.partner[i] < 8);
      }
    }
  }

  TEST_CASE("zero epochs leave the model untouched") {
    const auto [src, tgt] = small_sites(8, 1.0, 4);
    TrainConfig c = tiny_config();
    c.epochs_pretrain = 0;
    c.epochs_adapt = 0;
    TrainState s = init_train_state(c, 8);
    const auto before = values_of(s.model);
    TrainOutcome p = pretrain(s, src, c);
    CHECK(same(values_of(p.state.model), before));
    TrainOutcome a = adapt(p.state, src, tgt, c);
    CHECK(same(values_of(a.state.model), before));
    CHECK(a.log.epochs.empty());
  }

  TEST_CASE("pretraining fits a separable source") {
    const auto [src, tgt] = small_sites(40, 4.0, 5);
    TrainConfig c = tiny_config();
    c.epochs_pretrain = 30;
    const TrainOutcome out = pretrain(init_train_state(c, 8), src, c);
    const MetricsReport m = evaluate_probs(infer(out.state.model, src).probs, src.labels());
    CHECK(m.accuracy >= 0.95);
    CHECK(out.log.epochs.size() == 30);
    CHECK(out.log.epochs.back().loss_c < out.log.epochs.front().loss_c);
  }

  TEST_CASE("joint gradient is the weighted sum of the term gradients") {
    const auto [src, tgt] = small_sites(6, 2.0, 6);
    TrainConfig c = tiny_config();
    c.weights = {0.7, 1.3};
    c.epsilon = 0.5 + 1e-6;
    TrainState s = init_train_state(c, 8);
    s.model.classifier.store.at("clf.W2").value = [&] {
      Matrix w = s.model.classifier.store.at("clf.W2").value;
      for (std::size_t i = 0; i < w.size(); ++i) w[i] *= 8.0;
      return w;
    }();
    const auto batch = sample_paired_batches(src, tgt, 8, 0, 0, 0).front();
    const std::vector<int> labels = src.labels();

    auto grads_of = [&](int which) {
      s.model.zero_grad();
      diff::Tape t;
      const BoundModel bm = bind_model(t, s.model);
      const StepGraph g = adaptation_graph(bm, src, labels, tgt, batch, 1, 0.3, c);
      if (which == 0) {
        CHECK(g.kept_fraction > 0.0);
        t.backward(g.loss);
      }
      if (which == 1) t.backward(g.l_c);
      if (which == 2) t.backward(g.l_m);
      if (which == 3) t.backward(g.l_a);
      std::vector<Matrix> out;
      for (auto* p : s.model.parameters()) out.push_back(p->grad);
      return out;
    };
    const auto joint = grads_of(0), gc = grads_of(1), gm = grads_of(2), ga = grads_of(3);
    double worst = 0.0;
    for (std::size_t k = 0; k < joint.size(); ++k)
      for (std::size_t i = 0; i < joint[k].size(); ++i)
        worst = std::max(worst, std::abs(joint[k][i] - (gc[k][i] + 0.7 * gm[k][i] + 1.3 * ga[k][i])));
    CHECK(worst <= 1e-10);
  }

  TEST_CASE("gamma zero makes the consistency loss vanish") {
    const auto [src, tgt] = small_sites(6, 2.0, 7);
    TrainConfig c = tiny_config();
    c.epsilon = 0.5 + 1e-6;
    TrainState s = init_train_state(c, 8);
    const auto batch = sample_paired_batches(src, tgt, 8, 0, 0, 0).front();
    diff::Tape t;
    const BoundModel bm = bind_model(t, s.model);
    for (std::size_t layer = 0; layer < 2; ++layer) {
      const StepGraph g = adaptation_graph(bm, src, src.labels(), tgt, batch, layer, 0.0, c);
      CHECK(g.l_a.item() == 0.0);
    }
    c.gamma = GammaPolicy::fixed(0.0);
    const TrainOutcome out = adapt(s, src, tgt, c);
    for (const auto& e : out.log.epochs) CHECK(e.loss_a == 0.0);
  }

  TEST_CASE("runs are reproducible bit for bit") {
    const auto [src, tgt] = small_sites(8, 1.5, 8);
    TrainConfig c = tiny_config();
    c.seed = 42;
    auto run = [&] {
      TrainOutcome p = pretrain(init_train_state(c, 8), src, c);
      return adapt(std::move(p.state), src, tgt, c);
    };
    TrainOutcome a = run(), b = run();
    CHECK(same(values_of(a.state.model), values_of(b.state.model)));
    REQUIRE(a.log.epochs.size() == b.log.epochs.size());
    for (std::size_t i = 0; i < a.log.epochs.size(); ++i)
      CHECK(to_json(a.log.epochs[i]).dump() == to_json(b.log.epochs[i]).dump());
    CHECK(a.state.epochs_done == 4);
  }

  TEST_CASE("zero loss weights reproduce continued pretraining") {
    const auto [src, tgt] = small_sites(8, 1.5, 9);
    TrainConfig c = tiny_config();
    TrainOutcome p = pretrain(init_train_state(c, 8), src, c);
    TrainConfig ca = c;
    ca.weights = {0.0, 0.0};
    TrainOutcome a = adapt(p.state, src, tgt, ca);
    TrainConfig cp = c;
    cp.epochs_pretrain = c.epochs_adapt;
    TrainOutcome q = pretrain(p.state, src, cp);
    CHECK(same(values_of(a.state.model), values_of(q.state.model)));
    CHECK(same(a.state.optimizer.m, q.state.optimizer.m));
    CHECK(same(a.state.optimizer.v, q.state.optimizer.v));
  }

  TEST_CASE("checkpoint round trip is exact") {
    const auto [src, tgt] = small_sites(8, 1.5, 10);
    TrainConfig c = tiny_config();
    c.gamma = GammaPolicy::fixed(0.25);
    TrainOutcome p = pretrain(init_train_state(c, 8), src, c);
    const auto dir = testutil::scratch_dir("ckpt");
    save_checkpoint(dir / "c.json", c, p.state);
    LoadedCheckpoint back = load_checkpoint(dir / "c.json");
    CHECK(same(values_of(back.state.model), values_of(p.state.model)));
    CHECK(same(back.state.optimizer.m, p.state.optimizer.m));
    CHECK(same(back.state.optimizer.v, p.state.optimizer.v));
    CHECK(back.state.optimizer.t == p.state.optimizer.t);
    CHECK(back.state.epochs_done == 2);
    CHECK(to_json(back.config) == to_json(c));
    testutil::write_text(dir / "bad.json", "{\"format\": \"other\"}");
    CHECK_THROWS_AS(load_checkpoint(dir / "bad.json"), Error);
  }

  TEST_CASE("config JSON") {
    TrainConfig c = tiny_config();
    c.weights = {0.25, 2.0};
    c.gamma = GammaPolicy::uniform(0.3);
    CHECK(to_json(train_config_from_json(to_json(c))) == to_json(c));
    CHECK(train_config_from_json({{"lambda1", 0.0}}).weights.mmd == 0.0);
    try {
      train_config_from_json({{"learning_rate", 0.1}});
      FAIL("accepted an unknown key");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::InvalidConfig);
    }
  }

  TEST_CASE("invalid configurations") {
    auto rejects = [](auto edit) {
      TrainConfig c;
      edit(c);
      try {
        c.validate();
      } catch (const Error& e) {
        return e.kind() == ErrorKind::InvalidConfig;
      }
      return false;
    };
    CHECK(rejects([](TrainConfig& c) { c.lr = 0.0; }));
    CHECK(rejects([](TrainConfig& c) { c.batch_size = 1; }));
    CHECK(rejects([](TrainConfig& c) { c.weights.aug = -1.0; }));
    CHECK(rejects([](TrainConfig& c) { c.epsilon = 0.5; }));
    CHECK(rejects([](TrainConfig& c) { c.epsilon = 1.0; }));
    CHECK(rejects([](TrainConfig& c) { c.gamma = GammaPolicy::fixed(1.5); }));
    CHECK(rejects([](TrainConfig& c) { c.adam_beta1 = 1.0; }));
    CHECK_NOTHROW(TrainConfig{}.validate());
  }

  TEST_CASE("architecture must match the data") {
    const auto [src, tgt] = small_sites(8, 1.0, 11);
    TrainConfig c = tiny_config();
    CHECK_THROWS_AS(pretrain(init_train_state(c, 9), src, c), Error);
  }
}
