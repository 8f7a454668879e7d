#include "doctest.h"

#include <cmath>
#include <numeric>

#include "aufa/connectome.hpp"
#include "aufa/encoder.hpp"
#include "aufa/error.hpp"
#include "test_util.hpp"

using namespace aufa;
using diff::Tape;
using diff::Value;

namespace {

ConnectivityMatrix random_fcn(std::size_t n, Rng& rng) {
  return pearson_fcn(TimeSeries{"x", testutil::random_matrix(3 * n, n, rng), "s"});
}

EncoderConfig small_config(std::size_t n, std::size_t layers = 2, std::size_t heads = 2) {
  EncoderConfig c;
  c.d_model = n;
  c.n_layers = layers;
  c.n_heads = heads;
  c.d_head = 3;
  c.ffn_hidden = 7;
  return c;
}

Matrix layer_norm_rows(const Matrix& x, const Matrix& g, const Matrix& b, double eps) {
  Matrix y(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double m = 0, v = 0;
    for (double e : x.row(r)) m += e;
    m /= x.cols();
    for (double e : x.row(r)) v += (e - m) * (e - m);
    v /= x.cols();
    for (std::size_t c = 0; c < x.cols(); ++c) y(r, c) = (x(r, c) - m) / std::sqrt(v + eps) * g(0, c) + b(0, c);
  }
  return y;
}

Matrix mul(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

// Loop-by-loop transcription of one encoder layer.
Matrix layer_oracle(const EncoderParams& p, std::size_t l, const Matrix& z) {
  const auto& cfg = p.config;
  const std::size_t n = z.rows(), dh = cfg.head_dim();
  const std::string pre = "layer" + std::to_string(l) + ".";
  Matrix cat(n, cfg.concat_width());
  for (std::size_t h = 0; h < cfg.n_heads; ++h) {
    const std::string hp = pre + "head" + std::to_string(h) + ".";
    const Matrix q = mul(z, p.store.at(hp + "WQ").value);
    const Matrix k = mul(z, p.store.at(hp + "WK").value);
    const Matrix v = mul(z, p.store.at(hp + "WV").value);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> s(n);
      double mx = -1e300;
      for (std::size_t j = 0; j < n; ++j) {
        double d = 0;
        for (std::size_t c = 0; c < dh; ++c) d += q(i, c) * k(j, c);
        s[j] = d / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, s[j]);
      }
      double zsum = 0;
      for (double& e : s) zsum += (e = std::exp(e - mx));
      for (std::size_t c = 0; c < dh; ++c) {
        double o = 0;
        for (std::size_t j = 0; j < n; ++j) o += s[j] / zsum * v(j, c);
        cat(i, h * dh + c) = o;
      }
    }
  }
  Matrix y = layer_norm_rows(mul(cat, p.store.at(pre + "W").value), p.store.at(pre + "ln1.g").value,
                             p.store.at(pre + "ln1.b").value, cfg.ln_eps);
  Matrix hidden = mul(y, p.store.at(pre + "ffn.W1").value);
  for (std::size_t i = 0; i < hidden.rows(); ++i)
    for (std::size_t c = 0; c < hidden.cols(); ++c)
      hidden(i, c) = std::max(0.0, hidden(i, c) + p.store.at(pre + "ffn.b1").value(0, c));
  Matrix out = mul(hidden, p.store.at(pre + "ffn.W2").value);
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t c = 0; c < out.cols(); ++c) out(i, c) += p.store.at(pre + "ffn.b2").value(0, c);
  return layer_norm_rows(out, p.store.at(pre + "ln2.g").value, p.store.at(pre + "ln2.b").value, cfg.ln_eps);
}

}  // namespace

TEST_SUITE("encoder") {
  TEST_CASE("initialization is seeded and well formed") {
    const EncoderConfig cfg = small_config(40, 2, 4);
    const EncoderParams a = init_encoder(cfg, 3), b = init_encoder(cfg, 3), c = init_encoder(cfg, 4);
    bool any_diff = false;
    for (const auto& p : a.store) {
      CHECK(bitwise_equal(p.value, b.store.at(p.name).value));
      any_diff = any_diff || !bitwise_equal(p.value, c.store.at(p.name).value);
    }
    CHECK(any_diff);
    CHECK(a.store.size() == 2 * (4 * 3 + 9));
    CHECK(a.store.at("layer1.ln1.g").value == Matrix(1, 40, 1.0));
    CHECK(a.store.at("layer1.ln2.b").value == Matrix(1, 40, 0.0));
    CHECK(a.store.at("layer0.ffn.b1").value == Matrix(1, 7, 0.0));
    const Matrix& w = a.store.at("layer0.ffn.W1").value;
    const double bound = std::sqrt(6.0 / (40 + 7));
    double mean = 0.0;
    for (double v : w.values()) {
      CHECK(std::abs(v) <= bound);
      mean += v / w.size();
    }
    CHECK(std::abs(mean) <= 3.0 * bound / std::sqrt(3.0 * w.size()));
  }

  TEST_CASE("zero query and key weights give uniform attention") {
    auto rng = make_rng(1);
    EncoderParams p = init_encoder(small_config(6), 1);
    for (auto& prm : p.store)
      if (prm.name.ends_with("WQ") || prm.name.ends_with("WK")) prm.value.fill(0.0);
    Tape t;
    const EncodeResult r = encode(bind_encoder(t, p), random_fcn(6, rng));
    for (const auto& layer : r.maps.maps)
      for (const Matrix& a : layer)
        for (double v : a.values()) CHECK(v == doctest::Approx(1.0 / 6).epsilon(1e-15));
  }

  TEST_CASE("attention rows are distributions") {
    auto rng = make_rng(2);
    EncoderParams p = init_encoder(small_config(9, 2, 3), 2);
    Tape t;
    const EncodeResult r = encode(bind_encoder(t, p), random_fcn(9, rng));
    REQUIRE(r.maps.n_layers() == 2);
    for (const auto& layer : r.maps.maps) {
      REQUIRE(layer.size() == 3);
      for (const Matrix& a : layer)
        for (std::size_t i = 0; i < 9; ++i) {
          double s = 0;
          for (double v : a.row(i)) {
            CHECK(v >= 0.0);
            s += v;
          }
          CHECK(std::abs(s - 1.0) <= 1e-12);
        }
    }
    CHECK(r.features.rows() == 1);
    CHECK(r.features.cols() == 81);
  }

  TEST_CASE("layer matches a scalar transcription") {
    auto rng = make_rng(3);
    EncoderParams p = init_encoder(small_config(5, 2, 2), 3);
    for (auto& prm : p.store)
      if (prm.name.find(".b") != std::string::npos || prm.name.ends_with(".g"))
        for (std::size_t i = 0; i < prm.value.size(); ++i) prm.value[i] += 0.1 * (static_cast<double>(i % 3) - 1.0);
    const ConnectivityMatrix x = random_fcn(5, rng);
    Tape t;
    const EncodeResult r = encode(bind_encoder(t, p), x);
    Matrix z = x.values();
    for (std::size_t l = 0; l < 2; ++l) {
      CHECK(max_abs_diff(r.layer_inputs[l].data(), z) <= 1e-10);
      z = layer_oracle(p, l, z);
    }
    CHECK(max_abs_diff(r.features.data(), Matrix(1, 25, z.values())) <= 1e-10);
  }

  TEST_CASE("node permutation permutes the output rows") {
    auto rng = make_rng(4);
    EncoderParams p = init_encoder(small_config(7), 4);
    const Matrix z = random_fcn(7, rng).values();
    std::vector<std::size_t> perm(7);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix zp(7, 7);
    for (std::size_t i = 0; i < 7; ++i)
      for (std::size_t c = 0; c < 7; ++c) zp(i, c) = z(perm[i], c);
    Tape t;
    const EncoderGraph g = bind_encoder(t, p);
    const Matrix out = run_layers(g, t.constant(z), 0).features.data();
    const Matrix outp = run_layers(g, t.constant(zp), 0).features.data();
    for (std::size_t i = 0; i < 7; ++i)
      for (std::size_t c = 0; c < 7; ++c) CHECK(std::abs(outp(0, i * 7 + c) - out(0, perm[i] * 7 + c)) <= 1e-12);
  }

  TEST_CASE("single head with identity maps reduces to layer norm of the mean row") {
    auto rng = make_rng(5);
    EncoderConfig cfg = small_config(4, 1, 1);
    cfg.d_head = 4;
    EncoderParams p = init_encoder(cfg, 5);
    p.store.at("layer0.head0.WQ").value.fill(0.0);
    p.store.at("layer0.head0.WK").value.fill(0.0);
    p.store.at("layer0.head0.WV").value = Matrix::identity(4);
    p.store.at("layer0.W").value = Matrix::identity(4);
    const Matrix z = testutil::random_matrix(4, 4, rng);
    Tape t;
    const EncoderGraph g = bind_encoder(t, p);
    const Matrix y = multi_head_layer(g.layers[0], t.constant(z), cfg.ln_eps).data();
    Matrix mean(4, 4);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t c = 0; c < 4; ++c)
        for (std::size_t j = 0; j < 4; ++j) mean(i, c) += z(j, c) / 4.0;
    CHECK(max_abs_diff(y, layer_norm_rows(mean, Matrix(1, 4, 1.0), Matrix(1, 4, 0.0), cfg.ln_eps)) <= 1e-12);
  }

  TEST_CASE("zero feed-forward weights zero the block output") {
    auto rng = make_rng(6);
    EncoderParams p = init_encoder(small_config(6, 1, 2), 6);
    p.store.at("layer0.ffn.W2").value.fill(0.0);
    Tape t;
    const EncoderGraph g = bind_encoder(t, p);
    const Matrix y = feed_forward(g.layers[0], t.constant(testutil::random_matrix(6, 6, rng)), 1e-5).data();
    CHECK(y == Matrix(6, 6, 0.0));
  }

  TEST_CASE("injection endpoints are exact") {
    auto rng = make_rng(7);
    EncoderParams p = init_encoder(small_config(6, 3, 2), 7);
    const ConnectivityMatrix x = random_fcn(6, rng), y = random_fcn(6, rng);
    for (std::size_t layer = 0; layer < 3; ++layer) {
      Tape t;
      const EncoderGraph g = bind_encoder(t, p);
      const EncodeResult clean = encode(g, x);
      const EncodeResult partner = encode(g, y);
      const Value zp = partner.layer_inputs[layer];
      const EncodeResult g0 = encode(g, x, AugmentInjection{layer, zp, 0.0});
      CHECK(bitwise_equal(g0.features.data(), clean.features.data()));
      const EncodeResult g1 = encode(g, x, AugmentInjection{layer, zp, 1.0});
      CHECK(bitwise_equal(g1.features.data(), partner.features.data()));
      const EncodeResult mid = encode(g, x, AugmentInjection{layer, zp, 0.5});
      CHECK(max_abs_diff(mid.features.data(), clean.features.data()) > 0.0);
    }
  }

  TEST_CASE("dimension checks") {
    auto rng = make_rng(8);
    EncoderParams p = init_encoder(small_config(6), 8);
    Tape t;
    CHECK_THROWS_AS(encode(bind_encoder(t, p), random_fcn(5, rng)), Error);
    EncoderConfig bad = small_config(6);
    bad.n_heads = 0;
    CHECK_THROWS_AS(bad.validate(), Error);
  }
}
