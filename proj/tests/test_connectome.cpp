#include "doctest.h"

#include <cmath>

#include "aufa/connectome.hpp"
#include "aufa/csv.hpp"
#include "aufa/error.hpp"
#include "aufa/evalreport.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace aufa;

namespace {

TimeSeries series(Matrix m) { return TimeSeries{"s", std::move(m), "site"}; }

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an aufa::Error");
  return ErrorKind::Format;
}

}  // namespace

TEST_SUITE("connectome") {
  TEST_CASE("load_timeseries parses a small CSV") {
    const auto dir = testutil::scratch_dir("ts_parse");
    testutil::write_text(dir / "a.csv", "1,2\n2,4\n3,6");
    const TimeSeries ts = load_timeseries(dir / "a.csv");
    CHECK(ts.length() == 3);
    CHECK(ts.n_rois() == 2);
    CHECK(ts.values(2, 1) == 6.0);
  }

  TEST_CASE("load_timeseries failures are distinct") {
    const auto dir = testutil::scratch_dir("ts_errors");
    testutil::write_text(dir / "ragged.csv", "1,2,3\n4,5\n6,7,8\n");
    testutil::write_text(dir / "text.csv", "1,2\nabc,4\n5,6\n");
    testutil::write_text(dir / "short.csv", "1,2\n3,4\n");
    CHECK(kind_of([&] { load_timeseries(dir / "ragged.csv"); }) == ErrorKind::RaggedRows);
    CHECK(kind_of([&] { load_timeseries(dir / "text.csv"); }) == ErrorKind::NonNumeric);
    CHECK(kind_of([&] { load_timeseries(dir / "short.csv"); }) == ErrorKind::TooFewTimePoints);
    CHECK(kind_of([&] { load_timeseries(dir / "absent.csv"); }) == ErrorKind::MissingFile);
  }

  TEST_CASE("pearson hand cases") {
    CHECK(pearson_fcn(series({{1, 2}, {2, 4}, {3, 6}})).values()(0, 1) == 1.0);
    CHECK(pearson_fcn(series({{1, 3}, {2, 2}, {3, 1}})).values()(0, 1) == -1.0);
    const double w = pearson_fcn(series({{1, 1}, {2, 3}, {3, 2}})).values()(0, 1);
    CHECK(w == doctest::Approx(oracle::scalar_pearson(Matrix{{1, 1}, {2, 3}, {3, 2}}, 0, 1)).epsilon(1e-15));
    CHECK(w == doctest::Approx(0.5).epsilon(1e-15));
  }

  TEST_CASE("pearson matches the scalar routine and keeps its invariants") {
    auto rng = make_rng(2024);
    for (int trial = 0; trial < 20; ++trial) {
      const Matrix x = testutil::random_matrix(20, 8, rng, -3.0, 3.0);
      const Matrix w = pearson_fcn(series(x)).values();
      for (std::size_t i = 0; i < 8; ++i) {
        CHECK(w(i, i) == 1.0);
        for (std::size_t j = 0; j < 8; ++j) {
          CHECK(w(i, j) == w(j, i));
          CHECK(std::abs(w(i, j)) <= 1.0);
          if (i != j) CHECK(std::abs(w(i, j) - oracle::scalar_pearson(x, i, j)) <= 1e-10);
        }
      }
    }
  }

  TEST_CASE("pearson ignores positive affine rescaling of columns") {
    auto rng = make_rng(5);
    const Matrix x = testutil::random_matrix(30, 6, rng);
    Matrix y = x;
    for (std::size_t c = 0; c < 6; ++c)
      for (std::size_t r = 0; r < 30; ++r) y(r, c) = (0.5 + c) * x(r, c) + 10.0 * c - 3.0;
    CHECK(max_abs_diff(pearson_fcn(series(x)).values(), pearson_fcn(series(y)).values()) <= 1e-9);
  }

  TEST_CASE("constant column names its index") {
    try {
      pearson_fcn(series({{1, 5, 2}, {2, 5, 1}, {3, 5, 7}}));
      FAIL("no error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::DegenerateSignal);
      CHECK(std::string(e.what()).find("1") != std::string::npos);
    }
  }

  TEST_CASE("ConnectivityMatrix rejects broken matrices") {
    CHECK_THROWS_AS(ConnectivityMatrix(Matrix{{1, 0.5}, {0.4, 1}}), Error);
    CHECK_THROWS_AS(ConnectivityMatrix(Matrix{{0.9, 0.5}, {0.5, 1}}), Error);
    CHECK_THROWS_AS(ConnectivityMatrix(Matrix{{1, 1.5}, {1.5, 1}}), Error);
    CHECK_NOTHROW(ConnectivityMatrix(Matrix{{1, -0.5}, {-0.5, 1}}));
  }

  TEST_CASE("load_dataset keeps manifest order and reports bad manifests") {
    const auto dir = testutil::scratch_dir("manifest");
    testutil::write_text(dir / "a.csv", "1,2,0\n2,4,1\n3,6,0\n4,1,1\n");
    testutil::write_text(dir / "b.csv", "1,0,3\n2,1,2\n0,4,1\n5,2,2\n");
    testutil::write_text(dir / "c.csv", "1,0\n2,1\n0,4\n");
    testutil::write_text(dir / "ok.json", R"({"n_rois": 3, "subjects": [
      {"id": "s2", "path": "b.csv", "kind": "timeseries", "label": 1, "site": "x"},
      {"id": "s1", "path": "a.csv", "kind": "timeseries", "label": null, "site": "x"}]})");
    const Dataset ds = load_dataset(dir / "ok.json");
    REQUIRE(ds.size() == 2);
    CHECK(ds.subjects[0].id == "s2");
    CHECK(ds.subjects[1].id == "s1");
    CHECK(ds.subjects[0].label == 1);
    CHECK_FALSE(ds.subjects[1].label.has_value());
    CHECK_FALSE(ds.fully_labeled());
    CHECK(kind_of([&] { ds.labels(); }) == ErrorKind::MissingLabel);

    testutil::write_text(dir / "missing.json", R"({"subjects": [{"id": "s1", "path": "nope.csv"}]})");
    try {
      load_dataset(dir / "missing.json");
      FAIL("no error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::MissingFile);
      CHECK(std::string(e.what()).find("nope.csv") != std::string::npos);
    }
    testutil::write_text(dir / "mixed.json",
                         R"({"subjects": [{"id": "s1", "path": "a.csv"}, {"id": "s3", "path": "c.csv"}]})");
    CHECK(kind_of([&] { load_dataset(dir / "mixed.json"); }) == ErrorKind::DimensionMismatch);
    testutil::write_text(dir / "dup.json",
                         R"({"subjects": [{"id": "s1", "path": "a.csv"}, {"id": "s1", "path": "b.csv"}]})");
    CHECK(kind_of([&] { load_dataset(dir / "dup.json"); }) == ErrorKind::DuplicateSubject);
  }

  TEST_CASE("save_dataset round-trips exactly") {
    SiteSpec s;
    s.n_subjects_per_class = 3;
    s.n_rois = 7;
    s.series_length = 30;
    const Dataset ds = synth_multisite(s, s).first;
    const auto dir = testutil::scratch_dir("roundtrip");
    const Dataset back = load_dataset(save_dataset(ds, dir, "src"));
    REQUIRE(back.size() == ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
      CHECK(bitwise_equal(back.subjects[i].fcn.values(), ds.subjects[i].fcn.values()));
      CHECK(back.subjects[i].label == ds.subjects[i].label);
    }
  }

  TEST_CASE("generator is deterministic") {
    SiteSpec s;
    s.n_subjects_per_class = 4;
    s.n_rois = 10;
    s.seed = 9;
    SiteSpec t = s;
    t.seed = 10;
    t.shift_rotation_strength = kDefaultShiftRotation;
    t.shift_offset_strength = kDefaultShiftOffset;
    const auto a = synth_multisite(s, t);
    const auto b = synth_multisite(s, t);
    const auto dir_a = testutil::scratch_dir("det_a"), dir_b = testutil::scratch_dir("det_b");
    save_dataset(a.second, dir_a, "t");
    save_dataset(b.second, dir_b, "t");
    for (const auto& sub : a.second.subjects) {
      CHECK(testutil::read_text(dir_a / "t" / (sub.id + ".csv")) == testutil::read_text(dir_b / "t" / (sub.id + ".csv")));
    }
    CHECK(testutil::read_text(dir_a / "t.json") == testutil::read_text(dir_b / "t.json"));
  }

  TEST_CASE("no class signal means chance-level probe accuracy") {
    double mean = 0.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      SiteSpec s;
      s.n_subjects_per_class = 200;
      s.n_rois = 12;
      s.class_separation = 0.0;
      s.seed = seed;
      SiteSpec t = s;
      t.seed = seed + 50;
      const auto [train, test] = synth_multisite(s, t);
      const auto ftrain = raw_features(train), ftest = raw_features(test);
      const ProbeResult r = linear_probe(ftrain.rows, train.labels(), ftest.rows);
      mean += hard_metrics(r.predicted, test.labels()).accuracy / 5.0;
    }
    CHECK(std::abs(mean - 0.5) <= 0.05);
  }

  TEST_CASE("unshifted sites share entry means") {
    SiteSpec s;
    s.n_subjects_per_class = 60;
    s.n_rois = 8;
    s.seed = 3;
    SiteSpec t = s;
    t.seed = 4;
    const auto [a, b] = synth_multisite(s, t);
    const std::size_t n = 8;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        double ma = 0, mb = 0, va = 0, vb = 0;
        for (const auto& x : a.subjects) ma += x.fcn.values()(i, j) / a.size();
        for (const auto& x : b.subjects) mb += x.fcn.values()(i, j) / b.size();
        for (const auto& x : a.subjects) va += std::pow(x.fcn.values()(i, j) - ma, 2) / (a.size() - 1);
        for (const auto& x : b.subjects) vb += std::pow(x.fcn.values()(i, j) - mb, 2) / (b.size() - 1);
        const double se = std::sqrt(va / a.size() + vb / b.size());
        CHECK(std::abs(ma - mb) <= 3.0 * se);
      }
    }
  }

  TEST_CASE("site shift moves the target distribution") {
    SiteSpec s;
    s.n_subjects_per_class = 40;
    s.n_rois = 8;
    s.seed = 3;
    SiteSpec t = s;
    t.seed = 4;
    t.shift_rotation_strength = kDefaultShiftRotation;
    t.shift_offset_strength = kDefaultShiftOffset;
    const auto [a, b] = synth_multisite(s, t);
    double gap = 0.0;
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = i + 1; j < 8; ++j) {
        double ma = 0, mb = 0;
        for (const auto& x : a.subjects) ma += x.fcn.values()(i, j) / a.size();
        for (const auto& x : b.subjects) mb += x.fcn.values()(i, j) / b.size();
        gap = std::max(gap, std::abs(ma - mb));
      }
    CHECK(gap > 0.1);
  }

  TEST_CASE("invalid site spec") {
    SiteSpec s;
    s.n_rois = 1;
    CHECK_THROWS_AS(s.validate(), Error);
    s = SiteSpec{};
    s.shift_offset_strength = -1.0;
    CHECK_THROWS_AS(s.validate(), Error);
  }
}
