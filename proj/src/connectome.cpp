#include "aufa/connectome.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <set>

#include "json.hpp"

#include "aufa/csv.hpp"
#include "aufa/error.hpp"
#include "aufa/kernels.hpp"
#include "aufa/rng.hpp"

namespace aufa {

namespace fs = std::filesystem;
using nlohmann::json;

void TimeSeries::validate() const {
  if (values.rows() < 3) {
    throw Error(ErrorKind::TooFewTimePoints,
                "time series '" + subject_id + "' has " + std::to_string(values.rows()) +
                    " time points, need at least 3");
  }
  if (values.cols() < 2) {
    throw Error(ErrorKind::DimensionMismatch, "time series '" + subject_id + "' needs at least 2 ROIs");
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw Error(ErrorKind::NonNumeric, "time series '" + subject_id + "' has a non-finite entry");
    }
  }
}

ConnectivityMatrix::ConnectivityMatrix(Matrix values) : values_(std::move(values)) {
  const std::size_t n = values_.rows();
  if (values_.cols() != n) {
    throw Error(ErrorKind::DimensionMismatch, "connectivity matrix must be square, got " + values_.shape_string());
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (values_(i, i) != 1.0) throw Error(ErrorKind::Format, "connectivity diagonal must be exactly 1");
    for (std::size_t j = 0; j < n; ++j) {
      const double v = values_(i, j);
      if (!(v >= -1.0 && v <= 1.0)) throw Error(ErrorKind::Format, "connectivity entry outside [-1, 1]");
      if (std::abs(v - values_(j, i)) > 1e-12) throw Error(ErrorKind::Format, "connectivity matrix not symmetric");
    }
  }
}

ConnectivityMatrix pearson_fcn(const TimeSeries& ts) {
  ts.validate();
  const Matrix& x = ts.values;
  const std::size_t t = x.rows(), n = x.cols();
  Matrix centered(t, n);
  std::vector<double> ss(n, 0.0);
  for (std::size_t c = 0; c < n; ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < t; ++r) mean += x(r, c);
    mean /= static_cast<double>(t);
    for (std::size_t r = 0; r < t; ++r) {
      centered(r, c) = x(r, c) - mean;
      ss[c] += centered(r, c) * centered(r, c);
    }
    if (ss[c] == 0.0) {
      throw Error(ErrorKind::DegenerateSignal,
                  "column " + std::to_string(c) + " of '" + ts.subject_id + "' has zero variance");
    }
  }
  Matrix cross;
  kernels::gemm_tn(centered, centered, cross);
  Matrix w(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    w(i, i) = 1.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = std::clamp(cross(i, j) / std::sqrt(ss[i] * ss[j]), -1.0, 1.0);
      w(i, j) = v;
      w(j, i) = v;
    }
  }
  return ConnectivityMatrix(std::move(w));
}

TimeSeries load_timeseries(const fs::path& path, std::string subject_id, std::string site_id) {
  if (!fs::exists(path)) throw Error(ErrorKind::MissingFile, "missing time-series file " + path.string());
  TimeSeries ts{subject_id.empty() ? path.stem().string() : std::move(subject_id), read_csv_matrix(path),
                std::move(site_id)};
  ts.validate();
  return ts;
}

bool Dataset::fully_labeled() const {
  return std::all_of(subjects.begin(), subjects.end(), [](const Subject& s) { return s.label.has_value(); });
}

std::vector<int> Dataset::labels() const {
  std::vector<int> out;
  out.reserve(subjects.size());
  for (const Subject& s : subjects) {
    if (!s.label) throw Error(ErrorKind::MissingLabel, "subject '" + s.id + "' has no label");
    out.push_back(*s.label);
  }
  return out;
}

Dataset Dataset::without_labels() const {
  Dataset d = *this;
  for (Subject& s : d.subjects) s.label.reset();
  return d;
}

namespace {

// Runs body(i) for i in [0, n) in parallel and rethrows the failure with the
// lowest index, so error reporting does not depend on scheduling.
template <class Body>
void parallel_indexed(std::size_t n, Body body) {
  std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for schedule(dynamic) if (!kernels::serial() && n > 1)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    try {
      body(static_cast<std::size_t>(i));
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

Dataset load_dataset(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw Error(ErrorKind::MissingFile, "missing manifest " + manifest_path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Format, "manifest " + manifest_path.string() + ": " + e.what());
  }
  if (!doc.is_object() || !doc.contains("subjects") || !doc["subjects"].is_array()) {
    throw Error(ErrorKind::Format, "manifest must be an object with a 'subjects' array");
  }
  const fs::path base = manifest_path.parent_path();

  struct Entry {
    std::string id, kind, site;
    fs::path path;
    std::optional<int> label;
  };
  std::vector<Entry> entries;
  std::set<std::string> seen;
  for (const json& s : doc["subjects"]) {
    Entry e;
    try {
      e.id = s.at("id").get<std::string>();
      e.path = s.at("path").get<std::string>();
      e.kind = s.value("kind", std::string("timeseries"));
      e.site = s.value("site", std::string());
      if (s.contains("label") && !s["label"].is_null()) e.label = s["label"].get<int>();
    } catch (const json::exception& ex) {
      throw Error(ErrorKind::Format, std::string("manifest subject entry: ") + ex.what());
    }
    if (e.kind != "timeseries" && e.kind != "fcn") {
      throw Error(ErrorKind::Format, "subject '" + e.id + "': kind must be 'timeseries' or 'fcn'");
    }
    if (e.label && *e.label != 0 && *e.label != 1) {
      throw Error(ErrorKind::Format, "subject '" + e.id + "': label must be 0, 1 or null");
    }
    if (!seen.insert(e.id).second) throw Error(ErrorKind::DuplicateSubject, "duplicate subject_id '" + e.id + "'");
    if (e.path.is_relative()) e.path = base / e.path;
    if (!fs::exists(e.path)) {
      throw Error(ErrorKind::MissingFile, "subject '" + e.id + "' references missing file " + e.path.string());
    }
    entries.push_back(std::move(e));
  }

  Dataset ds;
  ds.subjects.resize(entries.size());
  parallel_indexed(entries.size(), [&](std::size_t i) {
    const Entry& e = entries[i];
    ConnectivityMatrix fcn;
    if (e.kind == "timeseries") {
      fcn = pearson_fcn(load_timeseries(e.path, e.id, e.site));
    } else {
      fcn = ConnectivityMatrix(read_csv_matrix(e.path));
    }
    ds.subjects[i] = Subject{e.id, std::move(fcn), e.label, e.site};
  });

  std::size_t n = doc.contains("n_rois") ? doc["n_rois"].get<std::size_t>() : 0;
  for (const Subject& s : ds.subjects) {
    if (n == 0) n = s.fcn.n_rois();
    if (s.fcn.n_rois() != n) {
      throw Error(ErrorKind::DimensionMismatch, "subject '" + s.id + "' has " + std::to_string(s.fcn.n_rois()) +
                                                    " ROIs, expected " + std::to_string(n));
    }
  }
  ds.n_rois = n;
  return ds;
}

fs::path save_dataset(const Dataset& ds, const fs::path& dir, const std::string& name) {
  fs::create_directories(dir / name);
  json subjects = json::array();
  for (const Subject& s : ds.subjects) {
    const fs::path rel = fs::path(name) / (s.id + ".csv");
    write_csv_matrix(dir / rel, s.fcn.values());
    json e = {{"id", s.id}, {"path", rel.generic_string()}, {"kind", "fcn"}, {"site", s.site}};
    e["label"] = s.label ? json(*s.label) : json(nullptr);
    subjects.push_back(std::move(e));
  }
  const fs::path manifest = dir / (name + ".json");
  std::ofstream out(manifest, std::ios::binary);
  out << json{{"n_rois", ds.n_rois}, {"subjects", subjects}}.dump(2) << '\n';
  return manifest;
}

void SiteSpec::validate() const {
  auto bad = [](const std::string& what) { throw Error(ErrorKind::InvalidConfig, "site spec: " + what); };
  if (n_rois < 2) bad("n_rois must be >= 2");
  if (series_length < 3) bad("series_length must be >= 3");
  if (n_subjects_per_class < 1) bad("n_subjects_per_class must be >= 1");
  if (!(class_separation >= 0.0)) bad("class_separation must be >= 0");
  if (!(shift_rotation_strength >= 0.0)) bad("shift_rotation_strength must be >= 0");
  if (!(shift_offset_strength >= 0.0)) bad("shift_offset_strength must be >= 0");
  if (!(noise_std >= 0.0)) bad("noise_std must be >= 0");
}

namespace {

enum : std::uint64_t { kTemplateStream = 1, kShiftStream = 2, kSubjectStream = 3 };

// Spread of the per-subject loading perturbation; class_separation is
// measured against it.
constexpr double kLoadingJitter = 0.25;

struct ClassTemplates {
  std::size_t n_factors = 0;
  Matrix base;          // N x K loadings shared by both classes
  Matrix discriminant;  // N x K loading change between the classes
};

ClassTemplates make_templates(std::size_t n, std::uint64_t seed) {
  Rng rng = make_rng(seed, {kTemplateStream});
  ClassTemplates t;
  t.n_factors = std::min<std::size_t>(4, n);
  const std::size_t k = t.n_factors;
  t.base = Matrix(n, k);
  t.discriminant = Matrix(n, k);
  std::vector<std::size_t> block(n);
  for (std::size_t i = 0; i < n; ++i) {
    block[i] = i * k / n;
    t.base(i, block[i]) = 1.0;
  }
  std::vector<std::size_t> rois(n);
  for (std::size_t i = 0; i < n; ++i) rois[i] = i;
  std::shuffle(rois.begin(), rois.end(), rng);
  const std::size_t n_disc = std::max<std::size_t>(1, n / 4);
  std::bernoulli_distribution coin(0.5);
  std::uniform_int_distribution<std::size_t> pick(1, std::max<std::size_t>(1, k - 1));
  for (std::size_t m = 0; m < n_disc; ++m) {
    const std::size_t i = rois[m];
    const std::size_t other = k > 1 ? (block[i] + pick(rng)) % k : block[i];
    t.discriminant(i, other) = coin(rng) ? 1.0 : -1.0;
  }
  return t;
}

struct SiteShift {
  Matrix mixing;     // N x N orthogonal, identity at zero strength
  Matrix nuisance;   // 1 x N loading of the site-wide nuisance signal
};

Matrix orthonormalize_columns(Matrix a) {
  const std::size_t n = a.rows();
  for (std::size_t c = 0; c < a.cols(); ++c) {
    for (std::size_t p = 0; p < c; ++p) {
      double dot = 0.0;
      for (std::size_t r = 0; r < n; ++r) dot += a(r, c) * a(r, p);
      for (std::size_t r = 0; r < n; ++r) a(r, c) -= dot * a(r, p);
    }
    double norm = 0.0;
    for (std::size_t r = 0; r < n; ++r) norm += a(r, c) * a(r, c);
    norm = std::sqrt(norm);
    for (std::size_t r = 0; r < n; ++r) a(r, c) /= norm;
  }
  return a;
}

SiteShift make_shift(const SiteSpec& spec) {
  Rng rng = make_rng(spec.seed, {kShiftStream});
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t n = spec.n_rois;
  SiteShift s;
  Matrix perturbed = Matrix::identity(n);
  const double step = spec.shift_rotation_strength / std::sqrt(static_cast<double>(n));
  for (std::size_t i = 0; i < perturbed.size(); ++i) perturbed[i] += step * normal(rng);
  s.mixing = spec.shift_rotation_strength > 0.0 ? orthonormalize_columns(std::move(perturbed))
                                                : Matrix::identity(n);
  s.nuisance = Matrix(1, n);
  for (std::size_t i = 0; i < n; ++i) s.nuisance[i] = spec.shift_offset_strength * (0.5 + std::abs(normal(rng)));
  return s;
}

TimeSeries sample_subject(const SiteSpec& spec, const ClassTemplates& tpl, const SiteShift& shift, int label,
                          std::size_t index) {
  Rng rng = make_rng(spec.seed, {kSubjectStream, static_cast<std::uint64_t>(label), index});
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t n = spec.n_rois, k = tpl.n_factors, t = spec.series_length;
  const double cls = (label == 1 ? 0.5 : -0.5) * spec.class_separation;
  Matrix loadings(n, k);
  for (std::size_t i = 0; i < loadings.size(); ++i) {
    loadings[i] = tpl.base[i] + cls * tpl.discriminant[i] + kLoadingJitter * normal(rng);
  }
  Matrix factors(t, k);
  for (std::size_t i = 0; i < factors.size(); ++i) factors[i] = normal(rng);
  Matrix x;
  kernels::gemm_nt(factors, loadings, x);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += spec.noise_std * normal(rng);
  Matrix mixed;
  kernels::gemm_nt(x, shift.mixing, mixed);
  for (std::size_t r = 0; r < t; ++r) {
    const double g = normal(rng);
    for (std::size_t c = 0; c < n; ++c) mixed(r, c) += g * shift.nuisance[c];
  }
  const char* cls_tag = label == 1 ? "mdd" : "nc";
  return TimeSeries{spec.site_id + "-" + cls_tag + "-" + std::to_string(index), std::move(mixed), spec.site_id};
}

SyntheticSeries synth_site(const SiteSpec& spec, const ClassTemplates& tpl) {
  const SiteShift shift = make_shift(spec);
  SyntheticSeries out;
  const std::size_t per = spec.n_subjects_per_class;
  out.series.resize(2 * per);
  out.labels.resize(2 * per);
  parallel_indexed(2 * per, [&](std::size_t i) {
    const int label = i < per ? 0 : 1;
    out.series[i] = sample_subject(spec, tpl, shift, label, i % per);
    out.labels[i] = label;
  });
  return out;
}

}  // namespace

std::pair<SyntheticSeries, SyntheticSeries> synth_multisite_series(const SiteSpec& source, const SiteSpec& target) {
  source.validate();
  target.validate();
  if (source.n_rois != target.n_rois) {
    throw Error(ErrorKind::InvalidConfig, "source and target site specs disagree on n_rois");
  }
  const ClassTemplates tpl = make_templates(source.n_rois, source.seed);
  return {synth_site(source, tpl), synth_site(target, tpl)};
}

Dataset to_dataset(const SyntheticSeries& s, std::size_t n_rois) {
  Dataset ds;
  ds.n_rois = n_rois;
  ds.subjects.resize(s.series.size());
  parallel_indexed(s.series.size(), [&](std::size_t i) {
    const TimeSeries& ts = s.series[i];
    ds.subjects[i] = Subject{ts.subject_id, pearson_fcn(ts), s.labels[i], ts.site_id};
  });
  return ds;
}

std::pair<Dataset, Dataset> synth_multisite(const SiteSpec& source, const SiteSpec& target) {
  auto [src, tgt] = synth_multisite_series(source, target);
  return {to_dataset(src, source.n_rois), to_dataset(tgt, target.n_rois)};
}

}  // namespace aufa
