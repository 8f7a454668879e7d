#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "aufa/matrix.hpp"

namespace aufa {

// Per-subject regional signals: rows are time points, columns are ROIs.
struct TimeSeries {
  std::string subject_id;
  Matrix values;
  std::string site_id;

  std::size_t length() const { return values.rows(); }
  std::size_t n_rois() const { return values.cols(); }
  // Throws unless T >= 3, N >= 2 and every entry is finite.
  void validate() const;
};

// Symmetric N x N Pearson matrix with unit diagonal and entries in [-1, 1].
class ConnectivityMatrix {
 public:
  ConnectivityMatrix() = default;
  // Validates the invariants (symmetry within 1e-12, unit diagonal, range).
  explicit ConnectivityMatrix(Matrix values);

  const Matrix& values() const { return values_; }
  std::size_t n_rois() const { return values_.rows(); }

  friend bool operator==(const ConnectivityMatrix&, const ConnectivityMatrix&) = default;

 private:
  Matrix values_;
};

// Entry (i, j) is the Pearson correlation of columns i and j. A constant
// column raises ErrorKind::DegenerateSignal naming the column.
ConnectivityMatrix pearson_fcn(const TimeSeries& ts);

TimeSeries load_timeseries(const std::filesystem::path& path, std::string subject_id = {},
                           std::string site_id = {});

struct Subject {
  std::string id;
  ConnectivityMatrix fcn;
  std::optional<int> label;  // 0 = NC, 1 = MDD
  std::string site;
};

struct Dataset {
  std::vector<Subject> subjects;
  std::size_t n_rois = 0;

  std::size_t size() const { return subjects.size(); }
  bool fully_labeled() const;
  // Labels of all subjects; throws MissingLabel if any is absent.
  std::vector<int> labels() const;
  // Same subjects and order with labels removed (what a trainer may see of
  // a target site).
  Dataset without_labels() const;
};

// Reads a manifest {n_rois, subjects: [{id, path, kind, label, site}]}.
// Relative paths resolve against the manifest's directory. Per-subject FCN
// construction runs in parallel; output keeps manifest order.
Dataset load_dataset(const std::filesystem::path& manifest_path);

// Writes one FCN CSV per subject under `dir` plus `dir/<name>.json`.
// Returns the manifest path.
std::filesystem::path save_dataset(const Dataset& ds, const std::filesystem::path& dir,
                                   const std::string& name);

// Documented target-site shift used by the benchmark and CLI defaults.
inline constexpr double kDefaultShiftRotation = 0.35;
inline constexpr double kDefaultShiftOffset = 1.0;

struct SiteSpec {
  std::size_t n_subjects_per_class = 50;
  std::size_t n_rois = 116;
  std::size_t series_length = 150;
  double class_separation = 1.0;
  double shift_rotation_strength = 0.0;
  double shift_offset_strength = 0.0;
  double noise_std = 1.0;
  std::uint64_t seed = 0;
  std::string site_id = "site";

  void validate() const;
};

// Raw series for both sites, class 0 subjects first then class 1.
struct SyntheticSeries {
  std::vector<TimeSeries> series;
  std::vector<int> labels;
};

// Class templates come from source.seed and are shared by both sites; each
// site draws its own subjects from its own seed. A site's mixing rotation
// and nuisance-signal offset are drawn from that site's seed and scaled by
// its shift strengths. Both specs must agree on n_rois.
std::pair<SyntheticSeries, SyntheticSeries> synth_multisite_series(const SiteSpec& source,
                                                                   const SiteSpec& target);

// Same generator, with every subject reduced to its Pearson FCN. Target
// labels are kept for held-out evaluation only.
std::pair<Dataset, Dataset> synth_multisite(const SiteSpec& source, const SiteSpec& target);

Dataset to_dataset(const SyntheticSeries& s, std::size_t n_rois);

}  // namespace aufa
