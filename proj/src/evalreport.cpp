#include "aufa/evalreport.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <iostream>
#include <limits>
#include <numeric>

#include "aufa/csv.hpp"
#include "aufa/error.hpp"

namespace aufa {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void check_binary(const std::vector<int>& labels, const char* what) {
  for (int y : labels)
    if (y != 0 && y != 1) throw Error(ErrorKind::InvalidArgument, std::string(what) + ": labels must be 0 or 1");
}

double ratio(std::size_t num, std::size_t den, bool& undefined) {
  undefined = den == 0;
  return undefined ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

MetricsReport hard_metrics(const std::vector<int>& predicted, const std::vector<int>& truth) {
  if (predicted.size() != truth.size()) {
    throw Error(ErrorKind::DimensionMismatch, "hard_metrics: " + std::to_string(predicted.size()) +
                                                  " predictions for " + std::to_string(truth.size()) + " labels");
  }
  if (truth.empty()) throw Error(ErrorKind::InvalidArgument, "hard_metrics: empty input");
  check_binary(predicted, "hard_metrics");
  check_binary(truth, "hard_metrics");
  MetricsReport r;
  r.n_subjects = truth.size();
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (predicted[i] == 1) {
      (truth[i] == 1 ? r.tp : r.fp) += 1;
    } else {
      (truth[i] == 0 ? r.tn : r.fn) += 1;
    }
  }
  r.accuracy = static_cast<double>(r.tp + r.tn) / static_cast<double>(r.n_subjects);
  r.precision = ratio(r.tp, r.tp + r.fp, r.precision_undefined);
  r.recall = ratio(r.tp, r.tp + r.fn, r.recall_undefined);
  r.f1 = ratio(2 * r.tp, 2 * r.tp + r.fp + r.fn, r.f1_undefined);
  return r;
}

double auc(std::span<const double> scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw Error(ErrorKind::DimensionMismatch, "auc: length mismatch");
  check_binary(labels, "auc");
  // Sort once and credit ties by group: O(n log n), exact in counting terms.
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::uint64_t n_pos = 0, n_neg = 0;
  for (int y : labels) (y == 1 ? n_pos : n_neg) += 1;
  if (n_pos == 0 || n_neg == 0) throw Error(ErrorKind::InvalidArgument, "auc: both classes must be present");

  // Twice the Mann-Whitney U so that half credits stay integral.
  std::uint64_t twice_u = 0, neg_below = 0;
  for (std::size_t g = 0; g < order.size();) {
    std::size_t h = g;
    std::uint64_t pos = 0, neg = 0;
    while (h < order.size() && scores[order[h]] == scores[order[g]]) {
      (labels[order[h]] == 1 ? pos : neg) += 1;
      ++h;
    }
    twice_u += pos * (2 * neg_below + neg);
    neg_below += neg;
    g = h;
  }
  return static_cast<double>(twice_u) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

MetricsReport evaluate_probs(const Matrix& probs, const std::vector<int>& truth) {
  if (probs.cols() != 2 || probs.rows() != truth.size()) {
    throw Error(ErrorKind::DimensionMismatch, "evaluate_probs: probabilities " + probs.shape_string() + " for " +
                                                  std::to_string(truth.size()) + " labels");
  }
  std::vector<int> pred(truth.size());
  std::vector<double> score(truth.size());
  for (std::size_t i = 0; i < truth.size(); ++i) {
    pred[i] = probs(i, 1) > probs(i, 0) ? 1 : 0;
    score[i] = probs(i, 1);
  }
  MetricsReport r = hard_metrics(pred, truth);
  const auto pos = std::count(truth.begin(), truth.end(), 1);
  if (pos > 0 && pos < static_cast<std::ptrdiff_t>(truth.size())) r.auc = auc(score, truth);
  return r;
}

json to_json(const MetricsReport& r) {
  json j{{"accuracy", r.accuracy},
         {"precision", r.precision},
         {"recall", r.recall},
         {"f1", r.f1},
         {"auc", r.auc ? json(*r.auc) : json(nullptr)},
         {"confusion", {{"tp", r.tp}, {"fp", r.fp}, {"tn", r.tn}, {"fn", r.fn}}},
         {"n_subjects", r.n_subjects},
         {"undefined", {{"precision", r.precision_undefined}, {"recall", r.recall_undefined}, {"f1", r.f1_undefined}}}};
  return j;
}

// ---- attention ranking --------------------------------------------------------

std::vector<RankedConnection> ConnectionRanking::top(std::size_t k) const {
  return {pairs.begin(), pairs.begin() + static_cast<std::ptrdiff_t>(std::min(k, pairs.size()))};
}

ConnectionRanking aggregate_attention(const std::vector<AttentionMaps>& subjects) {
  std::vector<const Matrix*> all;
  for (const auto& s : subjects)
    for (const auto& layer : s.maps)
      for (const auto& m : layer) all.push_back(&m);
  if (all.empty()) throw Error(ErrorKind::InvalidArgument, "aggregate_attention: no attention maps");
  const std::size_t n = all.front()->rows();
  for (const Matrix* m : all) {
    if (m->rows() != n || m->cols() != n) {
      throw Error(ErrorKind::DimensionMismatch, "aggregate_attention: inconsistent map shape " + m->shape_string());
    }
  }
  // Summing each entry's values in sorted order makes the mean independent
  // of the order of subjects, layers and heads.
  Matrix mean(n, n);
  const double count = static_cast<double>(all.size());
#pragma omp parallel
  {
    std::vector<double> vals(all.size());
#pragma omp for schedule(static)
    for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(n * n); ++ii) {
      const auto idx = static_cast<std::size_t>(ii);
      for (std::size_t k = 0; k < all.size(); ++k) vals[k] = (*all[k])[idx];
      std::sort(vals.begin(), vals.end());
      double s = 0.0;
      for (double v : vals) s += v;
      mean[idx] = s / count;
    }
  }
  ConnectionRanking r;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) r.pairs.push_back({i, j, 0.5 * (mean(i, j) + mean(j, i))});
  std::stable_sort(r.pairs.begin(), r.pairs.end(),
                   [](const RankedConnection& a, const RankedConnection& b) { return a.weight > b.weight; });
  return r;
}

void write_ranking_csv(const fs::path& path, const ConnectionRanking& ranking, std::size_t k,
                       const std::vector<std::string>& roi_names) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::MissingFile, "cannot write " + path.string());
  const bool named = !roi_names.empty();
  out << "rank,roi_i,roi_j" << (named ? ",name_i,name_j" : "") << ",weight\n";
  std::size_t rank = 1;
  for (const auto& p : ranking.top(k)) {
    out << rank++ << ',' << p.i << ',' << p.j;
    if (named) out << ',' << roi_names.at(p.i) << ',' << roi_names.at(p.j);
    out << ',' << format_double(p.weight) << '\n';
  }
}

// ---- feature export -------------------------------------------------------------

std::vector<double> upper_triangle(const Matrix& x) {
  if (x.rows() != x.cols()) throw Error(ErrorKind::DimensionMismatch, "upper_triangle: matrix is not square");
  std::vector<double> out;
  out.reserve(x.rows() * (x.rows() - (x.rows() ? 1 : 0)) / 2);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = i + 1; j < x.cols(); ++j) out.push_back(x(i, j));
  return out;
}

Matrix from_upper_triangle(std::span<const double> values, std::size_t n, double diagonal) {
  if (values.size() != n * (n - (n ? 1 : 0)) / 2) {
    throw Error(ErrorKind::DimensionMismatch, "from_upper_triangle: " + std::to_string(values.size()) +
                                                  " values do not fill a " + std::to_string(n) + " x " +
                                                  std::to_string(n) + " triangle");
  }
  Matrix m(n, n);
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) {
    m(i, i) = diagonal;
    for (std::size_t j = i + 1; j < n; ++j) m(i, j) = m(j, i) = values[k++];
  }
  return m;
}

namespace {

FeatureTable table_skeleton(const Dataset& ds) {
  FeatureTable t;
  for (const auto& s : ds.subjects) {
    t.subject_ids.push_back(s.id);
    t.sites.push_back(s.site);
    t.labels.push_back(s.label);
  }
  return t;
}

}  // namespace

FeatureTable raw_features(const Dataset& ds) {
  FeatureTable t = table_skeleton(ds);
  for (std::size_t i = 0; i < ds.n_rois; ++i)
    for (std::size_t j = i + 1; j < ds.n_rois; ++j) t.columns.push_back("fc_" + std::to_string(i) + "_" + std::to_string(j));
  for (const auto& s : ds.subjects) t.rows.push_back(upper_triangle(s.fcn.values()));
  return t;
}

FeatureTable encoded_features(const Model& model, const Dataset& ds) {
  FeatureTable t = table_skeleton(ds);
  const Inference inf = infer(model, ds, false, true);
  const std::size_t dim = inf.features.empty() ? 0 : inf.features.front().size();
  for (std::size_t k = 0; k < dim; ++k) t.columns.push_back("f_" + std::to_string(k));
  for (const auto& f : inf.features) t.rows.push_back(f.values());
  return t;
}

void write_feature_csv(const fs::path& path, const FeatureTable& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::MissingFile, "cannot write " + path.string());
  out << "subject_id,site,label";
  for (const auto& c : table.columns) out << ',' << c;
  out << '\n';
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    out << table.subject_ids[r] << ',' << table.sites[r] << ',';
    if (table.labels[r]) out << *table.labels[r];
    for (double v : table.rows[r]) out << ',' << format_double(v);
    out << '\n';
  }
}

// ---- graphs -----------------------------------------------------------------------

std::vector<std::size_t> BinaryGraph::neighbors(std::size_t v) const {
  std::vector<std::size_t> out;
  for (std::size_t u = 0; u < n; ++u)
    if (edge(v, u)) out.push_back(u);
  return out;
}

std::size_t BinaryGraph::edge_count() const {
  return static_cast<std::size_t>(std::count(adj.begin(), adj.end(), std::uint8_t{1})) / 2;
}

BinaryGraph BinaryGraph::from_edges(std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& edges) {
  BinaryGraph g;
  g.n = n;
  g.adj.assign(n * n, 0);
  for (auto [i, j] : edges) {
    if (i >= n || j >= n || i == j) throw Error(ErrorKind::InvalidArgument, "BinaryGraph: bad edge");
    g.adj[i * n + j] = g.adj[j * n + i] = 1;
  }
  const std::size_t possible = n * (n - (n ? 1 : 0)) / 2;
  g.density = possible ? static_cast<double>(g.edge_count()) / static_cast<double>(possible) : 0.0;
  return g;
}

BinaryGraph binarize_fcn(const ConnectivityMatrix& x, double density) {
  if (!(density > 0.0 && density <= 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "binarize_fcn: density must lie in (0, 1]");
  }
  const std::size_t n = x.n_rois();
  struct Edge {
    std::size_t i, j;
    double w;
  };
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) edges.push_back({i, j, x.values()(i, j)});
  // Already in (i, j) order, so a stable sort breaks ties lexicographically.
  std::stable_sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) { return a.w > b.w; });
  const auto keep = std::min<std::size_t>(
      edges.size(), static_cast<std::size_t>(std::ceil(density * static_cast<double>(edges.size()))));
  std::vector<std::pair<std::size_t, std::size_t>> kept;
  for (std::size_t k = 0; k < keep; ++k) kept.emplace_back(edges[k].i, edges[k].j);
  return BinaryGraph::from_edges(n, kept);
}

namespace {

constexpr std::size_t kUnreached = std::numeric_limits<std::size_t>::max();

// Hop distances and shortest-path counts from s.
void bfs_counts(const BinaryGraph& g, std::size_t s, std::vector<std::size_t>& dist, std::vector<double>& sigma) {
  dist.assign(g.n, kUnreached);
  sigma.assign(g.n, 0.0);
  std::deque<std::size_t> queue{s};
  dist[s] = 0;
  sigma[s] = 1.0;
  while (!queue.empty()) {
    const std::size_t v = queue.front();
    queue.pop_front();
    for (std::size_t u = 0; u < g.n; ++u) {
      if (!g.edge(v, u)) continue;
      if (dist[u] == kUnreached) {
        dist[u] = dist[v] + 1;
        queue.push_back(u);
      }
      if (dist[u] == dist[v] + 1) sigma[u] += sigma[v];
    }
  }
}

}  // namespace

std::vector<double> betweenness_centrality(const BinaryGraph& g) {
  const std::size_t n = g.n;
  std::vector<std::vector<std::size_t>> dist(n);
  std::vector<std::vector<double>> sigma(n);
  for (std::size_t s = 0; s < n; ++s) bfs_counts(g, s, dist[s], sigma[s]);

  // sigma_st(v) = sigma_sv * sigma_vt whenever v lies on a shortest s-t path;
  // pairs are visited in (s, t) order with s < t.
  std::vector<double> bc(n, 0.0);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t t = s + 1; t < n; ++t) {
      const std::size_t d = dist[s][t];
      if (d == kUnreached || d < 2) continue;
      for (std::size_t v = 0; v < n; ++v) {
        if (v == s || v == t || dist[s][v] == kUnreached || dist[v][t] == kUnreached) continue;
        if (dist[s][v] + dist[v][t] == d) bc[v] += sigma[s][v] * sigma[v][t] / sigma[s][t];
      }
    }
  }
  return bc;
}

std::vector<double> local_efficiency(const BinaryGraph& g) {
  std::vector<double> out(g.n, 0.0);
  for (std::size_t v = 0; v < g.n; ++v) {
    const std::vector<std::size_t> nb = g.neighbors(v);
    const std::size_t k = nb.size();
    if (k < 2) continue;
    double total = 0.0;
    std::vector<std::size_t> d(k);
    for (std::size_t a = 0; a < k; ++a) {
      std::fill(d.begin(), d.end(), kUnreached);
      d[a] = 0;
      std::deque<std::size_t> queue{a};
      while (!queue.empty()) {
        const std::size_t x = queue.front();
        queue.pop_front();
        for (std::size_t y = 0; y < k; ++y) {
          if (d[y] == kUnreached && g.edge(nb[x], nb[y])) {
            d[y] = d[x] + 1;
            queue.push_back(y);
          }
        }
      }
      for (std::size_t b = a + 1; b < k; ++b)
        if (d[b] != kUnreached) total += 1.0 / static_cast<double>(d[b]);
    }
    out[v] = total / (static_cast<double>(k) * static_cast<double>(k - 1) / 2.0);
  }
  return out;
}

std::vector<std::vector<double>> graph_metric_features(const Dataset& ds, GraphMetric metric, double density) {
  std::vector<std::vector<double>> out(ds.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(ds.size()); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const BinaryGraph g = binarize_fcn(ds.subjects[i].fcn, density);
    out[i] = metric == GraphMetric::Betweenness ? betweenness_centrality(g) : local_efficiency(g);
  }
  return out;
}

// ---- linear probe ---------------------------------------------------------------

ProbeResult linear_probe(const std::vector<std::vector<double>>& train, const std::vector<int>& labels,
                         const std::vector<std::vector<double>>& held_out, const ProbeConfig& cfg) {
  if (train.empty()) throw Error(ErrorKind::InvalidArgument, "linear_probe: no training rows");
  if (train.size() != labels.size()) throw Error(ErrorKind::DimensionMismatch, "linear_probe: label count mismatch");
  check_binary(labels, "linear_probe");
  const std::size_t d = train.front().size();
  for (const auto* set : {&train, &held_out})
    for (const auto& row : *set)
      if (row.size() != d) throw Error(ErrorKind::DimensionMismatch, "linear_probe: feature dimensions disagree");

  const std::size_t n = train.size();
  std::vector<double> mean(d, 0.0), sd(d, 0.0);
  for (std::size_t c = 0; c < d; ++c) {
    for (const auto& row : train) mean[c] += row[c];
    mean[c] /= static_cast<double>(n);
    for (const auto& row : train) sd[c] += (row[c] - mean[c]) * (row[c] - mean[c]);
    sd[c] = std::sqrt(sd[c] / static_cast<double>(n));
  }

  ProbeResult result;
  std::vector<std::size_t> cols;
  std::vector<std::vector<double>> z_cols;  // standardized training columns kept so far
  for (std::size_t c = 0; c < d; ++c) {
    if (sd[c] == 0.0) {
      result.dropped.push_back(c);
      continue;
    }
    std::vector<double> z(n);
    for (std::size_t r = 0; r < n; ++r) z[r] = (train[r][c] - mean[c]) / sd[c];
    // A repeated column would only rescale the step along one direction.
    if (std::find(z_cols.begin(), z_cols.end(), z) != z_cols.end()) {
      result.dropped.push_back(c);
      continue;
    }
    cols.push_back(c);
    z_cols.push_back(std::move(z));
  }
  if (!result.dropped.empty()) {
    std::cerr << "warning: linear_probe dropped " << result.dropped.size()
              << " zero-variance or duplicate feature column(s)\n";
  }

  const std::size_t k = cols.size();
  std::vector<double> w(k, 0.0), grad(k);
  double b = 0.0;
  std::vector<double> err(n);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    for (std::size_t r = 0; r < n; ++r) {
      double s = b;
      for (std::size_t c = 0; c < k; ++c) s += w[c] * z_cols[c][r];
      err[r] = 1.0 / (1.0 + std::exp(-s)) - static_cast<double>(labels[r]);
    }
    double gb = 0.0;
    for (std::size_t r = 0; r < n; ++r) gb += err[r];
    for (std::size_t c = 0; c < k; ++c) {
      double g = 0.0;
      for (std::size_t r = 0; r < n; ++r) g += err[r] * z_cols[c][r];
      grad[c] = g / static_cast<double>(n);
    }
    for (std::size_t c = 0; c < k; ++c) w[c] -= cfg.lr * grad[c];
    b -= cfg.lr * gb / static_cast<double>(n);
  }

  for (const auto& row : held_out) {
    double s = b;
    for (std::size_t c = 0; c < k; ++c) s += w[c] * (row[cols[c]] - mean[cols[c]]) / sd[cols[c]];
    const double p = 1.0 / (1.0 + std::exp(-s));
    result.scores.push_back(p);
    result.predicted.push_back(p > 0.5 ? 1 : 0);
  }
  return result;
}

}  // namespace aufa
