#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "aufa/connectome.hpp"
#include "aufa/encoder.hpp"
#include "aufa/model.hpp"

#include "json.hpp"

namespace aufa {

// Positive class is 1 (MDD). A ratio with a zero denominator is reported as
// 0 and flagged.
struct MetricsReport {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::optional<double> auc;  // absent when only one class is present
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::size_t n_subjects = 0;
  bool precision_undefined = false;
  bool recall_undefined = false;
  bool f1_undefined = false;
};

MetricsReport hard_metrics(const std::vector<int>& predicted, const std::vector<int>& truth);

// Mann-Whitney: share of (positive, negative) pairs ranked correctly, ties
// worth one half.
double auc(std::span<const double> scores, const std::vector<int>& labels);

// Hard metrics at argmax plus AUC on P(class 1).
MetricsReport evaluate_probs(const Matrix& probs, const std::vector<int>& truth);

nlohmann::json to_json(const MetricsReport& r);

struct RankedConnection {
  std::size_t i = 0, j = 0;  // i < j
  double weight = 0.0;
};

struct ConnectionRanking {
  std::vector<RankedConnection> pairs;  // descending weight, ties by (i, j)

  std::vector<RankedConnection> top(std::size_t k = 10) const;
};

// Mean of A over subjects, layers and heads, symmetrized, diagonal dropped.
// The mean is order independent bit for bit.
ConnectionRanking aggregate_attention(const std::vector<AttentionMaps>& subjects);

void write_ranking_csv(const std::filesystem::path& path, const ConnectionRanking& ranking, std::size_t k,
                       const std::vector<std::string>& roi_names = {});

// Strict upper triangle, row by row.
std::vector<double> upper_triangle(const Matrix& x);
Matrix from_upper_triangle(std::span<const double> values, std::size_t n, double diagonal = 1.0);

struct FeatureTable {
  std::vector<std::string> columns;
  std::vector<std::string> subject_ids;
  std::vector<std::string> sites;
  std::vector<std::optional<int>> labels;
  std::vector<std::vector<double>> rows;
};

FeatureTable raw_features(const Dataset& ds);
FeatureTable encoded_features(const Model& model, const Dataset& ds);
void write_feature_csv(const std::filesystem::path& path, const FeatureTable& table);

struct BinaryGraph {
  std::size_t n = 0;
  std::vector<std::uint8_t> adj;  // n * n, symmetric, zero diagonal
  double density = 0.0;

  bool edge(std::size_t i, std::size_t j) const { return adj[i * n + j] != 0; }
  std::vector<std::size_t> neighbors(std::size_t v) const;
  std::size_t edge_count() const;

  static BinaryGraph from_edges(std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& edges);
};

// Keeps the ceil(density * N(N-1)/2) largest signed connectivity values.
BinaryGraph binarize_fcn(const ConnectivityMatrix& x, double density = 0.2);

// Unnormalized, undirected; each unordered pair {s, t} counted once.
std::vector<double> betweenness_centrality(const BinaryGraph& g);

// Mean of 1/d over neighbor pairs inside the neighborhood subgraph.
std::vector<double> local_efficiency(const BinaryGraph& g);

enum class GraphMetric { Betweenness, LocalEfficiency };

// One row per subject: the metric for every node of its binarized FCN.
std::vector<std::vector<double>> graph_metric_features(const Dataset& ds, GraphMetric metric, double density = 0.2);

struct ProbeConfig {
  std::size_t iterations = 500;
  double lr = 0.1;
};

struct ProbeResult {
  std::vector<int> predicted;
  std::vector<double> scores;           // P(class 1)
  std::vector<std::size_t> dropped;     // zero-variance or duplicate columns
};

// Logistic regression fit by full-batch gradient descent on standardized
// training features, starting from zero weights.
ProbeResult linear_probe(const std::vector<std::vector<double>>& train, const std::vector<int>& labels,
                         const std::vector<std::vector<double>>& held_out, const ProbeConfig& cfg = {});

}  // namespace aufa
