#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "aufa/diff.hpp"
#include "aufa/params.hpp"

// Classification head and the three training objectives: source
// cross-entropy, feature alignment between domains, and the consistency
// loss between clean and augmented target predictions.
namespace aufa {

struct ClassifierConfig {
  std::size_t in_dim = 116 * 116;
  std::size_t hidden = 4096;
};

// "clf.W1" (in_dim x hidden), "clf.b1", "clf.W2" (hidden x 2), "clf.b2".
struct ClassifierParams {
  ClassifierConfig config;
  ParamStore store;
};

ClassifierParams init_classifier(const ClassifierConfig& config, std::uint64_t seed);

struct ClassifierGraph {
  diff::Value w1, b1, w2, b2;
};

ClassifierGraph bind_classifier(diff::Tape& tape, ClassifierParams& params);

struct Prediction {
  diff::Value hidden;  // B x hidden, post-ReLU
  diff::Value logits;  // B x 2
  diff::Value probs;   // B x 2, row softmax of logits

  // Per-layer activations of the fully connected stack, aligned across
  // domains by mmd_loss.
  std::vector<diff::Value> fc_features() const { return {hidden, logits}; }
};

Prediction classify(const ClassifierGraph& clf, const diff::Value& features);

// (1 / B^2) sum_l |colsum(source_l) - colsum(target_l)|^2, i.e. the squared
// distance between the batch means summed over layers.
diff::Value mmd_loss(std::span<const diff::Value> source_feats, std::span<const diff::Value> target_feats);

struct FilterMask {
  std::vector<bool> keep;
  double threshold = 0.8;

  std::size_t kept() const;
  double kept_fraction() const;
  std::vector<std::size_t> kept_rows() const;
};

// Row i is kept iff both the clean and the augmented prediction put more
// than `threshold` (strictly) on their most likely class.
FilterMask confidence_filter(const Matrix& probs, const Matrix& probs_aug, double threshold);
FilterMask confidence_filter(const Prediction& p, const Prediction& p_aug, double threshold);

// Symmetric KL over kept rows: 0.5 * (KL(Pt || Pa) + KL(Pa || Pt)), with
// gradient through both sides. An empty mask yields an exact 0 constant.
diff::Value self_opt_loss(const Prediction& p, const Prediction& p_aug, const FilterMask& mask);

struct LossWeights {
  double mmd = 1.0;  // lambda_1
  double aug = 1.0;  // lambda_2
};

// L_C + lambda_1 L_M + lambda_2 L_A. A term whose weight is exactly zero is
// left out of the graph, so it contributes no gradient at all.
diff::Value joint_loss(const diff::Value& l_c, const diff::Value& l_m, const diff::Value& l_a,
                       const LossWeights& w);

}  // namespace aufa
