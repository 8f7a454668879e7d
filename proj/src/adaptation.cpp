#include "aufa/adaptation.hpp"

#include <algorithm>

#include "aufa/error.hpp"

namespace aufa {

using diff::Value;

ClassifierParams init_classifier(const ClassifierConfig& config, std::uint64_t seed) {
  if (config.in_dim == 0 || config.hidden == 0) {
    throw Error(ErrorKind::InvalidConfig, "classifier widths must be positive");
  }
  Rng rng = make_rng(seed, {0x636c66});
  ClassifierParams p{config, {}};
  p.store.add("clf.W1", glorot_uniform(config.in_dim, config.hidden, rng));
  p.store.add("clf.b1", Matrix(1, config.hidden));
  p.store.add("clf.W2", glorot_uniform(config.hidden, 2, rng));
  p.store.add("clf.b2", Matrix(1, 2));
  return p;
}

ClassifierGraph bind_classifier(diff::Tape& tape, ClassifierParams& params) {
  return {tape.param(params.store.at("clf.W1")), tape.param(params.store.at("clf.b1")),
          tape.param(params.store.at("clf.W2")), tape.param(params.store.at("clf.b2"))};
}

Prediction classify(const ClassifierGraph& clf, const Value& features) {
  if (features.cols() != clf.w1.rows()) {
    throw Error(ErrorKind::DimensionMismatch, "classify: features have " + std::to_string(features.cols()) +
                                                  " columns, classifier expects " + std::to_string(clf.w1.rows()));
  }
  Prediction p;
  p.hidden = diff::relu(diff::affine(features, clf.w1, clf.b1));
  p.logits = diff::affine(p.hidden, clf.w2, clf.b2);
  p.probs = diff::row_softmax(p.logits);
  return p;
}

Value mmd_loss(std::span<const Value> source_feats, std::span<const Value> target_feats) {
  if (source_feats.size() != target_feats.size() || source_feats.empty()) {
    throw Error(ErrorKind::DimensionMismatch, "mmd_loss: layer count mismatch");
  }
  const std::size_t b = source_feats.front().rows();
  Value total;
  for (std::size_t l = 0; l < source_feats.size(); ++l) {
    const Value& s = source_feats[l];
    const Value& t = target_feats[l];
    if (s.rows() != b || t.rows() != b) throw Error(ErrorKind::DimensionMismatch, "mmd_loss: batch size mismatch");
    if (s.cols() != t.cols()) throw Error(ErrorKind::DimensionMismatch, "mmd_loss: feature width mismatch");
    const Value d = diff::sub(diff::column_sum(s), diff::column_sum(t));
    const Value sq = diff::sum(diff::hadamard(d, d));
    total = total.valid() ? diff::add(total, sq) : sq;
  }
  return diff::scale(total, 1.0 / static_cast<double>(b * b));
}

std::size_t FilterMask::kept() const { return static_cast<std::size_t>(std::count(keep.begin(), keep.end(), true)); }

double FilterMask::kept_fraction() const {
  return keep.empty() ? 0.0 : static_cast<double>(kept()) / static_cast<double>(keep.size());
}

std::vector<std::size_t> FilterMask::kept_rows() const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < keep.size(); ++i)
    if (keep[i]) rows.push_back(i);
  return rows;
}

FilterMask confidence_filter(const Matrix& probs, const Matrix& probs_aug, double threshold) {
  if (!(threshold > 0.5 && threshold < 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "confidence_filter: threshold must lie in (0.5, 1)");
  }
  if (!probs.same_shape(probs_aug)) throw Error(ErrorKind::DimensionMismatch, "confidence_filter: batch mismatch");
  FilterMask mask;
  mask.threshold = threshold;
  mask.keep.resize(probs.rows());
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    const auto a = probs.row(r);
    const auto b = probs_aug.row(r);
    mask.keep[r] = *std::max_element(a.begin(), a.end()) > threshold &&
                   *std::max_element(b.begin(), b.end()) > threshold;
  }
  return mask;
}

FilterMask confidence_filter(const Prediction& p, const Prediction& p_aug, double threshold) {
  return confidence_filter(p.probs.data(), p_aug.probs.data(), threshold);
}

Value self_opt_loss(const Prediction& p, const Prediction& p_aug, const FilterMask& mask) {
  if (mask.keep.size() != p.probs.rows() || p.probs.rows() != p_aug.probs.rows()) {
    throw Error(ErrorKind::DimensionMismatch, "self_opt_loss: mask does not match batch");
  }
  const std::vector<std::size_t> rows = mask.kept_rows();
  if (rows.empty()) return p.probs.tape()->constant(Matrix(1, 1, 0.0));
  const Value pt = diff::select_rows(p.probs, rows);
  const Value pa = diff::select_rows(p_aug.probs, rows);
  return diff::scale(diff::add(diff::kl_divergence(pt, pa), diff::kl_divergence(pa, pt)), 0.5);
}

Value joint_loss(const Value& l_c, const Value& l_m, const Value& l_a, const LossWeights& w) {
  if (!(w.mmd >= 0.0 && w.aug >= 0.0)) throw Error(ErrorKind::InvalidArgument, "loss weights must be >= 0");
  for (const Value* v : {&l_c, &l_m, &l_a}) {
    if (v->rows() != 1 || v->cols() != 1) throw Error(ErrorKind::DimensionMismatch, "joint_loss: scalar inputs only");
  }
  Value total = l_c;
  if (w.mmd != 0.0) total = diff::add(total, diff::scale(l_m, w.mmd));
  if (w.aug != 0.0) total = diff::add(total, diff::scale(l_a, w.aug));
  return total;
}

}  // namespace aufa
