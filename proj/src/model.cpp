#include "aufa/model.hpp"

#include <exception>

#include "aufa/error.hpp"
#include "aufa/kernels.hpp"

namespace aufa {

std::vector<diff::Parameter*> Model::parameters() {
  auto out = encoder.store.pointers();
  for (auto* p : classifier.store.pointers()) out.push_back(p);
  return out;
}

void Model::zero_grad() {
  encoder.store.zero_grad();
  classifier.store.zero_grad();
}

Model init_model(const EncoderConfig& encoder, std::size_t classifier_hidden, std::uint64_t seed) {
  Model m{init_encoder(encoder, seed), {}};
  m.classifier = init_classifier({encoder.d_model * encoder.d_model, classifier_hidden}, seed);
  return m;
}

BoundModel bind_model(diff::Tape& tape, Model& model) {
  BoundModel b{bind_encoder(tape, model.encoder), {}};
  b.classifier = bind_classifier(tape, model.classifier);
  return b;
}

BatchEncoding encode_batch(const BoundModel& m, const Dataset& ds, const std::vector<std::size_t>& subjects,
                           bool keep_maps) {
  BatchEncoding out;
  std::vector<diff::Value> rows;
  rows.reserve(subjects.size());
  for (std::size_t idx : subjects) {
    out.per_subject.push_back(encode(m.encoder, ds.subjects.at(idx).fcn, std::nullopt, keep_maps));
    rows.push_back(out.per_subject.back().features);
  }
  out.features = diff::concat_rows(rows);
  return out;
}

Inference infer(const Model& model, const Dataset& ds, bool keep_maps, bool keep_features) {
  const std::size_t n = ds.size();
  Inference out;
  out.probs = Matrix(n, 2);
  if (keep_features) out.features.resize(n);
  if (keep_maps) out.maps.resize(n);
  std::vector<std::exception_ptr> errors(n);
#pragma omp parallel if (!kernels::serial() && n > 1)
  {
    // Each thread binds its own copy; parameters are read-only here.
    Model local = model;
#pragma omp for schedule(dynamic)
    for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(n); ++ii) {
      const auto i = static_cast<std::size_t>(ii);
      try {
        diff::Tape tape;
        BoundModel bound = bind_model(tape, local);
        EncodeResult enc = encode(bound.encoder, ds.subjects[i].fcn, std::nullopt, keep_maps);
        Prediction p = classify(bound.classifier, enc.features);
        out.probs(i, 0) = p.probs.data()(0, 0);
        out.probs(i, 1) = p.probs.data()(0, 1);
        if (keep_features) out.features[i] = enc.features.data();
        if (keep_maps) out.maps[i] = std::move(enc.maps);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

}  // namespace aufa
