#pragma once

#include <cstdint>
#include <vector>

#include "aufa/adaptation.hpp"
#include "aufa/connectome.hpp"
#include "aufa/encoder.hpp"

namespace aufa {

// Encoder plus classification head; parameter order is encoder first.
struct Model {
  EncoderParams encoder;
  ClassifierParams classifier;

  std::vector<diff::Parameter*> parameters();
  void zero_grad();
};

Model init_model(const EncoderConfig& encoder, std::size_t classifier_hidden, std::uint64_t seed);

struct BoundModel {
  EncoderGraph encoder;
  ClassifierGraph classifier;
};

BoundModel bind_model(diff::Tape& tape, Model& model);

// Encodes the listed subjects on one tape and stacks their graph-level
// features into a B x (N * d_model) matrix (row i = subjects[i]).
struct BatchEncoding {
  diff::Value features;
  std::vector<EncodeResult> per_subject;
};

BatchEncoding encode_batch(const BoundModel& m, const Dataset& ds, const std::vector<std::size_t>& subjects,
                           bool keep_maps = false);

struct Inference {
  Matrix probs;                      // n x 2
  std::vector<Matrix> features;      // graph-level feature per subject (1 x N*d)
  std::vector<AttentionMaps> maps;   // when requested
};

// Forward pass over every subject, one tape per subject, parallel over
// subjects with results in dataset order.
Inference infer(const Model& model, const Dataset& ds, bool keep_maps = false, bool keep_features = false);

}  // namespace aufa
