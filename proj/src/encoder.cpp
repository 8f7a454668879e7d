#include "aufa/encoder.hpp"

#include <cmath>
#include <string>

#include "aufa/error.hpp"

namespace aufa {

using diff::Value;

void EncoderConfig::validate() const {
  auto bad = [](const std::string& what) { throw Error(ErrorKind::InvalidConfig, "encoder config: " + what); };
  if (n_layers == 0) bad("n_layers must be >= 1");
  if (n_heads == 0) bad("n_heads must be >= 1");
  if (d_model == 0) bad("d_model must be >= 1");
  if (head_dim() == 0) bad("head dimension must be >= 1 (set d_head when d_model < n_heads)");
  if (ffn_hidden == 0) bad("ffn_hidden must be >= 1");
  if (!(ln_eps > 0.0)) bad("ln_eps must be > 0");
}

namespace {

std::string layer_name(std::size_t l) { return "layer" + std::to_string(l); }

}  // namespace

EncoderParams init_encoder(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng = make_rng(seed, {0x656e63});
  EncoderParams p{config, {}};
  const std::size_t d = config.d_model, dk = config.head_dim();
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    const std::string ln = layer_name(l);
    for (std::size_t h = 0; h < config.n_heads; ++h) {
      const std::string hn = ln + ".head" + std::to_string(h);
      p.store.add(hn + ".WQ", glorot_uniform(d, dk, rng));
      p.store.add(hn + ".WK", glorot_uniform(d, dk, rng));
      p.store.add(hn + ".WV", glorot_uniform(d, dk, rng));
    }
    p.store.add(ln + ".W", glorot_uniform(config.concat_width(), d, rng));
    p.store.add(ln + ".ln1.g", Matrix(1, d, 1.0));
    p.store.add(ln + ".ln1.b", Matrix(1, d));
    p.store.add(ln + ".ffn.W1", glorot_uniform(d, config.ffn_hidden, rng));
    p.store.add(ln + ".ffn.b1", Matrix(1, config.ffn_hidden));
    p.store.add(ln + ".ffn.W2", glorot_uniform(config.ffn_hidden, d, rng));
    p.store.add(ln + ".ffn.b2", Matrix(1, d));
    p.store.add(ln + ".ln2.g", Matrix(1, d, 1.0));
    p.store.add(ln + ".ln2.b", Matrix(1, d));
  }
  return p;
}

EncoderGraph bind_encoder(diff::Tape& tape, EncoderParams& params) {
  EncoderGraph g;
  g.config = params.config;
  ParamStore& s = params.store;
  for (std::size_t l = 0; l < g.config.n_layers; ++l) {
    const std::string ln = layer_name(l);
    EncoderGraph::Layer layer;
    for (std::size_t h = 0; h < g.config.n_heads; ++h) {
      const std::string hn = ln + ".head" + std::to_string(h);
      layer.heads.push_back({tape.param(s.at(hn + ".WQ")), tape.param(s.at(hn + ".WK")),
                             tape.param(s.at(hn + ".WV"))});
    }
    layer.proj = tape.param(s.at(ln + ".W"));
    layer.ln1_g = tape.param(s.at(ln + ".ln1.g"));
    layer.ln1_b = tape.param(s.at(ln + ".ln1.b"));
    layer.w1 = tape.param(s.at(ln + ".ffn.W1"));
    layer.b1 = tape.param(s.at(ln + ".ffn.b1"));
    layer.w2 = tape.param(s.at(ln + ".ffn.W2"));
    layer.b2 = tape.param(s.at(ln + ".ffn.b2"));
    layer.ln2_g = tape.param(s.at(ln + ".ln2.g"));
    layer.ln2_b = tape.param(s.at(ln + ".ln2.b"));
    g.layers.push_back(std::move(layer));
  }
  return g;
}

HeadOutput attention_head(const EncoderGraph::Head& head, const Value& z) {
  if (z.cols() != head.wq.rows()) {
    throw Error(ErrorKind::DimensionMismatch, "attention_head: features have " + std::to_string(z.cols()) +
                                                  " columns, weights expect " + std::to_string(head.wq.rows()));
  }
  const Value q = diff::matmul(z, head.wq);
  const Value k = diff::matmul(z, head.wk);
  const Value v = diff::matmul(z, head.wv);
  const double scale = 1.0 / std::sqrt(static_cast<double>(head.wk.cols()));
  const Value a = diff::row_softmax(diff::matmul(q, diff::transpose(k)), scale);
  return {diff::matmul(a, v), a};
}

Value multi_head_layer(const EncoderGraph::Layer& layer, const Value& z, double ln_eps, std::vector<Matrix>* maps) {
  std::vector<Value> heads;
  heads.reserve(layer.heads.size());
  for (const auto& h : layer.heads) {
    HeadOutput out = attention_head(h, z);
    if (maps) maps->push_back(out.attention.data());
    heads.push_back(out.features);
  }
  const Value projected = diff::matmul(diff::concat_cols(heads), layer.proj);
  return diff::row_layer_norm(projected, layer.ln1_g, layer.ln1_b, ln_eps);
}

Value feed_forward(const EncoderGraph::Layer& layer, const Value& z, double ln_eps) {
  const Value hidden = diff::relu(diff::affine(z, layer.w1, layer.b1));
  return diff::row_layer_norm(diff::affine(hidden, layer.w2, layer.b2), layer.ln2_g, layer.ln2_b, ln_eps);
}

EncodeResult run_layers(const EncoderGraph& graph, const Value& z, std::size_t from_layer, bool keep_maps) {
  if (from_layer > graph.layers.size()) {
    throw Error(ErrorKind::InvalidArgument, "run_layers: start layer out of range");
  }
  EncodeResult r;
  Value cur = z;
  for (std::size_t l = from_layer; l < graph.layers.size(); ++l) {
    r.layer_inputs.push_back(cur);
    std::vector<Matrix> maps;
    cur = multi_head_layer(graph.layers[l], cur, graph.config.ln_eps, keep_maps ? &maps : nullptr);
    cur = feed_forward(graph.layers[l], cur, graph.config.ln_eps);
    if (keep_maps) r.maps.maps.push_back(std::move(maps));
  }
  r.features = diff::flatten(cur);
  return r;
}

EncodeResult encode(const EncoderGraph& graph, const ConnectivityMatrix& x,
                    const std::optional<AugmentInjection>& injection, bool keep_maps) {
  if (x.n_rois() != graph.config.d_model) {
    throw Error(ErrorKind::DimensionMismatch, "encode: connectivity has " + std::to_string(x.n_rois()) +
                                                  " ROIs but d_model is " + std::to_string(graph.config.d_model));
  }
  if (graph.layers.empty()) throw Error(ErrorKind::InvalidArgument, "encode: unbound encoder graph");
  diff::Tape& tape = *graph.layers.front().proj.tape();
  const Value input = tape.constant(x.values());
  if (!injection) return run_layers(graph, input, 0, keep_maps);

  const AugmentInjection& inj = *injection;
  if (inj.layer >= graph.layers.size()) {
    throw Error(ErrorKind::InvalidArgument, "encode: injection layer " + std::to_string(inj.layer) +
                                                " out of range [0, " + std::to_string(graph.layers.size()) + ")");
  }
  if (!(inj.gamma >= 0.0 && inj.gamma <= 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "encode: gamma must lie in [0, 1]");
  }
  EncodeResult prefix;
  Value cur = input;
  for (std::size_t l = 0; l < inj.layer; ++l) {
    prefix.layer_inputs.push_back(cur);
    std::vector<Matrix> maps;
    cur = multi_head_layer(graph.layers[l], cur, graph.config.ln_eps, keep_maps ? &maps : nullptr);
    cur = feed_forward(graph.layers[l], cur, graph.config.ln_eps);
    if (keep_maps) prefix.maps.maps.push_back(std::move(maps));
  }
  const Value mixed = diff::lerp(cur, inj.partner_features, inj.gamma);
  EncodeResult rest = run_layers(graph, mixed, inj.layer, keep_maps);
  prefix.features = rest.features;
  for (auto& v : rest.layer_inputs) prefix.layer_inputs.push_back(v);
  for (auto& m : rest.maps.maps) prefix.maps.maps.push_back(std::move(m));
  return prefix;
}

}  // namespace aufa
