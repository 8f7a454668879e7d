#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "aufa/connectome.hpp"
#include "aufa/diff.hpp"
#include "aufa/params.hpp"

// Transformer graph encoder over connectivity matrices. Each node (ROI)
// attends to every other node; a layer is multi-head attention, projection
// and layer norm, then a two-layer feed-forward block and layer norm. There
// are no residual connections and no positional encoding: node identity is
// carried by the connectivity rows.
namespace aufa {

struct EncoderConfig {
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_model = 116;
  std::size_t d_head = 0;  // 0 selects d_model / n_heads
  std::size_t ffn_hidden = 256;
  double ln_eps = 1e-5;

  std::size_t head_dim() const { return d_head ? d_head : d_model / n_heads; }
  std::size_t concat_width() const { return n_heads * head_dim(); }
  void validate() const;
};

// Learnable weights, named "layer<l>.head<h>.WQ|WK|WV", "layer<l>.W",
// "layer<l>.ln1.g|b", "layer<l>.ffn.W1|b1|W2|b2", "layer<l>.ln2.g|b".
struct EncoderParams {
  EncoderConfig config;
  ParamStore store;
};

// Glorot-uniform weights, zero biases, unit LN gains, zero LN offsets.
EncoderParams init_encoder(const EncoderConfig& config, std::uint64_t seed);

// Row-stochastic attention matrices indexed [layer][head].
struct AttentionMaps {
  std::vector<std::vector<Matrix>> maps;

  std::size_t n_layers() const { return maps.size(); }
  const Matrix& at(std::size_t layer, std::size_t head) const { return maps.at(layer).at(head); }
};

// Encoder weights bound as leaves of one tape, so every subject encoded on
// that tape shares (and accumulates gradient into) the same parameters.
struct EncoderGraph {
  struct Head {
    diff::Value wq, wk, wv;
  };
  struct Layer {
    std::vector<Head> heads;
    diff::Value proj, ln1_g, ln1_b;
    diff::Value w1, b1, w2, b2, ln2_g, ln2_b;
  };

  EncoderConfig config;
  std::vector<Layer> layers;
};

EncoderGraph bind_encoder(diff::Tape& tape, EncoderParams& params);

// Replaces the input of `layer` by (1 - gamma) Z + gamma Z', where Z' is the
// partner subject's input to the same layer.
struct AugmentInjection {
  std::size_t layer = 0;
  diff::Value partner_features;
  double gamma = 0.0;
};

struct HeadOutput {
  diff::Value features;  // N x d_head
  diff::Value attention; // N x N
};

HeadOutput attention_head(const EncoderGraph::Head& head, const diff::Value& z);

// Heads in index order, concatenated, projected back to d_model, then row
// layer-normalized. Appends each head's attention to `maps` when given.
diff::Value multi_head_layer(const EncoderGraph::Layer& layer, const diff::Value& z, double ln_eps,
                             std::vector<Matrix>* maps = nullptr);

diff::Value feed_forward(const EncoderGraph::Layer& layer, const diff::Value& z, double ln_eps);

struct EncodeResult {
  diff::Value features;                 // 1 x (N * d_model), row-major flatten
  std::vector<diff::Value> layer_inputs; // input Z^l of every layer that ran
  AttentionMaps maps;                   // only the layers that ran
};

// Runs layers [from_layer, n_layers) starting from z.
EncodeResult run_layers(const EncoderGraph& graph, const diff::Value& z, std::size_t from_layer,
                        bool keep_maps = true);

EncodeResult encode(const EncoderGraph& graph, const ConnectivityMatrix& x,
                    const std::optional<AugmentInjection>& injection = std::nullopt, bool keep_maps = true);

}  // namespace aufa
