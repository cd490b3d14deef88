// encoder.hpp -- fused multimodal transformer encoder over visible tokens,
// with optional capture of per-layer, per-head post-softmax attention.
#pragma once

#include <string>
#include <vector>

#include "pmae/nn.hpp"
#include "pmae/tokenizer.hpp"

namespace pmae {

struct EncoderConfig {
  int n_layers = 8;
  int n_heads = 8;
  int dim = 512;
  double dropout = 0.1;
  int ff_width = 2048;
};

template <class T>
struct EncoderTrace {
  std::vector<LayerAttention<T>> layers;
  std::vector<TokenTag> tags;
};

template <class T>
struct EncoderStack {
  std::vector<TransformerLayer<T>> layers;
  LayerNorm<T> final_ln;

  EncoderStack() = default;
  EncoderStack(ParamStore<T>& ps, const std::string& name, const EncoderConfig& cfg, Rng& rng) {
    check(cfg.dim % cfg.n_heads == 0, "EncoderStack: dim not divisible by heads");
    layers.reserve(static_cast<std::size_t>(cfg.n_layers));
    for (int l = 0; l < cfg.n_layers; ++l) {
      layers.emplace_back(ps, name + ".layer" + std::to_string(l), cfg.dim, cfg.n_heads, cfg.ff_width, cfg.dropout, rng);
    }
    final_ln = LayerNorm<T>(ps, name + ".final_ln", cfg.dim);
  }

  // Same token count out as in. Trace captured only on request; per-layer
  // outputs optionally collected for unit-level analyses.
  Tensor<T> forward(const Tensor<T>& tokens, bool training, Rng& rng, EncoderTrace<T>* trace = nullptr,
                    std::vector<Tensor<T>>* layer_outputs = nullptr) const {
    check(tokens.defined() && tokens.ndim() == 2 && tokens.dim(0) >= 1, "EncoderStack: empty token sequence");
    if (trace) trace->layers.assign(layers.size(), {});
    Tensor<T> x = tokens;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      x = layers[l].forward(x, training, rng, trace ? &trace->layers[l] : nullptr);
      if (layer_outputs) layer_outputs->push_back(x);
    }
    return final_ln.forward(x);
  }
};

template <class T>
TokenSequence<T> encode(const EncoderStack<T>& enc, const TokenSequence<T>& seq, bool training, Rng& rng,
                        EncoderTrace<T>* trace = nullptr) {
  TokenSequence<T> out;
  out.tokens = enc.forward(seq.tokens, training, rng, trace);
  out.tags = seq.tags;
  if (trace) trace->tags = seq.tags;
  return out;
}

}  // namespace pmae
