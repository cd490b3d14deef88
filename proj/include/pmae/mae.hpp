// mae.hpp -- the fused multimodal masked autoencoder: tokenizers + encoder
// + per-modality decoders, mask-token interleaving and the masked-only
// reconstruction loss.
#pragma once

#include <array>
#include <string>
#include <vector>

#include "pmae/data.hpp"
#include "pmae/encoder.hpp"
#include "pmae/masking.hpp"
#include "pmae/tokenizer.hpp"

namespace pmae {

struct ModelConfig {
  EncoderConfig encoder;
  int conv_channels = 64;
  int conv_kernel = 21;
  int n_chunks = 30;
  int chunk_samples = 100;
  bool mask_token_modality_embed = true;

  int total_tokens() const { return kNumModalities * n_chunks; }
  MaskConfig mask_geometry(double p, bool drop) const {
    MaskConfig mc;
    mc.p = p;
    mc.modality_drop = drop;
    mc.n_modalities = kNumModalities;
    mc.tokens_per_modality = n_chunks;
    return mc;
  }
};

// Cross-attention block + one transformer layer + linear head back to the
// raw 1 s signal dimension.
template <class T>
struct Decoder {
  LayerNorm<T> ln_q;
  MultiHeadAttention<T> cross;
  TransformerLayer<T> layer;
  LayerNorm<T> ln_out;
  Linear<T> head;

  Decoder() = default;
  Decoder(ParamStore<T>& ps, const std::string& name, const ModelConfig& cfg, Rng& rng)
      : ln_q(ps, name + ".ln_q", cfg.encoder.dim),
        cross(ps, name + ".cross", cfg.encoder.dim, cfg.encoder.n_heads, cfg.encoder.dropout, rng),
        layer(ps, name + ".layer", cfg.encoder.dim, cfg.encoder.n_heads, cfg.encoder.ff_width, cfg.encoder.dropout, rng),
        ln_out(ps, name + ".ln_out", cfg.encoder.dim),
        head(ps, name + ".head", cfg.encoder.dim, cfg.chunk_samples, rng) {}

  // queries: this modality's tokens; memory: the full interleaved sequence
  Tensor<T> forward(const Tensor<T>& queries, const Tensor<T>& memory, bool training, Rng& rng) const {
    Tensor<T> x = add(queries, cross.forward(ln_q.forward(queries), memory, training, rng));
    x = layer.forward(x, training, rng);
    return head.forward(ln_out.forward(x));
  }
};

template <class T>
class MaeModel {
 public:
  MaeModel() = default;
  explicit MaeModel(const ModelConfig& cfg, Rng rng) : cfg_(cfg) {
    Rng r = rng.derive("model.init");
    for (int m = 0; m < kNumModalities; ++m) {
      tokenizers_[static_cast<std::size_t>(m)] =
          Tokenizer<T>(params_, std::string("tokenizer.") + modality_name(m), cfg.conv_channels, cfg.conv_kernel,
                       cfg.encoder.dim, cfg.n_chunks, cfg.chunk_samples, r);
    }
    modality_embed_ = params_.create("modality_embed", {kNumModalities, cfg.encoder.dim},
                                     init::normal<T>(static_cast<std::size_t>(kNumModalities) * cfg.encoder.dim, 0.02, r));
    mask_token_ = params_.create("mask_token", {cfg.encoder.dim},
                                 init::truncated_normal<T>(static_cast<std::size_t>(cfg.encoder.dim), 0.02, -2.0, 2.0, r));
    encoder_ = EncoderStack<T>(params_, "encoder", cfg.encoder, r);
    for (int m = 0; m < kNumModalities; ++m) {
      decoders_[static_cast<std::size_t>(m)] = Decoder<T>(params_, std::string("decoder.") + modality_name(m), cfg, r);
    }
    positional_ = positional_table<T>(cfg.n_chunks, cfg.encoder.dim);
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  const Tensor<T>& positional() const { return positional_; }
  const Tensor<T>& modality_embed() const { return modality_embed_; }
  const Tensor<T>& mask_token() const { return mask_token_; }
  const EncoderStack<T>& encoder() const { return encoder_; }

  // 30 tokens for one modality channel, positional + modality embedding added.
  Tensor<T> tokenize(const SignalWindow& w, int modality) const {
    Tensor<T> toks = tokenizers_[static_cast<std::size_t>(modality)].forward_channel(w.samples[static_cast<std::size_t>(modality)]);
    return add_rowvec(add(toks, positional_), row(modality_embed_, modality));
  }

  // Full fused sequence over all four modalities (canonical order).
  TokenSequence<T> tokenize_window(const SignalWindow& w) const {
    std::vector<Tensor<T>> blocks(kNumModalities);
    std::array<bool, kNumModalities> present;
    present.fill(true);
    for (int m = 0; m < kNumModalities; ++m) blocks[static_cast<std::size_t>(m)] = tokenize(w, m);
    return fuse(blocks, present);
  }

  // Encoder pass over visible tokens of a full window (no masking).
  TokenSequence<T> encode_window(const SignalWindow& w, bool training, Rng& rng, EncoderTrace<T>* trace = nullptr,
                                 std::vector<Tensor<T>>* layer_outputs = nullptr) const {
    TokenSequence<T> seq = tokenize_window(w);
    TokenSequence<T> out;
    out.tokens = encoder_.forward(seq.tokens, training, rng, trace, layer_outputs);
    out.tags = seq.tags;
    if (trace) trace->tags = seq.tags;
    return out;
  }

  // Reconstruct one modality from the interleaved full sequence.
  Tensor<T> decode(int modality, const TokenSequence<T>& full_seq, bool training, Rng& rng) const {
    check(full_seq.n_tokens() == cfg_.total_tokens(), "decode: expected the full interleaved sequence");
    std::vector<int> idx;
    idx.reserve(static_cast<std::size_t>(cfg_.n_chunks));
    for (int i = 0; i < full_seq.n_tokens(); ++i) {
      if (full_seq.tags[static_cast<std::size_t>(i)].modality == modality) idx.push_back(i);
    }
    check(static_cast<int>(idx.size()) == cfg_.n_chunks, "decode: modality tags missing from sequence");
    Tensor<T> queries = gather_rows(full_seq.tokens, idx);
    return decoders_[static_cast<std::size_t>(modality)].forward(queries, full_seq.tokens, training, rng);
  }

  struct MaeOutput {
    Tensor<T> loss;                                      // scalar
    std::array<Tensor<T>, kNumModalities> reconstruction;  // (n_chunks, chunk_samples) each
    std::array<double, kNumModalities> masked_mse;       // per-modality value (-1: no masked tokens)
  };

  // Full MAE pass for one window under a mask plan.
  MaeOutput forward(const SignalWindow& w, const MaskPlan& plan, bool training, Rng& rng) const {
    TokenSequence<T> full = tokenize_window(w);
    TokenSequence<T> visible = apply_mask(full, plan);
    TokenSequence<T> encoded;
    encoded.tokens = encoder_.forward(visible.tokens, training, rng);
    encoded.tags = visible.tags;
    MaskConfig geometry = cfg_.mask_geometry(0.0, false);
    TokenSequence<T> inter =
        interleave(encoded, plan, mask_token_, positional_, modality_embed_, geometry, cfg_.mask_token_modality_embed);
    MaeOutput out;
    for (int m = 0; m < kNumModalities; ++m) {
      out.reconstruction[static_cast<std::size_t>(m)] = decode(m, inter, training, rng);
    }
    out.loss = masked_reconstruction_loss(out.reconstruction, w, plan, &out.masked_mse);
    return out;
  }

  // MSE over masked tokens only, averaged per modality then over the
  // modalities that have masked tokens. Empty plan gives 0.
  Tensor<T> masked_reconstruction_loss(const std::array<Tensor<T>, kNumModalities>& recon, const SignalWindow& w,
                                       const MaskPlan& plan, std::array<double, kNumModalities>* per_modality = nullptr) const {
    if (per_modality) per_modality->fill(-1.0);
    std::vector<Tensor<T>> terms;
    for (int m = 0; m < kNumModalities; ++m) {
      std::vector<int> positions;
      for (int idx : plan.masked) {
        if (idx / cfg_.n_chunks == m) positions.push_back(idx % cfg_.n_chunks);
      }
      if (positions.empty()) continue;
      Tensor<T> pred = gather_rows(recon[static_cast<std::size_t>(m)], positions);
      std::vector<T> tvals;
      tvals.reserve(positions.size() * static_cast<std::size_t>(cfg_.chunk_samples));
      for (int pos : positions) {
        for (int i = 0; i < cfg_.chunk_samples; ++i) {
          tvals.push_back(static_cast<T>(w.samples[static_cast<std::size_t>(m)][static_cast<std::size_t>(pos * cfg_.chunk_samples + i)]));
        }
      }
      Tensor<T> target = Tensor<T>::from({static_cast<int>(positions.size()), cfg_.chunk_samples}, std::move(tvals));
      Tensor<T> term = mse(pred, target);
      if (per_modality) (*per_modality)[static_cast<std::size_t>(m)] = static_cast<double>(term.item());
      terms.push_back(std::move(term));
    }
    if (terms.empty()) return Tensor<T>::scalar(T(0));
    Tensor<T> acc = terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
    return scale(acc, 1.0 / static_cast<double>(terms.size()));
  }

 private:
  ModelConfig cfg_;
  ParamStore<T> params_;
  std::array<Tokenizer<T>, kNumModalities> tokenizers_;
  Tensor<T> modality_embed_;
  Tensor<T> mask_token_;
  EncoderStack<T> encoder_;
  std::array<Decoder<T>, kNumModalities> decoders_;
  Tensor<T> positional_;
};

// Layernorm each token then mean over tokens; the probe-side pooling.
template <class T>
Tensor<T> pool_tokens(const Tensor<T>& tokens) {
  check(tokens.defined() && tokens.ndim() == 2 && tokens.dim(0) >= 1, "pool_tokens: empty input");
  return mean_over_rows(layernorm_rows(tokens));
}

}  // namespace pmae
