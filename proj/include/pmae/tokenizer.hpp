// tokenizer.hpp -- per-modality tokenization of 30 s windows into 1 s
// tokens, sinusoidal positional embedding, modality embedding, and
// concatenation fusion.
#pragma once

#include <array>
#include <string>
#include <vector>

#include "pmae/data.hpp"
#include "pmae/nn.hpp"
#include "pmae/tensor.hpp"

namespace pmae {

struct TokenTag {
  int modality = 0;
  int position = 0;
  bool operator==(const TokenTag&) const = default;
};

template <class T>
struct TokenSequence {
  Tensor<T> tokens;  // (n_tokens, dim)
  std::vector<TokenTag> tags;

  int n_tokens() const { return static_cast<int>(tags.size()); }
};

// Classic interleaved sin/cos table: pe[pos][2i] = sin(pos / 10000^(2i/D)),
// pe[pos][2i+1] = cos(pos / 10000^(2i/D)).
template <class T>
std::vector<T> positional_embedding(int pos, int dim) {
  check(pos >= 0, "positional_embedding: negative position");
  std::vector<T> pe(static_cast<std::size_t>(dim));
  for (int i = 0; i < dim; i += 2) {
    const double freq = std::pow(10000.0, -static_cast<double>(i) / dim);
    pe[static_cast<std::size_t>(i)] = static_cast<T>(std::sin(pos * freq));
    if (i + 1 < dim) pe[static_cast<std::size_t>(i + 1)] = static_cast<T>(std::cos(pos * freq));
  }
  return pe;
}

template <class T>
Tensor<T> positional_table(int n_pos, int dim) {
  std::vector<T> vals;
  vals.reserve(static_cast<std::size_t>(n_pos) * dim);
  for (int p = 0; p < n_pos; ++p) {
    auto pe = positional_embedding<T>(p, dim);
    vals.insert(vals.end(), pe.begin(), pe.end());
  }
  return Tensor<T>::from({n_pos, dim}, std::move(vals));
}

// One conv layer + global max pool + linear projection + layernorm.
// A 3000-sample channel becomes 30 tokens of size dim.
template <class T>
struct Tokenizer {
  Tensor<T> conv_w;  // (channels, kernel)
  Tensor<T> conv_b;  // (channels)
  Linear<T> proj;    // channels -> dim
  LayerNorm<T> ln;
  int n_chunks = 30;
  int chunk_samples = 100;

  Tokenizer() = default;
  Tokenizer(ParamStore<T>& ps, const std::string& name, int channels, int kernel, int dim, int chunks, int samples, Rng& rng)
      : n_chunks(chunks), chunk_samples(samples) {
    conv_w = ps.create(name + ".conv.w", {channels, kernel}, init::xavier_uniform<T>(kernel, channels, rng));
    conv_b = ps.create(name + ".conv.b", {channels}, init::constant<T>(static_cast<std::size_t>(channels), T(0)));
    proj = Linear<T>(ps, name + ".proj", channels, dim, rng);
    ln = LayerNorm<T>(ps, name + ".ln", dim);
  }

  // channel: chunked (n_chunks, chunk_samples) signal constants
  Tensor<T> forward(const std::vector<Tensor<T>>& chunks) const {
    check(static_cast<int>(chunks.size()) == n_chunks, "Tokenizer: expected " + std::to_string(n_chunks) + " chunks");
    std::vector<Tensor<T>> pooled;
    pooled.reserve(chunks.size());
    for (const auto& c : chunks) {
      check(c.ndim() == 1 && c.dim(0) == chunk_samples, "Tokenizer: chunk length mismatch");
      pooled.push_back(maxpool_time(conv1d(c, conv_w, conv_b, Padding::Same)));
    }
    return ln.forward(proj.forward(stack_rows(pooled)));
  }

  Tensor<T> forward_channel(const std::vector<float>& channel) const {
    check(static_cast<int>(channel.size()) == n_chunks * chunk_samples,
          "Tokenizer: channel has " + std::to_string(channel.size()) + " samples, expected " + std::to_string(n_chunks * chunk_samples));
    std::vector<Tensor<T>> chunks;
    chunks.reserve(static_cast<std::size_t>(n_chunks));
    for (int c = 0; c < n_chunks; ++c) {
      std::vector<T> vals(static_cast<std::size_t>(chunk_samples));
      for (int i = 0; i < chunk_samples; ++i) vals[static_cast<std::size_t>(i)] = static_cast<T>(channel[static_cast<std::size_t>(c * chunk_samples + i)]);
      chunks.push_back(Tensor<T>::from({chunk_samples}, std::move(vals)));
    }
    return forward(chunks);
  }
};

// Concatenate per-modality token blocks (already carrying positional and
// modality embeddings) in fixed EEG, EMG, EOG, ECG order. `present` marks
// modalities that participate; absent ones must be explicitly dropped.
template <class T>
TokenSequence<T> fuse(const std::vector<Tensor<T>>& modality_tokens, const std::array<bool, kNumModalities>& present) {
  std::vector<Tensor<T>> parts;
  std::vector<TokenTag> tags;
  check(modality_tokens.size() == kNumModalities, "fuse: expected one (possibly dropped) block per modality");
  for (int m = 0; m < kNumModalities; ++m) {
    if (!present[static_cast<std::size_t>(m)]) {
      check(!modality_tokens[static_cast<std::size_t>(m)].defined(),
            "fuse: modality marked dropped but tokens were provided");
      continue;
    }
    const auto& blk = modality_tokens[static_cast<std::size_t>(m)];
    check(blk.defined(), std::string("fuse: missing ") + modality_name(m) + " tokens without an explicit drop flag");
    parts.push_back(blk);
    for (int p = 0; p < blk.dim(0); ++p) tags.push_back({m, p});
  }
  check(!parts.empty(), "fuse: all modalities dropped");
  TokenSequence<T> seq;
  seq.tokens = parts.size() == 1 ? parts[0] : concat_rows(parts);
  seq.tags = std::move(tags);
  return seq;
}

}  // namespace pmae
