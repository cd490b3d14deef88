// masking.hpp -- uniform token masking with optional input modality drop,
// and mask-token interleaving for decoder input preparation.
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "pmae/common.hpp"
#include "pmae/rng.hpp"
#include "pmae/tokenizer.hpp"

namespace pmae {

struct MaskConfig {
  double p = 0.6;             // token mask probability (0.6 with drop on, 0.7 off)
  bool modality_drop = true;  // drop one whole modality per batch
  int n_modalities = kNumModalities;
  int tokens_per_modality = 30;

  int total_tokens() const { return n_modalities * tokens_per_modality; }
  // overall expected mask fraction with drop on: 1/N + p(N-1)/N
  double expected_fraction() const {
    if (!modality_drop) return p;
    const double n = n_modalities;
    return 1.0 / n + p * (n - 1.0) / n;
  }
};

// One per-batch plan over the canonical fused sequence (modality-major
// token index = modality * tokens_per_modality + position).
struct MaskPlan {
  int dropped_modality = -1;  // -1: none
  std::vector<int> masked;    // sorted ascending
  std::vector<int> visible;   // sorted ascending

  bool is_masked(int idx) const { return std::binary_search(masked.begin(), masked.end(), idx); }
};

inline MaskPlan sample_mask(const MaskConfig& cfg, Rng& rng) {
  check(cfg.p >= 0.0 && cfg.p <= 1.0, "sample_mask: p must be in [0,1]");
  check(cfg.n_modalities >= 1 && cfg.tokens_per_modality >= 1, "sample_mask: empty token grid");
  const int total = cfg.total_tokens();
  const int per_mod = cfg.tokens_per_modality;

  MaskPlan plan;
  std::vector<char> masked(static_cast<std::size_t>(total), 0);
  int n_uniform;
  std::vector<int> pool;
  if (cfg.modality_drop) {
    check(cfg.n_modalities >= 2, "sample_mask: modality drop needs at least two modalities");
    plan.dropped_modality = rng.uniform_int(cfg.n_modalities);
    for (int t = 0; t < per_mod; ++t) masked[static_cast<std::size_t>(plan.dropped_modality * per_mod + t)] = 1;
    for (int i = 0; i < total; ++i) {
      if (!masked[static_cast<std::size_t>(i)]) pool.push_back(i);
    }
    n_uniform = static_cast<int>(std::lround(cfg.p * static_cast<double>(pool.size())));
  } else {
    for (int i = 0; i < total; ++i) pool.push_back(i);
    n_uniform = static_cast<int>(std::lround(cfg.p * total));
  }
  // exact-count uniform masking without replacement
  rng.shuffle(pool.begin(), pool.end());
  for (int i = 0; i < n_uniform; ++i) masked[static_cast<std::size_t>(pool[static_cast<std::size_t>(i)])] = 1;

  for (int i = 0; i < total; ++i) {
    (masked[static_cast<std::size_t>(i)] ? plan.masked : plan.visible).push_back(i);
  }
  check(!plan.visible.empty(), "sample_mask: mask leaves no visible tokens");
  return plan;
}

// Keep only visible tokens; tags survive untouched.
template <class T>
TokenSequence<T> apply_mask(const TokenSequence<T>& seq, const MaskPlan& plan) {
  check(static_cast<int>(plan.masked.size() + plan.visible.size()) == seq.n_tokens(), "apply_mask: plan does not cover sequence");
  check(!plan.visible.empty(), "apply_mask: nothing visible");
  TokenSequence<T> out;
  out.tokens = gather_rows(seq.tokens, plan.visible);
  out.tags.reserve(plan.visible.size());
  for (int idx : plan.visible) out.tags.push_back(seq.tags[static_cast<std::size_t>(idx)]);
  return out;
}

// Rebuild the full-length sequence: encoder outputs at visible slots, the
// learnable mask token at masked slots. Positional embeddings are re-added
// to inserted mask tokens; modality embeddings too when enabled.
template <class T>
TokenSequence<T> interleave(const TokenSequence<T>& encoder_out, const MaskPlan& plan, const Tensor<T>& mask_token,
                            const Tensor<T>& positional, const Tensor<T>& modality_embed, const MaskConfig& cfg,
                            bool add_modality_embed = true) {
  const int total = cfg.total_tokens();
  const int per_mod = cfg.tokens_per_modality;
  check(static_cast<int>(plan.visible.size()) == encoder_out.n_tokens(), "interleave: encoder output does not match plan");
  for (std::size_t i = 0; i < plan.visible.size(); ++i) {
    const int idx = plan.visible[i];
    const TokenTag want{idx / per_mod, idx % per_mod};
    check(encoder_out.tags[i] == want, "interleave: tag mismatch at visible slot " + std::to_string(idx));
  }

  std::vector<Tensor<T>> rows;
  rows.reserve(static_cast<std::size_t>(total));
  std::vector<TokenTag> tags;
  tags.reserve(static_cast<std::size_t>(total));
  std::size_t vis_cursor = 0;
  for (int idx = 0; idx < total; ++idx) {
    const int m = idx / per_mod;
    const int pos = idx % per_mod;
    tags.push_back({m, pos});
    if (vis_cursor < plan.visible.size() && plan.visible[vis_cursor] == idx) {
      rows.push_back(row(encoder_out.tokens, static_cast<int>(vis_cursor)));
      ++vis_cursor;
    } else {
      Tensor<T> slot = add(mask_token, row(positional, pos));
      if (add_modality_embed) slot = add(slot, row(modality_embed, m));
      rows.push_back(std::move(slot));
    }
  }
  TokenSequence<T> out;
  out.tokens = stack_rows(rows);
  out.tags = std::move(tags);
  return out;
}

}  // namespace pmae
