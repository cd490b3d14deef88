// synth.hpp -- synthetic multimodal generator for desk-scale experiments.
//
// A hidden Markov state per 30 s window selects a base frequency; each
// modality renders that state as a small sum of harmonics with its own
// fixed harmonic weights. Coupling in [0,1] blends per-window random
// phase/amplitude draws between a shared source (coupling=1: every
// modality is a deterministic function of the same latent draw) and
// per-modality independent sources (coupling=0).
#pragma once

#include <cstdint>
#include <vector>

#include "pmae/data.hpp"

namespace pmae {

struct SynthConfig {
  int n_patients = 16;
  int windows_per_patient = 8;
  int n_states = 5;
  double coupling = 1.0;        // [0,1]
  double noise = 0.1;           // additive white noise std
  double sample_rate = 100.0;   // 100: already at target rate; 200: run preprocess
  double arousal_rate = 0.027;  // rare transient event probability per window
  double state_stay_prob = 0.8;
  int harmonics = 2;
  std::uint64_t seed = 0;
};

// Debug trace of the latent draws behind one generated window.
struct SynthWindowTrace {
  int state = 0;
  std::vector<double> shared_phase;                  // per harmonic
  std::vector<std::vector<double>> modality_phase;   // [modality][harmonic]
  double shared_amp = 1.0;
  std::vector<double> modality_amp;                  // [modality]
};

std::vector<PatientRecord> generate_synthetic(const SynthConfig& cfg,
                                              std::vector<std::vector<SynthWindowTrace>>* traces = nullptr);

}  // namespace pmae
