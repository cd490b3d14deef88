#include "pmae/synth.hpp"

#include <algorithm>
#include <cmath>

namespace pmae {

namespace {
constexpr double kPi = 3.14159265358979323846;

struct Spectra {
  // harmonic weights [state][modality][harmonic]
  std::vector<std::vector<std::vector<double>>> w;
  std::vector<double> base_freq;  // per state, Hz
};

Spectra make_spectra(const SynthConfig& cfg, Rng rng) {
  Spectra sp;
  sp.base_freq.resize(static_cast<std::size_t>(cfg.n_states));
  for (int k = 0; k < cfg.n_states; ++k) sp.base_freq[static_cast<std::size_t>(k)] = 1.0 + k;
  sp.w.assign(static_cast<std::size_t>(cfg.n_states),
              std::vector<std::vector<double>>(kNumModalities, std::vector<double>(static_cast<std::size_t>(cfg.harmonics))));
  for (int k = 0; k < cfg.n_states; ++k) {
    for (int m = 0; m < kNumModalities; ++m) {
      double energy = 0;
      auto& w = sp.w[static_cast<std::size_t>(k)][static_cast<std::size_t>(m)];
      for (int b = 0; b < cfg.harmonics; ++b) {
        w[static_cast<std::size_t>(b)] = rng.uniform(0.5, 1.0);
        energy += w[static_cast<std::size_t>(b)] * w[static_cast<std::size_t>(b)];
      }
      // unit signal variance before noise: sum of a^2/2 over harmonics = 1
      const double norm = std::sqrt(energy / 2.0);
      for (auto& x : w) x /= norm;
    }
  }
  return sp;
}
}  // namespace

std::vector<PatientRecord> generate_synthetic(const SynthConfig& cfg, std::vector<std::vector<SynthWindowTrace>>* traces) {
  check(cfg.n_patients > 0 && cfg.windows_per_patient > 0, "generate_synthetic: need at least one patient and window");
  check(cfg.n_states >= 1, "generate_synthetic: need at least one latent state");
  check(cfg.coupling >= 0.0 && cfg.coupling <= 1.0, "generate_synthetic: coupling must be in [0,1]");
  check(cfg.noise >= 0.0, "generate_synthetic: negative noise level");
  check(cfg.arousal_rate >= 0.0 && cfg.arousal_rate <= 1.0, "generate_synthetic: arousal rate must be a probability");
  check(cfg.state_stay_prob >= 0.0 && cfg.state_stay_prob <= 1.0, "generate_synthetic: stay probability must be a probability");
  check(cfg.harmonics >= 1, "generate_synthetic: need at least one harmonic");
  check(cfg.sample_rate > 0, "generate_synthetic: bad sample rate");
  // keep every component inside the narrow preprocessing passband
  const double max_freq = (1.0 + (cfg.n_states - 1)) * cfg.harmonics;
  check(max_freq < std::min(30.0, cfg.sample_rate / 2.0), "generate_synthetic: spectral components exceed the passband");

  const Rng root(cfg.seed);
  const Spectra sp = make_spectra(cfg, root.derive("synth.spectra"));
  const int window_samples = static_cast<int>(kWindowSeconds * cfg.sample_rate);

  if (traces) traces->assign(static_cast<std::size_t>(cfg.n_patients), {});
  std::vector<PatientRecord> out;
  out.reserve(static_cast<std::size_t>(cfg.n_patients));

  for (int p = 0; p < cfg.n_patients; ++p) {
    Rng prng = root.derive("synth.patient", static_cast<std::uint64_t>(p));
    PatientRecord rec;
    char idbuf[32];
    std::snprintf(idbuf, sizeof(idbuf), "synth%04d", p);
    rec.patient_id = idbuf;
    rec.sample_rate = cfg.sample_rate;
    rec.age = static_cast<float>(prng.uniform(30.0, 80.0));
    rec.gender = (p % 2 == 0) ? 'F' : 'M';
    const double age_tilt = rec.age < 55.0f ? 1.0 : 0.5;  // older: damped upper harmonics
    for (int m = 0; m < kNumModalities; ++m) rec.signals[m].assign(static_cast<std::size_t>(cfg.windows_per_patient) * window_samples, 0.0f);
    WindowLabels labels;

    int state = prng.uniform_int(cfg.n_states);
    for (int w = 0; w < cfg.windows_per_patient; ++w) {
      if (w > 0 && prng.uniform() >= cfg.state_stay_prob && cfg.n_states > 1) {
        const int hop = 1 + prng.uniform_int(cfg.n_states - 1);
        state = (state + hop) % cfg.n_states;
      }
      SynthWindowTrace tr;
      tr.state = state;
      tr.shared_amp = std::exp(0.15 * prng.gaussian());
      tr.shared_phase.resize(static_cast<std::size_t>(cfg.harmonics));
      for (auto& ph : tr.shared_phase) ph = prng.uniform(0.0, 2.0 * kPi);
      tr.modality_phase.assign(kNumModalities, std::vector<double>(static_cast<std::size_t>(cfg.harmonics)));
      tr.modality_amp.assign(kNumModalities, 0.0);
      for (int m = 0; m < kNumModalities; ++m) {
        const double own_amp = std::exp(0.15 * prng.gaussian());
        tr.modality_amp[static_cast<std::size_t>(m)] = cfg.coupling * tr.shared_amp + (1.0 - cfg.coupling) * own_amp;
        for (int b = 0; b < cfg.harmonics; ++b) {
          const double own_phase = prng.uniform(0.0, 2.0 * kPi);
          tr.modality_phase[static_cast<std::size_t>(m)][static_cast<std::size_t>(b)] =
              cfg.coupling * tr.shared_phase[static_cast<std::size_t>(b)] + (1.0 - cfg.coupling) * own_phase;
        }
      }

      const bool arousal = prng.uniform() < cfg.arousal_rate;
      const double burst_center = arousal ? prng.uniform(5.0, kWindowSeconds - 5.0) : 0.0;
      const double burst_phase = arousal ? prng.uniform(0.0, 2.0 * kPi) : 0.0;

      const double f0 = sp.base_freq[static_cast<std::size_t>(state)];
      for (int m = 0; m < kNumModalities; ++m) {
        float* dst = rec.signals[m].data() + static_cast<std::size_t>(w) * window_samples;
        const auto& weights = sp.w[static_cast<std::size_t>(state)][static_cast<std::size_t>(m)];
        for (int i = 0; i < window_samples; ++i) {
          const double t = i / cfg.sample_rate;
          double v = 0;
          for (int b = 0; b < cfg.harmonics; ++b) {
            const double tilt = b == 0 ? 1.0 : age_tilt;
            v += weights[static_cast<std::size_t>(b)] * tilt *
                 std::sin(2.0 * kPi * f0 * (b + 1) * t + tr.modality_phase[static_cast<std::size_t>(m)][static_cast<std::size_t>(b)]);
          }
          v *= tr.modality_amp[static_cast<std::size_t>(m)];
          if (arousal) {
            const double d = t - burst_center;
            v += 2.5 * std::exp(-d * d / 0.5) * std::sin(2.0 * kPi * 15.0 * t + burst_phase);
          }
          v += cfg.noise * prng.gaussian();
          dst[i] = static_cast<float>(v);
        }
      }
      labels.sleep_stage.push_back(state % kNumSleepStages);
      labels.arousal.push_back(arousal ? 1 : 0);
      if (traces) (*traces)[static_cast<std::size_t>(p)].push_back(std::move(tr));
    }
    rec.labels = std::move(labels);
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace pmae
