// data.hpp -- patient records, preprocessing (FIR bandpass + decimation),
// 30-second windowing, leakage-free patient splits, and the native binary
// signal format.
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pmae/common.hpp"
#include "pmae/rng.hpp"

namespace pmae {

inline constexpr int kNumModalities = 4;
inline constexpr int kWindowSeconds = 30;
inline constexpr double kTargetRate = 100.0;
inline constexpr int kWindowSamples = 3000;  // 30 s at 100 Hz
inline constexpr int kNumSleepStages = 5;

enum class Modality : int { EEG = 0, EMG = 1, EOG = 2, ECG = 3 };
inline const char* modality_name(int m) {
  static const char* names[kNumModalities] = {"EEG", "EMG", "EOG", "ECG"};
  check(m >= 0 && m < kNumModalities, "modality_name: bad index");
  return names[m];
}
inline const char* sleep_stage_name(int s) {
  static const char* names[kNumSleepStages] = {"W", "N1", "N2", "N3", "REM"};
  check(s >= 0 && s < kNumSleepStages, "sleep_stage_name: bad index");
  return names[s];
}

// Per-window annotations; parallel arrays, one entry per 30 s window.
struct WindowLabels {
  std::vector<int> sleep_stage;  // 0..4
  std::vector<int> arousal;      // 0/1
};

struct PatientRecord {
  std::string patient_id;
  double sample_rate = kTargetRate;
  std::array<std::vector<float>, kNumModalities> signals;  // time-aligned, equal length
  std::optional<WindowLabels> labels;
  float age = 0.0f;
  char gender = 'U';

  std::size_t n_samples() const { return signals[0].size(); }
  void validate() const;
};

struct SignalWindow {
  std::array<std::vector<float>, kNumModalities> samples;  // 4 x 3000
  std::string patient_id;
  int sleep_stage = -1;  // -1 when unlabeled
  int arousal = -1;
  float age = 0.0f;
};

// --------------------------------------------------------------------------
// preprocessing
// --------------------------------------------------------------------------

struct PreprocessConfig {
  int fir_taps = 4001;  // odd; transition width ~ 3.3 * fs / taps
  double out_rate = kTargetRate;
};

// Linear-phase Hamming windowed-sinc bandpass, -6 dB at the band edges.
std::vector<double> design_bandpass_fir(double f_lo, double f_hi, double fs, int taps);

// Delay-compensated FIR filtering (zero-padded edges).
std::vector<float> fir_filter(const std::vector<float>& x, const std::vector<double>& h);

// EEG/EOG 0.1-30 Hz, EMG/ECG 0.1-70 Hz, then decimation to out_rate.
PatientRecord preprocess(const PatientRecord& rec, const PreprocessConfig& cfg = {});

// --------------------------------------------------------------------------
// windowing
// --------------------------------------------------------------------------

struct WindowConfig {
  bool zscore = true;  // per-window, per-modality standardization
};

// Non-overlapping contiguous 30 s windows; trailing remainder dropped.
// Requires a preprocessed (100 Hz) record.
std::vector<SignalWindow> make_windows(const PatientRecord& rec, const WindowConfig& cfg = {});

// --------------------------------------------------------------------------
// splits
// --------------------------------------------------------------------------

struct SplitConfig {
  int n_train = 0;  // labeled patients that also pretrain
  int n_val = 0;
  int n_test = 0;
  std::uint64_t seed = 0;
};

struct SplitManifest {
  std::vector<std::string> pretrain;  // unlabeled + train
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;

  void validate() const;  // throws on any leakage or overlap
};

SplitManifest make_splits(const std::vector<std::string>& labeled_ids, const std::vector<std::string>& unlabeled_ids,
                          const SplitConfig& cfg);

// --------------------------------------------------------------------------
// on-disk formats
// --------------------------------------------------------------------------

// Binary signal file layout (little endian):
//   char[4]  magic "PMAE"
//   u32      version (1)
//   u32      n_modalities
//   f64      sample_rate
//   u64      n_samples (per modality)
//   f32[n_modalities * n_samples] payload, modality-major
// Labels and demographics live in a text side-car "<file>.labels".
void write_patient_file(const std::string& path, const PatientRecord& rec);
PatientRecord read_patient_file(const std::string& path);

// Converter hook for external recording formats: produce PatientRecords
// and hand them to write_patient_file.
class RecordConverter {
 public:
  virtual ~RecordConverter() = default;
  virtual std::vector<std::string> list_patients() = 0;
  virtual PatientRecord load(const std::string& patient_id) = 0;
};

// Dataset manifest: one text file listing patient files, split assignment
// and label availability.
struct ManifestEntry {
  std::string patient_id;
  std::string file;
  std::string split;  // pretrain | train | validation | test | none
  bool labeled = false;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::uint64_t config_hash = 0;

  std::vector<std::string> ids_in(const std::string& split) const;
  std::vector<ManifestEntry> entries_in(const std::string& split) const;
  void validate_no_leakage() const;
};

void write_manifest(const std::string& path, const DatasetManifest& m);
DatasetManifest read_manifest(const std::string& path);

DatasetManifest build_manifest(const SplitManifest& splits, const std::vector<std::string>& labeled_ids,
                               const std::string& data_dir, std::uint64_t config_hash);

// Load every window of the given split, ordered by sorted patient id.
std::vector<SignalWindow> load_split_windows(const DatasetManifest& m, const std::string& split, const WindowConfig& cfg);

}  // namespace pmae
