#include "pmae/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

static_assert(std::endian::native == std::endian::little, "little-endian host required for the binary formats");

namespace pmae {

void PatientRecord::validate() const {
  check(!patient_id.empty(), "PatientRecord: empty patient id");
  check(sample_rate > 0, "PatientRecord: bad sample rate");
  const std::size_t n = signals[0].size();
  for (int m = 0; m < kNumModalities; ++m) {
    check(signals[m].size() == n, "PatientRecord: modality streams differ in length for " + patient_id);
    for (float v : signals[m]) check(std::isfinite(v), "PatientRecord: non-finite sample in " + patient_id);
  }
  if (labels) {
    const auto windows = static_cast<std::size_t>(static_cast<double>(n) / (kWindowSeconds * sample_rate));
    check(labels->sleep_stage.size() >= windows && labels->arousal.size() >= windows,
          "PatientRecord: labels do not cover whole windows for " + patient_id);
  }
}

// --------------------------------------------------------------------------
// preprocessing
// --------------------------------------------------------------------------

std::vector<double> design_bandpass_fir(double f_lo, double f_hi, double fs, int taps) {
  check(taps >= 3 && taps % 2 == 1, "design_bandpass_fir: taps must be odd and >= 3");
  check(0 < f_lo && f_lo < f_hi && f_hi < fs / 2, "design_bandpass_fir: bad band edges");
  const int mid = (taps - 1) / 2;
  const double pi = 3.14159265358979323846;
  auto sinc_lp = [&](double fc, int i) {
    const int t = i - mid;
    const double x = 2.0 * fc / fs;
    if (t == 0) return x;
    return x * std::sin(pi * x * t) / (pi * x * t);
  };
  std::vector<double> h(static_cast<std::size_t>(taps));
  for (int i = 0; i < taps; ++i) {
    const double band = sinc_lp(f_hi, i) - sinc_lp(f_lo, i);
    const double hamming = 0.54 - 0.46 * std::cos(2.0 * pi * i / (taps - 1));
    h[static_cast<std::size_t>(i)] = band * hamming;
  }
  return h;
}

std::vector<float> fir_filter(const std::vector<float>& x, const std::vector<double>& h) {
  const int n = static_cast<int>(x.size());
  const int taps = static_cast<int>(h.size());
  const int mid = (taps - 1) / 2;
  std::vector<float> y(x.size());
  for (int t = 0; t < n; ++t) {
    const int j0 = std::max(0, mid - t);
    const int j1 = std::min(taps, n + mid - t);
    double acc = 0;
    for (int j = j0; j < j1; ++j) acc += h[static_cast<std::size_t>(j)] * x[static_cast<std::size_t>(t + j - mid)];
    y[static_cast<std::size_t>(t)] = static_cast<float>(acc);
  }
  return y;
}

PatientRecord preprocess(const PatientRecord& rec, const PreprocessConfig& cfg) {
  rec.validate();
  const double ratio = rec.sample_rate / cfg.out_rate;
  const int decim = static_cast<int>(ratio);
  check(std::abs(ratio - decim) < 1e-9 && decim >= 1,
        "preprocess: sample rate " + std::to_string(rec.sample_rate) + " not an integer multiple of target rate");
  // EEG/EOG: 0.1-30 Hz. EMG/ECG: 0.1-70 Hz (clamped under Nyquist at low rates).
  const double nyq = rec.sample_rate / 2.0;
  const double hi_narrow = std::min(30.0, 0.9 * nyq);
  const double hi_wide = std::min(70.0, 0.9 * nyq);
  const auto h_narrow = design_bandpass_fir(0.1, hi_narrow, rec.sample_rate, cfg.fir_taps);
  const auto h_wide = design_bandpass_fir(0.1, hi_wide, rec.sample_rate, cfg.fir_taps);

  PatientRecord out = rec;
  out.sample_rate = cfg.out_rate;
  for (int m = 0; m < kNumModalities; ++m) {
    const bool narrow = (m == static_cast<int>(Modality::EEG) || m == static_cast<int>(Modality::EOG));
    std::vector<float> filtered = fir_filter(rec.signals[m], narrow ? h_narrow : h_wide);
    if (decim == 1) {
      out.signals[m] = std::move(filtered);
    } else {
      std::vector<float> dec;
      dec.reserve(filtered.size() / static_cast<std::size_t>(decim));
      for (std::size_t i = 0; i < filtered.size(); i += static_cast<std::size_t>(decim)) dec.push_back(filtered[i]);
      out.signals[m] = std::move(dec);
    }
  }
  return out;
}

// --------------------------------------------------------------------------
// windowing
// --------------------------------------------------------------------------

std::vector<SignalWindow> make_windows(const PatientRecord& rec, const WindowConfig& cfg) {
  check(std::abs(rec.sample_rate - kTargetRate) < 1e-9,
        "make_windows: record must be preprocessed to 100 Hz (got " + std::to_string(rec.sample_rate) + ")");
  const std::size_t n = rec.n_samples();
  check(n >= static_cast<std::size_t>(kWindowSamples), "make_windows: record shorter than one 30 s window");
  const std::size_t n_windows = n / kWindowSamples;

  std::vector<SignalWindow> out;
  out.reserve(n_windows);
  for (std::size_t w = 0; w < n_windows; ++w) {
    SignalWindow win;
    win.patient_id = rec.patient_id;
    win.age = rec.age;
    if (rec.labels) {
      win.sleep_stage = rec.labels->sleep_stage[w];
      win.arousal = rec.labels->arousal[w];
    }
    for (int m = 0; m < kNumModalities; ++m) {
      const float* src = rec.signals[m].data() + w * kWindowSamples;
      auto& dst = win.samples[m];
      dst.assign(src, src + kWindowSamples);
      if (cfg.zscore) {
        double mu = 0;
        for (float v : dst) mu += v;
        mu /= kWindowSamples;
        double var = 0;
        for (float v : dst) var += (v - mu) * (v - mu);
        var /= kWindowSamples;
        const double s = std::sqrt(var + 1e-8);
        for (float& v : dst) v = static_cast<float>((v - mu) / s);
      }
    }
    out.push_back(std::move(win));
  }
  return out;
}

// --------------------------------------------------------------------------
// splits
// --------------------------------------------------------------------------

void SplitManifest::validate() const {
  std::set<std::string> pre(pretrain.begin(), pretrain.end());
  std::set<std::string> tr(train.begin(), train.end());
  std::set<std::string> va(validation.begin(), validation.end());
  std::set<std::string> te(test.begin(), test.end());
  for (const auto& id : tr) check(pre.count(id) == 1, "splits: train patient '" + id + "' missing from pretrain set");
  for (const auto& id : va) {
    check(pre.count(id) == 0, "splits: validation patient '" + id + "' leaks into pretraining");
    check(te.count(id) == 0, "splits: patient '" + id + "' in both validation and test");
  }
  for (const auto& id : te) check(pre.count(id) == 0, "splits: test patient '" + id + "' leaks into pretraining");
}

SplitManifest make_splits(const std::vector<std::string>& labeled_ids, const std::vector<std::string>& unlabeled_ids,
                          const SplitConfig& cfg) {
  std::set<std::string> lab(labeled_ids.begin(), labeled_ids.end());
  check(lab.size() == labeled_ids.size(), "make_splits: duplicate labeled ids");
  for (const auto& id : unlabeled_ids) check(lab.count(id) == 0, "make_splits: id '" + id + "' in both labeled and unlabeled sets");
  check(cfg.n_train >= 0 && cfg.n_val >= 0 && cfg.n_test >= 0, "make_splits: negative split size");
  check(static_cast<std::size_t>(cfg.n_train) + cfg.n_val + cfg.n_test <= labeled_ids.size(),
        "make_splits: requested " + std::to_string(cfg.n_train + cfg.n_val + cfg.n_test) + " labeled patients, only " +
            std::to_string(labeled_ids.size()) + " available");

  std::vector<std::string> order(labeled_ids);
  std::sort(order.begin(), order.end());
  Rng rng = Rng(cfg.seed).derive("splits");
  rng.shuffle(order.begin(), order.end());

  SplitManifest m;
  auto it = order.begin();
  m.train.assign(it, it + cfg.n_train);
  it += cfg.n_train;
  m.validation.assign(it, it + cfg.n_val);
  it += cfg.n_val;
  m.test.assign(it, it + cfg.n_test);
  m.pretrain = m.train;
  m.pretrain.insert(m.pretrain.end(), unlabeled_ids.begin(), unlabeled_ids.end());
  std::sort(m.pretrain.begin(), m.pretrain.end());
  std::sort(m.train.begin(), m.train.end());
  std::sort(m.validation.begin(), m.validation.end());
  std::sort(m.test.begin(), m.test.end());
  m.validate();
  return m;
}

// --------------------------------------------------------------------------
// binary signal format + label side-car
// --------------------------------------------------------------------------

namespace {
constexpr char kSignalMagic[4] = {'P', 'M', 'A', 'E'};
constexpr std::uint32_t kSignalVersion = 1;

template <class V>
void write_pod(std::ofstream& f, const V& v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(V));
}
template <class V>
V read_pod(std::ifstream& f) {
  V v{};
  f.read(reinterpret_cast<char*>(&v), sizeof(V));
  return v;
}
}  // namespace

void write_patient_file(const std::string& path, const PatientRecord& rec) {
  rec.validate();
  std::ofstream f(path, std::ios::binary);
  check(f.good(), "write_patient_file: cannot open " + path);
  f.write(kSignalMagic, 4);
  write_pod(f, kSignalVersion);
  write_pod(f, static_cast<std::uint32_t>(kNumModalities));
  write_pod(f, rec.sample_rate);
  write_pod(f, static_cast<std::uint64_t>(rec.n_samples()));
  for (int m = 0; m < kNumModalities; ++m) {
    f.write(reinterpret_cast<const char*>(rec.signals[m].data()),
            static_cast<std::streamsize>(rec.signals[m].size() * sizeof(float)));
  }
  check(f.good(), "write_patient_file: write failed for " + path);
  f.close();

  std::ofstream lf(path + ".labels");
  check(lf.good(), "write_patient_file: cannot open label side-car for " + path);
  lf << "# pmae labels v1\n";
  lf << "patient " << rec.patient_id << "\n";
  lf << "age " << rec.age << "\n";
  lf << "gender " << rec.gender << "\n";
  lf << "labeled " << (rec.labels ? 1 : 0) << "\n";
  if (rec.labels) {
    lf << "# window sleep arousal\n";
    for (std::size_t w = 0; w < rec.labels->sleep_stage.size(); ++w) {
      lf << w << " " << rec.labels->sleep_stage[w] << " " << rec.labels->arousal[w] << "\n";
    }
  }
}

PatientRecord read_patient_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  check(f.good(), "read_patient_file: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  check(f.good() && std::memcmp(magic, kSignalMagic, 4) == 0, "read_patient_file: bad magic in " + path);
  const auto version = read_pod<std::uint32_t>(f);
  check(version == kSignalVersion, "read_patient_file: unsupported version " + std::to_string(version));
  const auto n_mod = read_pod<std::uint32_t>(f);
  check(n_mod == kNumModalities, "read_patient_file: expected 4 modalities, got " + std::to_string(n_mod));
  PatientRecord rec;
  rec.sample_rate = read_pod<double>(f);
  const auto n_samples = read_pod<std::uint64_t>(f);
  for (int m = 0; m < kNumModalities; ++m) {
    rec.signals[m].resize(n_samples);
    f.read(reinterpret_cast<char*>(rec.signals[m].data()), static_cast<std::streamsize>(n_samples * sizeof(float)));
  }
  check(f.good(), "read_patient_file: truncated payload in " + path);

  std::ifstream lf(path + ".labels");
  check(lf.good(), "read_patient_file: missing label side-car for " + path);
  std::string line;
  bool labeled = false;
  WindowLabels labels;
  while (std::getline(lf, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    if (key == "patient") {
      ss >> rec.patient_id;
    } else if (key == "age") {
      ss >> rec.age;
    } else if (key == "gender") {
      ss >> rec.gender;
    } else if (key == "labeled") {
      int v = 0;
      ss >> v;
      labeled = v != 0;
    } else {
      int sleep = 0, arousal = 0;
      std::istringstream row(line);
      std::size_t w = 0;
      row >> w >> sleep >> arousal;
      labels.sleep_stage.push_back(sleep);
      labels.arousal.push_back(arousal);
    }
  }
  if (labeled) rec.labels = std::move(labels);
  rec.validate();
  return rec;
}

// --------------------------------------------------------------------------
// dataset manifest
// --------------------------------------------------------------------------

std::vector<std::string> DatasetManifest::ids_in(const std::string& split) const {
  std::vector<std::string> out;
  for (const auto& e : entries) {
    if (e.split == split) out.push_back(e.patient_id);
  }
  return out;
}

std::vector<ManifestEntry> DatasetManifest::entries_in(const std::string& split) const {
  std::vector<ManifestEntry> out;
  for (const auto& e : entries) {
    if (e.split == split) out.push_back(e);
  }
  return out;
}

void DatasetManifest::validate_no_leakage() const {
  std::set<std::string> pre, held;
  for (const auto& e : entries) {
    if (e.split == "pretrain" || e.split == "train") pre.insert(e.patient_id);
    if (e.split == "validation" || e.split == "test") held.insert(e.patient_id);
  }
  for (const auto& id : held) {
    check(pre.count(id) == 0, "manifest: patient '" + id + "' appears in both pretraining and validation/test");
  }
}

void write_manifest(const std::string& path, const DatasetManifest& m) {
  std::ofstream f(path);
  check(f.good(), "write_manifest: cannot open " + path);
  f << "# pmae dataset manifest v1\n";
  f << "# config_hash " << std::hex << m.config_hash << std::dec << "\n";
  f << "# patient_id\tfile\tsplit\tlabeled\n";
  for (const auto& e : m.entries) {
    f << e.patient_id << "\t" << e.file << "\t" << e.split << "\t" << (e.labeled ? 1 : 0) << "\n";
  }
}

DatasetManifest read_manifest(const std::string& path) {
  std::ifstream f(path);
  check(f.good(), "read_manifest: cannot open " + path);
  DatasetManifest m;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream ss(line.substr(1));
      std::string key;
      ss >> key;
      if (key == "config_hash") ss >> std::hex >> m.config_hash;
      continue;
    }
    std::istringstream ss(line);
    ManifestEntry e;
    int labeled = 0;
    ss >> e.patient_id >> e.file >> e.split >> labeled;
    check(!e.patient_id.empty() && !e.file.empty() && !e.split.empty(), "read_manifest: malformed line: " + line);
    e.labeled = labeled != 0;
    m.entries.push_back(std::move(e));
  }
  return m;
}

DatasetManifest build_manifest(const SplitManifest& splits, const std::vector<std::string>& labeled_ids,
                               const std::string& data_dir, std::uint64_t config_hash) {
  splits.validate();
  std::set<std::string> lab(labeled_ids.begin(), labeled_ids.end());
  std::set<std::string> tr(splits.train.begin(), splits.train.end());
  std::set<std::string> va(splits.validation.begin(), splits.validation.end());
  std::set<std::string> te(splits.test.begin(), splits.test.end());

  std::set<std::string> all(splits.pretrain.begin(), splits.pretrain.end());
  all.insert(va.begin(), va.end());
  all.insert(te.begin(), te.end());

  DatasetManifest m;
  m.config_hash = config_hash;
  for (const auto& id : all) {
    ManifestEntry e;
    e.patient_id = id;
    e.file = data_dir + "/" + id + ".pmae";
    e.labeled = lab.count(id) > 0;
    if (tr.count(id)) {
      e.split = "train";  // train patients are also pretraining patients
    } else if (va.count(id)) {
      e.split = "validation";
    } else if (te.count(id)) {
      e.split = "test";
    } else {
      e.split = "pretrain";
    }
    m.entries.push_back(std::move(e));
  }
  return m;
}

std::vector<SignalWindow> load_split_windows(const DatasetManifest& m, const std::string& split, const WindowConfig& cfg) {
  std::vector<ManifestEntry> wanted;
  if (split == "pretrain") {
    // pretraining data = dedicated pretrain patients + the train subset
    wanted = m.entries_in("pretrain");
    auto tr = m.entries_in("train");
    wanted.insert(wanted.end(), tr.begin(), tr.end());
  } else {
    wanted = m.entries_in(split);
  }
  check(!wanted.empty(), "load_split_windows: split '" + split + "' is empty");
  std::sort(wanted.begin(), wanted.end(), [](const ManifestEntry& a, const ManifestEntry& b) { return a.patient_id < b.patient_id; });
  std::vector<SignalWindow> out;
  for (const auto& e : wanted) {
    PatientRecord rec = read_patient_file(e.file);
    auto wins = make_windows(rec, cfg);
    out.insert(out.end(), std::make_move_iterator(wins.begin()), std::make_move_iterator(wins.end()));
  }
  return out;
}

}  // namespace pmae
