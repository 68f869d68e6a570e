#include "avlip/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>

namespace fs = std::filesystem;

namespace avlip {

namespace {

Vector unit_normal_vector(Index dim, Rng& rng) {
  Vector v(dim);
  for (Index i = 0; i < dim; ++i) v(i) = rng.normal();
  const Scalar n = v.norm();
  return v / n;
}

Matrix random_mixing(Index out_dim, Index in_dim, Rng& rng) {
  Matrix m(out_dim, in_dim);
  const Scalar s = 1.0 / std::sqrt(static_cast<Scalar>(in_dim));
  for (Index r = 0; r < out_dim; ++r)
    for (Index c = 0; c < in_dim; ++c) m(r, c) = s * rng.normal();
  return m;
}

// Smooth low-frequency multichannel trajectory: per utterance a handful of
// shared frequencies, per-channel random amplitude and phase.
struct Trajectory {
  static constexpr int kWaves = 3;
  std::array<Scalar, kWaves> freq_hz;
  Matrix amp;    // kSharedDim x kWaves
  Matrix phase;  // kSharedDim x kWaves

  explicit Trajectory(Rng& rng) : amp(kSharedDim, kWaves), phase(kSharedDim, kWaves) {
    constexpr Scalar kTwoPi = 6.283185307179586476925286766559;
    for (int k = 0; k < kWaves; ++k) freq_hz[k] = rng.uniform(0.3, 2.5);
    const Scalar a_scale = std::sqrt(2.0 / static_cast<Scalar>(kWaves));
    for (Index i = 0; i < kSharedDim; ++i)
      for (int k = 0; k < kWaves; ++k) {
        amp(i, k) = a_scale * rng.normal();
        phase(i, k) = rng.uniform(0.0, kTwoPi);
      }
  }

  Vector at(Scalar t_seconds) const {
    constexpr Scalar kTwoPi = 6.283185307179586476925286766559;
    Vector z = Vector::Zero(kSharedDim);
    for (Index i = 0; i < kSharedDim; ++i)
      for (int k = 0; k < kWaves; ++k)
        z(i) += amp(i, k) * std::sin(kTwoPi * freq_hz[k] * t_seconds + phase(i, k));
    return z;
  }
};

}  // namespace

MixingMaps gen_mixing_maps(std::uint64_t seed) {
  Rng rng(seed);
  MixingMaps maps;
  maps.audio = random_mixing(kAudioDim, kAudioDim + kSharedDim, rng);
  maps.visual = random_mixing(kVisualDim, kVisualDim + kSharedDim, rng);
  return maps;
}

std::vector<SyntheticSpeaker> gen_population(int n_speakers, std::uint64_t seed) {
  if (n_speakers < 2)
    throw std::invalid_argument("gen_population: need at least 2 speakers, got " +
                                std::to_string(n_speakers));
  Rng rng(seed);
  std::vector<SyntheticSpeaker> speakers;
  speakers.reserve(n_speakers);
  for (int i = 0; i < n_speakers; ++i) {
    SyntheticSpeaker s;
    s.id = i;
    s.audio_identity = unit_normal_vector(kAudioDim, rng);
    s.visual_identity = unit_normal_vector(kVisualDim, rng);
    s.shared_identity = unit_normal_vector(kSharedDim, rng);
    speakers.push_back(std::move(s));
  }
  for (std::size_t i = 0; i < speakers.size(); ++i)
    for (std::size_t j = i + 1; j < speakers.size(); ++j)
      if (speakers[i].shared_identity.dot(speakers[j].shared_identity) > 1.0 - 1e-9)
        throw std::runtime_error("gen_population: identity collision, change the seed");
  return speakers;
}

SyntheticUtterance gen_utterance(const SyntheticSpeaker& spk, Index t_v, Scalar sigma_a,
                                 Scalar sigma_v, const MixingMaps& maps, std::uint64_t seed) {
  if (t_v < 1)
    throw std::invalid_argument("gen_utterance: nonpositive frame count " + std::to_string(t_v));
  Rng rng(seed);
  const Trajectory traj(rng);
  const Index t_a = kRateRatio * t_v;

  // identity gains calibrated so the default sigmas put the two single-modality
  // verification tasks at comparable difficulty, visual the harder one
  constexpr Scalar kAudioIdentityGain = 0.9;
  constexpr Scalar kVisualIdentityGain = 1.25;

  SyntheticUtterance utt;
  utt.speaker_id = spk.id;
  utt.audio.resize(kAudioDim, t_a);
  utt.visual.resize(kVisualDim, t_v);

  Vector u(kAudioDim + kSharedDim);
  for (Index n = 0; n < t_a; ++n) {
    const Vector z = traj.at(static_cast<Scalar>(n) / kAudioRateHz);
    u.head(kAudioDim) = kAudioIdentityGain * spk.audio_identity;
    u.tail(kSharedDim) = spk.shared_identity.cwiseProduct(z);
    utt.audio.col(n) = maps.audio * u;
  }
  Vector uv(kVisualDim + kSharedDim);
  for (Index n = 0; n < t_v; ++n) {
    const Vector z = traj.at(static_cast<Scalar>(n) / kVisualRateHz);
    uv.head(kVisualDim) = kVisualIdentityGain * spk.visual_identity;
    uv.tail(kSharedDim) = spk.shared_identity.cwiseProduct(z);
    utt.visual.col(n) = maps.visual * uv;
  }
  // sigma is the per-dimension noise std; identity energy per frame is O(1),
  // so sigma_v = 1 leaves roughly unit SNR after pooling a 2 s visual clip
  // while the same clip keeps audio comfortably clean at sigma_a = 0.5
  if (sigma_a > 0.0) {
    for (Index n = 0; n < t_a; ++n)
      for (Index c = 0; c < kAudioDim; ++c) utt.audio(c, n) += sigma_a * rng.normal();
  }
  if (sigma_v > 0.0) {
    for (Index n = 0; n < t_v; ++n)
      for (Index c = 0; c < kVisualDim; ++c) utt.visual(c, n) += sigma_v * rng.normal();
  }
  return utt;
}

std::vector<TrialPair> build_trials(const std::vector<UttRef>& utterances, int n_target,
                                    int n_nontarget, std::uint64_t seed) {
  if (n_target < 0 || n_nontarget < 0)
    throw std::invalid_argument("build_trials: negative trial counts");
  std::vector<std::pair<std::size_t, std::size_t>> same, diff;
  for (std::size_t i = 0; i < utterances.size(); ++i)
    for (std::size_t j = i + 1; j < utterances.size(); ++j)
      (utterances[i].speaker_id == utterances[j].speaker_id ? same : diff).emplace_back(i, j);
  if (static_cast<std::size_t>(n_target) > same.size() ||
      static_cast<std::size_t>(n_nontarget) > diff.size())
    throw std::invalid_argument(
        "build_trials: requested " + std::to_string(n_target) + "/" +
        std::to_string(n_nontarget) + " trials but only " + std::to_string(same.size()) + "/" +
        std::to_string(diff.size()) + " pairs exist");

  Rng rng(seed);
  Rng rng_t = rng.fork("target");
  Rng rng_n = rng.fork("nontarget");
  rng_t.shuffle(same);
  rng_n.shuffle(diff);

  std::vector<TrialPair> trials;
  trials.reserve(n_target + n_nontarget);
  for (int k = 0; k < n_target; ++k)
    trials.push_back({utterances[same[k].first].id, utterances[same[k].second].id, 1});
  for (int k = 0; k < n_nontarget; ++k)
    trials.push_back({utterances[diff[k].first].id, utterances[diff[k].second].id, 0});
  Rng rng_o = rng.fork("order");
  rng_o.shuffle(trials);
  return trials;
}

void write_matrix_file(const std::string& path, const Matrix& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_matrix_file: cannot open " + path);
  const std::int32_t dims[2] = {static_cast<std::int32_t>(m.rows()),
                                static_cast<std::int32_t>(m.cols())};
  out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  // Matrix is row-major, so the buffer is already in file order
  out.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(sizeof(Scalar) * m.size()));
  if (!out) throw std::runtime_error("write_matrix_file: short write to " + path);
}

Matrix read_matrix_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_matrix_file: cannot open " + path);
  std::int32_t dims[2] = {0, 0};
  in.read(reinterpret_cast<char*>(dims), sizeof(dims));
  if (!in || dims[0] <= 0 || dims[1] <= 0)
    throw std::runtime_error("read_matrix_file: bad header in " + path);
  Matrix m(dims[0], dims[1]);
  in.read(reinterpret_cast<char*>(m.data()),
          static_cast<std::streamsize>(sizeof(Scalar) * m.size()));
  if (!in) throw std::runtime_error("read_matrix_file: truncated data in " + path);
  return m;
}

namespace {

std::string utt_name(int speaker_id, int utt_index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "s%03d_u%03d", speaker_id, utt_index);
  return buf;
}

}  // namespace

CorpusStats generate_corpus(const CorpusConfig& config, std::uint64_t seed,
                            const std::string& dir) {
  if (config.t_v < 1) throw std::invalid_argument("generate_corpus: t_v must be positive");
  const int n_total = config.train_speakers + config.test_speakers;
  Rng root(seed);
  const auto population = gen_population(n_total, root.fork("speakers").seed());
  const MixingMaps maps = gen_mixing_maps(root.fork("mixing").seed());
  Rng utt_seeds = root.fork("utterances");

  fs::create_directories(fs::path(dir) / "audio");
  fs::create_directories(fs::path(dir) / "visual");

  std::vector<CorpusIndexEntry> entries;
  std::vector<UttRef> test_refs;
  std::uint64_t utt_counter = 0;
  for (int s = 0; s < n_total; ++s) {
    const bool is_train = s < config.train_speakers;
    const int n_utts = is_train ? config.train_utts_per_speaker : config.test_utts_per_speaker;
    for (int u = 0; u < n_utts; ++u, ++utt_counter) {
      const auto utt = gen_utterance(population[s], config.t_v, config.sigma_a, config.sigma_v,
                                     maps, utt_seeds.fork(utt_counter).seed());
      CorpusIndexEntry e;
      e.utt_id = utt_name(s, u);
      e.speaker_id = s;
      e.split = is_train ? "train" : "test";
      e.audio_path = "audio/" + e.utt_id + ".bin";
      e.visual_path = "visual/" + e.utt_id + ".bin";
      write_matrix_file((fs::path(dir) / e.audio_path).string(), utt.audio);
      write_matrix_file((fs::path(dir) / e.visual_path).string(), utt.visual);
      if (!is_train) test_refs.push_back({e.utt_id, s});
      entries.push_back(std::move(e));
    }
  }

  std::ofstream index((fs::path(dir) / "index.tsv").string());
  if (!index) throw std::runtime_error("generate_corpus: cannot write index.tsv");
  for (const auto& e : entries)
    index << e.utt_id << '\t' << e.speaker_id << '\t' << e.split << '\t' << e.audio_path << '\t'
          << e.visual_path << '\n';

  const auto trials = build_trials(test_refs, config.n_target_trials, config.n_nontarget_trials,
                                   root.fork("trials").seed());
  std::ofstream tf((fs::path(dir) / "trials.txt").string());
  if (!tf) throw std::runtime_error("generate_corpus: cannot write trials.txt");
  for (const auto& t : trials) tf << t.enroll_id << ' ' << t.test_id << ' ' << t.label << '\n';

  CorpusStats stats;
  stats.train_speakers = config.train_speakers;
  stats.test_speakers = config.test_speakers;
  stats.train_utterances = config.train_speakers * config.train_utts_per_speaker;
  stats.test_utterances = config.test_speakers * config.test_utts_per_speaker;
  return stats;
}

Corpus::Corpus(const std::string& dir) : dir_(dir) {
  std::ifstream index((fs::path(dir) / "index.tsv").string());
  if (!index) throw std::runtime_error("Corpus: cannot open " + dir + "/index.tsv");
  std::string line;
  while (std::getline(index, line)) {
    if (line.empty()) continue;
    CorpusIndexEntry e;
    std::size_t pos = 0;
    auto next_field = [&](bool last) {
      const std::size_t tab = last ? line.size() : line.find('\t', pos);
      if (tab == std::string::npos) throw std::runtime_error("Corpus: malformed index line");
      std::string f = line.substr(pos, tab - pos);
      pos = tab + 1;
      return f;
    };
    e.utt_id = next_field(false);
    e.speaker_id = std::stoi(next_field(false));
    e.split = next_field(false);
    e.audio_path = next_field(false);
    e.visual_path = next_field(true);
    entries_.push_back(std::move(e));
  }
  if (entries_.empty()) throw std::runtime_error("Corpus: empty index in " + dir);
}

const CorpusIndexEntry& Corpus::entry(const std::string& utt_id) const {
  for (const auto& e : entries_)
    if (e.utt_id == utt_id) return e;
  throw std::invalid_argument("Corpus: unknown utterance id " + utt_id);
}

bool Corpus::has(const std::string& utt_id) const {
  for (const auto& e : entries_)
    if (e.utt_id == utt_id) return true;
  return false;
}

Matrix Corpus::load_audio(const std::string& utt_id) const {
  return read_matrix_file((fs::path(dir_) / entry(utt_id).audio_path).string());
}

Matrix Corpus::load_visual(const std::string& utt_id) const {
  return read_matrix_file((fs::path(dir_) / entry(utt_id).visual_path).string());
}

std::vector<const CorpusIndexEntry*> Corpus::split(const std::string& name) const {
  std::vector<const CorpusIndexEntry*> out;
  for (const auto& e : entries_)
    if (e.split == name) out.push_back(&e);
  return out;
}

std::vector<TrialPair> Corpus::load_trials() const {
  std::ifstream in((fs::path(dir_) / "trials.txt").string());
  if (!in) throw std::runtime_error("Corpus: cannot open trials.txt in " + dir_);
  std::vector<TrialPair> trials;
  std::string enroll, test;
  int label = 0;
  while (in >> enroll >> test >> label) trials.push_back({enroll, test, label});
  return trials;
}

std::vector<int> Corpus::split_speaker_ids(const std::string& name) const {
  std::set<int> ids;
  for (const auto& e : entries_)
    if (e.split == name) ids.insert(e.speaker_id);
  return {ids.begin(), ids.end()};
}

}  // namespace avlip
