#include "avlip/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <ostream>
#include <sstream>
#include <tuple>

namespace avlip {

namespace {

std::string fmt_double(Scalar v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

TrainConfig train_config_from(const Config& file, std::uint64_t seed_override,
                              bool has_seed_override) {
  TrainConfig cfg;
  cfg.model.c_a = file.get_int("model.c_a", cfg.model.c_a);
  cfg.model.c_v = file.get_int("model.c_v", cfg.model.c_v);
  cfg.model.d = file.get_int("model.d", cfg.model.d);
  cfg.model.heads = file.get_int("model.heads", cfg.model.heads);
  cfg.model.blocks = file.get_int("model.blocks", cfg.model.blocks);
  cfg.model.embedding_dim = file.get_int("model.embedding_dim", cfg.model.embedding_dim);
  cfg.model.asp_hidden = file.get_int("model.asp_hidden", cfg.model.asp_hidden);
  cfg.model.ffn_multiplier = file.get_int("model.ffn_multiplier", cfg.model.ffn_multiplier);
  cfg.model.scale_by_model_dim =
      file.get_bool("model.scale_by_model_dim", cfg.model.scale_by_model_dim);
  cfg.model.asp_shared_attention =
      file.get_bool("model.asp_shared_attention", cfg.model.asp_shared_attention);
  cfg.model.aam_scale = file.get_double("train.aam_scale", cfg.model.aam_scale);
  cfg.model.aam_margin = file.get_double("train.aam_margin", cfg.model.aam_margin);

  cfg.epochs = static_cast<int>(file.get_int("train.epochs", cfg.epochs));
  cfg.batch_size = static_cast<int>(file.get_int("train.batch_size", cfg.batch_size));
  cfg.lr = file.get_double("train.lr", cfg.lr);
  std::vector<std::int64_t> ms = file.get_int_list("train.milestones", {10, 15});
  cfg.milestones.assign(ms.begin(), ms.end());
  cfg.gamma = file.get_double("train.gamma", cfg.gamma);
  cfg.weight_decay = file.get_double("train.weight_decay", cfg.weight_decay);
  cfg.decoupled_weight_decay =
      file.get_bool("train.decoupled_weight_decay", cfg.decoupled_weight_decay);
  cfg.adam_beta1 = file.get_double("train.adam_beta1", cfg.adam_beta1);
  cfg.adam_beta2 = file.get_double("train.adam_beta2", cfg.adam_beta2);
  cfg.adam_eps = file.get_double("train.adam_eps", cfg.adam_eps);
  cfg.augment_noise_sigma =
      file.get_double("train.augment_noise_sigma", cfg.augment_noise_sigma);
  cfg.mode = file.get_string("train.mode", cfg.mode);
  cfg.freeze_pretrained = file.get_bool("train.freeze_pretrained", cfg.freeze_pretrained);
  cfg.seed = has_seed_override ? seed_override
                               : static_cast<std::uint64_t>(file.get_int("train.seed", 42));
  cfg.corpus_dir = file.get_string("train.corpus", "");
  cfg.warm_audio_checkpoint = file.get_string("train.warm_audio", "");
  cfg.warm_visual_checkpoint = file.get_string("train.warm_visual", "");
  return cfg;
}

CorpusConfig corpus_config_from(const Config& file) {
  CorpusConfig c;
  c.train_speakers = static_cast<int>(file.get_int("corpus.train_speakers", c.train_speakers));
  c.train_utts_per_speaker =
      static_cast<int>(file.get_int("corpus.train_utts_per_speaker", c.train_utts_per_speaker));
  c.test_speakers = static_cast<int>(file.get_int("corpus.test_speakers", c.test_speakers));
  c.test_utts_per_speaker =
      static_cast<int>(file.get_int("corpus.test_utts_per_speaker", c.test_utts_per_speaker));
  c.t_v = file.get_int("corpus.t_v", c.t_v);
  c.sigma_a = file.get_double("corpus.sigma_a", c.sigma_a);
  c.sigma_v = file.get_double("corpus.sigma_v", c.sigma_v);
  c.n_target_trials =
      static_cast<int>(file.get_int("corpus.n_target_trials", c.n_target_trials));
  c.n_nontarget_trials =
      static_cast<int>(file.get_int("corpus.n_nontarget_trials", c.n_nontarget_trials));
  return c;
}

Config train_config_snapshot(const TrainConfig& cfg) {
  Config s;
  s.set("model.audio_in", std::to_string(cfg.model.audio_in));
  s.set("model.visual_in", std::to_string(cfg.model.visual_in));
  s.set("model.c_a", std::to_string(cfg.model.c_a));
  s.set("model.c_v", std::to_string(cfg.model.c_v));
  s.set("model.d", std::to_string(cfg.model.d));
  s.set("model.heads", std::to_string(cfg.model.heads));
  s.set("model.blocks", std::to_string(cfg.model.blocks));
  s.set("model.embedding_dim", std::to_string(cfg.model.embedding_dim));
  s.set("model.asp_hidden", std::to_string(cfg.model.asp_hidden));
  s.set("model.ffn_multiplier", std::to_string(cfg.model.ffn_multiplier));
  s.set("model.scale_by_model_dim", cfg.model.scale_by_model_dim ? "true" : "false");
  s.set("model.asp_shared_attention", cfg.model.asp_shared_attention ? "true" : "false");
  s.set("model.aam_scale", fmt_double(cfg.model.aam_scale));
  s.set("model.aam_margin", fmt_double(cfg.model.aam_margin));
  s.set("model.n_classes", std::to_string(cfg.model.n_classes));
  s.set("train.epochs", std::to_string(cfg.epochs));
  s.set("train.batch_size", std::to_string(cfg.batch_size));
  s.set("train.lr", fmt_double(cfg.lr));
  {
    std::ostringstream ms;
    for (std::size_t i = 0; i < cfg.milestones.size(); ++i) {
      if (i) ms << ",";
      ms << cfg.milestones[i];
    }
    s.set("train.milestones", ms.str());
  }
  s.set("train.gamma", fmt_double(cfg.gamma));
  s.set("train.weight_decay", fmt_double(cfg.weight_decay));
  s.set("train.decoupled_weight_decay", cfg.decoupled_weight_decay ? "true" : "false");
  s.set("train.adam_beta1", fmt_double(cfg.adam_beta1));
  s.set("train.adam_beta2", fmt_double(cfg.adam_beta2));
  s.set("train.adam_eps", fmt_double(cfg.adam_eps));
  s.set("train.augment_noise_sigma", fmt_double(cfg.augment_noise_sigma));
  s.set("train.mode", cfg.mode);
  s.set("train.freeze_pretrained", cfg.freeze_pretrained ? "true" : "false");
  s.set("train.seed", std::to_string(cfg.seed));
  return s;
}

ModelConfig model_config_from_snapshot(const Config& s) {
  ModelConfig m;
  m.audio_in = s.get_int("model.audio_in", m.audio_in);
  m.visual_in = s.get_int("model.visual_in", m.visual_in);
  m.c_a = s.get_int("model.c_a", m.c_a);
  m.c_v = s.get_int("model.c_v", m.c_v);
  m.d = s.get_int("model.d", m.d);
  m.heads = s.get_int("model.heads", m.heads);
  m.blocks = s.get_int("model.blocks", m.blocks);
  m.embedding_dim = s.get_int("model.embedding_dim", m.embedding_dim);
  m.asp_hidden = s.get_int("model.asp_hidden", m.asp_hidden);
  m.ffn_multiplier = s.get_int("model.ffn_multiplier", m.ffn_multiplier);
  m.scale_by_model_dim = s.get_bool("model.scale_by_model_dim", m.scale_by_model_dim);
  m.asp_shared_attention = s.get_bool("model.asp_shared_attention", m.asp_shared_attention);
  m.aam_scale = s.get_double("model.aam_scale", m.aam_scale);
  m.aam_margin = s.get_double("model.aam_margin", m.aam_margin);
  m.n_classes = s.get_int("model.n_classes", m.n_classes);
  return m;
}

Scalar lr_at_epoch(const TrainConfig& cfg, int epoch) {
  Scalar lr = cfg.lr;
  for (int m : cfg.milestones)
    if (epoch > m) lr *= cfg.gamma;
  return lr;
}

Adam::Adam(ParamList params, const TrainConfig& cfg)
    : params_(std::move(params)),
      beta1_(cfg.adam_beta1),
      beta2_(cfg.adam_beta2),
      eps_(cfg.adam_eps),
      weight_decay_(cfg.weight_decay),
      decoupled_(cfg.decoupled_weight_decay) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.push_back(ArrayX::Zero(p.tensor->size()));
    v_.push_back(ArrayX::Zero(p.tensor->size()));
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.tensor->zero_grad();
}

void Adam::step(Scalar lr) {
  ++t_;
  const Scalar bc1 = 1.0 - std::pow(beta1_, static_cast<Scalar>(t_));
  const Scalar bc2 = 1.0 - std::pow(beta2_, static_cast<Scalar>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = *params_[i].tensor;
    if (!p.requires_grad()) continue;
    ArrayX g = p.grad();
    if (!decoupled_ && weight_decay_ != 0.0) g += weight_decay_ * p.values();
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.square();
    p.values() -= lr * (m_[i] / bc1) / ((v_[i] / bc2).sqrt() + eps_);
    if (decoupled_ && weight_decay_ != 0.0) p.values() -= lr * weight_decay_ * p.values();
  }
}

// ---- checkpoints ------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'A', 'V', 'L', 'C', 'K', 'P', 'T', '1'};

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

void write_string(std::ofstream& out, const std::string& s) {
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::ifstream& in) {
  const auto len = read_pod<std::uint32_t>(in);
  std::string s(len, '\0');
  in.read(s.data(), len);
  return s;
}

}  // namespace

const NamedArray* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, a] : arrays)
    if (n == name) return &a;
  return nullptr;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out.write(kMagic, sizeof(kMagic));
  write_pod<std::uint32_t>(out, 1);  // version
  write_pod<std::int32_t>(out, ckpt.epoch);
  write_pod<std::uint64_t>(out, ckpt.adam_step);
  write_string(out, ckpt.snapshot.serialize());
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.arrays.size()));
  for (const auto& [name, arr] : ckpt.arrays) {
    write_string(out, name);
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(arr.shape.size()));
    for (Index d : arr.shape) write_pod<std::int64_t>(out, d);
    out.write(reinterpret_cast<const char*>(arr.data.data()),
              static_cast<std::streamsize>(sizeof(Scalar) * arr.data.size()));
  }
  if (!out) throw std::runtime_error("save_checkpoint: short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("load_checkpoint: " + path + " is not a checkpoint file");
  const auto version = read_pod<std::uint32_t>(in);
  if (version != 1)
    throw std::runtime_error("load_checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.epoch = read_pod<std::int32_t>(in);
  ckpt.adam_step = read_pod<std::uint64_t>(in);
  ckpt.snapshot = Config::from_string(read_string(in));
  const auto n = read_pod<std::uint32_t>(in);
  ckpt.arrays.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::string name = read_string(in);
    NamedArray arr;
    const auto ndim = read_pod<std::uint32_t>(in);
    Index total = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      arr.shape.push_back(read_pod<std::int64_t>(in));
      total *= arr.shape.back();
    }
    arr.data.resize(total);
    in.read(reinterpret_cast<char*>(arr.data.data()),
            static_cast<std::streamsize>(sizeof(Scalar) * total));
    ckpt.arrays.emplace_back(name, std::move(arr));
  }
  if (!in) throw std::runtime_error("load_checkpoint: truncated file " + path);
  return ckpt;
}

ParamList LoadedModel::params() const {
  if (colearn) return colearn->params();
  if (baseline) return baseline->params();
  return {};
}

LoadedModel build_model_from_checkpoint(const Checkpoint& ckpt) {
  LoadedModel lm;
  lm.mode = ckpt.snapshot.get_string("train.mode", "co-learn-scratch");
  const ModelConfig mc = model_config_from_snapshot(ckpt.snapshot);
  Rng rng(0);  // init values are fully overwritten below
  if (lm.mode == "baseline-audio")
    lm.baseline = std::make_unique<BaselineModel>(Modality::kAudio, mc, rng);
  else if (lm.mode == "baseline-visual")
    lm.baseline = std::make_unique<BaselineModel>(Modality::kVisual, mc, rng);
  else
    lm.colearn = std::make_unique<CoLearnModel>(mc, rng);

  for (auto& p : lm.params()) {
    const NamedArray* arr = ckpt.find(p.name);
    if (!arr)
      throw std::runtime_error("build_model_from_checkpoint: missing tensor " + p.name);
    if (arr->data.size() != p.tensor->size() || arr->shape != p.tensor->shape())
      throw std::runtime_error("build_model_from_checkpoint: shape mismatch for " + p.name);
    p.tensor->values() = arr->data;
  }
  return lm;
}

void warm_start(CoLearnModel& model, const Checkpoint& audio_baseline,
                const Checkpoint& visual_baseline, bool freeze) {
  const std::vector<std::tuple<std::string, std::string, const Checkpoint*>> mapping = {
      {"audio_enc.", "enc.", &audio_baseline},   {"dec_a.", "dec.", &audio_baseline},
      {"head_a.", "head.", &audio_baseline},     {"visual_enc.", "enc.", &visual_baseline},
      {"dec_v.", "dec.", &visual_baseline},      {"head_v.", "head.", &visual_baseline},
  };
  for (auto& p : model.params()) {
    for (const auto& [dst_prefix, src_prefix, ckpt] : mapping) {
      if (p.name.rfind(dst_prefix, 0) != 0) continue;
      const std::string src_name = src_prefix + p.name.substr(dst_prefix.size());
      const NamedArray* arr = ckpt->find(src_name);
      if (!arr)
        throw std::runtime_error("warm_start: baseline checkpoint lacks tensor " + src_name);
      if (arr->data.size() != p.tensor->size() || arr->shape != p.tensor->shape())
        throw std::runtime_error("warm_start: shape mismatch for " + src_name +
                                 " (pretrained model incompatible with config)");
      p.tensor->values() = arr->data;
      if (freeze) p.tensor->set_requires_grad(false);
      break;
    }
  }
}

// ---- training loop ----------------------------------------------------------

Trainer::Trainer(const TrainConfig& cfg, const Corpus& corpus)
    : cfg_(cfg), corpus_(&corpus) {
  const auto speaker_ids = corpus.split_speaker_ids("train");
  if (speaker_ids.empty())
    throw std::invalid_argument("Trainer: corpus has no train split");
  for (std::size_t i = 0; i < speaker_ids.size(); ++i)
    label_map_[speaker_ids[i]] = static_cast<Index>(i);
  cfg_.model.n_classes = static_cast<Index>(speaker_ids.size());

  Rng init_rng = Rng(cfg_.seed).fork("init");
  if (cfg_.mode == "baseline-audio") {
    baseline_ = std::make_unique<BaselineModel>(Modality::kAudio, cfg_.model, init_rng);
  } else if (cfg_.mode == "baseline-visual") {
    baseline_ = std::make_unique<BaselineModel>(Modality::kVisual, cfg_.model, init_rng);
  } else if (cfg_.mode == "co-learn-scratch" || cfg_.mode == "co-learn-warm") {
    colearn_ = std::make_unique<CoLearnModel>(cfg_.model, init_rng);
    if (cfg_.mode == "co-learn-warm") {
      if (cfg_.warm_audio_checkpoint.empty() || cfg_.warm_visual_checkpoint.empty())
        throw std::invalid_argument(
            "Trainer: co-learn-warm needs both pretrained baseline checkpoints "
            "(set train.warm_audio and train.warm_visual, or pass --warm-audio/--warm-visual)");
      warm_start(*colearn_, load_checkpoint(cfg_.warm_audio_checkpoint),
                 load_checkpoint(cfg_.warm_visual_checkpoint), cfg_.freeze_pretrained);
    }
  } else {
    throw std::invalid_argument("Trainer: unknown mode '" + cfg_.mode + "'");
  }
  adam_ = std::make_unique<Adam>(colearn_ ? colearn_->params() : baseline_->params(), cfg_);
}

Index Trainer::label_of(int speaker_id) const {
  const auto it = label_map_.find(speaker_id);
  if (it == label_map_.end())
    throw std::invalid_argument("Trainer: speaker " + std::to_string(speaker_id) +
                                " is not in the train split");
  return it->second;
}

StepLosses Trainer::utterance_losses(Tape& tape, const CorpusIndexEntry& entry,
                                     Scalar inv_batch, Rng* augment_rng) {
  Matrix audio = corpus_->load_audio(entry.utt_id);
  Matrix visual = corpus_->load_visual(entry.utt_id);
  if (augment_rng) {
    for (Index i = 0; i < audio.size(); ++i)
      audio.data()[i] += cfg_.augment_noise_sigma * augment_rng->normal();
    for (Index i = 0; i < visual.size(); ++i)
      visual.data()[i] += cfg_.augment_noise_sigma * augment_rng->normal();
  }
  const Index label = label_of(entry.speaker_id);
  StepLosses out;
  if (colearn_) {
    auto a = tensor_from(audio);
    auto v = tensor_from(visual);
    const BranchLosses l = colearn_->losses(tape, a, v, label);
    out.a = l.a->values()(0);
    out.v = l.v->values()(0);
    out.at = l.at->values()(0);
    out.vt = l.vt->values()(0);
    out.total = l.total->values()(0);
    backward(tape, scale(tape, l.total, inv_batch));
  } else {
    const bool is_audio = baseline_->modality() == Modality::kAudio;
    auto frames = tensor_from(is_audio ? audio : visual);
    auto l = baseline_->loss(tape, frames, label);
    (is_audio ? out.a : out.v) = l->values()(0);
    out.total = l->values()(0);
    backward(tape, scale(tape, l, inv_batch));
  }
  return out;
}

StepLosses Trainer::train_step(const std::vector<const CorpusIndexEntry*>& batch, Scalar lr) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  adam_->zero_grad();
  const Scalar inv_batch = 1.0 / static_cast<Scalar>(batch.size());
  Rng* augment = nullptr;
  if (cfg_.augment_noise_sigma > 0.0) {
    if (!augment_rng_) augment_rng_ = std::make_unique<Rng>(Rng(cfg_.seed).fork("augment"));
    augment = augment_rng_.get();
  }
  StepLosses mean;
  for (const CorpusIndexEntry* e : batch) {
    Tape tape;
    const StepLosses l = utterance_losses(tape, *e, inv_batch, augment);
    mean.a += inv_batch * l.a;
    mean.v += inv_batch * l.v;
    mean.at += inv_batch * l.at;
    mean.vt += inv_batch * l.vt;
    mean.total += inv_batch * l.total;
    tape.clear();
  }
  if (!std::isfinite(mean.total))
    throw NumericalError("train_step: non-finite loss " + std::to_string(mean.total));
  adam_->step(lr);
  return mean;
}

void Trainer::run(std::ostream* log) {
  auto entries = corpus_->split("train");
  if (entries.empty()) throw std::invalid_argument("Trainer: empty train split");
  Rng batching = Rng(cfg_.seed).fork("batching");
  for (int epoch = 1; epoch <= cfg_.epochs; ++epoch) {
    const Scalar lr = lr_at_epoch(cfg_, epoch);
    Rng epoch_rng = batching.fork(static_cast<std::uint64_t>(epoch));
    epoch_rng.shuffle(entries);
    StepLosses epoch_mean;
    std::size_t seen = 0;
    for (std::size_t begin = 0; begin < entries.size(); begin += cfg_.batch_size) {
      const std::size_t end = std::min(entries.size(), begin + cfg_.batch_size);
      std::vector<const CorpusIndexEntry*> batch(entries.begin() + begin, entries.begin() + end);
      const StepLosses l = train_step(batch, lr);
      const Scalar w = static_cast<Scalar>(batch.size());
      epoch_mean.a += w * l.a;
      epoch_mean.v += w * l.v;
      epoch_mean.at += w * l.at;
      epoch_mean.vt += w * l.vt;
      epoch_mean.total += w * l.total;
      seen += batch.size();
    }
    const Scalar inv = 1.0 / static_cast<Scalar>(seen);
    epoch_mean.a *= inv;
    epoch_mean.v *= inv;
    epoch_mean.at *= inv;
    epoch_mean.vt *= inv;
    epoch_mean.total *= inv;
    epoch_ = epoch;
    if (log) {
      char line[256];
      std::snprintf(line, sizeof(line), "%d %.10g %.10g %.10g %.10g %.10g %.10g\n", epoch, lr,
                    epoch_mean.a, epoch_mean.v, epoch_mean.at, epoch_mean.vt, epoch_mean.total);
      (*log) << line;
      log->flush();
    }
  }
}

Checkpoint Trainer::make_checkpoint() const {
  Checkpoint ckpt;
  ckpt.snapshot = train_config_snapshot(cfg_);
  ckpt.epoch = epoch_;
  ckpt.adam_step = adam_->step_count();
  const ParamList params = adam_->params();
  for (const auto& p : params)
    ckpt.arrays.emplace_back(p.name, NamedArray{p.tensor->shape(), p.tensor->values()});
  const Adam& adam = *adam_;
  for (std::size_t i = 0; i < params.size(); ++i) {
    ckpt.arrays.emplace_back("optim.m:" + params[i].name,
                             NamedArray{params[i].tensor->shape(), adam.moment1(i)});
    ckpt.arrays.emplace_back("optim.v:" + params[i].name,
                             NamedArray{params[i].tensor->shape(), adam.moment2(i)});
  }
  return ckpt;
}

void Trainer::restore(const Checkpoint& ckpt) {
  const ParamList params = adam_->params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const NamedArray* arr = ckpt.find(params[i].name);
    if (!arr || arr->shape != params[i].tensor->shape())
      throw std::runtime_error("Trainer::restore: missing or mismatched tensor " +
                               params[i].name);
    params[i].tensor->values() = arr->data;
    const NamedArray* m = ckpt.find("optim.m:" + params[i].name);
    const NamedArray* v = ckpt.find("optim.v:" + params[i].name);
    if (m) adam_->moment1(i) = m->data;
    if (v) adam_->moment2(i) = v->data;
  }
  adam_->set_step_count(ckpt.adam_step);
  epoch_ = ckpt.epoch;
}

// ---- gradient checking -------------------------------------------------------

const GradCheckEntry* GradCheckReport::worst() const {
  const GradCheckEntry* w = nullptr;
  for (const auto& e : per_tensor)
    if (!w || e.max_rel_err > w->max_rel_err) w = &e;
  return w;
}

std::vector<GradCheckEntry> GradCheckReport::by_module() const {
  std::map<std::string, Scalar> agg;
  for (const auto& e : per_tensor) {
    const auto dot = e.name.find('.');
    const std::string mod = dot == std::string::npos ? e.name : e.name.substr(0, dot);
    auto [it, inserted] = agg.emplace(mod, e.max_rel_err);
    if (!inserted) it->second = std::max(it->second, e.max_rel_err);
  }
  std::vector<GradCheckEntry> out;
  out.reserve(agg.size());
  for (const auto& [name, err] : agg) out.push_back({name, err});
  return out;
}

GradCheckReport grad_check(const ParamList& params,
                           const std::function<Scalar()>& loss_value,
                           const std::function<void()>& accumulate_grads, Scalar h) {
  accumulate_grads();
  std::vector<ArrayX> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.push_back(p.tensor->grad());

  GradCheckReport report;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& t = *params[i].tensor;
    GradCheckEntry entry{params[i].name, 0.0};
    for (Index j = 0; j < t.size(); ++j) {
      const Scalar saved = t.values()(j);
      t.values()(j) = saved + h;
      const Scalar up = loss_value();
      t.values()(j) = saved - h;
      const Scalar down = loss_value();
      t.values()(j) = saved;
      const Scalar fd = (up - down) / (2.0 * h);
      const Scalar ad = analytic[i](j);
      const Scalar denom = std::max({std::abs(fd), std::abs(ad), 1e-3});
      entry.max_rel_err = std::max(entry.max_rel_err, std::abs(fd - ad) / denom);
    }
    report.per_tensor.push_back(entry);
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
  }
  return report;
}

GradCheckReport run_micro_gradcheck(std::uint64_t seed) {
  ModelConfig mc;
  mc.c_a = 8;
  mc.c_v = 8;
  mc.d = 8;
  mc.heads = 2;
  mc.blocks = 1;
  mc.embedding_dim = 8;
  mc.asp_hidden = 4;
  mc.n_classes = 3;

  Rng root(seed);
  const auto speakers = gen_population(3, root.fork("speakers").seed());
  const MixingMaps maps = gen_mixing_maps(root.fork("mixing").seed());
  Rng utt_rng = root.fork("utterances");
  const auto utt0 = gen_utterance(speakers[0], 5, 0.5, 1.0, maps, utt_rng.fork(0).seed());
  const auto utt1 = gen_utterance(speakers[1], 5, 0.5, 1.0, maps, utt_rng.fork(1).seed());

  Rng init = root.fork("init");
  CoLearnModel model(mc, init);

  const std::vector<std::pair<const SyntheticUtterance*, Index>> batch = {{&utt0, 0},
                                                                          {&utt1, 1}};
  auto loss_value = [&]() {
    Tape tape;
    tape.set_enabled(false);
    Scalar total = 0.0;
    for (const auto& [utt, label] : batch) {
      const BranchLosses l =
          model.losses(tape, tensor_from(utt->audio), tensor_from(utt->visual), label);
      total += l.total->values()(0);
    }
    return total / static_cast<Scalar>(batch.size());
  };
  auto accumulate = [&]() {
    for (auto& p : model.params()) p.tensor->zero_grad();
    const Scalar inv = 1.0 / static_cast<Scalar>(batch.size());
    for (const auto& [utt, label] : batch) {
      Tape tape;
      const BranchLosses l =
          model.losses(tape, tensor_from(utt->audio), tensor_from(utt->visual), label);
      backward(tape, scale(tape, l.total, inv));
    }
  };
  return grad_check(model.params(), loss_value, accumulate, 1e-5);
}

}  // namespace avlip
