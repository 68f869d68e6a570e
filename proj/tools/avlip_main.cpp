// avlip: synthetic audio-visual speaker verification with cross-modal
// co-learning. Subcommands: gen-data, train, eval, gradcheck.

#include <CLI11.hpp>

#include "avlip/config.hpp"
#include "avlip/eval.hpp"
#include "avlip/train.hpp"

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace avlip;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

std::uint64_t fnv1a_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return 0;
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[4096];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
    if (!in) break;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct ManifestInputs {
  std::string command;
  std::string config_path;
  std::uint64_t seed = 0;
  std::string out_dir;
  Config resolved;
  std::vector<std::pair<std::string, std::string>> hashes;
};

// Written before any long computation; enough to reproduce the run.
void write_manifest(const ManifestInputs& m) {
  fs::create_directories(m.out_dir);
  std::ofstream out((fs::path(m.out_dir) / "manifest.txt").string());
  if (!out) throw std::runtime_error("cannot write manifest in " + m.out_dir);
  out << "command = " << m.command << '\n';
  out << "config_path = " << (m.config_path.empty() ? "(none)" : m.config_path) << '\n';
  out << "seed = " << m.seed << '\n';
  out << "out_dir = " << m.out_dir << '\n';
  for (const auto& [name, value] : m.hashes) out << "hash." << name << " = " << value << '\n';
  for (const auto& [k, v] : m.resolved.values()) out << "resolved." << k << " = " << v << '\n';
}

Config load_config_or_empty(const std::string& path) {
  if (path.empty()) return Config{};
  return Config::from_file(path);
}

int cmd_gen_data(const std::string& config_path, std::uint64_t seed, bool has_seed,
                 const std::string& out_dir, bool force,
                 const std::vector<int>& trial_counts) {
  const Config file = load_config_or_empty(config_path);
  CorpusConfig cc = corpus_config_from(file);
  if (!trial_counts.empty()) {
    cc.n_target_trials = trial_counts[0];
    cc.n_nontarget_trials = trial_counts[1];
  }
  const std::uint64_t root_seed =
      has_seed ? seed : static_cast<std::uint64_t>(file.get_int("train.seed", 42));

  if (fs::exists(out_dir) && !fs::is_empty(out_dir) && !force)
    throw std::invalid_argument("output directory " + out_dir +
                                " is not empty (use --force to overwrite)");

  Config resolved;
  resolved.set("corpus.train_speakers", std::to_string(cc.train_speakers));
  resolved.set("corpus.train_utts_per_speaker", std::to_string(cc.train_utts_per_speaker));
  resolved.set("corpus.test_speakers", std::to_string(cc.test_speakers));
  resolved.set("corpus.test_utts_per_speaker", std::to_string(cc.test_utts_per_speaker));
  resolved.set("corpus.t_v", std::to_string(cc.t_v));
  resolved.set("corpus.sigma_a", std::to_string(cc.sigma_a));
  resolved.set("corpus.sigma_v", std::to_string(cc.sigma_v));
  resolved.set("corpus.n_target_trials", std::to_string(cc.n_target_trials));
  resolved.set("corpus.n_nontarget_trials", std::to_string(cc.n_nontarget_trials));

  ManifestInputs mi{"gen-data", config_path, root_seed, out_dir, resolved, {}};
  if (!config_path.empty()) mi.hashes.push_back({"config", hex64(fnv1a_file(config_path))});
  write_manifest(mi);

  const CorpusStats stats = generate_corpus(cc, root_seed, out_dir);
  std::printf("subset  #speakers  #utterances  frames(v/a)\n");
  std::printf("train   %9d  %11d  %lld/%lld\n", stats.train_speakers, stats.train_utterances,
              static_cast<long long>(cc.t_v), static_cast<long long>(kRateRatio * cc.t_v));
  std::printf("test    %9d  %11d  %lld/%lld\n", stats.test_speakers, stats.test_utterances,
              static_cast<long long>(cc.t_v), static_cast<long long>(kRateRatio * cc.t_v));
  std::printf("trials  %d target + %d nontarget\n", cc.n_target_trials, cc.n_nontarget_trials);
  return kExitOk;
}

int cmd_train(const std::string& config_path, std::uint64_t seed, bool has_seed,
              const std::string& out_dir, const std::string& corpus_dir,
              const std::string& mode, int epochs_override, const std::string& warm_audio,
              const std::string& warm_visual) {
  const Config file = load_config_or_empty(config_path);
  TrainConfig cfg = train_config_from(file, seed, has_seed);
  if (!corpus_dir.empty()) cfg.corpus_dir = corpus_dir;
  if (!mode.empty()) cfg.mode = mode;
  if (epochs_override >= 0) cfg.epochs = epochs_override;
  if (!warm_audio.empty()) cfg.warm_audio_checkpoint = warm_audio;
  if (!warm_visual.empty()) cfg.warm_visual_checkpoint = warm_visual;
  if (cfg.corpus_dir.empty())
    throw std::invalid_argument("no corpus given (pass --corpus or set train.corpus)");

  const Corpus corpus(cfg.corpus_dir);

  ManifestInputs mi{"train", config_path, cfg.seed, out_dir, train_config_snapshot(cfg), {}};
  if (!config_path.empty()) mi.hashes.push_back({"config", hex64(fnv1a_file(config_path))});
  mi.hashes.push_back(
      {"corpus_index", hex64(fnv1a_file((fs::path(cfg.corpus_dir) / "index.tsv").string()))});
  write_manifest(mi);

  Trainer trainer(cfg, corpus);
  std::ofstream log((fs::path(out_dir) / "train.log").string());
  if (!log) throw std::runtime_error("cannot write train.log in " + out_dir);
  trainer.run(&log);
  const Checkpoint ckpt = trainer.make_checkpoint();
  save_checkpoint((fs::path(out_dir) / "checkpoint.bin").string(), ckpt);
  std::printf("trained %s for %d epochs, checkpoint at %s\n", cfg.mode.c_str(),
              trainer.epoch(), (fs::path(out_dir) / "checkpoint.bin").string().c_str());
  return kExitOk;
}

int cmd_eval(const std::string& config_path, std::uint64_t seed, bool has_seed,
             const std::string& out_dir, const std::string& checkpoint_path,
             const std::string& corpus_dir, const std::string& trials_path) {
  const Config file = load_config_or_empty(config_path);
  const std::uint64_t root_seed =
      has_seed ? seed : static_cast<std::uint64_t>(file.get_int("train.seed", 42));

  EvalOptions options;
  options.fusion.primary = file.get_double("fusion.primary", options.fusion.primary);
  options.fusion.auxiliary = file.get_double("fusion.auxiliary", options.fusion.auxiliary);
  options.fusion.transferred = file.get_double("fusion.transferred", options.fusion.transferred);
  options.p_target = file.get_double("metrics.p_target", options.p_target);
  options.c_fa = file.get_double("metrics.c_fa", options.c_fa);
  options.c_miss = file.get_double("metrics.c_miss", options.c_miss);

  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  const Corpus corpus(corpus_dir);
  const std::string trials_file =
      trials_path.empty() ? (fs::path(corpus_dir) / "trials.txt").string() : trials_path;

  ManifestInputs mi{"eval", config_path, root_seed, out_dir, ckpt.snapshot, {}};
  if (!config_path.empty()) mi.hashes.push_back({"config", hex64(fnv1a_file(config_path))});
  mi.hashes.push_back({"checkpoint", hex64(fnv1a_file(checkpoint_path))});
  mi.hashes.push_back({"trials", hex64(fnv1a_file(trials_file))});
  write_manifest(mi);

  std::vector<TrialPair> trials;
  {
    std::ifstream in(trials_file);
    if (!in) throw std::runtime_error("cannot open trial list " + trials_file);
    std::string enroll, test;
    int label;
    while (in >> enroll >> test >> label) trials.push_back({enroll, test, label});
  }

  const LoadedModel model = build_model_from_checkpoint(ckpt);
  const ScoreReport report = evaluate_trials(model, corpus, trials, options);
  write_score_file((fs::path(out_dir) / "scores.txt").string(), report);
  write_report_file((fs::path(out_dir) / "report.txt").string(), report);

  std::ifstream back((fs::path(out_dir) / "report.txt").string());
  std::cout << back.rdbuf();
  return kExitOk;
}

int cmd_gradcheck(const std::string& config_path, std::uint64_t seed, bool has_seed,
                  const std::string& out_dir) {
  const Config file = load_config_or_empty(config_path);
  const std::uint64_t root_seed =
      has_seed ? seed : static_cast<std::uint64_t>(file.get_int("train.seed", 42));
  if (!out_dir.empty()) {
    ManifestInputs mi{"gradcheck", config_path, root_seed, out_dir, Config{}, {}};
    write_manifest(mi);
  }

  const auto t0 = std::chrono::steady_clock::now();
  const GradCheckReport report = run_micro_gradcheck(root_seed);
  const auto elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  std::printf("%-16s %s\n", "module", "max_rel_err");
  for (const auto& e : report.by_module())
    std::printf("%-16s %.3e\n", e.name.c_str(), e.max_rel_err);
  const GradCheckEntry* worst = report.worst();
  std::printf("worst tensor: %s (%.3e)\n", worst ? worst->name.c_str() : "(none)",
              worst ? worst->max_rel_err : 0.0);
  const bool pass = report.max_rel_err < 1e-4;
  std::printf("gradcheck %s (max %.3e, %.1fs)\n", pass ? "PASS" : "FAIL", report.max_rel_err,
              elapsed);
  if (!out_dir.empty()) {
    std::ofstream out((fs::path(out_dir) / "gradcheck.txt").string());
    for (const auto& e : report.per_tensor) out << e.name << " = " << e.max_rel_err << '\n';
    out << "max = " << report.max_rel_err << '\n';
  }
  return pass ? kExitOk : kExitNumerical;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthetic audio-visual speaker verification with cross-modal co-learning"};
  app.require_subcommand(1);

  std::string config_path, out_dir, corpus_dir, mode, checkpoint_path, trials_path;
  std::string warm_audio, warm_visual;
  std::uint64_t seed = 42;
  bool force = false;
  int epochs_override = -1;
  std::vector<int> trial_counts;

  auto add_common = [&](CLI::App* cmd, bool out_required) {
    cmd->add_option("--config", config_path, "config file (key = value sections)");
    cmd->add_option("--seed", seed, "root random seed");
    auto* o = cmd->add_option("--out", out_dir, "output directory");
    if (out_required) o->required();
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic corpus");
  add_common(gen, true);
  gen->add_flag("--force", force, "overwrite a non-empty output directory");
  gen->add_option("--trials", trial_counts, "target and nontarget trial counts")->expected(2);

  CLI::App* train = app.add_subcommand("train", "train a model");
  add_common(train, true);
  train->add_option("--corpus", corpus_dir, "corpus directory");
  train->add_option("--mode", mode,
                    "baseline-audio | baseline-visual | co-learn-scratch | co-learn-warm");
  train->add_option("--epochs", epochs_override, "override epoch count");
  train->add_option("--warm-audio", warm_audio, "audio baseline checkpoint for warm start");
  train->add_option("--warm-visual", warm_visual, "visual baseline checkpoint for warm start");

  CLI::App* eval = app.add_subcommand("eval", "score trials with a checkpoint");
  add_common(eval, true);
  eval->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
  eval->add_option("--corpus", corpus_dir, "corpus directory")->required();
  eval->add_option("--trials", trials_path, "trial list (default: corpus trials.txt)");

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of the tape");
  add_common(gradcheck, false);

  CLI11_PARSE(app, argc, argv);

  const bool has_seed = gen->count("--seed") || train->count("--seed") ||
                        eval->count("--seed") || gradcheck->count("--seed");
  try {
    if (*gen) return cmd_gen_data(config_path, seed, has_seed, out_dir, force, trial_counts);
    if (*train)
      return cmd_train(config_path, seed, has_seed, out_dir, corpus_dir, mode, epochs_override,
                       warm_audio, warm_visual);
    if (*eval)
      return cmd_eval(config_path, seed, has_seed, out_dir, checkpoint_path, corpus_dir,
                      trials_path);
    if (*gradcheck) return cmd_gradcheck(config_path, seed, has_seed, out_dir);
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  }
  return kExitOk;
}
