#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "json.hpp"

#include "caae/checkpoint.hpp"
#include "caae/model.hpp"
#include "caae/training.hpp"

namespace caae {

enum class RunKind { Full, Baseline, Probe };

inline const char* run_kind_name(RunKind k) {
  switch (k) {
    case RunKind::Full: return "full";
    case RunKind::Baseline: return "baseline";
    case RunKind::Probe: return "probe";
  }
  return "?";
}

inline std::optional<RunKind> parse_run_kind(const std::string& s) {
  if (s == "full") return RunKind::Full;
  if (s == "baseline") return RunKind::Baseline;
  if (s == "probe") return RunKind::Probe;
  return std::nullopt;
}

template <typename T>
constexpr const char* precision_name() {
  return std::is_same_v<T, float> ? "f32" : "f64";
}

struct RunOptions {
  std::string out_dir;            // metrics.jsonl and checkpoints/ go here; empty = no files
  std::string resume;             // checkpoint to continue from
  bool save_checkpoints = true;
  std::function<void(std::size_t epoch)> on_epoch;  // after each epoch, 1-based
};

struct RunSummary {
  std::size_t epochs_done = 0;
  std::size_t iterations = 0;
  std::string last_checkpoint;
};

// Batch order of epoch `e` depends only on (seed, e).
inline std::uint64_t epoch_seed(std::uint64_t seed, std::size_t epoch) {
  return seed * 0x9E3779B97F4A7C15ULL + 0x632BE59BD9B4E019ULL * (epoch + 1);
}

inline std::string rng_state(const std::mt19937_64& rng) {
  std::ostringstream s;
  s << rng;
  return s.str();
}

inline void set_rng_state(std::mt19937_64& rng, const std::string& state) {
  std::istringstream s(state);
  s >> rng;
  if (!s) throw DataError("checkpoint holds a malformed RNG state");
}

inline std::string checkpoint_path(const std::string& out_dir, std::size_t epoch) {
  return (std::filesystem::path(out_dir) / "checkpoints" /
          ("epoch_" + std::to_string(epoch) + ".ckpt"))
      .string();
}

namespace detail {

// Keeps the first `keep` lines of the metrics log so a resumed run appends
// exactly where the checkpoint left off.
inline void truncate_lines(const std::string& path, std::size_t keep) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return;
  std::string kept, line;
  for (std::size_t i = 0; i < keep && std::getline(in, line); ++i) kept += line + '\n';
  in.close();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << kept;
}

template <typename T>
nlohmann::json run_meta(RunKind kind, const ModelConfig& mc, const TrainConfig& tc,
                        std::size_t epoch, std::size_t iteration) {
  return {{"kind", run_kind_name(kind)}, {"precision", precision_name<T>()},
          {"model", mc.to_json()},       {"train", tc.to_json()},
          {"epoch", epoch},              {"iteration", iteration}};
}

// Shared epoch driver. `step(batch)` runs one update and returns
// the metrics record; `save(path, epoch, iteration)` writes a checkpoint.
template <typename StepFn, typename SaveFn>
RunSummary drive(const std::vector<SnliExample>& train, const Vocab& vocab, const TrainConfig& cfg,
                 const RunOptions& opt, std::size_t start_epoch, std::size_t start_iter,
                 StepFn&& step, SaveFn&& save) {
  if (train.empty()) throw DataError("training set is empty");
  RunSummary summary{start_epoch, start_iter, {}};
  std::ofstream metrics;
  if (!opt.out_dir.empty()) {
    std::filesystem::create_directories(std::filesystem::path(opt.out_dir) / "checkpoints");
    const std::string mpath = (std::filesystem::path(opt.out_dir) / "metrics.jsonl").string();
    if (start_iter > 0)
      truncate_lines(mpath, start_iter);
    else
      std::ofstream(mpath, std::ios::binary | std::ios::trunc);
    metrics.open(mpath, std::ios::binary | std::ios::app);
    if (!metrics) throw IoError("cannot write " + mpath);
  }
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t it = start_iter;
  for (std::size_t epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    for (const auto& batch : make_batches(train, vocab, cfg.batch_size, epoch_seed(cfg.seed, epoch))) {
      const PhaseOutcome o = step(batch);
      const double wall =
          cfg.log_wall_time
              ? std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()
              : 0.0;
      if (metrics.is_open()) metrics << metrics_line(it, epoch + 1, o, wall).dump() << '\n';
      ++it;
    }
    if (metrics.is_open()) metrics.flush();
    summary.epochs_done = epoch + 1;
    summary.iterations = it;
    if (!opt.out_dir.empty() && opt.save_checkpoints) {
      summary.last_checkpoint = checkpoint_path(opt.out_dir, epoch + 1);
      save(summary.last_checkpoint, epoch + 1, it);
    }
    if (opt.on_epoch) opt.on_epoch(epoch + 1);
  }
  return summary;
}

inline void check_resume_kind(const CheckpointData& d, RunKind kind) {
  const std::string k = d.meta.value("kind", std::string());
  if (k != run_kind_name(kind))
    throw DataError("cannot resume a '" + std::string(run_kind_name(kind)) +
                    "' run from a '" + k + "' checkpoint");
}

}  // namespace detail

// Adversarial training of the full model, phases picked by coin flip.
template <typename T>
RunSummary train_full(ModelBundle<T>& model, const Vocab& vocab,
                      const std::vector<SnliExample>& train, const TrainConfig& cfg,
                      const RunOptions& opt = {}) {
  Trainer<T> trainer(model, cfg);
  std::size_t epoch0 = 0, it0 = 0;
  if (!opt.resume.empty()) {
    const auto d = read_checkpoint(opt.resume);
    detail::check_resume_kind(d, RunKind::Full);
    load_params(d, model.store());
    load_optimizer(d, "opt.gen", trainer.generator_optimizer(), model.store());
    load_optimizer(d, "opt.disc", trainer.discriminator_optimizer(), model.store());
    trainer.generator_optimizer().set_steps(d.meta.at("steps").at("gen").get<long>());
    trainer.discriminator_optimizer().set_steps(d.meta.at("steps").at("disc").get<long>());
    set_rng_state(trainer.rng(), d.meta.at("rng").get<std::string>());
    epoch0 = d.meta.at("epoch").get<std::size_t>();
    it0 = d.meta.at("iteration").get<std::size_t>();
  }
  return detail::drive(
      train, vocab, cfg, opt, epoch0, it0, [&](const Batch& b) { return trainer.step(b); },
      [&](const std::string& path, std::size_t epoch, std::size_t it) {
        auto meta = detail::run_meta<T>(RunKind::Full, model.config(), cfg, epoch, it);
        meta["rng"] = rng_state(trainer.rng());
        meta["steps"] = {{"gen", trainer.generator_optimizer().steps()},
                         {"disc", trainer.discriminator_optimizer().steps()}};
        CheckpointWriter w(vocab, meta);
        w.add_params(model.store());
        w.add_optimizer("opt.gen", trainer.generator_optimizer());
        w.add_optimizer("opt.disc", trainer.discriminator_optimizer());
        w.write(path);
      });
}

template <typename T>
RunSummary train_baseline(BaselineModel<T>& model, const Vocab& vocab,
                          const std::vector<SnliExample>& train, const TrainConfig& cfg,
                          const RunOptions& opt = {}) {
  BaselineTrainer<T> trainer(model, cfg);
  std::size_t epoch0 = 0, it0 = 0;
  if (!opt.resume.empty()) {
    const auto d = read_checkpoint(opt.resume);
    detail::check_resume_kind(d, RunKind::Baseline);
    load_params(d, model.store());
    load_optimizer(d, "opt", trainer.optimizer(), model.store());
    trainer.optimizer().set_steps(d.meta.at("steps").at("opt").get<long>());
    epoch0 = d.meta.at("epoch").get<std::size_t>();
    it0 = d.meta.at("iteration").get<std::size_t>();
  }
  return detail::drive(
      train, vocab, cfg, opt, epoch0, it0, [&](const Batch& b) { return trainer.step(b); },
      [&](const std::string& path, std::size_t epoch, std::size_t it) {
        auto meta = detail::run_meta<T>(RunKind::Baseline, model.config(), cfg, epoch, it);
        meta["steps"] = {{"opt", trainer.optimizer().steps()}};
        CheckpointWriter w(vocab, meta);
        w.add_params(model.store());
        w.add_optimizer("opt", trainer.optimizer());
        w.write(path);
      });
}

// Probe: classifier loss on real triplets only.
template <typename T>
RunSummary train_probe(ModelBundle<T>& model, const Vocab& vocab,
                       const std::vector<SnliExample>& train, const TrainConfig& cfg,
                       const RunOptions& opt = {}) {
  ClassifierTrainer<T> trainer(model, cfg);
  std::size_t epoch0 = 0, it0 = 0;
  if (!opt.resume.empty()) {
    const auto d = read_checkpoint(opt.resume);
    detail::check_resume_kind(d, RunKind::Probe);
    load_params(d, model.store());
    load_optimizer(d, "opt", trainer.optimizer(), model.store());
    trainer.optimizer().set_steps(d.meta.at("steps").at("opt").get<long>());
    epoch0 = d.meta.at("epoch").get<std::size_t>();
    it0 = d.meta.at("iteration").get<std::size_t>();
  }
  return detail::drive(
      train, vocab, cfg, opt, epoch0, it0,
      [&](const Batch& b) {
        PhaseOutcome o;
        o.cls_real = o.total = trainer.step(b);
        return o;
      },
      [&](const std::string& path, std::size_t epoch, std::size_t it) {
        auto meta = detail::run_meta<T>(RunKind::Probe, model.config(), cfg, epoch, it);
        meta["steps"] = {{"opt", trainer.optimizer().steps()}};
        CheckpointWriter w(vocab, meta);
        w.add_params(model.store());
        w.add_optimizer("opt", trainer.optimizer());
        w.write(path);
      });
}

}  // namespace caae
