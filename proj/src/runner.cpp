#include "falb/runner.hpp"

#include <cstdio>
#include <fstream>
#include <json.hpp>

namespace falb {

using json = nlohmann::json;
namespace fs = std::filesystem;

std::string format_metric(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

namespace {

struct MetricsCsv {
  std::ofstream out;

  MetricsCsv(const fs::path& path, bool append) {
    bool fresh = !append || !fs::exists(path);
    out.open(path, append ? std::ios::app : std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write metrics: " + path.string());
    if (fresh) out << "step,split,metric,value\n";
  }
  void row(int64_t step, const std::string& split, const std::string& metric, double value) {
    out << step << "," << split << "," << metric << "," << format_metric(value) << "\n";
    out.flush();
  }
};

std::map<std::string, double> eval_splits(const RunConfig& cfg, const ParameterStore<float>& store,
                                          const MixingSet<float>& mixing,
                                          const tasks::Dataset& data) {
  std::map<std::string, double> out;
  auto eval_one = [&](const char* split, const std::vector<tasks::Sample>& samples) {
    if (samples.empty()) return;
    auto acc = train::evaluate_accuracy(cfg.model, store, &mixing, samples, cfg.eval_batch);
    out[std::string(split) + "/token_acc"] = acc.token_acc;
    out[std::string(split) + "/sequence_acc"] = acc.sequence_acc;
    if (!cfg.task.is_classification())
      out[std::string(split) + "/log_perplexity"] =
          train::evaluate_perplexity(cfg.model, store, &mixing, samples, cfg.eval_batch);
  };
  // memorization-style tasks have no test split; the metric is train accuracy
  if (data.test.empty()) {
    eval_one("train", data.train);
  } else {
    eval_one("test", data.test);
  }
  return out;
}

void write_summary(const RunConfig& cfg, const RunResult& result, int64_t trainable) {
  json j{{"build_id", FALB_BUILD_ID},
         {"config", json::parse(emit_config(cfg))},
         {"steps", result.steps},
         {"early_stopped", result.early_stopped},
         {"trainable_parameters", trainable},
         {"metrics", result.metrics}};
  std::ofstream out(result.dir / "summary.json");
  out << j.dump(2) << "\n";
}

}  // namespace

RunResult run_training(const RunConfig& cfg, CheckpointData* resume, std::ostream* log) {
  cfg.validate();
  RunResult result;
  result.dir = fs::path(cfg.out_dir);
  fs::create_directories(result.dir);
  {
    std::ofstream c(result.dir / "config.json");
    c << emit_config(cfg) << "\n";
    std::ofstream b(result.dir / "build_id.txt");
    b << FALB_BUILD_ID << "\n";
  }

  tasks::Dataset data = tasks::generate(cfg.task);
  if (log)
    *log << "[falb] task=" << cfg.task.task << " train=" << data.train.size()
         << " test=" << data.test.size() << " variant=" << variant_name(cfg.model.variant)
         << "\n";

  ParameterStore<float> store;
  train::TrainState<float> state;
  if (resume) {
    store = std::move(resume->store);
    state = std::move(resume->state);
  } else {
    store = build_model<float>(cfg.model, cfg.seed);
    state = train::TrainState<float>::init(store);
  }
  MixingSet<float> mixing = mixing_from_store(cfg.model, store);

  MetricsCsv csv(result.dir / "metrics.csv", /*append=*/resume != nullptr);

  auto checkpoint_to = [&](const fs::path& p) {
    json manifest{{"build_id", FALB_BUILD_ID},
                  {"config", json::parse(emit_config(cfg))},
                  {"format", "falb-checkpoint-v1"},
                  {"step", state.step},
                  {"metrics", result.metrics}};
    save_checkpoint(p, manifest.dump(), store, state);
  };

  bool stop = false;
  for (int64_t s = state.step; s < cfg.opt.steps && !stop; ++s) {
    train::Batch batch = train::batch_for_step(data, cfg.seed, s, cfg.opt.batch_size);
    double loss = train::train_step(cfg.model, store, &mixing, state, batch, cfg.opt);
    if ((s + 1) % cfg.log_every == 0 || s + 1 == cfg.opt.steps)
      csv.row(s + 1, "train", "loss", loss);
    bool do_eval = (s + 1) % cfg.eval_every == 0 || s + 1 == cfg.opt.steps;
    if (do_eval) {
      result.metrics = eval_splits(cfg, store, mixing, data);
      for (const auto& [key, value] : result.metrics) {
        auto slash = key.find('/');
        csv.row(s + 1, key.substr(0, slash), key.substr(slash + 1), value);
      }
      if (log) {
        *log << "[falb] step " << (s + 1) << " loss " << format_metric(loss);
        for (const auto& [key, value] : result.metrics)
          *log << " " << key << " " << format_metric(value);
        *log << "\n";
      }
      if (!cfg.early_stop_metric.empty()) {
        auto it = result.metrics.find(cfg.early_stop_metric);
        if (it != result.metrics.end() && it->second >= cfg.early_stop_threshold) {
          stop = true;
          result.early_stopped = true;
        }
      }
    }
    if (cfg.checkpoint_every > 0 && (s + 1) % cfg.checkpoint_every == 0)
      checkpoint_to(result.dir / ("ckpt_step" + std::to_string(s + 1) + ".falb"));
  }
  result.steps = state.step;
  if (result.metrics.empty()) result.metrics = eval_splits(cfg, store, mixing, data);
  checkpoint_to(result.dir / "ckpt_final.falb");
  write_summary(cfg, result, trainable_parameter_count(store));
  return result;
}

std::map<std::string, double> run_eval(const RunConfig& cfg, const ParameterStore<float>& store,
                                       std::ostream* log) {
  tasks::Dataset data = tasks::generate(cfg.task);
  MixingSet<float> mixing = mixing_from_store(cfg.model, store);
  auto metrics = eval_splits(cfg, store, mixing, data);
  if (log) {
    for (const auto& [key, value] : metrics) *log << key << " = " << format_metric(value) << "\n";
  }
  return metrics;
}

}  // namespace falb
