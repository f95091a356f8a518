#include "falb/config.hpp"

#include <fstream>
#include <json.hpp>
#include <set>

namespace falb {

using json = nlohmann::json;

TaskDefaults task_defaults(const std::string& task) {
  // per-task tuned settings (architecture, learning rate, batch size)
  if (task == "decimal_addition") return {8, 512, 64, 1e-3, 128, 10000};
  if (task == "dyck1") return {4, 512, 64, 1e-3, 512, 10000};
  if (task == "modular_addition") return {2, 512, 32, 1e-3, 256, 10000};
  if (task == "retrieval") return {2, 1024, 4, 1e-4, 1024, 10000};
  if (task == "hopk") return {5, 512, 8, 1e-4, 128, 5000};
  if (task == "memorization") return {2, 1024, 4, 1e-3, 256, 10000};
  if (task == "labeled_text") return {4, 1024, 16, 5e-4, 256, 10000};
  if (task == "text_corpus") return {12, 512, 8, 5e-4, 512, 40000};
  throw std::invalid_argument("unknown task: " + task);
}

void RunConfig::sync_model_to_task() {
  model.vocab = task.vocab_size();
  model.max_seq = task.max_len();
  model.num_classes = task.num_classes();
}

void RunConfig::validate() const {
  task.validate();
  model.validate();
  opt.validate();
  if (model.vocab != task.vocab_size() || model.max_seq < task.max_len())
    throw std::invalid_argument("config: model vocab/max_seq out of sync with the task");
  if (eval_every < 1 || log_every < 1)
    throw std::invalid_argument("config: eval_every/log_every must be >= 1");
}

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed, const char* where) {
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (!allowed.count(key))
      throw std::invalid_argument(std::string("config: unknown key \"") + key + "\" in " + where);
  }
}

}  // namespace

RunConfig parse_config_text(const std::string& text) {
  json j = json::parse(text);
  reject_unknown(j,
                 {"task", "variant", "model", "optimizer", "seed", "out", "eval_every",
                  "checkpoint_every", "log_every", "eval_batch", "early_stop_metric",
                  "early_stop_threshold"},
                 "config");
  if (!j.contains("task")) throw std::invalid_argument("config: missing \"task\"");

  RunConfig cfg;
  // task: either a name or a full spec object with a "name" field
  if (j.at("task").is_string()) {
    cfg.task = tasks::TaskSpec::defaults(j.at("task").get<std::string>());
  } else {
    const json& tj = j.at("task");
    reject_unknown(tj,
                   {"name", "train_size", "test_size", "digits", "modulus", "max_pairs",
                    "retrieval_vocab", "hops", "hopk_length", "alphabet", "dyck_length",
                    "kv_pairs", "value_alphabet", "window", "path"},
                   "task");
    cfg.task = tasks::TaskSpec::defaults(tj.at("name").get<std::string>());
    auto get = [&](const char* key, auto& field) {
      if (tj.contains(key)) field = tj.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("train_size", cfg.task.train_size);
    get("test_size", cfg.task.test_size);
    get("digits", cfg.task.digits);
    get("modulus", cfg.task.modulus);
    get("max_pairs", cfg.task.max_pairs);
    get("retrieval_vocab", cfg.task.retrieval_vocab);
    get("hops", cfg.task.hops);
    get("hopk_length", cfg.task.hopk_length);
    get("alphabet", cfg.task.alphabet);
    get("dyck_length", cfg.task.dyck_length);
    get("kv_pairs", cfg.task.kv_pairs);
    get("value_alphabet", cfg.task.value_alphabet);
    get("window", cfg.task.window);
    get("path", cfg.task.path);
  }

  TaskDefaults d = task_defaults(cfg.task.task);
  cfg.model.layers = d.layers;
  cfg.model.width = d.width;
  cfg.model.heads = d.heads;
  cfg.opt.lr = d.lr;
  cfg.opt.batch_size = d.batch_size;
  cfg.opt.steps = d.steps;

  if (j.contains("variant")) cfg.model.variant = parse_variant(j.at("variant").get<std::string>());
  if (j.contains("model")) {
    const json& mj = j.at("model");
    reject_unknown(mj, {"layers", "width", "heads", "head_dim", "mlp_dim", "causal_mixing"},
                   "model");
    if (mj.contains("layers")) cfg.model.layers = mj.at("layers").get<int>();
    if (mj.contains("width")) cfg.model.width = mj.at("width").get<int>();
    if (mj.contains("heads")) cfg.model.heads = mj.at("heads").get<int>();
    if (mj.contains("head_dim")) cfg.model.head_dim = mj.at("head_dim").get<int>();
    if (mj.contains("mlp_dim")) cfg.model.mlp_dim = mj.at("mlp_dim").get<int>();
    if (mj.contains("causal_mixing")) cfg.model.causal_mixing = mj.at("causal_mixing").get<bool>();
  }
  if (j.contains("optimizer")) {
    const json& oj = j.at("optimizer");
    reject_unknown(oj,
                   {"lr", "beta1", "beta2", "weight_decay", "eps", "warmup_steps", "batch_size",
                    "steps", "grad_clip"},
                   "optimizer");
    if (oj.contains("lr")) cfg.opt.lr = oj.at("lr").get<double>();
    if (oj.contains("beta1")) cfg.opt.beta1 = oj.at("beta1").get<double>();
    if (oj.contains("beta2")) cfg.opt.beta2 = oj.at("beta2").get<double>();
    if (oj.contains("weight_decay")) cfg.opt.weight_decay = oj.at("weight_decay").get<double>();
    if (oj.contains("eps")) cfg.opt.eps = oj.at("eps").get<double>();
    if (oj.contains("warmup_steps")) cfg.opt.warmup_steps = oj.at("warmup_steps").get<int>();
    if (oj.contains("batch_size")) cfg.opt.batch_size = oj.at("batch_size").get<int>();
    if (oj.contains("steps")) cfg.opt.steps = oj.at("steps").get<int64_t>();
    if (oj.contains("grad_clip")) cfg.opt.grad_clip = oj.at("grad_clip").get<double>();
  }
  if (j.contains("seed")) cfg.seed = j.at("seed").get<uint64_t>();
  if (j.contains("out")) cfg.out_dir = j.at("out").get<std::string>();
  if (j.contains("eval_every")) cfg.eval_every = j.at("eval_every").get<int64_t>();
  if (j.contains("checkpoint_every")) cfg.checkpoint_every = j.at("checkpoint_every").get<int64_t>();
  if (j.contains("log_every")) cfg.log_every = j.at("log_every").get<int64_t>();
  if (j.contains("eval_batch")) cfg.eval_batch = j.at("eval_batch").get<int>();
  if (j.contains("early_stop_metric"))
    cfg.early_stop_metric = j.at("early_stop_metric").get<std::string>();
  if (j.contains("early_stop_threshold"))
    cfg.early_stop_threshold = j.at("early_stop_threshold").get<double>();

  cfg.task.seed = cfg.seed;
  cfg.sync_model_to_task();
  cfg.validate();
  return cfg;
}

RunConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_config_text(text);
}

std::string emit_config(const RunConfig& cfg) {
  json tj{{"name", cfg.task.task},
          {"train_size", cfg.task.train_size},
          {"test_size", cfg.task.test_size},
          {"digits", cfg.task.digits},
          {"modulus", cfg.task.modulus},
          {"max_pairs", cfg.task.max_pairs},
          {"retrieval_vocab", cfg.task.retrieval_vocab},
          {"hops", cfg.task.hops},
          {"hopk_length", cfg.task.hopk_length},
          {"alphabet", cfg.task.alphabet},
          {"dyck_length", cfg.task.dyck_length},
          {"kv_pairs", cfg.task.kv_pairs},
          {"value_alphabet", cfg.task.value_alphabet},
          {"window", cfg.task.window},
          {"path", cfg.task.path}};
  json j{{"task", tj},
         {"variant", variant_name(cfg.model.variant)},
         {"model",
          {{"layers", cfg.model.layers},
           {"width", cfg.model.width},
           {"heads", cfg.model.heads},
           {"head_dim", cfg.model.head_dim},
           {"mlp_dim", cfg.model.mlp_dim},
           {"causal_mixing", cfg.model.causal_mixing}}},
         {"optimizer",
          {{"lr", cfg.opt.lr},
           {"beta1", cfg.opt.beta1},
           {"beta2", cfg.opt.beta2},
           {"weight_decay", cfg.opt.weight_decay},
           {"eps", cfg.opt.eps},
           {"warmup_steps", cfg.opt.warmup_steps},
           {"batch_size", cfg.opt.batch_size},
           {"steps", cfg.opt.steps},
           {"grad_clip", cfg.opt.grad_clip}}},
         {"seed", cfg.seed},
         {"out", cfg.out_dir},
         {"eval_every", cfg.eval_every},
         {"checkpoint_every", cfg.checkpoint_every},
         {"log_every", cfg.log_every},
         {"eval_batch", cfg.eval_batch},
         {"early_stop_metric", cfg.early_stop_metric},
         {"early_stop_threshold", cfg.early_stop_threshold}};
  return j.dump(2);  // std::map keys: already sorted
}

}  // namespace falb
