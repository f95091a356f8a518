#include "falb/training.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "falb/rng.hpp"

namespace falb::train {

void OptimizerConfig::validate() const {
  if (lr < 0) throw std::invalid_argument("optimizer: learning_rate must not be negative");
  if (beta1 <= 0 || beta1 >= 1 || beta2 <= 0 || beta2 >= 1)
    throw std::invalid_argument("optimizer: betas must lie in (0, 1)");
  if (weight_decay < 0) throw std::invalid_argument("optimizer: weight_decay must be >= 0");
  if (warmup_steps < 0) throw std::invalid_argument("optimizer: warmup_steps must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("optimizer: batch_size must be >= 1");
  if (steps < 1) throw std::invalid_argument("optimizer: steps must be >= 1");
  if (grad_clip < 0) throw std::invalid_argument("optimizer: grad_clip must be >= 0");
}

template <typename T>
TrainState<T> TrainState<T>::init(const ParameterStore<T>& store) {
  TrainState<T> s;
  for (const auto& name : trainable_names(store)) {
    s.m.emplace(name, Tensor<T>(store.at(name).shape()));
    s.v.emplace(name, Tensor<T>(store.at(name).shape()));
  }
  return s;
}

Batch pack_batch(const std::vector<const tasks::Sample*>& samples, bool classification) {
  Batch b;
  b.classification = classification;
  std::vector<int> lengths;
  lengths.reserve(samples.size());
  for (const auto* s : samples) lengths.push_back(static_cast<int>(s->tokens.size()));
  b.layout = SeqLayout::ragged(std::move(lengths));
  b.tokens.reserve(b.layout.total);
  if (classification) {
    for (const auto* s : samples) {
      b.tokens.insert(b.tokens.end(), s->tokens.begin(), s->tokens.end());
      b.targets.push_back(s->label);
    }
    b.mask.assign(samples.size(), 1);
  } else {
    b.targets.reserve(b.layout.total);
    b.mask.reserve(b.layout.total);
    for (const auto* s : samples) {
      b.tokens.insert(b.tokens.end(), s->tokens.begin(), s->tokens.end());
      b.targets.insert(b.targets.end(), s->targets.begin(), s->targets.end());
      b.mask.insert(b.mask.end(), s->mask.begin(), s->mask.end());
    }
  }
  return b;
}

Batch batch_for_step(const tasks::Dataset& data, uint64_t seed, int64_t step, int batch_size) {
  if (data.train.empty()) throw std::invalid_argument("batch: empty training set");
  RngStream rng(seed, "batch/" + std::to_string(step));
  std::vector<const tasks::Sample*> picks;
  picks.reserve(static_cast<size_t>(batch_size));
  for (int i = 0; i < batch_size; ++i)
    picks.push_back(&data.train[rng.next_below(data.train.size())]);
  return pack_batch(picks, data.spec.is_classification());
}

template <typename T>
void adam_apply(Tensor<T>& param, const Tensor<T>& grad, Tensor<T>& m, Tensor<T>& v,
                int64_t step_now, const OptimizerConfig& opt, double lr_now, double clip_scale) {
  double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(step_now));
  double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(step_now));
  for (int64_t i = 0; i < param.numel(); ++i) {
    double gi = static_cast<double>(grad[i]) * clip_scale;
    double m1i = opt.beta1 * static_cast<double>(m[i]) + (1 - opt.beta1) * gi;
    double m2i = opt.beta2 * static_cast<double>(v[i]) + (1 - opt.beta2) * gi * gi;
    m[i] = static_cast<T>(m1i);
    v[i] = static_cast<T>(m2i);
    double update = (m1i / bc1) / (std::sqrt(m2i / bc2) + opt.eps);
    double decayed = opt.weight_decay * static_cast<double>(param[i]);
    param[i] = static_cast<T>(static_cast<double>(param[i]) - lr_now * (update + decayed));
  }
}

template <typename T>
double train_step(const ModelConfig& config, ParameterStore<T>& store, const MixingSet<T>* mixing,
                  TrainState<T>& state, const Batch& batch, const OptimizerConfig& opt) {
  opt.validate();
  Tape<T> tape;
  auto bound = BoundParams<T>::bind(tape, config, store, mixing);
  Var logits = model_forward(tape, bound, batch.tokens, batch.layout);
  Var loss = tape.cross_entropy(logits, batch.targets, batch.mask);
  double loss_value = static_cast<double>(tape.value(loss)[0]);
  if (!std::isfinite(loss_value)) {
    std::ostringstream dump;
    dump << "training diverged at step " << state.step << ": loss=" << loss_value
         << " batch_cols=" << batch.layout.total;
    for (const auto& name : trainable_names(store)) {
      const auto& t = store.at(name);
      double mx = 0;
      for (int64_t i = 0; i < t.numel(); ++i)
        mx = std::max(mx, std::abs(static_cast<double>(t[i])));
      dump << "\n  " << name << " max|w|=" << mx;
    }
    throw TrainingDiverged(dump.str());
  }
  tape.backward(loss);

  // linear warmup then constant
  int64_t step_now = state.step + 1;
  double lr = opt.lr;
  if (opt.warmup_steps > 0 && step_now <= opt.warmup_steps)
    lr = opt.lr * static_cast<double>(step_now) / static_cast<double>(opt.warmup_steps);

  auto names = trainable_names(store);

  double clip_scale = 1.0;
  if (opt.grad_clip > 0) {
    double sq = 0;
    for (const auto& name : names) {
      Var v = bound.at(name);
      if (!tape.has_grad(v)) continue;
      const Tensor<T>& g = tape.grad(v);
      for (int64_t i = 0; i < g.numel(); ++i)
        sq += static_cast<double>(g[i]) * static_cast<double>(g[i]);
    }
    double norm = std::sqrt(sq);
    if (norm > opt.grad_clip) clip_scale = opt.grad_clip / norm;
  }

  for (const auto& name : names) {
    Var v = bound.at(name);
    if (!tape.has_grad(v)) continue;  // loss did not touch it this step
    adam_apply(store.at(name), tape.grad(v), state.m.at(name), state.v.at(name), step_now, opt,
               lr, clip_scale);
  }
  state.step = step_now;
  state.last_loss = loss_value;
  return loss_value;
}

namespace {

template <typename T>
void for_each_eval_chunk(const ModelConfig& config, const ParameterStore<T>& store,
                         const MixingSet<T>* mixing, const std::vector<tasks::Sample>& samples,
                         int eval_batch,
                         const std::function<void(const Batch&, const Tensor<T>&)>& fn) {
  if (samples.empty()) throw std::invalid_argument("evaluate: empty evaluation set");
  bool classification = config.num_classes > 0;
  for (size_t start = 0; start < samples.size(); start += static_cast<size_t>(eval_batch)) {
    size_t end = std::min(samples.size(), start + static_cast<size_t>(eval_batch));
    std::vector<const tasks::Sample*> chunk;
    chunk.reserve(end - start);
    for (size_t i = start; i < end; ++i) chunk.push_back(&samples[i]);
    Batch b = pack_batch(chunk, classification);
    Tape<T> tape;
    auto bound = BoundParams<T>::bind(tape, config, store, mixing);
    Var logits = model_forward(tape, bound, b.tokens, b.layout);
    fn(b, tape.value(logits));
  }
}

}  // namespace

template <typename T>
Accuracy evaluate_accuracy(const ModelConfig& config, const ParameterStore<T>& store,
                           const MixingSet<T>* mixing, const std::vector<tasks::Sample>& samples,
                           int eval_batch) {
  Accuracy acc;
  acc.sequences = static_cast<int64_t>(samples.size());
  int64_t correct_tokens = 0, correct_sequences = 0;
  for_each_eval_chunk<T>(
      config, store, mixing, samples, eval_batch, [&](const Batch& b, const Tensor<T>& logits) {
        int64_t V = logits.rows();
        for (int s = 0; s < b.layout.batch; ++s) {
          bool all_ok = true;
          int64_t seen = 0;
          if (b.classification) {
            int64_t best = 0;
            for (int64_t i = 1; i < V; ++i)
              if (logits(i, s) > logits(best, s)) best = i;
            seen = 1;
            all_ok = best == b.targets[s];
            correct_tokens += all_ok;
            acc.positions += 1;
          } else {
            int off = b.layout.offsets[s];
            for (int p = 0; p < b.layout.lengths[s]; ++p) {
              if (!b.mask[off + p]) continue;
              ++seen;
              int64_t best = 0;
              for (int64_t i = 1; i < V; ++i)
                if (logits(i, off + p) > logits(best, off + p)) best = i;
              bool ok = best == b.targets[off + p];
              correct_tokens += ok;
              all_ok &= ok;
              acc.positions += 1;
            }
          }
          if (seen > 0 && all_ok) ++correct_sequences;
        }
      });
  acc.token_acc = acc.positions > 0 ? static_cast<double>(correct_tokens) / acc.positions : 0.0;
  acc.sequence_acc =
      acc.sequences > 0 ? static_cast<double>(correct_sequences) / acc.sequences : 0.0;
  return acc;
}

template <typename T>
double evaluate_perplexity(const ModelConfig& config, const ParameterStore<T>& store,
                           const MixingSet<T>* mixing, const std::vector<tasks::Sample>& samples,
                           int eval_batch) {
  double total = 0;
  int64_t count = 0;
  for_each_eval_chunk<T>(
      config, store, mixing, samples, eval_batch, [&](const Batch& b, const Tensor<T>& logits) {
        int64_t V = logits.rows();
        int64_t N = logits.cols();
        for (int64_t c = 0; c < N; ++c) {
          if (!b.classification && !b.mask[c]) continue;
          double mx = logits(0, c);
          for (int64_t i = 1; i < V; ++i) mx = std::max(mx, static_cast<double>(logits(i, c)));
          double z = 0;
          for (int64_t i = 0; i < V; ++i)
            z += std::exp(static_cast<double>(logits(i, c)) - mx);
          total += std::log(z) - (static_cast<double>(logits(b.targets[c], c)) - mx);
          ++count;
        }
      });
  return total / static_cast<double>(count);
}

double bits_per_parameter(double accuracy, int64_t total_bits, int64_t trainable_params) {
  if (trainable_params <= 0) throw std::invalid_argument("bits_per_parameter: no parameters");
  return static_cast<double>(total_bits) * accuracy / static_cast<double>(trainable_params);
}

std::vector<GridResult> run_grid(const GridSpec& space, const ModelConfig& base_model,
                                 const OptimizerConfig& base_opt, const tasks::Dataset& data,
                                 uint64_t seed, int64_t budget_steps,
                                 const std::function<void(const GridResult&)>& on_result) {
  auto lrs = space.lrs.empty() ? std::vector<double>{base_opt.lr} : space.lrs;
  auto batches =
      space.batch_sizes.empty() ? std::vector<int>{base_opt.batch_size} : space.batch_sizes;
  auto layer_opts = space.layers.empty() ? std::vector<int>{base_model.layers} : space.layers;
  auto width_opts = space.widths.empty() ? std::vector<int>{base_model.width} : space.widths;
  auto head_opts = space.heads.empty() ? std::vector<int>{base_model.heads} : space.heads;

  std::vector<GridResult> results;
  for (double lr : lrs)
    for (int bs : batches)
      for (int layers : layer_opts)
        for (int width : width_opts)
          for (int heads : head_opts) {
            ModelConfig cfg = base_model;
            cfg.layers = layers;
            cfg.width = width;
            cfg.heads = heads;
            cfg.head_dim = 0;
            cfg.mlp_dim = 0;
            OptimizerConfig opt = base_opt;
            opt.lr = lr;
            opt.batch_size = bs;
            opt.steps = std::max<int64_t>(budget_steps, 1);

            auto store = build_model<float>(cfg, seed);
            auto mixing = mixing_from_store(cfg, store);
            auto state = TrainState<float>::init(store);
            for (int64_t s = 0; s < opt.steps; ++s) {
              Batch b = batch_for_step(data, seed, s, bs);
              train_step(cfg, store, &mixing, state, b, opt);
            }
            const auto& eval_set = data.test.empty() ? data.train : data.test;
            GridResult r;
            r.point = {lr, bs, layers, width, heads};
            if (data.spec.is_classification() || data.spec.task != "text_corpus") {
              auto acc = evaluate_accuracy(cfg, store, &mixing, eval_set);
              r.metric = acc.token_acc;
            } else {
              r.metric = -evaluate_perplexity(cfg, store, &mixing, eval_set);
            }
            r.loss = state.last_loss;
            results.push_back(r);
            if (on_result) on_result(r);
          }
  return results;
}

#define FALB_INSTANTIATE(T)                                                                      \
  template struct TrainState<T>;                                                                 \
  template double train_step<T>(const ModelConfig&, ParameterStore<T>&, const MixingSet<T>*,    \
                                TrainState<T>&, const Batch&, const OptimizerConfig&);          \
  template void adam_apply<T>(Tensor<T>&, const Tensor<T>&, Tensor<T>&, Tensor<T>&, int64_t,    \
                              const OptimizerConfig&, double, double);                          \
  template Accuracy evaluate_accuracy<T>(const ModelConfig&, const ParameterStore<T>&,          \
                                         const MixingSet<T>*,                                   \
                                         const std::vector<tasks::Sample>&, int);               \
  template double evaluate_perplexity<T>(const ModelConfig&, const ParameterStore<T>&,          \
                                         const MixingSet<T>*,                                   \
                                         const std::vector<tasks::Sample>&, int);

FALB_INSTANTIATE(float)
FALB_INSTANTIATE(double)
#undef FALB_INSTANTIATE

}  // namespace falb::train
