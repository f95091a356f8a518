#include "falb/diagnostics.hpp"

#include <fstream>
#include <json.hpp>

#include "falb/linalg.hpp"

namespace falb::diag {

using json = nlohmann::json;

std::vector<AttentionRecord> capture_attention(const ModelConfig& config,
                                               const ParameterStore<float>& store,
                                               const MixingSet<float>* mixing,
                                               const std::vector<int32_t>& tokens) {
  Tape<float> tape;
  auto bound = BoundParams<float>::bind(tape, config, store, mixing);
  auto layout = SeqLayout::uniform(1, static_cast<int>(tokens.size()));
  ForwardCapture<float> cap;
  model_forward(tape, bound, tokens, layout, &cap);

  std::vector<AttentionRecord> records;
  for (int l = 0; l < config.layers; ++l) {
    const auto& maps = cap.attention[l].maps.at(0);
    for (int h = 0; h < config.heads; ++h) {
      AttentionRecord r;
      r.layer = l;
      r.head = h;
      r.tokens = tokens;
      const Tensor<float>& m = maps.at(h);
      r.map = Tensor<double>({m.rows(), m.cols()});
      for (int64_t i = 0; i < m.numel(); ++i) r.map[i] = static_cast<double>(m[i]);
      records.push_back(std::move(r));
    }
  }
  return records;
}

double prev_token_score(const AttentionRecord& record) {
  int64_t t = record.map.cols();
  if (t < 2) throw std::invalid_argument("prev_token_score: need at least 2 positions");
  double total = 0;
  for (int64_t dst = 1; dst < t; ++dst) total += record.map(dst - 1, dst);
  return total / static_cast<double>(t - 1);
}

double copy_score(const AttentionRecord& record, const tasks::Sample& sample) {
  int64_t t = static_cast<int64_t>(sample.tokens.size());
  if (t < 3 || t % 2 == 0 || record.map.cols() != t)
    throw std::invalid_argument("copy_score: malformed retrieval sample");
  int32_t query = sample.tokens.back();
  int64_t value_pos = -1;
  for (int64_t i = t - 3; i >= 0; i -= 2) {  // keys at even indices
    if (sample.tokens[i] == query) {
      value_pos = i + 1;
      break;
    }
  }
  if (value_pos < 0) throw std::invalid_argument("copy_score: query key missing from prefix");
  return record.map(value_pos, t - 1);
}

std::vector<HeadScores> induction_scores(const ModelConfig& config,
                                         const ParameterStore<float>& store,
                                         const MixingSet<float>* mixing,
                                         const std::vector<tasks::Sample>& retrieval_samples,
                                         int max_samples) {
  std::vector<HeadScores> scores;
  for (int l = 0; l < config.layers; ++l)
    for (int h = 0; h < config.heads; ++h) scores.push_back({l, h, 0.0, 0.0});
  int used = 0;
  for (const auto& sample : retrieval_samples) {
    if (used >= max_samples) break;
    if (sample.tokens.size() < 3) continue;
    auto records = capture_attention(config, store, mixing, sample.tokens);
    for (size_t i = 0; i < records.size(); ++i) {
      scores[i].prev_token += prev_token_score(records[i]);
      scores[i].copy += copy_score(records[i], sample);
    }
    ++used;
  }
  if (used == 0) throw std::invalid_argument("induction_scores: no usable samples");
  for (auto& s : scores) {
    s.prev_token /= used;
    s.copy /= used;
  }
  return scores;
}

std::vector<double> kernel_spectrum(const ModelConfig& config, const ParameterStore<float>& store,
                                    const MixingSet<float>* mixing,
                                    const std::vector<int32_t>& tokens, int layer,
                                    double* effective_rank) {
  if (layer < 0 || layer >= config.layers)
    throw std::invalid_argument("kernel_spectrum: layer out of range");
  Tape<float> tape;
  auto bound = BoundParams<float>::bind(tape, config, store, mixing);
  auto layout = SeqLayout::uniform(1, static_cast<int>(tokens.size()));
  ForwardCapture<float> cap;
  cap.want_activations = true;
  model_forward(tape, bound, tokens, layout, &cap);
  const Tensor<float>& h = cap.activations.at(layer);
  int64_t n = h.rows(), t = h.cols();
  Tensor<double> phi({t, t});
  for (int64_t a = 0; a < t; ++a)
    for (int64_t b = 0; b < t; ++b) {
      double acc = 0;
      for (int64_t i = 0; i < n; ++i)
        acc += static_cast<double>(h(i, a)) * static_cast<double>(h(i, b));
      phi(a, b) = acc / static_cast<double>(n);
    }
  auto eig = symmetric_eigenvalues(phi);
  if (effective_rank) *effective_rank = falb::effective_rank(eig);
  return eig;
}

void export_attention(const std::vector<AttentionRecord>& records,
                      const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json index = json::array();
  for (const auto& r : records) {
    std::string name = "map_l" + std::to_string(r.layer) + "_h" + std::to_string(r.head) + ".csv";
    std::ofstream out(dir / name);
    if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
    for (int64_t i = 0; i < r.map.rows(); ++i) {
      for (int64_t j = 0; j < r.map.cols(); ++j) out << (j ? "," : "") << r.map(i, j);
      out << "\n";
    }
    index.push_back({{"layer", r.layer},
                     {"head", r.head},
                     {"file", name},
                     {"tokens", r.tokens},
                     {"rows", r.map.rows()},
                     {"cols", r.map.cols()}});
  }
  std::ofstream idx(dir / "index.json");
  idx << index.dump(2) << "\n";
}

}  // namespace falb::diag
