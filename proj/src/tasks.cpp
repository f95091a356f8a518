#include "falb/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <stdexcept>
#include <unordered_set>

#include "falb/rng.hpp"

namespace falb::tasks {

using json = nlohmann::json;

uint64_t sequence_hash(std::span<const int32_t> tokens) {
  uint64_t h = 0xCBF29CE484222325ULL;
  for (int32_t t : tokens) {
    for (int b = 0; b < 4; ++b) {
      h ^= static_cast<uint8_t>(t >> (8 * b));
      h *= 0x100000001B3ULL;
    }
  }
  return h;
}

bool is_prime(int64_t p) {
  if (p < 2) return false;
  for (int64_t d = 2; d * d <= p; ++d)
    if (p % d == 0) return false;
  return true;
}

TaskSpec TaskSpec::defaults(const std::string& task) {
  TaskSpec s;
  s.task = task;
  if (task == "decimal_addition") {
    s.digits = 10;
    s.train_size = 50000;
    s.test_size = 4000;
  } else if (task == "retrieval") {
    s.max_pairs = 30;
    s.retrieval_vocab = 256;
    s.train_size = 40000;
    s.test_size = 4000;
  } else if (task == "hopk") {
    s.hops = 16;
    s.hopk_length = 100;
    s.alphabet = 26;
    s.train_size = 100000;
    s.test_size = 100;
  } else if (task == "modular_addition") {
    s.modulus = 599;
    s.train_size = 40000;
    s.test_size = 4000;
  } else if (task == "dyck1") {
    s.dyck_length = 40;
    s.train_size = 100000;
    s.test_size = 4000;
  } else if (task == "memorization") {
    s.kv_pairs = 4096;
    s.value_alphabet = 512;
  } else if (task == "text_corpus") {
    s.window = 256;
  } else if (task == "labeled_text") {
    s.window = 256;
  } else {
    throw std::invalid_argument("unknown task: " + task);
  }
  return s;
}

void TaskSpec::validate() const {
  if (task == "decimal_addition") {
    if (digits < 1) throw std::invalid_argument("decimal_addition: digits must be >= 1");
  } else if (task == "retrieval") {
    if (max_pairs < 1) throw std::invalid_argument("retrieval: max_pairs must be >= 1");
    if (retrieval_vocab < 4 || retrieval_vocab % 2 != 0)
      throw std::invalid_argument("retrieval: vocabulary must be even and >= 4");
  } else if (task == "hopk") {
    if (hops < 1) throw std::invalid_argument("hopk: hops must be >= 1");
    if (alphabet < 2) throw std::invalid_argument("hopk: alphabet must be >= 2");
    if (hopk_length < 2) throw std::invalid_argument("hopk: length must be >= 2");
  } else if (task == "modular_addition") {
    if (!is_prime(modulus)) throw std::invalid_argument("modular_addition: modulus is not prime");
  } else if (task == "dyck1") {
    if (dyck_length < 1) throw std::invalid_argument("dyck1: length must be >= 1");
  } else if (task == "memorization") {
    if (kv_pairs < 1 || value_alphabet < 2)
      throw std::invalid_argument("memorization: need kv_pairs >= 1 and value_alphabet >= 2");
  } else if (task == "text_corpus" || task == "labeled_text") {
    if (window < 2) throw std::invalid_argument("ingestion: window must be >= 2");
  } else {
    throw std::invalid_argument("unknown task: " + task);
  }
}

namespace {

constexpr int32_t kByteVocab = 256;  // byte tasks: ids 0..255, pad = 256

int memorization_key_base(int64_t kv_pairs) {
  return static_cast<int>(std::ceil(std::sqrt(static_cast<double>(kv_pairs))));
}

}  // namespace

int TaskSpec::vocab_size() const {
  if (task == "decimal_addition") return 12;  // 10 digits, '+', '='
  if (task == "retrieval") return retrieval_vocab;
  if (task == "hopk") return alphabet;
  if (task == "modular_addition") return modulus + 2;  // residues, '+', '='
  if (task == "dyck1") return 2;
  if (task == "memorization") return value_alphabet + memorization_key_base(kv_pairs) + 1;
  if (task == "text_corpus" || task == "labeled_text") return kByteVocab + 1;
  throw std::invalid_argument("unknown task: " + task);
}

int TaskSpec::max_len() const {
  if (task == "decimal_addition") return 3 * digits + 3;
  if (task == "retrieval") return 2 * max_pairs + 1;
  if (task == "hopk") return hopk_length;
  if (task == "modular_addition") return 5;
  if (task == "dyck1") return dyck_length;
  if (task == "memorization") return 4;
  if (task == "text_corpus" || task == "labeled_text") return window;
  throw std::invalid_argument("unknown task: " + task);
}

int TaskSpec::num_classes() const {
  if (task == "dyck1" || task == "labeled_text") return 2;
  return 0;
}

int32_t hopk_label(std::span<const int32_t> tokens, int pos, int k) {
  if (k < 1 || pos < 0 || pos >= static_cast<int>(tokens.size()))
    throw std::invalid_argument("hopk_label: bad position or hop count");
  int cur = pos;
  for (int hop = 0; hop < k; ++hop) {
    int j = -1;
    for (int s = cur - 1; s >= 0; --s) {
      if (tokens[s] == tokens[cur]) {
        j = s;
        break;
      }
    }
    if (j < 0) return -1;
    cur = j + 1;  // token following the previous occurrence; j+1 <= old cur
  }
  return tokens[cur];
}

bool dyck1_balanced(std::span<const int32_t> tokens) {
  int depth = 0;
  for (int32_t t : tokens) {
    depth += (t == 0) ? 1 : -1;
    if (depth < 0) return false;
  }
  return depth == 0;
}

namespace {

// Shifted next-token targets; mask is set by the caller.
void fill_shifted_targets(Sample& s) {
  size_t n = s.tokens.size();
  s.targets.assign(n, 0);
  for (size_t i = 0; i + 1 < n; ++i) s.targets[i] = s.tokens[i + 1];
}

struct DisjointPool {
  std::unordered_set<uint64_t> seen;
  bool insert(const Sample& s) { return seen.insert(sequence_hash(s.tokens)).second; }
};

using SampleFn = Sample (*)(const TaskSpec&, RngStream&);

// Draws `count` samples for `split`, keeping token sequences distinct from
// everything already in `pool`. Redraws happen inside the per-index stream,
// so generation stays a pure function of (spec, seed).
std::vector<Sample> draw_disjoint(const TaskSpec& spec, const char* split, int64_t count,
                                  SampleFn fn, DisjointPool& pool, int max_tries = 10000) {
  std::vector<Sample> out;
  out.reserve(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) {
    RngStream rng(spec.seed, std::string("sample/") + split + "/" + std::to_string(i));
    Sample s;
    int tries = 0;
    do {
      if (++tries > max_tries)
        throw std::runtime_error(spec.task +
                                 ": could not draw a fresh sample; requested sizes likely exceed "
                                 "the sample space");
      s = fn(spec, rng);
    } while (!pool.insert(s));
    out.push_back(std::move(s));
  }
  return out;
}

// --- decimal addition ---

Sample decimal_sample(const TaskSpec& spec, RngStream& rng) {
  int d = spec.digits;
  auto draw = [&]() {
    uint64_t x = 0;
    for (int i = 0; i < d; ++i) x = x * 10 + rng.next_below(10);
    return x;
  };
  uint64_t a = draw(), b = draw();
  Sample s;
  s.tokens.reserve(3 * d + 3);
  auto push_digits = [&](uint64_t x, int width) {
    std::vector<int32_t> digits(width);
    for (int i = width - 1; i >= 0; --i) {
      digits[i] = static_cast<int32_t>(x % 10);
      x /= 10;
    }
    s.tokens.insert(s.tokens.end(), digits.begin(), digits.end());
  };
  push_digits(a, d);   // most significant digit first
  s.tokens.push_back(10);  // '+'
  push_digits(b, d);
  s.tokens.push_back(11);  // '='
  push_digits(a + b, d + 1);  // zero-padded to d+1
  fill_shifted_targets(s);
  s.mask.assign(s.tokens.size(), 0);
  // positions predicting the d+1 answer digits: '=' through second-to-last
  for (int i = 2 * d + 1; i <= 3 * d + 1; ++i) s.mask[i] = 1;
  return s;
}

Dataset gen_decimal(const TaskSpec& spec) {
  if (2 * spec.digits <= 18) {
    double space = std::pow(10.0, 2 * spec.digits);
    if (static_cast<double>(spec.train_size + spec.test_size) > space)
      throw std::invalid_argument("decimal_addition: requested sizes exceed the pair space");
  }
  Dataset d{spec, {}, {}};
  DisjointPool pool;
  d.train = draw_disjoint(spec, "train", spec.train_size, decimal_sample, pool);
  d.test = draw_disjoint(spec, "test", spec.test_size, decimal_sample, pool);
  return d;
}

// --- retrieval ---

Sample retrieval_sample(const TaskSpec& spec, RngStream& rng) {
  int V = spec.retrieval_vocab;
  int m = 1 + static_cast<int>(rng.next_below(static_cast<uint64_t>(spec.max_pairs)));
  std::vector<int32_t> keys(m), values(m);
  for (int i = 0; i < m; ++i) {
    keys[i] = V / 2 + static_cast<int32_t>(rng.next_below(static_cast<uint64_t>(V / 2)));
    values[i] = 1 + static_cast<int32_t>(rng.next_below(static_cast<uint64_t>(V / 2 - 1)));
  }
  int q = static_cast<int>(rng.next_below(static_cast<uint64_t>(m)));
  int32_t query = keys[q];
  int32_t answer = -1;
  for (int i = m - 1; i >= 0; --i) {  // last occurrence wins
    if (keys[i] == query) {
      answer = values[i];
      break;
    }
  }
  Sample s;
  s.tokens.reserve(2 * m + 1);
  for (int i = 0; i < m; ++i) {
    s.tokens.push_back(keys[i]);
    s.tokens.push_back(values[i]);
  }
  s.tokens.push_back(query);
  fill_shifted_targets(s);
  s.targets.back() = answer;
  s.mask.assign(s.tokens.size(), 0);
  s.mask.back() = 1;
  return s;
}

Dataset gen_retrieval(const TaskSpec& spec) {
  Dataset d{spec, {}, {}};
  DisjointPool pool;
  d.train = draw_disjoint(spec, "train", spec.train_size, retrieval_sample, pool);
  d.test = draw_disjoint(spec, "test", spec.test_size, retrieval_sample, pool);
  return d;
}

// --- hop-k ---

Sample hopk_sample(const TaskSpec& spec, RngStream& rng) {
  Sample s;
  s.tokens.resize(spec.hopk_length);
  for (auto& t : s.tokens)
    t = static_cast<int32_t>(rng.next_below(static_cast<uint64_t>(spec.alphabet)));
  s.targets.resize(s.tokens.size());
  s.mask.assign(s.tokens.size(), 0);
  for (int i = 0; i < static_cast<int>(s.tokens.size()); ++i) {
    int32_t label = hopk_label(s.tokens, i, spec.hops);
    s.targets[i] = label < 0 ? 0 : label;
    s.mask[i] = label >= 0;
  }
  return s;
}

Dataset gen_hopk(const TaskSpec& spec) {
  Dataset d{spec, {}, {}};
  DisjointPool pool;
  d.train = draw_disjoint(spec, "train", spec.train_size, hopk_sample, pool);
  d.test = draw_disjoint(spec, "test", spec.test_size, hopk_sample, pool);
  return d;
}

// --- modular addition ---

Sample modular_sample(const TaskSpec& spec, RngStream& rng) {
  int64_t p = spec.modulus;
  // operands in [1, p]; residue token ids are x mod p so p maps to 0
  int64_t a = 1 + static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(p)));
  int64_t b = 1 + static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(p)));
  Sample s;
  s.tokens = {static_cast<int32_t>(a % p), static_cast<int32_t>(p),      // '+'
              static_cast<int32_t>(b % p), static_cast<int32_t>(p + 1),  // '='
              static_cast<int32_t>((a + b) % p)};
  fill_shifted_targets(s);
  s.mask.assign(5, 0);
  s.mask[3] = 1;
  return s;
}

Dataset gen_modular(const TaskSpec& spec) {
  double space = static_cast<double>(spec.modulus) * spec.modulus;
  if (static_cast<double>(spec.train_size + spec.test_size) > space)
    throw std::invalid_argument("modular_addition: requested sizes exceed the pair space");
  Dataset d{spec, {}, {}};
  DisjointPool pool;
  d.train = draw_disjoint(spec, "train", spec.train_size, modular_sample, pool);
  d.test = draw_disjoint(spec, "test", spec.test_size, modular_sample, pool);
  return d;
}

// --- Dyck-1 ---

// completions[r][k]: balanced continuations of length r starting at depth k.
// Exact in doubles up to length ~50 (central binomials < 2^53).
std::vector<std::vector<double>> dyck_completions(int length) {
  std::vector<std::vector<double>> c(length + 1, std::vector<double>(length + 2, 0.0));
  c[0][0] = 1.0;
  for (int r = 1; r <= length; ++r)
    for (int k = 0; k <= length; ++k)
      c[r][k] = c[r - 1][k + 1] + (k > 0 ? c[r - 1][k - 1] : 0.0);
  return c;
}

Sample dyck_sample_with(const TaskSpec& spec, RngStream& rng,
                        const std::vector<std::vector<double>>& completions) {
  int L = spec.dyck_length;
  Sample s;
  s.tokens.resize(L);
  // Balanced constructions and uniform strings mixed half/half keeps both
  // labels well above the 30% floor (uniform length-40 strings are almost
  // never balanced).
  bool want_balanced = completions[L][0] > 0 && rng.next_unit() <= 0.5;
  if (want_balanced) {
    // exact uniform sample over balanced strings via completion counts
    int depth = 0;
    for (int i = 0; i < L; ++i) {
      double w_open = completions[L - i - 1][depth + 1];
      double w_close = depth > 0 ? completions[L - i - 1][depth - 1] : 0.0;
      bool open = rng.next_unit() * (w_open + w_close) <= w_open;
      if (w_open == 0.0) open = false;
      s.tokens[i] = open ? 0 : 1;
      depth += open ? 1 : -1;
    }
  } else {
    for (auto& t : s.tokens) t = static_cast<int32_t>(rng.next_below(2));
  }
  s.targets.assign(L, 0);
  s.mask.assign(L, 0);
  s.label = dyck1_balanced(s.tokens) ? 1 : 0;
  return s;
}

Dataset gen_dyck(const TaskSpec& spec) {
  Dataset d{spec, {}, {}};
  DisjointPool pool;
  auto completions = dyck_completions(spec.dyck_length);
  auto draw = [&](const char* split, int64_t count) {
    std::vector<Sample> out;
    out.reserve(static_cast<size_t>(count));
    for (int64_t i = 0; i < count; ++i) {
      RngStream rng(spec.seed, std::string("sample/") + split + "/" + std::to_string(i));
      Sample s;
      int tries = 0;
      do {
        if (++tries > 10000)
          throw std::runtime_error("dyck1: requested sizes exceed the sample space");
        s = dyck_sample_with(spec, rng, completions);
      } while (!pool.insert(s));
      out.push_back(std::move(s));
    }
    return out;
  };
  d.train = draw("train", spec.train_size);
  d.test = draw("test", spec.test_size);
  return d;
}

// --- memorization ---

Dataset gen_memorization(const TaskSpec& spec) {
  int base = memorization_key_base(spec.kv_pairs);
  int32_t key0 = spec.value_alphabet;       // key tokens live above the values
  int32_t eq = spec.value_alphabet + base;  // '='
  Dataset d{spec, {}, {}};
  d.train.reserve(static_cast<size_t>(spec.kv_pairs));
  for (int64_t key = 0; key < spec.kv_pairs; ++key) {
    RngStream rng(spec.seed, "sample/train/" + std::to_string(key));
    int32_t value =
        static_cast<int32_t>(rng.next_below(static_cast<uint64_t>(spec.value_alphabet)));
    Sample s;
    s.tokens = {key0 + static_cast<int32_t>(key / base), key0 + static_cast<int32_t>(key % base),
                eq, value};
    fill_shifted_targets(s);
    s.mask.assign(4, 0);
    s.mask[2] = 1;
    d.train.push_back(std::move(s));
  }
  // the metric is training accuracy on the full enumeration of keys, so the
  // usual held-out split does not apply
  RngStream shuffle(spec.seed, "shuffle/train");
  for (size_t i = d.train.size(); i > 1; --i)
    std::swap(d.train[i - 1], d.train[shuffle.next_below(i)]);
  return d;
}

// --- ingestion helpers ---

std::vector<uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path.string());
  return std::vector<uint8_t>((std::istreambuf_iterator<char>(in)),
                              std::istreambuf_iterator<char>());
}

void shuffle_and_split(Dataset& d, std::vector<Sample> all, const TaskSpec& spec) {
  RngStream rng(spec.seed, "shuffle");
  for (size_t i = all.size(); i > 1; --i) std::swap(all[i - 1], all[rng.next_below(i)]);
  int64_t total = static_cast<int64_t>(all.size());
  int64_t test = spec.test_size > 0 ? spec.test_size : std::clamp<int64_t>(total / 20, 1, 4000);
  test = std::min(test, total - 1);
  int64_t train = spec.train_size > 0 ? std::min(spec.train_size, total - test) : total - test;
  d.train.assign(all.begin(), all.begin() + train);
  DisjointPool pool;
  for (const Sample& s : d.train) pool.insert(s);
  for (int64_t i = train; i < total && static_cast<int64_t>(d.test.size()) < test; ++i)
    if (pool.insert(all[i])) d.test.push_back(std::move(all[i]));
}

// RFC4180-ish CSV: quoted fields, doubled quotes, newlines inside quotes.
std::vector<std::vector<std::string>> parse_csv(const std::string& text,
                                                std::vector<int>* row_lines) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, row_started = false;
  int line = 1, row_start_line = 1;
  auto end_field = [&]() {
    row.push_back(std::move(field));
    field.clear();
  };
  auto end_row = [&]() {
    end_field();
    rows.push_back(std::move(row));
    if (row_lines) row_lines->push_back(row_start_line);
    row.clear();
    row_started = false;
  };
  for (size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (!row_started && c != '\n' && c != '\r') {
      row_started = true;
      row_start_line = line;
    }
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        if (c == '\n') ++line;
        field += c;
      }
    } else if (c == '"' && field.empty()) {
      quoted = true;
    } else if (c == ',') {
      end_field();
    } else if (c == '\n') {
      if (row_started) end_row();
      ++line;
    } else if (c != '\r') {
      field += c;
    }
  }
  if (quoted) throw std::runtime_error("csv: unterminated quote at end of file");
  if (row_started) end_row();
  return rows;
}

}  // namespace

Dataset ingest_text_corpus(const std::filesystem::path& path, TaskSpec spec) {
  spec.task = "text_corpus";
  spec.path = path.string();
  spec.validate();
  std::vector<uint8_t> bytes = read_file_bytes(path);
  if (bytes.size() < 2) throw std::runtime_error("text corpus too small: " + path.string());
  size_t m = static_cast<size_t>(spec.window);
  std::vector<Sample> windows;
  for (size_t s = 0; s + 1 < bytes.size(); s += m) {
    size_t len = std::min(m, bytes.size() - s);
    Sample w;
    w.tokens.assign(bytes.begin() + s, bytes.begin() + s + len);
    w.targets.resize(len);
    w.mask.resize(len);
    for (size_t i = 0; i < len; ++i) {
      bool has_next = s + i + 1 < bytes.size();
      w.targets[i] = has_next ? bytes[s + i + 1] : 0;
      w.mask[i] = has_next;
    }
    windows.push_back(std::move(w));
  }
  Dataset d{spec, {}, {}};
  shuffle_and_split(d, std::move(windows), spec);
  return d;
}

Dataset ingest_labeled_text(const std::filesystem::path& path, TaskSpec spec) {
  spec.task = "labeled_text";
  spec.path = path.string();
  spec.validate();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<int> row_lines;
  auto rows = parse_csv(text, &row_lines);
  if (rows.empty()) throw std::runtime_error("csv: empty file: " + path.string());
  if (rows[0].size() != 2 || rows[0][0] != "text" || rows[0][1] != "label")
    throw std::runtime_error("csv: expected header \"text,label\"");

  std::vector<Sample> samples;
  for (size_t r = 1; r < rows.size(); ++r) {
    auto fail = [&](const std::string& why) -> void {
      throw std::runtime_error("csv line " + std::to_string(row_lines[r]) + ": " + why);
    };
    if (rows[r].size() != 2) fail("expected 2 fields, got " + std::to_string(rows[r].size()));
    const std::string& body = rows[r][0];
    const std::string& label_str = rows[r][1];
    if (label_str != "0" && label_str != "1")
      fail("label must be 0 or 1, got \"" + label_str + "\"");
    Sample s;
    s.tokens.reserve(static_cast<size_t>(spec.window));
    for (size_t i = 0; i < body.size() && static_cast<int>(i) < spec.window; ++i)
      s.tokens.push_back(static_cast<uint8_t>(body[i]));
    s.tokens.resize(static_cast<size_t>(spec.window), kByteVocab);  // right-pad
    s.targets.assign(static_cast<size_t>(spec.window), 0);
    s.mask.assign(static_cast<size_t>(spec.window), 0);
    s.label = label_str == "1" ? 1 : 0;
    samples.push_back(std::move(s));
  }
  if (samples.empty()) throw std::runtime_error("csv: no data rows: " + path.string());
  Dataset d{spec, {}, {}};
  shuffle_and_split(d, std::move(samples), spec);
  return d;
}

Dataset generate(const TaskSpec& spec) {
  spec.validate();
  if (spec.task == "decimal_addition") return gen_decimal(spec);
  if (spec.task == "retrieval") return gen_retrieval(spec);
  if (spec.task == "hopk") return gen_hopk(spec);
  if (spec.task == "modular_addition") return gen_modular(spec);
  if (spec.task == "dyck1") return gen_dyck(spec);
  if (spec.task == "memorization") return gen_memorization(spec);
  if (spec.task == "text_corpus") return ingest_text_corpus(spec.path, spec);
  if (spec.task == "labeled_text") return ingest_labeled_text(spec.path, spec);
  throw std::invalid_argument("unknown task: " + spec.task);
}

// --- JSON ---

std::string task_spec_json(const TaskSpec& s) {
  json j{{"task", s.task},
         {"train_size", s.train_size},
         {"test_size", s.test_size},
         {"seed", s.seed},
         {"digits", s.digits},
         {"modulus", s.modulus},
         {"max_pairs", s.max_pairs},
         {"retrieval_vocab", s.retrieval_vocab},
         {"hops", s.hops},
         {"hopk_length", s.hopk_length},
         {"alphabet", s.alphabet},
         {"dyck_length", s.dyck_length},
         {"kv_pairs", s.kv_pairs},
         {"value_alphabet", s.value_alphabet},
         {"window", s.window},
         {"path", s.path}};
  return j.dump(2);
}

TaskSpec task_spec_from_json(const std::string& text) {
  json j = json::parse(text);
  TaskSpec s = TaskSpec::defaults(j.at("task").get<std::string>());
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("train_size", s.train_size);
  get("test_size", s.test_size);
  get("seed", s.seed);
  get("digits", s.digits);
  get("modulus", s.modulus);
  get("max_pairs", s.max_pairs);
  get("retrieval_vocab", s.retrieval_vocab);
  get("hops", s.hops);
  get("hopk_length", s.hopk_length);
  get("alphabet", s.alphabet);
  get("dyck_length", s.dyck_length);
  get("kv_pairs", s.kv_pairs);
  get("value_alphabet", s.value_alphabet);
  get("window", s.window);
  get("path", s.path);
  return s;
}

void export_jsonl(const Dataset& data, const std::filesystem::path& out) {
  auto write_split = [&](const std::vector<Sample>& samples, const std::filesystem::path& p) {
    std::ofstream os(p);
    if (!os) throw std::runtime_error("cannot write " + p.string());
    for (const Sample& s : samples) {
      json j{{"tokens", s.tokens}, {"targets", s.targets}};
      j["mask"] = json::array();
      for (uint8_t m : s.mask) j["mask"].push_back(m != 0);
      if (s.label >= 0) j["label"] = s.label;
      os << j.dump() << "\n";
    }
  };
  write_split(data.train, out);
  if (!data.test.empty()) {
    std::filesystem::path test_path = out;
    test_path.replace_extension(".test" + out.extension().string());
    write_split(data.test, test_path);
  }
  std::ofstream spec_os(out.string() + ".spec.json");
  spec_os << task_spec_json(data.spec) << "\n";
}

}  // namespace falb::tasks
