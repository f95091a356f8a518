#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace falb::tasks {

/// One supervised example. For sequence tasks targets[i] is the supervised
/// prediction at position i (next token or per-position label) and mask marks
/// the positions that contribute to the loss. Classification tasks carry the
/// class in `label` instead (mask stays all-false).
struct Sample {
  std::vector<int32_t> tokens;
  std::vector<int32_t> targets;
  std::vector<uint8_t> mask;
  int32_t label = -1;

  bool operator==(const Sample&) const = default;
};

struct TaskSpec {
  std::string task;  // decimal_addition | retrieval | hopk | modular_addition |
                     // dyck1 | memorization | text_corpus | labeled_text
  int64_t train_size = 0;
  int64_t test_size = 0;
  uint64_t seed = 0;

  int digits = 10;          // decimal_addition
  int modulus = 599;        // modular_addition
  int max_pairs = 30;       // retrieval m_max
  int retrieval_vocab = 256;
  int hops = 16;            // hopk
  int hopk_length = 100;
  int alphabet = 26;        // hopk symbol count
  int dyck_length = 40;
  int64_t kv_pairs = 4096;  // memorization K
  int value_alphabet = 512; // memorization A
  int window = 256;         // text window / classification length
  std::string path;         // ingestion source

  static TaskSpec defaults(const std::string& task);
  void validate() const;

  int vocab_size() const;
  int max_len() const;
  int num_classes() const;  // 0 for sequence tasks
  bool is_classification() const { return num_classes() > 0; }
  bool is_generated() const { return task != "text_corpus" && task != "labeled_text"; }
};

struct Dataset {
  TaskSpec spec;
  std::vector<Sample> train;
  std::vector<Sample> test;
};

/// Deterministic generation (or ingestion, for the two file-backed tasks).
/// Train and test are disjoint as token sequences, enforced by hashing.
Dataset generate(const TaskSpec& spec);

/// k-hop bigram completion label at 0-based position pos, or -1 when
/// undefined: follow k times the token after the last previous occurrence of
/// the current token.
int32_t hopk_label(std::span<const int32_t> tokens, int pos, int k);

/// Balanced-parentheses oracle: '(' = 0, ')' = 1.
bool dyck1_balanced(std::span<const int32_t> tokens);

bool is_prime(int64_t p);

Dataset ingest_text_corpus(const std::filesystem::path& path, TaskSpec spec);
Dataset ingest_labeled_text(const std::filesystem::path& path, TaskSpec spec);

/// JSON-lines export ({"tokens":[...],"targets":[...],"mask":[...],"label":n?})
/// plus a sidecar <out>.spec.json echoing the TaskSpec and seed.
void export_jsonl(const Dataset& data, const std::filesystem::path& out);
std::string task_spec_json(const TaskSpec& spec);
TaskSpec task_spec_from_json(const std::string& json_text);

/// FNV-1a over the token stream; the train/test disjointness hash.
uint64_t sequence_hash(std::span<const int32_t> tokens);

}  // namespace falb::tasks
