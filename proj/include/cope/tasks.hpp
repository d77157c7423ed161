// Position-sensitive synthetic classification tasks and a TSV loader for
// external sentence / sentence-pair classification data.

#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cope/matrix.hpp"
#include "cope/random.hpp"

namespace cope {

struct Example {
  std::uint64_t id = 0;
  std::vector<std::size_t> tokens;
  std::vector<std::size_t> segment_ids;  // empty when the task has none
  std::size_t label = 0;

  bool operator==(const Example&) const = default;
};

struct Dataset {
  std::vector<Example> examples;
  std::size_t vocab_size = 0;
  std::size_t num_classes = 0;
  std::optional<std::size_t> positive_class;  // enables F1

  std::size_t size() const { return examples.size(); }
};

enum class TaskKind { order, position_bucket, first_token, external };

inline std::string_view to_string(TaskKind k) {
  switch (k) {
    case TaskKind::order: return "order";
    case TaskKind::position_bucket: return "position_bucket";
    case TaskKind::first_token: return "first_token";
    case TaskKind::external: return "external";
  }
  return "?";
}

inline TaskKind parse_task_kind(std::string_view s) {
  for (TaskKind k : {TaskKind::order, TaskKind::position_bucket, TaskKind::first_token, TaskKind::external})
    if (to_string(k) == s) return k;
  throw ConfigError("unknown task '" + std::string(s) + "'");
}

struct TaskSpec {
  TaskKind kind = TaskKind::order;
  std::size_t seq_len = 16;
  std::size_t vocab_size = 16;
  std::size_t num_classes = 2;
  std::uint64_t seed = 0;
  std::size_t train_size = 1024;
  std::size_t val_size = 512;
};

// Token ids reserved by the synthetic tasks.
inline constexpr std::size_t kMarkerA = 1;
inline constexpr std::size_t kMarkerB = 2;
inline constexpr std::size_t kFirstFiller = 3;

namespace detail {

inline std::size_t random_filler(const TaskSpec& spec, Rng& rng) {
  return kFirstFiller + rng.below(spec.vocab_size - kFirstFiller);
}

inline void require_synthetic_vocab(const TaskSpec& spec) {
  if (spec.vocab_size <= kFirstFiller) throw ConfigError("task: vocab_size must exceed 3");
}

}  // namespace detail

/// Markers A and B once each among fillers; label 1 iff A precedes B.
/// Examples come in mirrored pairs (A and B swapped) so both classes share
/// the same multiset of tokens.
inline Dataset gen_order_task(const TaskSpec& spec) {
  if (spec.seq_len < 4) throw ConfigError("order task: seq_len must be >= 4");
  if (spec.num_classes != 2) throw ConfigError("order task: num_classes must be 2");
  detail::require_synthetic_vocab(spec);
  Rng rng(spec.seed);
  Dataset d{{}, spec.vocab_size, 2, 1};
  const std::size_t total = spec.train_size + spec.val_size;
  while (d.examples.size() < total) {
    std::vector<std::size_t> tokens(spec.seq_len);
    for (auto& t : tokens) t = detail::random_filler(spec, rng);
    const std::size_t pa = rng.below(spec.seq_len);
    std::size_t pb = rng.below(spec.seq_len - 1);
    if (pb >= pa) ++pb;
    tokens[pa] = kMarkerA;
    tokens[pb] = kMarkerB;
    Example first{d.examples.size(), tokens, {}, pa < pb ? 1u : 0u};
    std::swap(tokens[pa], tokens[pb]);
    Example mirror{d.examples.size() + 1, tokens, {}, pa < pb ? 0u : 1u};
    d.examples.push_back(std::move(first));
    if (d.examples.size() < total) d.examples.push_back(std::move(mirror));
  }
  return d;
}

/// One marker at position p among fillers; label floor(p * classes / seq_len).
inline Dataset gen_position_bucket_task(const TaskSpec& spec) {
  if (spec.num_classes == 0 || spec.seq_len % spec.num_classes != 0)
    throw ConfigError("position_bucket task: num_classes must divide seq_len");
  detail::require_synthetic_vocab(spec);
  Rng rng(spec.seed);
  Dataset d{{}, spec.vocab_size, spec.num_classes, std::nullopt};
  if (spec.num_classes == 2) d.positive_class = 1;
  const std::size_t width = spec.seq_len / spec.num_classes;
  const std::size_t total = spec.train_size + spec.val_size;
  for (std::size_t i = 0; i < total; ++i) {
    const std::size_t bucket = i % spec.num_classes;
    const std::size_t p = bucket * width + rng.below(width);
    std::vector<std::size_t> tokens(spec.seq_len);
    for (auto& t : tokens) t = detail::random_filler(spec, rng);
    tokens[p] = kMarkerA;
    d.examples.push_back(Example{i, std::move(tokens), {}, p * spec.num_classes / spec.seq_len});
  }
  return d;
}

/// Label is the first token's filler index modulo num_classes.
inline Dataset gen_first_token_task(const TaskSpec& spec) {
  detail::require_synthetic_vocab(spec);
  if (spec.num_classes == 0) throw ConfigError("first_token task: num_classes must be > 0");
  Rng rng(spec.seed);
  Dataset d{{}, spec.vocab_size, spec.num_classes, std::nullopt};
  if (spec.num_classes == 2) d.positive_class = 1;
  const std::size_t total = spec.train_size + spec.val_size;
  for (std::size_t i = 0; i < total; ++i) {
    std::vector<std::size_t> tokens(spec.seq_len);
    for (auto& t : tokens) t = detail::random_filler(spec, rng);
    d.examples.push_back(Example{i, tokens, {}, (tokens[0] - kFirstFiller) % spec.num_classes});
  }
  return d;
}

inline Dataset generate_task(const TaskSpec& spec) {
  switch (spec.kind) {
    case TaskKind::order: return gen_order_task(spec);
    case TaskKind::position_bucket: return gen_position_bucket_task(spec);
    case TaskKind::first_token: return gen_first_token_task(spec);
    case TaskKind::external: break;
  }
  throw ConfigError("external tasks are loaded with load_tsv, not generated");
}

/// First `train_size` examples, then the rest.
inline std::pair<Dataset, Dataset> split_dataset(const Dataset& d, std::size_t train_size) {
  if (train_size > d.size()) throw ConfigError("split: train_size exceeds dataset size");
  Dataset train{{}, d.vocab_size, d.num_classes, d.positive_class};
  Dataset val{{}, d.vocab_size, d.num_classes, d.positive_class};
  train.examples.assign(d.examples.begin(), d.examples.begin() + static_cast<std::ptrdiff_t>(train_size));
  val.examples.assign(d.examples.begin() + static_cast<std::ptrdiff_t>(train_size), d.examples.end());
  return {std::move(train), std::move(val)};
}

/// Per-example random permutation of tokens (destroys positional signal).
inline Dataset shuffle_tokens(const Dataset& d, std::uint64_t seed) {
  Rng rng(seed);
  Dataset out = d;
  for (auto& e : out.examples) rng.shuffle(e.tokens);
  return out;
}

// ---------------------------------------------------------------------------
// TSV ingestion

enum class TsvFormat { single_sentence, sentence_pair };

inline TsvFormat parse_tsv_format(std::string_view s) {
  if (s == "single_sentence" || s == "single") return TsvFormat::single_sentence;
  if (s == "sentence_pair" || s == "pair") return TsvFormat::sentence_pair;
  throw ConfigError("unknown TSV format '" + std::string(s) + "'");
}

inline constexpr std::size_t kUnkId = 1;
inline constexpr std::size_t kSepId = 2;

class Vocabulary {
 public:
  Vocabulary() : words_{"<pad>", "<unk>", "<sep>"} { rebuild_index(); }

  /// Words seen at least `min_count` times, in first-seen order.
  static Vocabulary build(const std::vector<std::vector<std::string>>& sentences,
                          std::size_t min_count = 2) {
    std::unordered_map<std::string, std::size_t> counts;
    std::vector<std::string> order;
    for (const auto& s : sentences)
      for (const auto& w : s)
        if (counts[w]++ == 0) order.push_back(w);
    Vocabulary v;
    for (const auto& w : order)
      if (counts[w] >= min_count && !v.index_.count(w)) {
        v.index_.emplace(w, v.words_.size());
        v.words_.push_back(w);
      }
    return v;
  }

  std::size_t id(const std::string& word) const {
    auto it = index_.find(word);
    return it == index_.end() ? kUnkId : it->second;
  }

  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write vocabulary " + path);
    for (const auto& w : words_) os << w << '\n';
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open vocabulary " + path);
    Vocabulary v;
    v.words_.clear();
    std::string line;
    while (std::getline(is, line)) v.words_.push_back(line);
    if (v.words_.size() < 3) throw std::runtime_error(path + ": vocabulary missing reserved entries");
    v.rebuild_index();
    return v;
  }

 private:
  void rebuild_index() {
    index_.clear();
    for (std::size_t i = 0; i < words_.size(); ++i) index_.emplace(words_[i], i);
  }

  std::vector<std::string> words_;
  std::unordered_map<std::string, std::size_t> index_;
};

class TsvError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TsvDataset {
  Dataset data;
  Vocabulary vocab;
};

namespace detail {

inline std::vector<std::string> split_on(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    const auto next = s.find(sep, pos);
    out.emplace_back(s.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos));
    if (next == std::string_view::npos) break;
    pos = next + 1;
  }
  return out;
}

inline std::vector<std::string> whitespace_tokens(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t') ++j;
    if (j > i) out.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::optional<std::size_t> parse_label(std::string_view s) {
  std::size_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

}  // namespace detail

/// Reads `text<TAB>label` or `text<TAB>text<TAB>label` rows (UTF-8, LF). A
/// first row whose final field is not an integer is treated as a header.
/// Builds the vocabulary from this file (words seen >= min_count times) when
/// `vocab` is null.
inline TsvDataset load_tsv(const std::string& path, TsvFormat format, std::size_t num_classes,
                           std::size_t max_positions, const Vocabulary* vocab = nullptr,
                           std::size_t min_count = 2) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw TsvError("cannot open " + path);
  const std::size_t fields = format == TsvFormat::single_sentence ? 2 : 3;
  struct Row {
    std::vector<std::string> a, b;
    std::size_t label;
  };
  std::vector<Row> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto parts = detail::split_on(line, '\t');
    if (parts.size() != fields) {
      throw TsvError(path + ":" + std::to_string(line_no) + ": expected " + std::to_string(fields) +
                     " tab-separated fields, found " + std::to_string(parts.size()));
    }
    const auto label = detail::parse_label(parts.back());
    if (!label) {
      if (rows.empty() && line_no == 1) continue;  // header
      throw TsvError(path + ":" + std::to_string(line_no) + ": label '" + parts.back() +
                     "' is not an integer");
    }
    if (*label >= num_classes) {
      throw TsvError(path + ":" + std::to_string(line_no) + ": label " + std::to_string(*label) +
                     " outside class set [0, " + std::to_string(num_classes) + ")");
    }
    Row r{detail::whitespace_tokens(parts[0]), {}, *label};
    if (format == TsvFormat::sentence_pair) r.b = detail::whitespace_tokens(parts[1]);
    rows.push_back(std::move(r));
  }

  TsvDataset out;
  if (vocab) {
    out.vocab = *vocab;
  } else {
    std::vector<std::vector<std::string>> sentences;
    for (const auto& r : rows) {
      sentences.push_back(r.a);
      if (!r.b.empty()) sentences.push_back(r.b);
    }
    out.vocab = Vocabulary::build(sentences, min_count);
  }
  out.data.num_classes = num_classes;
  out.data.vocab_size = out.vocab.size();
  if (num_classes == 2) out.data.positive_class = 1;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    Example e;
    e.id = i;
    e.label = rows[i].label;
    for (const auto& w : rows[i].a) e.tokens.push_back(out.vocab.id(w));
    if (format == TsvFormat::sentence_pair) {
      e.segment_ids.assign(e.tokens.size() + 1, 0);
      e.tokens.push_back(kSepId);
      for (const auto& w : rows[i].b) {
        e.tokens.push_back(out.vocab.id(w));
        e.segment_ids.push_back(1);
      }
    }
    if (e.tokens.size() > max_positions) {
      e.tokens.resize(max_positions);
      if (!e.segment_ids.empty()) e.segment_ids.resize(max_positions);
    }
    if (e.tokens.empty()) e.tokens.push_back(kUnkId);
    out.data.examples.push_back(std::move(e));
  }
  return out;
}

}  // namespace cope
