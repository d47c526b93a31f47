#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "caae/tensor.hpp"

namespace caae {

enum class Label : int { Entailment = 0, Neutral = 1, Contradiction = 2 };

inline constexpr std::size_t kNumLabels = 3;
inline constexpr std::array<const char*, kNumLabels> kLabelNames = {
    "entailment", "neutral", "contradiction"};

inline const char* label_name(Label l) {
  return kLabelNames[static_cast<std::size_t>(l)];
}

inline std::optional<Label> parse_label(const std::string& s) {
  for (std::size_t i = 0; i < kNumLabels; ++i)
    if (s == kLabelNames[i]) return static_cast<Label>(i);
  return std::nullopt;
}

using Tokens = std::vector<std::string>;
using Ids = std::vector<int>;

struct SnliExample {
  Tokens premise;
  Tokens hypothesis;
  Label label = Label::Entailment;
};

// Lowercase, then split on whitespace.
inline Tokens tokenize(const std::string& text) {
  std::string lowered(text);
  std::transform(lowered.begin(), lowered.end(), lowered.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  std::istringstream iss(lowered);
  Tokens out;
  for (std::string tok; iss >> tok;) out.push_back(tok);
  return out;
}

inline std::string join(const Tokens& toks, const char* sep = " ") {
  std::string out;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (i) out += sep;
    out += toks[i];
  }
  return out;
}

struct ParseError {
  std::size_t line = 0;
  std::string message;
};

struct ParseResult {
  std::vector<SnliExample> examples;
  std::size_t skipped_unlabeled = 0;
  std::vector<ParseError> errors;
  std::array<std::size_t, kNumLabels> label_counts{};
};

// Parses SNLI JSONL from an already-open stream. Lines with gold_label "-"
// are skipped; malformed lines are recorded and skipped.
inline ParseResult parse_snli_jsonl(std::istream& in) {
  ParseResult res;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto obj = nlohmann::json::parse(line);
      const std::string gold = obj.at("gold_label").get<std::string>();
      if (gold == "-") {
        ++res.skipped_unlabeled;
        continue;
      }
      const auto label = parse_label(gold);
      if (!label) {
        res.errors.push_back({lineno, "unknown gold_label '" + gold + "'"});
        continue;
      }
      SnliExample ex;
      ex.premise = tokenize(obj.at("sentence1").get<std::string>());
      ex.hypothesis = tokenize(obj.at("sentence2").get<std::string>());
      ex.label = *label;
      if (ex.premise.empty() || ex.hypothesis.empty()) {
        res.errors.push_back({lineno, "empty sentence"});
        continue;
      }
      ++res.label_counts[static_cast<std::size_t>(ex.label)];
      res.examples.push_back(std::move(ex));
    } catch (const nlohmann::json::exception& e) {
      res.errors.push_back({lineno, e.what()});
    }
  }
  return res;
}

inline ParseResult parse_snli_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return parse_snli_jsonl(in);
}

// Truncates both sentences to at most max_len tokens; returns how many
// examples were shortened.
inline std::size_t truncate_examples(std::vector<SnliExample>& examples,
                                     std::size_t max_len) {
  std::size_t count = 0;
  for (auto& ex : examples) {
    bool cut = false;
    if (ex.premise.size() > max_len) ex.premise.resize(max_len), cut = true;
    if (ex.hypothesis.size() > max_len) ex.hypothesis.resize(max_len), cut = true;
    count += cut;
  }
  return count;
}

class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kBos = 2;
  static constexpr int kEos = 3;
  static constexpr int kReserved = 4;
  static constexpr std::array<const char*, kReserved> kReservedTokens = {
      "<pad>", "<unk>", "<bos>", "<eos>"};

  Vocab() {
    for (auto* t : kReservedTokens) tokens_.emplace_back(t);
  }

  // Tokens ordered by descending frequency, ties broken lexicographically.
  static Vocab build(const std::vector<SnliExample>& examples,
                     std::size_t min_count) {
    if (min_count < 1) throw std::invalid_argument("min_count must be >= 1");
    if (examples.empty()) throw DataError("cannot build a vocabulary from an empty corpus");
    std::unordered_map<std::string, std::size_t> freq;
    for (const auto& ex : examples) {
      for (const auto& t : ex.premise) ++freq[t];
      for (const auto& t : ex.hypothesis) ++freq[t];
    }
    std::vector<std::pair<std::string, std::size_t>> items(freq.begin(), freq.end());
    std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
      return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    Tokens kept;
    for (auto& [tok, n] : items)
      if (n >= min_count) kept.push_back(tok);
    return from_tokens(kept);
  }

  // `tokens` are the non-reserved entries, in id order starting at 4.
  static Vocab from_tokens(const Tokens& tokens) {
    Vocab v;
    for (const auto& t : tokens) {
      if (v.index_.contains(t) || is_reserved(t))
        throw DataError("duplicate vocabulary token '" + t + "'");
      v.index_.emplace(t, static_cast<int>(v.tokens_.size()));
      v.tokens_.push_back(t);
    }
    return v;
  }

  std::size_t size() const { return tokens_.size(); }

  int id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
  }

  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }

  // All tokens including the reserved header, in id order.
  const Tokens& tokens() const { return tokens_; }

  Ids encode(const Tokens& toks, bool add_bos_eos) const {
    Ids out;
    out.reserve(toks.size() + 2);
    if (add_bos_eos) out.push_back(kBos);
    for (const auto& t : toks) out.push_back(id(t));
    if (add_bos_eos) out.push_back(kEos);
    return out;
  }

  // Drops reserved markers other than UNK.
  Tokens decode(const Ids& ids) const {
    Tokens out;
    for (int i : ids) {
      if (i == kPad || i == kBos || i == kEos) continue;
      out.push_back(token(i));
    }
    return out;
  }

  void save(std::ostream& out) const {
    for (const auto& t : tokens_) out << t << '\n';
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    save(out);
    if (!out) throw IoError("write failed for " + path);
  }

  static Vocab load(std::istream& in) {
    Tokens lines;
    for (std::string line; std::getline(in, line);) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      lines.push_back(line);
    }
    if (lines.size() < kReserved) throw DataError("vocabulary file lacks the reserved header");
    for (int i = 0; i < kReserved; ++i)
      if (lines[static_cast<std::size_t>(i)] != kReservedTokens[static_cast<std::size_t>(i)])
        throw DataError("vocabulary header line " + std::to_string(i + 1) +
                        " should be " + kReservedTokens[static_cast<std::size_t>(i)]);
    return from_tokens(Tokens(lines.begin() + kReserved, lines.end()));
  }

  static Vocab load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    return load(in);
  }

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  static bool is_reserved(const std::string& t) {
    return std::find(kReservedTokens.begin(), kReservedTokens.end(), t) !=
           kReservedTokens.end();
  }

  Tokens tokens_;
  std::unordered_map<std::string, int> index_;
};

// Id matrices are row-major [batch x width], padded with Vocab::kPad.
struct Batch {
  std::size_t size = 0;
  std::size_t premise_width = 0;
  std::size_t hypothesis_width = 0;
  Ids premise;
  Ids hypothesis;
  std::vector<std::size_t> premise_len;
  std::vector<std::size_t> hypothesis_len;
  std::vector<Label> labels;
  std::vector<std::size_t> source_index;  // position in the example list

  Ids premise_row(std::size_t b) const {
    auto first = premise.begin() + static_cast<std::ptrdiff_t>(b * premise_width);
    return Ids(first, first + static_cast<std::ptrdiff_t>(premise_len[b]));
  }
  Ids hypothesis_row(std::size_t b) const {
    auto first = hypothesis.begin() + static_cast<std::ptrdiff_t>(b * hypothesis_width);
    return Ids(first, first + static_cast<std::ptrdiff_t>(hypothesis_len[b]));
  }
};

namespace detail {
inline void pad_rows(const std::vector<Ids>& rows, Ids& out, std::size_t& width,
                     std::vector<std::size_t>& lens) {
  width = 0;
  for (const auto& r : rows) width = std::max(width, r.size());
  out.assign(rows.size() * width, Vocab::kPad);
  lens.clear();
  for (std::size_t b = 0; b < rows.size(); ++b) {
    std::copy(rows[b].begin(), rows[b].end(), out.begin() + static_cast<std::ptrdiff_t>(b * width));
    lens.push_back(rows[b].size());
  }
}
}  // namespace detail

// Assembles one batch from the examples at `indices`, in that order.
inline Batch make_batch(const std::vector<SnliExample>& examples, const Vocab& vocab,
                        const std::vector<std::size_t>& indices) {
  Batch b;
  b.size = indices.size();
  std::vector<Ids> prem, hyp;
  for (auto i : indices) {
    const auto& ex = examples.at(i);
    prem.push_back(vocab.encode(ex.premise, false));
    hyp.push_back(vocab.encode(ex.hypothesis, false));
    b.labels.push_back(ex.label);
    b.source_index.push_back(i);
  }
  detail::pad_rows(prem, b.premise, b.premise_width, b.premise_len);
  detail::pad_rows(hyp, b.hypothesis, b.hypothesis_width, b.hypothesis_len);
  return b;
}

// Shuffles once with `seed`, then cuts consecutive batches; the last batch
// may be partial.
inline std::vector<Batch> make_batches(const std::vector<SnliExample>& examples,
                                       const Vocab& vocab, std::size_t batch_size,
                                       std::uint64_t seed) {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  std::vector<std::size_t> order(examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Batch> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    out.push_back(make_batch(
        examples, vocab,
        std::vector<std::size_t>(order.begin() + static_cast<std::ptrdiff_t>(start),
                                 order.begin() + static_cast<std::ptrdiff_t>(end))));
  }
  return out;
}

}  // namespace caae
