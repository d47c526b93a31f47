#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace caae {

// Clipped n-gram matches and candidate n-gram total for one order.
template <typename Tok>
std::pair<std::size_t, std::size_t> ngram_matches(const std::vector<Tok>& cand,
                                                  const std::vector<Tok>& ref, std::size_t n) {
  if (cand.size() < n) return {0, 0};
  std::map<std::vector<Tok>, std::size_t> ref_counts;
  for (std::size_t i = 0; i + n <= ref.size(); ++i)
    ++ref_counts[std::vector<Tok>(ref.begin() + i, ref.begin() + i + n)];
  std::map<std::vector<Tok>, std::size_t> cand_counts;
  for (std::size_t i = 0; i + n <= cand.size(); ++i)
    ++cand_counts[std::vector<Tok>(cand.begin() + i, cand.begin() + i + n)];
  std::size_t matched = 0;
  for (const auto& [gram, c] : cand_counts) {
    auto it = ref_counts.find(gram);
    if (it != ref_counts.end()) matched += std::min(c, it->second);
  }
  return {matched, cand.size() - n + 1};
}

// Sentence BLEU-4, uniform weights, brevity penalty, smoothing technique 2
// (add one to matches and totals of orders 2..4). Range 0..100.
template <typename Tok>
double smoothed_bleu(const std::vector<Tok>& cand, const std::vector<Tok>& ref) {
  if (cand.empty() || ref.empty()) throw std::invalid_argument("bleu: empty candidate or reference");
  double log_sum = 0;
  for (std::size_t n = 1; n <= 4; ++n) {
    auto [m, t] = ngram_matches(cand, ref, n);
    double p;
    if (n == 1) {
      if (m == 0) return 0.0;
      p = static_cast<double>(m) / static_cast<double>(t);
    } else {
      p = static_cast<double>(m + 1) / static_cast<double>(t + 1);
    }
    log_sum += std::log(p);
  }
  const double c = static_cast<double>(cand.size()), r = static_cast<double>(ref.size());
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return 100.0 * bp * std::exp(log_sum / 4.0);
}

// Symmetrised score 0.5 * (BLEU(a, b) + BLEU(b, a)).
template <typename Tok>
double symmetric_bleu(const std::vector<Tok>& a, const std::vector<Tok>& b) {
  return 0.5 * (smoothed_bleu(a, b) + smoothed_bleu(b, a));
}

}  // namespace caae
