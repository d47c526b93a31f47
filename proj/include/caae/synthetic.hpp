#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "caae/data.hpp"

namespace caae {

// Templated NLI corpus with rule-based labels.
//   hypothesis: "a <subject> is <action> ."
//   premise:    "a <adjective> <subject'> is <action'> <place> ."
// entailment    : subject' == subject, action' == action
// contradiction : subject' == subject, action' == opposite(action)
// neutral       : subject' != subject, action' == action
inline std::vector<SnliExample> synthetic_corpus(std::size_t count, std::uint64_t seed) {
  static constexpr std::array<const char*, 4> subjects = {"man", "woman", "dog", "child"};
  static constexpr std::array<std::array<const char*, 2>, 3> actions = {
      {{"sitting", "standing"}, {"sleeping", "running"}, {"eating", "swimming"}}};
  static constexpr std::array<const char*, 4> adjectives = {"tall", "young", "old", "happy"};
  static constexpr std::array<const char*, 4> places = {"outside", "in the park",
                                                        "on the beach", "at home"};
  std::mt19937_64 rng(seed);
  auto pick = [&rng](std::size_t n) {
    return static_cast<std::size_t>(std::uniform_int_distribution<std::size_t>(0, n - 1)(rng));
  };
  std::vector<SnliExample> out;
  for (std::size_t i = 0; i < count; ++i) {
    const auto label = static_cast<Label>(i % kNumLabels);
    const std::size_t subj = pick(subjects.size());
    const std::size_t pair = pick(actions.size());
    const std::size_t side = pick(2);
    const std::string action = actions[pair][side];
    std::size_t psubj = subj;
    std::string paction = action;
    if (label == Label::Contradiction) paction = actions[pair][1 - side];
    if (label == Label::Neutral) psubj = (subj + 1 + pick(subjects.size() - 1)) % subjects.size();
    SnliExample ex;
    ex.label = label;
    ex.hypothesis = tokenize(std::string("a ") + subjects[subj] + " is " + action + " .");
    ex.premise = tokenize(std::string("a ") + adjectives[pick(adjectives.size())] + " " +
                          subjects[psubj] + " is " + paction + " " +
                          places[pick(places.size())] + " .");
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace caae
