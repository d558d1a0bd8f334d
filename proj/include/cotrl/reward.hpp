#pragma once
// Format and answer rewards.

#include <span>
#include <stdexcept>

#include "cotrl/grammar.hpp"
#include "cotrl/question.hpp"

namespace cotrl {

struct RewardWeights {
  double format_weight = 0.5;
  double answer_weight = 1.0;

  void validate() const {
    if (!(format_weight >= 0.0) || !(answer_weight >= 0.0) ||
        !(format_weight + answer_weight > 0.0))
      throw std::invalid_argument("reward weights must be non-negative with a positive sum");
  }
};

struct RewardBreakdown {
  int format = 0;
  int answer = 0;
  double total = 0.0;
};

inline int format_reward(const ParseResult& parse, Regime regime) {
  return parse.valid_for(regime) ? 1 : 0;
}

/// Credit needs only a unique well-formed answer block, not a valid regime format.
inline int answer_reward(const ParseResult& parse, int correct_index) {
  if (correct_index < 0 || correct_index >= static_cast<int>(kNumOptions))
    throw std::invalid_argument("correct_index out of range");
  return parse.extracted_answer && *parse.extracted_answer == correct_index ? 1 : 0;
}

inline RewardBreakdown score(const ParseResult& parse, int correct_index, Regime regime,
                             const RewardWeights& weights) {
  RewardBreakdown r;
  r.format = format_reward(parse, regime);
  r.answer = answer_reward(parse, correct_index);
  r.total = weights.format_weight * r.format + weights.answer_weight * r.answer;
  return r;
}

inline RewardBreakdown total_reward(std::span<const Token> trace, const Question& question,
                                    Regime regime, const RewardWeights& weights) {
  return score(parse(trace), question.correct_index, regime, weights);
}

}  // namespace cotrl
