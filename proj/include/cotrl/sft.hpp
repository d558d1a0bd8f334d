#pragma once
// Supervised warm start: a synthetic teacher emits verified, grammar-perfect
// traces and the policy is fit to them by maximum likelihood.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cotrl/grammar.hpp"
#include "cotrl/parallel.hpp"
#include "cotrl/policy.hpp"
#include "cotrl/question.hpp"
#include "cotrl/reward.hpp"
#include "cotrl/rng.hpp"
#include "cotrl/schedule.hpp"

namespace cotrl {

/// Filler-run lengths: geometric on {1, 2, ...} with the given mean, clamped
/// at the cap. Traces longer than max_len are redrawn.
struct LengthParams {
  double section_mean = 4.0;
  double body_mean = 8.0;
  std::size_t section_cap = kSectionCountCap;
  std::size_t body_cap = kBodyCountCap;
  std::size_t max_len = kDefaultMaxLen;
};

inline constexpr int kTeacherMaxAttempts = 100;

struct TeacherTrace {
  std::int64_t question_id = 0;
  Regime regime = Regime::kStructured;
  std::vector<Token> tokens;
  bool verified = false;
};

namespace sft_detail {

inline std::size_t draw_run(double mean, std::size_t cap, Rng& rng) {
  std::size_t n = 1;
  if (mean > 1.0) {
    const double p = 1.0 / mean;
    const double u = rng.uniform();
    n = 1 + static_cast<std::size_t>(std::floor(std::log1p(-u) / std::log1p(-p)));
  }
  return std::min(n, cap);
}

inline void append_answer(std::vector<Token>& out, int correct) {
  out.push_back(Token::kAnswerOpen);
  out.push_back(option_token(correct));
  out.push_back(Token::kAnswerClose);
  out.push_back(Token::kEos);
}

}  // namespace sft_detail

inline TeacherTrace teacher_trace(const Question& q, Regime regime, const LengthParams& lengths,
                                  Rng& rng) {
  TeacherTrace t;
  t.question_id = q.id;
  t.regime = regime;
  for (int attempt = 0; attempt < kTeacherMaxAttempts; ++attempt) {
    std::vector<Token> tokens;
    if (regime != Regime::kDirect) {
      tokens.push_back(Token::kThinkOpen);
      if (regime == Regime::kStructured) {
        for (std::size_t s = 0; s < kNumSections; ++s) {
          tokens.push_back(section_open(static_cast<Section>(s)));
          tokens.insert(tokens.end(),
                        sft_detail::draw_run(lengths.section_mean, lengths.section_cap, rng),
                        Token::kContent);
          tokens.push_back(section_close(static_cast<Section>(s)));
        }
      } else {
        tokens.insert(tokens.end(), sft_detail::draw_run(lengths.body_mean, lengths.body_cap, rng),
                      Token::kContent);
      }
      tokens.push_back(Token::kThinkClose);
    }
    sft_detail::append_answer(tokens, q.correct_index);
    if (tokens.size() > lengths.max_len) continue;

    const ParseResult pr = parse(tokens);
    if (format_reward(pr, regime) != 1 || answer_reward(pr, q.correct_index) != 1)
      throw std::logic_error("teacher emitted an unverifiable trace");
    t.tokens = std::move(tokens);
    t.verified = true;
    return t;
  }
  throw std::runtime_error("teacher: no trace within max_len after " +
                           std::to_string(kTeacherMaxAttempts) +
                           " attempts; length caps are misconfigured");
}

/// One teacher trace per question, each from its own stream.
inline std::vector<TeacherTrace> teacher_set(std::span<const Question> questions, Regime regime,
                                             const LengthParams& lengths, std::uint64_t seed) {
  std::vector<TeacherTrace> out;
  out.reserve(questions.size());
  for (const Question& q : questions) {
    Rng rng = Rng::stream(seed, Stream::kTeacher, static_cast<std::uint64_t>(q.id),
                          static_cast<std::uint64_t>(regime));
    out.push_back(teacher_trace(q, regime, lengths, rng));
  }
  return out;
}

struct SftConfig {
  std::size_t epochs = 3;
  std::size_t batch_size = 64;
  /// Adam step size.
  double learning_rate = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  LrSchedule schedule = LrSchedule::kLinear;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 1) throw std::invalid_argument("sft.epochs must be at least 1");
    if (batch_size < 1) throw std::invalid_argument("sft.batch_size must be at least 1");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
      throw std::invalid_argument("sft.learning_rate must be finite and non-negative");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw std::invalid_argument("sft betas must lie in [0, 1)");
    if (!(adam_eps > 0.0)) throw std::invalid_argument("sft.adam_eps must be positive");
  }
};

struct LossAndGradient {
  double loss = 0.0;
  PolicyParams gradient;
};

/// Negative log-likelihood of the teacher sequence at temperature 1.
inline LossAndGradient sft_loss(const PolicyParams& params, const TeacherTrace& teacher,
                                std::span<const double> features) {
  LossAndGradient out{-logprob(params, teacher.tokens, features).total,
                      PolicyParams(params.feature_dim())};
  const std::vector<double> minus_one(teacher.tokens.size(), -1.0);
  accumulate_score(params, teacher.tokens, features, minus_one, out.gradient);
  return out;
}

struct SftEpoch {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  std::size_t steps = 0;
};

struct SftResult {
  PolicyParams params;
  std::vector<SftEpoch> history;
  std::size_t steps = 0;
};

/// Mini-batch Adam on the mean per-trace loss. Each epoch visits
/// the teacher set in a fresh seeded order; the recorded epoch loss is the
/// mean of per-trace losses at the time each batch was evaluated.
inline SftResult sft_train(PolicyParams params, const std::vector<TeacherTrace>& teachers,
                           std::span<const Question> questions, const SftConfig& config,
                           std::size_t workers = 1) {
  config.validate();
  if (teachers.empty()) throw std::invalid_argument("sft: empty teacher set");
  std::unordered_map<std::int64_t, const Question*> by_id;
  for (const Question& q : questions) by_id[q.id] = &q;
  for (const TeacherTrace& t : teachers) {
    if (!t.verified) throw std::invalid_argument("sft: unverified teacher trace");
    if (!by_id.count(t.question_id))
      throw std::invalid_argument("sft: teacher trace for unknown question " +
                                  std::to_string(t.question_id));
  }

  SftResult result;
  std::vector<std::size_t> order(teachers.size());
  std::vector<double> m1(params.values().size(), 0.0), m2(m1.size(), 0.0);
  std::size_t t = 0;
  const std::size_t per_epoch = (teachers.size() + config.batch_size - 1) / config.batch_size;
  const std::size_t total = per_epoch * config.epochs;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng = Rng::stream(config.seed, Stream::kSftShuffle, epoch);
    rng.shuffle(order.begin(), order.end());

    double loss_sum = 0.0;
    std::size_t epoch_steps = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      const std::size_t n = stop - start;
      std::vector<LossAndGradient> parts(n);
      parallel_for(n, workers, [&](std::size_t i) {
        const TeacherTrace& t = teachers[order[start + i]];
        parts[i] = sft_loss(params, t, by_id.at(t.question_id)->features);
      });
      PolicyParams grad(params.feature_dim());
      for (const auto& p : parts) {
        loss_sum += p.loss;
        grad.axpy(1.0 / static_cast<double>(n), p.gradient);
      }
      const double lr = config.learning_rate * schedule_factor(config.schedule, t, total);
      ++t;
      const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(t));
      const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(t));
      auto p = params.values();
      const auto g = std::as_const(grad).values();
      for (std::size_t j = 0; j < p.size(); ++j) {
        m1[j] = config.beta1 * m1[j] + (1.0 - config.beta1) * g[j];
        m2[j] = config.beta2 * m2[j] + (1.0 - config.beta2) * g[j] * g[j];
        p[j] -= lr * (m1[j] / c1) / (std::sqrt(m2[j] / c2) + config.adam_eps);
      }
      ++epoch_steps;
    }
    result.steps += epoch_steps;
    result.history.push_back(
        {epoch, loss_sum / static_cast<double>(teachers.size()), epoch_steps});
  }
  result.params = std::move(params);
  return result;
}

}  // namespace cotrl
