#pragma once
// Group-relative policy optimization: G sampled completions per question,
// rewards normalized within the group, clipped surrogate objective, no value
// network.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "cotrl/curriculum.hpp"
#include "cotrl/grammar.hpp"
#include "cotrl/parallel.hpp"
#include "cotrl/policy.hpp"
#include "cotrl/question.hpp"
#include "cotrl/reward.hpp"
#include "cotrl/rng.hpp"
#include "cotrl/schedule.hpp"

namespace cotrl {

struct GrpoConfig {
  std::size_t group_size = 4;
  std::size_t batch_size = 32;
  /// Base step size; see `schedule` for its decay over training.
  double learning_rate = 500.0;
  LrSchedule schedule = LrSchedule::kLinear;
  double clip_eps = 0.2;
  double kl_coef = 0.0;
  double temperature = 1.0;
  std::size_t epochs = 1;
  double std_eps = 1e-8;
  std::size_t max_len = kDefaultMaxLen;
  std::uint64_t seed = 0;
  /// Rollout threads. Results do not depend on this.
  std::size_t workers = 1;

  void validate() const {
    if (group_size < 2) throw std::invalid_argument("grpo.group_size must be at least 2");
    if (batch_size < 1) throw std::invalid_argument("grpo.batch_size must be at least 1");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
      throw std::invalid_argument("grpo.learning_rate must be finite and non-negative");
    if (!(clip_eps > 0.0 && clip_eps < 1.0))
      throw std::invalid_argument("grpo.clip_eps must lie in (0, 1)");
    if (!(kl_coef >= 0.0)) throw std::invalid_argument("grpo.kl_coef must be non-negative");
    if (!(temperature > 0.0)) throw std::invalid_argument("grpo.temperature must be positive");
    if (epochs < 1) throw std::invalid_argument("grpo.epochs must be at least 1");
    if (!(std_eps > 0.0)) throw std::invalid_argument("grpo.std_eps must be positive");
    if (max_len < 4) throw std::invalid_argument("grpo.max_len must be at least 4");
  }
};

struct Group {
  std::int64_t question_id = 0;
  std::vector<Trace> completions;
  std::vector<RewardBreakdown> breakdowns;
  std::vector<double> rewards;
  std::vector<double> advantages;
};

struct StepMetrics {
  std::size_t step = 0;
  double mean_reward = 0.0;
  double format_rate = 0.0;
  double answer_rate = 0.0;
  double mean_completion_length = 0.0;
  double loss = 0.0;
};

/// (r - mean) / population std; all zeros when the std is below std_eps.
inline std::vector<double> compute_advantages(std::span<const double> rewards, double std_eps) {
  if (rewards.size() < 2) throw std::invalid_argument("group needs at least 2 rewards");
  const double n = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / n);
  std::vector<double> a(rewards.size(), 0.0);
  if (sd < std_eps) return a;
  for (std::size_t i = 0; i < rewards.size(); ++i) a[i] = (rewards[i] - mean) / sd;
  return a;
}

struct LossGrad {
  double loss = 0.0;
  PolicyParams gradient;
};

/// loss = -(1/G) sum_i (1/|o_i|) sum_t min(rho A_i, clip(rho, 1-eps, 1+eps) A_i)
///        [+ kl_coef * (1/G) sum_i (1/|o_i|) sum_t k3(ref || theta)]
/// rho is the per-token ratio against old_params. The KL term needs a
/// reference policy and is skipped entirely when kl_coef is zero.
inline LossGrad surrogate_loss(const PolicyParams& params, const PolicyParams& old_params,
                               const Group& group, std::span<const double> features,
                               const GrpoConfig& config,
                               const PolicyParams* reference = nullptr) {
  if (params.feature_dim() != old_params.feature_dim() ||
      (reference && reference->feature_dim() != params.feature_dim()))
    throw std::invalid_argument("surrogate: parameter shape mismatch");
  if (group.completions.size() != group.advantages.size() || group.completions.empty())
    throw std::invalid_argument("surrogate: group completions and advantages disagree");
  if (config.kl_coef > 0.0 && !reference)
    throw std::invalid_argument("surrogate: kl_coef > 0 needs a reference policy");

  LossGrad out{0.0, PolicyParams(params.feature_dim())};
  const double G = static_cast<double>(group.completions.size());
  const double lo = 1.0 - config.clip_eps;
  const double hi = 1.0 + config.clip_eps;
  std::vector<double> weights;
  for (std::size_t i = 0; i < group.completions.size(); ++i) {
    const auto& tokens = group.completions[i].tokens;
    if (tokens.empty()) continue;
    const double A = group.advantages[i];
    const bool use_kl = config.kl_coef > 0.0;
    if (A == 0.0 && !use_kl) continue;
    const double scale = 1.0 / (G * static_cast<double>(tokens.size()));
    const LogProb now = logprob(params, tokens, features);
    const LogProb old = logprob(old_params, tokens, features);
    weights.assign(tokens.size(), 0.0);
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      const double rho = std::exp(now.per_token[t] - old.per_token[t]);
      const double unclipped = rho * A;
      const double clipped = std::clamp(rho, lo, hi) * A;
      out.loss -= scale * std::min(unclipped, clipped);
      // The clipped branch is flat in theta.
      if (unclipped <= clipped) weights[t] = -scale * rho * A;
    }
    if (use_kl) {
      const LogProb ref = logprob(*reference, tokens, features);
      for (std::size_t t = 0; t < tokens.size(); ++t) {
        const double log_r = ref.per_token[t] - now.per_token[t];
        const double r = std::exp(log_r);
        out.loss += config.kl_coef * scale * (r - log_r - 1.0);
        weights[t] += config.kl_coef * scale * (1.0 - r);
      }
    }
    accumulate_score(params, tokens, features, weights, out.gradient);
  }
  return out;
}

struct StepResult {
  PolicyParams params;
  StepMetrics metrics;
  std::vector<Group> groups;
};

/// One GRPO update: sample G completions per question from the current
/// policy, score them, and take a single gradient step on the mean batch
/// surrogate. Rollout (question q, trial i) at step s draws from stream
/// (seed, s, q, i), so the result is independent of the worker count.
inline StepResult grpo_step(const PolicyParams& params, std::span<const Question> batch,
                            Regime regime, const GrpoConfig& config,
                            const RewardWeights& weights, std::size_t step_index = 0,
                            const PolicyParams* reference = nullptr) {
  config.validate();
  weights.validate();
  if (batch.empty()) throw std::invalid_argument("grpo_step: empty batch");
  const std::size_t B = batch.size();
  const std::size_t G = config.group_size;

  std::vector<Group> groups(B);
  std::vector<Trace> traces(B * G);
  parallel_for(B * G, config.workers, [&](std::size_t k) {
    const Question& q = batch[k / G];
    Rng rng = Rng::stream(config.seed, Stream::kRollout, step_index,
                          static_cast<std::uint64_t>(q.id), k % G);
    traces[k] = sample(params, q, regime, config.temperature, rng, config.max_len);
  });

  StepResult result;
  StepMetrics& m = result.metrics;
  m.step = step_index;
  for (std::size_t b = 0; b < B; ++b) {
    Group& g = groups[b];
    g.question_id = batch[b].id;
    for (std::size_t i = 0; i < G; ++i) {
      Trace& tr = traces[b * G + i];
      const ParseResult pr = parse(tr.tokens);
      const RewardBreakdown rb = score(pr, batch[b].correct_index, regime, weights);
      g.breakdowns.push_back(rb);
      g.rewards.push_back(rb.total);
      m.mean_reward += rb.total;
      m.format_rate += rb.format;
      m.answer_rate += rb.answer;
      m.mean_completion_length += static_cast<double>(pr.completion_length);
      g.completions.push_back(std::move(tr));
    }
    g.advantages = compute_advantages(g.rewards, config.std_eps);
  }
  const double n = static_cast<double>(B * G);
  m.mean_reward /= n;
  m.format_rate /= n;
  m.answer_rate /= n;
  m.mean_completion_length /= n;

  std::vector<LossGrad> parts(B);
  parallel_for(B, config.workers, [&](std::size_t b) {
    parts[b] = surrogate_loss(params, params, groups[b], batch[b].features, config, reference);
  });
  PolicyParams grad(params.feature_dim());
  for (const LossGrad& p : parts) {
    m.loss += p.loss / static_cast<double>(B);
    grad.axpy(1.0 / static_cast<double>(B), p.gradient);
  }
  result.params = params;
  result.params.axpy(-config.learning_rate, grad);
  result.groups = std::move(groups);
  return result;
}

using MetricsSink = std::function<void(const StepMetrics&)>;

struct TrainResult {
  PolicyParams params;
  std::vector<StepMetrics> history;
};

/// Walks the plan in order, batch_size consecutive questions per step, for
/// config.epochs passes.
inline TrainResult grpo_train(PolicyParams params, const CurriculumPlan& plan,
                              std::span<const Question> dataset, Regime regime,
                              const GrpoConfig& config, const RewardWeights& weights,
                              const MetricsSink& sink = {}) {
  config.validate();
  if (plan.ids.empty()) throw std::invalid_argument("grpo_train: empty plan");
  std::unordered_map<std::int64_t, const Question*> by_id;
  for (const Question& q : dataset) by_id[q.id] = &q;
  std::vector<Question> ordered;
  ordered.reserve(plan.ids.size());
  for (std::int64_t id : plan.ids) {
    const auto it = by_id.find(id);
    if (it == by_id.end())
      throw std::invalid_argument("plan references unknown question " + std::to_string(id));
    ordered.push_back(*it->second);
  }

  std::optional<PolicyParams> reference;
  if (config.kl_coef > 0.0) reference = params;

  TrainResult out;
  std::size_t step = 0;
  const std::size_t per_epoch = (ordered.size() + config.batch_size - 1) / config.batch_size;
  const std::size_t total = per_epoch * config.epochs;
  GrpoConfig step_config = config;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t start = 0; start < ordered.size(); start += config.batch_size) {
      const std::size_t stop = std::min(ordered.size(), start + config.batch_size);
      const auto batch = std::span<const Question>(ordered).subspan(start, stop - start);
      step_config.learning_rate =
          config.learning_rate * schedule_factor(config.schedule, step, total);
      StepResult r = grpo_step(params, batch, regime, step_config, weights, step,
                               reference ? &*reference : nullptr);
      params = std::move(r.params);
      if (sink) sink(r.metrics);
      out.history.push_back(r.metrics);
      ++step;
    }
  }
  out.params = std::move(params);
  return out;
}

// ---------------------------------------------------------------------------
// Metrics CSV.
// ---------------------------------------------------------------------------

inline constexpr const char* kMetricsHeader =
    "step,mean_reward,format_rate,answer_rate,mean_completion_length,loss";

inline std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v == 0.0 ? 0.0 : v);
  return buf;
}

inline void write_metrics_row(std::ostream& os, const StepMetrics& m) {
  os << m.step << ',' << format_number(m.mean_reward) << ',' << format_number(m.format_rate)
     << ',' << format_number(m.answer_rate) << ',' << format_number(m.mean_completion_length)
     << ',' << format_number(m.loss) << '\n';
}

inline void write_metrics_csv(std::ostream& os, std::span<const StepMetrics> rows) {
  os << kMetricsHeader << '\n';
  for (const StepMetrics& m : rows) write_metrics_row(os, m);
}

inline std::vector<StepMetrics> read_metrics_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kMetricsHeader)
    throw std::runtime_error("metrics: unexpected header '" + line + "'");
  std::vector<StepMetrics> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::vector<double> v;
    while (std::getline(ls, cell, ',')) v.push_back(std::stod(cell));
    if (v.size() != 6) throw std::runtime_error("metrics: bad row '" + line + "'");
    rows.push_back({static_cast<std::size_t>(v[0]), v[1], v[2], v[3], v[4], v[5]});
  }
  return rows;
}

}  // namespace cotrl
