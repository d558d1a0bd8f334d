#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "cotrl/grpo.hpp"
#include "cotrl/synth.hpp"
#include "oracles.hpp"

using namespace cotrl;
using T = Token;

namespace {

constexpr std::size_t kDim = 8;

// Straight transcription of the clipped objective, for comparison.
double oracle_loss(const PolicyParams& now, const PolicyParams& old, const Group& g,
                   std::span<const double> x, double eps, double kl, const PolicyParams* ref) {
  double total = 0.0;
  for (std::size_t i = 0; i < g.completions.size(); ++i) {
    const auto& tok = g.completions[i].tokens;
    const auto a = logprob(now, tok, x).per_token;
    const auto b = logprob(old, tok, x).per_token;
    const auto r = ref ? logprob(*ref, tok, x).per_token : std::vector<double>{};
    double s = 0.0;
    for (std::size_t t = 0; t < tok.size(); ++t) {
      const double rho = std::exp(a[t] - b[t]);
      const double A = g.advantages[i];
      s += std::min(rho * A, std::clamp(rho, 1 - eps, 1 + eps) * A);
      if (kl > 0) {
        const double lr = r[t] - a[t];
        s -= kl * (std::exp(lr) - lr - 1.0);
      }
    }
    total += s / double(tok.size());
  }
  return -total / double(g.completions.size());
}

Group random_group(std::mt19937_64& gen, const PolicyParams& old, std::span<const double> x,
                   std::size_t G) {
  Group g;
  std::normal_distribution<double> n;
  for (std::size_t i = 0; i < G; ++i) {
    Rng rng = Rng::stream(gen(), Stream::kRollout);
    g.completions.push_back(sample(old, x, Regime::kStructured, 1.0, rng, 24));
    g.rewards.push_back(n(gen));
  }
  g.advantages = compute_advantages(g.rewards, 1e-8);
  return g;
}

std::vector<Question> small_dataset(std::size_t n, std::uint64_t seed) {
  DatasetConfig dc;
  dc.n = n;
  dc.seed = seed;
  return gen_dataset(dc);
}

}  // namespace

TEST(Grpo, AdvantageExamples) {
  const std::vector<double> same = {1, 1, 1, 1};
  for (double a : compute_advantages(same, 1e-8)) EXPECT_EQ(a, 0.0);
  const auto one = compute_advantages(std::vector<double>{1, 0, 0, 0}, 1e-8);
  EXPECT_NEAR(one[0], 1.7321, 1e-3);
  for (int i = 1; i < 4; ++i) EXPECT_NEAR(one[i], -0.5774, 1e-3);
  const auto two = compute_advantages(std::vector<double>{1.5, 0.5, 0.5, 1.5}, 1e-8);
  const std::vector<double> want = {1, -1, -1, 1};
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(two[i], want[i], 1e-12);
  EXPECT_THROW(compute_advantages(std::vector<double>{1.0}, 1e-8), std::invalid_argument);
}

TEST(Grpo, AdvantagesHaveZeroMean) {
  std::mt19937_64 gen(1);
  std::uniform_int_distribution<int> size(2, 16);
  std::normal_distribution<double> n(0.0, 3.0);
  for (int rep = 0; rep < 10000; ++rep) {
    std::vector<double> r(size(gen));
    for (double& v : r) v = n(gen);
    double mean = 0.0;
    for (double a : compute_advantages(r, 1e-8)) mean += a;
    EXPECT_LT(std::abs(mean / double(r.size())), 1e-9);
  }
}

TEST(Grpo, ClipExample) {
  const std::vector<double> x(kDim, 0.0);
  const PolicyParams old(kDim);
  PolicyParams now(kDim);
  // p_old(EOS) = 1/19; this logit makes p_now(EOS) = 2/19, so rho = 2.
  now.theta(TrackState::kStart, T::kEos) = std::log(36.0 / 17.0);
  Group g;
  g.completions.push_back(Trace{{T::kEos}, {}, 0.0, Regime::kDirect});
  g.advantages = {1.0};
  GrpoConfig cfg;
  const auto r = surrogate_loss(now, old, g, x, cfg);
  EXPECT_NEAR(r.loss, -1.2, 1e-12);
  for (double v : r.gradient.values()) EXPECT_EQ(v, 0.0);
  // Negative advantage keeps the unclipped branch: -min(-2, -1.2) = 2.
  g.advantages = {-1.0};
  const auto s = surrogate_loss(now, old, g, x, cfg);
  EXPECT_NEAR(s.loss, 2.0, 1e-12);
  EXPECT_NE(s.gradient.theta(TrackState::kStart, T::kEos), 0.0);
}

TEST(Grpo, ZeroAdvantageIdentity) {
  std::mt19937_64 gen(2);
  const auto p = oracle::random_params(gen, kDim);
  const auto x = oracle::random_features(gen, kDim);
  Group g = random_group(gen, p, x, 4);
  g.advantages.assign(4, 0.0);
  const auto r = surrogate_loss(p, p, g, x, GrpoConfig{});
  EXPECT_EQ(r.loss, 0.0);
  for (double v : r.gradient.values()) EXPECT_EQ(v, 0.0);
}

TEST(Grpo, SurrogateMatchesOracleAndFiniteDifferences) {
  std::mt19937_64 gen(3);
  for (int rep = 0; rep < 50; ++rep) {
    const auto old = oracle::random_params(gen, kDim);
    auto now = old;
    std::normal_distribution<double> jitter(0.0, rep % 2 ? 0.05 : 0.4);
    for (double& v : now.values()) v += jitter(gen);
    const auto x = oracle::random_features(gen, kDim);
    const Group g = random_group(gen, old, x, 4);
    GrpoConfig cfg;
    const PolicyParams* ref = nullptr;
    if (rep % 5 == 0) {
      cfg.kl_coef = 0.3;
      ref = &old;
    }
    const auto r = surrogate_loss(now, old, g, x, cfg, ref);
    const auto f = [&](const PolicyParams& q) {
      return oracle_loss(q, old, g, x, cfg.clip_eps, cfg.kl_coef, ref);
    };
    EXPECT_NEAR(r.loss, f(now), 1e-12);
    EXPECT_LT(oracle::fd_max_rel_err(now, r.gradient, f), 1e-4) << "instance " << rep;
  }
}

TEST(Grpo, ZeroKlCoefficientIgnoresReference) {
  std::mt19937_64 gen(4);
  const auto p = oracle::random_params(gen, kDim);
  auto old = p;
  for (double& v : old.values()) v += 0.1;
  const auto x = oracle::random_features(gen, kDim);
  const Group g = random_group(gen, old, x, 4);
  const auto ref = oracle::random_params(gen, kDim);
  const auto a = surrogate_loss(p, old, g, x, GrpoConfig{});
  const auto b = surrogate_loss(p, old, g, x, GrpoConfig{}, &ref);
  EXPECT_EQ(std::bit_cast<std::uint64_t>(a.loss), std::bit_cast<std::uint64_t>(b.loss));
  EXPECT_EQ(a.gradient, b.gradient);
}

TEST(Grpo, SurrogateRejectsBadShapes) {
  const std::vector<double> x(kDim, 0.0);
  Group g;
  g.completions.push_back(Trace{{T::kEos}, {}, 0.0, Regime::kDirect});
  g.advantages = {1.0, 2.0};
  EXPECT_THROW(surrogate_loss(PolicyParams(kDim), PolicyParams(kDim), g, x, GrpoConfig{}),
               std::invalid_argument);
  g.advantages = {1.0};
  EXPECT_THROW(surrogate_loss(PolicyParams(kDim), PolicyParams(3), g, x, GrpoConfig{}),
               std::invalid_argument);
  GrpoConfig kl;
  kl.kl_coef = 0.1;
  EXPECT_THROW(surrogate_loss(PolicyParams(kDim), PolicyParams(kDim), g, x, kl),
               std::invalid_argument);
}

TEST(Grpo, ConfigValidation) {
  GrpoConfig c;
  EXPECT_NO_THROW(c.validate());
  c.group_size = 1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.clip_eps = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.kl_coef = -1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.learning_rate = -1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Grpo, IdenticalRewardsLeaveParamsUnchanged) {
  // A one-hot policy gives every completion in a group the same reward.
  auto p = oracle::direct_path_policy(kDim, 1000.0);
  p.theta(TrackState::kAnswerSlot, T::kOptA) += 1000.0;
  const auto qs = small_dataset(8, 1);
  GrpoConfig cfg;
  const auto r = grpo_step(p, qs, Regime::kDirect, cfg, RewardWeights{});
  EXPECT_EQ(r.params, p);
  for (const Group& g : r.groups)
    for (double a : g.advantages) EXPECT_EQ(a, 0.0);
}

TEST(Grpo, StepIsIndependentOfWorkerCount) {
  const auto qs = small_dataset(16, 2);
  const auto p = oracle::direct_path_policy(kDim, 3.0);
  GrpoConfig cfg;
  cfg.seed = 9;
  const auto a = grpo_step(p, qs, Regime::kDirect, cfg, RewardWeights{}, 3);
  cfg.workers = 4;
  const auto b = grpo_step(p, qs, Regime::kDirect, cfg, RewardWeights{}, 3);
  EXPECT_EQ(a.params, b.params);
  EXPECT_EQ(a.metrics.loss, b.metrics.loss);
  EXPECT_NE(a.params, p);
}

TEST(Grpo, StepMetricsAreBounded) {
  const auto qs = small_dataset(16, 3);
  GrpoConfig cfg;
  const auto r = grpo_step(PolicyParams::initialized(kDim, 1), qs, Regime::kStructured, cfg,
                           RewardWeights{});
  EXPECT_GE(r.metrics.format_rate, 0.0);
  EXPECT_LE(r.metrics.format_rate, 1.0);
  EXPECT_GE(r.metrics.answer_rate, 0.0);
  EXPECT_LE(r.metrics.answer_rate, 1.0);
  EXPECT_GE(r.metrics.mean_completion_length, 0.0);
  EXPECT_LE(r.metrics.mean_completion_length, double(cfg.max_len));
  for (const Group& g : r.groups) EXPECT_EQ(g.completions.size(), 4u);
}

TEST(Grpo, TrainStepCountAndZeroRate) {
  const auto qs = small_dataset(64, 4);
  const CurriculumPlan plan = shuffled_plan(qs, 1);
  GrpoConfig cfg;
  cfg.learning_rate = 0.0;
  std::size_t seen = 0;
  const auto p = PolicyParams::initialized(kDim, 5);
  const auto r = grpo_train(p, plan, qs, Regime::kStructured, cfg, RewardWeights{},
                            [&](const StepMetrics&) { ++seen; });
  EXPECT_EQ(r.history.size(), 2u);
  EXPECT_EQ(seen, 2u);
  EXPECT_EQ(r.params, p);
  cfg.epochs = 2;
  cfg.batch_size = 30;
  EXPECT_EQ(grpo_train(p, plan, qs, Regime::kStructured, cfg, RewardWeights{}).history.size(), 6u);
}

TEST(Grpo, TrainRejectsBadPlans) {
  const auto qs = small_dataset(8, 5);
  const auto p = PolicyParams::initialized(kDim, 5);
  EXPECT_THROW(grpo_train(p, CurriculumPlan{}, qs, Regime::kDirect, GrpoConfig{}, RewardWeights{}),
               std::invalid_argument);
  CurriculumPlan bad;
  bad.ids = {999999};
  EXPECT_THROW(grpo_train(p, bad, qs, Regime::kDirect, GrpoConfig{}, RewardWeights{}),
               std::invalid_argument);
}

TEST(Grpo, MetricsCsvRoundTrip) {
  std::vector<StepMetrics> rows = {{0, 0.5, 0.25, 0.75, 12.5, -0.125}, {1, 1.0, 1.0, 0.0, 4, 0.0}};
  std::stringstream ss;
  write_metrics_csv(ss, rows);
  EXPECT_EQ(ss.str().substr(0, ss.str().find('\n')), kMetricsHeader);
  const auto back = read_metrics_csv(ss);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].answer_rate, 0.75);
  EXPECT_EQ(back[1].mean_completion_length, 4.0);
}
