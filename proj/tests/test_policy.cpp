#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <random>
#include <sstream>

#include "cotrl/policy.hpp"
#include "oracles.hpp"

using namespace cotrl;
using T = Token;

namespace {

constexpr std::size_t kDim = 8;

std::vector<TrackState> all_states() {
  std::vector<TrackState> s;
  for (std::size_t i = 0; i < kNumTrackStates; ++i) s.push_back(TrackState{std::uint8_t(i)});
  return s;
}

}  // namespace

TEST(Policy, DistributionsAreNormalized) {
  std::mt19937_64 gen(1);
  for (int rep = 0; rep < 20; ++rep) {
    const auto p = oracle::random_params(gen, kDim, 3.0);
    const auto x = oracle::random_features(gen, kDim);
    for (TrackState s : all_states())
      for (double temp : {0.1, 1.0, 7.0}) {
        const auto d = next_token_distribution(p, s, x, temp);
        double sum = 0.0;
        for (double v : d) {
          EXPECT_GE(v, 0.0);
          sum += v;
        }
        EXPECT_NEAR(sum, 1.0, 1e-12);
      }
  }
}

TEST(Policy, TrackingReachesEveryState) {
  std::array<bool, kNumTrackStates> seen{};
  for (TrackState s : all_states())
    for (std::size_t c = 0; c < kVocabSize; ++c) seen[track_next(s, token_from_code(c)).id] = true;
  seen[TrackState::kStart] = true;
  for (std::size_t i = 0; i < kNumTrackStates; ++i) EXPECT_TRUE(seen[i]) << i;
}

TEST(Policy, SampleIsSeeded) {
  std::mt19937_64 gen(2);
  const auto p = oracle::random_params(gen, kDim);
  const auto x = oracle::random_features(gen, kDim);
  Rng a = Rng::stream(5, Stream::kRollout, 1), b = Rng::stream(5, Stream::kRollout, 1);
  EXPECT_EQ(sample(p, x, Regime::kStructured, 1.0, a), sample(p, x, Regime::kStructured, 1.0, b));
}

TEST(Policy, SampleRejectsBadArguments) {
  PolicyParams p(kDim);
  const std::vector<double> x(kDim, 0.0);
  Rng rng(1);
  EXPECT_THROW(sample(p, x, Regime::kDirect, 0.0, rng), std::invalid_argument);
  EXPECT_THROW(sample(p, x, Regime::kDirect, -1.0, rng), std::invalid_argument);
  EXPECT_THROW(sample(p, x, Regime::kDirect, 1.0, rng, 3), std::invalid_argument);
  EXPECT_THROW(greedy_decode(p, x, Regime::kDirect, 3), std::invalid_argument);
}

TEST(Policy, OneHotDirectPolicy) {
  auto p = oracle::direct_path_policy(kDim, 1000.0);
  const std::vector<double> x(kDim, 0.0);
  p.theta(TrackState::kAnswerSlot, T::kOptC) += 1000.0;
  Rng rng(3);
  const auto t = sample(p, x, Regime::kDirect, 1.0, rng);
  const std::vector<Token> want = {T::kAnswerOpen, T::kOptC, T::kAnswerClose, T::kEos};
  EXPECT_EQ(t.tokens, want);
  EXPECT_EQ(logprob(p, want, x).total, 0.0);
  const auto g = grad_logprob(p, want, x);
  EXPECT_NEAR(g.theta(TrackState::kStart, T::kAnswerOpen), 0.0, 1e-300);
  EXPECT_NEAR(g.theta(TrackState::kAnswerSlot, T::kOptC), 0.0, 1e-300);
}

TEST(Policy, UniformFirstTokenFrequencies) {
  const PolicyParams p(kDim);
  const std::vector<double> x(kDim, 0.0);
  constexpr int n = 100000;
  std::array<int, kVocabSize> counts{};
  for (int i = 0; i < n; ++i) {
    Rng rng = Rng::stream(9, Stream::kRollout, std::uint64_t(i));
    ++counts[code(sample(p, x, Regime::kStructured, 1.0, rng, 4).tokens[0])];
  }
  const double q = 1.0 / kVocabSize;
  const double sigma = std::sqrt(n * q * (1 - q));
  for (int c : counts) EXPECT_LE(std::abs(c - n * q), 3.0 * sigma);
}

TEST(Policy, UniformLogprobIsClosedForm) {
  const PolicyParams p(kDim);
  std::mt19937_64 gen(4);
  const auto x = oracle::random_features(gen, kDim);
  for (std::size_t L : {0u, 1u, 5u, 40u}) {
    std::vector<Token> t;
    for (std::size_t i = 0; i < L; ++i) t.push_back(token_from_code(gen() % (kVocabSize - 2)));
    EXPECT_NEAR(logprob(p, t, x).total, double(L) * std::log(1.0 / 19.0), 1e-10);
  }
}

TEST(Policy, UniformGreedyEmitsLowestCode) {
  const PolicyParams p(kDim);
  const std::vector<double> x(kDim, 0.0);
  const auto t = greedy_decode(p, x, Regime::kStructured, 20);
  ASSERT_EQ(t.tokens.size(), 20u);
  for (Token tok : t.tokens) EXPECT_EQ(code(tok), 0u);
  EXPECT_EQ(t, greedy_decode(p, x, Regime::kStructured, 20));
}

TEST(Policy, SampledLogprobsMatchScoring) {
  std::mt19937_64 gen(5);
  for (int rep = 0; rep < 200; ++rep) {
    const auto p = oracle::random_params(gen, kDim, 1.5);
    const auto x = oracle::random_features(gen, kDim);
    Rng rng = Rng::stream(1, Stream::kRollout, std::uint64_t(rep));
    const auto t = sample(p, x, Regime::kUnstructured, 1.0, rng);
    const auto lp = logprob(p, t.tokens, x);
    ASSERT_EQ(lp.per_token.size(), t.logprobs.size());
    EXPECT_NEAR(lp.total, t.total_logprob, 1e-12);
    double sum = 0.0;
    for (std::size_t i = 0; i < lp.per_token.size(); ++i) {
      EXPECT_NEAR(lp.per_token[i], t.logprobs[i], 1e-12);
      EXPECT_LE(t.logprobs[i], 0.0);
      sum += t.logprobs[i];
    }
    EXPECT_NEAR(sum, t.total_logprob, 1e-12);
    EXPECT_TRUE(t.tokens.back() == T::kEos || t.tokens.size() == kDefaultMaxLen);
  }
}

TEST(Policy, LowTemperatureAgreesWithGreedy) {
  std::mt19937_64 gen(6);
  for (int seed = 0; seed < 100; ++seed) {
    auto p = oracle::random_params(gen, kDim, 0.5);
    // Saturate: give every state one clearly dominant token.
    for (TrackState s : all_states()) p.theta(s.id, token_from_code(gen() % kVocabSize)) += 5.0;
    const auto x = oracle::random_features(gen, kDim);
    Rng rng = Rng::stream(std::uint64_t(seed), Stream::kRollout);
    EXPECT_EQ(sample(p, x, Regime::kStructured, 1e-3, rng).tokens,
              greedy_decode(p, x, Regime::kStructured).tokens);
  }
}

TEST(Policy, GradientMatchesFiniteDifferences) {
  std::mt19937_64 gen(7);
  for (int rep = 0; rep < 50; ++rep) {
    const auto p = oracle::random_params(gen, kDim, 1.0);
    const auto x = oracle::random_features(gen, kDim);
    std::vector<Token> t;
    if (rep % 2) {
      Rng rng = Rng::stream(2, Stream::kRollout, std::uint64_t(rep));
      t = sample(p, x, Regime::kStructured, 1.0, rng, 30).tokens;
    } else {
      t = {T::kThinkOpen, T::kCaptionOpen, T::kContent, T::kContent, T::kCaptionClose,
           T::kContent,   T::kThinkClose,  T::kAnswerOpen, option_token(rep % 4),
           T::kAnswerClose, T::kEos};
    }
    const auto g = grad_logprob(p, t, x);
    const double err = oracle::fd_max_rel_err(
        p, g, [&](const PolicyParams& q) { return logprob(q, t, x).total; });
    EXPECT_LT(err, 1e-4) << "instance " << rep;
  }
}

TEST(Policy, AnswerWeightsOnlyMoveAtTheAnswerSlot) {
  std::mt19937_64 gen(8);
  const auto p = oracle::random_params(gen, kDim);
  const auto x = oracle::random_features(gen, kDim);
  const std::vector<Token> no_answer = {T::kThinkOpen, T::kContent, T::kThinkClose, T::kContent,
                                        T::kEos};
  const auto g = grad_logprob(p, no_answer, x);
  for (double v : g.answer_weight_block()) EXPECT_EQ(v, 0.0);
  const std::vector<Token> answered = {T::kAnswerOpen, T::kOptB, T::kAnswerClose, T::kEos};
  const auto g2 = grad_logprob(p, answered, x);
  double norm = 0.0;
  for (double v : g2.answer_weight_block()) norm += v * v;
  EXPECT_GT(norm, 0.0);
}

TEST(Policy, CheckpointRoundTripIsBitExact) {
  std::mt19937_64 gen(9);
  auto p = oracle::random_params(gen, 5, 10.0);
  p.values()[0] = -0.0;
  p.values()[1] = 4.9e-324;
  p.values()[2] = 1.7976931348623157e308;
  std::stringstream ss;
  write_checkpoint(ss, p);
  const auto q = read_checkpoint(ss);
  ASSERT_EQ(q.feature_dim(), 5u);
  for (std::size_t i = 0; i < p.size(); ++i)
    EXPECT_EQ(std::bit_cast<std::uint64_t>(p.values()[i]), std::bit_cast<std::uint64_t>(q.values()[i]));
}

TEST(Policy, CheckpointRejectsGarbage) {
  std::stringstream bad("cotrl-policy 2\n");
  EXPECT_ANY_THROW(read_checkpoint(bad));
  std::stringstream truncated;
  write_checkpoint(truncated, PolicyParams(3));
  const std::string text = truncated.str().substr(0, truncated.str().size() / 2);
  std::stringstream half(text);
  EXPECT_ANY_THROW(read_checkpoint(half));
}

TEST(Policy, InitializationIsSmallAndSeeded) {
  const auto a = PolicyParams::initialized(kDim, 3);
  EXPECT_EQ(a, PolicyParams::initialized(kDim, 3));
  EXPECT_NE(a, PolicyParams::initialized(kDim, 4));
  for (double v : a.theta_block()) EXPECT_LE(std::abs(v), 0.01);
  for (double v : a.answer_weight_block()) EXPECT_EQ(v, 0.0);
}
