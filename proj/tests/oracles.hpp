// Test-side oracles shared by the unit tests and the acceptance binary.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "cotrl/policy.hpp"

namespace oracle {

inline cotrl::PolicyParams random_params(std::mt19937_64& gen, std::size_t dim, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  cotrl::PolicyParams p(dim);
  for (double& v : p.values()) v = n(gen);
  return p;
}

inline std::vector<double> random_features(std::mt19937_64& gen, std::size_t dim) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> x(dim);
  for (double& v : x) v = n(gen);
  return x;
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-4});
}

/// Largest relative error between `grad` and central differences of f.
inline double fd_max_rel_err(const cotrl::PolicyParams& at, const cotrl::PolicyParams& grad,
                             const std::function<double(const cotrl::PolicyParams&)>& f,
                             double h = 1e-5) {
  double worst = 0.0;
  cotrl::PolicyParams p = at;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double x = p.values()[i];
    p.values()[i] = x + h;
    const double up = f(p);
    p.values()[i] = x - h;
    const double down = f(p);
    p.values()[i] = x;
    worst = std::max(worst, rel_err(grad.values()[i], (up - down) / (2.0 * h)));
  }
  return worst;
}

/// Near-one-hot policy that emits <ANSWER> option </ANSWER> EOS, choosing the
/// option by the answer weights only.
inline cotrl::PolicyParams direct_path_policy(std::size_t dim, double margin) {
  using cotrl::Token;
  using cotrl::TrackState;
  cotrl::PolicyParams p(dim);
  p.theta(TrackState::kStart, Token::kAnswerOpen) = margin;
  for (int o = 0; o < 4; ++o) p.theta(TrackState::kAnswerSlot, cotrl::option_token(o)) = margin;
  p.theta(TrackState::kAnswerChosen, Token::kAnswerClose) = margin;
  p.theta(TrackState::kAnswerClosed, Token::kEos) = margin;
  return p;
}

}  // namespace oracle

namespace oracle {

/// Direct-path policy whose answer is correct with probability exactly p
/// (up to exp(-1000) leakage) on questions whose features are e_correct.
inline cotrl::PolicyParams calibrated_policy(double p, std::size_t dim) {
  auto params = direct_path_policy(dim, 1000.0);
  const double c = std::log(3.0 * p / (1.0 - p));
  for (std::size_t o = 0; o < 4; ++o) params.answer_weight(o, o) = c;
  return params;
}

inline cotrl::Question indicator_question(std::int64_t id, int correct, std::size_t dim) {
  cotrl::Question q;
  q.id = id;
  q.correct_index = correct;
  q.category = static_cast<cotrl::Category>(id % 3);
  q.features.assign(dim, 0.0);
  q.features[static_cast<std::size_t>(correct)] = 1.0;
  return q;
}

}  // namespace oracle
