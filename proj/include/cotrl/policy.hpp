#pragma once
// A compact autoregressive categorical policy over the token vocabulary.
//
// The policy conditions on a tracking state: the unstructured automaton state
// (with an optional THINK block, so a bare answer is representable) augmented
// with the identity of the last section tag seen and a saturating count of
// filler tokens in the current block. Structure is therefore learnable but not
// enforced: every token is sampleable in every state.
//
// Logits at a state are a per-state table row, plus a linear read-out of the
// question features on the option letters at the answer slot, plus a
// per-block bias on CONTENT.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cotrl/grammar.hpp"
#include "cotrl/question.hpp"
#include "cotrl/rng.hpp"

namespace cotrl {

inline constexpr std::size_t kSectionCountCap = 8;
inline constexpr std::size_t kBodyCountCap = 16;

// ---------------------------------------------------------------------------
// Tracking state.
// ---------------------------------------------------------------------------

struct TrackState {
  std::uint8_t id = 0;

  static constexpr std::uint8_t kStart = 0;
  static constexpr std::uint8_t kBodyBase = 1;  // free THINK body, count 0..kBodyCountCap
  static constexpr std::uint8_t kAfterSectionBase = kBodyBase + kBodyCountCap + 1;
  static constexpr std::uint8_t kInSectionBase = kAfterSectionBase + kNumSections;
  static constexpr std::uint8_t kAfterThink =
      kInSectionBase + kNumSections * (kSectionCountCap + 1);
  static constexpr std::uint8_t kAnswerSlot = kAfterThink + 1;
  static constexpr std::uint8_t kAnswerChosen = kAnswerSlot + 1;
  static constexpr std::uint8_t kAnswerClosed = kAnswerChosen + 1;
  static constexpr std::uint8_t kSink = kAnswerClosed + 1;
  static constexpr std::size_t kCount = kSink + 1;

  static constexpr TrackState start() { return {kStart}; }
  static constexpr TrackState sink() { return {kSink}; }
  static constexpr TrackState body(std::size_t count) {
    return {static_cast<std::uint8_t>(kBodyBase + std::min(count, kBodyCountCap))};
  }
  static constexpr TrackState after_section(Section s) {
    return {static_cast<std::uint8_t>(kAfterSectionBase + static_cast<std::size_t>(s))};
  }
  static constexpr TrackState in_section(Section s, std::size_t count) {
    return {static_cast<std::uint8_t>(kInSectionBase +
                                      static_cast<std::size_t>(s) * (kSectionCountCap + 1) +
                                      std::min(count, kSectionCountCap))};
  }

  constexpr bool is_body() const { return id >= kBodyBase && id < kAfterSectionBase; }
  constexpr bool is_after_section() const {
    return id >= kAfterSectionBase && id < kInSectionBase;
  }
  constexpr bool is_in_section() const { return id >= kInSectionBase && id < kAfterThink; }
  constexpr std::size_t count() const {
    if (is_body()) return id - kBodyBase;
    if (is_in_section()) return (id - kInSectionBase) % (kSectionCountCap + 1);
    return 0;
  }
  constexpr Section section() const {
    if (is_after_section()) return static_cast<Section>(id - kAfterSectionBase);
    return static_cast<Section>((id - kInSectionBase) / (kSectionCountCap + 1));
  }

  friend constexpr bool operator==(TrackState, TrackState) = default;
};

static_assert(TrackState::kCount <= 64);

inline constexpr std::size_t kNumTrackStates = TrackState::kCount;
/// CONTENT-bias groups: the free THINK body, then one per section.
inline constexpr std::size_t kNumLengthGroups = 1 + kNumSections;

constexpr std::optional<std::size_t> length_group(TrackState s) {
  if (s.is_body()) return 0;
  if (s.is_in_section()) return 1 + static_cast<std::size_t>(s.section());
  return std::nullopt;
}

constexpr TrackState track_next(TrackState s, Token t) {
  using S = TrackState;
  if (s.id == S::kStart) {
    if (t == Token::kThinkOpen) return S::body(0);
    if (t == Token::kAnswerOpen) return {S::kAnswerSlot};
    return S::sink();
  }
  if (s.is_body() || s.is_after_section() || s.is_in_section()) {
    if (t == Token::kThinkClose) return {S::kAfterThink};
    if (is_section_open(t)) return S::in_section(section_of(t), 0);
    if (s.is_in_section() && is_section_close(t) && section_of(t) == s.section())
      return S::after_section(s.section());
    if (t == Token::kContent || is_section_close(t)) {
      if (s.is_body()) return S::body(s.count() + 1);
      if (s.is_in_section()) return S::in_section(s.section(), s.count() + 1);
      return s;
    }
    return S::sink();
  }
  switch (s.id) {
    case S::kAfterThink: return t == Token::kAnswerOpen ? TrackState{S::kAnswerSlot} : S::sink();
    case S::kAnswerSlot: return is_option(t) ? TrackState{S::kAnswerChosen} : S::sink();
    case S::kAnswerChosen:
      return t == Token::kAnswerClose ? TrackState{S::kAnswerClosed} : S::sink();
    default: return S::sink();
  }
}

// ---------------------------------------------------------------------------
// Parameters.
// ---------------------------------------------------------------------------

/// The full differentiable parameter set; also used as the gradient type.
/// Flat layout: state/token logit table, then the option-by-feature answer
/// weights, then the CONTENT biases.
class PolicyParams {
 public:
  static constexpr std::size_t kThetaSize = kNumTrackStates * kVocabSize;

  PolicyParams() : PolicyParams(0) {}
  explicit PolicyParams(std::size_t feature_dim)
      : dim_(feature_dim), values_(kThetaSize + kNumOptions * feature_dim + kNumLengthGroups) {}

  /// theta ~ U(-0.01, 0.01); answer weights and biases zero.
  static PolicyParams initialized(std::size_t feature_dim, std::uint64_t seed) {
    PolicyParams p(feature_dim);
    Rng rng = Rng::stream(seed, Stream::kInit);
    for (std::size_t i = 0; i < kThetaSize; ++i) p.values_[i] = rng.uniform(-0.01, 0.01);
    return p;
  }

  std::size_t feature_dim() const { return dim_; }
  std::size_t size() const { return values_.size(); }

  double& theta(std::size_t state, Token t) { return values_[state * kVocabSize + code(t)]; }
  double theta(std::size_t state, Token t) const { return values_[state * kVocabSize + code(t)]; }
  double& answer_weight(std::size_t option, std::size_t j) {
    return values_[kThetaSize + option * dim_ + j];
  }
  double answer_weight(std::size_t option, std::size_t j) const {
    return values_[kThetaSize + option * dim_ + j];
  }
  double& length_bias(std::size_t group) {
    return values_[kThetaSize + kNumOptions * dim_ + group];
  }
  double length_bias(std::size_t group) const {
    return values_[kThetaSize + kNumOptions * dim_ + group];
  }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::span<const double> theta_block() const {
    return std::span<const double>(values_).first(kThetaSize);
  }
  std::span<const double> answer_weight_block() const {
    return std::span<const double>(values_).subspan(kThetaSize, kNumOptions * dim_);
  }
  std::span<const double> length_bias_block() const {
    return std::span<const double>(values_).subspan(kThetaSize + kNumOptions * dim_);
  }

  /// this += a * other
  void axpy(double a, const PolicyParams& other) {
    if (other.dim_ != dim_) throw std::invalid_argument("parameter shape mismatch");
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += a * other.values_[i];
  }

  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const PolicyParams&, const PolicyParams&) = default;

 private:
  std::size_t dim_;
  std::vector<double> values_;
};

// ---------------------------------------------------------------------------
// Distributions.
// ---------------------------------------------------------------------------

using Logits = std::array<double, kVocabSize>;

inline Logits logits_at(const PolicyParams& params, TrackState state,
                        std::span<const double> features) {
  Logits z{};
  for (std::size_t k = 0; k < kVocabSize; ++k) z[k] = params.theta(state.id, token_from_code(k));
  if (state.id == TrackState::kAnswerSlot) {
    const std::size_t d = std::min(features.size(), params.feature_dim());
    for (std::size_t o = 0; o < kNumOptions; ++o) {
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) acc += params.answer_weight(o, j) * features[j];
      z[code(option_token(static_cast<int>(o)))] += acc;
    }
  }
  if (auto g = length_group(state)) z[code(Token::kContent)] += params.length_bias(*g);
  return z;
}

inline double log_sum_exp(const Logits& z) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  return m + std::log(s);
}

inline Logits softmax(const Logits& z) {
  const double lse = log_sum_exp(z);
  Logits p{};
  for (std::size_t k = 0; k < kVocabSize; ++k) p[k] = std::exp(z[k] - lse);
  return p;
}

inline Logits next_token_distribution(const PolicyParams& params, TrackState state,
                                      std::span<const double> features,
                                      double temperature = 1.0) {
  Logits z = logits_at(params, state, features);
  for (double& v : z) v /= temperature;
  return softmax(z);
}

// ---------------------------------------------------------------------------
// Traces.
// ---------------------------------------------------------------------------

struct Trace {
  std::vector<Token> tokens;
  /// Log-probabilities under the sampling policy, at the sampling temperature.
  std::vector<double> logprobs;
  double total_logprob = 0.0;
  Regime regime_prompt = Regime::kDirect;

  friend bool operator==(const Trace&, const Trace&) = default;
};

inline constexpr std::size_t kDefaultMaxLen = 64;

/// Ancestral sampling, not grammar-constrained. Stops after EOS or at max_len.
inline Trace sample(const PolicyParams& params, std::span<const double> features,
                    Regime regime_prompt, double temperature, Rng& rng,
                    std::size_t max_len = kDefaultMaxLen) {
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
  if (max_len < 4) throw std::invalid_argument("max_len must be at least 4");
  Trace trace;
  trace.regime_prompt = regime_prompt;
  trace.tokens.reserve(max_len);
  trace.logprobs.reserve(max_len);
  TrackState state = TrackState::start();
  while (trace.tokens.size() < max_len) {
    Logits z = logits_at(params, state, features);
    for (double& v : z) v /= temperature;
    const double lse = log_sum_exp(z);
    const double u = rng.uniform();
    double cum = 0.0;
    std::size_t pick = kVocabSize;
    std::size_t last_positive = 0;
    for (std::size_t k = 0; k < kVocabSize; ++k) {
      const double p = std::exp(z[k] - lse);
      if (p > 0.0) last_positive = k;
      cum += p;
      if (u < cum && p > 0.0) {
        pick = k;
        break;
      }
    }
    if (pick == kVocabSize) pick = last_positive;
    const Token tok = token_from_code(pick);
    const double lp = z[pick] - lse;
    trace.tokens.push_back(tok);
    trace.logprobs.push_back(lp);
    trace.total_logprob += lp;
    if (tok == Token::kEos) break;
    state = track_next(state, tok);
  }
  return trace;
}

inline Trace sample(const PolicyParams& params, const Question& q, Regime regime_prompt,
                    double temperature, Rng& rng, std::size_t max_len = kDefaultMaxLen) {
  return sample(params, q.features, regime_prompt, temperature, rng, max_len);
}

/// Argmax decoding; ties go to the lowest token code.
inline Trace greedy_decode(const PolicyParams& params, std::span<const double> features,
                           Regime regime_prompt, std::size_t max_len = kDefaultMaxLen) {
  if (max_len < 4) throw std::invalid_argument("max_len must be at least 4");
  Trace trace;
  trace.regime_prompt = regime_prompt;
  TrackState state = TrackState::start();
  while (trace.tokens.size() < max_len) {
    const Logits z = logits_at(params, state, features);
    std::size_t best = 0;
    for (std::size_t k = 1; k < kVocabSize; ++k)
      if (z[k] > z[best]) best = k;
    const double lp = z[best] - log_sum_exp(z);
    const Token tok = token_from_code(best);
    trace.tokens.push_back(tok);
    trace.logprobs.push_back(lp);
    trace.total_logprob += lp;
    if (tok == Token::kEos) break;
    state = track_next(state, tok);
  }
  return trace;
}

inline Trace greedy_decode(const PolicyParams& params, const Question& q, Regime regime_prompt,
                           std::size_t max_len = kDefaultMaxLen) {
  return greedy_decode(params, q.features, regime_prompt, max_len);
}

struct LogProb {
  double total = 0.0;
  std::vector<double> per_token;
};

/// Exact log-probability at temperature 1. Tokens after an EOS are scored
/// from the sink state.
inline LogProb logprob(const PolicyParams& params, std::span<const Token> tokens,
                       std::span<const double> features) {
  LogProb out;
  out.per_token.reserve(tokens.size());
  TrackState state = TrackState::start();
  for (Token tok : tokens) {
    const Logits z = logits_at(params, state, features);
    const double lp = z[code(tok)] - log_sum_exp(z);
    out.per_token.push_back(lp);
    out.total += lp;
    state = tok == Token::kEos ? TrackState::sink() : track_next(state, tok);
  }
  return out;
}

/// grad += sum_t weight[t] * d log pi(token_t) / d params.
/// An empty weight span means weight 1 for every token.
inline void accumulate_score(const PolicyParams& params, std::span<const Token> tokens,
                             std::span<const double> features, std::span<const double> weights,
                             PolicyParams& grad) {
  if (grad.feature_dim() != params.feature_dim())
    throw std::invalid_argument("gradient shape mismatch");
  const std::size_t d = std::min(features.size(), params.feature_dim());
  TrackState state = TrackState::start();
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const double w = weights.empty() ? 1.0 : weights[t];
    const Token tok = tokens[t];
    if (w != 0.0) {
      const Logits p = softmax(logits_at(params, state, features));
      for (std::size_t k = 0; k < kVocabSize; ++k) {
        const double g = w * ((k == code(tok) ? 1.0 : 0.0) - p[k]);
        grad.theta(state.id, token_from_code(k)) += g;
        if (state.id == TrackState::kAnswerSlot && is_option(token_from_code(k))) {
          const auto o = static_cast<std::size_t>(option_index(token_from_code(k)));
          for (std::size_t j = 0; j < d; ++j) grad.answer_weight(o, j) += g * features[j];
        }
      }
      if (auto g = length_group(state))
        grad.length_bias(*g) +=
            w * ((tok == Token::kContent ? 1.0 : 0.0) - p[code(Token::kContent)]);
    }
    state = tok == Token::kEos ? TrackState::sink() : track_next(state, tok);
  }
}

inline PolicyParams grad_logprob(const PolicyParams& params, std::span<const Token> tokens,
                                 std::span<const double> features) {
  PolicyParams grad(params.feature_dim());
  accumulate_score(params, tokens, features, {}, grad);
  return grad;
}

// ---------------------------------------------------------------------------
// Checkpoints.
//
// Text format, one named array per block, values as C99 hex floats so that
// a save/load round trip is bit-exact:
//
//   cotrl-policy 1
//   feature_dim <d>
//   array theta 63 19
//   <row values separated by spaces, one row per line>
//   array answer_weights 4 <d>
//   ...
//   array length_bias 1 5
//   ...
//   end
// ---------------------------------------------------------------------------

namespace policy_detail {

inline void write_array(std::ostream& os, const char* name, std::size_t rows, std::size_t cols,
                        std::span<const double> v) {
  os << "array " << name << ' ' << rows << ' ' << cols << '\n';
  char buf[64];
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      std::snprintf(buf, sizeof buf, "%a", v[r * cols + c]);
      if (c) os << ' ';
      os << buf;
    }
    os << '\n';
  }
}

inline void read_array(std::istream& is, const std::string& name, std::size_t rows,
                       std::size_t cols, std::span<double> out) {
  std::string kw, got_name;
  std::size_t r = 0, c = 0;
  if (!(is >> kw >> got_name >> r >> c) || kw != "array" || got_name != name)
    throw std::runtime_error("checkpoint: expected array '" + name + "'");
  if (r != rows || c != cols)
    throw std::runtime_error("checkpoint: array '" + name + "' has shape " + std::to_string(r) +
                             "x" + std::to_string(c) + ", expected " + std::to_string(rows) +
                             "x" + std::to_string(cols));
  std::string word;
  for (double& v : out) {
    if (!(is >> word)) throw std::runtime_error("checkpoint: truncated array '" + name + "'");
    char* end = nullptr;
    v = std::strtod(word.c_str(), &end);
    if (end == word.c_str() || *end != '\0')
      throw std::runtime_error("checkpoint: bad value '" + word + "' in '" + name + "'");
  }
}

}  // namespace policy_detail

inline void write_checkpoint(std::ostream& os, const PolicyParams& p) {
  os << "cotrl-policy 1\n";
  os << "feature_dim " << p.feature_dim() << '\n';
  policy_detail::write_array(os, "theta", kNumTrackStates, kVocabSize, p.theta_block());
  policy_detail::write_array(os, "answer_weights", kNumOptions, p.feature_dim(),
                             p.answer_weight_block());
  policy_detail::write_array(os, "length_bias", 1, kNumLengthGroups, p.length_bias_block());
  os << "end\n";
}

inline PolicyParams read_checkpoint(std::istream& is) {
  std::string magic, kw;
  int version = 0;
  std::size_t dim = 0;
  if (!(is >> magic >> version) || magic != "cotrl-policy" || version != 1)
    throw std::runtime_error("checkpoint: not a cotrl-policy v1 file");
  if (!(is >> kw >> dim) || kw != "feature_dim")
    throw std::runtime_error("checkpoint: missing feature_dim");
  PolicyParams p(dim);
  auto all = p.values();
  policy_detail::read_array(is, "theta", kNumTrackStates, kVocabSize,
                            all.first(PolicyParams::kThetaSize));
  policy_detail::read_array(is, "answer_weights", kNumOptions, dim,
                            all.subspan(PolicyParams::kThetaSize, kNumOptions * dim));
  policy_detail::read_array(is, "length_bias", 1, kNumLengthGroups,
                            all.subspan(PolicyParams::kThetaSize + kNumOptions * dim));
  if (!(is >> kw) || kw != "end") throw std::runtime_error("checkpoint: missing end marker");
  return p;
}

inline void save_checkpoint(const std::string& path, const PolicyParams& p) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  write_checkpoint(os, p);
  if (!os) throw std::runtime_error("write failed: " + path);
}

inline PolicyParams load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path);
  return read_checkpoint(is);
}

}  // namespace cotrl
