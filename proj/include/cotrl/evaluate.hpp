#pragma once
// Multi-trial accuracy evaluation with a per-category breakdown.

#include <array>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cotrl/grammar.hpp"
#include "cotrl/parallel.hpp"
#include "cotrl/policy.hpp"
#include "cotrl/question.hpp"
#include "cotrl/reward.hpp"
#include "cotrl/rng.hpp"

namespace cotrl {

struct EvalConfig {
  std::size_t k = 4;
  double temperature = 1.0;
  /// Greedy decoding instead of sampling; every trial is then identical.
  bool greedy = false;
  std::size_t max_len = kDefaultMaxLen;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
};

struct CategoryStats {
  std::size_t n_questions = 0;
  std::size_t trials = 0;
  std::size_t correct = 0;
  std::size_t format_ok = 0;
  std::size_t length_sum = 0;

  bool empty() const { return trials == 0; }
  double accuracy() const { return empty() ? 0.0 : double(correct) / double(trials); }
  double format_rate() const { return empty() ? 0.0 : double(format_ok) / double(trials); }
  double mean_length() const { return empty() ? 0.0 : double(length_sum) / double(trials); }

  void add(const CategoryStats& o) {
    n_questions += o.n_questions;
    trials += o.trials;
    correct += o.correct;
    format_ok += o.format_ok;
    length_sum += o.length_sum;
  }
};

struct EvalReport {
  std::string model_tag;
  std::size_t k = 0;
  std::array<CategoryStats, kNumCategories> categories{};
  /// Pooled over every (question, trial).
  CategoryStats overall;

  std::size_t n_questions() const { return overall.n_questions; }
  /// Mean of all per-trial correctness indicators.
  double average() const { return overall.accuracy(); }
  double format_rate() const { return overall.format_rate(); }
  double mean_completion_length() const { return overall.mean_length(); }
  /// Unweighted mean over non-empty categories.
  std::optional<double> category_mean() const {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& c : categories)
      if (!c.empty()) {
        s += c.accuracy();
        ++n;
      }
    if (n == 0) return std::nullopt;
    return s / double(n);
  }
};

/// k responses per question; trial (q, i) uses stream (seed, q, i). Never
/// modifies params.
inline EvalReport evaluate(const PolicyParams& params, std::span<const Question> questions,
                           Regime regime, const EvalConfig& cfg, std::string model_tag = "") {
  if (questions.empty()) throw std::invalid_argument("evaluate: no questions");
  if (cfg.k < 1) throw std::invalid_argument("evaluate: k must be at least 1");
  struct Outcome {
    bool correct = false;
    bool format_ok = false;
    std::size_t length = 0;
  };
  const std::size_t n = questions.size();
  std::vector<Outcome> outcomes(n * cfg.k);
  parallel_for(n * cfg.k, cfg.workers, [&](std::size_t idx) {
    const Question& q = questions[idx / cfg.k];
    Trace t;
    if (cfg.greedy) {
      t = greedy_decode(params, q, regime, cfg.max_len);
    } else {
      Rng rng = Rng::stream(cfg.seed, Stream::kEval, static_cast<std::uint64_t>(q.id),
                            idx % cfg.k);
      t = sample(params, q, regime, cfg.temperature, rng, cfg.max_len);
    }
    const ParseResult pr = parse(t.tokens);
    outcomes[idx] = {answer_reward(pr, q.correct_index) == 1, format_reward(pr, regime) == 1,
                     pr.completion_length};
  });

  EvalReport rep;
  rep.model_tag = std::move(model_tag);
  rep.k = cfg.k;
  for (std::size_t i = 0; i < n; ++i) {
    CategoryStats& c = rep.categories[static_cast<std::size_t>(questions[i].category)];
    ++c.n_questions;
    for (std::size_t t = 0; t < cfg.k; ++t) {
      const Outcome& o = outcomes[i * cfg.k + t];
      ++c.trials;
      c.correct += o.correct;
      c.format_ok += o.format_ok;
      c.length_sum += o.length;
    }
  }
  for (const auto& c : rep.categories) rep.overall.add(c);
  return rep;
}

// ---------------------------------------------------------------------------
// Reporting. Table and CSV print the same 4-decimal values.
// ---------------------------------------------------------------------------

namespace eval_detail {
inline std::string fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}
inline std::string cell(const CategoryStats& c) { return c.empty() ? "n/a" : fixed4(c.accuracy()); }
}  // namespace eval_detail

/// Fixed-width table: one row per report, categories as columns, then the
/// pooled average and the unweighted category mean.
inline std::string report_table(std::span<const EvalReport> reports) {
  using eval_detail::cell;
  using eval_detail::fixed4;
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-16s %9s %9s %9s %9s %9s %8s %9s\n", "model", "sound", "music",
                "speech", "average", "cat_mean", "format", "length");
  os << buf;
  for (const EvalReport& r : reports) {
    const auto cm = r.category_mean();
    std::snprintf(buf, sizeof buf, "%-16s %9s %9s %9s %9s %9s %8s %9s\n", r.model_tag.c_str(),
                  cell(r.categories[0]).c_str(), cell(r.categories[1]).c_str(),
                  cell(r.categories[2]).c_str(), fixed4(r.average()).c_str(),
                  cm ? fixed4(*cm).c_str() : "n/a", fixed4(r.format_rate()).c_str(),
                  fixed4(r.mean_completion_length()).c_str());
    os << buf;
  }
  return os.str();
}

inline std::string report_table(const EvalReport& r) {
  return report_table(std::span<const EvalReport>(&r, 1));
}

inline constexpr const char* kEvalCsvHeader =
    "model_tag,category,accuracy,format_rate,mean_completion_length,k,n";

/// Rows: each category, "average" (pooled over trials) and "category_mean".
inline std::string report_csv(std::span<const EvalReport> reports) {
  using eval_detail::fixed4;
  std::ostringstream os;
  os << kEvalCsvHeader << '\n';
  for (const EvalReport& r : reports) {
    for (std::size_t c = 0; c < kNumCategories; ++c) {
      const CategoryStats& s = r.categories[c];
      os << r.model_tag << ',' << kCategoryNames[c] << ',' << eval_detail::cell(s) << ','
         << (s.empty() ? "n/a" : fixed4(s.format_rate())) << ','
         << (s.empty() ? "n/a" : fixed4(s.mean_length())) << ',' << r.k << ',' << s.n_questions
         << '\n';
    }
    os << r.model_tag << ",average," << fixed4(r.average()) << ',' << fixed4(r.format_rate())
       << ',' << fixed4(r.mean_completion_length()) << ',' << r.k << ',' << r.n_questions()
       << '\n';
    const auto cm = r.category_mean();
    os << r.model_tag << ",category_mean," << (cm ? fixed4(*cm) : "n/a") << ','
       << fixed4(r.format_rate()) << ',' << fixed4(r.mean_completion_length()) << ',' << r.k
       << ',' << r.n_questions() << '\n';
  }
  return os.str();
}

inline std::string report_csv(const EvalReport& r) {
  return report_csv(std::span<const EvalReport>(&r, 1));
}

}  // namespace cotrl
