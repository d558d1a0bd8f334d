#pragma once
// Pass-rate estimation, zero-pass filtering, and training-order plans.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
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

inline constexpr std::size_t kDefaultPassAttempts = 16;

struct PassRate {
  std::int64_t question_id = 0;
  std::size_t attempts = 0;
  std::size_t successes = 0;

  double rate() const {
    return attempts == 0 ? 0.0 : static_cast<double>(successes) / static_cast<double>(attempts);
  }
};

using RateTable = std::map<std::int64_t, double>;

/// Independent samples under the direct prompt; a success is a correct
/// extracted answer. Attempt i draws from stream (seed, question id, i).
inline PassRate estimate_pass_rate(const PolicyParams& params, const Question& q,
                                   std::size_t attempts, double temperature, std::uint64_t seed,
                                   std::size_t max_len = kDefaultMaxLen) {
  if (attempts < 1) throw std::invalid_argument("attempts must be at least 1");
  PassRate r{q.id, attempts, 0};
  for (std::size_t i = 0; i < attempts; ++i) {
    Rng rng = Rng::stream(seed, Stream::kPassRate, static_cast<std::uint64_t>(q.id), i);
    const Trace t = sample(params, q, Regime::kDirect, temperature, rng, max_len);
    r.successes += static_cast<std::size_t>(answer_reward(parse(t.tokens), q.correct_index));
  }
  return r;
}

inline std::vector<PassRate> estimate_pass_rates(const PolicyParams& params,
                                                 std::span<const Question> questions,
                                                 std::size_t attempts, double temperature,
                                                 std::uint64_t seed,
                                                 std::size_t max_len = kDefaultMaxLen,
                                                 std::size_t workers = 1) {
  std::vector<PassRate> out(questions.size());
  parallel_for(questions.size(), workers, [&](std::size_t i) {
    out[i] = estimate_pass_rate(params, questions[i], attempts, temperature, seed, max_len);
  });
  return out;
}

inline RateTable to_rate_table(std::span<const PassRate> rates) {
  RateTable t;
  for (const PassRate& r : rates) t[r.question_id] = r.rate();
  return t;
}

/// Reads the pass_rate field of each question; all must be present.
inline RateTable rate_table_from(std::span<const Question> questions) {
  RateTable t;
  for (const Question& q : questions) {
    if (!q.pass_rate)
      throw std::invalid_argument("question " + std::to_string(q.id) + " has no pass_rate");
    t[q.id] = *q.pass_rate;
  }
  return t;
}

/// Removes exactly the questions whose rate is zero, keeping order.
inline std::vector<Question> filter_zero_pass(std::span<const Question> dataset,
                                              const RateTable& rates) {
  std::vector<Question> out;
  for (const Question& q : dataset) {
    const auto it = rates.find(q.id);
    if (it == rates.end())
      throw std::invalid_argument("no pass rate for question " + std::to_string(q.id));
    if (it->second != 0.0) out.push_back(q);
  }
  return out;
}

enum class OrderingKind { kCurriculum, kShuffled };

inline std::string ordering_name(OrderingKind k) {
  return k == OrderingKind::kCurriculum ? "curriculum" : "shuffled";
}

struct CurriculumPlan {
  std::vector<std::int64_t> ids;
  OrderingKind kind = OrderingKind::kCurriculum;
  std::uint64_t seed = 0;

  friend bool operator==(const CurriculumPlan&, const CurriculumPlan&) = default;
};

/// Highest pass rate first; ties by ascending id.
inline CurriculumPlan order_by_difficulty(std::span<const Question> dataset,
                                          const RateTable& rates) {
  struct Entry {
    double rate;
    std::int64_t id;
  };
  std::vector<Entry> entries;
  entries.reserve(dataset.size());
  for (const Question& q : dataset) {
    const auto it = rates.find(q.id);
    if (it == rates.end())
      throw std::invalid_argument("no pass rate for question " + std::to_string(q.id));
    entries.push_back({it->second, q.id});
  }
  std::stable_sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.rate != b.rate) return a.rate > b.rate;
    return a.id < b.id;
  });
  CurriculumPlan plan;
  plan.kind = OrderingKind::kCurriculum;
  for (const Entry& e : entries) plan.ids.push_back(e.id);
  return plan;
}

inline CurriculumPlan shuffled_plan(std::span<const Question> dataset, std::uint64_t seed) {
  if (dataset.empty()) throw std::invalid_argument("cannot plan an empty dataset");
  CurriculumPlan plan;
  plan.kind = OrderingKind::kShuffled;
  plan.seed = seed;
  for (const Question& q : dataset) plan.ids.push_back(q.id);
  Rng rng = Rng::stream(seed, Stream::kPlan);
  rng.shuffle(plan.ids.begin(), plan.ids.end());
  return plan;
}

// Plan files: "# ordering=<kind> seed=<n>" then one id per line.

inline void write_plan(std::ostream& os, const CurriculumPlan& plan) {
  os << "# ordering=" << ordering_name(plan.kind) << " seed=" << plan.seed << '\n';
  for (std::int64_t id : plan.ids) os << id << '\n';
}

inline CurriculumPlan read_plan(std::istream& is) {
  std::string header;
  if (!std::getline(is, header)) throw std::runtime_error("plan: empty file");
  CurriculumPlan plan;
  std::istringstream hs(header);
  std::string hash, ordering, seed;
  hs >> hash >> ordering >> seed;
  if (hash != "#" || ordering.rfind("ordering=", 0) != 0 || seed.rfind("seed=", 0) != 0)
    throw std::runtime_error("plan: bad header '" + header + "'");
  const std::string kind = ordering.substr(9);
  if (kind == "curriculum") plan.kind = OrderingKind::kCurriculum;
  else if (kind == "shuffled") plan.kind = OrderingKind::kShuffled;
  else throw std::runtime_error("plan: unknown ordering '" + kind + "'");
  plan.seed = std::stoull(seed.substr(5));
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    plan.ids.push_back(std::stoll(line));
  }
  return plan;
}

inline void save_plan(const std::string& path, const CurriculumPlan& plan) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  write_plan(os, plan);
}

inline CurriculumPlan load_plan(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path);
  return read_plan(is);
}

}  // namespace cotrl
