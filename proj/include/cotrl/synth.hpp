#pragma once
// Synthetic questions with graded difficulty, a Bayes-oracle calibrator, and
// JSONL persistence.
//
// Features are x = s * v[c] + (1 - s) * eta, where v are four orthonormal
// prototypes for the question's category, c is the correct option, s the
// signal level and eta standard Gaussian noise. Each category's prototype set
// is a small random perturbation of a shared base set, re-orthonormalized, so
// one linear read-out serves all categories approximately while the
// category-specific Bayes classifier stays exact.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cotrl/grammar.hpp"
#include "cotrl/question.hpp"
#include "cotrl/rng.hpp"

namespace cotrl {

inline constexpr double kMaxFeatureNorm = 10.0;

struct DatasetConfig {
  std::size_t n = 2200;
  std::size_t dim = 8;
  std::uint64_t seed = 0;
  /// Mass placed exactly at s = 0; the rest is uniform on [0, 1].
  double zero_signal_fraction = 0.05;
  /// Size of each category's deviation from the shared prototype base.
  double category_spread = 0.15;
};

/// Sizes of the disjoint id ranges [sft | rl | eval] carved from one dataset.
struct SplitSizes {
  std::size_t sft = 200;
  std::size_t rl = 1600;
  std::size_t eval = 400;
  std::size_t total() const { return sft + rl + eval; }
};

struct DatasetSplit {
  std::vector<Question> sft;
  std::vector<Question> rl;
  std::vector<Question> eval;
};

using Prototypes = std::array<std::vector<double>, kNumOptions>;

namespace synth_detail {

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline void orthonormalize(Prototypes& v) {
  for (std::size_t k = 0; k < v.size(); ++k) {
    for (std::size_t j = 0; j < k; ++j) {
      const double c = dot(v[k], v[j]);
      for (std::size_t i = 0; i < v[k].size(); ++i) v[k][i] -= c * v[j][i];
    }
    const double n = std::sqrt(dot(v[k], v[k]));
    if (!(n > 1e-9)) throw std::runtime_error("degenerate prototype draw");
    for (double& x : v[k]) x /= n;
  }
}

}  // namespace synth_detail

/// Per-category orthonormal prototype sets for a run.
inline std::array<Prototypes, kNumCategories> make_prototypes(std::size_t dim, std::uint64_t seed,
                                                              double spread) {
  if (dim < kNumOptions) throw std::invalid_argument("feature dimension must be at least 4");
  Rng rng = Rng::stream(seed, Stream::kPrototypes);
  Prototypes base;
  for (auto& v : base) {
    v.resize(dim);
    for (double& x : v) x = rng.normal();
  }
  synth_detail::orthonormalize(base);
  std::array<Prototypes, kNumCategories> out;
  for (auto& set : out) {
    set = base;
    for (auto& v : set)
      for (double& x : v) x += spread * rng.normal();
    synth_detail::orthonormalize(set);
  }
  return out;
}

inline std::vector<double> make_features(const std::vector<double>& prototype, double signal,
                                         Rng& rng) {
  std::vector<double> x(prototype.size());
  for (std::size_t j = 0; j < x.size(); ++j)
    x[j] = signal * prototype[j] + (1.0 - signal) * rng.normal();
  const double n = std::sqrt(synth_detail::dot(x, x));
  if (n > kMaxFeatureNorm)
    for (double& v : x) v *= kMaxFeatureNorm / n;
  return x;
}

/// Deterministic by seed. Categories are round-robin; correct options are
/// balanced exactly within each consecutive block of four ids.
inline std::vector<Question> gen_dataset(const DatasetConfig& cfg) {
  if (cfg.n < 4) throw std::invalid_argument("dataset size must be at least 4");
  if (cfg.dim < 4) throw std::invalid_argument("feature dimension must be at least 4");
  const auto protos = make_prototypes(cfg.dim, cfg.seed, cfg.category_spread);
  std::vector<Question> out(cfg.n);
  for (std::size_t block = 0; block * 4 < cfg.n; ++block) {
    std::array<int, 4> answers = {0, 1, 2, 3};
    Rng brng = Rng::stream(cfg.seed, Stream::kDataset, block, 1);
    brng.shuffle(answers.begin(), answers.end());
    for (std::size_t k = 0; k < 4 && block * 4 + k < cfg.n; ++k) {
      const std::size_t i = block * 4 + k;
      Question& q = out[i];
      Rng rng = Rng::stream(cfg.seed, Stream::kDataset, i, 2);
      q.id = static_cast<std::int64_t>(i);
      q.category = static_cast<Category>(i % kNumCategories);
      q.correct_index = answers[k];
      q.signal = rng.uniform() < cfg.zero_signal_fraction ? 0.0 : rng.uniform();
      q.features = make_features(protos[static_cast<std::size_t>(q.category)]
                                        [static_cast<std::size_t>(q.correct_index)],
                                 q.signal, rng);
    }
  }
  return out;
}

/// Splits by id range and tags each question with a "split" field.
inline DatasetSplit split_dataset(std::vector<Question> all, const SplitSizes& sizes) {
  if (all.size() < sizes.total())
    throw std::invalid_argument("dataset smaller than requested splits");
  DatasetSplit s;
  for (std::size_t i = 0; i < sizes.total(); ++i) {
    Question& q = all[i];
    if (i < sizes.sft) {
      q.extra["split"] = "sft";
      s.sft.push_back(std::move(q));
    } else if (i < sizes.sft + sizes.rl) {
      q.extra["split"] = "rl";
      s.rl.push_back(std::move(q));
    } else {
      q.extra["split"] = "eval";
      s.eval.push_back(std::move(q));
    }
  }
  return s;
}

/// Regroups a loaded dataset by its "split" field.
inline DatasetSplit split_by_field(const std::vector<Question>& all) {
  DatasetSplit s;
  for (const Question& q : all) {
    const auto it = q.extra.find("split");
    if (it == q.extra.end() || !it->is_string())
      throw std::runtime_error("question " + std::to_string(q.id) + " has no split field");
    const std::string name = it->get<std::string>();
    if (name == "sft") s.sft.push_back(q);
    else if (name == "rl") s.rl.push_back(q);
    else if (name == "eval") s.eval.push_back(q);
    else throw std::runtime_error("unknown split '" + name + "'");
  }
  return s;
}

enum class NoiseModel { kGaussian };

/// Monte-Carlo accuracy of argmax_k v_k . x at signal s. Isotropic noise makes
/// the result independent of the particular orthonormal set, so the
/// coordinate basis is used.
inline double bayes_accuracy(double signal, std::size_t dim, NoiseModel noise, std::size_t trials,
                             std::uint64_t seed) {
  (void)noise;
  if (signal < 0.0 || signal > 1.0) throw std::invalid_argument("signal must lie in [0, 1]");
  if (dim < kNumOptions) throw std::invalid_argument("feature dimension must be at least 4");
  if (trials == 0) return 0.0;
  Rng rng = Rng::stream(seed, Stream::kBayes);
  std::size_t correct = 0;
  std::vector<double> x(dim);
  for (std::size_t t = 0; t < trials; ++t) {
    const auto c = static_cast<std::size_t>(rng.below(kNumOptions));
    for (std::size_t j = 0; j < dim; ++j)
      x[j] = (j == c ? signal : 0.0) + (1.0 - signal) * rng.normal();
    std::size_t best = 0;
    for (std::size_t k = 1; k < kNumOptions; ++k)
      if (x[k] > x[best]) best = k;
    correct += best == c;
  }
  return static_cast<double>(correct) / static_cast<double>(trials);
}

// ---------------------------------------------------------------------------
// JSONL.
// ---------------------------------------------------------------------------

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline nlohmann::json to_json(const Question& q) {
  nlohmann::json j = nlohmann::json::object();
  j["id"] = q.id;
  j["category"] = std::string(category_name(q.category));
  j["signal"] = q.signal;
  j["features"] = q.features;
  j["correct_index"] = q.correct_index;
  if (q.pass_rate) j["pass_rate"] = *q.pass_rate;
  if (q.trace) j["trace"] = *q.trace;
  for (const auto& [k, v] : q.extra.items()) j[k] = v;
  return j;
}

inline Question question_from_json(const nlohmann::json& j, std::size_t line) {
  const std::string where = "line " + std::to_string(line) + ": ";
  if (!j.is_object()) throw DatasetError(where + "expected a JSON object");
  for (const char* field : {"id", "category", "signal", "features", "correct_index"})
    if (!j.contains(field)) throw DatasetError(where + "missing field " + field);
  Question q;
  try {
    if (!j.at("id").is_number_integer()) throw DatasetError(where + "field id must be an integer");
    q.id = j.at("id").get<std::int64_t>();
    const auto cat = parse_category(j.at("category").get<std::string>());
    if (!cat) throw DatasetError(where + "unknown category");
    q.category = *cat;
    q.signal = j.at("signal").get<double>();
    q.features = j.at("features").get<std::vector<double>>();
    if (!j.at("correct_index").is_number_integer())
      throw DatasetError(where + "field correct_index must be an integer");
    q.correct_index = j.at("correct_index").get<int>();
    if (q.correct_index < 0 || q.correct_index > 3)
      throw DatasetError(where + "correct_index out of range");
    if (j.contains("pass_rate")) q.pass_rate = j.at("pass_rate").get<double>();
    if (j.contains("trace")) q.trace = j.at("trace").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError(where + e.what());
  }
  for (const auto& [k, v] : j.items()) {
    if (k == "id" || k == "category" || k == "signal" || k == "features" ||
        k == "correct_index" || k == "pass_rate" || k == "trace")
      continue;
    q.extra[k] = v;
  }
  return q;
}

inline void write_jsonl(std::ostream& os, const std::vector<Question>& questions) {
  for (const Question& q : questions) os << to_json(q).dump() << '\n';
}

inline std::vector<Question> read_jsonl(std::istream& is) {
  std::vector<Question> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DatasetError("line " + std::to_string(lineno) + ": malformed JSON: " + e.what());
    }
    out.push_back(question_from_json(j, lineno));
  }
  return out;
}

inline void save_jsonl(const std::vector<Question>& questions, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DatasetError("cannot write " + path);
  write_jsonl(os, questions);
  if (!os) throw DatasetError("write failed: " + path);
}

inline std::vector<Question> load_jsonl(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DatasetError("cannot read " + path);
  return read_jsonl(is);
}

}  // namespace cotrl
