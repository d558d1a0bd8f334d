#pragma once
// Experiment configuration and its flat "section.key = value" file format.
//
//   # comment
//   seed = 3
//   [grpo]
//   learning_rate = 0.5     # same as grpo.learning_rate = 0.5
//
// Unknown keys are rejected. A run directory stores the exact config used.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cotrl/evaluate.hpp"
#include "cotrl/grpo.hpp"
#include "cotrl/reward.hpp"
#include "cotrl/sft.hpp"
#include "cotrl/synth.hpp"

namespace cotrl {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  SplitSizes splits;
  LengthParams lengths;
  SftConfig sft;
  GrpoConfig grpo;
  RewardWeights reward;
  EvalConfig eval;
  std::size_t pass_attempts = kDefaultPassAttempts;
  double pass_temperature = 1.0;
  std::uint64_t seed = 0;

  /// Sets the master seed and every stage seed.
  void set_seed(std::uint64_t s) {
    seed = dataset.seed = sft.seed = grpo.seed = eval.seed = s;
  }

  void validate() const {
    if (splits.sft < 1 || splits.rl < 1 || splits.eval < 1)
      throw ConfigError("dataset splits must all be non-empty");
    if (dataset.dim < 4) throw ConfigError("dataset.dim must be at least 4");
    if (pass_attempts < 1) throw ConfigError("pass_rate.attempts must be at least 1");
    if (eval.k < 1) throw ConfigError("eval.k must be at least 1");
    if (!(pass_temperature > 0.0) || !(eval.temperature > 0.0))
      throw ConfigError("temperatures must be positive");
    try {
      sft.validate();
      grpo.validate();
      reward.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
};

namespace config_detail {

inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_unsigned(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
    const unsigned long long x = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return static_cast<T>(x);
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": expected a non-negative integer, got '" + v + "'");
  }
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": expected a number, got '" + v + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key " + key + ": expected true/false, got '" + v + "'");
}

struct Field {
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

#define COTRL_SCHEDULE_FIELD(KEY, MEMBER)                                                  \
  Field {                                                                                  \
    KEY, [](const ExperimentConfig& c) { return std::string(schedule_name(c.MEMBER)); },   \
        [](ExperimentConfig& c, const std::string& v) {                                    \
          const auto s = parse_schedule(v);                                                \
          if (!s)                                                                          \
            throw ConfigError(std::string("config key ") + KEY +                           \
                              ": expected constant, linear or cosine, got '" + v + "'");   \
          c.MEMBER = *s;                                                                   \
        }                                                                                  \
  }
#define COTRL_UINT_FIELD(KEY, MEMBER)                                                      \
  Field {                                                                                  \
    KEY, [](const ExperimentConfig& c) { return std::to_string(c.MEMBER); },               \
        [](ExperimentConfig& c, const std::string& v) {                                    \
          c.MEMBER = parse_unsigned<decltype(c.MEMBER)>(KEY, v);                           \
        }                                                                                  \
  }
#define COTRL_DOUBLE_FIELD(KEY, MEMBER)                                                    \
  Field {                                                                                  \
    KEY, [](const ExperimentConfig& c) { return fmt_double(c.MEMBER); },                   \
        [](ExperimentConfig& c, const std::string& v) { c.MEMBER = parse_double(KEY, v); } \
  }

inline const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      // The master seed also resets every stage seed; later stage keys override.
      Field{"seed", [](const ExperimentConfig& c) { return std::to_string(c.seed); },
            [](ExperimentConfig& c, const std::string& v) {
              c.set_seed(parse_unsigned<std::uint64_t>("seed", v));
            }},
      COTRL_UINT_FIELD("dataset.seed", dataset.seed),
      COTRL_UINT_FIELD("dataset.dim", dataset.dim),
      COTRL_UINT_FIELD("dataset.n_sft", splits.sft),
      COTRL_UINT_FIELD("dataset.n_rl", splits.rl),
      COTRL_UINT_FIELD("dataset.n_eval", splits.eval),
      COTRL_DOUBLE_FIELD("dataset.zero_signal_fraction", dataset.zero_signal_fraction),
      COTRL_DOUBLE_FIELD("dataset.category_spread", dataset.category_spread),
      COTRL_UINT_FIELD("sft.seed", sft.seed),
      COTRL_UINT_FIELD("sft.epochs", sft.epochs),
      COTRL_UINT_FIELD("sft.batch_size", sft.batch_size),
      COTRL_DOUBLE_FIELD("sft.learning_rate", sft.learning_rate),
      COTRL_DOUBLE_FIELD("sft.beta1", sft.beta1),
      COTRL_DOUBLE_FIELD("sft.beta2", sft.beta2),
      COTRL_DOUBLE_FIELD("sft.adam_eps", sft.adam_eps),
      COTRL_SCHEDULE_FIELD("sft.schedule", sft.schedule),
      COTRL_DOUBLE_FIELD("sft.section_mean", lengths.section_mean),
      COTRL_DOUBLE_FIELD("sft.body_mean", lengths.body_mean),
      COTRL_UINT_FIELD("sft.section_cap", lengths.section_cap),
      COTRL_UINT_FIELD("sft.body_cap", lengths.body_cap),
      COTRL_UINT_FIELD("grpo.seed", grpo.seed),
      COTRL_UINT_FIELD("grpo.group_size", grpo.group_size),
      COTRL_UINT_FIELD("grpo.batch_size", grpo.batch_size),
      COTRL_DOUBLE_FIELD("grpo.learning_rate", grpo.learning_rate),
      COTRL_SCHEDULE_FIELD("grpo.schedule", grpo.schedule),
      COTRL_DOUBLE_FIELD("grpo.clip_eps", grpo.clip_eps),
      COTRL_DOUBLE_FIELD("grpo.kl_coef", grpo.kl_coef),
      COTRL_DOUBLE_FIELD("grpo.temperature", grpo.temperature),
      COTRL_UINT_FIELD("grpo.epochs", grpo.epochs),
      COTRL_DOUBLE_FIELD("grpo.std_eps", grpo.std_eps),
      COTRL_UINT_FIELD("grpo.max_len", grpo.max_len),
      COTRL_DOUBLE_FIELD("reward.format_weight", reward.format_weight),
      COTRL_DOUBLE_FIELD("reward.answer_weight", reward.answer_weight),
      COTRL_UINT_FIELD("pass_rate.attempts", pass_attempts),
      COTRL_DOUBLE_FIELD("pass_rate.temperature", pass_temperature),
      COTRL_UINT_FIELD("eval.seed", eval.seed),
      COTRL_UINT_FIELD("eval.k", eval.k),
      COTRL_DOUBLE_FIELD("eval.temperature", eval.temperature),
      Field{"eval.greedy",
            [](const ExperimentConfig& c) { return std::string(c.eval.greedy ? "true" : "false"); },
            [](ExperimentConfig& c, const std::string& v) {
              c.eval.greedy = parse_bool("eval.greedy", v);
            }},
  };
  return table;
}

#undef COTRL_UINT_FIELD
#undef COTRL_DOUBLE_FIELD
#undef COTRL_SCHEDULE_FIELD

}  // namespace config_detail

inline void set_config_value(ExperimentConfig& cfg, const std::string& key,
                             const std::string& value) {
  for (const auto& f : config_detail::fields()) {
    if (f.key == key) {
      f.set(cfg, value);
      // Lengths share max_len with rollouts.
      cfg.lengths.max_len = cfg.grpo.max_len;
      cfg.eval.max_len = cfg.grpo.max_len;
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

inline ExperimentConfig read_config(std::istream& is) {
  ExperimentConfig cfg;
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line.erase(hash);
    line = config_detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config line " + std::to_string(lineno) + ": bad section header");
      section = config_detail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    std::string key = config_detail::trim(line.substr(0, eq));
    const std::string value = config_detail::trim(line.substr(eq + 1));
    if (!section.empty() && key.find('.') == std::string::npos) key = section + "." + key;
    set_config_value(cfg, key, value);
  }
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config " + path);
  return read_config(is);
}

inline std::string write_config(const ExperimentConfig& cfg) {
  std::ostringstream os;
  for (const auto& f : config_detail::fields()) os << f.key << " = " << f.get(cfg) << '\n';
  return os.str();
}

/// FNV-1a over the serialized config, as 16 hex digits.
inline std::string config_hash(const ExperimentConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : write_config(cfg)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace cotrl
