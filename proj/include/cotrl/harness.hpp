#pragma once
// Experiment orchestration: the training variants, the staged pipeline that
// runs one of them end to end, and cross-run comparison.
//
// A run directory holds:
//   manifest.json, config.cfg
//   data.jsonl                      all splits, tagged with "split"
//   base.ckpt                       direct-answer starting policy
//   sft_teacher.jsonl, sft_history.csv, sft.ckpt     (warm-started variants)
//   rl_pass_rates.jsonl, plan.txt
//   grpo_metrics.csv, grpo.ckpt
//   eval_report.csv, eval_table.txt
//   <stage>.done                    written after each stage completes
// Stages whose marker exists are loaded instead of recomputed.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cotrl/config.hpp"
#include "cotrl/curriculum.hpp"
#include "cotrl/evaluate.hpp"
#include "cotrl/grpo.hpp"
#include "cotrl/policy.hpp"
#include "cotrl/sft.hpp"
#include "cotrl/synth.hpp"

namespace cotrl {

inline constexpr std::string_view kVersion = "1.0.0";

enum class VariantId { kA, kB, kC, kD, kE, kF, kG, kSftA, kSftB };

inline constexpr std::array<VariantId, 9> kAllVariants = {
    VariantId::kA, VariantId::kB, VariantId::kC,    VariantId::kD,   VariantId::kE,
    VariantId::kF, VariantId::kG, VariantId::kSftA, VariantId::kSftB};

constexpr std::string_view variant_name(VariantId v) {
  constexpr std::array<std::string_view, 9> names = {"a", "b", "c", "d", "e",
                                                     "f", "g", "sft_a", "sft_b"};
  return names[static_cast<std::size_t>(v)];
}

inline std::optional<VariantId> parse_variant(std::string_view s) {
  for (VariantId v : kAllVariants)
    if (variant_name(v) == s) return v;
  return std::nullopt;
}

inline std::string variant_list() {
  std::string out;
  for (VariantId v : kAllVariants) {
    if (!out.empty()) out += ", ";
    out += variant_name(v);
  }
  return out;
}

struct VariantSpec {
  Regime regime;
  bool warm_start;
  /// Empty for SFT-only variants, which skip RL entirely.
  std::optional<OrderingKind> plan;
};

inline VariantSpec variant_spec(VariantId v) {
  using enum VariantId;
  switch (v) {
    case kA: return {Regime::kDirect, false, OrderingKind::kShuffled};
    case kB: return {Regime::kStructured, false, OrderingKind::kShuffled};
    case kC: return {Regime::kUnstructured, false, OrderingKind::kShuffled};
    case kD: return {Regime::kStructured, true, OrderingKind::kShuffled};
    case kE: return {Regime::kUnstructured, true, OrderingKind::kShuffled};
    case kF: return {Regime::kStructured, true, OrderingKind::kCurriculum};
    case kG: return {Regime::kUnstructured, true, OrderingKind::kCurriculum};
    case kSftA: return {Regime::kStructured, true, std::nullopt};
    case kSftB: return {Regime::kUnstructured, true, std::nullopt};
  }
  throw std::logic_error("unknown variant");
}

/// A failure inside one pipeline stage.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what)
      : std::runtime_error("stage '" + stage + "' failed: " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct RunArtifacts {
  std::filesystem::path dir;
  std::map<std::string, std::filesystem::path> checkpoints;
  std::filesystem::path metrics_csv;
  std::filesystem::path eval_csv;
  std::filesystem::path manifest;
  EvalReport report;
  std::vector<StepMetrics> history;
};

namespace harness_detail {

namespace fs = std::filesystem;

inline void write_text(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  os << text;
  if (!os) throw std::runtime_error("write failed: " + p.string());
}

inline std::string read_text(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + p.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline bool stage_done(const fs::path& dir, const std::string& stage) {
  return fs::exists(dir / (stage + ".done"));
}

inline void mark_done(const fs::path& dir, const std::string& stage) {
  write_text(dir / (stage + ".done"), "");
}

template <class Fn>
auto run_stage(const std::string& stage, Fn&& fn) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

inline std::string sft_history_csv(const SftResult& r) {
  std::ostringstream os;
  os << "epoch,mean_loss,steps\n";
  for (const SftEpoch& e : r.history)
    os << e.epoch << ',' << format_number(e.mean_loss) << ',' << e.steps << '\n';
  return os.str();
}

inline std::vector<Question> with_traces(std::span<const Question> qs,
                                         std::span<const TeacherTrace> ts) {
  std::vector<Question> out(qs.begin(), qs.end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i].trace = render(ts[i].tokens);
  return out;
}

inline std::vector<TeacherTrace> traces_from(std::span<const Question> qs, Regime regime) {
  std::vector<TeacherTrace> out;
  for (const Question& q : qs) {
    if (!q.trace) throw std::runtime_error("teacher question " + std::to_string(q.id) +
                                           " has no trace");
    TeacherTrace t{q.id, regime, tokenize(*q.trace), false};
    const ParseResult pr = parse(t.tokens);
    t.verified = format_reward(pr, regime) == 1 && answer_reward(pr, q.correct_index) == 1;
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace harness_detail

/// The instruction-following starting point shared by every variant: a fresh
/// policy fitted to direct-answer traces on the SFT split. Its pass rates
/// define difficulty, and RL without a warm start begins from it.
inline PolicyParams train_base(const ExperimentConfig& cfg, std::span<const Question> sft_split,
                                std::size_t workers = 1) {
  const auto teachers = teacher_set(sft_split, Regime::kDirect, cfg.lengths, cfg.sft.seed);
  return sft_train(PolicyParams::initialized(cfg.dataset.dim, cfg.seed), teachers, sft_split,
                   cfg.sft, workers)
      .params;
}

/// Runs a variant's pipeline in out_dir:
///   data -> base -> [pass_rate -> plan] -> [sft] -> [grpo] -> eval
/// with bracketed stages present only when the variant needs them.
inline RunArtifacts run_variant(VariantId id, ExperimentConfig cfg,
                                const std::filesystem::path& out_dir, std::size_t workers = 1) {
  namespace fs = std::filesystem;
  using namespace harness_detail;
  cfg.dataset.n = cfg.splits.total();
  cfg.lengths.max_len = cfg.eval.max_len = cfg.grpo.max_len;
  cfg.grpo.workers = cfg.eval.workers = workers;
  run_stage("config", [&] {
    cfg.validate();
    return 0;
  });
  const VariantSpec spec = variant_spec(id);

  RunArtifacts art;
  art.dir = out_dir;
  art.manifest = out_dir / "manifest.json";
  run_stage("manifest", [&] {
    fs::create_directories(out_dir);
    nlohmann::json m = nlohmann::json::object();
    m["variant"] = std::string(variant_name(id));
    m["regime"] = std::string(regime_name(spec.regime));
    m["seed"] = cfg.seed;
    m["config_hash"] = config_hash(cfg);
    m["version"] = std::string(kVersion);
    const std::string text = m.dump(2) + "\n";
    if (fs::exists(art.manifest)) {
      const auto old = nlohmann::json::parse(read_text(art.manifest));
      if (old.value("config_hash", "") != m["config_hash"] ||
          old.value("variant", "") != m["variant"])
        throw std::runtime_error(out_dir.string() +
                                 " holds a different run; use a fresh directory");
    } else {
      write_text(art.manifest, text);
      write_text(out_dir / "config.cfg", write_config(cfg));
    }
    return 0;
  });

  DatasetSplit data = run_stage("data", [&] {
    const fs::path p = out_dir / "data.jsonl";
    if (stage_done(out_dir, "data")) return split_by_field(load_jsonl(p.string()));
    DatasetSplit s = split_dataset(gen_dataset(cfg.dataset), cfg.splits);
    std::vector<Question> all;
    for (auto* part : {&s.sft, &s.rl, &s.eval}) all.insert(all.end(), part->begin(), part->end());
    save_jsonl(all, p.string());
    mark_done(out_dir, "data");
    return s;
  });

  const PolicyParams base = run_stage("base", [&] {
    const fs::path p = out_dir / "base.ckpt";
    if (stage_done(out_dir, "base")) return load_checkpoint(p.string());
    PolicyParams params = train_base(cfg, data.sft, workers);
    save_checkpoint(p.string(), params);
    mark_done(out_dir, "base");
    return params;
  });
  art.checkpoints["base"] = out_dir / "base.ckpt";

  std::optional<CurriculumPlan> plan;
  if (spec.plan) {
    std::vector<Question> rated = run_stage("pass_rate", [&] {
      const fs::path p = out_dir / "rl_pass_rates.jsonl";
      if (stage_done(out_dir, "pass_rate")) return load_jsonl(p.string());
      const auto rates = estimate_pass_rates(base, data.rl, cfg.pass_attempts,
                                             cfg.pass_temperature, cfg.seed, cfg.grpo.max_len,
                                             workers);
      std::vector<Question> out = data.rl;
      for (std::size_t i = 0; i < out.size(); ++i) out[i].pass_rate = rates[i].rate();
      save_jsonl(out, p.string());
      mark_done(out_dir, "pass_rate");
      return out;
    });

    plan = run_stage("plan", [&] {
      const fs::path p = out_dir / "plan.txt";
      if (stage_done(out_dir, "plan")) return load_plan(p.string());
      const RateTable rates = rate_table_from(rated);
      const std::vector<Question> pool = filter_zero_pass(rated, rates);
      if (pool.empty()) throw std::runtime_error("every RL question has a zero pass rate");
      CurriculumPlan pl = *spec.plan == OrderingKind::kCurriculum
                              ? order_by_difficulty(pool, rates)
                              : shuffled_plan(pool, cfg.seed);
      save_plan(p.string(), pl);
      mark_done(out_dir, "plan");
      return pl;
    });
  }

  PolicyParams params = base;
  if (spec.warm_start) {
    params = run_stage("sft", [&] {
      const fs::path p = out_dir / "sft.ckpt";
      if (stage_done(out_dir, "sft")) return load_checkpoint(p.string());
      const auto teachers = teacher_set(data.sft, spec.regime, cfg.lengths, cfg.sft.seed);
      save_jsonl(with_traces(data.sft, teachers), (out_dir / "sft_teacher.jsonl").string());
      SftResult r = sft_train(std::move(params), teachers, data.sft, cfg.sft, workers);
      write_text(out_dir / "sft_history.csv", sft_history_csv(r));
      save_checkpoint(p.string(), r.params);
      mark_done(out_dir, "sft");
      return std::move(r.params);
    });
    art.checkpoints["sft"] = out_dir / "sft.ckpt";
  }

  if (plan) {
    art.metrics_csv = out_dir / "grpo_metrics.csv";
    params = run_stage("grpo", [&] {
      const fs::path p = out_dir / "grpo.ckpt";
      if (stage_done(out_dir, "grpo")) {
        std::ifstream is(art.metrics_csv);
        art.history = read_metrics_csv(is);
        return load_checkpoint(p.string());
      }
      TrainResult r = grpo_train(std::move(params), *plan, data.rl, spec.regime, cfg.grpo,
                                 cfg.reward);
      std::ostringstream csv;
      write_metrics_csv(csv, r.history);
      write_text(art.metrics_csv, csv.str());
      save_checkpoint(p.string(), r.params);
      art.history = std::move(r.history);
      mark_done(out_dir, "grpo");
      return std::move(r.params);
    });
    art.checkpoints["grpo"] = out_dir / "grpo.ckpt";
  }

  art.eval_csv = out_dir / "eval_report.csv";
  art.report = run_stage("eval", [&] {
    EvalReport rep = evaluate(params, data.eval, spec.regime, cfg.eval,
                              std::string(variant_name(id)));
    if (!stage_done(out_dir, "eval")) {
      write_text(art.eval_csv, report_csv(rep));
      write_text(out_dir / "eval_table.txt", report_table(rep));
      mark_done(out_dir, "eval");
    }
    return rep;
  });
  return art;
}

// ---------------------------------------------------------------------------
// Comparison across runs.
// ---------------------------------------------------------------------------

inline constexpr std::array<std::string_view, 5> kMetricNames = {
    "mean_reward", "format_rate", "answer_rate", "mean_completion_length", "loss"};

inline double metric_value(const StepMetrics& m, std::string_view name) {
  if (name == "mean_reward") return m.mean_reward;
  if (name == "format_rate") return m.format_rate;
  if (name == "answer_rate") return m.answer_rate;
  if (name == "mean_completion_length") return m.mean_completion_length;
  if (name == "loss") return m.loss;
  throw std::invalid_argument("unknown metric '" + std::string(name) + "'");
}

/// First step whose value reaches the threshold; the series length if none.
inline std::size_t steps_to_threshold(std::span<const double> v, double threshold) {
  for (std::size_t i = 0; i < v.size(); ++i)
    if (v[i] >= threshold) return i;
  return v.size();
}

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct RunSeries {
  std::string label;
  std::string variant;
  std::vector<double> values;
  double final_value = 0.0;
  double max_value = 0.0;
  /// Steps until 90% of the run's own final / maximum value is first reached.
  std::size_t steps_to_90_final = 0;
  std::size_t steps_to_90_max = 0;
};

struct GroupSummary {
  std::size_t runs = 0;
  double median_final = 0.0;
  double median_steps_to_90_final = 0.0;
  double median_steps_to_90_max = 0.0;
};

struct Comparison {
  std::string metric;
  std::vector<RunSeries> runs;
  std::map<std::string, GroupSummary> by_variant;
};

inline RunSeries make_series(std::string label, std::string variant,
                             std::span<const StepMetrics> rows, std::string_view metric) {
  RunSeries s;
  s.label = std::move(label);
  s.variant = std::move(variant);
  for (const StepMetrics& m : rows) s.values.push_back(metric_value(m, metric));
  if (!s.values.empty()) {
    s.final_value = s.values.back();
    s.max_value = *std::max_element(s.values.begin(), s.values.end());
  }
  s.steps_to_90_final = steps_to_threshold(s.values, 0.9 * s.final_value);
  s.steps_to_90_max = steps_to_threshold(s.values, 0.9 * s.max_value);
  return s;
}

inline Comparison compare_series(std::vector<RunSeries> runs, std::string metric) {
  Comparison c;
  c.metric = std::move(metric);
  c.runs = std::move(runs);
  std::map<std::string, std::vector<const RunSeries*>> groups;
  for (const RunSeries& r : c.runs) groups[r.variant].push_back(&r);
  for (const auto& [variant, members] : groups) {
    std::vector<double> finals, s_final, s_max;
    for (const RunSeries* r : members) {
      finals.push_back(r->final_value);
      s_final.push_back(static_cast<double>(r->steps_to_90_final));
      s_max.push_back(static_cast<double>(r->steps_to_90_max));
    }
    c.by_variant[variant] = {members.size(), median(finals), median(s_final), median(s_max)};
  }
  return c;
}

/// Reads grpo_metrics.csv and manifest.json from each directory.
inline Comparison compare_runs(std::span<const std::filesystem::path> dirs,
                               const std::string& metric) {
  if (dirs.size() < 2) throw std::invalid_argument("compare needs at least two run directories");
  metric_value(StepMetrics{}, metric);
  std::vector<RunSeries> runs;
  for (const auto& dir : dirs) {
    std::ifstream is(dir / "grpo_metrics.csv");
    if (!is) throw std::runtime_error("no grpo_metrics.csv in " + dir.string());
    const auto rows = read_metrics_csv(is);
    std::string variant = "?";
    if (std::filesystem::exists(dir / "manifest.json")) {
      const auto m = nlohmann::json::parse(harness_detail::read_text(dir / "manifest.json"));
      variant = m.value("variant", "?");
    }
    runs.push_back(make_series(dir.string(), variant, rows, metric));
  }
  return compare_series(std::move(runs), metric);
}

/// Step-aligned series (with each run's difference from the first run),
/// then per-run and per-variant summaries.
inline std::string render_comparison(const Comparison& c) {
  std::ostringstream os;
  std::size_t steps = 0;
  for (const auto& r : c.runs) steps = std::max(steps, r.values.size());
  os << "metric: " << c.metric << "\n\nstep";
  for (std::size_t i = 0; i < c.runs.size(); ++i) os << ",run" << i;
  for (std::size_t i = 1; i < c.runs.size(); ++i) os << ",run" << i << "-run0";
  os << '\n';
  for (std::size_t s = 0; s < steps; ++s) {
    os << s;
    for (const auto& r : c.runs)
      os << ',' << (s < r.values.size() ? format_number(r.values[s]) : "");
    for (std::size_t i = 1; i < c.runs.size(); ++i) {
      const auto& r = c.runs[i];
      const auto& base = c.runs[0];
      os << ','
         << (s < r.values.size() && s < base.values.size()
                 ? format_number(r.values[s] - base.values[s])
                 : "");
    }
    os << '\n';
  }
  os << "\nrun,label,variant,final,max,steps_to_90pct_final,steps_to_90pct_max\n";
  for (std::size_t i = 0; i < c.runs.size(); ++i) {
    const auto& r = c.runs[i];
    os << "run" << i << ',' << r.label << ',' << r.variant << ',' << format_number(r.final_value)
       << ',' << format_number(r.max_value) << ',' << r.steps_to_90_final << ','
       << r.steps_to_90_max << '\n';
  }
  os << "\nvariant,runs,median_final,median_steps_to_90pct_final,median_steps_to_90pct_max\n";
  for (const auto& [v, g] : c.by_variant)
    os << v << ',' << g.runs << ',' << format_number(g.median_final) << ','
       << format_number(g.median_steps_to_90_final) << ','
       << format_number(g.median_steps_to_90_max) << '\n';
  return os.str();
}

}  // namespace cotrl
