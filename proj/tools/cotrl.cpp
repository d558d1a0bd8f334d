// Command-line front end: individual pipeline stages, whole variant runs and
// run comparison. Exit status: 0 success, 1 usage error, 2 stage failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cotrl/cotrl.hpp"

namespace fs = std::filesystem;
using namespace cotrl;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::size_t workers = 1;
};

ExperimentConfig load(const Globals& g) {
  ExperimentConfig cfg = g.config_path.empty() ? ExperimentConfig{} : load_config(g.config_path);
  if (g.seed) cfg.set_seed(*g.seed);
  cfg.dataset.n = cfg.splits.total();
  cfg.grpo.workers = cfg.eval.workers = g.workers;
  cfg.validate();
  return cfg;
}

std::string require_out(const Globals& g) {
  if (g.out.empty()) throw UsageError("--out is required");
  return g.out;
}

Regime regime_arg(const std::string& s) {
  const auto r = parse_regime(s);
  if (!r) throw UsageError("unknown regime '" + s + "' (direct, structured, unstructured)");
  return *r;
}

/// Questions tagged with the given split, or every question if the file
/// carries no split tags.
std::vector<Question> select_split(const std::vector<Question>& all, const std::string& split) {
  std::vector<Question> out;
  bool tagged = false;
  for (const Question& q : all) {
    const auto it = q.extra.find("split");
    if (it == q.extra.end()) continue;
    tagged = true;
    if (*it == split) out.push_back(q);
  }
  return tagged ? out : all;
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Chain-of-thought RL at desk scale: data, SFT, pass rates, plans, GRPO, eval"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--config", g.config_path, "Config file (section.key = value)");
  app.add_option("--seed", g.seed, "Master seed; overrides every stage seed");
  app.add_option("--out", g.out, "Output file or directory");
  app.add_option("--workers", g.workers, "Worker threads (results do not depend on it)")
      ->check(CLI::PositiveNumber);

  auto* gen = app.add_subcommand("gen-data", "Generate the dataset (all splits) as JSONL");

  std::string data_path, regime_s = "structured", init_path, policy_path, teacher_out;
  std::string split = "sft";
  auto* sft = app.add_subcommand("sft", "Supervised warm start on teacher traces");
  sft->add_option("--data", data_path, "Dataset JSONL")->required();
  sft->add_option("--regime", regime_s, "direct | structured | unstructured");
  sft->add_option("--init", init_path, "Starting checkpoint (default: fresh init)");
  sft->add_option("--split", split, "Split to train on");
  sft->add_option("--teacher-out", teacher_out, "Also write the teacher traces here");

  std::size_t attempts = 0;
  auto* pass = app.add_subcommand("pass-rate", "Estimate pass rates under the direct prompt");
  pass->add_option("--data", data_path, "Dataset JSONL")->required();
  pass->add_option("--policy", policy_path, "Checkpoint")->required();
  pass->add_option("--attempts", attempts, "Attempts per question (default from config)");
  std::string pass_split = "rl";
  pass->add_option("--split", pass_split, "Split to rate");

  std::string ordering = "curriculum";
  auto* plan = app.add_subcommand("plan", "Filter zero-pass questions and order the rest");
  plan->add_option("--data", data_path, "JSONL with pass_rate fields")->required();
  plan->add_option("--ordering", ordering, "curriculum | shuffled")
      ->check(CLI::IsMember({"curriculum", "shuffled"}));

  std::string plan_path;
  auto* grpo = app.add_subcommand("grpo", "GRPO training; writes grpo.ckpt and grpo_metrics.csv");
  grpo->add_option("--data", data_path, "Dataset JSONL")->required();
  grpo->add_option("--plan", plan_path, "Plan file")->required();
  grpo->add_option("--policy", policy_path, "Starting checkpoint")->required();
  grpo->add_option("--regime", regime_s, "direct | structured | unstructured");

  std::string tag = "model", eval_split = "eval";
  auto* eval = app.add_subcommand("eval", "Multi-trial evaluation; writes eval_report.csv");
  eval->add_option("--data", data_path, "Dataset JSONL")->required();
  eval->add_option("--policy", policy_path, "Checkpoint")->required();
  eval->add_option("--regime", regime_s, "direct | structured | unstructured");
  eval->add_option("--tag", tag, "Model tag for the report");
  eval->add_option("--split", eval_split, "Split to evaluate");

  std::string variant_s;
  auto* run = app.add_subcommand("run", "Run a variant end to end: " + variant_list());
  run->add_option("variant", variant_s, "Variant id")->required();

  std::vector<std::string> dirs;
  std::string metric = "answer_rate";
  auto* cmp = app.add_subcommand("compare", "Compare GRPO metric series across run directories");
  cmp->add_option("dirs", dirs, "Run directories")->required()->expected(2, -1);
  cmp->add_option("--metric", metric, "Metric column");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return 1;
  }

  try {
    if (*run) {
      const auto v = parse_variant(variant_s);
      if (!v) {
        std::cerr << "unknown variant '" << variant_s << "'; valid variants: " << variant_list()
                  << "\n\n"
                  << run->help();
        return 1;
      }
      const ExperimentConfig cfg = load(g);
      const RunArtifacts art = run_variant(*v, cfg, require_out(g), g.workers);
      std::cout << report_table(art.report);
      return 0;
    }
    if (*cmp) {
      std::vector<fs::path> paths(dirs.begin(), dirs.end());
      bool known = false;
      for (auto m : kMetricNames) known |= m == metric;
      if (!known) throw UsageError("unknown metric '" + metric + "'");
      const std::string text = render_comparison(compare_runs(paths, metric));
      if (g.out.empty()) std::cout << text;
      else write_file(g.out, text);
      return 0;
    }

    const ExperimentConfig cfg = load(g);
    if (*gen) {
      const std::string out = require_out(g);
      const DatasetSplit s = split_dataset(gen_dataset(cfg.dataset), cfg.splits);
      std::vector<Question> all;
      for (const auto* part : {&s.sft, &s.rl, &s.eval})
        all.insert(all.end(), part->begin(), part->end());
      save_jsonl(all, out);
      return 0;
    }
    if (*sft) {
      const std::string out = require_out(g);
      const Regime regime = regime_arg(regime_s);
      const auto questions = select_split(load_jsonl(data_path), split);
      const auto teachers = teacher_set(questions, regime, cfg.lengths, cfg.sft.seed);
      if (!teacher_out.empty()) {
        std::vector<Question> traced = questions;
        for (std::size_t i = 0; i < traced.size(); ++i) traced[i].trace = render(teachers[i].tokens);
        save_jsonl(traced, teacher_out);
      }
      PolicyParams init = init_path.empty()
                              ? PolicyParams::initialized(cfg.dataset.dim, cfg.seed)
                              : load_checkpoint(init_path);
      const SftResult r = sft_train(std::move(init), teachers, questions, cfg.sft, g.workers);
      for (const SftEpoch& e : r.history)
        std::printf("epoch %zu  mean_loss %.6f  steps %zu\n", e.epoch, e.mean_loss, e.steps);
      save_checkpoint(out, r.params);
      return 0;
    }
    if (*pass) {
      const std::string out = require_out(g);
      const PolicyParams params = load_checkpoint(policy_path);
      auto questions = select_split(load_jsonl(data_path), pass_split);
      const auto rates = estimate_pass_rates(params, questions, attempts ? attempts : cfg.pass_attempts,
                                             cfg.pass_temperature, cfg.seed, cfg.grpo.max_len,
                                             g.workers);
      for (std::size_t i = 0; i < questions.size(); ++i) questions[i].pass_rate = rates[i].rate();
      save_jsonl(questions, out);
      return 0;
    }
    if (*plan) {
      const std::string out = require_out(g);
      const auto questions = load_jsonl(data_path);
      const RateTable rates = rate_table_from(questions);
      const auto pool = filter_zero_pass(questions, rates);
      if (pool.empty()) throw std::runtime_error("every question has a zero pass rate");
      save_plan(out, ordering == "curriculum" ? order_by_difficulty(pool, rates)
                                              : shuffled_plan(pool, cfg.seed));
      std::printf("kept %zu of %zu questions\n", pool.size(), questions.size());
      return 0;
    }
    if (*grpo) {
      const fs::path out = require_out(g);
      fs::create_directories(out);
      const Regime regime = regime_arg(regime_s);
      const auto questions = load_jsonl(data_path);
      std::ofstream metrics(out / "grpo_metrics.csv", std::ios::binary);
      metrics << kMetricsHeader << '\n';
      const TrainResult r =
          grpo_train(load_checkpoint(policy_path), load_plan(plan_path), questions, regime,
                     cfg.grpo, cfg.reward, [&](const StepMetrics& m) {
                       write_metrics_row(metrics, m);
                       metrics.flush();
                     });
      save_checkpoint((out / "grpo.ckpt").string(), r.params);
      return 0;
    }
    if (*eval) {
      const std::string out = require_out(g);
      const Regime regime = regime_arg(regime_s);
      const auto questions = select_split(load_jsonl(data_path), eval_split);
      const EvalReport rep = evaluate(load_checkpoint(policy_path), questions, regime, cfg.eval, tag);
      write_file(out, report_csv(rep));
      std::cout << report_table(rep);
      return 0;
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const StageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
