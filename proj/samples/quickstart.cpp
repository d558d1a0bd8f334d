// Smallest end-to-end use of the library: make data, warm-start a policy on
// structured teacher traces, run a few GRPO steps, evaluate.

#include <cstdio>
#include <iostream>

#include "cotrl/cotrl.hpp"

int main() {
  using namespace cotrl;

  DatasetConfig data_cfg;
  data_cfg.seed = 7;
  const SplitSizes sizes{200, 256, 200};
  data_cfg.n = sizes.total();
  const DatasetSplit data = split_dataset(gen_dataset(data_cfg), sizes);

  const LengthParams lengths;
  const auto teachers = teacher_set(data.sft, Regime::kStructured, lengths, 7);
  SftConfig sft_cfg;
  sft_cfg.seed = 7;
  PolicyParams policy =
      sft_train(PolicyParams::initialized(data_cfg.dim, 7), teachers, data.sft, sft_cfg).params;

  const Trace t = greedy_decode(policy, data.eval.front(), Regime::kStructured);
  std::printf("greedy trace: %s\n", render(t.tokens).c_str());

  // Every RL question in its original order.
  CurriculumPlan plan;
  for (const Question& q : data.rl) plan.ids.push_back(q.id);
  GrpoConfig grpo_cfg;
  grpo_cfg.seed = 7;
  const TrainResult trained =
      grpo_train(policy, plan, data.rl, Regime::kStructured, grpo_cfg, RewardWeights{},
                 [](const StepMetrics& m) {
                   std::printf("step %zu  reward %.3f  answer %.3f  length %.1f\n", m.step,
                               m.mean_reward, m.answer_rate, m.mean_completion_length);
                 });

  EvalConfig eval_cfg;
  eval_cfg.seed = 7;
  std::cout << report_table(evaluate(policy, data.eval, Regime::kStructured, eval_cfg, "sft"))
            << report_table(
                   evaluate(trained.params, data.eval, Regime::kStructured, eval_cfg, "sft+grpo"));
}
