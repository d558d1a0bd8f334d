#include <gtest/gtest.h>

#include <sstream>

#include "cotrl/config.hpp"

using namespace cotrl;

TEST(Config, DefaultsRoundTrip) {
  const ExperimentConfig cfg;
  std::istringstream is(write_config(cfg));
  const auto back = read_config(is);
  EXPECT_EQ(write_config(back), write_config(cfg));
  EXPECT_EQ(config_hash(back), config_hash(cfg));
}

TEST(Config, EditedValuesRoundTrip) {
  std::istringstream is(
      "seed = 4\n"
      "[grpo]\n"
      "learning_rate = 0.1   # comment\n"
      "schedule = cosine\n"
      "group_size = 6\n"
      "[reward]\n"
      "format_weight = 0.25\n"
      "sft.epochs = 2\n");
  const auto cfg = read_config(is);
  EXPECT_EQ(cfg.seed, 4u);
  EXPECT_EQ(cfg.grpo.seed, 4u);
  EXPECT_EQ(cfg.grpo.learning_rate, 0.1);
  EXPECT_EQ(cfg.grpo.schedule, LrSchedule::kCosine);
  EXPECT_EQ(cfg.grpo.group_size, 6u);
  EXPECT_EQ(cfg.reward.format_weight, 0.25);
  EXPECT_EQ(cfg.sft.epochs, 2u);
  std::istringstream again(write_config(cfg));
  EXPECT_EQ(config_hash(read_config(again)), config_hash(cfg));
  EXPECT_NE(config_hash(cfg), config_hash(ExperimentConfig{}));
}

TEST(Config, StageSeedsOverrideTheMasterSeed) {
  std::istringstream is("seed = 4\ngrpo.seed = 9\n");
  const auto cfg = read_config(is);
  EXPECT_EQ(cfg.sft.seed, 4u);
  EXPECT_EQ(cfg.grpo.seed, 9u);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  std::istringstream unknown("grpo.learnig_rate = 1\n");
  EXPECT_THROW(read_config(unknown), ConfigError);
  std::istringstream bad_number("grpo.clip_eps = wide\n");
  EXPECT_THROW(read_config(bad_number), ConfigError);
  std::istringstream no_eq("[grpo]\nclip_eps\n");
  EXPECT_THROW(read_config(no_eq), ConfigError);
  std::istringstream bad_schedule("sft.schedule = stepwise\n");
  EXPECT_THROW(read_config(bad_schedule), ConfigError);
  std::istringstream invalid("grpo.group_size = 1\n");
  EXPECT_THROW(read_config(invalid).validate(), ConfigError);
}

TEST(Config, SampleFileMatchesDefaults) {
  const auto cfg = load_config(COTRL_SAMPLE_CONFIG);
  EXPECT_EQ(write_config(cfg), write_config(ExperimentConfig{}));
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_THROW(load_config("/nonexistent/cotrl.cfg"), ConfigError);
}

TEST(Config, ScheduleFactors) {
  EXPECT_EQ(schedule_factor(LrSchedule::kConstant, 7, 10), 1.0);
  EXPECT_EQ(schedule_factor(LrSchedule::kLinear, 0, 10), 1.0);
  EXPECT_DOUBLE_EQ(schedule_factor(LrSchedule::kLinear, 5, 10), 0.5);
  EXPECT_DOUBLE_EQ(schedule_factor(LrSchedule::kCosine, 5, 10), 0.5);
  for (auto s : {LrSchedule::kConstant, LrSchedule::kLinear, LrSchedule::kCosine})
    EXPECT_EQ(parse_schedule(schedule_name(s)), s);
}
