#pragma once
// Everything: grammar, reward, policy, training, evaluation and the harness.

#include "cotrl/config.hpp"
#include "cotrl/curriculum.hpp"
#include "cotrl/evaluate.hpp"
#include "cotrl/grammar.hpp"
#include "cotrl/grpo.hpp"
#include "cotrl/harness.hpp"
#include "cotrl/parallel.hpp"
#include "cotrl/policy.hpp"
#include "cotrl/question.hpp"
#include "cotrl/reward.hpp"
#include "cotrl/rng.hpp"
#include "cotrl/schedule.hpp"
#include "cotrl/sft.hpp"
#include "cotrl/synth.hpp"
