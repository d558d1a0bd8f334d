#pragma once
// Learning-rate schedules shared by the SFT and GRPO trainers.

#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <string_view>

namespace cotrl {

enum class LrSchedule { kConstant, kLinear, kCosine };

constexpr std::string_view schedule_name(LrSchedule s) {
  switch (s) {
    case LrSchedule::kConstant: return "constant";
    case LrSchedule::kLinear: return "linear";
    case LrSchedule::kCosine: return "cosine";
  }
  return "?";
}

inline std::optional<LrSchedule> parse_schedule(std::string_view s) {
  for (LrSchedule v : {LrSchedule::kConstant, LrSchedule::kLinear, LrSchedule::kCosine})
    if (schedule_name(v) == s) return v;
  return std::nullopt;
}

/// Multiplier on the base rate at `step` of `total`. Linear and cosine decay
/// toward zero but never reach it: the last step still moves.
inline double schedule_factor(LrSchedule s, std::size_t step, std::size_t total) {
  const double frac = total == 0 ? 0.0 : static_cast<double>(step) / static_cast<double>(total);
  switch (s) {
    case LrSchedule::kConstant: return 1.0;
    case LrSchedule::kLinear: return 1.0 - frac;
    case LrSchedule::kCosine: return 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
  }
  return 1.0;
}

}  // namespace cotrl
