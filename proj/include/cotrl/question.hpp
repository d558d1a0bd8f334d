#pragma once
// The synthetic multiple-choice item shared by every stage.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace cotrl {

/// Three reporting axes, mirroring a sound/music/speech benchmark split.
enum class Category : std::uint8_t { kSound = 0, kMusic, kSpeech };
inline constexpr std::size_t kNumCategories = 3;
inline constexpr std::array<std::string_view, kNumCategories> kCategoryNames = {"sound", "music",
                                                                                "speech"};

constexpr std::string_view category_name(Category c) {
  return kCategoryNames[static_cast<std::size_t>(c)];
}

inline std::optional<Category> parse_category(std::string_view s) {
  for (std::size_t i = 0; i < kNumCategories; ++i)
    if (kCategoryNames[i] == s) return static_cast<Category>(i);
  return std::nullopt;
}

struct Question {
  std::int64_t id = 0;
  Category category = Category::kSound;
  /// 1 is trivially separable, 0 is pure noise.
  double signal = 0.0;
  std::vector<double> features;
  int correct_index = 0;
  std::optional<double> pass_rate;
  /// Rendered tag text, present on teacher (SFT) datasets.
  std::optional<std::string> trace;
  /// Fields this library does not interpret; kept verbatim on round-trip.
  nlohmann::json extra = nlohmann::json::object();

  friend bool operator==(const Question&, const Question&) = default;
};

}  // namespace cotrl
