#pragma once
// Token vocabulary, regime grammars, parsing and the textual tag format.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cotrl {

/// Closed vocabulary. The integer codes are stable and used in checkpoints.
enum class Token : std::uint8_t {
  kThinkOpen = 0,
  kThinkClose,
  kPlanningOpen,
  kPlanningClose,
  kCaptionOpen,
  kCaptionClose,
  kReasoningOpen,
  kReasoningClose,
  kSummaryOpen,
  kSummaryClose,
  kAnswerOpen,
  kAnswerClose,
  kContent,
  kOptA,
  kOptB,
  kOptC,
  kOptD,
  kEos,
  kPad,
};

inline constexpr std::size_t kVocabSize = 19;
inline constexpr std::size_t kNumOptions = 4;

constexpr std::size_t code(Token t) { return static_cast<std::size_t>(t); }
constexpr Token token_from_code(std::size_t c) { return static_cast<Token>(c); }

constexpr bool is_option(Token t) { return t >= Token::kOptA && t <= Token::kOptD; }
constexpr int option_index(Token t) { return static_cast<int>(code(t) - code(Token::kOptA)); }
constexpr Token option_token(int index) {
  return token_from_code(code(Token::kOptA) + static_cast<std::size_t>(index));
}

/// The four tags that structure a reasoning block, in their required order.
enum class Section : std::uint8_t { kPlanning = 0, kCaption, kReasoning, kSummary };
inline constexpr std::size_t kNumSections = 4;

constexpr Token section_open(Section s) {
  return token_from_code(code(Token::kPlanningOpen) + 2 * static_cast<std::size_t>(s));
}
constexpr Token section_close(Section s) {
  return token_from_code(code(Token::kPlanningClose) + 2 * static_cast<std::size_t>(s));
}
constexpr bool is_section_open(Token t) {
  return t == Token::kPlanningOpen || t == Token::kCaptionOpen ||
         t == Token::kReasoningOpen || t == Token::kSummaryOpen;
}
constexpr bool is_section_close(Token t) {
  return t == Token::kPlanningClose || t == Token::kCaptionClose ||
         t == Token::kReasoningClose || t == Token::kSummaryClose;
}
constexpr Section section_of(Token t) {
  return static_cast<Section>((code(t) - code(Token::kPlanningOpen)) / 2);
}

inline constexpr std::array<std::string_view, kVocabSize> kTokenText = {
    "<THINK>",     "</THINK>",     "<PLANNING>", "</PLANNING>", "<CAPTION>",
    "</CAPTION>",  "<REASONING>",  "</REASONING>", "<SUMMARY>", "</SUMMARY>",
    "<ANSWER>",    "</ANSWER>",    "content",    "A",           "B",
    "C",           "D",            "<EOS>",      "<PAD>",
};

constexpr std::string_view text_of(Token t) { return kTokenText[code(t)]; }

/// Output contract in force for a prompt, reward, or teacher trace.
enum class Regime : std::uint8_t { kDirect = 0, kStructured, kUnstructured };
inline constexpr std::array<Regime, 3> kAllRegimes = {Regime::kDirect, Regime::kStructured,
                                                      Regime::kUnstructured};

constexpr std::string_view regime_name(Regime r) {
  switch (r) {
    case Regime::kDirect: return "direct";
    case Regime::kStructured: return "structured";
    case Regime::kUnstructured: return "unstructured";
  }
  return "?";
}

inline std::optional<Regime> parse_regime(std::string_view s) {
  for (Regime r : kAllRegimes)
    if (regime_name(r) == s) return r;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Regime automata.
//
// Each regime is a linear skeleton of slots. A slot is a fixed token, "any
// option letter", or a body loop that accepts filler until the next fixed
// token. A state is the number of slots consumed, so accepting means the
// whole skeleton (ending in EOS) has been read.
// ---------------------------------------------------------------------------

struct GrammarState {
  std::uint8_t id = 0;

  static constexpr std::uint8_t kSinkId = 63;

  static constexpr GrammarState start() { return {0}; }
  static constexpr GrammarState sink() { return {kSinkId}; }
  constexpr bool is_sink() const { return id == kSinkId; }
  friend constexpr bool operator==(GrammarState, GrammarState) = default;
};

namespace grammar_detail {

enum class SlotKind : std::uint8_t { kExact, kAnyOption, kBody };

struct Slot {
  SlotKind kind;
  Token token;
};

constexpr Slot exact(Token t) { return {SlotKind::kExact, t}; }
constexpr Slot any_option() { return {SlotKind::kAnyOption, Token::kOptA}; }
constexpr Slot body() { return {SlotKind::kBody, Token::kContent}; }

inline constexpr std::array<Slot, 4> kDirect = {
    exact(Token::kAnswerOpen), any_option(), exact(Token::kAnswerClose), exact(Token::kEos)};

inline constexpr std::array<Slot, 18> kStructured = {
    exact(Token::kThinkOpen),     exact(Token::kPlanningOpen),  body(),
    exact(Token::kPlanningClose), exact(Token::kCaptionOpen),   body(),
    exact(Token::kCaptionClose),  exact(Token::kReasoningOpen), body(),
    exact(Token::kReasoningClose), exact(Token::kSummaryOpen),  body(),
    exact(Token::kSummaryClose),  exact(Token::kThinkClose),    exact(Token::kAnswerOpen),
    any_option(),                 exact(Token::kAnswerClose),   exact(Token::kEos)};

inline constexpr std::array<Slot, 7> kUnstructured = {
    exact(Token::kThinkOpen), body(), exact(Token::kThinkClose), exact(Token::kAnswerOpen),
    any_option(),             exact(Token::kAnswerClose), exact(Token::kEos)};

inline std::span<const Slot> skeleton(Regime r) {
  switch (r) {
    case Regime::kDirect: return kDirect;
    case Regime::kStructured: return kStructured;
    case Regime::kUnstructured: return kUnstructured;
  }
  return {};
}

// Section tags inside an unstructured THINK block are opaque filler.
constexpr bool is_body_token(Token t, Regime r) {
  if (t == Token::kContent) return true;
  return r == Regime::kUnstructured && (is_section_open(t) || is_section_close(t));
}

constexpr bool matches(const Slot& s, Token t) {
  switch (s.kind) {
    case SlotKind::kExact: return s.token == t;
    case SlotKind::kAnyOption: return is_option(t);
    case SlotKind::kBody: return false;
  }
  return false;
}

}  // namespace grammar_detail

/// Number of live (non-sink) states of a regime automaton, accept included.
inline std::size_t num_states(Regime r) { return grammar_detail::skeleton(r).size() + 1; }

inline bool is_accepting(GrammarState s, Regime r) {
  return !s.is_sink() && s.id == grammar_detail::skeleton(r).size();
}

/// Total transition function. Off-grammar tokens and anything after the final
/// EOS lead to the absorbing sink.
inline GrammarState next_state(GrammarState state, Token token, Regime regime) {
  using namespace grammar_detail;
  const auto skel = skeleton(regime);
  if (state.is_sink() || state.id >= skel.size()) return GrammarState::sink();
  const Slot& slot = skel[state.id];
  if (slot.kind != SlotKind::kBody) {
    return matches(slot, token) ? GrammarState{static_cast<std::uint8_t>(state.id + 1)}
                                : GrammarState::sink();
  }
  if (is_body_token(token, regime)) return state;
  // A body is always followed by a fixed closing token.
  if (state.id + 1u < skel.size() && matches(skel[state.id + 1], token))
    return GrammarState{static_cast<std::uint8_t>(state.id + 2)};
  return GrammarState::sink();
}

inline bool accepts(std::span<const Token> tokens, Regime regime) {
  GrammarState s = GrammarState::start();
  for (Token t : tokens) s = next_state(s, t, regime);
  return is_accepting(s, regime);
}

// ---------------------------------------------------------------------------
// Parsing.
// ---------------------------------------------------------------------------

/// Half-open token index range of a tagged block's interior.
struct TokenRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  friend bool operator==(const TokenRange&, const TokenRange&) = default;
};

enum class Block : std::uint8_t { kThink = 0, kPlanning, kCaption, kReasoning, kSummary, kAnswer };
inline constexpr std::size_t kNumBlocks = 6;
inline constexpr std::array<std::string_view, kNumBlocks> kBlockNames = {
    "THINK", "PLANNING", "CAPTION", "REASONING", "SUMMARY", "ANSWER"};

struct ParseResult {
  bool structured_valid = false;
  bool unstructured_valid = false;
  bool direct_valid = false;
  std::optional<int> extracted_answer;
  std::size_t completion_length = 0;
  /// First occurrence of each tagged block, when it is closed.
  std::array<std::optional<TokenRange>, kNumBlocks> section_spans{};

  bool valid_for(Regime r) const {
    switch (r) {
      case Regime::kDirect: return direct_valid;
      case Regime::kStructured: return structured_valid;
      case Regime::kUnstructured: return unstructured_valid;
    }
    return false;
  }
};

namespace grammar_detail {

constexpr Token block_open(Block b) { return token_from_code(2 * static_cast<std::size_t>(b)); }
constexpr Token block_close(Block b) { return token_from_code(2 * static_cast<std::size_t>(b) + 1); }

// Exactly one <ANSWER> and one </ANSWER>, in that order, with exactly one
// option letter between them.
inline std::optional<int> extract_answer(std::span<const Token> completion) {
  std::size_t opens = 0, closes = 0, open_at = 0, close_at = 0;
  for (std::size_t i = 0; i < completion.size(); ++i) {
    if (completion[i] == Token::kAnswerOpen) {
      ++opens;
      open_at = i;
    } else if (completion[i] == Token::kAnswerClose) {
      ++closes;
      close_at = i;
    }
  }
  if (opens != 1 || closes != 1 || close_at < open_at) return std::nullopt;
  std::optional<int> found;
  for (std::size_t i = open_at + 1; i < close_at; ++i) {
    if (!is_option(completion[i])) continue;
    if (found) return std::nullopt;
    found = option_index(completion[i]);
  }
  return found;
}

}  // namespace grammar_detail

inline ParseResult parse(std::span<const Token> tokens) {
  using namespace grammar_detail;
  ParseResult r;
  GrammarState direct = GrammarState::start();
  GrammarState structured = GrammarState::start();
  GrammarState unstructured = GrammarState::start();
  std::size_t eos_at = tokens.size();
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const Token t = tokens[i];
    direct = next_state(direct, t, Regime::kDirect);
    structured = next_state(structured, t, Regime::kStructured);
    unstructured = next_state(unstructured, t, Regime::kUnstructured);
    if (t == Token::kEos && eos_at == tokens.size()) eos_at = i;
  }
  r.direct_valid = is_accepting(direct, Regime::kDirect);
  r.structured_valid = is_accepting(structured, Regime::kStructured);
  r.unstructured_valid = is_accepting(unstructured, Regime::kUnstructured);
  r.completion_length = eos_at;

  const auto completion = tokens.first(eos_at);
  r.extracted_answer = extract_answer(completion);
  for (std::size_t b = 0; b < kNumBlocks; ++b) {
    const Token open = block_open(static_cast<Block>(b));
    const Token close = block_close(static_cast<Block>(b));
    for (std::size_t i = 0; i < completion.size(); ++i) {
      if (completion[i] != open) continue;
      for (std::size_t j = i + 1; j < completion.size(); ++j) {
        if (completion[j] == close) {
          r.section_spans[b] = TokenRange{i + 1, j};
          break;
        }
      }
      break;
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Text form.
// ---------------------------------------------------------------------------

inline std::string render(std::span<const Token> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += text_of(tokens[i]);
  }
  return out;
}

inline Token token_from_word(std::string_view word) {
  for (std::size_t c = 0; c < kVocabSize; ++c)
    if (kTokenText[c] == word) return token_from_code(c);
  return Token::kContent;
}

/// Whitespace-separated words; anything outside the vocabulary is filler.
inline std::vector<Token> tokenize(std::string_view text) {
  std::vector<Token> out;
  std::size_t i = 0;
  const auto is_space = [](char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
  };
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    std::size_t j = i;
    while (j < text.size() && !is_space(text[j])) ++j;
    if (j > i) out.push_back(token_from_word(text.substr(i, j - i)));
    i = j;
  }
  return out;
}

}  // namespace cotrl
