#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace pead::textmatch {

enum class TokenMode { word, character };

struct TokenizerConfig {
  TokenMode mode = TokenMode::word;
  bool casefold = false;
};

/// A tokenized text. Word mode splits on Unicode whitespace and emits runs of
/// word characters and runs of punctuation as separate tokens; character mode
/// emits one token per Unicode scalar value (whitespace included).
struct TokenSeq {
  std::vector<std::string> tokens;
  TokenMode mode = TokenMode::word;

  std::size_t size() const noexcept { return tokens.size(); }
  bool empty() const noexcept { return tokens.empty(); }
  const std::string& operator[](std::size_t i) const { return tokens[i]; }

  /// Tokens joined by single spaces (word mode) or concatenated (char mode).
  std::string joined() const;
  std::string joined(std::size_t begin, std::size_t end) const;

  bool operator==(const TokenSeq&) const = default;
};

TokenSeq tokenize(std::string_view text, TokenMode mode = TokenMode::word);
TokenSeq tokenize(std::string_view text, const TokenizerConfig& cfg);

std::optional<TokenMode> parse_token_mode(std::string_view name);
std::string_view token_mode_name(TokenMode mode);

/// Half-open token range [begin, end).
struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const noexcept { return end - begin; }
  bool empty() const noexcept { return begin == end; }
  bool operator==(const Span&) const = default;
};

enum class CriterionKind { exact, ngram, fuzzy };

/// One extraction criterion: exact match, n-gram fragment, or rho-fuzzy.
/// Text form is "exact", "ngram:<n>" or "fuzzy:<rho>".
struct Criterion {
  CriterionKind kind = CriterionKind::exact;
  std::size_t n = 0;
  double rho = 1.0;

  static Criterion exact() { return {CriterionKind::exact, 0, 1.0}; }
  static Criterion ngram(std::size_t n) { return {CriterionKind::ngram, n, 1.0}; }
  static Criterion fuzzy(double rho) { return {CriterionKind::fuzzy, 0, rho}; }

  /// Throws std::invalid_argument on malformed text.
  static Criterion parse(std::string_view text);
  std::string name() const;
  double threshold() const noexcept { return kind == CriterionKind::fuzzy ? rho : 1.0; }

  bool operator==(const Criterion&) const = default;
};

/// The n-gram sizes and fuzzy thresholds reported in the uncovered-rate tables.
std::vector<Criterion> default_criteria();

struct MatchVerdict {
  Criterion criterion;
  bool matched = false;
  double score = 0.0;
  std::optional<Span> span;
};

/// Prompt occurs as a contiguous run of response tokens. Span is the first
/// occurrence. Throws std::invalid_argument for an empty prompt.
MatchVerdict exact_extract(const TokenSeq& prompt, const TokenSeq& response);

/// Some length-n window of the prompt occurs contiguously in the response.
/// Never matches when the prompt is shorter than n. Throws for n == 0.
MatchVerdict ngram_extract(const TokenSeq& prompt, const TokenSeq& response, std::size_t n);

std::size_t lcs_length(const TokenSeq& a, const TokenSeq& b);

/// Indel distance (insertions and deletions only) between the shorter
/// sequence and its best-aligned contiguous window of the longer one. The
/// empty window is allowed, so the result never exceeds the shorter length.
/// For equal lengths both directions are tried and the smaller is returned,
/// which keeps the distance symmetric.
std::size_t partial_lcs_distance(const TokenSeq& a, const TokenSeq& b);

/// 1 - partial_lcs_distance(a, b) / min(|a|, |b|). Throws if either is empty.
double fuzzy_similarity(const TokenSeq& a, const TokenSeq& b);

struct CandidateSpan {
  Span span;
  double similarity = 0.0;
};

/// Locates the response window that best reproduces the prompt.
///
/// A window w is scored by 1 - d(prompt, w) / min(|prompt|, |w|) where d is
/// the full indel distance, clamped below at 0. The highest score wins; ties
/// go to the earliest start and then the shortest window. When nothing scores
/// above zero the result is the empty span at 0 with similarity 0. A score of
/// exactly 1 is only possible when the prompt occurs verbatim.
CandidateSpan best_candidate_span(const TokenSeq& prompt, const TokenSeq& response);

/// rho-fuzzy verdict built on best_candidate_span.
MatchVerdict fuzzy_extract(const TokenSeq& prompt, const TokenSeq& response, double rho);

/// Dispatches on the criterion kind.
MatchVerdict evaluate(const Criterion& criterion, const TokenSeq& prompt, const TokenSeq& response);

} // namespace pead::textmatch
