#pragma once

#include <compare>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pead/textmatch.hpp"

namespace pead::corpus {

enum class Category { glue, leaked_gpts, function_calling, role_play };

std::optional<Category> parse_category(std::string_view name);
std::string_view category_name(Category c);

struct PromptRecord {
  std::string id;
  Category category = Category::glue;
  std::string text;
  std::size_t token_count = 0;

  bool operator==(const PromptRecord&) const = default;
};

enum class Intent { explicit_intent, implicit_intent };

std::optional<Intent> parse_intent(std::string_view name);
std::string_view intent_name(Intent i);

struct AttackPrompt {
  std::string id;
  Intent intent = Intent::explicit_intent;
  std::string text;

  bool operator==(const AttackPrompt&) const = default;
};

/// Reads a JSONL corpus (keys id, category, text), one record per non-blank
/// line, in file order. token_count is filled from `tokenizer`.
/// Throws FormatError naming the line on malformed JSON, missing keys, an
/// unknown category or empty text.
std::vector<PromptRecord> load_corpus(const std::filesystem::path& path,
                                      const textmatch::TokenizerConfig& tokenizer = {});

/// Writes records back as JSONL (id, category, text).
void save_corpus(const std::vector<PromptRecord>& records, const std::filesystem::path& path);

/// Reads a JSONL attack list (keys id, intent, text).
std::vector<AttackPrompt> load_attacks(const std::filesystem::path& path);

/// [lo, hi) token-count interval.
struct LengthBucket {
  std::size_t lo = 0;
  std::size_t hi = 0;

  auto operator<=>(const LengthBucket&) const = default;
  std::string label() const;
};

/// The six power-of-two buckets [16,32) .. [512,1024).
std::vector<LengthBucket> length_buckets();

struct BucketedCorpus {
  std::map<LengthBucket, std::vector<PromptRecord>> buckets;
  std::vector<PromptRecord> overflow;
};

/// Every record lands in exactly one bucket, or in `overflow` when its
/// token_count falls outside [16, 1024). Empty buckets are still present.
BucketedCorpus bucket_by_length(const std::vector<PromptRecord>& records);

} // namespace pead::corpus
