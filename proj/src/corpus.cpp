#include "pead/corpus.hpp"

#include <fstream>
#include <string>

#include "json.hpp"
#include "pead/error.hpp"

namespace pead::corpus {

using nlohmann::json;

namespace {

constexpr std::size_t kMinTokens = 16;
constexpr std::size_t kMaxTokens = 1024;

std::ifstream open_for_read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  return in;
}

std::string where(const std::filesystem::path& path, std::size_t line_no) {
  return " at line " + std::to_string(line_no) + " of " + path.string();
}

std::string string_field(const json& obj, const char* key, const std::filesystem::path& path,
                         std::size_t line_no) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_string()) {
    throw FormatError(std::string("missing string field '") + key + "'" + where(path, line_no));
  }
  return it->get<std::string>();
}

// Calls fn(parsed_object, line_number) for each non-blank line.
template <typename Fn>
void for_each_jsonl(const std::filesystem::path& path, Fn&& fn) {
  auto in = open_for_read(path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw FormatError("malformed JSON" + where(path, line_no) + ": " + e.what());
    }
    if (!obj.is_object()) throw FormatError("expected a JSON object" + where(path, line_no));
    fn(obj, line_no);
  }
}

} // namespace

std::optional<Category> parse_category(std::string_view name) {
  if (name == "glue") return Category::glue;
  if (name == "leaked_gpts") return Category::leaked_gpts;
  if (name == "function_calling") return Category::function_calling;
  if (name == "role_play") return Category::role_play;
  return std::nullopt;
}

std::string_view category_name(Category c) {
  switch (c) {
  case Category::glue: return "glue";
  case Category::leaked_gpts: return "leaked_gpts";
  case Category::function_calling: return "function_calling";
  case Category::role_play: return "role_play";
  }
  return "glue";
}

std::optional<Intent> parse_intent(std::string_view name) {
  if (name == "explicit") return Intent::explicit_intent;
  if (name == "implicit") return Intent::implicit_intent;
  return std::nullopt;
}

std::string_view intent_name(Intent i) {
  return i == Intent::explicit_intent ? "explicit" : "implicit";
}

std::vector<PromptRecord> load_corpus(const std::filesystem::path& path,
                                      const textmatch::TokenizerConfig& tokenizer) {
  std::vector<PromptRecord> out;
  for_each_jsonl(path, [&](const json& obj, std::size_t line_no) {
    PromptRecord rec;
    rec.id = string_field(obj, "id", path, line_no);
    const auto cat = string_field(obj, "category", path, line_no);
    const auto parsed = parse_category(cat);
    if (!parsed) {
      throw FormatError("unknown category '" + cat + "' at line " + std::to_string(line_no));
    }
    rec.category = *parsed;
    rec.text = string_field(obj, "text", path, line_no);
    if (rec.text.empty()) throw FormatError("empty prompt text" + where(path, line_no));
    rec.token_count = textmatch::tokenize(rec.text, tokenizer).size();
    out.push_back(std::move(rec));
  });
  return out;
}

void save_corpus(const std::vector<PromptRecord>& records, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  for (const auto& rec : records) {
    json obj = {{"id", rec.id}, {"category", category_name(rec.category)}, {"text", rec.text}};
    out << obj.dump() << '\n';
  }
}

std::vector<AttackPrompt> load_attacks(const std::filesystem::path& path) {
  std::vector<AttackPrompt> out;
  for_each_jsonl(path, [&](const json& obj, std::size_t line_no) {
    AttackPrompt atk;
    atk.id = string_field(obj, "id", path, line_no);
    const auto intent = string_field(obj, "intent", path, line_no);
    const auto parsed = parse_intent(intent);
    if (!parsed) {
      throw FormatError("unknown intent '" + intent + "' at line " + std::to_string(line_no));
    }
    atk.intent = *parsed;
    atk.text = string_field(obj, "text", path, line_no);
    out.push_back(std::move(atk));
  });
  return out;
}

std::string LengthBucket::label() const {
  return "[" + std::to_string(lo) + "," + std::to_string(hi) + ")";
}

std::vector<LengthBucket> length_buckets() {
  std::vector<LengthBucket> out;
  for (std::size_t lo = kMinTokens; lo < kMaxTokens; lo *= 2) out.push_back({lo, lo * 2});
  return out;
}

BucketedCorpus bucket_by_length(const std::vector<PromptRecord>& records) {
  BucketedCorpus out;
  const auto buckets = length_buckets();
  for (const auto& b : buckets) out.buckets[b];
  for (const auto& rec : records) {
    if (rec.token_count < kMinTokens || rec.token_count >= kMaxTokens) {
      out.overflow.push_back(rec);
      continue;
    }
    std::size_t lo = kMinTokens;
    while (lo * 2 <= rec.token_count) lo *= 2;
    out.buckets[LengthBucket{lo, lo * 2}].push_back(rec);
  }
  return out;
}

} // namespace pead::corpus
