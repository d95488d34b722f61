#include "pead/defenses.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "pead/error.hpp"

namespace pead::defenses {

namespace {

std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> words;
  std::istringstream in{std::string(text)};
  std::string w;
  while (in >> w) words.push_back(std::move(w));
  return words;
}

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out.push_back(' ');
    out += words[i];
  }
  return out;
}

bool is_pool_symbol(std::string_view word) {
  return word.size() == 1 &&
         std::find(fixtures::kSymbolPool.begin(), fixtures::kSymbolPool.end(), word[0]) !=
             fixtures::kSymbolPool.end();
}

std::string place(std::string_view sentence, std::string_view prompt, Placement where) {
  std::string out;
  if (where == Placement::prepend) {
    out.append(sentence).append(" ").append(prompt);
  } else {
    out.append(prompt).append(" ").append(sentence);
  }
  return out;
}

} // namespace

std::optional<Kind> parse_kind(std::string_view name) {
  if (name == "none") return Kind::none;
  if (name == "direct") return Kind::direct;
  if (name == "random_insertion") return Kind::random_insertion;
  if (name == "rephrase_ppl") return Kind::rephrase_ppl;
  if (name == "local_lookup") return Kind::local_lookup;
  if (name == "repeated_prefix") return Kind::repeated_prefix;
  if (name == "fake_prompt") return Kind::fake_prompt;
  return std::nullopt;
}

std::string_view kind_name(Kind k) {
  switch (k) {
  case Kind::none: return "none";
  case Kind::direct: return "direct";
  case Kind::random_insertion: return "random_insertion";
  case Kind::rephrase_ppl: return "rephrase_ppl";
  case Kind::local_lookup: return "local_lookup";
  case Kind::repeated_prefix: return "repeated_prefix";
  case Kind::fake_prompt: return "fake_prompt";
  }
  return "none";
}

DefenseSpec DefenseSpec::of(Kind kind) {
  DefenseSpec s;
  s.kind = kind;
  return s;
}

DefenseSpec DefenseSpec::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("defense spec must be a JSON object");
  const auto kind_str = j.value("kind", std::string{});
  const auto kind = parse_kind(kind_str);
  if (!kind) throw ConfigError("unknown defense kind '" + kind_str + "'");
  DefenseSpec s = of(*kind);
  try {
    s.id = j.value("id", std::string{});
    s.seed = j.value("seed", std::uint64_t{0});
    s.insertion_rate = j.value("rate", fixtures::kDefaultInsertionRate);
    s.samples = j.value("samples", 1);
    s.prefix_unit = j.value("unit", std::string(fixtures::kRepeatedPrefixUnit));
    s.prefix_count = j.value("count", fixtures::kRepeatedPrefixCount);
    s.fake_text = j.value("fake_text", std::string(fixtures::kFakePrompt));
    s.sentence = j.value("sentence", std::string{});
    if (j.contains("direction")) {
      const auto d = j.at("direction").get<std::string>();
      if (d != "higher" && d != "lower") throw ConfigError("direction must be higher or lower");
      s.direction = d == "higher" ? Direction::higher : Direction::lower;
    }
    if (j.contains("placement")) {
      const auto p = j.at("placement").get<std::string>();
      if (p != "prepend" && p != "append") throw ConfigError("placement must be prepend or append");
      s.placement = p == "prepend" ? Placement::prepend : Placement::append;
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad defense spec: ") + e.what());
  }
  if (s.kind == Kind::random_insertion && !(s.insertion_rate > 0.0 && s.insertion_rate <= 1.0)) {
    throw ConfigError("random_insertion rate must lie in (0, 1]");
  }
  if (s.samples < 1) throw ConfigError("rephrase samples must be >= 1");
  if (s.prefix_count < 0) throw ConfigError("prefix count must be >= 0");
  return s;
}

nlohmann::json DefenseSpec::to_json() const {
  nlohmann::json j = {{"id", label()}, {"kind", kind_name(kind)}};
  switch (kind) {
  case Kind::random_insertion:
    j["seed"] = seed;
    j["rate"] = insertion_rate;
    break;
  case Kind::rephrase_ppl:
    j["samples"] = samples;
    j["direction"] = direction == Direction::higher ? "higher" : "lower";
    break;
  case Kind::repeated_prefix:
    j["unit"] = prefix_unit;
    j["count"] = prefix_count;
    break;
  case Kind::fake_prompt:
    j["fake_text"] = fake_text;
    break;
  case Kind::direct:
  case Kind::local_lookup:
    if (!sentence.empty()) j["sentence"] = sentence;
    if (placement) j["placement"] = *placement == Placement::prepend ? "prepend" : "append";
    break;
  case Kind::none:
    break;
  }
  return j;
}

std::string static_transform(const DefenseSpec& spec, std::string_view prompt) {
  switch (spec.kind) {
  case Kind::direct:
    return place(spec.sentence.empty() ? fixtures::kDirectSentence : spec.sentence, prompt,
                 spec.placement.value_or(Placement::append));
  case Kind::local_lookup:
    return place(spec.sentence.empty() ? fixtures::kLocalLookupSentence : spec.sentence, prompt,
                 spec.placement.value_or(Placement::prepend));
  case Kind::repeated_prefix: {
    std::string out;
    for (int i = 0; i < spec.prefix_count; ++i) out += spec.prefix_unit;
    out.push_back(' ');
    out.append(prompt);
    return out;
  }
  case Kind::fake_prompt:
    return spec.fake_text + std::string(prompt);
  default:
    throw std::invalid_argument("static_transform: '" + std::string(kind_name(spec.kind)) +
                                "' is not a static defense");
  }
}

std::string random_insertion(const DefenseSpec& spec, std::string_view prompt) {
  if (spec.kind != Kind::random_insertion) {
    throw std::invalid_argument("random_insertion: spec kind is not random_insertion");
  }
  if (!(spec.insertion_rate > 0.0 && spec.insertion_rate <= 1.0)) {
    throw std::invalid_argument("random_insertion: rate must lie in (0, 1]");
  }
  const auto words = split_whitespace(prompt);
  if (words.empty()) throw std::invalid_argument("random_insertion: empty prompt");

  // Raw engine draws rather than <random> distributions, whose output is
  // implementation-defined; this keeps outputs identical across toolchains.
  std::mt19937_64 rng(spec.seed);
  auto uniform01 = [&] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
  std::vector<std::string> out;
  out.reserve(words.size() * 2 + 1);
  for (std::size_t boundary = 0; boundary <= words.size(); ++boundary) {
    if (uniform01() < spec.insertion_rate) {
      const auto pick = rng() % fixtures::kSymbolPool.size();
      out.emplace_back(1, fixtures::kSymbolPool[pick]);
    }
    if (boundary < words.size()) out.push_back(words[boundary]);
  }
  return join(out);
}

std::string strip_inserted_symbols(std::string_view text) {
  auto words = split_whitespace(text);
  std::erase_if(words, [](const std::string& w) { return is_pool_symbol(w); });
  return join(words);
}

std::string apply(const DefenseSpec& spec, std::string_view prompt) {
  switch (spec.kind) {
  case Kind::none:
    return std::string(prompt);
  case Kind::random_insertion:
    return random_insertion(spec, prompt);
  case Kind::rephrase_ppl:
    throw std::invalid_argument("rephrase_ppl needs a model endpoint; use rephrase_ppl()");
  default:
    return static_transform(spec, prompt);
  }
}

RephraseResult rephrase_ppl(const DefenseSpec& spec, std::string_view prompt,
                            const CompleteFn& complete, const PerplexityFn& ppl) {
  if (spec.kind != Kind::rephrase_ppl) {
    throw std::invalid_argument("rephrase_ppl: spec kind is not rephrase_ppl");
  }
  if (!ppl) throw CapabilityError("rephrase_ppl: no perplexity oracle available");
  if (spec.samples < 1) throw std::invalid_argument("rephrase_ppl: samples must be >= 1");

  const std::string request = std::string(fixtures::kRephraseInstruction) + std::string(prompt);
  std::optional<RephraseResult> best;
  std::string last_error;
  for (int sample = 0; sample < spec.samples; ++sample) {
    std::string candidate;
    try {
      candidate = complete(request, sample);
    } catch (const TransportError& e) {
      last_error = e.what();
      continue;
    }
    if (spec.samples == 1) return {candidate, ppl(candidate)};
    const double score = ppl(candidate);
    const bool better = !best || (spec.direction == Direction::higher ? score > best->perplexity
                                                                     : score < best->perplexity);
    if (better) best = RephraseResult{std::move(candidate), score};
  }
  if (!best) throw TransportError("rephrase_ppl: every rephrase request failed: " + last_error);
  return *best;
}

nlohmann::json load_fixture_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("malformed defense fixture file " + path.string() + ": " + e.what());
  }
}

} // namespace pead::defenses
