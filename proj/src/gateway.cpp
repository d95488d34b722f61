#include "pead/gateway.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <iostream>
#include <map>
#include <thread>

#include "httplib.h"
#include "pead/error.hpp"

namespace pead::gateway {

using nlohmann::json;

namespace {

constexpr std::string_view kPromptSlot = "[P]";
constexpr std::string_view kUserSlot = "[U]";
constexpr const char* kRephraseAttackId = "__rephrase__";

std::size_t count_occurrences(std::string_view hay, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = hay.find(needle); pos != std::string_view::npos;
       pos = hay.find(needle, pos + needle.size())) {
    ++n;
  }
  return n;
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

struct ParsedUrl {
  std::string scheme_host_port;
  std::string path_prefix;
};

ParsedUrl parse_base_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("base_url needs a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  ParsedUrl out;
  if (path_start == std::string::npos) {
    out.scheme_host_port = url;
  } else {
    out.scheme_host_port = url.substr(0, path_start);
    out.path_prefix = url.substr(path_start);
  }
  while (!out.path_prefix.empty() && out.path_prefix.back() == '/') out.path_prefix.pop_back();
  return out;
}

bool retryable(int status) { return status == 429 || status >= 500; }

std::string describe(const httplib::Result& res) {
  if (res) return "HTTP " + std::to_string(res->status);
  return "connection error: " + httplib::to_string(res.error());
}

} // namespace

// ---------------------------------------------------------------------------
// Serialization

void SerializationPattern::validate() const {
  if (count_occurrences(templ, kPromptSlot) != 1) {
    throw ConfigError("serialization template must contain exactly one [P]: " + templ);
  }
  if (count_occurrences(templ, kUserSlot) != 1) {
    throw ConfigError("serialization template must contain exactly one [U]: " + templ);
  }
}

std::string serialize_input(const SerializationPattern& pattern, std::string_view prompt,
                            std::string_view user) {
  pattern.validate();
  std::string prompt_text;
  if (pattern.function_calling_variant) {
    prompt_text.append(SerializationPattern::kFunctionCallingPrefix)
        .append(prompt)
        .append(SerializationPattern::kFunctionCallingSuffix);
  } else {
    prompt_text.assign(prompt);
  }
  // Substitute on the template only, so slot markers inside the prompt or
  // user text are left verbatim.
  const auto p = pattern.templ.find(kPromptSlot);
  const auto u = pattern.templ.find(kUserSlot);
  const std::string_view t = pattern.templ;
  std::string out;
  if (p < u) {
    out.append(t.substr(0, p)).append(prompt_text);
    out.append(t.substr(p + kPromptSlot.size(), u - p - kPromptSlot.size())).append(user);
    out.append(t.substr(u + kUserSlot.size()));
  } else {
    out.append(t.substr(0, u)).append(user);
    out.append(t.substr(u + kUserSlot.size(), p - u - kUserSlot.size())).append(prompt_text);
    out.append(t.substr(p + kPromptSlot.size()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Endpoint config

void EndpointConfig::validate() const {
  if (base_url.empty()) throw ConfigError("endpoint base_url is empty");
  parse_base_url(base_url);
  if (max_parallel < 1) throw ConfigError("endpoint max_parallel must be >= 1");
  if (max_retries < 0) throw ConfigError("endpoint max_retries must be >= 0");
  if (sampling.max_tokens < 0) throw ConfigError("endpoint max_tokens must be >= 0");
  if (!(timeout_s > 0.0)) throw ConfigError("endpoint timeout must be positive");
}

std::string EndpointConfig::resolved_api_key() const {
  if (!api_key.empty()) return api_key;
  if (api_key_env.empty()) return {};
  const char* v = std::getenv(api_key_env.c_str());
  return v ? std::string(v) : std::string{};
}

EndpointConfig EndpointConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("endpoint must be a JSON object");
  EndpointConfig c;
  try {
    c.base_url = j.value("base_url", std::string{});
    c.model = j.value("model", std::string{});
    c.api_key_env = j.value("api_key_env", c.api_key_env);
    c.timeout_s = j.value("timeout_s", c.timeout_s);
    c.max_retries = j.value("max_retries", c.max_retries);
    c.max_parallel = j.value("max_parallel", c.max_parallel);
    c.backoff_base = std::chrono::milliseconds(j.value("backoff_ms", c.backoff_base.count()));
    c.sampling.max_tokens = j.value("max_tokens", c.sampling.max_tokens);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad endpoint config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Transcripts

json to_json(const Transcript& t) {
  json lp = nullptr;
  if (t.token_logprobs) {
    lp = json::array();
    for (const auto& e : *t.token_logprobs) lp.push_back({{"token", e.token}, {"logprob", e.logprob}});
  }
  return {{"prompt_id", t.prompt_id},
          {"attack_id", t.attack_id},
          {"defense_id", t.defense_id},
          {"repetition", t.repetition},
          {"model", t.model},
          {"serialized_input", t.serialized_input},
          {"response_text", t.response_text},
          {"token_logprobs", lp},
          {"created_at", t.created_at},
          {"cache_key", t.cache_key},
          {"logprobs_missing", t.logprobs_missing},
          {"truncated", t.truncated}};
}

Transcript transcript_from_json(const json& j) {
  Transcript t;
  try {
    t.prompt_id = j.at("prompt_id").get<std::string>();
    t.attack_id = j.at("attack_id").get<std::string>();
    t.defense_id = j.at("defense_id").get<std::string>();
    t.repetition = j.at("repetition").get<int>();
    t.model = j.at("model").get<std::string>();
    t.serialized_input = j.at("serialized_input").get<std::string>();
    t.response_text = j.at("response_text").get<std::string>();
    t.created_at = j.value("created_at", std::string{});
    t.cache_key = j.at("cache_key").get<std::string>();
    t.logprobs_missing = j.value("logprobs_missing", false);
    t.truncated = j.value("truncated", false);
    if (auto it = j.find("token_logprobs"); it != j.end() && !it->is_null()) {
      std::vector<TokenLogprob> lps;
      for (const auto& e : *it) {
        TokenLogprob entry{e.at("token").get<std::string>(), e.at("logprob").get<double>()};
        if (entry.logprob > 0.0) throw FormatError("transcript logprob is positive");
        lps.push_back(std::move(entry));
      }
      t.token_logprobs = std::move(lps);
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed transcript: ") + e.what());
  }
  return t;
}

std::string cache_key(std::string_view model, std::string_view serialized_input,
                      const SamplingParams& sampling, bool want_logprobs, int repetition) {
  const json identity = {{"model", model},
                         {"input", serialized_input},
                         {"max_tokens", sampling.max_tokens},
                         {"logprobs", want_logprobs},
                         {"repetition", repetition}};
  return sha256_hex(identity.dump());
}

// ---------------------------------------------------------------------------
// HTTP

HttpResult post_json(const EndpointConfig& cfg, std::string_view path, const json& body,
                     int* attempts) {
  const auto url = parse_base_url(cfg.base_url);
  httplib::Client client(url.scheme_host_port);
  const auto secs = static_cast<time_t>(cfg.timeout_s);
  const auto usecs = static_cast<time_t>((cfg.timeout_s - static_cast<double>(secs)) * 1e6);
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);

  httplib::Headers headers;
  if (const auto key = cfg.resolved_api_key(); !key.empty()) {
    headers.emplace("Authorization", "Bearer " + key);
  }
  const std::string target = url.path_prefix + std::string(path);
  const std::string payload = body.dump();

  const int max_attempts = cfg.max_retries + 1;
  std::string last;
  for (int attempt = 1; attempt <= max_attempts; ++attempt) {
    if (attempts) *attempts = attempt;
    auto res = client.Post(target, headers, payload, "application/json");
    if (res && (res->status == 401 || res->status == 403)) {
      throw AuthError("endpoint rejected credentials (HTTP " + std::to_string(res->status) + ")");
    }
    if (res && !retryable(res->status)) {
      HttpResult out;
      out.status = res->status;
      if (!res->body.empty()) {
        out.body = json::parse(res->body, nullptr, /*allow_exceptions=*/false);
        if (out.body.is_discarded()) {
          if (res->status / 100 == 2) throw TransportError("endpoint returned invalid JSON");
          out.body = json{{"error", res->body}};
        }
      }
      return out;
    }
    last = describe(res);
    if (attempt < max_attempts) {
      std::this_thread::sleep_for(cfg.backoff_base * (1LL << std::min(attempt - 1, 16)));
    }
  }
  throw TransportError("request to " + cfg.base_url + std::string(path) + " failed after " +
                       std::to_string(max_attempts) + " attempts (" + last + ")");
}

Transcript complete(const EndpointConfig& cfg, std::string_view serialized, bool want_logprobs,
                    int repetition) {
  json body = {{"model", cfg.model},
               {"messages", json::array({{{"role", "user"}, {"content", serialized}}})},
               {"max_tokens", cfg.sampling.max_tokens}};
  if (want_logprobs) body["logprobs"] = true;

  const auto res = post_json(cfg, "/chat/completions", body);
  if (res.status / 100 != 2) {
    throw TransportError("chat completion failed with HTTP " + std::to_string(res.status) + ": " +
                         res.body.dump());
  }

  Transcript t;
  t.model = cfg.model;
  t.serialized_input = std::string(serialized);
  t.repetition = repetition;
  t.created_at = utc_now();
  t.cache_key = cache_key(cfg.model, serialized, cfg.sampling, want_logprobs, repetition);
  try {
    const auto& choice = res.body.at("choices").at(0);
    if (auto msg = choice.find("message"); msg != choice.end()) {
      const auto& content = msg->value("content", json(nullptr));
      t.response_text = content.is_string() ? content.get<std::string>() : std::string{};
    } else {
      t.response_text = choice.value("text", std::string{});
    }
    t.truncated = choice.value("finish_reason", json(nullptr)) == "length";
    if (want_logprobs) {
      const auto lp = choice.value("logprobs", json(nullptr));
      if (lp.is_object() && lp.contains("content") && lp.at("content").is_array()) {
        std::vector<TokenLogprob> entries;
        for (const auto& e : lp.at("content")) {
          entries.push_back({e.at("token").get<std::string>(),
                             std::min(0.0, e.at("logprob").get<double>())});
        }
        t.token_logprobs = std::move(entries);
      } else {
        t.logprobs_missing = true;
      }
    }
  } catch (const json::exception& e) {
    throw TransportError(std::string("unexpected chat completion response: ") + e.what());
  }
  return t;
}

// ---------------------------------------------------------------------------
// Transcript store

TranscriptStore::TranscriptStore(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
  const auto data_path = dir_ / "transcripts.jsonl";
  if (std::ifstream in(data_path); in) {
    std::string line;
    while (std::getline(in, line)) {
      ++line_count_;
      const auto j = json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.is_object() || !j.contains("cache_key")) continue;
      lines_.emplace(j["cache_key"].get<std::string>(), line);
    }
  }
  bool torn_tail = false;
  if (std::ifstream tail(data_path, std::ios::binary | std::ios::ate); tail && tail.tellg() > 0) {
    tail.seekg(-1, std::ios::end);
    torn_tail = tail.get() != '\n';
  }
  data_.open(data_path, std::ios::binary | std::ios::app);
  index_.open(dir_ / "index.jsonl", std::ios::binary | std::ios::app);
  if (!data_ || !index_) throw Error("cannot open transcript store in " + dir_.string());
  if (torn_tail) data_ << '\n' << std::flush;
}

std::optional<Transcript> TranscriptStore::find(const std::string& key) const {
  std::lock_guard lock(mu_);
  auto it = lines_.find(key);
  if (it == lines_.end()) return std::nullopt;
  return transcript_from_json(json::parse(it->second));
}

void TranscriptStore::append(const Transcript& t) {
  const auto line = to_json(t).dump();
  std::lock_guard lock(mu_);
  if (lines_.contains(t.cache_key)) return;
  data_ << line << '\n';
  data_.flush();
  index_ << json{{"cache_key", t.cache_key}, {"line", line_count_}}.dump() << '\n';
  index_.flush();
  ++line_count_;
  lines_.emplace(t.cache_key, line);
}

std::size_t TranscriptStore::size() const {
  std::lock_guard lock(mu_);
  return lines_.size();
}

// ---------------------------------------------------------------------------
// Batches

json to_json(const CellFailure& f) {
  return {{"prompt_id", f.prompt_id},
          {"attack_id", f.attack_id},
          {"defense_id", f.defense_id},
          {"repetition", f.repetition},
          {"error", f.error}};
}

namespace {

struct Cell {
  std::size_t prompt;
  std::size_t attack;
  std::size_t defense;
  int repetition;
};

// Fetches through the store: returns the cached transcript if present,
// otherwise calls the endpoint and persists the result.
Transcript fetch(const EndpointConfig& cfg, TranscriptStore& store, const std::string& serialized,
                 bool want_logprobs, int repetition, std::atomic<std::size_t>& calls,
                 std::atomic<std::size_t>& hits, const std::string& prompt_id,
                 const std::string& attack_id, const std::string& defense_id) {
  const auto key = cache_key(cfg.model, serialized, cfg.sampling, want_logprobs, repetition);
  if (auto cached = store.find(key)) {
    ++hits;
    cached->prompt_id = prompt_id;
    cached->attack_id = attack_id;
    cached->defense_id = defense_id;
    return *cached;
  }
  ++calls;
  auto t = complete(cfg, serialized, want_logprobs, repetition);
  t.prompt_id = prompt_id;
  t.attack_id = attack_id;
  t.defense_id = defense_id;
  store.append(t);
  return t;
}

} // namespace

BatchResult batch_attack(const EndpointConfig& cfg, const SerializationPattern& pattern,
                         const std::vector<corpus::PromptRecord>& prompts,
                         const std::vector<corpus::AttackPrompt>& attacks,
                         const std::vector<defenses::DefenseSpec>& defense_specs, int reps,
                         TranscriptStore& store, const BatchOptions& options) {
  cfg.validate();
  pattern.validate();
  if (prompts.empty() || attacks.empty() || defense_specs.empty()) {
    throw std::invalid_argument("batch_attack: prompts, attacks and defenses must be non-empty");
  }
  if (reps < 1) throw std::invalid_argument("batch_attack: reps must be >= 1");

  std::atomic<std::size_t> calls{0};
  std::atomic<std::size_t> hits{0};

  // Defended prompt text per (prompt, defense); nullopt with an error message
  // when the defense itself could not be applied.
  std::vector<std::optional<std::string>> defended(prompts.size() * defense_specs.size());
  std::vector<std::string> defense_errors(defended.size());
  for (std::size_t p = 0; p < prompts.size(); ++p) {
    for (std::size_t d = 0; d < defense_specs.size(); ++d) {
      const auto& spec = defense_specs[d];
      const auto slot = p * defense_specs.size() + d;
      try {
        if (spec.kind == defenses::Kind::rephrase_ppl) {
          auto complete_fn = [&](const std::string& request, int sample) {
            return fetch(cfg, store, request, false, sample, calls, hits, prompts[p].id,
                         kRephraseAttackId, spec.label())
                .response_text;
          };
          defended[slot] =
              defenses::rephrase_ppl(spec, prompts[p].text, complete_fn, options.perplexity).text;
        } else {
          defended[slot] = defenses::apply(spec, prompts[p].text);
        }
      } catch (const std::exception& e) {
        defense_errors[slot] = e.what();
      }
    }
  }

  std::vector<Cell> cells;
  cells.reserve(prompts.size() * attacks.size() * defense_specs.size() *
                static_cast<std::size_t>(reps));
  for (std::size_t p = 0; p < prompts.size(); ++p)
    for (std::size_t a = 0; a < attacks.size(); ++a)
      for (std::size_t d = 0; d < defense_specs.size(); ++d)
        for (int r = 0; r < reps; ++r) cells.push_back({p, a, d, r});

  std::vector<std::optional<Transcript>> results(cells.size());
  std::vector<std::string> errors(cells.size());
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      const auto& cell = cells[i];
      const auto& prompt = prompts[cell.prompt];
      const auto slot = cell.prompt * defense_specs.size() + cell.defense;
      if (!defended[slot]) {
        errors[i] = "defense failed: " + defense_errors[slot];
        continue;
      }
      SerializationPattern pat = pattern;
      if (prompt.category == corpus::Category::function_calling) pat.function_calling_variant = true;
      try {
        const auto serialized = serialize_input(pat, *defended[slot], attacks[cell.attack].text);
        results[i] = fetch(cfg, store, serialized, options.want_logprobs, cell.repetition, calls,
                           hits, prompt.id, attacks[cell.attack].id,
                           defense_specs[cell.defense].label());
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };

  const auto n_workers =
      std::min<std::size_t>(static_cast<std::size_t>(cfg.max_parallel), cells.size());
  {
    std::vector<std::jthread> pool;
    pool.reserve(n_workers);
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  }

  BatchResult out;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (results[i]) {
      out.transcripts.push_back(std::move(*results[i]));
    } else {
      const auto& cell = cells[i];
      out.failures.push_back({prompts[cell.prompt].id, attacks[cell.attack].id,
                              defense_specs[cell.defense].label(), cell.repetition, errors[i]});
    }
  }
  out.network_calls = calls.load();
  out.cache_hits = hits.load();
  return out;
}

} // namespace pead::gateway
