#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "pead/corpus.hpp"
#include "pead/defenses.hpp"

namespace pead::gateway {

/// Meta-prompt that splices the hidden prompt [P] and the user turn [U] into
/// one model input.
struct SerializationPattern {
  static constexpr std::string_view kDefaultTemplate = "Instruction: [P] User: [U] Assistant: ";
  static constexpr std::string_view kFunctionCallingPrefix = "You have the following function calling: '";
  static constexpr std::string_view kFunctionCallingSuffix = "' to help users.";

  std::string templ{kDefaultTemplate};
  bool function_calling_variant = false;

  /// Throws ConfigError unless the template holds exactly one [P] and one [U].
  void validate() const;
};

std::string serialize_input(const SerializationPattern& pattern, std::string_view prompt,
                            std::string_view user);

struct SamplingParams {
  int max_tokens = 512;
};

struct EndpointConfig {
  std::string base_url;  // e.g. https://api.openai.com/v1
  std::string model;
  std::string api_key;  // takes precedence over api_key_env
  std::string api_key_env = "OPENAI_API_KEY";
  double timeout_s = 60.0;
  int max_retries = 4;
  int max_parallel = 4;
  std::chrono::milliseconds backoff_base{500};
  SamplingParams sampling;

  /// Throws ConfigError on an empty base_url or max_parallel < 1.
  void validate() const;
  std::string resolved_api_key() const;

  static EndpointConfig from_json(const nlohmann::json& j);
};

struct TokenLogprob {
  std::string token;
  double logprob = 0.0;

  bool operator==(const TokenLogprob&) const = default;
};

struct Transcript {
  std::string prompt_id;
  std::string attack_id;
  std::string defense_id;
  int repetition = 0;
  std::string model;
  std::string serialized_input;
  std::string response_text;
  std::optional<std::vector<TokenLogprob>> token_logprobs;
  std::string created_at;
  std::string cache_key;
  bool logprobs_missing = false;  // logprobs were requested but not returned
  bool truncated = false;         // generation stopped at max_tokens

  bool operator==(const Transcript&) const = default;
};

nlohmann::json to_json(const Transcript& t);
/// Throws FormatError on missing keys or positive logprobs.
Transcript transcript_from_json(const nlohmann::json& j);

/// Hex SHA-256 over the canonical JSON of the request identity.
std::string cache_key(std::string_view model, std::string_view serialized_input,
                      const SamplingParams& sampling, bool want_logprobs, int repetition);

struct HttpResult {
  int status = 0;
  nlohmann::json body;
};

/// POSTs JSON to base_url + path. Retries HTTP 429, 5xx and connection
/// failures with exponential backoff up to cfg.max_retries; 401/403 raise
/// AuthError at once. Other statuses are returned to the caller.
/// `attempts`, when given, receives the number of requests made.
HttpResult post_json(const EndpointConfig& cfg, std::string_view path, const nlohmann::json& body,
                     int* attempts = nullptr);

/// One chat-completions call with the whole serialized input as a single user
/// message. Throws TransportError / AuthError.
Transcript complete(const EndpointConfig& cfg, std::string_view serialized, bool want_logprobs,
                    int repetition = 0);

/// Append-only transcript store: <dir>/transcripts.jsonl plus an index
/// <dir>/index.jsonl of (cache_key, line). Appends are serialized through one
/// writer; torn trailing lines from a crash are ignored on reload.
class TranscriptStore {
public:
  explicit TranscriptStore(std::filesystem::path dir);

  std::optional<Transcript> find(const std::string& key) const;
  /// No-op when the key is already present.
  void append(const Transcript& t);
  std::size_t size() const;
  const std::filesystem::path& dir() const noexcept { return dir_; }

private:
  std::filesystem::path dir_;
  mutable std::mutex mu_;
  std::unordered_map<std::string, std::string> lines_;  // cache_key -> raw JSON line
  std::size_t line_count_ = 0;
  std::ofstream data_;
  std::ofstream index_;
};

struct CellFailure {
  std::string prompt_id;
  std::string attack_id;
  std::string defense_id;
  int repetition = 0;
  std::string error;
};

nlohmann::json to_json(const CellFailure& f);

struct BatchOptions {
  bool want_logprobs = false;
  /// Perplexity oracle for rephrase_ppl defenses.
  defenses::PerplexityFn perplexity;
};

struct BatchResult {
  std::vector<Transcript> transcripts;  // cell order, failed cells omitted
  std::vector<CellFailure> failures;
  std::size_t network_calls = 0;
  std::size_t cache_hits = 0;
};

/// Runs every prompt x attack x defense x repetition cell with at most
/// cfg.max_parallel requests in flight. Cells already in `store` are served
/// from it. Function-calling prompts use the function-calling variant of
/// `pattern`. Individual failures are collected, never thrown.
BatchResult batch_attack(const EndpointConfig& cfg, const SerializationPattern& pattern,
                         const std::vector<corpus::PromptRecord>& prompts,
                         const std::vector<corpus::AttackPrompt>& attacks,
                         const std::vector<defenses::DefenseSpec>& defense_specs, int reps,
                         TranscriptStore& store, const BatchOptions& options = {});

} // namespace pead::gateway
