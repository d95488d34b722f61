#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pead/gateway.hpp"

namespace pead::perplexity {

struct LogprobEntry {
  std::string token;
  double logprob = 0.0;  // natural log, <= 0
};

using LogprobSeq = std::vector<LogprobEntry>;

/// exp(-(1/N) * sum(logprob)). Throws std::invalid_argument on an empty input
/// or a non-finite entry.
double perplexity_from_logprobs(std::span<const double> logprobs);
double perplexity_from_logprobs(std::span<const LogprobEntry> seq);

/// Reads a logprob fixture: JSONL of {"token": ..., "logprob": ...}. The
/// first token may carry a null logprob (it has no conditioning context).
/// Returns all entries after the first one.
LogprobSeq load_conditional_logprobs(const std::filesystem::path& path);

/// Perplexity of `prompt` over its tokens after the first.
///
/// With `fixture`, the logprobs come from that file. Otherwise the endpoint is
/// asked to echo prompt logprobs through the completions API
/// (echo=true, logprobs, max_tokens=0). Throws CapabilityError when neither
/// source can provide them.
double measure_prompt_ppl(const gateway::EndpointConfig& cfg, std::string_view prompt,
                          const std::optional<std::filesystem::path>& fixture = std::nullopt);

} // namespace pead::perplexity
