#include "pead/perplexity.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "pead/error.hpp"

namespace pead::perplexity {

using nlohmann::json;

double perplexity_from_logprobs(std::span<const double> logprobs) {
  if (logprobs.empty()) throw std::invalid_argument("perplexity: empty logprob sequence");
  double sum = 0.0;
  for (double lp : logprobs) {
    if (!std::isfinite(lp)) throw std::invalid_argument("perplexity: non-finite logprob");
    sum += lp;
  }
  return std::exp(-sum / static_cast<double>(logprobs.size()));
}

double perplexity_from_logprobs(std::span<const LogprobEntry> seq) {
  std::vector<double> lps;
  lps.reserve(seq.size());
  for (const auto& e : seq) lps.push_back(e.logprob);
  return perplexity_from_logprobs(lps);
}

LogprobSeq load_conditional_logprobs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open logprob file " + path.string());
  LogprobSeq out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("token")) {
      throw FormatError("malformed logprob entry at line " + std::to_string(line_no) + " of " +
                        path.string());
    }
    if (line_no == 1) continue;  // unconditioned first token
    const auto& lp = j.value("logprob", json(nullptr));
    if (!lp.is_number()) {
      throw FormatError("missing logprob at line " + std::to_string(line_no) + " of " +
                        path.string());
    }
    out.push_back({j["token"].get<std::string>(), lp.get<double>()});
  }
  return out;
}

double measure_prompt_ppl(const gateway::EndpointConfig& cfg, std::string_view prompt,
                          const std::optional<std::filesystem::path>& fixture) {
  if (fixture) {
    const auto seq = load_conditional_logprobs(*fixture);
    if (seq.empty()) throw CapabilityError("logprob fixture has fewer than two tokens");
    return perplexity_from_logprobs(seq);
  }
  if (cfg.base_url.empty()) {
    throw CapabilityError("no logprob fixture and no endpoint to measure prompt perplexity");
  }
  const json body = {{"model", cfg.model},
                     {"prompt", prompt},
                     {"max_tokens", 0},
                     {"echo", true},
                     {"logprobs", 0}};
  const auto res = gateway::post_json(cfg, "/completions", body);
  if (res.status == 400 || res.status == 404 || res.status == 405 || res.status == 501) {
    throw CapabilityError("endpoint cannot echo prompt logprobs (HTTP " +
                          std::to_string(res.status) + ")");
  }
  if (res.status / 100 != 2) {
    throw TransportError("prompt logprob request failed with HTTP " + std::to_string(res.status));
  }
  std::vector<double> lps;
  try {
    const auto& choice = res.body.at("choices").at(0);
    const auto lp = choice.value("logprobs", json(nullptr));
    if (!lp.is_object() || !lp.contains("token_logprobs")) {
      throw CapabilityError("endpoint response carries no prompt logprobs");
    }
    const auto& values = lp.at("token_logprobs");
    for (std::size_t i = 1; i < values.size(); ++i) {
      if (!values[i].is_number()) throw CapabilityError("endpoint returned a null prompt logprob");
      lps.push_back(values[i].get<double>());
    }
  } catch (const json::exception& e) {
    throw CapabilityError(std::string("unexpected logprob response: ") + e.what());
  }
  if (lps.empty()) throw CapabilityError("prompt has fewer than two tokens");
  return perplexity_from_logprobs(lps);
}

} // namespace pead::perplexity
