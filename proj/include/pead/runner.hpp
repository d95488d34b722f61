#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "pead/corpus.hpp"
#include "pead/defenses.hpp"
#include "pead/gateway.hpp"
#include "pead/textmatch.hpp"

namespace pead::runner {

/// Experiment description, loaded from JSON. Relative paths resolve against
/// the config file's directory.
///
/// Keys: corpus, attacks (list of JSONL paths), defenses (list of defense
/// objects, default [{"kind": "none"}]), endpoint, criteria (list of
/// "ngram:N" / "fuzzy:R" / "exact", default the reporting set), reps (5),
/// output_dir, tokenizer {mode, casefold}, pattern {template,
/// function_calling_variant}, cache_dir (default <output_dir>/cache),
/// want_logprobs, measure_ppl, logprob_dir.
struct ExperimentConfig {
  std::filesystem::path corpus;
  std::vector<std::filesystem::path> attacks;
  std::vector<defenses::DefenseSpec> defenses{defenses::DefenseSpec::of(defenses::Kind::none)};
  gateway::EndpointConfig endpoint;
  std::vector<textmatch::Criterion> criteria = textmatch::default_criteria();
  int reps = 5;
  std::filesystem::path output_dir;
  textmatch::TokenizerConfig tokenizer;
  gateway::SerializationPattern pattern;
  std::optional<std::filesystem::path> cache_dir;
  bool want_logprobs = false;
  /// Measure each prompt's perplexity into prompt_ppl.csv.
  bool measure_ppl = false;
  /// Directory of <prompt_id>.jsonl logprob files used before the endpoint.
  std::optional<std::filesystem::path> logprob_dir;

  /// Throws ConfigError.
  void validate() const;
  std::filesystem::path resolved_cache_dir() const;

  static ExperimentConfig from_json(const nlohmann::json& j,
                                    const std::filesystem::path& base_dir = {});
  /// Throws ConfigError when the file is missing or not valid JSON.
  static ExperimentConfig load(const std::filesystem::path& path);
};

/// One (transcript, criterion) verdict.
struct ScoreRow {
  std::string prompt_id;
  std::string attack_id;
  std::string defense_id;
  int repetition = 0;
  std::string criterion;
  bool matched = false;
  double score = 0.0;
};

/// Scores every transcript under every criterion, in transcript order then
/// criterion order. Transcripts naming an unknown prompt are skipped and
/// counted in `skipped`.
std::vector<ScoreRow> score_transcripts(const std::vector<gateway::Transcript>& transcripts,
                                        const std::vector<corpus::PromptRecord>& prompts,
                                        const std::vector<textmatch::Criterion>& criteria,
                                        const textmatch::TokenizerConfig& tokenizer,
                                        std::size_t* skipped = nullptr);

struct RunSummary {
  std::filesystem::path dir;
  std::size_t transcripts = 0;
  std::size_t failures = 0;
  std::size_t skipped = 0;  // malformed or unscorable transcripts
  std::size_t network_calls = 0;
  std::size_t cache_hits = 0;

  bool partial() const noexcept { return failures > 0 || skipped > 0; }
};

/// Attacks every cell, then writes transcripts.jsonl, errors.json,
/// scores.csv, ur_report.json and ur_report.csv into cfg.output_dir (and
/// prompt_ppl.csv when measure_ppl is set).
RunSummary run_experiment(const ExperimentConfig& cfg);

/// Re-scores <output_dir>/transcripts.jsonl without touching the network.
/// Malformed lines are skipped and logged. `criteria` overrides the config.
RunSummary score_experiment(const ExperimentConfig& cfg,
                            const std::optional<std::vector<textmatch::Criterion>>& criteria = {});

/// Reads scores.csv from `dir` and writes report.md (one row per defense,
/// one "mean ± std" column per criterion). With prompt_ppl.csv present it
/// also writes ppl_vs_ur.csv (per-prompt UR per criterion) and spearman.json.
/// Throws FormatError "scores.csv not found" when the scores are missing.
std::filesystem::path report(const std::filesystem::path& dir);

/// Decodes every dump in `dump_dir` (files with a .json sidecar), computes
/// the path indicators and writes, per dump, <out>/<stem>/indicators.json,
/// heads.json and one heatmap pair per indicator. Returns the dump count.
std::size_t split_directory(const std::filesystem::path& dump_dir,
                            const std::filesystem::path& out_dir);

} // namespace pead::runner
