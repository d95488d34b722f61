#include "pead/runner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "pead/attention.hpp"
#include "pead/error.hpp"
#include "pead/metrics.hpp"
#include "pead/perplexity.hpp"

namespace pead::runner {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void log_warn(const std::string& msg) { std::cerr << "pead: " << msg << '\n'; }

std::string fmt6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

std::vector<std::string> parse_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << content;
}

fs::path resolve(const fs::path& base, const fs::path& p) {
  return p.is_relative() && !base.empty() ? base / p : p;
}

// UR reports per defense, in order of first appearance.
using DefenseReports = std::vector<std::pair<std::string, std::vector<metrics::URReport>>>;

DefenseReports aggregate_scores(const std::vector<ScoreRow>& rows) {
  std::vector<std::string> defense_order;
  std::vector<std::string> criterion_order;
  // (defense, criterion, attack, rep) -> prompt -> matched
  std::map<std::tuple<std::string, std::string, std::string, int>, std::map<std::string, bool>> cells;
  for (const auto& r : rows) {
    if (std::find(defense_order.begin(), defense_order.end(), r.defense_id) == defense_order.end())
      defense_order.push_back(r.defense_id);
    if (std::find(criterion_order.begin(), criterion_order.end(), r.criterion) ==
        criterion_order.end())
      criterion_order.push_back(r.criterion);
    cells[{r.defense_id, r.criterion, r.attack_id, r.repetition}][r.prompt_id] = r.matched;
  }

  DefenseReports out;
  for (const auto& d : defense_order) {
    std::vector<metrics::URReport> reports;
    for (const auto& c : criterion_order) {
      std::vector<metrics::RunScore> runs;
      for (const auto& [key, verdicts] : cells) {
        if (std::get<0>(key) != d || std::get<1>(key) != c) continue;
        runs.push_back({std::get<2>(key), std::get<3>(key), metrics::uncovered_rate(verdicts)});
      }
      if (!runs.empty()) reports.push_back(metrics::aggregate_runs(runs, c));
    }
    out.emplace_back(d, std::move(reports));
  }
  return out;
}

std::string scores_csv(const std::vector<ScoreRow>& rows) {
  std::string out = "prompt_id,attack_id,defense_id,repetition,criterion,matched,score\n";
  for (const auto& r : rows) {
    out += csv_field(r.prompt_id) + ',' + csv_field(r.attack_id) + ',' + csv_field(r.defense_id) +
           ',' + std::to_string(r.repetition) + ',' + csv_field(r.criterion) + ',' +
           (r.matched ? "1" : "0") + ',' + fmt6(r.score) + '\n';
  }
  return out;
}

std::vector<ScoreRow> read_scores_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("scores.csv not found");
  std::string line;
  std::getline(in, line);
  std::vector<ScoreRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = parse_csv_line(line);
    if (f.size() != 7) {
      throw FormatError("scores.csv line " + std::to_string(line_no) + " has " +
                        std::to_string(f.size()) + " fields, expected 7");
    }
    try {
      rows.push_back({f[0], f[1], f[2], std::stoi(f[3]), f[4], f[5] == "1", std::stod(f[6])});
    } catch (const std::exception&) {
      throw FormatError("scores.csv line " + std::to_string(line_no) + " is malformed");
    }
  }
  return rows;
}

void write_ur_reports(const fs::path& dir, const DefenseReports& reports) {
  json j = json::array();
  std::set<std::string> attacks;
  for (const auto& [defense, rs] : reports) {
    json crit = json::array();
    for (const auto& r : rs) {
      crit.push_back(metrics::to_json(r));
      for (const auto& [a, _] : r.per_attack) attacks.insert(a);
    }
    j.push_back({{"defense", defense}, {"criteria", std::move(crit)}});
  }
  write_file(dir / "ur_report.json", j.dump(2) + '\n');

  std::string csv = "defense,criterion,mean,std";
  for (const auto& a : attacks) csv += ',' + csv_field(a);
  csv += '\n';
  for (const auto& [defense, rs] : reports) {
    for (const auto& r : rs) {
      csv += csv_field(defense) + ',' + csv_field(r.criterion) + ',' + fmt6(r.mean) + ',' +
             fmt6(r.std);
      for (const auto& a : attacks) {
        csv += ',';
        if (const auto it = r.per_attack.find(a); it != r.per_attack.end()) csv += fmt6(it->second);
      }
      csv += '\n';
    }
  }
  write_file(dir / "ur_report.csv", csv);
}

std::size_t write_scores(const ExperimentConfig& cfg, const std::vector<gateway::Transcript>& ts,
                         const std::vector<corpus::PromptRecord>& prompts,
                         const std::vector<textmatch::Criterion>& criteria) {
  std::size_t skipped = 0;
  const auto rows = score_transcripts(ts, prompts, criteria, cfg.tokenizer, &skipped);
  write_file(cfg.output_dir / "scores.csv", scores_csv(rows));
  write_ur_reports(cfg.output_dir, aggregate_scores(rows));
  return skipped;
}

void write_prompt_ppl(const ExperimentConfig& cfg, const std::vector<corpus::PromptRecord>& prompts) {
  std::string csv = "prompt_id,ppl\n";
  for (const auto& p : prompts) {
    std::optional<fs::path> fixture;
    if (cfg.logprob_dir) {
      const auto candidate = *cfg.logprob_dir / (p.id + ".jsonl");
      if (fs::exists(candidate)) fixture = candidate;
    }
    try {
      const double ppl = perplexity::measure_prompt_ppl(cfg.endpoint, p.text, fixture);
      csv += csv_field(p.id) + ',' + fmt17(ppl) + '\n';
    } catch (const Error& e) {
      log_warn("no perplexity for prompt '" + p.id + "': " + e.what());
    }
  }
  write_file(cfg.output_dir / "prompt_ppl.csv", csv);
}

std::vector<corpus::AttackPrompt> load_all_attacks(const ExperimentConfig& cfg) {
  std::vector<corpus::AttackPrompt> out;
  for (const auto& path : cfg.attacks) {
    auto part = corpus::load_attacks(path);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

} // namespace

// ---------------------------------------------------------------------------
// Config

void ExperimentConfig::validate() const {
  if (corpus.empty()) throw ConfigError("config: 'corpus' is required");
  if (attacks.empty()) throw ConfigError("config: 'attacks' must list at least one file");
  if (defenses.empty()) throw ConfigError("config: 'defenses' must not be empty");
  if (criteria.empty()) throw ConfigError("config: 'criteria' must not be empty");
  if (reps < 1) throw ConfigError("config: 'reps' must be at least 1");
  if (output_dir.empty()) throw ConfigError("config: 'output_dir' is required");
  std::set<std::string> ids;
  for (const auto& d : defenses) {
    if (!ids.insert(d.label()).second) {
      throw ConfigError("config: duplicate defense id '" + d.label() + "'");
    }
  }
  pattern.validate();
  endpoint.validate();
}

fs::path ExperimentConfig::resolved_cache_dir() const {
  return cache_dir ? *cache_dir : output_dir / "cache";
}

ExperimentConfig ExperimentConfig::from_json(const json& j, const fs::path& base_dir) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  ExperimentConfig cfg;
  try {
    cfg.corpus = resolve(base_dir, j.at("corpus").get<std::string>());
    for (const auto& a : j.at("attacks")) cfg.attacks.push_back(resolve(base_dir, a.get<std::string>()));
    if (j.contains("defenses")) {
      cfg.defenses.clear();
      for (const auto& d : j.at("defenses")) cfg.defenses.push_back(defenses::DefenseSpec::from_json(d));
    }
    cfg.endpoint = gateway::EndpointConfig::from_json(j.at("endpoint"));
    if (j.contains("criteria")) {
      cfg.criteria.clear();
      for (const auto& c : j.at("criteria")) {
        try {
          cfg.criteria.push_back(textmatch::Criterion::parse(c.get<std::string>()));
        } catch (const std::invalid_argument& e) {
          throw ConfigError(std::string("config: ") + e.what());
        }
      }
    }
    cfg.reps = j.value("reps", 5);
    cfg.output_dir = resolve(base_dir, j.at("output_dir").get<std::string>());
    if (j.contains("tokenizer")) {
      const auto& t = j.at("tokenizer");
      const auto mode_name = t.value("mode", std::string("word"));
      const auto mode = textmatch::parse_token_mode(mode_name);
      if (!mode) throw ConfigError("config: unknown tokenizer mode '" + mode_name + "'");
      cfg.tokenizer.mode = *mode;
      cfg.tokenizer.casefold = t.value("casefold", false);
    }
    if (j.contains("pattern")) {
      const auto& p = j.at("pattern");
      cfg.pattern.templ = p.value("template", std::string(gateway::SerializationPattern::kDefaultTemplate));
      cfg.pattern.function_calling_variant = p.value("function_calling_variant", false);
    }
    if (j.contains("cache_dir")) cfg.cache_dir = resolve(base_dir, j.at("cache_dir").get<std::string>());
    cfg.want_logprobs = j.value("want_logprobs", false);
    cfg.measure_ppl = j.value("measure_ppl", false);
    if (j.contains("logprob_dir")) {
      cfg.logprob_dir = resolve(base_dir, j.at("logprob_dir").get<std::string>());
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j, path.parent_path());
}

// ---------------------------------------------------------------------------
// Scoring

std::vector<ScoreRow> score_transcripts(const std::vector<gateway::Transcript>& transcripts,
                                        const std::vector<corpus::PromptRecord>& prompts,
                                        const std::vector<textmatch::Criterion>& criteria,
                                        const textmatch::TokenizerConfig& tokenizer,
                                        std::size_t* skipped) {
  std::map<std::string, textmatch::TokenSeq> prompt_tokens;
  for (const auto& p : prompts) prompt_tokens.emplace(p.id, textmatch::tokenize(p.text, tokenizer));

  const std::size_t n = transcripts.size();
  const std::size_t c = criteria.size();
  std::vector<std::optional<ScoreRow>> slots(n * c);

  auto work = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const auto& t = transcripts[i];
      const auto it = prompt_tokens.find(t.prompt_id);
      if (it == prompt_tokens.end() || it->second.empty()) continue;
      const auto response = textmatch::tokenize(t.response_text, tokenizer);
      for (std::size_t k = 0; k < c; ++k) {
        const auto v = textmatch::evaluate(criteria[k], it->second, response);
        slots[i * c + k] = ScoreRow{t.prompt_id, t.attack_id, t.defense_id, t.repetition,
                                    criteria[k].name(), v.matched, v.score};
      }
    }
  };

  const std::size_t workers =
      std::clamp<std::size_t>(std::thread::hardware_concurrency(), 1, std::max<std::size_t>(n / 8, 1));
  if (workers <= 1) {
    work(0, n);
  } else {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back(work, std::min(n, w * chunk), std::min(n, (w + 1) * chunk));
    }
  }

  std::vector<ScoreRow> rows;
  rows.reserve(n * c);
  std::size_t missing = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!slots[i * c]) {
      ++missing;
      log_warn("skipping transcript for unknown prompt '" + transcripts[i].prompt_id + "'");
      continue;
    }
    for (std::size_t k = 0; k < c; ++k) rows.push_back(std::move(*slots[i * c + k]));
  }
  if (skipped) *skipped = missing;
  return rows;
}

// ---------------------------------------------------------------------------
// Pipelines

RunSummary run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto prompts = corpus::load_corpus(cfg.corpus, cfg.tokenizer);
  const auto attacks = load_all_attacks(cfg);
  fs::create_directories(cfg.output_dir);
  gateway::TranscriptStore store(cfg.resolved_cache_dir());

  gateway::BatchOptions options;
  options.want_logprobs = cfg.want_logprobs;
  options.perplexity = [&cfg](const std::string& text) {
    return perplexity::measure_prompt_ppl(cfg.endpoint, text);
  };
  const auto batch = gateway::batch_attack(cfg.endpoint, cfg.pattern, prompts, attacks, cfg.defenses,
                                           cfg.reps, store, options);

  std::string lines;
  for (const auto& t : batch.transcripts) lines += gateway::to_json(t).dump() + '\n';
  write_file(cfg.output_dir / "transcripts.jsonl", lines);
  json errors = json::array();
  for (const auto& f : batch.failures) errors.push_back(gateway::to_json(f));
  write_file(cfg.output_dir / "errors.json", errors.dump(2) + '\n');

  RunSummary summary;
  summary.dir = cfg.output_dir;
  summary.transcripts = batch.transcripts.size();
  summary.failures = batch.failures.size();
  summary.network_calls = batch.network_calls;
  summary.cache_hits = batch.cache_hits;
  summary.skipped = write_scores(cfg, batch.transcripts, prompts, cfg.criteria);
  if (cfg.measure_ppl) write_prompt_ppl(cfg, prompts);
  return summary;
}

RunSummary score_experiment(const ExperimentConfig& cfg,
                            const std::optional<std::vector<textmatch::Criterion>>& criteria) {
  const auto path = cfg.output_dir / "transcripts.jsonl";
  std::ifstream in(path);
  if (!in) throw FormatError("transcripts.jsonl not found in " + cfg.output_dir.string());
  const auto prompts = corpus::load_corpus(cfg.corpus, cfg.tokenizer);

  RunSummary summary;
  summary.dir = cfg.output_dir;
  std::vector<gateway::Transcript> transcripts;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      transcripts.push_back(gateway::transcript_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      ++summary.skipped;
      log_warn("skipping malformed transcript at line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  summary.transcripts = transcripts.size();
  const auto& crit = criteria && !criteria->empty() ? *criteria : cfg.criteria;
  summary.skipped += write_scores(cfg, transcripts, prompts, crit);
  return summary;
}

fs::path report(const fs::path& dir) {
  const auto rows = read_scores_csv(dir / "scores.csv");
  const auto reports = aggregate_scores(rows);

  std::vector<std::string> criteria;
  for (const auto& r : rows) {
    if (std::find(criteria.begin(), criteria.end(), r.criterion) == criteria.end())
      criteria.push_back(r.criterion);
  }

  std::ostringstream md;
  md << "# Uncovered rates\n\n| defense |";
  for (const auto& c : criteria) md << ' ' << c << " |";
  md << "\n|---|";
  for (std::size_t i = 0; i < criteria.size(); ++i) md << "---|";
  md << '\n';
  for (const auto& [defense, rs] : reports) {
    md << "| " << defense << " |";
    for (const auto& c : criteria) {
      const auto it = std::find_if(rs.begin(), rs.end(),
                                   [&](const metrics::URReport& r) { return r.criterion == c; });
      md << ' ' << (it == rs.end() ? std::string("n/a") : metrics::format_cell(*it)) << " |";
    }
    md << '\n';
  }

  const auto ppl_path = dir / "prompt_ppl.csv";
  if (fs::exists(ppl_path)) {
    std::map<std::string, double> ppl;
    std::ifstream in(ppl_path);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      const auto f = parse_csv_line(line);
      if (f.size() != 2) continue;
      try {
        ppl[f[0]] = std::stod(f[1]);
      } catch (const std::exception&) {
        log_warn("ignoring malformed line in prompt_ppl.csv");
      }
    }

    // Per-prompt UR on the undefended runs when present.
    std::string defense = reports.empty() ? std::string{} : reports.front().first;
    for (const auto& [d, _] : reports) {
      if (d == "none") defense = d;
    }
    std::map<std::string, std::map<std::string, std::pair<int, int>>> hits;  // prompt -> crit -> (hit, total)
    for (const auto& r : rows) {
      if (r.defense_id != defense || !ppl.contains(r.prompt_id)) continue;
      auto& h = hits[r.prompt_id][r.criterion];
      h.first += r.matched ? 1 : 0;
      h.second += 1;
    }

    std::string csv = "prompt_id,ppl";
    for (const auto& c : criteria) csv += ',' + csv_field(c);
    csv += '\n';
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> series;
    for (const auto& [pid, per] : hits) {
      csv += csv_field(pid) + ',' + fmt17(ppl.at(pid));
      for (const auto& c : criteria) {
        csv += ',';
        if (const auto it = per.find(c); it != per.end()) {
          const double ur = static_cast<double>(it->second.first) / it->second.second;
          csv += fmt6(ur);
          series[c].first.push_back(ppl.at(pid));
          series[c].second.push_back(ur);
        }
      }
      csv += '\n';
    }
    write_file(dir / "ppl_vs_ur.csv", csv);

    json sp = {{"defense", defense}, {"prompts", hits.size()}, {"spearman", json::object()}};
    md << "\n# Perplexity vs uncovered rate (" << (defense.empty() ? "-" : defense) << ")\n\n"
       << "| criterion | Spearman |\n|---|---|\n";
    for (const auto& c : criteria) {
      double rho = std::nan("");
      if (const auto it = series.find(c); it != series.end() && it->second.first.size() >= 2) {
        rho = metrics::spearman(it->second.first, it->second.second);
      }
      sp["spearman"][c] = std::isnan(rho) ? json(nullptr) : json(rho);
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.3f", rho);
      md << "| " << c << " | " << (std::isnan(rho) ? std::string("n/a") : std::string(buf)) << " |\n";
    }
    write_file(dir / "spearman.json", sp.dump(2) + '\n');
  }

  const auto out = dir / "report.md";
  write_file(out, md.str());
  return out;
}

std::size_t split_directory(const fs::path& dump_dir, const fs::path& out_dir) {
  if (!fs::is_directory(dump_dir)) throw FormatError("dump directory not found: " + dump_dir.string());
  std::vector<fs::path> dumps;
  for (const auto& entry : fs::directory_iterator(dump_dir)) {
    if (!entry.is_regular_file() || entry.path().extension() == ".json") continue;
    if (entry.path().extension() == ".jsonl") continue;
    if (fs::exists(attention::sidecar_path(entry.path()))) dumps.push_back(entry.path());
  }
  std::sort(dumps.begin(), dumps.end());
  if (dumps.empty()) throw FormatError("no attention dumps in " + dump_dir.string());

  for (const auto& path : dumps) {
    const auto dump = attention::decode_dump(path);
    const auto align = attention::align_spans(dump);
    const auto im = attention::split_indicators(dump, align);
    const auto target = out_dir / path.stem();
    fs::create_directories(target);

    json ind = im.to_json();
    ind["alignment"] = {{"mode", attention::align_mode_name(align.mode)},
                        {"pairs", align.pairs.size()},
                        {"predecessor", align.predecessor}};
    write_file(target / "indicators.json", ind.dump(2) + '\n');

    json heads = json::array();
    if (im.layers() > 3 && (im.layers() - 3) * im.heads() >= 2) {
      for (const auto& h : attention::detect_translation_heads(im)) {
        heads.push_back({{"layer", h.layer}, {"head", h.head}, {"zscore", h.zscore}});
      }
    }
    write_file(target / "heads.json", heads.dump(2) + '\n');
    for (auto which : attention::kAllIndicators) {
      attention::emit_heatmap(im, which, target / (std::string(attention::indicator_name(which)) + ".svg"));
    }
  }
  return dumps.size();
}

} // namespace pead::runner
