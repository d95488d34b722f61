// pead: prompt-extraction attack evaluation CLI.

#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "pead/defenses.hpp"
#include "pead/error.hpp"
#include "pead/gateway.hpp"
#include "pead/perplexity.hpp"
#include "pead/runner.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitPartial = 1;
constexpr int kExitConfig = 2;

int summarize(const pead::runner::RunSummary& s) {
  std::cout << "wrote " << s.dir.string() << ": " << s.transcripts << " transcripts, " << s.failures
            << " failed cells, " << s.skipped << " skipped";
  if (s.network_calls || s.cache_hits) {
    std::cout << ", " << s.network_calls << " requests, " << s.cache_hits << " cache hits";
  }
  std::cout << '\n';
  return s.partial() ? kExitPartial : kExitOk;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw pead::ConfigError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  std::string text = ss.str();
  while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
  return text;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prompt extraction attack evaluation"};
  app.require_subcommand(1);

  std::string config_path;
  std::string output_override;
  int reps_override = 0;
  int parallel_override = 0;
  auto* run = app.add_subcommand("run", "Attack every cell, score and aggregate");
  run->add_option("-c,--config", config_path, "Experiment config (JSON)")->required();
  run->add_option("-o,--output", output_override, "Override output_dir");
  run->add_option("--reps", reps_override, "Override reps");
  run->add_option("--max-parallel", parallel_override, "Override endpoint.max_parallel");

  std::vector<std::string> criteria_text;
  auto* score = app.add_subcommand("score", "Re-score cached transcripts");
  score->add_option("-c,--config", config_path, "Experiment config (JSON)")->required();
  score->add_option("-o,--output", output_override, "Override output_dir");
  score->add_option("--criteria", criteria_text, "Criteria such as ngram:3 fuzzy:0.9");

  std::string dump_dir;
  std::string heatmap_dir;
  auto* split = app.add_subcommand("split", "Attention path indicators over a dump directory");
  split->add_option("--dump", dump_dir, "Directory of attention dumps")->required();
  split->add_option("--out", heatmap_dir, "Output directory")->required();

  std::string kind;
  std::string prompt_file;
  std::uint64_t seed = 0;
  double rate = pead::defenses::fixtures::kDefaultInsertionRate;
  int count = pead::defenses::fixtures::kRepeatedPrefixCount;
  int samples = 1;
  std::string placement;
  std::string direction = "higher";
  auto* defend = app.add_subcommand("defend", "Apply one defense to a prompt and print it");
  defend->add_option("--kind", kind, "Defense kind")->required();
  defend->add_option("--prompt-file", prompt_file, "File holding the prompt")->required();
  defend->add_option("--seed", seed, "Seed for random_insertion");
  defend->add_option("--rate", rate, "Insertion rate for random_insertion");
  defend->add_option("--count", count, "Repetitions for repeated_prefix");
  defend->add_option("--samples", samples, "Rephrasings for rephrase_ppl");
  defend->add_option("--direction", direction, "higher or lower, for rephrase_ppl");
  defend->add_option("--placement", placement, "prepend or append");
  defend->add_option("-c,--config", config_path, "Config with the endpoint, for rephrase_ppl");

  std::string report_dir;
  auto* rep = app.add_subcommand("report", "Render tables from scores.csv");
  rep->add_option("dir", report_dir, "Experiment directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*run || *score) {
      auto cfg = pead::runner::ExperimentConfig::load(config_path);
      if (!output_override.empty()) cfg.output_dir = output_override;
      if (reps_override > 0) cfg.reps = reps_override;
      if (parallel_override > 0) cfg.endpoint.max_parallel = parallel_override;
      cfg.validate();
      if (*run) return summarize(pead::runner::run_experiment(cfg));

      std::optional<std::vector<pead::textmatch::Criterion>> criteria;
      if (!criteria_text.empty()) {
        criteria.emplace();
        for (const auto& c : criteria_text) {
          try {
            criteria->push_back(pead::textmatch::Criterion::parse(c));
          } catch (const std::invalid_argument& e) {
            throw pead::ConfigError(e.what());
          }
        }
      }
      return summarize(pead::runner::score_experiment(cfg, criteria));
    }

    if (*split) {
      const auto n = pead::runner::split_directory(dump_dir, heatmap_dir);
      std::cout << "processed " << n << " dumps into " << heatmap_dir << '\n';
      return kExitOk;
    }

    if (*defend) {
      nlohmann::json j = {{"kind", kind}, {"seed", seed}, {"rate", rate},
                          {"count", count}, {"samples", samples}, {"direction", direction}};
      if (!placement.empty()) j["placement"] = placement;
      const auto spec = pead::defenses::DefenseSpec::from_json(j);
      const auto prompt = read_text(prompt_file);
      if (spec.kind != pead::defenses::Kind::rephrase_ppl) {
        std::cout << pead::defenses::apply(spec, prompt) << '\n';
        return kExitOk;
      }
      if (config_path.empty()) throw pead::ConfigError("rephrase_ppl needs -c with an endpoint");
      std::ifstream in(config_path);
      if (!in) throw pead::ConfigError("cannot open config " + config_path);
      const auto cfg_json = nlohmann::json::parse(in, nullptr, false);
      if (cfg_json.is_discarded() || !cfg_json.contains("endpoint")) {
        throw pead::ConfigError("config " + config_path + " has no endpoint");
      }
      const auto endpoint = pead::gateway::EndpointConfig::from_json(cfg_json.at("endpoint"));
      endpoint.validate();
      const auto result = pead::defenses::rephrase_ppl(
          spec, prompt,
          [&](const std::string& request, int sample) {
            return pead::gateway::complete(endpoint, request, false, sample).response_text;
          },
          [&](const std::string& text) { return pead::perplexity::measure_prompt_ppl(endpoint, text); });
      std::cout << result.text << '\n';
      std::cerr << "perplexity " << result.perplexity << '\n';
      return kExitOk;
    }

    if (*rep) {
      std::cout << pead::runner::report(report_dir).string() << '\n';
      return kExitOk;
    }
  } catch (const pead::ConfigError& e) {
    std::cerr << "pead: config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "pead: " << e.what() << '\n';
    return kExitPartial;
  }
  return kExitOk;
}
