#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "pead/textmatch.hpp"

namespace pead::attention {

/// Half-open token range [begin, end).
struct TokenSpan {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const noexcept { return end - begin; }
  bool empty() const noexcept { return begin == end; }
  bool operator==(const TokenSpan&) const = default;
};

/// Post-softmax attention for one sequence. weights is laid out
/// [layer][head][query][key]; entry (q, k) is the attention query position q
/// pays to key position k.
struct AttentionDump {
  std::string model;
  std::vector<std::string> tokens;
  TokenSpan prompt_span;
  TokenSpan response_span;
  std::uint32_t layers = 0;
  std::uint32_t heads = 0;
  std::vector<float> weights;

  std::size_t seq_len() const noexcept { return tokens.size(); }
  std::size_t index(std::size_t l, std::size_t h, std::size_t q, std::size_t k) const noexcept {
    const std::size_t t = tokens.size();
    return ((l * heads + h) * t + q) * t + k;
  }
  float at(std::size_t l, std::size_t h, std::size_t q, std::size_t k) const {
    return weights[index(l, h, q, k)];
  }
  float& at(std::size_t l, std::size_t h, std::size_t q, std::size_t k) {
    return weights[index(l, h, q, k)];
  }

  /// Checks shape, span sanity, finiteness, the causal mask (|w| <= 1e-6
  /// above the diagonal) and row sums (within 1e-3 of 1). Throws
  /// ValidationError.
  void validate() const;
};

inline constexpr char kMagic[4] = {'A', 'T', 'N', 'D'};
inline constexpr std::uint8_t kFormatVersion = 0x01;

/// Sidecar metadata path for a binary dump path (extension replaced by .json).
std::filesystem::path sidecar_path(const std::filesystem::path& binary_path);

/// Writes the binary file at `path` and its JSON sidecar. The binary layout
/// is "ATND", version byte 0x01, little-endian u32 L, H, T, then L*H*T*T
/// little-endian float32 values.
void encode_dump(const AttentionDump& dump, const std::filesystem::path& path);

/// Reads and validates a dump. FormatError for bad magic/version, missing
/// sidecar, or size mismatches; ValidationError for invariant violations.
AttentionDump decode_dump(const std::filesystem::path& path);

enum class AlignMode { exact, lcs, positional };
std::string_view align_mode_name(AlignMode m);

struct AlignedPair {
  std::size_t prompt_pos = 0;
  std::size_t gen_pos = 0;
  bool operator==(const AlignedPair&) const = default;
};

/// Correspondence between prompt tokens and their regenerated copies.
/// `predecessor` is the position used as the previous prompt token for the
/// first pair: the token just before the prompt span (clamped to 0).
struct AlignmentMap {
  std::vector<AlignedPair> pairs;
  std::size_t predecessor = 0;
  AlignMode mode = AlignMode::positional;
};

/// Aligns the prompt span to the response span. Tries, in order: a verbatim
/// copy of the prompt inside the response (exact), the LCS of the two token
/// runs (lcs), then t-th prompt token to t-th response token (positional).
/// Tokens compare after stripping leading whitespace and the SentencePiece /
/// byte-BPE space markers. `prompt_tokens` must have one token per prompt
/// position; the overload without it takes them from the dump.
AlignmentMap align_spans(const AttentionDump& dump, const textmatch::TokenSeq& prompt_tokens);
AlignmentMap align_spans(const AttentionDump& dump);

struct HeadIndicators {
  double alpha_pre = 0.0;
  double alpha_cur = 0.0;
  double gamma_pre = 0.0;
  double gamma_cur = 0.0;
  double alpha_pre_arith = 0.0;
};

enum class Indicator { alpha_pre, alpha_cur, gamma_pre, gamma_cur, alpha_pre_arith };

std::optional<Indicator> parse_indicator(std::string_view name);
std::string_view indicator_name(Indicator i);
inline constexpr Indicator kAllIndicators[] = {Indicator::alpha_pre, Indicator::alpha_cur,
                                               Indicator::gamma_pre, Indicator::gamma_cur,
                                               Indicator::alpha_pre_arith};

class IndicatorMap {
public:
  IndicatorMap() = default;
  IndicatorMap(std::size_t layers, std::size_t heads)
      : layers_(layers), heads_(heads), cells_(layers * heads) {}

  std::size_t layers() const noexcept { return layers_; }
  std::size_t heads() const noexcept { return heads_; }
  HeadIndicators& at(std::size_t l, std::size_t h) { return cells_[l * heads_ + h]; }
  const HeadIndicators& at(std::size_t l, std::size_t h) const { return cells_[l * heads_ + h]; }
  double value(std::size_t l, std::size_t h, Indicator which) const;

  nlohmann::json to_json() const;

private:
  std::size_t layers_ = 0;
  std::size_t heads_ = 0;
  std::vector<HeadIndicators> cells_;
};

/// Attention factors below this are floored before taking logs.
inline constexpr double kFactorFloor = 1e-12;

/// Per-head path indicators over the aligned pairs (M = pairs.size()).
///
/// For pair t with generated position g_t, prompt position p_t and previous
/// prompt position r_t (the predecessor for t = 0, p_{t-1} afterwards):
///   alpha_cur = geomean_t W[g_t][p_t]
///   alpha_pre = geomean_t W[g_t][r_t]
///   gamma_cur = geomean_t W[g_t][p_t] / sum_{j,k} W[g_k][p_j]
///   gamma_pre = geomean_t W[g_t][r_t] / sum_{j,k} W[g_k][r_j]
///   alpha_pre_arith = mean_t W[g_t][r_t]
/// Factors are floored at kFactorFloor. Throws std::invalid_argument if M = 0.
IndicatorMap split_indicators(const AttentionDump& dump, const AlignmentMap& align);

struct DetectedHead {
  std::size_t layer = 0;
  std::size_t head = 0;
  double zscore = 0.0;
};

/// Heads in layers >= skip_layers whose gamma_cur z-score (population std
/// over the eligible heads) reaches z_threshold, highest first. A zero
/// variance yields no detections. Throws std::invalid_argument when fewer
/// than two heads are eligible.
std::vector<DetectedHead> detect_translation_heads(const IndicatorMap& im,
                                                   std::size_t skip_layers = 3,
                                                   double z_threshold = 3.0);

/// Writes a layers x heads SVG grid to `svg_path` (linear color scale, one
/// <title> tooltip per cell) and the same matrix to the sibling .csv file:
/// one line per layer, one column per head, no header.
void emit_heatmap(const IndicatorMap& im, Indicator which, const std::filesystem::path& svg_path);
/// Throws std::invalid_argument for an unknown indicator name.
void emit_heatmap(const IndicatorMap& im, std::string_view which,
                  const std::filesystem::path& svg_path);

} // namespace pead::attention
