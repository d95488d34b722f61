#include "pead/attention.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <stdexcept>

#include "pead/error.hpp"

namespace pead::attention {

using nlohmann::json;

namespace {

constexpr double kCausalTolerance = 1e-6;
constexpr double kRowSumTolerance = 1e-3;
constexpr std::size_t kHeaderSize = 4 + 1 + 3 * 4;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::string normalize_token(std::string_view tok) {
  // Strip leading whitespace and the U+2581 / U+0120 space markers.
  static constexpr std::string_view kSpm = "\xE2\x96\x81";
  static constexpr std::string_view kBpe = "\xC4\xA0";
  for (;;) {
    if (!tok.empty() && (tok.front() == ' ' || tok.front() == '\t' || tok.front() == '\n')) {
      tok.remove_prefix(1);
    } else if (tok.starts_with(kSpm)) {
      tok.remove_prefix(kSpm.size());
    } else if (tok.starts_with(kBpe)) {
      tok.remove_prefix(kBpe.size());
    } else {
      break;
    }
  }
  return std::string(tok);
}

std::string fmt_exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string lerp_color(double t) {
  // Light (#f7fbff) to dark blue (#08306b).
  t = std::clamp(t, 0.0, 1.0);
  auto mix = [t](int a, int b) { return static_cast<int>(std::lround(a + (b - a) * t)); };
  char buf[8];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", mix(0xf7, 0x08), mix(0xfb, 0x30),
                mix(0xff, 0x6b));
  return buf;
}

std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
    case '&': out += "&amp;"; break;
    case '<': out += "&lt;"; break;
    case '>': out += "&gt;"; break;
    case '"': out += "&quot;"; break;
    default: out.push_back(c);
    }
  }
  return out;
}

} // namespace

// ---------------------------------------------------------------------------
// Dump validation and codec

void AttentionDump::validate() const {
  const std::size_t t = tokens.size();
  if (layers == 0 || heads == 0 || t == 0) {
    throw ValidationError("attention dump has an empty dimension");
  }
  if (weights.size() != static_cast<std::size_t>(layers) * heads * t * t) {
    throw ValidationError("attention weights size does not match L*H*T*T");
  }
  if (prompt_span.begin > prompt_span.end || response_span.begin > response_span.end ||
      prompt_span.end > t || response_span.end > t) {
    throw ValidationError("attention dump span out of range");
  }
  if (prompt_span.empty()) throw ValidationError("attention dump prompt span is empty");
  if (prompt_span.end > response_span.begin) {
    throw ValidationError("prompt span must end before the response span begins");
  }
  for (std::size_t l = 0; l < layers; ++l) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t q = 0; q < t; ++q) {
        const float* row = &weights[index(l, h, q, 0)];
        double sum = 0.0;
        for (std::size_t k = 0; k < t; ++k) {
          if (!std::isfinite(row[k])) {
            throw ValidationError("non-finite attention weight at layer " + std::to_string(l) +
                                  " head " + std::to_string(h));
          }
          if (k > q && std::abs(row[k]) > kCausalTolerance) {
            throw ValidationError("causal mask violated at layer " + std::to_string(l) +
                                  " head " + std::to_string(h) + " query " + std::to_string(q) +
                                  " key " + std::to_string(k));
          }
          sum += row[k];
        }
        if (std::abs(sum - 1.0) > kRowSumTolerance) {
          throw ValidationError("attention row does not sum to 1 at layer " + std::to_string(l) +
                                " head " + std::to_string(h) + " query " + std::to_string(q));
        }
      }
    }
  }
}

std::filesystem::path sidecar_path(const std::filesystem::path& binary_path) {
  auto p = binary_path;
  p.replace_extension(".json");
  return p;
}

void encode_dump(const AttentionDump& dump, const std::filesystem::path& path) {
  if (path.extension() == ".json") {
    throw std::invalid_argument("binary dump path must not use the .json sidecar extension");
  }
  dump.validate();
  const auto t = static_cast<std::uint32_t>(dump.tokens.size());

  std::string bytes;
  bytes.reserve(kHeaderSize + dump.weights.size() * 4);
  bytes.append(kMagic, 4);
  bytes.push_back(static_cast<char>(kFormatVersion));
  put_u32(bytes, dump.layers);
  put_u32(bytes, dump.heads);
  put_u32(bytes, t);
  for (float w : dump.weights) put_u32(bytes, std::bit_cast<std::uint32_t>(w));

  std::ofstream bin(path, std::ios::binary | std::ios::trunc);
  if (!bin) throw FormatError("cannot write " + path.string());
  bin.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));

  const json meta = {{"format", "ATND"},
                     {"version", kFormatVersion},
                     {"model", dump.model},
                     {"tokens", dump.tokens},
                     {"prompt_span", {dump.prompt_span.begin, dump.prompt_span.end}},
                     {"response_span", {dump.response_span.begin, dump.response_span.end}},
                     {"layers", dump.layers},
                     {"heads", dump.heads},
                     {"seq_len", t}};
  std::ofstream side(sidecar_path(path), std::ios::binary | std::ios::trunc);
  if (!side) throw FormatError("cannot write " + sidecar_path(path).string());
  side << meta.dump(2) << '\n';
}

AttentionDump decode_dump(const std::filesystem::path& path) {
  std::ifstream bin(path, std::ios::binary);
  if (!bin) throw FormatError("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
  if (bytes.size() < kHeaderSize) throw FormatError("truncated ATND header in " + path.string());
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("bad ATND magic in " + path.string());
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
  if (raw[4] != kFormatVersion) {
    throw FormatError("unsupported ATND version " + std::to_string(raw[4]) + " in " + path.string());
  }
  const std::uint32_t layers = get_u32(raw + 5);
  const std::uint32_t heads = get_u32(raw + 9);
  const std::uint32_t t = get_u32(raw + 13);
  const auto count = static_cast<std::uint64_t>(layers) * heads * t * t;
  if (bytes.size() - kHeaderSize != count * 4) {
    throw FormatError("ATND size mismatch in " + path.string() + ": header promises " +
                      std::to_string(count) + " weights, file holds " +
                      std::to_string((bytes.size() - kHeaderSize) / 4));
  }

  std::ifstream side(sidecar_path(path));
  if (!side) throw FormatError("missing sidecar " + sidecar_path(path).string());
  json meta;
  try {
    meta = json::parse(side);
  } catch (const json::parse_error& e) {
    throw FormatError("malformed sidecar " + sidecar_path(path).string() + ": " + e.what());
  }

  AttentionDump dump;
  try {
    dump.model = meta.value("model", std::string{});
    dump.tokens = meta.at("tokens").get<std::vector<std::string>>();
    const auto ps = meta.at("prompt_span").get<std::vector<std::size_t>>();
    const auto rs = meta.at("response_span").get<std::vector<std::size_t>>();
    if (ps.size() != 2 || rs.size() != 2) throw FormatError("spans must be [begin, end] pairs");
    dump.prompt_span = {ps[0], ps[1]};
    dump.response_span = {rs[0], rs[1]};
    if (meta.at("layers").get<std::uint32_t>() != layers ||
        meta.at("heads").get<std::uint32_t>() != heads ||
        meta.value("seq_len", t) != t) {
      throw FormatError("sidecar dimensions disagree with the ATND header");
    }
  } catch (const json::exception& e) {
    throw FormatError("malformed sidecar " + sidecar_path(path).string() + ": " + e.what());
  }
  if (dump.tokens.size() != t) {
    throw FormatError("sidecar lists " + std::to_string(dump.tokens.size()) +
                      " tokens but the header says T = " + std::to_string(t));
  }
  dump.layers = layers;
  dump.heads = heads;
  dump.weights.resize(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    dump.weights[i] = std::bit_cast<float>(get_u32(raw + kHeaderSize + 4 * i));
  }
  dump.validate();
  return dump;
}

// ---------------------------------------------------------------------------
// Alignment

std::string_view align_mode_name(AlignMode m) {
  switch (m) {
  case AlignMode::exact: return "exact";
  case AlignMode::lcs: return "lcs";
  case AlignMode::positional: return "positional";
  }
  return "positional";
}

AlignmentMap align_spans(const AttentionDump& dump, const textmatch::TokenSeq& prompt_tokens) {
  const auto ps = dump.prompt_span;
  const auto rs = dump.response_span;
  if (ps.end > dump.tokens.size() || rs.end > dump.tokens.size() || ps.end > rs.begin) {
    throw ValidationError("align_spans: invalid spans");
  }
  if (rs.empty()) throw ValidationError("align_spans: empty response region");
  if (prompt_tokens.size() != ps.size()) {
    throw ValidationError("align_spans: prompt has " + std::to_string(prompt_tokens.size()) +
                          " tokens but the prompt span covers " + std::to_string(ps.size()));
  }

  std::vector<std::string> prompt;
  prompt.reserve(prompt_tokens.size());
  for (const auto& tok : prompt_tokens.tokens) prompt.push_back(normalize_token(tok));
  std::vector<std::string> response;
  response.reserve(rs.size());
  for (std::size_t i = rs.begin; i < rs.end; ++i) response.push_back(normalize_token(dump.tokens[i]));

  AlignmentMap out;
  out.predecessor = ps.begin > 0 ? ps.begin - 1 : 0;
  const std::size_t n = prompt.size();
  const std::size_t r = response.size();

  if (const auto it = std::search(response.begin(), response.end(), prompt.begin(), prompt.end());
      n > 0 && it != response.end()) {
    const auto start = static_cast<std::size_t>(it - response.begin());
    out.mode = AlignMode::exact;
    for (std::size_t t = 0; t < n; ++t) out.pairs.push_back({ps.begin + t, rs.begin + start + t});
    return out;
  }

  // suffix[i][j] = lcs(prompt[i..], response[j..])
  std::vector<std::vector<std::uint32_t>> suffix(n + 1, std::vector<std::uint32_t>(r + 1, 0));
  for (std::size_t i = n; i-- > 0;) {
    for (std::size_t j = r; j-- > 0;) {
      suffix[i][j] = prompt[i] == response[j] ? suffix[i + 1][j + 1] + 1
                                              : std::max(suffix[i + 1][j], suffix[i][j + 1]);
    }
  }
  if (suffix[0][0] > 0) {
    out.mode = AlignMode::lcs;
    std::size_t i = 0, j = 0;
    while (i < n && j < r) {
      if (prompt[i] == response[j] && suffix[i][j] == suffix[i + 1][j + 1] + 1) {
        out.pairs.push_back({ps.begin + i, rs.begin + j});
        ++i;
        ++j;
      } else if (suffix[i + 1][j] >= suffix[i][j + 1]) {
        ++i;
      } else {
        ++j;
      }
    }
    return out;
  }

  out.mode = AlignMode::positional;
  for (std::size_t t = 0; t < std::min(n, r); ++t) out.pairs.push_back({ps.begin + t, rs.begin + t});
  return out;
}

AlignmentMap align_spans(const AttentionDump& dump) {
  textmatch::TokenSeq prompt;
  for (std::size_t i = dump.prompt_span.begin; i < dump.prompt_span.end && i < dump.tokens.size(); ++i) {
    prompt.tokens.push_back(dump.tokens[i]);
  }
  return align_spans(dump, prompt);
}

// ---------------------------------------------------------------------------
// Indicators

std::optional<Indicator> parse_indicator(std::string_view name) {
  for (auto i : kAllIndicators) {
    if (indicator_name(i) == name) return i;
  }
  return std::nullopt;
}

std::string_view indicator_name(Indicator i) {
  switch (i) {
  case Indicator::alpha_pre: return "alpha_pre";
  case Indicator::alpha_cur: return "alpha_cur";
  case Indicator::gamma_pre: return "gamma_pre";
  case Indicator::gamma_cur: return "gamma_cur";
  case Indicator::alpha_pre_arith: return "alpha_pre_arith";
  }
  return "alpha_pre";
}

double IndicatorMap::value(std::size_t l, std::size_t h, Indicator which) const {
  const auto& c = at(l, h);
  switch (which) {
  case Indicator::alpha_pre: return c.alpha_pre;
  case Indicator::alpha_cur: return c.alpha_cur;
  case Indicator::gamma_pre: return c.gamma_pre;
  case Indicator::gamma_cur: return c.gamma_cur;
  case Indicator::alpha_pre_arith: return c.alpha_pre_arith;
  }
  return c.alpha_pre;
}

json IndicatorMap::to_json() const {
  json out = {{"layers", layers_}, {"heads", heads_}};
  for (auto which : kAllIndicators) {
    json rows = json::array();
    for (std::size_t l = 0; l < layers_; ++l) {
      json row = json::array();
      for (std::size_t h = 0; h < heads_; ++h) row.push_back(value(l, h, which));
      rows.push_back(std::move(row));
    }
    out[std::string(indicator_name(which))] = std::move(rows);
  }
  return out;
}

IndicatorMap split_indicators(const AttentionDump& dump, const AlignmentMap& align) {
  const std::size_t m = align.pairs.size();
  if (m == 0) throw std::invalid_argument("split_indicators: alignment is empty");
  const std::size_t t = dump.tokens.size();
  for (const auto& p : align.pairs) {
    if (p.prompt_pos >= t || p.gen_pos >= t) throw ValidationError("alignment position out of range");
  }
  if (align.predecessor >= t) throw ValidationError("alignment predecessor out of range");

  std::vector<std::size_t> prev(m);
  prev[0] = align.predecessor;
  for (std::size_t i = 1; i < m; ++i) prev[i] = align.pairs[i - 1].prompt_pos;

  const double inv_m = 1.0 / static_cast<double>(m);
  auto floored_log = [](double v) { return std::log(std::max(v, kFactorFloor)); };

  IndicatorMap im(dump.layers, dump.heads);
  for (std::size_t l = 0; l < dump.layers; ++l) {
    for (std::size_t h = 0; h < dump.heads; ++h) {
      double z_cur = 0.0;
      double z_pre = 0.0;
      for (std::size_t k = 0; k < m; ++k) {
        const auto g = align.pairs[k].gen_pos;
        for (std::size_t j = 0; j < m; ++j) {
          z_cur += dump.at(l, h, g, align.pairs[j].prompt_pos);
          z_pre += dump.at(l, h, g, prev[j]);
        }
      }
      double log_cur = 0.0, log_pre = 0.0, log_gcur = 0.0, log_gpre = 0.0, arith = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        const auto g = align.pairs[i].gen_pos;
        const double cur = dump.at(l, h, g, align.pairs[i].prompt_pos);
        const double pre = dump.at(l, h, g, prev[i]);
        log_cur += floored_log(cur);
        log_pre += floored_log(pre);
        log_gcur += floored_log(z_cur > 0.0 ? cur / z_cur : 0.0);
        log_gpre += floored_log(z_pre > 0.0 ? pre / z_pre : 0.0);
        arith += std::max(pre, kFactorFloor);
      }
      auto& cell = im.at(l, h);
      cell.alpha_cur = std::exp(log_cur * inv_m);
      cell.alpha_pre = std::exp(log_pre * inv_m);
      cell.gamma_cur = std::exp(log_gcur * inv_m);
      cell.gamma_pre = std::exp(log_gpre * inv_m);
      cell.alpha_pre_arith = arith * inv_m;
    }
  }
  return im;
}

std::vector<DetectedHead> detect_translation_heads(const IndicatorMap& im, std::size_t skip_layers,
                                                   double z_threshold) {
  if (im.layers() <= skip_layers) {
    throw std::invalid_argument("detect_translation_heads: skip_layers leaves no layers");
  }
  const std::size_t eligible = (im.layers() - skip_layers) * im.heads();
  if (eligible < 2) throw std::invalid_argument("detect_translation_heads: fewer than two heads");

  double mean = 0.0;
  for (std::size_t l = skip_layers; l < im.layers(); ++l)
    for (std::size_t h = 0; h < im.heads(); ++h) mean += im.at(l, h).gamma_cur;
  mean /= static_cast<double>(eligible);
  double var = 0.0;
  for (std::size_t l = skip_layers; l < im.layers(); ++l) {
    for (std::size_t h = 0; h < im.heads(); ++h) {
      const double d = im.at(l, h).gamma_cur - mean;
      var += d * d;
    }
  }
  const double sd = std::sqrt(var / static_cast<double>(eligible));
  std::vector<DetectedHead> out;
  if (sd == 0.0) return out;
  for (std::size_t l = skip_layers; l < im.layers(); ++l) {
    for (std::size_t h = 0; h < im.heads(); ++h) {
      const double z = (im.at(l, h).gamma_cur - mean) / sd;
      if (z >= z_threshold) out.push_back({l, h, z});
    }
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const DetectedHead& a, const DetectedHead& b) { return a.zscore > b.zscore; });
  return out;
}

// ---------------------------------------------------------------------------
// Heatmaps

void emit_heatmap(const IndicatorMap& im, Indicator which, const std::filesystem::path& svg_path) {
  const std::size_t layers = im.layers();
  const std::size_t heads = im.heads();
  double lo = 0.0, hi = 0.0;
  for (std::size_t l = 0; l < layers; ++l) {
    for (std::size_t h = 0; h < heads; ++h) {
      const double v = im.value(l, h, which);
      if ((l == 0 && h == 0) || v < lo) lo = v;
      if ((l == 0 && h == 0) || v > hi) hi = v;
    }
  }

  constexpr int kCell = 24;
  constexpr int kMarginLeft = 48;
  constexpr int kMarginTop = 36;
  const auto name = std::string(indicator_name(which));
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kMarginLeft + kCell * heads + 8
      << "\" height=\"" << kMarginTop + kCell * layers + 8 << "\">\n";
  svg << "<text x=\"" << kMarginLeft << "\" y=\"14\" font-family=\"sans-serif\" font-size=\"12\">"
      << xml_escape(name) << " (layer rows, head columns; range " << fmt_exact(lo) << " to "
      << fmt_exact(hi) << ")</text>\n";
  for (std::size_t l = 0; l < layers; ++l) {
    svg << "<text x=\"4\" y=\"" << kMarginTop + kCell * l + 16
        << "\" font-family=\"sans-serif\" font-size=\"10\">L" << l << "</text>\n";
    for (std::size_t h = 0; h < heads; ++h) {
      const double v = im.value(l, h, which);
      const double t = hi > lo ? (v - lo) / (hi - lo) : 0.0;
      svg << "<rect class=\"cell\" x=\"" << kMarginLeft + kCell * h << "\" y=\""
          << kMarginTop + kCell * l << "\" width=\"" << kCell << "\" height=\"" << kCell
          << "\" fill=\"" << lerp_color(t) << "\"><title>layer " << l << " head " << h << ": "
          << fmt_exact(v) << "</title></rect>\n";
    }
  }
  svg << "</svg>\n";

  std::ofstream out(svg_path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + svg_path.string());
  out << svg.str();

  auto csv_path = svg_path;
  csv_path.replace_extension(".csv");
  std::ofstream csv(csv_path, std::ios::binary | std::ios::trunc);
  if (!csv) throw FormatError("cannot write " + csv_path.string());
  for (std::size_t l = 0; l < layers; ++l) {
    for (std::size_t h = 0; h < heads; ++h) {
      if (h) csv << ',';
      csv << fmt_exact(im.value(l, h, which));
    }
    csv << '\n';
  }
}

void emit_heatmap(const IndicatorMap& im, std::string_view which,
                  const std::filesystem::path& svg_path) {
  const auto parsed = parse_indicator(which);
  if (!parsed) throw std::invalid_argument("unknown indicator '" + std::string(which) + "'");
  emit_heatmap(im, *parsed, svg_path);
}

} // namespace pead::attention
