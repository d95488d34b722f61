#include "pead/textmatch.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>

namespace pead::textmatch {

namespace {

struct CodePoint {
  char32_t value;
  std::size_t offset;
  std::size_t length;
};

// Lenient UTF-8 decoder: an invalid byte becomes U+FFFD covering that byte.
std::vector<CodePoint> decode_utf8(std::string_view text) {
  std::vector<CodePoint> out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    const auto lead = static_cast<unsigned char>(text[i]);
    std::size_t len = 0;
    char32_t cp = 0;
    if (lead < 0x80) {
      len = 1;
      cp = lead;
    } else if ((lead & 0xE0) == 0xC0) {
      len = 2;
      cp = lead & 0x1F;
    } else if ((lead & 0xF0) == 0xE0) {
      len = 3;
      cp = lead & 0x0F;
    } else if ((lead & 0xF8) == 0xF0) {
      len = 4;
      cp = lead & 0x07;
    }
    bool ok = len > 0 && i + len <= text.size();
    for (std::size_t k = 1; ok && k < len; ++k) {
      const auto cont = static_cast<unsigned char>(text[i + k]);
      if ((cont & 0xC0) != 0x80) {
        ok = false;
      } else {
        cp = (cp << 6) | (cont & 0x3F);
      }
    }
    if (!ok) {
      out.push_back({U'�', i, 1});
      ++i;
      continue;
    }
    out.push_back({cp, i, len});
    i += len;
  }
  return out;
}

bool is_unicode_space(char32_t c) {
  return (c >= 0x09 && c <= 0x0D) || c == 0x20 || c == 0x85 || c == 0xA0 || c == 0x1680 ||
         (c >= 0x2000 && c <= 0x200A) || c == 0x2028 || c == 0x2029 || c == 0x202F ||
         c == 0x205F || c == 0x3000;
}

bool is_punct(char32_t c) {
  if (c < 0x80) {
    // '_' stays inside words so identifiers and JSON keys survive intact.
    return c != '_' && ((c >= 0x21 && c <= 0x2F) || (c >= 0x3A && c <= 0x40) ||
                        (c >= 0x5B && c <= 0x60) || (c >= 0x7B && c <= 0x7E));
  }
  switch (c) {
  case 0xA1: case 0xA7: case 0xAB: case 0xB6: case 0xB7: case 0xBB: case 0xBF:
    return true;
  default:
    break;
  }
  return (c >= 0x2010 && c <= 0x2027) || (c >= 0x2030 && c <= 0x205E) ||
         (c >= 0x3001 && c <= 0x3003) || (c >= 0x3008 && c <= 0x3011);
}

std::string ascii_fold(std::string_view text) {
  std::string out(text);
  for (auto& ch : out) {
    if (ch >= 'A' && ch <= 'Z') ch = static_cast<char>(ch - 'A' + 'a');
  }
  return out;
}

// Maps both sequences onto dense integer ids. Ids [0, prompt_vocab) are the
// distinct tokens of `a`; tokens of `b` that never occur in `a` share the id
// prompt_vocab.
struct Interned {
  std::vector<std::uint32_t> a;
  std::vector<std::uint32_t> b;
  std::uint32_t vocab = 0;
};

Interned intern(const TokenSeq& a, const TokenSeq& b) {
  std::unordered_map<std::string_view, std::uint32_t> ids;
  Interned out;
  out.a.reserve(a.size());
  for (const auto& tok : a.tokens) {
    auto [it, inserted] = ids.try_emplace(tok, static_cast<std::uint32_t>(ids.size()));
    out.a.push_back(it->second);
  }
  out.vocab = static_cast<std::uint32_t>(ids.size());
  out.b.reserve(b.size());
  for (const auto& tok : b.tokens) {
    auto it = ids.find(tok);
    out.b.push_back(it == ids.end() ? out.vocab : it->second);
  }
  return out;
}

void require_same_mode(const TokenSeq& a, const TokenSeq& b) {
  if (a.mode != b.mode) {
    throw std::invalid_argument("token sequences were produced in different tokenizer modes");
  }
}

// Semi-global indel alignment: min over windows w of `text` (empty window
// included) of |pattern| + |w| - 2*lcs(pattern, w).
//
// Column j of the DP holds C[i] = the best cost of pattern[0..i) against a
// window ending at text position j; row 0 is all zeros. Vertical deltas
// C[i] - C[i-1] are kept as +1 / -1 bit masks. For a cell with left delta a
// and upper horizontal delta b, a match gives h = -a, and a mismatch copies b
// when a = +1, gives min(1, b + 1) when a = 0 and 1 when a = -1. So each
// horizontal delta is fixed by the nearest resetting cell above it and by
// how many a = 0 mismatches lie in between, which carry propagation over
// runs of a = +1 mismatches resolves a word at a time.
//
// This version takes patterns of at most 64 tokens, so the update needs no
// inter-word carries. eq(j) is the match mask of text position j.
template <typename EqFn>
std::size_t window_indel_distance_small(std::size_t m, std::size_t text_len, EqFn eq) {
  if (m == 0) return 0;
  const std::uint64_t last = (m == 64) ? ~0ULL : ((1ULL << m) - 1);
  const unsigned shift = static_cast<unsigned>(m - 1);
  auto fill = [](std::uint64_t x, std::uint64_t run) { return ((run + (x & run)) ^ run) & run; };
  std::uint64_t p = last, n = 0;
  std::int64_t score = static_cast<std::int64_t>(m);
  std::int64_t best = score;
  for (std::size_t j = 0; j < text_len; ++j) {
    const std::uint64_t e = eq(j);
    const std::uint64_t copy = ~e & p;
    const std::uint64_t bump = ~e & ~p & ~n & last;
    const std::uint64_t seed_minus = e & p;
    const std::uint64_t seed_zero = e & ~p & ~n & last;
    const std::uint64_t hm = seed_minus | fill(seed_minus << 1, copy);
    const std::uint64_t q = bump & (hm << 1);
    const std::uint64_t h0 = seed_zero | fill((seed_zero << 1) | 1, copy) | q | fill(q << 1, copy);
    const std::uint64_t hp = ~(hm | h0) & last;
    const std::uint64_t flip = e | n;
    p = ((flip & (hm << 1)) | (bump & ~(hp << 1)) | copy) & last;
    n = flip & (hp << 1) & last;
    score += static_cast<std::int64_t>((hp >> shift) & 1) - static_cast<std::int64_t>((hm >> shift) & 1);
    best = std::min(best, score);
  }
  return static_cast<std::size_t>(best);
}

// Same result for short patterns, by running the bit-vector LCS from every
// window start. Windows that open or close on a token absent from the
// pattern are beaten by the same window without it, and a window longer than
// m + best can't improve on best; neither can a start with fewer than
// m - best tokens left. Returns min(bound, distance).
constexpr std::size_t kStartsMaxPattern = 16;

template <typename EqFn>
std::size_t window_indel_distance_starts(std::size_t m, std::size_t text_len, EqFn eq, std::size_t bound) {
  const std::uint64_t last = (1ULL << m) - 1;  // m < 64
  std::size_t best = std::min(m, bound);
  for (std::size_t s = 0; s + m < text_len + best; ++s) {
    if (!eq(s)) continue;
    std::uint64_t v = last;
    std::size_t lcs = 0;
    const std::size_t stop = std::min(text_len, s + m + best);
    for (std::size_t j = s; j < stop; ++j) {
      const std::uint64_t e = eq(j);
      const std::uint64_t sum = v + (v & e);
      lcs += sum >> m;
      v = (sum | (v & ~e)) & last;
      const std::size_t dist = m + (j + 1 - s) - 2 * lcs;
      best = std::min(best, dist);
    }
  }
  return best;
}

// Any pattern length, over interned ids.
std::size_t window_indel_distance(const std::vector<std::uint32_t>& pattern,
                                  const std::vector<std::uint32_t>& text, std::uint32_t vocab) {
  const std::size_t m = pattern.size();
  if (m == 0) return 0;
  const std::size_t words = (m + 63) / 64;
  std::vector<std::uint64_t> match((static_cast<std::size_t>(vocab) + 1) * words, 0);
  const std::uint64_t last = (m % 64 == 0) ? ~0ULL : ((1ULL << (m % 64)) - 1);
  const std::uint64_t top = 1ULL << ((m - 1) % 64);

  struct Fill {
    std::uint64_t shift = 0;
    std::uint64_t add = 0;
    // Bits of `run` reachable from a seed through a contiguous run.
    std::uint64_t operator()(std::uint64_t seeds, std::uint64_t run) {
      const std::uint64_t x = ((seeds << 1) | shift) & run;
      shift = seeds >> 63;
      const std::uint64_t s1 = run + x;
      const std::uint64_t s2 = s1 + add;
      add = static_cast<std::uint64_t>(s1 < run) | static_cast<std::uint64_t>(s2 < s1);
      return (s2 ^ run) & run;
    }
  };
  auto shl = [](std::uint64_t v, std::uint64_t& carry) {
    const std::uint64_t out = (v << 1) | carry;
    carry = v >> 63;
    return out;
  };

  if (words == 1) {
    for (std::size_t i = 0; i < m; ++i) match[pattern[i]] |= 1ULL << i;
    return window_indel_distance_small(m, text.size(), [&](std::size_t j) { return match[text[j]]; });
  }
  for (std::size_t i = 0; i < m; ++i) match[pattern[i] * words + i / 64] |= 1ULL << (i % 64);
  std::vector<std::uint64_t> pv(words, ~0ULL);
  std::vector<std::uint64_t> mv(words, 0);
  pv.back() = last;
  std::int64_t score = static_cast<std::int64_t>(m);
  std::int64_t best = score;
  for (const auto sym : text) {
    const std::uint64_t* eq = &match[sym * words];
    Fill fill_minus, fill_zero, fill_q;
    fill_zero.shift = 1;  // row 0 acts as a zero seed
    std::uint64_t c_hm = 0, c_bm = 0, c_bp = 0;
    int h_last = 0;
    for (std::size_t w = 0; w < words; ++w) {
      const std::uint64_t mask = (w + 1 == words) ? last : ~0ULL;
      const std::uint64_t e = eq[w], p = pv[w], n = mv[w];
      const std::uint64_t copy = ~e & p;
      const std::uint64_t bump = ~e & ~p & ~n & mask;
      const std::uint64_t seed_minus = e & p;
      const std::uint64_t seed_zero = e & ~p & ~n & mask;

      const std::uint64_t hm = seed_minus | fill_minus(seed_minus, copy);
      const std::uint64_t q = bump & shl(hm, c_hm);
      const std::uint64_t h0 = seed_zero | fill_zero(seed_zero, copy) | q | fill_q(q, copy);
      const std::uint64_t hp = ~(hm | h0) & mask;

      const std::uint64_t bm = shl(hm, c_bm);
      const std::uint64_t bp = shl(hp, c_bp);
      const std::uint64_t flip = e | n;
      pv[w] = ((flip & bm) | (bump & ~bp) | copy) & mask;
      mv[w] = (flip & bp) & mask;
      if (w + 1 == words) h_last = (hm & top) ? -1 : (hp & top) ? 1 : 0;
    }
    score += h_last;
    best = std::min(best, score);
  }
  return static_cast<std::size_t>(best);
}

// Token of at most 7 bytes packed with its length; 0 when it doesn't fit.
std::uint64_t pack_short(std::string_view t) {
  if (t.size() > 7) return 0;
  std::uint64_t key = static_cast<std::uint64_t>(t.size() + 1) << 56;
  for (std::size_t i = 0; i < t.size(); ++i) {
    key |= static_cast<std::uint64_t>(static_cast<unsigned char>(t[i])) << (8 * i);
  }
  return key;
}

// partial_lcs_distance for sequences of at most 64 short tokens, comparing
// packed tokens directly instead of interning. nullopt when it doesn't apply.
std::optional<std::size_t> partial_lcs_distance_short(const TokenSeq& a, const TokenSeq& b) {
  if (a.size() > 64 || b.size() > 64) return std::nullopt;
  std::array<std::uint64_t, 64> ka, kb;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!(ka[i] = pack_short(a.tokens[i]))) return std::nullopt;
  for (std::size_t j = 0; j < b.size(); ++j)
    if (!(kb[j] = pack_short(b.tokens[j]))) return std::nullopt;
  // Distinct tokens of a, each with its position mask in a and in b.
  std::array<std::uint64_t, 64> dict, in_a, in_b;
  std::array<std::uint8_t, 64> id_a;
  std::size_t d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    std::size_t k = 0;
    while (k < d && dict[k] != ka[i]) ++k;
    if (k == d) {
      dict[d] = ka[i];
      in_a[d] = 0;
      in_b[d] = 0;
      ++d;
    }
    in_a[k] |= 1ULL << i;
    id_a[i] = static_cast<std::uint8_t>(k);
  }
  // Match masks of b's positions over a, and of a's positions over b.
  std::array<std::uint64_t, 64> over_a, over_b;
  for (std::size_t j = 0; j < b.size(); ++j) {
    std::size_t k = 0;
    while (k < d && dict[k] != kb[j]) ++k;
    if (k == d) {
      over_a[j] = 0;
      continue;
    }
    over_a[j] = in_a[k];
    in_b[k] |= 1ULL << j;
  }
  for (std::size_t i = 0; i < a.size(); ++i) over_b[i] = in_b[id_a[i]];
  std::size_t best = std::numeric_limits<std::size_t>::max();
  auto directed = [&best](std::size_t m, std::size_t n, const std::array<std::uint64_t, 64>& over) {
    auto eq = [&](std::size_t j) { return over[j]; };
    best = m <= kStartsMaxPattern ? window_indel_distance_starts(m, n, eq, best)
                                  : std::min(best, window_indel_distance_small(m, n, eq));
  };
  if (a.size() <= b.size()) directed(a.size(), b.size(), over_a);
  if (b.size() <= a.size()) directed(b.size(), a.size(), over_b);
  return best;
}

// Bit-parallel LCS against a fixed pattern (Hyyro's formulation). Feeding
// text symbols one at a time keeps lcs(pattern, text[start..j]) available
// after every step.
class BitParallelLcs {
public:
  BitParallelLcs(const std::vector<std::uint32_t>& pattern, std::uint32_t vocab)
      : m_(pattern.size()), words_((pattern.size() + 63) / 64), vocab_(vocab),
        match_(static_cast<std::size_t>(vocab) * words_, 0), state_(words_, ~0ULL) {
    for (std::size_t i = 0; i < pattern.size(); ++i) {
      match_[pattern[i] * words_ + i / 64] |= 1ULL << (i % 64);
    }
    last_mask_ = (m_ % 64 == 0) ? ~0ULL : ((1ULL << (m_ % 64)) - 1);
  }

  void reset() { std::fill(state_.begin(), state_.end(), ~0ULL); }

  void feed(std::uint32_t sym) {
    if (sym >= vocab_) return;
    const std::uint64_t* pm = &match_[sym * words_];
    std::uint64_t carry = 0;
    for (std::size_t w = 0; w < words_; ++w) {
      const std::uint64_t v = state_[w];
      const std::uint64_t u = v & pm[w];
      const std::uint64_t sum = v + u;
      const std::uint64_t with_carry = sum + carry;
      carry = (sum < v || with_carry < sum) ? 1 : 0;
      state_[w] = with_carry | (v & ~pm[w]);
    }
  }

  std::size_t lcs() const {
    std::size_t ones = 0;
    for (std::size_t w = 0; w + 1 < words_; ++w) ones += std::popcount(state_[w]);
    ones += std::popcount(state_[words_ - 1] & last_mask_);
    return m_ - ones;
  }

private:
  std::size_t m_;
  std::size_t words_;
  std::uint32_t vocab_;
  std::vector<std::uint64_t> match_;
  std::vector<std::uint64_t> state_;
  std::uint64_t last_mask_ = ~0ULL;
};

std::string format_rho(double rho) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), rho);
  return std::string(buf, res.ptr);
}

} // namespace

std::string TokenSeq::joined() const { return joined(0, tokens.size()); }

std::string TokenSeq::joined(std::size_t begin, std::size_t end) const {
  std::string out;
  end = std::min(end, tokens.size());
  for (std::size_t i = begin; i < end; ++i) {
    if (mode == TokenMode::word && i != begin) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

TokenSeq tokenize(std::string_view text, TokenMode mode) {
  TokenSeq seq;
  seq.mode = mode;
  const auto cps = decode_utf8(text);
  if (mode == TokenMode::character) {
    seq.tokens.reserve(cps.size());
    for (const auto& cp : cps) seq.tokens.emplace_back(text.substr(cp.offset, cp.length));
    return seq;
  }

  enum class Cls { space, word, punct };
  auto classify = [](char32_t c) {
    if (is_unicode_space(c)) return Cls::space;
    return is_punct(c) ? Cls::punct : Cls::word;
  };

  std::size_t tok_begin = 0;
  std::size_t tok_end = 0;
  Cls current = Cls::space;
  for (const auto& cp : cps) {
    const Cls cls = classify(cp.value);
    if (cls != current) {
      if (current != Cls::space) seq.tokens.emplace_back(text.substr(tok_begin, tok_end - tok_begin));
      tok_begin = cp.offset;
      current = cls;
    }
    tok_end = cp.offset + cp.length;
  }
  if (current != Cls::space) seq.tokens.emplace_back(text.substr(tok_begin, tok_end - tok_begin));
  return seq;
}

TokenSeq tokenize(std::string_view text, const TokenizerConfig& cfg) {
  if (cfg.casefold) return tokenize(ascii_fold(text), cfg.mode);
  return tokenize(text, cfg.mode);
}

std::optional<TokenMode> parse_token_mode(std::string_view name) {
  if (name == "word") return TokenMode::word;
  if (name == "char" || name == "character") return TokenMode::character;
  return std::nullopt;
}

std::string_view token_mode_name(TokenMode mode) {
  return mode == TokenMode::word ? "word" : "char";
}

Criterion Criterion::parse(std::string_view text) {
  if (text == "exact") return exact();
  const auto colon = text.find(':');
  if (colon == std::string_view::npos) {
    throw std::invalid_argument("criterion must be 'exact', 'ngram:<n>' or 'fuzzy:<rho>': " +
                                std::string(text));
  }
  const auto head = text.substr(0, colon);
  const auto arg = text.substr(colon + 1);
  if (head == "ngram") {
    std::size_t n = 0;
    auto [ptr, ec] = std::from_chars(arg.data(), arg.data() + arg.size(), n);
    if (ec != std::errc{} || ptr != arg.data() + arg.size() || n == 0) {
      throw std::invalid_argument("bad n-gram size in criterion: " + std::string(text));
    }
    return ngram(n);
  }
  if (head == "fuzzy") {
    double rho = 0;
    auto [ptr, ec] = std::from_chars(arg.data(), arg.data() + arg.size(), rho);
    if (ec != std::errc{} || ptr != arg.data() + arg.size() || !(rho >= 0.0 && rho <= 1.0)) {
      throw std::invalid_argument("fuzzy threshold must lie in [0, 1]: " + std::string(text));
    }
    return fuzzy(rho);
  }
  throw std::invalid_argument("unknown criterion: " + std::string(text));
}

std::string Criterion::name() const {
  switch (kind) {
  case CriterionKind::exact:
    return "exact";
  case CriterionKind::ngram:
    return "ngram:" + std::to_string(n);
  case CriterionKind::fuzzy:
    return "fuzzy:" + format_rho(rho);
  }
  return "exact";
}

std::vector<Criterion> default_criteria() {
  return {Criterion::ngram(3),   Criterion::ngram(6),   Criterion::ngram(9),
          Criterion::ngram(12),  Criterion::fuzzy(0.7), Criterion::fuzzy(0.8),
          Criterion::fuzzy(0.9), Criterion::fuzzy(1.0)};
}

MatchVerdict exact_extract(const TokenSeq& prompt, const TokenSeq& response) {
  if (prompt.empty()) throw std::invalid_argument("exact_extract: prompt is empty");
  require_same_mode(prompt, response);
  MatchVerdict v{Criterion::exact(), false, 0.0, std::nullopt};
  const auto it = std::search(response.tokens.begin(), response.tokens.end(),
                              prompt.tokens.begin(), prompt.tokens.end());
  if (it != response.tokens.end()) {
    const auto begin = static_cast<std::size_t>(it - response.tokens.begin());
    v.matched = true;
    v.score = 1.0;
    v.span = Span{begin, begin + prompt.size()};
  }
  return v;
}

MatchVerdict ngram_extract(const TokenSeq& prompt, const TokenSeq& response, std::size_t n) {
  if (n == 0) throw std::invalid_argument("ngram_extract: n must be at least 1");
  require_same_mode(prompt, response);
  MatchVerdict v{Criterion::ngram(n), false, 0.0, std::nullopt};
  if (prompt.size() < n || response.size() < n) return v;

  const auto ids = intern(prompt, response);
  std::unordered_set<std::u32string> grams;
  grams.reserve(prompt.size() - n + 1);
  for (std::size_t i = 0; i + n <= ids.a.size(); ++i) {
    grams.emplace(ids.a.begin() + i, ids.a.begin() + i + n);
  }
  std::u32string window;
  for (std::size_t i = 0; i + n <= ids.b.size(); ++i) {
    window.assign(ids.b.begin() + i, ids.b.begin() + i + n);
    if (grams.contains(window)) {
      v.matched = true;
      v.score = 1.0;
      v.span = Span{i, i + n};
      break;
    }
  }
  return v;
}

std::size_t lcs_length(const TokenSeq& a, const TokenSeq& b) {
  require_same_mode(a, b);
  const auto ids = intern(a, b);
  const auto& rows = ids.a.size() >= ids.b.size() ? ids.a : ids.b;
  const auto& cols = ids.a.size() >= ids.b.size() ? ids.b : ids.a;
  std::vector<std::size_t> prev(cols.size() + 1, 0);
  std::vector<std::size_t> cur(cols.size() + 1, 0);
  for (const auto sym : rows) {
    for (std::size_t j = 1; j <= cols.size(); ++j) {
      cur[j] = cols[j - 1] == sym ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[cols.size()];
}

std::size_t partial_lcs_distance(const TokenSeq& a, const TokenSeq& b) {
  require_same_mode(a, b);
  if (auto d = partial_lcs_distance_short(a, b)) return *d;
  const auto ids = intern(a, b);
  if (ids.a.size() < ids.b.size()) return window_indel_distance(ids.a, ids.b, ids.vocab);
  if (ids.a.size() > ids.b.size()) return window_indel_distance(ids.b, ids.a, ids.vocab);
  return std::min(window_indel_distance(ids.a, ids.b, ids.vocab),
                  window_indel_distance(ids.b, ids.a, ids.vocab));
}

double fuzzy_similarity(const TokenSeq& a, const TokenSeq& b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("fuzzy_similarity: empty sequence");
  const auto d = partial_lcs_distance(a, b);
  return 1.0 - static_cast<double>(d) / static_cast<double>(std::min(a.size(), b.size()));
}

CandidateSpan best_candidate_span(const TokenSeq& prompt, const TokenSeq& response) {
  if (prompt.empty() || response.empty()) {
    throw std::invalid_argument("best_candidate_span: empty input");
  }
  require_same_mode(prompt, response);
  const auto ids = intern(prompt, response);
  const std::size_t m = ids.a.size();
  const std::size_t r = ids.b.size();
  // Windows of length >= 2m can never score above zero.
  const std::size_t max_len = 2 * m - 1;

  BitParallelLcs lcs(ids.a, ids.vocab);
  Span best{0, 0};
  std::int64_t best_num = 0; // score = best_num / best_den
  std::int64_t best_den = 1;
  for (std::size_t start = 0; start < r; ++start) {
    // A window opening on a token absent from the prompt is strictly beaten
    // by the same window without that token.
    if (ids.b[start] >= ids.vocab) continue;
    lcs.reset();
    const std::size_t stop = std::min(r, start + max_len);
    for (std::size_t j = start; j < stop; ++j) {
      lcs.feed(ids.b[j]);
      const auto len = static_cast<std::int64_t>(j + 1 - start);
      const auto common = static_cast<std::int64_t>(lcs.lcs());
      const auto dist = static_cast<std::int64_t>(m) + len - 2 * common;
      const auto den = std::min(static_cast<std::int64_t>(m), len);
      const auto num = den - dist;
      if (num > 0 && num * best_den > best_num * den) {
        best_num = num;
        best_den = den;
        best = Span{start, j + 1};
      }
    }
  }
  return {best, static_cast<double>(best_num) / static_cast<double>(best_den)};
}

MatchVerdict fuzzy_extract(const TokenSeq& prompt, const TokenSeq& response, double rho) {
  MatchVerdict v{Criterion::fuzzy(rho), false, 0.0, std::nullopt};
  if (response.empty()) return v;
  const auto cand = best_candidate_span(prompt, response);
  v.score = cand.similarity;
  v.matched = !cand.span.empty() && cand.similarity >= rho;
  if (!cand.span.empty()) v.span = cand.span;
  return v;
}

MatchVerdict evaluate(const Criterion& criterion, const TokenSeq& prompt, const TokenSeq& response) {
  switch (criterion.kind) {
  case CriterionKind::exact:
    return exact_extract(prompt, response);
  case CriterionKind::ngram:
    return ngram_extract(prompt, response, criterion.n);
  case CriterionKind::fuzzy:
    return fuzzy_extract(prompt, response, criterion.rho);
  }
  return exact_extract(prompt, response);
}

} // namespace pead::textmatch
