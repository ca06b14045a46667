// SPDX-FileCopyrightText: © 2026 The cpmoe Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "cpmoe/corpus.hpp"

#include <array>
#include <charconv>
#include <cmath>

#include "cpmoe/errors.hpp"
#include "cpmoe/rng.hpp"
#include "cpmoe/tokenizer.hpp"

namespace cpmoe {

namespace {

template <std::size_t N>
std::string_view pick(Rng& rng, const std::array<std::string_view, N>& words) {
  return words[rng.below(N)];
}

}  // namespace

std::string grammar_corpus(std::size_t bytes, std::uint64_t seed) {
  static constexpr std::array<std::string_view, 8> dets{"the", "a", "every", "one", "the",
                                                        "some", "this", "that"};
  static constexpr std::array<std::string_view, 10> adjs{
      "quick", "small", "old", "green", "quiet", "bright", "heavy", "calm", "tall", "round"};
  static constexpr std::array<std::string_view, 12> nouns{
      "fox",  "dog",   "river", "stone", "child", "bird",
      "tree", "house", "boat",  "cloud", "horse", "lamp"};
  static constexpr std::array<std::string_view, 10> verbs{
      "sees", "finds", "follows", "moves", "likes", "holds", "hears", "keeps", "lifts", "meets"};
  static constexpr std::array<std::string_view, 6> preps{"near", "under", "behind",
                                                         "over", "beside", "past"};
  Rng rng(seed, "corpus-grammar");
  std::string out;
  out.reserve(bytes + 64);
  auto noun_phrase = [&] {
    out += pick(rng, dets);
    out += ' ';
    if (rng.uniform() < 0.5) {
      out += pick(rng, adjs);
      out += ' ';
    }
    out += pick(rng, nouns);
  };
  while (out.size() < bytes) {
    noun_phrase();
    out += ' ';
    out += pick(rng, verbs);
    out += ' ';
    noun_phrase();
    if (rng.uniform() < 0.4) {
      out += ' ';
      out += pick(rng, preps);
      out += ' ';
      noun_phrase();
    }
    out += rng.uniform() < 0.2 ? ".\n" : ". ";
  }
  return out;
}

std::string skewed_corpus(std::size_t bytes, std::uint64_t seed) {
  static constexpr std::array<std::string_view, 16> words{
      "aaaa", "aa", "aaa", "ab", "ba", "b", "aab", "abba",
      "zq",   "xv", "kj",  "wy", "qz", "mx", "vv", "jk"};
  // weight of rank r is r^-2.5, so the first few words cover most text
  std::array<double, words.size()> cdf{};
  double acc = 0.0;
  for (std::size_t r = 0; r < words.size(); ++r) {
    acc += std::pow(static_cast<double>(r + 1), -2.5);
    cdf[r] = acc;
  }
  Rng rng(seed, "corpus-skewed");
  std::string out;
  out.reserve(bytes + 8);
  while (out.size() < bytes) {
    const double u = rng.uniform() * acc;
    std::size_t r = 0;
    while (r + 1 < words.size() && cdf[r] <= u) ++r;
    out += words[r];
    out += ' ';
  }
  return out;
}

std::vector<std::int32_t> load_corpus(std::string_view source, std::uint64_t seed) {
  constexpr std::string_view prefix = "synthetic:";
  if (!source.starts_with(prefix)) return tokenize_file(std::filesystem::path(std::string(source)));
  auto rest = source.substr(prefix.size());
  const auto colon = rest.find(':');
  const auto kind = rest.substr(0, colon);
  std::size_t bytes = 200000;
  if (colon != std::string_view::npos) {
    auto num = rest.substr(colon + 1);
    auto [ptr, ec] = std::from_chars(num.data(), num.data() + num.size(), bytes);
    if (ec != std::errc{} || ptr != num.data() + num.size() || bytes == 0) {
      throw ConfigError("bad synthetic corpus size '" + std::string(num) + "'");
    }
  }
  std::string text;
  if (kind == "grammar") {
    text = grammar_corpus(bytes, seed);
  } else if (kind == "skewed") {
    text = skewed_corpus(bytes, seed);
  } else {
    throw ConfigError("unknown synthetic corpus '" + std::string(kind) +
                      "' (valid: grammar, skewed)");
  }
  auto ids = tokenize(text);
  ids.push_back(kEndOfText);
  return ids;
}

CorpusSplit split_corpus(std::span<const std::int32_t> tokens, double held_out_fraction) {
  if (held_out_fraction < 0.0 || held_out_fraction >= 1.0) {
    throw ConfigError("held-out fraction must be in [0, 1)");
  }
  const auto held = static_cast<std::size_t>(
      std::floor(static_cast<double>(tokens.size()) * held_out_fraction));
  const std::size_t cut = tokens.size() - held;
  return {std::vector<std::int32_t>(tokens.begin(), tokens.begin() + static_cast<long>(cut)),
          std::vector<std::int32_t>(tokens.begin() + static_cast<long>(cut), tokens.end())};
}

}  // namespace cpmoe
