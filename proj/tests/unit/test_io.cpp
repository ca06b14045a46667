// SPDX-FileCopyrightText: © 2026 The cpmoe Authors
//
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>

#include "cpmoe/checkpoint.hpp"
#include "cpmoe/config_io.hpp"
#include "cpmoe/corpus.hpp"
#include "cpmoe/errors.hpp"
#include "cpmoe/metrics.hpp"
#include "cpmoe/optim.hpp"
#include "cpmoe/rng.hpp"
#include "cpmoe/run_dir.hpp"
#include "cpmoe/tokenizer.hpp"
#include "helpers.hpp"

using namespace cpmoe;
namespace fs = std::filesystem;

namespace {

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("cpmoe-io-" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  }
  void spit(const fs::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << s;
  }

  fs::path dir_;
};

std::string random_utf8(Rng& rng, std::size_t n) {
  std::string s;
  for (std::size_t i = 0; i < n; ++i) {
    const auto kind = rng.below(4);
    char32_t cp = kind == 0   ? 0x20 + rng.below(0x5f)
                  : kind == 1 ? 0xa0 + rng.below(0x700)
                  : kind == 2 ? 0x3040 + rng.below(0x6000)
                              : 0x1f300 + rng.below(0x200);
    if (cp < 0x80) {
      s += static_cast<char>(cp);
    } else if (cp < 0x800) {
      s += static_cast<char>(0xc0 | (cp >> 6));
      s += static_cast<char>(0x80 | (cp & 0x3f));
    } else if (cp < 0x10000) {
      s += static_cast<char>(0xe0 | (cp >> 12));
      s += static_cast<char>(0x80 | ((cp >> 6) & 0x3f));
      s += static_cast<char>(0x80 | (cp & 0x3f));
    } else {
      s += static_cast<char>(0xf0 | (cp >> 18));
      s += static_cast<char>(0x80 | ((cp >> 12) & 0x3f));
      s += static_cast<char>(0x80 | ((cp >> 6) & 0x3f));
      s += static_cast<char>(0x80 | (cp & 0x3f));
    }
  }
  return s;
}

void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s += static_cast<char>((v >> (8 * i)) & 0xff);
}
void put_u64(std::string& s, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) s += static_cast<char>((v >> (8 * i)) & 0xff);
}

}  // namespace

using Tokenizer = TempDir;

TEST(TokenizerBasic, BytesAreIds) {
  EXPECT_EQ(tokenize("AB"), (std::vector<std::int32_t>{65, 66}));
  EXPECT_EQ(tokenize("\xff"), (std::vector<std::int32_t>{255}));
  EXPECT_TRUE(tokenize("").empty());
}

TEST_F(Tokenizer, EmptyFileIsJustEndOfText) {
  spit(dir_ / "empty.txt", "");
  EXPECT_EQ(tokenize_file(dir_ / "empty.txt"), (std::vector<std::int32_t>{kEndOfText}));
  spit(dir_ / "ab.txt", "AB");
  EXPECT_EQ(tokenize_file(dir_ / "ab.txt"), (std::vector<std::int32_t>{65, 66, kEndOfText}));
}

TEST_F(Tokenizer, MissingFileIsIoErrorWithPath) {
  try {
    tokenize_file(dir_ / "nope.txt");
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("nope.txt"), std::string::npos);
  }
}

TEST(TokenizerBasic, RoundTripRandomUtf8) {
  Rng rng(3, "utf8");
  for (int i = 0; i < 200; ++i) {
    const auto s = random_utf8(rng, rng.below(64));
    EXPECT_EQ(detokenize(tokenize(s)), s);
  }
  auto ids = tokenize("hi");
  ids.push_back(kEndOfText);
  EXPECT_EQ(detokenize(ids), "hi");
  EXPECT_THROW(detokenize(std::vector<std::int32_t>{300}), ContractError);
}

TEST(Corpus, SyntheticIsDeterministicAndSized) {
  auto a = load_corpus("synthetic:grammar:5000", 1);
  EXPECT_EQ(a, load_corpus("synthetic:grammar:5000", 1));
  EXPECT_NE(a, load_corpus("synthetic:grammar:5000", 2));
  EXPECT_GE(a.size(), 5001u);
  EXPECT_EQ(a.back(), kEndOfText);
  for (std::int32_t id : a) EXPECT_LT(static_cast<std::size_t>(id), kByteVocabSize);
  EXPECT_THROW(load_corpus("synthetic:poetry:100", 1), ConfigError);
  EXPECT_THROW(load_corpus("synthetic:grammar:abc", 1), ConfigError);
}

TEST(Corpus, SkewedCorpusIsSkewed) {
  const auto text = skewed_corpus(20000, 4);
  std::map<std::string, int> counts;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find(' ', pos);
    if (end == std::string::npos) break;
    counts[text.substr(pos, end - pos)]++;
    pos = end + 1;
  }
  int top = 0, total = 0;
  for (const auto& [w, c] : counts) {
    top = std::max(top, c);
    total += c;
  }
  EXPECT_GT(static_cast<double>(top) / total, 0.5);
}

TEST(Corpus, SplitKeepsOrderAndFraction) {
  std::vector<std::int32_t> t(100);
  std::iota(t.begin(), t.end(), 0);
  auto s = split_corpus(t, 0.1);
  EXPECT_EQ(s.train.size(), 90u);
  EXPECT_EQ(s.held_out.front(), 90);
  EXPECT_THROW(split_corpus(t, 1.0), ConfigError);
}

TEST(Config, RoundTripsEveryPreset) {
  for (const auto& name : preset_names()) {
    ExperimentConfig e;
    e.model = preset(name);
    e.seq_len = std::min<std::size_t>(e.seq_len, e.model.max_seq_len);
    e.optim.total_steps = e.steps;
    const auto text = serialize_experiment_config(e);
    const auto back = parse_experiment_config(text);
    EXPECT_EQ(back, e) << name;
    EXPECT_EQ(serialize_experiment_config(back), text) << name;
  }
}

TEST(Config, RoundTripsAwkwardNumbers) {
  Rng rng(8, "config");
  for (int i = 0; i < 50; ++i) {
    ExperimentConfig e;
    e.optim.lr = std::exp(-10.0 * rng.uniform());
    e.optim.beta2 = 1.0 - 1e-3 * rng.uniform();
    e.model.alpha_balance = rng.uniform() / 3.0;
    e.model.topp_threshold = 0.1 + 0.9 * rng.uniform();
    e.model.seed = rng.at(i);
    e.held_out_fraction = 0.05 + 0.5 * rng.uniform();
    e.optim.total_steps = e.steps;
    EXPECT_EQ(parse_experiment_config(serialize_experiment_config(e)), e);
  }
}

TEST(Config, PresetAppliesFirstThenOverrides) {
  auto e = parse_experiment_config(
      "# comment\n"
      "train.steps = 20\n"
      "model.d_model = 32\n"
      "model.preset = desk-cartesian\n"
      "optim.lr = 0.002\n");
  EXPECT_EQ(e.model.d_model, 32u);
  EXPECT_EQ(e.model.variant, MoeVariant::kCartesian);
  EXPECT_EQ(e.model.split, 2u);
  EXPECT_EQ(e.steps, 20u);
  EXPECT_EQ(e.optim.total_steps, 20u);
  EXPECT_DOUBLE_EQ(e.optim.lr, 0.002);
}

TEST(Config, ErrorsAreCategorized) {
  EXPECT_THROW(parse_experiment_config("model.bogus = 1\n"), ConfigError);
  EXPECT_THROW(parse_experiment_config("train.steps = many\n"), ConfigError);
  EXPECT_THROW(parse_experiment_config("no equals sign\n"), ConfigError);
  EXPECT_THROW(parse_experiment_config("train.steps = 0\n"), ConfigError);
  EXPECT_THROW(parse_experiment_config("train.seq_len = 100000\n"), ConfigError);
  EXPECT_THROW(parse_experiment_config("model.variant = sparse\n"), ConfigError);
  EXPECT_THROW(parse_experiment_config("model.preset = nope\n"), UsageError);
}

using ConfigFile = TempDir;

TEST_F(ConfigFile, SaveLoad) {
  ExperimentConfig e;
  e.model = desk_config(MoeVariant::kTopP);
  e.optim.total_steps = e.steps;
  save_experiment_config(e, dir_ / "run.cfg");
  EXPECT_EQ(load_experiment_config(dir_ / "run.cfg"), e);
  EXPECT_THROW(load_experiment_config(dir_ / "missing.cfg"), IoError);
}

TEST(Metrics, LinesAreSelfDescribingAndParse) {
  MetricsRecord r("train");
  r.set("step", 3).set("lm_loss", 2.5).set("run", "with space=eq").set("big", std::uint64_t{1} << 60);
  const auto line = r.to_line();
  EXPECT_EQ(line.rfind("kind=train ", 0), 0u) << line;
  auto back = MetricsRecord::parse(line);
  EXPECT_EQ(back.kind(), "train");
  EXPECT_EQ(back.require("step"), 3.0);
  EXPECT_EQ(back.require("lm_loss"), 2.5);
  EXPECT_EQ(back.text("run"), "with_space_eq");
  EXPECT_EQ(back.text("big"), std::to_string(std::uint64_t{1} << 60));
  EXPECT_FALSE(back.number("missing").has_value());
  EXPECT_THROW(back.require("missing"), ContractError);
  EXPECT_THROW(MetricsRecord::parse("step=1 kind=train"), CorruptionError);
  EXPECT_THROW(MetricsRecord::parse("kind=train junk"), CorruptionError);
}

TEST(Metrics, DoublesRoundTripExactly) {
  Rng rng(2, "metrics");
  for (int i = 0; i < 100; ++i) {
    const double x = std::ldexp(rng.normal(), static_cast<int>(rng.below(80)) - 40);
    MetricsRecord r("eval");
    r.set("x", x);
    EXPECT_EQ(MetricsRecord::parse(r.to_line()).require("x"), x);
  }
}

using MetricsFile = TempDir;

TEST_F(MetricsFile, WriterAppends) {
  {
    MetricsWriter w(dir_ / "m.txt");
    w.write(MetricsRecord("train").set("step", 1));
  }
  {
    MetricsWriter w(dir_ / "m.txt");
    w.write(MetricsRecord("train").set("step", 2));
  }
  auto recs = read_metrics(dir_ / "m.txt");
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_EQ(recs[1].require("step"), 2.0);
  {
    MetricsWriter w(dir_ / "m.txt", false);
    w.write(MetricsRecord("eval").set("ppl", 9.0));
  }
  EXPECT_EQ(read_metrics(dir_ / "m.txt").size(), 1u);
}

TEST(Metrics, TableRoundTrip) {
  const std::vector<std::string> header{"a", "b"};
  const std::vector<std::vector<std::string>> rows{{"1", "x"}, {"2", "y"}};
  auto t = parse_table(format_table(header, rows));
  ASSERT_EQ(t.size(), 3u);
  EXPECT_EQ(t[0], header);
  EXPECT_EQ(t[2], rows[1]);
}

using Checkpoints = TempDir;

TEST_F(Checkpoints, RoundTripIsBitIdentical) {
  for (MoeVariant v : all_variants()) {
    Model<float> m(toy_config(v));
    testing_support::randomize(m.parameters(), 5, 1.0f);
    AdamW<float> opt(m.parameters(), AdamWConfig{});
    for (auto p : m.parameters())
      for (float& g : p.mutable_grad()) g = 0.25f;
    opt.step();
    save_checkpoint(dir_ / "c.bin", m, &opt.state());
    auto ck = read_checkpoint(dir_ / "c.bin");
    EXPECT_EQ(ck.version, kCheckpointVersion);
    EXPECT_EQ(ck.config, m.config());
    EXPECT_EQ(ck.optim_step, 1u);
    auto m2 = model_from_checkpoint(ck);
    for (std::size_t i = 0; i < m.parameters().size(); ++i) {
      auto a = m.parameters()[i].data(), b = m2.parameters()[i].data();
      ASSERT_EQ(a.size(), b.size());
      EXPECT_EQ(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)), 0)
          << m.named_parameters()[i].first;
    }
    auto st = optim_from_checkpoint(ck, m2);
    ASSERT_TRUE(st.has_value());
    EXPECT_EQ(st->m, opt.state().m);
    EXPECT_EQ(st->v, opt.state().v);
    EXPECT_FALSE(fs::exists(dir_ / "c.bin.tmp"));
  }
}

TEST_F(Checkpoints, ManifestTenPayloadNine) {
  std::string header = serialize_model_config(toy_config(MoeVariant::kDense));
  header += "tensor embed 10 0 10\n";
  std::string blob = "CPMOECKP";
  put_u32(blob, kCheckpointVersion);
  put_u64(blob, header.size());
  blob += header;
  for (int i = 0; i < 9; ++i) put_u32(blob, 0);
  spit(dir_ / "short.bin", blob);
  try {
    read_checkpoint(dir_ / "short.bin");
    FAIL();
  } catch (const CorruptionError& e) {
    EXPECT_NE(std::string(e.what()).find("'embed'"), std::string::npos) << e.what();
  }
}

TEST_F(Checkpoints, TruncationNamesFirstBadTensor) {
  Model<float> m(toy_config(MoeVariant::kSmoe));
  save_checkpoint(dir_ / "c.bin", m);
  auto blob = slurp(dir_ / "c.bin");
  const std::size_t head = m.parameter("head").numel();
  spit(dir_ / "c.bin", blob.substr(0, blob.size() - 4 * (head + 1)));
  try {
    read_checkpoint(dir_ / "c.bin");
    FAIL();
  } catch (const CorruptionError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("final_norm"), std::string::npos) << what;
  }
}

TEST_F(Checkpoints, VersionMagicAndTrailingBytes) {
  Model<float> m(toy_config(MoeVariant::kSmoe));
  save_checkpoint(dir_ / "c.bin", m);
  const auto blob = slurp(dir_ / "c.bin");

  auto bad_version = blob;
  bad_version[8] = 2;
  spit(dir_ / "v.bin", bad_version);
  EXPECT_THROW(read_checkpoint(dir_ / "v.bin"), CorruptionError);

  auto bad_magic = blob;
  bad_magic[0] = 'X';
  spit(dir_ / "m.bin", bad_magic);
  EXPECT_THROW(read_checkpoint(dir_ / "m.bin"), CorruptionError);

  spit(dir_ / "t.bin", blob + "abcd");
  EXPECT_THROW(read_checkpoint(dir_ / "t.bin"), CorruptionError);

  EXPECT_THROW(read_checkpoint(dir_ / "absent.bin"), IoError);
  EXPECT_FALSE(read_checkpoint(dir_ / "c.bin").optim_step.has_value());
}

using RunDir = TempDir;

TEST_F(RunDir, LockIsExclusive) {
  const auto out = dir_ / "run";
  {
    RunDirLock a(out);
    EXPECT_TRUE(fs::exists(out / ".lock"));
    EXPECT_THROW(RunDirLock{out}, IoError);
  }
  EXPECT_FALSE(fs::exists(out / ".lock"));
  EXPECT_NO_THROW(RunDirLock{out});
}
