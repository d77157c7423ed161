#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "cope/checkpoint.hpp"
#include "cope/kv.hpp"
#include "cope/tasks.hpp"

using namespace cope;
namespace fs = std::filesystem;

namespace {

fs::path write_temp(const std::string& name, const std::string& text) {
  const fs::path p = fs::temp_directory_path() / ("cope_test_" + name);
  std::ofstream(p, std::ios::binary) << text;
  return p;
}

TaskSpec order_spec(std::size_t seq_len = 8, std::uint64_t seed = 1) {
  TaskSpec s;
  s.seq_len = seq_len;
  s.seed = seed;
  s.train_size = 200;
  s.val_size = 101;
  return s;
}

}  // namespace

TEST(OrderTask, LabelsFollowMarkerOrder) {
  const Dataset d = generate_task(order_spec());
  ASSERT_EQ(d.size(), 301u);
  for (const auto& e : d.examples) {
    ASSERT_EQ(e.tokens.size(), 8u);
    EXPECT_EQ(std::count(e.tokens.begin(), e.tokens.end(), kMarkerA), 1);
    EXPECT_EQ(std::count(e.tokens.begin(), e.tokens.end(), kMarkerB), 1);
    EXPECT_EQ(std::count(e.tokens.begin(), e.tokens.end(), std::size_t{0}), 0);
    const auto a = std::find(e.tokens.begin(), e.tokens.end(), kMarkerA);
    const auto b = std::find(e.tokens.begin(), e.tokens.end(), kMarkerB);
    EXPECT_EQ(e.label, a < b ? 1u : 0u);
    for (std::size_t t : e.tokens) EXPECT_LT(t, d.vocab_size);
  }
}

TEST(OrderTask, ClassesShareTokenMultisets) {
  const Dataset d = generate_task(order_spec());
  std::map<std::multiset<std::size_t>, std::pair<int, int>> by_bag;
  std::size_t ones = 0;
  for (const auto& e : d.examples) {
    auto& c = by_bag[std::multiset<std::size_t>(e.tokens.begin(), e.tokens.end())];
    (e.label ? c.second : c.first)++;
    ones += e.label;
  }
  EXPECT_LE(std::abs(static_cast<long>(ones) - static_cast<long>(d.size() - ones)), 1);
  int unbalanced = 0;
  for (const auto& [bag, c] : by_bag) unbalanced += c.first != c.second;
  EXPECT_LE(unbalanced, 1);  // only the odd trailing example
}

TEST(OrderTask, DeterministicPerSeedWithDistinctIds) {
  const Dataset a = generate_task(order_spec()), b = generate_task(order_spec());
  const Dataset c = generate_task(order_spec(8, 2));
  bool differs = false;
  std::set<std::size_t> ids;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.examples[i].tokens, b.examples[i].tokens);
    differs = differs || a.examples[i].tokens != c.examples[i].tokens;
    ids.insert(a.examples[i].id);
  }
  EXPECT_TRUE(differs);
  EXPECT_EQ(ids.size(), a.size());
  const auto [train, val] = split_dataset(a, 200);
  EXPECT_EQ(train.size(), 200u);
  EXPECT_EQ(val.size(), 101u);
  EXPECT_EQ(val.examples.front().id, 200u);
  EXPECT_THROW(split_dataset(a, 400), ConfigError);
}

TEST(OrderTask, RejectsBadSpecs) {
  TaskSpec s = order_spec(3);
  EXPECT_THROW(generate_task(s), ConfigError);
  s = order_spec();
  s.num_classes = 3;
  EXPECT_THROW(generate_task(s), ConfigError);
  s = order_spec();
  s.vocab_size = 3;
  EXPECT_THROW(generate_task(s), ConfigError);
  s.kind = TaskKind::external;
  EXPECT_THROW(generate_task(s), ConfigError);
}

TEST(PositionBucketTask, LabelIsBucketOfMarker) {
  TaskSpec s = order_spec(12);
  s.kind = TaskKind::position_bucket;
  s.num_classes = 3;
  const Dataset d = generate_task(s);
  std::vector<int> counts(3);
  for (const auto& e : d.examples) {
    const auto p = static_cast<std::size_t>(std::find(e.tokens.begin(), e.tokens.end(), kMarkerA) - e.tokens.begin());
    EXPECT_EQ(e.label, p / 4);
    counts[e.label]++;
  }
  EXPECT_LE(*std::max_element(counts.begin(), counts.end()) - *std::min_element(counts.begin(), counts.end()), 1);
  s.num_classes = 5;
  EXPECT_THROW(generate_task(s), ConfigError);
}

TEST(FirstTokenTask, LabelFromFirstToken) {
  TaskSpec s = order_spec();
  s.kind = TaskKind::first_token;
  s.num_classes = 4;
  for (const auto& e : generate_task(s).examples) EXPECT_EQ(e.label, (e.tokens[0] - kFirstFiller) % 4);
}

TEST(ShuffleTokens, KeepsMultisetAndLabel) {
  const Dataset d = generate_task(order_spec());
  const Dataset s = shuffle_tokens(d, 9);
  bool moved = false;
  for (std::size_t i = 0; i < d.size(); ++i) {
    EXPECT_EQ(std::multiset<std::size_t>(d.examples[i].tokens.begin(), d.examples[i].tokens.end()),
              std::multiset<std::size_t>(s.examples[i].tokens.begin(), s.examples[i].tokens.end()));
    EXPECT_EQ(d.examples[i].label, s.examples[i].label);
    moved = moved || d.examples[i].tokens != s.examples[i].tokens;
  }
  EXPECT_TRUE(moved);
}

TEST(Tsv, SingleSentenceWithHeaderAndUnknowns) {
  const auto p = write_temp("single.tsv", "sentence\tlabel\nthe cat sat\t1\nthe dog\t0\r\n\nrare the\t1\n");
  const TsvDataset t = load_tsv(p.string(), TsvFormat::single_sentence, 2, 64);
  ASSERT_EQ(t.data.size(), 3u);
  EXPECT_EQ(t.vocab.size(), 4u);  // pad, unk, sep, "the"
  const std::size_t the = t.vocab.id("the");
  EXPECT_EQ(the, 3u);
  EXPECT_EQ(t.data.examples[0].tokens, (std::vector<std::size_t>{the, kUnkId, kUnkId}));
  EXPECT_EQ(t.data.examples[2].tokens, (std::vector<std::size_t>{kUnkId, the}));
  EXPECT_EQ(t.data.examples[1].label, 0u);
  EXPECT_EQ(t.data.positive_class, std::optional<std::size_t>{1});
  EXPECT_TRUE(t.data.examples[0].segment_ids.empty());

  const TsvDataset all = load_tsv(p.string(), TsvFormat::single_sentence, 2, 64, nullptr, 1);
  EXPECT_EQ(all.vocab.size(), 3u + 5u);
  fs::remove(p);
}

TEST(Tsv, SentencePairsGetSeparatorAndSegments) {
  const auto p = write_temp("pair.tsv", "a b\tc\t2\n");
  const TsvDataset t = load_tsv(p.string(), TsvFormat::sentence_pair, 3, 64, nullptr, 1);
  const Example& e = t.data.examples.at(0);
  EXPECT_EQ(e.tokens, (std::vector<std::size_t>{3, 4, kSepId, 5}));
  EXPECT_EQ(e.segment_ids, (std::vector<std::size_t>{0, 0, 0, 1}));
  EXPECT_EQ(e.label, 2u);
  EXPECT_FALSE(t.data.positive_class);
  fs::remove(p);
}

TEST(Tsv, TruncatesAndFillsEmpty) {
  const auto p = write_temp("trunc.tsv", "a a a a a a\t0\n\t1\n");
  const TsvDataset t = load_tsv(p.string(), TsvFormat::single_sentence, 2, 4);
  EXPECT_EQ(t.data.examples[0].tokens.size(), 4u);
  EXPECT_EQ(t.data.examples[1].tokens, (std::vector<std::size_t>{kUnkId}));
  fs::remove(p);
}

TEST(Tsv, ErrorsNameTheLine) {
  const auto expect_error = [](const std::string& text, const std::string& needle, TsvFormat f) {
    const auto p = write_temp("bad.tsv", text);
    try {
      load_tsv(p.string(), f, 2, 64);
      ADD_FAILURE() << "no error for " << text;
    } catch (const TsvError& e) {
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
    fs::remove(p);
  };
  expect_error("a\t0\nb\t1\tx\n", ":2:", TsvFormat::single_sentence);
  expect_error("a\t0\nb\tx\n", ":2: label 'x'", TsvFormat::single_sentence);
  expect_error("a\t0\na\t0\nb\t5\n", ":3: label 5 outside", TsvFormat::single_sentence);
  expect_error("a\t0\n", ":1: expected 3", TsvFormat::sentence_pair);
  EXPECT_THROW(load_tsv("/nonexistent/file.tsv", TsvFormat::single_sentence, 2, 8), TsvError);
}

TEST(Tsv, VocabularySaveLoadAndReuse) {
  const auto p = write_temp("vocab_src.tsv", "x y x y\t0\n");
  const TsvDataset t = load_tsv(p.string(), TsvFormat::single_sentence, 2, 64);
  const auto vp = fs::temp_directory_path() / "cope_test_vocab.txt";
  t.vocab.save(vp.string());
  const Vocabulary back = Vocabulary::load(vp.string());
  EXPECT_EQ(back.words(), t.vocab.words());
  const auto q = write_temp("vocab_use.tsv", "y z\t1\n");
  const TsvDataset u = load_tsv(q.string(), TsvFormat::single_sentence, 2, 64, &back);
  EXPECT_EQ(u.data.examples[0].tokens, (std::vector<std::size_t>{back.id("y"), kUnkId}));
  EXPECT_EQ(u.data.vocab_size, back.size());
  for (const auto& f : {p, vp, q}) fs::remove(f);
}

TEST(KeyValues, ParseAndErrors) {
  const KeyValues kv = KeyValues::parse("# comment\n a = 1 \nb=two words # trailing\n\nflag = true\nx = 0.5");
  EXPECT_EQ(kv.get("a"), "1");
  EXPECT_EQ(kv.get("b"), "two words");
  EXPECT_TRUE(kv.get_bool("flag", false));
  EXPECT_EQ(kv.get_double("x", 0.0), 0.5);
  EXPECT_EQ(kv.get_uint("missing", 7), 7u);
  EXPECT_THROW(kv.get("missing"), std::exception);
  EXPECT_THROW(KeyValues::parse("a = 1\nnot a pair\n"), ParseError);
  EXPECT_THROW(KeyValues::parse("a = 1\na = 2\n"), ParseError);
  EXPECT_THROW(KeyValues::parse(" = 2\n"), ParseError);
  EXPECT_THROW(kv.get_uint("b", 0), std::exception);
}

TEST(KeyValues, DoublesRoundTripExactly) {
  KeyValues kv;
  for (double v : {0.1, 1e-4, 1.0 / 3.0, 6.02214076e23, -2.5e-300}) {
    kv.set("v", v);
    EXPECT_EQ(KeyValues::parse(kv.dump()).get_double("v", 0.0), v);
  }
}

TEST(Checkpoint, RoundTripAndBadMagic) {
  const auto p = fs::temp_directory_path() / "cope_test.ckpt";
  Checkpoint ck;
  ck.config.set("model.layers", std::uint64_t{2});
  ck.metadata.set("epoch", std::uint64_t{3});
  ck.blobs.emplace_back("w", RealMatrix{{1.0 / 3.0, -0.0}, {1e-310, 4.0}});
  save_checkpoint(p.string(), ck);
  const Checkpoint back = load_checkpoint(p.string());
  EXPECT_EQ(back.config.dump(), ck.config.dump());
  EXPECT_EQ(back.metadata.get_uint("epoch", 0), 3u);
  ASSERT_NE(back.find("w"), nullptr);
  EXPECT_EQ(*back.find("w"), ck.blobs[0].second);
  EXPECT_EQ(back.find("nope"), nullptr);

  std::ofstream(p, std::ios::binary) << "NOTACKPT and some bytes";
  EXPECT_THROW(load_checkpoint(p.string()), CheckpointError);
  std::ofstream(p, std::ios::binary | std::ios::trunc) << "COPE";
  EXPECT_THROW(load_checkpoint(p.string()), CheckpointError);
  fs::remove(p);
  EXPECT_THROW(load_checkpoint(p.string()), CheckpointError);
}
