#include "hfan/corpus.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

namespace hfan {
namespace {

namespace fs = std::filesystem;

fs::path temp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "hfan_corpus_tests";
  fs::create_directories(dir);
  return dir / name;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

RawReview raw(std::string id, std::string user, std::string product, int label, std::string text) {
  return {std::move(id), std::move(user), std::move(product), label, std::move(text)};
}

using Sentences = std::vector<std::vector<std::string>>;

TEST(LoadJsonl, EmptyAndOrdered) {
  const auto empty = temp_path("empty.jsonl");
  write_text(empty, "");
  EXPECT_TRUE(load_jsonl(empty).empty());

  const auto three = temp_path("three.jsonl");
  write_text(three,
             R"({"review_id":"a","user_id":"u","product_id":"p","label":0,"text":"x"})"
             "\n"
             R"({"review_id":"b","user_id":"u","product_id":"p","label":1,"text":"y"})"
             "\n"
             R"({"review_id":"c","user_id":"v","product_id":"q","label":0,"text":"z"})"
             "\n");
  const auto reviews = load_jsonl(three);
  ASSERT_EQ(reviews.size(), 3u);
  EXPECT_EQ(reviews[0].review_id, "a");
  EXPECT_EQ(reviews[1].label, 1);
  EXPECT_EQ(reviews[2].product_id, "q");
}

TEST(LoadJsonl, ErrorsCarryLineNumbers) {
  const std::string good = R"({"review_id":"a","user_id":"u","product_id":"p","label":0,"text":"x"})";
  const auto label2 = temp_path("label2.jsonl");
  write_text(label2, good + "\n" +
                         R"({"review_id":"b","user_id":"u","product_id":"p","label":2,"text":"x"})" +
                         "\n");
  try {
    load_jsonl(label2);
    FAIL();
  } catch (const SchemaError& e) {
    EXPECT_EQ(e.line(), 2u);
  }

  const auto missing = temp_path("missing.jsonl");
  write_text(missing, R"({"review_id":"a","user_id":"u","label":0,"text":"x"})" "\n");
  EXPECT_THROW(load_jsonl(missing), SchemaError);

  const auto malformed = temp_path("malformed.jsonl");
  write_text(malformed, good + "\n{not json\n");
  try {
    load_jsonl(malformed);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }

  const auto dup = temp_path("dup.jsonl");
  write_text(dup, good + "\n" + good + "\n");
  EXPECT_THROW(load_jsonl(dup), ConflictError);
}

TEST(LoadJsonl, WriteRoundTrip) {
  const std::vector<RawReview> reviews = {raw("r1", "u1", "p1", 1, "Great \"food\".\nYes"),
                                          raw("r2", "u2", "p1", 0, "caf\xc3\xa9 ok")};
  const auto path = temp_path("roundtrip.jsonl");
  write_jsonl(path, reviews);
  const auto back = load_jsonl(path);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].text, reviews[0].text);
  EXPECT_EQ(back[1].text, reviews[1].text);
}

TEST(Segment, Examples) {
  EXPECT_EQ(segment("Great food. Great service!"),
            (Sentences{{"great", "food"}, {"great", "service"}}));
  EXPECT_TRUE(segment("").empty());
  const auto s = segment("loveeeeee this place... happy hour is best!!");
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0], (std::vector<std::string>{"loveeeeee", "this", "place"}));
  EXPECT_EQ(s[1], (std::vector<std::string>{"happy", "hour", "is", "best"}));
}

TEST(Segment, PunctuationAndCase) {
  EXPECT_EQ(segment("Don't over-cook it, (please); OK\nfine"),
            (Sentences{{"don't", "over-cook", "it", "please"}, {"ok"}, {"fine"}}));
  EXPECT_TRUE(segment(" ...  !? ").empty());
}

TEST(BuildVocab, MinCountAndTies) {
  const std::vector<RawReview> corpus = {raw("1", "u", "p", 0, "a a b")};
  const Vocabulary v = build_vocab(corpus, 2);
  EXPECT_EQ(v.token_count(), 3u);
  EXPECT_EQ(v.token_id("a"), 2);
  EXPECT_EQ(v.token_id("b"), Vocabulary::kUnk);

  const Vocabulary all = build_vocab(corpus, 1);
  EXPECT_EQ(all.token_count(), 4u);
  EXPECT_NE(all.token_id("b"), Vocabulary::kUnk);

  const Vocabulary tie = build_vocab({raw("1", "u", "p", 0, "b a b a")}, 1);
  EXPECT_EQ(tie.token_id("a"), 2);
  EXPECT_EQ(tie.token_id("b"), 3);
  EXPECT_EQ(tie.token_id("<pad>"), Vocabulary::kUnk);
}

TEST(BuildVocab, EntitiesAndPersistence) {
  const std::vector<RawReview> corpus = {raw("1", "zed", "p2", 0, "x"), raw("2", "amy", "p1", 1, "x")};
  const Vocabulary v = build_vocab(corpus, 1);
  EXPECT_EQ(v.user_id("amy"), 1);
  EXPECT_EQ(v.user_id("zed"), 2);
  EXPECT_EQ(v.user_id("nobody"), Vocabulary::kUnknownEntity);
  EXPECT_EQ(v.product_id("p1"), 1);

  const auto stem = temp_path("vocab_stem");
  v.save(stem);
  const Vocabulary back = Vocabulary::load(stem);
  EXPECT_EQ(back.tokens(), v.tokens());
  EXPECT_EQ(back.users(), v.users());
  EXPECT_EQ(back.products(), v.products());
}

TEST(Encode, Examples) {
  const Vocabulary v = build_vocab({raw("1", "u", "p", 0, "a b c")}, 1);
  const EncodedReview e = encode(raw("1", "u", "p", 0, "a b c"), v, {2, 5, 500});
  EXPECT_EQ(e.token_mask.row(0).count(), 3);
  EXPECT_EQ(e.tokens(0, 3), Vocabulary::kPad);
  EXPECT_EQ(e.token_mask.row(1).count(), 0);
  EXPECT_TRUE(e.sentence_mask(0, 0));
  EXPECT_FALSE(e.sentence_mask(1, 0));

  std::string long_text;
  for (int s = 0; s < 12; ++s) {
    for (int w = 0; w < 50; ++w) long_text += "w ";
    long_text += ". ";
  }
  const EncodedReview capped = encode(raw("2", "u", "p", 0, long_text), v, {12, 50, 500});
  EXPECT_EQ(capped.real_tokens(), 500);

  EXPECT_EQ(encode(raw("3", "stranger", "p", 0, "a"), v, {}).user, Vocabulary::kUnknownEntity);
}

TEST(Encode, EmptyTextBecomesSingleUnknown) {
  const Vocabulary v;
  const EncodedReview e = encode(raw("1", "u", "p", 0, "?!"), v, {3, 4, 10});
  EXPECT_EQ(e.real_tokens(), 1);
  EXPECT_EQ(e.tokens(0, 0), Vocabulary::kUnk);
  EXPECT_TRUE(e.sentence_mask(0, 0));
}

// Mask consistency, length bound and re-encoding of the detokenized grid,
// across synthetic reviews and random limits.
TEST(Encode, InvariantsAndIdempotence) {
  SyntheticSpec spec;
  spec.n_reviews = 300;
  const auto reviews = generate_synthetic(3, spec);
  const Vocabulary v = build_vocab(reviews, 2);
  std::mt19937_64 rng(1);
  for (const RawReview& r : reviews) {
    const EncodeLimits limits{testing::uniform_int(rng, 1, 6), testing::uniform_int(rng, 1, 12),
                              testing::uniform_int(rng, 1, 40)};
    const EncodedReview e = encode(r, v, limits);
    EXPECT_LE(e.real_tokens(), limits.max_total);
    for (Index i = 0; i < e.sentences(); ++i) {
      for (Index j = 0; j < e.width(); ++j) {
        EXPECT_EQ(e.token_mask(i, j), e.tokens(i, j) != Vocabulary::kPad);
      }
      EXPECT_EQ(e.sentence_mask(i, 0), e.token_mask.row(i).any());
    }
    RawReview again = r;
    again.text = detokenize(e, v);
    const EncodedReview e2 = encode(again, v, limits);
    EXPECT_EQ(e2.tokens, e.tokens) << r.review_id;
    EXPECT_TRUE((e2.token_mask == e.token_mask).all());
    EXPECT_TRUE((e2.sentence_mask == e.sentence_mask).all());
  }
}

TEST(Split, DisjointAndComplete) {
  SyntheticSpec spec;
  spec.n_reviews = 1000;
  const auto reviews = generate_synthetic(7, spec);
  const RawSplit split = split_80_10_10(reviews, 7);
  EXPECT_EQ(split.train.size(), 800u);
  EXPECT_EQ(split.validation.size(), 100u);
  EXPECT_EQ(split.test.size(), 100u);
  std::set<std::string> ids;
  for (const auto* part : {&split.train, &split.validation, &split.test}) {
    for (const auto& r : *part) EXPECT_TRUE(ids.insert(r.review_id).second);
  }
  EXPECT_EQ(ids.size(), reviews.size());

  const RawSplit again = split_80_10_10(reviews, 7);
  EXPECT_EQ(again.test.front().review_id, split.test.front().review_id);
}

TEST(Split, UserIndexAndFolds) {
  std::mt19937_64 rng(2);
  std::vector<EncodedReview> train;
  for (int i = 0; i < 20; ++i) train.push_back(testing::random_review(rng, 2, 3, 10, 4, 3));
  const CorpusSplit split = make_split(train, {}, {});
  std::size_t total = 0;
  for (const auto& [user, idx] : split.train_by_user) {
    for (std::size_t i : idx) EXPECT_EQ(split.train[i].user, user);
    total += idx.size();
  }
  EXPECT_EQ(total, train.size());

  const auto folds = k_folds(10, 3, 5);
  ASSERT_EQ(folds.size(), 3u);
  std::vector<int> seen(10, 0);
  for (const auto& f : folds) {
    EXPECT_GE(f.size(), 3u);
    for (std::size_t i : f) ++seen[i];
  }
  for (int c : seen) EXPECT_EQ(c, 1);
  EXPECT_EQ(k_folds(10, 3, 5), folds);
}

TEST(Synthetic, DeterministicWithExactSpamCount) {
  SyntheticSpec spec;
  spec.n_reviews = 1000;
  spec.spam_rate = 0.2;
  const auto a = generate_synthetic(11, spec);
  const auto b = generate_synthetic(11, spec);
  ASSERT_EQ(a.size(), b.size());
  int spam = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].text, b[i].text);
    EXPECT_EQ(a[i].user_id, b[i].user_id);
    spam += a[i].label;
  }
  EXPECT_EQ(spam, 200);
  EXPECT_NE(generate_synthetic(12, spec)[0].text, a[0].text);

  spec.n_reviews = 0;
  EXPECT_THROW(generate_synthetic(1, spec), std::invalid_argument);
  spec.n_reviews = 10;
  spec.spam_rate = 1.5;
  EXPECT_THROW(generate_synthetic(1, spec), std::invalid_argument);
}

std::set<std::string> trigrams(const RawReview& r) {
  std::set<std::string> out;
  for (const auto& s : segment(r.text)) {
    for (std::size_t i = 0; i + 2 < s.size(); ++i) out.insert(s[i] + " " + s[i + 1] + " " + s[i + 2]);
  }
  return out;
}

// Every spam account's reviews share a trigram; a random pair of honest
// reviews rarely both contain it.
TEST(Synthetic, SpamAccountsRepeatATrigram) {
  SyntheticSpec spec;
  const auto reviews = generate_synthetic(7, spec);
  std::map<std::string, std::vector<const RawReview*>> by_user;
  std::vector<const RawReview*> honest;
  for (const auto& r : reviews) {
    if (r.label == 1) by_user[r.user_id].push_back(&r);
    else honest.push_back(&r);
  }
  ASSERT_FALSE(by_user.empty());
  std::vector<std::set<std::string>> honest_grams;
  for (const auto* r : honest) honest_grams.push_back(trigrams(*r));
  std::mt19937_64 rng(3);
  for (const auto& [user, posts] : by_user) {
    std::set<std::string> common = trigrams(*posts.front());
    for (const auto* p : posts) {
      std::set<std::string> keep;
      const auto mine = trigrams(*p);
      for (const auto& t : common) {
        if (mine.contains(t)) keep.insert(t);
      }
      common = std::move(keep);
    }
    ASSERT_FALSE(common.empty()) << user;

    int both = 0;
    const int pairs = 2000;
    for (int k = 0; k < pairs; ++k) {
      const auto& a = honest_grams[rng() % honest_grams.size()];
      const auto& b = honest_grams[rng() % honest_grams.size()];
      for (const auto& t : common) {
        if (a.contains(t) && b.contains(t)) {
          ++both;
          break;
        }
      }
    }
    EXPECT_LT(static_cast<double>(both) / pairs, 0.05) << user;
  }
}

}  // namespace
}  // namespace hfan
