#include "hfan/corpus.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <random>
#include <set>

namespace hfan {

namespace {

constexpr std::array<const char*, 24> kAdjectives = {
    "great",   "amazing", "excellent", "friendly", "delicious", "fresh",
    "awesome", "perfect", "lovely",    "nice",     "wonderful", "fantastic",
    "tasty",   "cozy",    "quick",     "cheap",    "helpful",   "clean",
    "best",    "solid",   "superb",    "decent",   "fine",      "warm"};

constexpr std::array<const char*, 24> kNouns = {
    "food",  "service", "place", "brunch", "staff",   "pizza",  "coffee", "menu",
    "drinks", "dessert", "decor", "prices", "portions", "waiter", "bar",    "music",
    "patio", "burger",  "tacos", "salad",  "sushi",   "noodles", "wine",   "location"};

constexpr double kHonestTemplateRate = 0.25;
constexpr double kHonestTargetRate = 0.2;

constexpr std::array<const char*, 8> kIntensifiers = {
    "really", "truly", "absolutely", "so", "very", "totally", "super", "just"};

// Background vocabulary shared by both classes: consonant-vowel syllable words.
std::vector<std::string> background_words(std::size_t count) {
  static constexpr std::string_view kOnsets = "bdfghklmnprstvz";
  static constexpr std::string_view kVowels = "aeiou";
  std::vector<std::string> words;
  for (char a : kOnsets) {
    for (char v : kVowels) {
      for (char b : kOnsets) {
        for (char w : kVowels) {
          words.push_back(std::string{a, v, b, w});
          if (words.size() == count) return words;
        }
      }
    }
  }
  return words;
}

struct Generator {
  std::mt19937_64 rng;
  std::vector<std::string> background = background_words(400);

  explicit Generator(std::uint64_t seed) : rng(seed) {}

  std::size_t uniform(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  }
  bool chance(double p) { return std::bernoulli_distribution(p)(rng); }

  // Roughly Zipfian draw over the background list.
  const std::string& background_word() {
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    const auto idx = static_cast<std::size_t>(std::pow(u, 2.0) * static_cast<double>(background.size()));
    return background[std::min(idx, background.size() - 1)];
  }

  std::string adjective() { return kAdjectives[uniform(kAdjectives.size())]; }
  std::string noun() { return kNouns[uniform(kNouns.size())]; }

  // A two-word opinion fragment drawn fresh each time.
  std::vector<std::string> opinion() {
    if (chance(0.3)) return {kIntensifiers[uniform(kIntensifiers.size())], adjective()};
    return {adjective(), noun()};
  }

  std::vector<std::string> background_sentence() {
    std::vector<std::string> words;
    const std::size_t n = 4 + uniform(5);
    for (std::size_t i = 0; i < n; ++i) words.push_back(background_word());
    if (chance(0.6)) {
      auto op = opinion();
      const auto at = static_cast<std::ptrdiff_t>(uniform(words.size() + 1));
      words.insert(words.begin() + at, op.begin(), op.end());
    }
    return words;
  }

  void insert_phrase(std::vector<std::string>& sentence, const std::vector<std::string>& phrase) {
    const auto at = static_cast<std::ptrdiff_t>(uniform(sentence.size() + 1));
    sentence.insert(sentence.begin() + at, phrase.begin(), phrase.end());
  }
};

std::string join_review(const std::vector<std::vector<std::string>>& sentences) {
  std::string text;
  for (const auto& s : sentences) {
    if (!text.empty()) text += ' ';
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i) text += ' ';
      std::string w = s[i];
      if (i == 0 && !w.empty()) w[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(w[0])));
      text += w;
    }
    text += '.';
  }
  return text;
}

std::string make_id(char prefix, int n, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%c%0*d", prefix, width, n);
  return buf;
}

}  // namespace

std::vector<RawReview> generate_synthetic(std::uint64_t seed, const SyntheticSpec& spec) {
  if (spec.n_reviews < 1) throw std::invalid_argument("synthetic corpus needs n_reviews >= 1");
  if (spec.n_users < 2) throw std::invalid_argument("synthetic corpus needs n_users >= 2");
  if (spec.n_products < 1) throw std::invalid_argument("synthetic corpus needs n_products >= 1");
  if (spec.n_templates < 1) throw std::invalid_argument("synthetic corpus needs n_templates >= 1");
  if (!(spec.spam_rate > 0.0 && spec.spam_rate < 1.0)) {
    throw std::invalid_argument("spam_rate must lie in (0, 1)");
  }

  Generator gen(seed);
  const int n_spam = static_cast<int>(std::lround(spec.spam_rate * spec.n_reviews));
  const int n_spam_users =
      std::clamp(static_cast<int>(std::lround(spec.spam_rate * spec.n_users)), 1, spec.n_users - 1);
  const int n_targets = std::max(1, spec.n_products / 5);

  // Personal templates: distinct (intensifier, adjective, noun) triples.
  std::vector<std::vector<std::string>> templates;
  {
    std::set<std::vector<std::string>> seen;
    while (static_cast<int>(templates.size()) < spec.n_templates) {
      std::vector<std::string> t = {kIntensifiers[gen.uniform(kIntensifiers.size())],
                                    gen.adjective(), gen.noun()};
      if (seen.insert(t).second) templates.push_back(std::move(t));
    }
  }
  // Product-level praise: "adj noun adj noun", perturbed per spam review.
  std::vector<std::vector<std::string>> target_phrases;
  for (int p = 0; p < n_targets; ++p) {
    target_phrases.push_back({gen.adjective(), gen.noun(), gen.adjective(), gen.noun()});
  }

  std::vector<int> spam_template(static_cast<std::size_t>(n_spam_users));
  for (int s = 0; s < n_spam_users; ++s) {
    spam_template[static_cast<std::size_t>(s)] = static_cast<int>(gen.uniform(templates.size()));
  }

  // Users [0, n_spam_users) are spam accounts; products [0, n_targets) are targets.
  std::vector<int> labels(static_cast<std::size_t>(spec.n_reviews), 0);
  std::fill(labels.begin(), labels.begin() + n_spam, 1);
  std::shuffle(labels.begin(), labels.end(), gen.rng);

  const int width = spec.n_reviews >= 1000000 ? 8 : 6;
  std::vector<RawReview> out;
  out.reserve(static_cast<std::size_t>(spec.n_reviews));
  int spam_seen = 0;
  for (int i = 0; i < spec.n_reviews; ++i) {
    RawReview r;
    r.review_id = make_id('r', i + 1, width);
    r.label = labels[static_cast<std::size_t>(i)];

    const std::size_t n_sentences = 3 + gen.uniform(3);
    std::vector<std::vector<std::string>> sentences;
    for (std::size_t k = 0; k < n_sentences; ++k) sentences.push_back(gen.background_sentence());

    int user = 0;
    int product = 0;
    if (r.label == 1) {
      user = spam_seen % n_spam_users;
      ++spam_seen;
      product = gen.chance(0.8) ? static_cast<int>(gen.uniform(static_cast<std::size_t>(n_targets)))
                                : static_cast<int>(gen.uniform(static_cast<std::size_t>(spec.n_products)));
      if (product < n_targets) {
        auto phrase = target_phrases[static_cast<std::size_t>(product)];
        if (gen.chance(0.5)) phrase[gen.chance(0.5) ? 0 : 2] = gen.adjective();
        gen.insert_phrase(sentences[gen.uniform(sentences.size())], phrase);
      }
      // Inserted last so nothing splits the account's trigram.
      gen.insert_phrase(sentences[gen.uniform(sentences.size())],
                        templates[static_cast<std::size_t>(spam_template[static_cast<std::size_t>(user)])]);
    } else {
      user = n_spam_users + static_cast<int>(gen.uniform(static_cast<std::size_t>(spec.n_users - n_spam_users)));
      product = static_cast<int>(gen.uniform(static_cast<std::size_t>(spec.n_products)));
      // Honest reviews borrow the same stock praise, so text alone stays ambiguous.
      if (gen.chance(kHonestTargetRate)) {
        auto phrase = target_phrases[gen.uniform(target_phrases.size())];
        if (gen.chance(0.5)) phrase[gen.chance(0.5) ? 0 : 2] = gen.adjective();
        gen.insert_phrase(sentences[gen.uniform(sentences.size())], phrase);
      }
      if (gen.chance(kHonestTemplateRate)) {
        gen.insert_phrase(sentences[gen.uniform(sentences.size())], templates[gen.uniform(templates.size())]);
      }
    }
    r.user_id = make_id('u', user + 1, 4);
    r.product_id = make_id('p', product + 1, 4);
    r.text = join_review(sentences);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace hfan
