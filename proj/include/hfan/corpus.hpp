#pragma once

#include "hfan/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace hfan {

struct RawReview {
  std::string review_id;
  std::string user_id;
  std::string product_id;
  int label = 0;  // 1 = spam
  std::string text;
};

/// Errors raised while reading corpus or vocabulary files. `line` is 1-based, 0 if n/a.
class CorpusError : public std::runtime_error {
 public:
  CorpusError(const std::string& what, std::size_t line)
      : std::runtime_error(line ? what + " (line " + std::to_string(line) + ")" : what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class ParseError : public CorpusError {
  using CorpusError::CorpusError;
};
class SchemaError : public CorpusError {
  using CorpusError::CorpusError;
};
class ConflictError : public CorpusError {
  using CorpusError::CorpusError;
};

std::vector<RawReview> load_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, const std::vector<RawReview>& reviews);

/// Splits sentences on . ! ? ; and newlines and tokens on whitespace and
/// punctuation (apostrophes and hyphens stay inside words). ASCII is lowercased;
/// punctuation and empty sentences are dropped.
std::vector<std::vector<std::string>> segment(std::string_view text);

/// Token, user and product id maps. Token ids 0 and 1 are PAD and UNK; user
/// and product row 0 is the shared unknown-entity row.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kUnknownEntity = 0;
  static constexpr std::string_view kPadToken = "<pad>";
  static constexpr std::string_view kUnkToken = "<unk>";

  Vocabulary();
  /// Lists exclude the reserved entries; ids are assigned in list order.
  Vocabulary(std::vector<std::string> tokens, std::vector<std::string> users,
             std::vector<std::string> products);

  int token_id(std::string_view token) const;
  int user_id(std::string_view user) const;
  int product_id(std::string_view product) const;
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }

  std::size_t token_count() const { return tokens_.size(); }
  std::size_t user_count() const { return users_.size(); }
  std::size_t product_count() const { return products_.size(); }

  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::vector<std::string>& users() const { return users_; }
  const std::vector<std::string>& products() const { return products_; }

  /// Writes `<stem>.vocab`, `<stem>.users`, `<stem>.products` as "name<TAB>id" lines.
  void save(const std::filesystem::path& stem) const;
  static Vocabulary load(const std::filesystem::path& stem);

 private:
  using IdMap = std::unordered_map<std::string, int>;
  static IdMap index(const std::vector<std::string>& names);

  std::vector<std::string> tokens_, users_, products_;
  IdMap token_ids_, user_ids_, product_ids_;
};

/// Tokens with frequency >= min_count, most frequent first (ties lexicographic).
/// Users and products are numbered in lexicographic order.
Vocabulary build_vocab(const std::vector<RawReview>& reviews, int min_count = 2);

struct EncodeLimits {
  int sentences = 10;   // L
  int tokens = 50;      // T
  int max_total = 500;  // cumulative token cap over the whole review
};

struct EncodedReview {
  std::string review_id;
  MatrixT<int> tokens;  // L x T, PAD-filled
  Mask token_mask;      // L x T
  Mask sentence_mask;   // L x 1
  int user = 0;
  int product = 0;
  int label = 0;

  Index sentences() const { return tokens.rows(); }
  Index width() const { return tokens.cols(); }
  Index real_tokens() const { return token_mask.count(); }
};

EncodedReview encode(const RawReview& review, const Vocabulary& vocab, const EncodeLimits& limits);
std::vector<EncodedReview> encode_all(const std::vector<RawReview>& reviews, const Vocabulary& vocab,
                                      const EncodeLimits& limits);

/// Rebuilds text from an encoded grid: tokens space-joined, sentences joined by ". ".
std::string detokenize(const EncodedReview& review, const Vocabulary& vocab);

/// Review indices grouped by user id (N(u) in the joint objective).
std::map<int, std::vector<std::size_t>> user_index(const std::vector<EncodedReview>& reviews);

struct CorpusSplit {
  std::vector<EncodedReview> train, validation, test;
  std::map<int, std::vector<std::size_t>> train_by_user;
};

CorpusSplit make_split(std::vector<EncodedReview> train, std::vector<EncodedReview> validation,
                       std::vector<EncodedReview> test);

struct RawSplit {
  std::vector<RawReview> train, validation, test;
};

/// Deterministic shuffle by seed, then floor(0.8n) / floor(0.1n) / remainder.
RawSplit split_80_10_10(std::vector<RawReview> reviews, std::uint64_t seed);

/// Deterministic k-fold partition of [0, n): fold f holds the indices assigned to it.
std::vector<std::vector<std::size_t>> k_folds(std::size_t n, int k, std::uint64_t seed);

struct SyntheticSpec {
  int n_users = 200;
  int n_products = 60;
  int n_reviews = 2000;
  double spam_rate = 0.2;
  int n_templates = 40;
};

/// Synthetic review corpus with user-level and product-level spam patterns:
/// each spam account repeats a personal praise template in every review, and
/// each targeted product collects near-duplicate praise across its spam.
/// Honest reviews borrow the same phrases at a lower rate, so the account
/// behind a review carries signal the text alone does not.
/// Exactly round(spam_rate * n_reviews) reviews are spam. Deterministic in seed.
std::vector<RawReview> generate_synthetic(std::uint64_t seed, const SyntheticSpec& spec);

}  // namespace hfan
