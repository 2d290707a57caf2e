#include "hfan/corpus.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace hfan {

namespace {

using json = nlohmann::json;

const std::string& require_string(const json& obj, const char* key, std::size_t line) {
  const auto it = obj.find(key);
  if (it == obj.end()) throw SchemaError(std::string("missing field '") + key + "'", line);
  if (!it->is_string()) throw SchemaError(std::string("field '") + key + "' must be a string", line);
  return it->get_ref<const std::string&>();
}

bool is_sentence_delimiter(char c) {
  return c == '.' || c == '!' || c == '?' || c == ';' || c == '\n';
}

bool is_separator(char c) {
  static constexpr std::string_view kDropped = ",:\"()[]{}*/\\`~^|=+";
  return std::isspace(static_cast<unsigned char>(c)) || kDropped.find(c) != std::string_view::npos;
}

}  // namespace

std::vector<RawReview> load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open corpus file " + path.string(), 0);

  std::vector<RawReview> out;
  std::set<std::string> seen;
  std::string text;
  std::size_t line_no = 0;
  while (std::getline(in, text)) {
    ++line_no;
    if (std::all_of(text.begin(), text.end(), [](unsigned char c) { return std::isspace(c); })) {
      continue;
    }
    json obj;
    try {
      obj = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("malformed JSON: ") + e.what(), line_no);
    }
    if (!obj.is_object()) throw ParseError("expected a JSON object", line_no);

    RawReview r;
    r.review_id = require_string(obj, "review_id", line_no);
    r.user_id = require_string(obj, "user_id", line_no);
    r.product_id = require_string(obj, "product_id", line_no);
    r.text = require_string(obj, "text", line_no);
    const auto label = obj.find("label");
    if (label == obj.end()) throw SchemaError("missing field 'label'", line_no);
    if (!label->is_number_integer()) throw SchemaError("field 'label' must be an integer", line_no);
    const auto value = label->get<long long>();
    if (value != 0 && value != 1) {
      throw SchemaError("label must be 0 or 1, got " + std::to_string(value), line_no);
    }
    r.label = static_cast<int>(value);
    if (r.review_id.empty() || r.user_id.empty() || r.product_id.empty()) {
      throw SchemaError("review_id, user_id and product_id must be non-empty", line_no);
    }
    if (!seen.insert(r.review_id).second) {
      throw ConflictError("duplicate review_id '" + r.review_id + "'", line_no);
    }
    out.push_back(std::move(r));
  }
  return out;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<RawReview>& reviews) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CorpusError("cannot write " + path.string(), 0);
  for (const RawReview& r : reviews) {
    json obj = {{"review_id", r.review_id},
                {"user_id", r.user_id},
                {"product_id", r.product_id},
                {"label", r.label},
                {"text", r.text}};
    out << obj.dump() << '\n';
  }
  if (!out) throw CorpusError("write failed for " + path.string(), 0);
}

std::vector<std::vector<std::string>> segment(std::string_view text) {
  std::vector<std::vector<std::string>> sentences;
  std::vector<std::string> current;
  std::string token;
  auto flush_token = [&] {
    if (!token.empty()) current.push_back(std::move(token));
    token.clear();
  };
  auto flush_sentence = [&] {
    flush_token();
    if (!current.empty()) sentences.push_back(std::move(current));
    current.clear();
  };
  for (char c : text) {
    if (is_sentence_delimiter(c)) {
      flush_sentence();
    } else if (is_separator(c)) {
      flush_token();
    } else {
      token.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  flush_sentence();
  return sentences;
}

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary() : Vocabulary({}, {}, {}) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens, std::vector<std::string> users,
                       std::vector<std::string> products) {
  tokens_ = {std::string(kPadToken), std::string(kUnkToken)};
  tokens_.insert(tokens_.end(), std::make_move_iterator(tokens.begin()),
                 std::make_move_iterator(tokens.end()));
  users_ = {std::string(kUnkToken)};
  users_.insert(users_.end(), std::make_move_iterator(users.begin()),
                std::make_move_iterator(users.end()));
  products_ = {std::string(kUnkToken)};
  products_.insert(products_.end(), std::make_move_iterator(products.begin()),
                   std::make_move_iterator(products.end()));
  token_ids_ = index(tokens_);
  user_ids_ = index(users_);
  product_ids_ = index(products_);
}

Vocabulary::IdMap Vocabulary::index(const std::vector<std::string>& names) {
  IdMap ids;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (!ids.emplace(names[i], static_cast<int>(i)).second) {
      throw ConflictError("duplicate vocabulary entry '" + names[i] + "'", 0);
    }
  }
  return ids;
}

int Vocabulary::token_id(std::string_view token) const {
  const auto it = token_ids_.find(std::string(token));
  if (it == token_ids_.end() || it->second == kPad) return kUnk;
  return it->second;
}

int Vocabulary::user_id(std::string_view user) const {
  const auto it = user_ids_.find(std::string(user));
  return it == user_ids_.end() ? kUnknownEntity : it->second;
}

int Vocabulary::product_id(std::string_view product) const {
  const auto it = product_ids_.find(std::string(product));
  return it == product_ids_.end() ? kUnknownEntity : it->second;
}

namespace {

void write_table(const std::filesystem::path& path, const std::vector<std::string>& names) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CorpusError("cannot write " + path.string(), 0);
  for (std::size_t i = 0; i < names.size(); ++i) out << names[i] << '\t' << i << '\n';
}

std::vector<std::string> read_table(const std::filesystem::path& path, std::size_t reserved) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open " + path.string(), 0);
  std::vector<std::string> names;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos) throw ParseError("expected name<TAB>id", line_no);
    std::size_t id = 0;
    try {
      id = std::stoul(line.substr(tab + 1));
    } catch (const std::exception&) {
      throw ParseError("bad id in vocabulary line", line_no);
    }
    if (id != names.size()) throw SchemaError("ids must be dense and in order", line_no);
    names.push_back(line.substr(0, tab));
  }
  if (names.size() < reserved) throw SchemaError("reserved entries missing in " + path.string(), 0);
  return {names.begin() + static_cast<std::ptrdiff_t>(reserved), names.end()};
}

std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* suffix) {
  return std::filesystem::path(stem.string() + suffix);
}

}  // namespace

void Vocabulary::save(const std::filesystem::path& stem) const {
  write_table(with_suffix(stem, ".vocab"), tokens_);
  write_table(with_suffix(stem, ".users"), users_);
  write_table(with_suffix(stem, ".products"), products_);
}

Vocabulary Vocabulary::load(const std::filesystem::path& stem) {
  return Vocabulary(read_table(with_suffix(stem, ".vocab"), 2),
                    read_table(with_suffix(stem, ".users"), 1),
                    read_table(with_suffix(stem, ".products"), 1));
}

Vocabulary build_vocab(const std::vector<RawReview>& reviews, int min_count) {
  if (min_count < 1) throw std::invalid_argument("min_count must be >= 1");
  std::map<std::string, long> freq;
  std::set<std::string> users, products;
  for (const RawReview& r : reviews) {
    for (const auto& sentence : segment(r.text)) {
      for (const auto& tok : sentence) ++freq[tok];
    }
    users.insert(r.user_id);
    products.insert(r.product_id);
  }
  std::vector<std::pair<std::string, long>> kept;
  for (auto& [tok, n] : freq) {
    if (n >= min_count && tok != Vocabulary::kPadToken && tok != Vocabulary::kUnkToken) {
      kept.emplace_back(tok, n);
    }
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens;
  tokens.reserve(kept.size());
  for (auto& [tok, n] : kept) tokens.push_back(tok);
  return Vocabulary(std::move(tokens), {users.begin(), users.end()},
                    {products.begin(), products.end()});
}

// ---------------------------------------------------------------------------
// Encoding

EncodedReview encode(const RawReview& review, const Vocabulary& vocab, const EncodeLimits& limits) {
  if (limits.sentences < 1 || limits.tokens < 1 || limits.max_total < 1) {
    throw std::invalid_argument("encode limits must be positive");
  }
  EncodedReview out;
  out.review_id = review.review_id;
  out.tokens = MatrixT<int>::Constant(limits.sentences, limits.tokens, Vocabulary::kPad);
  out.token_mask = Mask::Constant(limits.sentences, limits.tokens, false);
  out.sentence_mask = Mask::Constant(limits.sentences, 1, false);
  out.user = vocab.user_id(review.user_id);
  out.product = vocab.product_id(review.product_id);
  out.label = review.label;

  int total = 0;
  const auto sentences = segment(review.text);
  const auto keep = std::min<std::size_t>(sentences.size(), static_cast<std::size_t>(limits.sentences));
  for (std::size_t i = 0; i < keep && total < limits.max_total; ++i) {
    const auto& words = sentences[i];
    const auto row = static_cast<Index>(i);
    for (std::size_t j = 0; j < words.size() && j < static_cast<std::size_t>(limits.tokens); ++j) {
      if (total == limits.max_total) break;
      const auto col = static_cast<Index>(j);
      out.tokens(row, col) = vocab.token_id(words[j]);
      out.token_mask(row, col) = true;
      ++total;
    }
    out.sentence_mask(row, 0) = out.token_mask.row(row).any();
  }
  if (total == 0) {
    // A review without tokens still needs one sentence to encode.
    out.tokens(0, 0) = Vocabulary::kUnk;
    out.token_mask(0, 0) = true;
    out.sentence_mask(0, 0) = true;
  }
  return out;
}

std::vector<EncodedReview> encode_all(const std::vector<RawReview>& reviews, const Vocabulary& vocab,
                                      const EncodeLimits& limits) {
  std::vector<EncodedReview> out;
  out.reserve(reviews.size());
  for (const RawReview& r : reviews) out.push_back(encode(r, vocab, limits));
  return out;
}

std::string detokenize(const EncodedReview& review, const Vocabulary& vocab) {
  std::string text;
  for (Index i = 0; i < review.sentences(); ++i) {
    if (!review.sentence_mask(i, 0)) continue;
    if (!text.empty()) text += ". ";
    bool first = true;
    for (Index j = 0; j < review.width(); ++j) {
      if (!review.token_mask(i, j)) continue;
      if (!first) text += ' ';
      text += vocab.token(review.tokens(i, j));
      first = false;
    }
  }
  return text;
}

std::map<int, std::vector<std::size_t>> user_index(const std::vector<EncodedReview>& reviews) {
  std::map<int, std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < reviews.size(); ++i) out[reviews[i].user].push_back(i);
  return out;
}

CorpusSplit make_split(std::vector<EncodedReview> train, std::vector<EncodedReview> validation,
                       std::vector<EncodedReview> test) {
  CorpusSplit split;
  split.train_by_user = user_index(train);
  split.train = std::move(train);
  split.validation = std::move(validation);
  split.test = std::move(test);
  return split;
}

RawSplit split_80_10_10(std::vector<RawReview> reviews, std::uint64_t seed) {
  std::vector<std::size_t> order(reviews.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t n = reviews.size();
  const std::size_t n_train = n * 8 / 10;
  const std::size_t n_valid = n / 10;
  RawSplit out;
  for (std::size_t k = 0; k < n; ++k) {
    RawReview& r = reviews[order[k]];
    if (k < n_train) {
      out.train.push_back(std::move(r));
    } else if (k < n_train + n_valid) {
      out.validation.push_back(std::move(r));
    } else {
      out.test.push_back(std::move(r));
    }
  }
  return out;
}

std::vector<std::vector<std::size_t>> k_folds(std::size_t n, int k, std::uint64_t seed) {
  if (k < 1) throw std::invalid_argument("k_folds: k must be >= 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> folds(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < n; ++i) folds[i % folds.size()].push_back(order[i]);
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

}  // namespace hfan
