#pragma once

#include "hfan/corpus.hpp"
#include "hfan/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace hfan {

enum class Side { User, Product };
const char* side_name(Side side);

struct HyperParams {
  int d = 16;     // embedding width
  int m = 2;      // attention units per MAU
  int r = 2;      // context radius
  double beta = 1.0;
  int L = 10;
  int T = 50;
  int max_total = 500;
  int n_neg = 2;
  bool freeze_word_emb = false;
  /// User/product embeddings pinned at zero. The orthogonal decomposition then
  /// degenerates to parallel = 0, orthogonal = s.
  bool ablate_entities = false;

  void validate() const;
  EncodeLimits limits() const { return {L, T, max_total}; }
};

/// Raised by the orthogonal decomposition for an entity vector with norm <= kEntityNormEps.
class DegenerateEntityError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

inline constexpr double kEntityNormEps = 1e-8;

namespace param {
inline const std::string kWordEmb = "word_emb";
inline const std::string kUserEmb = "user_emb";
inline const std::string kProdEmb = "prod_emb";
inline const std::string kFauWu = "fau_Wu";
inline const std::string kFauWp = "fau_Wp";
inline const std::string kFuseW = "fuse_W";
inline const std::string kClsWd = "cls_Wd";
inline const std::string kClsBd = "cls_bd";
inline const std::string kClsWc = "cls_Wc";
inline const std::string kTranshWd = "transh_wd";
std::string mau_wx(Side side, int unit);
std::string mau_we(Side side, int unit);
std::string sent_wv(Side side);
std::string sent_b(Side side);
}  // namespace param

/// Every learnable tensor, keyed by the fixed checkpoint names above.
struct ModelParams {
  TensorMap tensors;

  const Matrix& at(const std::string& name) const { return tensors.at(name); }
  Matrix& at(const std::string& name) { return tensors.at(name); }

  /// Glorot-uniform weights, zero biases, N(0, 0.1) embeddings, unit transh_wd.
  /// With `ablate_entities` the entity tables start (and stay) at zero.
  static ModelParams init(const HyperParams& hp, std::size_t vocab_size, std::size_t users,
                          std::size_t products, std::mt19937_64& rng);
};

/// Reads "token v1 ... vd" lines into matching word_emb rows. Returns rows loaded.
std::size_t load_word_vectors(const std::filesystem::path& path, const Vocabulary& vocab,
                              ModelParams& params);

/// Parameters bound as leaves on one tape.
class BoundParams {
 public:
  BoundParams(Tape& tape, const ModelParams& params);
  BoundParams(Tape& tape, const TensorMap& tensors);
  Var operator[](const std::string& name) const { return vars_.at(name); }
  Tape& tape() const { return *tape_; }

 private:
  Tape* tape_;
  std::map<std::string, Var> vars_;
};

/// Window attention of one MAU unit over one sentence: row j holds the weights
/// of token j's window over sentence positions (rows only for real tokens).
struct WindowAttention {
  Side side;
  Index sentence;
  int unit;
  Matrix weights;
};

struct ForwardTrace {
  Var s_user, s_prod;          // L x d sentence matrices
  Var u_par, u_orth;           // L x d
  Var p_par, p_orth;           // L x d
  Var user, product, review;   // 1 x d: u_k, p_i, d_j
  Var d_user, d_prod;          // L x d: D^u, D^p
  Var fusion;                  // L x L: M
  Var alpha_user, alpha_prod;  // 1 x L
  Var logits, probs;           // 1 x 2
  std::vector<WindowAttention> windows;
};

/// Word-level encoder for one sentence. `words` is n x d, `token_mask` is n x 1.
Var mau_sentence(const BoundParams& params, const HyperParams& hp, Var words,
                 const Mask& token_mask, Var entity, Side side, Index sentence_index = 0,
                 std::vector<WindowAttention>* attention = nullptr);

/// Splits s into components parallel and orthogonal to e (row vectors).
template <typename DerivedS, typename DerivedE>
std::pair<Eigen::RowVectorXd, Eigen::RowVectorXd> orthogonal_decompose(
    const Eigen::MatrixBase<DerivedS>& s, const Eigen::MatrixBase<DerivedE>& e) {
  const Eigen::RowVectorXd sv = s;
  const Eigen::RowVectorXd ev = e;
  const double ee = ev.squaredNorm();
  if (!(std::sqrt(ee) > kEntityNormEps)) {
    throw DegenerateEntityError("orthogonal_decompose: entity vector has near-zero norm");
  }
  Eigen::RowVectorXd par = (sv.dot(ev) / ee) * ev;
  Eigen::RowVectorXd orth = sv - par;
  return {std::move(par), std::move(orth)};
}

/// Row-wise decomposition of an L x d sentence matrix against a 1 x d entity.
std::pair<Var, Var> orthogonal_decompose(Var sentences, Var entity);

/// Mean of the unmasked rows of an L x d matrix.
Var entity_representation(Var parallel, const Mask& sentence_mask);

struct FusionResult {
  Var review;  // d_j
  Var d_user, d_prod, fusion, alpha_user, alpha_prod;
};
FusionResult fau_fuse(const BoundParams& params, Var u_orth, Var p_orth, const Mask& sentence_mask);

struct Classification {
  Var logits, probs;
};
Classification classify(const BoundParams& params, Var review);
Var classification_loss(Var logits, int label);

/// ||(u - (u.w)w) + d - (p - (p.w)w)||^2 on the tape. Assumes ||w|| = 1.
Var transh_distance(Var u, Var dvec, Var p, Var w);
/// Value-level distance; throws std::invalid_argument unless | ||w|| - 1 | <= 1e-6.
double transh_distance(const Eigen::RowVectorXd& u, const Eigen::RowVectorXd& dvec,
                       const Eigen::RowVectorXd& p, const Eigen::RowVectorXd& w);

/// Mean hinge max(0, l(pos) - l(neg) + 1) over the negatives.
Var transh_loss(Var positive, std::span<const Var> negatives);
double transh_loss(double positive, std::span<const double> negatives);

struct Triplet {
  Var head, relation, tail;
};

/// Full forward pass for one review on the bound parameters' tape.
ForwardTrace forward(const BoundParams& params, const EncodedReview& review, const HyperParams& hp);

/// A negative replaces the head (user side) or tail (product side) of review
/// `anchor` with the representation of in-batch review `donor`.
struct NegativeSample {
  std::size_t anchor;
  std::size_t donor;
  bool replace_head;
};

/// n_neg negatives per batch entry, donors restricted to a different user
/// (head) or product (tail). Entries with no eligible donor get none.
std::vector<NegativeSample> sample_negatives(std::span<const EncodedReview* const> batch, int n_neg,
                                             std::mt19937_64& rng);

struct BatchLoss {
  Var total;
  double classification = 0.0;
  double relation = 0.0;
  std::vector<ForwardTrace> traces;
};

/// Sum of cross-entropy over the batch plus beta times the sum of per-review
/// relation losses (skipped entirely when beta == 0).
BatchLoss overall_loss(const BoundParams& params, std::span<const EncodedReview* const> batch,
                       const HyperParams& hp, std::mt19937_64& rng);

/// Spam probability of one review under frozen parameters.
double spam_score(const ModelParams& params, const EncodedReview& review, const HyperParams& hp);

}  // namespace hfan
