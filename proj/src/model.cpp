#include "hfan/model.hpp"

#include <fstream>
#include <sstream>

namespace hfan {

const char* side_name(Side side) { return side == Side::User ? "user" : "product"; }

void HyperParams::validate() const {
  if (d < 2) throw std::invalid_argument("d must be >= 2");
  if (m < 1) throw std::invalid_argument("m must be >= 1");
  if (r < 1) throw std::invalid_argument("r must be >= 1");
  if (!(beta >= 0.0)) throw std::invalid_argument("beta must be >= 0");
  if (L < 1 || T < 1 || max_total < 1) throw std::invalid_argument("L, T and max_total must be >= 1");
  if (n_neg < 1) throw std::invalid_argument("n_neg must be >= 1");
}

namespace param {
std::string mau_wx(Side side, int unit) {
  return std::string("mau_Wx.") + side_name(side) + "." + std::to_string(unit);
}
std::string mau_we(Side side, int unit) {
  return std::string("mau_We.") + side_name(side) + "." + std::to_string(unit);
}
std::string sent_wv(Side side) { return std::string("sent_Wv.") + side_name(side); }
std::string sent_b(Side side) { return std::string("sent_b.") + side_name(side); }
}  // namespace param

// ---------------------------------------------------------------------------
// Parameters

namespace {

Matrix glorot(Index fan_in, Index fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix w(fan_in, fan_out);
  for (Index k = 0; k < w.size(); ++k) w.data()[k] = dist(rng);
  return w;
}

Matrix gaussian(Index rows, Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix w(rows, cols);
  for (Index k = 0; k < w.size(); ++k) w.data()[k] = dist(rng);
  return w;
}

}  // namespace

ModelParams ModelParams::init(const HyperParams& hp, std::size_t vocab_size, std::size_t users,
                              std::size_t products, std::mt19937_64& rng) {
  hp.validate();
  const Index d = hp.d;
  ModelParams p;
  auto& t = p.tensors;

  t[param::kWordEmb] = gaussian(static_cast<Index>(vocab_size), d, 0.1, rng);
  t[param::kWordEmb].row(Vocabulary::kPad).setZero();
  if (hp.ablate_entities) {
    t[param::kUserEmb] = Matrix::Zero(static_cast<Index>(users), d);
    t[param::kProdEmb] = Matrix::Zero(static_cast<Index>(products), d);
  } else {
    t[param::kUserEmb] = gaussian(static_cast<Index>(users), d, 0.1, rng);
    t[param::kProdEmb] = gaussian(static_cast<Index>(products), d, 0.1, rng);
  }
  for (Side side : {Side::User, Side::Product}) {
    for (int k = 0; k < hp.m; ++k) {
      t[param::mau_wx(side, k)] = glorot(d, d, rng);
      t[param::mau_we(side, k)] = glorot(d, d, rng);
    }
    t[param::sent_wv(side)] = glorot(2 * d, d, rng);
    t[param::sent_b(side)] = Matrix::Zero(1, d);
  }
  t[param::kFauWu] = glorot(d, d, rng);
  t[param::kFauWp] = glorot(d, d, rng);
  t[param::kFuseW] = glorot(2 * d, d, rng);
  t[param::kClsWd] = glorot(d, d, rng);
  t[param::kClsBd] = Matrix::Zero(1, d);
  t[param::kClsWc] = glorot(d, 2, rng);
  Matrix w = gaussian(1, d, 1.0, rng);
  t[param::kTranshWd] = w / w.norm();
  return p;
}

std::size_t load_word_vectors(const std::filesystem::path& path, const Vocabulary& vocab,
                              ModelParams& params) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open word vectors " + path.string(), 0);
  Matrix& emb = params.at(param::kWordEmb);
  std::size_t loaded = 0;
  std::size_t line_no = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream is(line);
    std::string token;
    if (!(is >> token)) continue;
    std::vector<double> values;
    double v = 0.0;
    while (is >> v) values.push_back(v);
    if (values.size() == 2 && line_no == 1) continue;  // word2vec text header
    if (static_cast<Index>(values.size()) != emb.cols()) {
      throw SchemaError("word vector has " + std::to_string(values.size()) + " dims, model uses " +
                            std::to_string(emb.cols()),
                        line_no);
    }
    const int id = vocab.token_id(token);
    if (id == Vocabulary::kUnk || id == Vocabulary::kPad) continue;
    emb.row(id) = Eigen::Map<const Eigen::RowVectorXd>(values.data(), emb.cols());
    ++loaded;
  }
  return loaded;
}

BoundParams::BoundParams(Tape& tape, const ModelParams& params) : BoundParams(tape, params.tensors) {}

BoundParams::BoundParams(Tape& tape, const TensorMap& tensors) : tape_(&tape) {
  for (const auto& [name, tensor] : tensors) vars_.emplace(name, tape.parameter(name, tensor));
}

// ---------------------------------------------------------------------------
// Word level

Var mau_sentence(const BoundParams& params, const HyperParams& hp, Var words,
                 const Mask& token_mask, Var entity, Side side, Index sentence_index,
                 std::vector<WindowAttention>* attention) {
  Tape& tape = params.tape();
  const Index n = words.rows();
  if (token_mask.rows() != n || token_mask.cols() != 1) {
    throw DimensionError("mau_sentence: token mask must be n x 1");
  }
  if (!token_mask.any()) throw DegenerateError("mau_sentence: sentence has no tokens");

  // Window of token j covers positions j-r..j+r; positions outside the sentence
  // or holding PAD are masked. PAD rows only see themselves and are dropped by
  // the final pooling.
  Mask window(n, n);
  for (Index j = 0; j < n; ++j) {
    for (Index i = 0; i < n; ++i) {
      const Index dist = i > j ? i - j : j - i;
      window(j, i) = token_mask(j, 0) ? (token_mask(i, 0) && dist <= hp.r) : (i == j);
    }
  }

  const Var zeros = tape.constant(Matrix::Zero(n, 1));
  Var context;
  for (int k = 0; k < hp.m; ++k) {
    // Scores depend only on the absolute position, so one n x d activation
    // serves every window: score_i = sum_f tanh(x_i Wx + e We)_f.
    const Var act = tanh(matmul(words, params[param::mau_wx(side, k)]) +
                         matmul(entity, params[param::mau_we(side, k)]));
    const Var scores = reduce(Reduce::Sum, act, 1);
    const Var alpha = masked_softmax(zeros + transpose(scores), window);
    const Var ctx = matmul(alpha, words);
    context = k == 0 ? ctx : maximum(context, ctx);

    if (attention) {
      Matrix rows(token_mask.count(), n);
      Index out = 0;
      for (Index j = 0; j < n; ++j) {
        if (token_mask(j, 0)) rows.row(out++) = alpha.value().row(j);
      }
      attention->push_back({side, sentence_index, k, std::move(rows)});
    }
  }

  const Var rep = concat_last(words, context);
  const Var hidden = tanh(matmul(rep, params[param::sent_wv(side)]) + params[param::sent_b(side)]);
  const Mask pool = token_mask.replicate(1, hidden.cols());
  return reduce(Reduce::Max, hidden, 0, pool);
}

// ---------------------------------------------------------------------------
// Entity level

std::pair<Var, Var> orthogonal_decompose(Var sentences, Var entity) {
  const Var et = transpose(entity);
  const Var ee = matmul(entity, et);
  if (!(std::sqrt(ee.scalar()) > kEntityNormEps)) {
    throw DegenerateEntityError("orthogonal_decompose: entity vector has near-zero norm");
  }
  const Var coef = div(matmul(sentences, et), ee);
  const Var par = mul(coef, entity);
  return {par, sub(sentences, par)};
}

Var entity_representation(Var parallel, const Mask& sentence_mask) {
  return reduce(Reduce::Mean, parallel, 0, sentence_mask.replicate(1, parallel.cols()));
}

FusionResult fau_fuse(const BoundParams& params, Var u_orth, Var p_orth, const Mask& sentence_mask) {
  const Index L = u_orth.rows();
  if (sentence_mask.rows() != L || sentence_mask.cols() != 1) {
    throw DimensionError("fau_fuse: sentence mask must be L x 1");
  }
  FusionResult out;
  out.d_user = matmul(u_orth, params[param::kFauWu]);
  out.d_prod = matmul(p_orth, params[param::kFauWp]);
  const Var gated_u = mul(out.d_user, sigmoid(out.d_prod));
  const Var gated_p = mul(out.d_prod, sigmoid(out.d_user));
  out.fusion = tanh(matmul(gated_u, transpose(gated_p)));

  const Mask valid_row = sentence_mask.transpose();
  const Mask by_column = valid_row.replicate(L, 1);  // (i, j) -> sentence j valid
  const Mask by_row = sentence_mask.replicate(1, L);  // (i, j) -> sentence i valid
  out.alpha_user = masked_softmax(transpose(reduce(Reduce::Mean, out.fusion, 1, by_column)), valid_row);
  out.alpha_prod = masked_softmax(reduce(Reduce::Mean, out.fusion, 0, by_row), valid_row);

  const Var du = matmul(out.alpha_user, out.d_user);
  const Var dp = matmul(out.alpha_prod, out.d_prod);
  out.review = matmul(concat_last(du, dp), params[param::kFuseW]);
  return out;
}

Classification classify(const BoundParams& params, Var review) {
  const Var hidden = relu(matmul(review, params[param::kClsWd]) + params[param::kClsBd]);
  const Var logits = matmul(hidden, params[param::kClsWc]);
  return {logits, softmax(logits)};
}

Var classification_loss(Var logits, int label) { return softmax_cross_entropy(logits, label); }

// ---------------------------------------------------------------------------
// Relation

namespace {

Var project_to_hyperplane(Var x, Var w) { return sub(x, mul(matmul(x, transpose(w)), w)); }

}  // namespace

Var transh_distance(Var u, Var dvec, Var p, Var w) {
  const Var diff = project_to_hyperplane(u, w) + dvec - project_to_hyperplane(p, w);
  return sum_all(mul(diff, diff));
}

double transh_distance(const Eigen::RowVectorXd& u, const Eigen::RowVectorXd& dvec,
                       const Eigen::RowVectorXd& p, const Eigen::RowVectorXd& w) {
  if (std::abs(w.norm() - 1.0) > 1e-6) {
    throw std::invalid_argument("transh_distance: hyperplane normal must have unit norm");
  }
  const Eigen::RowVectorXd pu = u - u.dot(w) * w;
  const Eigen::RowVectorXd pp = p - p.dot(w) * w;
  return (pu + dvec - pp).squaredNorm();
}

Var transh_loss(Var positive, std::span<const Var> negatives) {
  if (negatives.empty()) throw std::invalid_argument("transh_loss: no negative triplets");
  Tape& tape = *positive.tape;
  const Var margin = tape.constant(Matrix::Ones(1, 1));
  Var total;
  for (std::size_t i = 0; i < negatives.size(); ++i) {
    const Var hinge = relu(positive - negatives[i] + margin);
    total = i == 0 ? hinge : total + hinge;
  }
  return scale(total, 1.0 / static_cast<double>(negatives.size()));
}

double transh_loss(double positive, std::span<const double> negatives) {
  if (negatives.empty()) throw std::invalid_argument("transh_loss: no negative triplets");
  double total = 0.0;
  for (double neg : negatives) total += std::max(0.0, positive - neg + 1.0);
  return total / static_cast<double>(negatives.size());
}

// ---------------------------------------------------------------------------
// Full model

ForwardTrace forward(const BoundParams& params, const EncodedReview& review, const HyperParams& hp) {
  Tape& tape = params.tape();
  const Index L = review.sentences();
  const Index d = hp.d;
  ForwardTrace trace;

  const int user_id[] = {review.user};
  const int prod_id[] = {review.product};
  const Var user_vec = lookup(params[param::kUserEmb], user_id);
  const Var prod_vec = lookup(params[param::kProdEmb], prod_id);
  const Var words_table = params[param::kWordEmb];
  const Var zero_row = tape.constant(Matrix::Zero(1, d));

  std::vector<Var> su, sp;
  su.reserve(static_cast<std::size_t>(L));
  sp.reserve(static_cast<std::size_t>(L));
  for (Index i = 0; i < L; ++i) {
    if (!review.sentence_mask(i, 0)) {
      su.push_back(zero_row);
      sp.push_back(zero_row);
      continue;
    }
    Index last = review.width() - 1;
    while (!review.token_mask(i, last)) --last;
    std::vector<int> ids(static_cast<std::size_t>(last + 1));
    Mask mask(last + 1, 1);
    for (Index j = 0; j <= last; ++j) {
      ids[static_cast<std::size_t>(j)] = review.tokens(i, j);
      mask(j, 0) = review.token_mask(i, j);
    }
    const Var words = lookup(words_table, ids);
    su.push_back(mau_sentence(params, hp, words, mask, user_vec, Side::User, i, &trace.windows));
    sp.push_back(mau_sentence(params, hp, words, mask, prod_vec, Side::Product, i, &trace.windows));
  }
  trace.s_user = stack_rows(su);
  trace.s_prod = stack_rows(sp);

  if (hp.ablate_entities) {
    const Var zeros = tape.constant(Matrix::Zero(L, d));
    trace.u_par = trace.p_par = zeros;
    trace.u_orth = trace.s_user;
    trace.p_orth = trace.s_prod;
  } else {
    std::tie(trace.u_par, trace.u_orth) = orthogonal_decompose(trace.s_user, user_vec);
    std::tie(trace.p_par, trace.p_orth) = orthogonal_decompose(trace.s_prod, prod_vec);
  }
  trace.user = entity_representation(trace.u_par, review.sentence_mask);
  trace.product = entity_representation(trace.p_par, review.sentence_mask);

  const FusionResult fused = fau_fuse(params, trace.u_orth, trace.p_orth, review.sentence_mask);
  trace.review = fused.review;
  trace.d_user = fused.d_user;
  trace.d_prod = fused.d_prod;
  trace.fusion = fused.fusion;
  trace.alpha_user = fused.alpha_user;
  trace.alpha_prod = fused.alpha_prod;

  const Classification cls = classify(params, trace.review);
  trace.logits = cls.logits;
  trace.probs = cls.probs;
  return trace;
}

std::vector<NegativeSample> sample_negatives(std::span<const EncodedReview* const> batch, int n_neg,
                                             std::mt19937_64& rng) {
  std::vector<NegativeSample> out;
  std::bernoulli_distribution coin(0.5);
  std::vector<std::size_t> candidates;
  for (std::size_t a = 0; a < batch.size(); ++a) {
    for (int t = 0; t < n_neg; ++t) {
      bool head = coin(rng);
      for (int attempt = 0; attempt < 2; ++attempt, head = !head) {
        candidates.clear();
        for (std::size_t b = 0; b < batch.size(); ++b) {
          const bool differs = head ? batch[b]->user != batch[a]->user
                                    : batch[b]->product != batch[a]->product;
          if (differs) candidates.push_back(b);
        }
        if (!candidates.empty()) break;
      }
      if (candidates.empty()) continue;
      std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
      out.push_back({a, candidates[pick(rng)], head});
    }
  }
  return out;
}

BatchLoss overall_loss(const BoundParams& params, std::span<const EncodedReview* const> batch,
                       const HyperParams& hp, std::mt19937_64& rng) {
  if (batch.empty()) throw std::invalid_argument("overall_loss: empty batch");
  BatchLoss out;
  out.traces.reserve(batch.size());
  Var ce_sum;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    out.traces.push_back(forward(params, *batch[i], hp));
    const Var ce = classification_loss(out.traces.back().logits, batch[i]->label);
    ce_sum = i == 0 ? ce : ce_sum + ce;
  }
  out.classification = ce_sum.scalar();
  out.total = ce_sum;
  if (hp.beta == 0.0) return out;

  // Entities enter the distance clamped to the unit ball.
  const Var w = params[param::kTranshWd];
  std::vector<Triplet> clamped;
  clamped.reserve(batch.size());
  for (const ForwardTrace& t : out.traces) {
    clamped.push_back({clamp_norm(t.user, 1.0), clamp_norm(t.review, 1.0), clamp_norm(t.product, 1.0)});
  }

  const auto negatives = sample_negatives(batch, hp.n_neg, rng);
  Var rel_sum;
  bool any = false;
  std::size_t k = 0;
  for (std::size_t a = 0; a < batch.size(); ++a) {
    std::vector<Var> neg;
    for (; k < negatives.size() && negatives[k].anchor == a; ++k) {
      const NegativeSample& s = negatives[k];
      const Triplet& pos = clamped[a];
      const Triplet& donor = clamped[s.donor];
      neg.push_back(s.replace_head ? transh_distance(donor.head, pos.relation, pos.tail, w)
                                   : transh_distance(pos.head, pos.relation, donor.tail, w));
    }
    if (neg.empty()) continue;
    const Triplet& pos = clamped[a];
    const Var rel = transh_loss(transh_distance(pos.head, pos.relation, pos.tail, w), neg);
    rel_sum = any ? rel_sum + rel : rel;
    any = true;
  }
  if (!any) return out;
  out.relation = rel_sum.scalar();
  out.total = ce_sum + scale(rel_sum, hp.beta);
  return out;
}

double spam_score(const ModelParams& params, const EncodedReview& review, const HyperParams& hp) {
  Tape tape;
  const BoundParams bound(tape, params);
  return forward(bound, review, hp).probs.value()(0, 1);
}

}  // namespace hfan
