#include "hfan/training.hpp"

#include "hfan/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace hfan {

void adadelta_step(ModelParams& params, const TensorMap& grads, AdadeltaState& state,
                   const std::set<std::string>& frozen) {
  for (const auto& [name, g] : grads) {
    if (!g.allFinite()) throw NonFiniteGradientError("non-finite gradient for parameter " + name);
  }
  for (const auto& [name, g] : grads) {
    if (frozen.contains(name)) continue;
    Matrix& x = params.at(name);
    Matrix& Eg2 = state.eg2.try_emplace(name, Matrix::Zero(x.rows(), x.cols())).first->second;
    Matrix& Edx2 = state.edx2.try_emplace(name, Matrix::Zero(x.rows(), x.cols())).first->second;

    const double rho = state.rho;
    const double eps = state.eps;
    bool moved = false;
    for (Index k = 0; k < x.size(); ++k) {
      const double gk = g.data()[k];
      if (gk == 0.0 && Eg2.data()[k] == 0.0) continue;  // no history, no gradient: nothing moves
      double& eg = Eg2.data()[k];
      double& edx = Edx2.data()[k];
      eg = rho * eg + (1.0 - rho) * gk * gk;
      const double delta = -state.lr * (std::sqrt(edx + eps) / std::sqrt(eg + eps)) * gk;
      edx = rho * edx + (1.0 - rho) * delta * delta;
      x.data()[k] += delta;
      moved = moved || delta != 0.0;
    }
    if (name == param::kTranshWd && moved) x /= x.norm();
  }
}

void decay_lr(AdadeltaState& state, int epoch, double factor) {
  state.lr = state.lr0 * std::pow(factor, epoch);
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, int batch_size, std::uint64_t seed,
                                                   int epoch) {
  if (batch_size < 2) throw std::invalid_argument("batch_size must be >= 2");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch)};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  const auto size = static_cast<std::size_t>(batch_size);
  for (std::size_t start = 0; start < n; start += size) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + size)));
  }
  return batches;
}

TrainerState init_training(const TrainConfig& config, std::size_t vocab_size, std::size_t users,
                           std::size_t products) {
  TrainerState state;
  state.rng.seed(config.seed);
  state.params = ModelParams::init(config.hp, vocab_size, users, products, state.rng);
  state.optimizer.rho = config.rho;
  state.optimizer.eps = config.eps;
  state.optimizer.lr0 = config.lr;
  state.optimizer.lr = config.lr;
  return state;
}

std::set<std::string> frozen_parameters(const HyperParams& hp) {
  std::set<std::string> frozen;
  if (hp.freeze_word_emb) frozen.insert(param::kWordEmb);
  if (hp.ablate_entities) {
    frozen.insert(param::kUserEmb);
    frozen.insert(param::kProdEmb);
  }
  return frozen;
}

EpochMetrics train_epoch(const std::vector<EncodedReview>& train, TrainerState& state,
                         const TrainConfig& config) {
  if (train.empty()) throw std::invalid_argument("train_epoch: empty training set");
  decay_lr(state.optimizer, state.epoch, config.lr_decay);
  const auto frozen = frozen_parameters(config.hp);

  EpochMetrics metrics;
  metrics.epoch = state.epoch + 1;
  metrics.lr = state.optimizer.lr;
  double ce = 0.0;
  double rel = 0.0;
  for (const auto& indices : make_batches(train.size(), config.batch_size, config.seed, state.epoch)) {
    std::vector<const EncodedReview*> batch;
    batch.reserve(indices.size());
    for (std::size_t i : indices) batch.push_back(&train[i]);

    Tape tape;
    const BoundParams bound(tape, state.params);
    const BatchLoss loss = overall_loss(bound, batch, config.hp, state.rng);
    const TensorMap grads = tape.backward(loss.total);
    adadelta_step(state.params, grads, state.optimizer, frozen);
    ce += loss.classification;
    rel += loss.relation;
  }
  const auto n = static_cast<double>(train.size());
  metrics.classification = ce / n;
  metrics.relation = rel / n;
  metrics.total = metrics.classification + config.hp.beta * metrics.relation;
  ++state.epoch;
  return metrics;
}

std::vector<EpochMetrics> train(const std::vector<EncodedReview>& train_set,
                                const std::vector<EncodedReview>& validation, TrainerState& state,
                                const TrainConfig& config,
                                const std::function<void(const EpochMetrics&, const TrainerState&)>& on_epoch) {
  std::vector<EpochMetrics> log;
  while (state.epoch < config.epochs && state.stale_epochs < config.patience) {
    EpochMetrics m = train_epoch(train_set, state, config);
    if (!validation.empty()) {
      m.valid_f1 = prf1(score_reviews(state.params, validation, config.hp)).f1;
      if (m.valid_f1 > state.best_f1) {
        state.best_f1 = m.valid_f1;
        state.stale_epochs = 0;
      } else {
        ++state.stale_epochs;
      }
    }
    log.push_back(m);
    if (on_epoch) on_epoch(m, state);
  }
  return log;
}

CvResult cross_validate(const std::vector<EncodedReview>& train_set, std::size_t vocab_size,
                        std::size_t users, std::size_t products, const TrainConfig& config,
                        const std::function<void(const CvRow&)>& on_row) {
  if (config.grid_r.empty() || config.grid_beta.empty()) {
    throw std::invalid_argument("cross_validate: empty hyperparameter grid");
  }
  if (config.folds < 2) throw std::invalid_argument("cross_validate: need at least 2 folds");
  if (train_set.size() < static_cast<std::size_t>(3 * config.folds)) {
    throw std::invalid_argument("cross_validate: need at least 3 reviews per fold");
  }
  std::vector<int> grid_r = config.grid_r;
  std::vector<double> grid_beta = config.grid_beta;
  std::sort(grid_r.begin(), grid_r.end());
  std::sort(grid_beta.begin(), grid_beta.end());

  const auto folds = k_folds(train_set.size(), config.folds, config.seed);
  CvResult result;
  bool have_best = false;
  for (int r : grid_r) {
    for (double beta : grid_beta) {
      double f1_sum = 0.0;
      for (std::size_t f = 0; f < folds.size(); ++f) {
        std::vector<EncodedReview> fit, held_out;
        for (std::size_t g = 0; g < folds.size(); ++g) {
          auto& dst = g == f ? held_out : fit;
          for (std::size_t i : folds[g]) dst.push_back(train_set[i]);
        }
        TrainConfig cfg = config;
        cfg.hp.r = r;
        cfg.hp.beta = beta;
        TrainerState state = init_training(cfg, vocab_size, users, products);
        train(fit, {}, state, cfg);
        const CvRow row{r, beta, static_cast<int>(f),
                        prf1(score_reviews(state.params, held_out, cfg.hp)).f1};
        result.rows.push_back(row);
        if (on_row) on_row(row);
        f1_sum += row.f1;
      }
      const double mean = f1_sum / static_cast<double>(folds.size());
      if (!have_best || mean > result.best_mean_f1) {
        result.best_r = r;
        result.best_beta = beta;
        result.best_mean_f1 = mean;
        have_best = true;
      }
    }
  }
  return result;
}

}  // namespace hfan
