#pragma once

#include "hfan/corpus.hpp"
#include "hfan/model.hpp"

#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace hfan {

class NonFiniteGradientError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AdadeltaState {
  double rho = 0.95;
  double eps = 1e-6;
  double lr0 = 1.0;
  double lr = 1.0;
  TensorMap eg2;   // running mean of g^2
  TensorMap edx2;  // running mean of update^2
};

/// One Adadelta update over every non-frozen tensor, followed by renormalizing
/// transh_wd to unit length when it moved. Throws NonFiniteGradientError
/// naming the first parameter whose gradient is not finite.
void adadelta_step(ModelParams& params, const TensorMap& grads, AdadeltaState& state,
                   const std::set<std::string>& frozen = {});

/// lr = lr0 * factor^epoch.
void decay_lr(AdadeltaState& state, int epoch, double factor);

/// Shuffled index batches keyed by (seed, epoch); the last batch may be short.
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, int batch_size, std::uint64_t seed,
                                                   int epoch);

struct TrainConfig {
  HyperParams hp;
  int epochs = 30;
  int batch_size = 32;
  std::uint64_t seed = 7;
  double lr = 1.0;
  double lr_decay = 0.95;
  double rho = 0.95;
  double eps = 1e-6;
  int patience = 5;
  int min_count = 2;
  int folds = 3;
  std::vector<int> grid_r = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::vector<double> grid_beta = {0.01, 0.1, 1.0, 10.0, 100.0};
};

struct EpochMetrics {
  int epoch = 0;
  double lr = 0.0;
  double classification = 0.0;  // mean per review
  double relation = 0.0;         // mean per review
  double total = 0.0;
  double valid_f1 = std::numeric_limits<double>::quiet_NaN();
};

/// Everything needed to continue training bit-for-bit.
struct TrainerState {
  ModelParams params;
  AdadeltaState optimizer;
  std::mt19937_64 rng;
  int epoch = 0;  // completed epochs
  double best_f1 = -1.0;
  int stale_epochs = 0;
};

TrainerState init_training(const TrainConfig& config, std::size_t vocab_size, std::size_t users,
                           std::size_t products);

std::set<std::string> frozen_parameters(const HyperParams& hp);

EpochMetrics train_epoch(const std::vector<EncodedReview>& train, TrainerState& state,
                         const TrainConfig& config);

/// Trains until `config.epochs` epochs are complete or validation F1 has not
/// improved for `config.patience` epochs. Calls `on_epoch` after each epoch.
std::vector<EpochMetrics> train(const std::vector<EncodedReview>& train_set,
                                const std::vector<EncodedReview>& validation, TrainerState& state,
                                const TrainConfig& config,
                                const std::function<void(const EpochMetrics&, const TrainerState&)>& on_epoch = {});

struct CvRow {
  int r = 0;
  double beta = 0.0;
  int fold = 0;
  double f1 = 0.0;
};

struct CvResult {
  int best_r = 0;
  double best_beta = 0.0;
  double best_mean_f1 = 0.0;
  std::vector<CvRow> rows;
};

/// k-fold grid search over (r, beta) by mean held-out F1. Ties go to the
/// smaller r, then the smaller beta.
CvResult cross_validate(const std::vector<EncodedReview>& train_set, std::size_t vocab_size,
                        std::size_t users, std::size_t products, const TrainConfig& config,
                        const std::function<void(const CvRow&)>& on_row = {});

}  // namespace hfan
