#pragma once

#include "hfan/corpus.hpp"
#include "hfan/model.hpp"

#include <json.hpp>

#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hfan {

struct ScoredExample {
  std::string review_id;
  double spam_score = 0.0;
  int gold = 0;
};

/// AP/AUC requested on input that lacks a positive (or negative) example.
class UndefinedMetricError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

struct Confusion {
  long tp = 0, fp = 0, tn = 0, fn = 0;
};

struct Prf1 {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  Confusion confusion;
};

/// Spam is the positive class; a review is predicted spam when score >= threshold.
/// Zero denominators yield 0.
Prf1 prf1(std::span<const ScoredExample> examples, double threshold = 0.5);

/// Mean precision@k at the ranks of the positives, ranking by score
/// descending with ties broken by review_id.
double average_precision(std::span<const ScoredExample> examples);

/// Mann-Whitney AUC: (concordant + tied / 2) / (positives * negatives).
double auc(std::span<const ScoredExample> examples);

struct MetricReport {
  double precision = 0.0, recall = 0.0, f1 = 0.0;
  std::optional<double> ap, auc;  // empty when undefined on this split
  Confusion confusion;
  long n = 0;
};

MetricReport make_report(std::span<const ScoredExample> examples, double threshold = 0.5);

std::vector<ScoredExample> score_reviews(const ModelParams& params,
                                         const std::vector<EncodedReview>& reviews,
                                         const HyperParams& hp);

MetricReport evaluate(const ModelParams& params, const HyperParams& hp,
                      const std::vector<EncodedReview>& reviews, double threshold = 0.5);

nlohmann::json to_json(const MetricReport& report);

/// "dataset,P,R,F1,AP,AUC,n,seed" header and a matching row (empty cells for undefined metrics).
std::string csv_header();
std::string csv_row(const MetricReport& report, const std::string& dataset, std::uint64_t seed);

}  // namespace hfan
