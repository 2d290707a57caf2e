#include "hfan/evaluation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>

namespace hfan {

Prf1 prf1(std::span<const ScoredExample> examples, double threshold) {
  Prf1 out;
  Confusion& c = out.confusion;
  for (const ScoredExample& e : examples) {
    const bool predicted = e.spam_score >= threshold;
    if (predicted) {
      (e.gold == 1 ? c.tp : c.fp) += 1;
    } else {
      (e.gold == 1 ? c.fn : c.tn) += 1;
    }
  }
  const auto ratio = [](long num, long den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
  };
  out.precision = ratio(c.tp, c.tp + c.fp);
  out.recall = ratio(c.tp, c.tp + c.fn);
  const double s = out.precision + out.recall;
  out.f1 = s == 0.0 ? 0.0 : 2.0 * out.precision * out.recall / s;
  return out;
}

namespace {

std::vector<std::size_t> ranking(std::span<const ScoredExample> examples) {
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (examples[a].spam_score != examples[b].spam_score) {
      return examples[a].spam_score > examples[b].spam_score;
    }
    return examples[a].review_id < examples[b].review_id;
  });
  return order;
}

}  // namespace

double average_precision(std::span<const ScoredExample> examples) {
  long positives = 0;
  for (const auto& e : examples) positives += e.gold == 1;
  if (positives == 0) throw UndefinedMetricError("average precision needs at least one positive");

  double sum = 0.0;
  long hits = 0;
  long rank = 0;
  for (std::size_t idx : ranking(examples)) {
    ++rank;
    if (examples[idx].gold != 1) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(rank);
  }
  return sum / static_cast<double>(positives);
}

double auc(std::span<const ScoredExample> examples) {
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return examples[a].spam_score < examples[b].spam_score;
  });

  // Sweep tie groups in ascending score; 2 * (concordant) + tied stays integral.
  long long twice_wins = 0;
  long long negatives_below = 0;
  long long positives = 0;
  long long negatives = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    long long pos = 0;
    long long neg = 0;
    while (j < order.size() && examples[order[j]].spam_score == examples[order[i]].spam_score) {
      (examples[order[j]].gold == 1 ? pos : neg) += 1;
      ++j;
    }
    twice_wins += 2 * pos * negatives_below + pos * neg;
    negatives_below += neg;
    positives += pos;
    negatives += neg;
    i = j;
  }
  if (positives == 0 || negatives == 0) {
    throw UndefinedMetricError("AUC needs at least one positive and one negative");
  }
  return static_cast<double>(twice_wins) / static_cast<double>(2 * positives * negatives);
}

MetricReport make_report(std::span<const ScoredExample> examples, double threshold) {
  MetricReport report;
  const Prf1 p = prf1(examples, threshold);
  report.precision = p.precision;
  report.recall = p.recall;
  report.f1 = p.f1;
  report.confusion = p.confusion;
  report.n = static_cast<long>(examples.size());
  try {
    report.ap = average_precision(examples);
  } catch (const UndefinedMetricError&) {
  }
  try {
    report.auc = auc(examples);
  } catch (const UndefinedMetricError&) {
  }
  return report;
}

std::vector<ScoredExample> score_reviews(const ModelParams& params,
                                         const std::vector<EncodedReview>& reviews,
                                         const HyperParams& hp) {
  std::vector<ScoredExample> out;
  out.reserve(reviews.size());
  for (const EncodedReview& r : reviews) {
    out.push_back({r.review_id, spam_score(params, r, hp), r.label});
  }
  return out;
}

MetricReport evaluate(const ModelParams& params, const HyperParams& hp,
                      const std::vector<EncodedReview>& reviews, double threshold) {
  const auto scored = score_reviews(params, reviews, hp);
  return make_report(scored, threshold);
}

nlohmann::json to_json(const MetricReport& report) {
  nlohmann::json j;
  j["precision"] = report.precision;
  j["recall"] = report.recall;
  j["f1"] = report.f1;
  j["ap"] = report.ap ? nlohmann::json(*report.ap) : nlohmann::json(nullptr);
  j["auc"] = report.auc ? nlohmann::json(*report.auc) : nlohmann::json(nullptr);
  j["tp"] = report.confusion.tp;
  j["fp"] = report.confusion.fp;
  j["tn"] = report.confusion.tn;
  j["fn"] = report.confusion.fn;
  j["n"] = report.n;
  return j;
}

std::string csv_header() { return "dataset,P,R,F1,AP,AUC,n,seed"; }

std::string csv_row(const MetricReport& report, const std::string& dataset, std::uint64_t seed) {
  const auto num = [](double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
  };
  std::string row = dataset;
  row += "," + num(report.precision) + "," + num(report.recall) + "," + num(report.f1);
  row += "," + (report.ap ? num(*report.ap) : std::string());
  row += "," + (report.auc ? num(*report.auc) : std::string());
  row += "," + std::to_string(report.n) + "," + std::to_string(seed);
  return row;
}

}  // namespace hfan
