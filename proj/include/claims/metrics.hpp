#pragma once

#include <cstdint>
#include <span>
#include <string>

namespace claims {

// Threshold evaluation of a scored claim set. Monetary fields are in the
// same currency unit as the corrections and the clerk cost.
struct EvalReport {
  double auroc = 0.0;
  double aupr = 0.0;
  double benefit = 0.0;    // sum of (c_i - k) over true positives
  double cost = 0.0;       // k times false-positive count
  double potential = 0.0;  // sum of (c_i - k) over all positives
  double profit = 0.0;     // (benefit - cost) / potential
  double threshold = 0.5;
  std::int64_t n_pos = 0;
  std::int64_t n_neg = 0;
};

// Probability that a random positive outranks a random negative, ties 0.5.
// Sort-based rank statistic. Throws MetricError on single-class input.
double auroc(std::span<const double> scores, std::span<const int> labels);

// Average precision: mean over positives (in descending-score order, ties
// broken by ascending index) of precision at each positive's rank.
// Throws MetricError when there are no positives.
double aupr(std::span<const double> scores, std::span<const int> labels);

// Benefit / cost / potential / profit at a threshold, plus both ranking
// metrics. A claim is flagged iff its score is strictly above the threshold.
EvalReport profit_report(std::span<const double> scores, std::span<const int> labels,
                         std::span<const double> corrections, double clerk_cost,
                         double threshold = 0.5);

std::string to_json(const EvalReport& report);
EvalReport eval_report_from_json(const std::string& text);

}  // namespace claims
