#include "claims/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <json.hpp>

#include "claims/errors.hpp"

namespace claims {

namespace {

// Compensated (Neumaier) accumulator; keeps monetary sums exact enough that
// the profit ratio is reproducible to the final rounding.
struct KahanSum {
  double s = 0.0, c = 0.0;
  void add(double x) {
    const double t = s + x;
    if (std::abs(s) >= std::abs(x))
      c += (s - t) + x;
    else
      c += (x - t) + s;
    s = t;
  }
  double get() const { return s + c; }
};

void check_sizes(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size())
    throw ContractError("metrics: scores and labels differ in length");
  if (scores.empty()) throw MetricError("metrics: empty input");
}

}  // namespace

double auroc(std::span<const double> scores, std::span<const int> labels) {
  check_sizes(scores, labels);
  const std::size_t n = scores.size();
  std::int64_t n_pos = 0;
  for (std::size_t i = 0; i < n; ++i) n_pos += labels[i] ? 1 : 0;
  const std::int64_t n_neg = static_cast<std::int64_t>(n) - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw MetricError("auroc: undefined for single-class input (n_pos=" + std::to_string(n_pos) +
                      ", n_neg=" + std::to_string(n_neg) + ")");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Rank sum of positives with tied scores sharing the average rank. Ranks
  // are half-integers, so the sum is exact in double.
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    for (std::size_t t = i; t < j; ++t)
      if (labels[order[t]]) rank_sum_pos += avg_rank;
    i = j;
  }
  const double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double aupr(std::span<const double> scores, std::span<const int> labels) {
  check_sizes(scores, labels);
  const std::size_t n = scores.size();
  std::int64_t n_pos = 0;
  for (std::size_t i = 0; i < n; ++i) n_pos += labels[i] ? 1 : 0;
  if (n_pos == 0) throw MetricError("aupr: undefined without positives");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });

  double ap = 0.0;
  std::int64_t seen_pos = 0;
  for (std::size_t rank = 1; rank <= n; ++rank) {
    if (labels[order[rank - 1]]) {
      ++seen_pos;
      ap += static_cast<double>(seen_pos) / static_cast<double>(rank);
    }
  }
  return ap / static_cast<double>(n_pos);
}

EvalReport profit_report(std::span<const double> scores, std::span<const int> labels,
                         std::span<const double> corrections, double clerk_cost,
                         double threshold) {
  check_sizes(scores, labels);
  if (corrections.size() != scores.size())
    throw ContractError("profit_report: corrections length mismatch");
  if (clerk_cost < 0.0)
    throw ConfigError("profit_report: clerk cost must be nonnegative, got " +
                      std::to_string(clerk_cost));

  EvalReport report;
  report.threshold = threshold;
  KahanSum benefit, potential;
  std::int64_t false_pos = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i]) {
      if (!(corrections[i] > 0.0))
        throw InputError("profit_report: positive claim at index " + std::to_string(i) +
                         " has nonpositive correction");
      ++report.n_pos;
      const double gain = corrections[i] - clerk_cost;
      potential.add(gain);
      if (scores[i] > threshold) benefit.add(gain);
    } else {
      ++report.n_neg;
      if (scores[i] > threshold) ++false_pos;
    }
  }
  report.benefit = benefit.get();
  report.cost = static_cast<double>(false_pos) * clerk_cost;
  report.potential = potential.get();
  if (!(report.potential > 0.0))
    throw MetricError("profit_report: potential must be positive, got " +
                      std::to_string(report.potential));
  report.profit = (report.benefit - report.cost) / report.potential;
  report.auroc = auroc(scores, labels);
  report.aupr = aupr(scores, labels);
  return report;
}

std::string to_json(const EvalReport& r) {
  nlohmann::json j;
  j["format_version"] = 1;
  j["auroc"] = r.auroc;
  j["aupr"] = r.aupr;
  j["benefit"] = r.benefit;
  j["cost"] = r.cost;
  j["potential"] = r.potential;
  j["profit"] = r.profit;
  j["threshold"] = r.threshold;
  j["n_pos"] = r.n_pos;
  j["n_neg"] = r.n_neg;
  return j.dump(2);
}

EvalReport eval_report_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  EvalReport r;
  r.auroc = j.at("auroc").get<double>();
  r.aupr = j.at("aupr").get<double>();
  r.benefit = j.at("benefit").get<double>();
  r.cost = j.at("cost").get<double>();
  r.potential = j.at("potential").get<double>();
  r.profit = j.at("profit").get<double>();
  r.threshold = j.at("threshold").get<double>();
  r.n_pos = j.at("n_pos").get<std::int64_t>();
  r.n_neg = j.at("n_neg").get<std::int64_t>();
  return r;
}

}  // namespace claims
