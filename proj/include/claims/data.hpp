#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace claims {

// One billed operation: procedure code, factor level, monetary amount.
struct ClaimRow {
  int code_id = 0;
  int factor_id = 0;  // in {0..5}
  double amount = 0.0;  // > 0, currency units
};

// One observation: a variable-length sequence of rows plus the label and the
// correction amount (positive iff label == 1).
struct Claim {
  std::string id;
  std::vector<ClaimRow> rows;  // 1..100 rows
  int label = 0;
  double correction = 0.0;
};

struct Dataset {
  std::vector<Claim> claims;

  std::size_t size() const { return claims.size(); }
  bool empty() const { return claims.empty(); }
};

// Log-scaling statistics, fit on the training split only.
struct PreprocessStats {
  double log_min = 0.0;
  double log_max = 1.0;
};

// Synthetic benchmark specification. Fraud is sampled from a logistic model
// over two planted rules and the claim length:
//   R1: some row has a code in group G1 and factor_id >= r1_factor_min
//       (a within-row conjunction);
//   R2: the claim contains a code from group G2 and none from group G3
//       (a cross-row context condition);
//   length term: (T - 1) / (max_length - 1).
// Code groups are consecutive id ranges starting at 1 (id 0 is reserved):
// G1 = [1, r1_group], G2 = (G1, +r2_group], G3 = (G2, +r3_group].
struct GeneratorSpec {
  std::int64_t n_claims = 10000;
  std::uint64_t seed = 1;
  int v_code = 4000;
  double base_rate = 0.005;  // fraud probability when no rule fires, length 1

  int r1_group = 40;
  double r1_row_prob = 0.05;  // per-row probability of drawing a G1 code
  int r1_factor_min = 4;
  double r1_weight = 7.0;  // logit contribution when R1 holds

  int r2_group = 40;
  double r2_row_prob = 0.05;
  int r3_group = 40;
  double r3_row_prob = 0.05;
  double r2_weight = 6.0;

  double length_weight = 1.5;
  double label_noise = 0.01;  // symmetric flip probability

  // Correction = claim total * Beta(alpha, beta) fraction, floored just
  // above the clerk cost so every positive is worth flagging.
  double correction_alpha = 2.0;
  double correction_beta = 5.0;
  double clerk_cost = 10.0;

  double mean_length = 8.0;  // truncated geometric on [1, max_length]
  int max_length = 100;
};

// True generative signals for a claim; the planted-rule oracle scores with
// these.
struct RuleSignals {
  bool r1 = false;
  bool r2 = false;
  double length_z = 0.0;
};

void validate(const GeneratorSpec& spec);

// Deterministic in (spec.seed, claim index); independent of generation order.
Dataset generate_dataset(const GeneratorSpec& spec);

RuleSignals rule_signals(const GeneratorSpec& spec, const Claim& claim);

// Logit of the planted fraud model for a claim (before label noise).
double true_logit(const GeneratorSpec& spec, const Claim& claim);

// Mean probability that a generated claim carries label 1, including noise,
// evaluated on the given claims (Monte-Carlo estimate of the target rate).
double expected_label_rate(const GeneratorSpec& spec, const Dataset& data);

PreprocessStats fit_preprocess(const Dataset& train);

// (ln(amount) - log_min) / (log_max - log_min), clipped to [0, 1].
double apply_preprocess(double amount, const PreprocessStats& stats);

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

// Disjoint, exhaustive, label-stratified, deterministic in seed.
std::array<Dataset, 3> split_dataset(const Dataset& data, const SplitFractions& fractions,
                                     std::uint64_t seed);

// Batches of claim indices; every batch holds claims of one length. Bucket
// contents and batch order are shuffled from epoch_seed; the final partial
// batch per bucket is kept.
std::vector<std::vector<int>> batch_by_length(const Dataset& data, int batch_size,
                                              std::uint64_t epoch_seed);

// JSON Lines, one claim per line.
void save_jsonl(const Dataset& data, const std::string& path);
Dataset load_jsonl(const std::string& path);

std::string to_json(const GeneratorSpec& spec);
GeneratorSpec generator_spec_from_json(const std::string& text);

std::string to_json_line(const Claim& claim);
Claim claim_from_json(const std::string& text);

// FNV-1a 64-bit hashes used for dataset/split/weights fingerprints.
std::uint64_t fnv1a64(const void* data, std::size_t size);
std::uint64_t fnv1a64_file(const std::string& path);
std::uint64_t checksum(const Dataset& data);

}  // namespace claims
