#include "claims/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include <json.hpp>

#include "claims/errors.hpp"
#include "claims/rng.hpp"

namespace claims {

namespace {

constexpr double kCorrectionFloorMargin = 1e-6;

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double logit(double p) { return std::log(p / (1.0 - p)); }

struct CodeGroups {
  int g1_lo, g1_hi;  // inclusive ranges
  int g2_lo, g2_hi;
  int g3_lo, g3_hi;
  int other_lo;
};

CodeGroups code_groups(const GeneratorSpec& s) {
  CodeGroups g;
  g.g1_lo = 1;
  g.g1_hi = g.g1_lo + s.r1_group - 1;
  g.g2_lo = g.g1_hi + 1;
  g.g2_hi = g.g2_lo + s.r2_group - 1;
  g.g3_lo = g.g2_hi + 1;
  g.g3_hi = g.g3_lo + s.r3_group - 1;
  g.other_lo = g.g3_hi + 1;
  return g;
}

// Deterministic per-code basis amount, log-uniform in [20, 500].
double basis_amount(std::uint64_t seed, int code) {
  Rng rng(derive_seed(seed ^ 0xBA5E5EEDULL, static_cast<std::uint64_t>(code)));
  return std::exp(rng.uniform(std::log(20.0), std::log(500.0)));
}

double factor_multiplier(int factor_id) { return 0.7 + 0.15 * factor_id; }

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

}  // namespace

void validate(const GeneratorSpec& s) {
  require(s.n_claims >= 0, "generator spec: n_claims must be nonnegative");
  require(s.v_code >= 2, "generator spec: v_code must be at least 2");
  require(s.base_rate > 0.0 && s.base_rate < 1.0, "generator spec: base_rate must be in (0,1)");
  require(s.r1_group >= 1 && s.r2_group >= 1 && s.r3_group >= 1,
          "generator spec: rule code groups must be nonempty");
  const CodeGroups g = code_groups(s);
  require(g.other_lo < s.v_code,
          "generator spec: rule code groups exhaust the vocabulary (v_code too small)");
  for (double p : {s.r1_row_prob, s.r2_row_prob, s.r3_row_prob, s.label_noise})
    require(p >= 0.0 && p <= 1.0, "generator spec: probabilities must lie in [0,1]");
  require(s.r1_row_prob + s.r2_row_prob + s.r3_row_prob <= 1.0,
          "generator spec: rule row probabilities sum above 1");
  require(s.r1_factor_min >= 0 && s.r1_factor_min <= 5,
          "generator spec: r1_factor_min must be in [0,5]");
  require(s.correction_alpha > 0.0 && s.correction_beta > 0.0,
          "generator spec: correction Beta parameters must be positive");
  require(s.clerk_cost >= 0.0, "generator spec: clerk_cost must be nonnegative");
  require(s.max_length >= 1 && s.max_length <= 100,
          "generator spec: max_length must be in [1,100]");
  require(s.mean_length >= 1.0 && s.mean_length <= s.max_length,
          "generator spec: mean_length must be in [1, max_length]");
}

RuleSignals rule_signals(const GeneratorSpec& spec, const Claim& claim) {
  const CodeGroups g = code_groups(spec);
  RuleSignals sig;
  bool any_g2 = false, any_g3 = false;
  for (const ClaimRow& row : claim.rows) {
    if (row.code_id >= g.g1_lo && row.code_id <= g.g1_hi && row.factor_id >= spec.r1_factor_min)
      sig.r1 = true;
    if (row.code_id >= g.g2_lo && row.code_id <= g.g2_hi) any_g2 = true;
    if (row.code_id >= g.g3_lo && row.code_id <= g.g3_hi) any_g3 = true;
  }
  sig.r2 = any_g2 && !any_g3;
  sig.length_z = spec.max_length > 1 ? static_cast<double>(claim.rows.size() - 1) /
                                           static_cast<double>(spec.max_length - 1)
                                     : 0.0;
  return sig;
}

double true_logit(const GeneratorSpec& spec, const Claim& claim) {
  const RuleSignals sig = rule_signals(spec, claim);
  return logit(spec.base_rate) + (sig.r1 ? spec.r1_weight : 0.0) +
         (sig.r2 ? spec.r2_weight : 0.0) + spec.length_weight * sig.length_z;
}

double expected_label_rate(const GeneratorSpec& spec, const Dataset& data) {
  if (data.empty()) return 0.0;
  double acc = 0.0;
  for (const Claim& c : data.claims) {
    const double p = sigmoid(true_logit(spec, c));
    acc += p * (1.0 - spec.label_noise) + (1.0 - p) * spec.label_noise;
  }
  return acc / static_cast<double>(data.size());
}

Dataset generate_dataset(const GeneratorSpec& spec) {
  validate(spec);
  const CodeGroups g = code_groups(spec);
  const double geom_p = 1.0 / spec.mean_length;

  Dataset data;
  data.claims.resize(static_cast<std::size_t>(spec.n_claims));
  for (std::int64_t i = 0; i < spec.n_claims; ++i) {
    Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(i)));
    Claim& claim = data.claims[static_cast<std::size_t>(i)];
    {
      std::ostringstream id;
      id << "claim-" << std::setw(8) << std::setfill('0') << i;
      claim.id = id.str();
    }

    const int t_rows = spec.max_length == 1 ? 1 : rng.truncated_geometric(geom_p, spec.max_length);
    claim.rows.resize(static_cast<std::size_t>(t_rows));
    double total = 0.0;
    for (ClaimRow& row : claim.rows) {
      const double u = rng.uniform();
      if (u < spec.r1_row_prob) {
        row.code_id = g.g1_lo + static_cast<int>(rng.uniform_int(
                                    static_cast<std::uint64_t>(g.g1_hi - g.g1_lo + 1)));
      } else if (u < spec.r1_row_prob + spec.r2_row_prob) {
        row.code_id = g.g2_lo + static_cast<int>(rng.uniform_int(
                                    static_cast<std::uint64_t>(g.g2_hi - g.g2_lo + 1)));
      } else if (u < spec.r1_row_prob + spec.r2_row_prob + spec.r3_row_prob) {
        row.code_id = g.g3_lo + static_cast<int>(rng.uniform_int(
                                    static_cast<std::uint64_t>(g.g3_hi - g.g3_lo + 1)));
      } else {
        row.code_id = g.other_lo + static_cast<int>(rng.uniform_int(
                                       static_cast<std::uint64_t>(spec.v_code - g.other_lo)));
      }
      row.factor_id = static_cast<int>(rng.uniform_int(6));
      row.amount = basis_amount(spec.seed, row.code_id) * factor_multiplier(row.factor_id) *
                   std::exp(0.25 * rng.normal());
      total += row.amount;
    }

    const double p_fraud = sigmoid(true_logit(spec, claim));
    int label = rng.uniform() < p_fraud ? 1 : 0;
    if (rng.uniform() < spec.label_noise) label = 1 - label;
    claim.label = label;
    if (label == 1) {
      const double fraction = rng.beta(spec.correction_alpha, spec.correction_beta);
      const double floor =
          spec.clerk_cost + kCorrectionFloorMargin * std::max(1.0, spec.clerk_cost);
      claim.correction = std::max(total * fraction, floor);
    } else {
      claim.correction = 0.0;
    }
  }
  return data;
}

PreprocessStats fit_preprocess(const Dataset& train) {
  if (train.empty()) throw InputError("fit_preprocess: empty training split");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (const Claim& c : train.claims)
    for (const ClaimRow& row : c.rows) {
      if (!(row.amount > 0.0))
        throw InputError("fit_preprocess: claim " + c.id + " has nonpositive amount");
      const double l = std::log(row.amount);
      lo = std::min(lo, l);
      hi = std::max(hi, l);
    }
  if (!(lo < hi))
    throw InputError("fit_preprocess: degenerate amount range (all amounts equal)");
  return PreprocessStats{lo, hi};
}

double apply_preprocess(double amount, const PreprocessStats& stats) {
  if (!(amount > 0.0))
    throw InputError("apply_preprocess: amount must be positive, got " + std::to_string(amount));
  const double scaled = (std::log(amount) - stats.log_min) / (stats.log_max - stats.log_min);
  return std::min(1.0, std::max(0.0, scaled));
}

std::array<Dataset, 3> split_dataset(const Dataset& data, const SplitFractions& f,
                                     std::uint64_t seed) {
  const double fractions[3] = {f.train, f.val, f.test};
  double sum = 0.0;
  for (double x : fractions) {
    if (!(x > 0.0)) throw ConfigError("split: fractions must be positive");
    sum += x;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split: fractions must sum to 1");

  std::array<Dataset, 3> out;
  for (int label = 0; label <= 1; ++label) {
    std::vector<int> idx;
    for (std::size_t i = 0; i < data.size(); ++i)
      if (data.claims[i].label == label) idx.push_back(static_cast<int>(i));
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(label)));
    rng.shuffle(idx);

    // Largest-remainder apportionment of this stratum across the splits.
    const std::size_t n = idx.size();
    std::size_t counts[3];
    double remainders[3];
    std::size_t assigned = 0;
    for (int s = 0; s < 3; ++s) {
      const double exact = static_cast<double>(n) * fractions[s];
      counts[s] = static_cast<std::size_t>(std::floor(exact));
      remainders[s] = exact - std::floor(exact);
      assigned += counts[s];
    }
    while (assigned < n) {
      int best = 0;
      for (int s = 1; s < 3; ++s)
        if (remainders[s] > remainders[best]) best = s;
      ++counts[best];
      remainders[best] = -1.0;
      ++assigned;
    }

    std::size_t cursor = 0;
    for (int s = 0; s < 3; ++s)
      for (std::size_t t = 0; t < counts[s]; ++t)
        out[static_cast<std::size_t>(s)].claims.push_back(
            data.claims[static_cast<std::size_t>(idx[cursor++])]);
  }
  return out;
}

std::vector<std::vector<int>> batch_by_length(const Dataset& data, int batch_size,
                                              std::uint64_t epoch_seed) {
  if (batch_size < 1) throw ConfigError("batch_by_length: batch_size must be >= 1");
  std::map<std::size_t, std::vector<int>> buckets;
  for (std::size_t i = 0; i < data.size(); ++i)
    buckets[data.claims[i].rows.size()].push_back(static_cast<int>(i));

  std::vector<std::vector<int>> batches;
  for (auto& [length, idx] : buckets) {
    Rng rng(derive_seed(epoch_seed, static_cast<std::uint64_t>(length)));
    rng.shuffle(idx);
    for (std::size_t start = 0; start < idx.size(); start += static_cast<std::size_t>(batch_size)) {
      const std::size_t stop = std::min(idx.size(), start + static_cast<std::size_t>(batch_size));
      batches.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(start),
                           idx.begin() + static_cast<std::ptrdiff_t>(stop));
    }
  }
  Rng rng(derive_seed(epoch_seed, 0xB00C5ULL));
  rng.shuffle(batches);
  return batches;
}

std::string to_json_line(const Claim& claim) {
  nlohmann::json rows = nlohmann::json::array();
  for (const ClaimRow& r : claim.rows)
    rows.push_back(nlohmann::json::array({r.code_id, r.factor_id, r.amount}));
  nlohmann::json j;
  j["format_version"] = 1;
  j["id"] = claim.id;
  j["rows"] = std::move(rows);
  j["label"] = claim.label;
  j["correction"] = claim.correction;
  return j.dump();
}

Claim claim_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError(std::string("claim json: ") + e.what());
  }
  if (j.contains("format_version") && j.at("format_version").get<int>() != 1)
    throw InputError("claim json: unsupported format_version");
  Claim claim;
  try {
    claim.id = j.at("id").get<std::string>();
    claim.label = j.at("label").get<int>();
    claim.correction = j.at("correction").get<double>();
    for (const auto& row : j.at("rows")) {
      ClaimRow r;
      r.code_id = row.at(0).get<int>();
      r.factor_id = row.at(1).get<int>();
      r.amount = row.at(2).get<double>();
      claim.rows.push_back(r);
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("claim json: ") + e.what());
  }
  if (claim.label != 0 && claim.label != 1) throw InputError("claim json: label must be 0 or 1");
  if (claim.rows.empty()) throw InputError("claim json: claim has no rows");
  if ((claim.label == 1) != (claim.correction > 0.0))
    throw InputError("claim json: correction must be positive iff label is 1");
  return claim;
}

void save_jsonl(const Dataset& data, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("save_jsonl: cannot open " + path + " for writing");
  for (const Claim& c : data.claims) out << to_json_line(c) << '\n';
  if (!out) throw IoError("save_jsonl: write failed for " + path);
}

Dataset load_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_jsonl: cannot open " + path);
  Dataset data;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      data.claims.push_back(claim_from_json(line));
    } catch (const InputError& e) {
      throw InputError("load_jsonl: " + path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return data;
}

std::string to_json(const GeneratorSpec& s) {
  nlohmann::json j;
  j["format_version"] = 1;
  j["n_claims"] = s.n_claims;
  j["seed"] = s.seed;
  j["v_code"] = s.v_code;
  j["base_rate"] = s.base_rate;
  j["r1_group"] = s.r1_group;
  j["r1_row_prob"] = s.r1_row_prob;
  j["r1_factor_min"] = s.r1_factor_min;
  j["r1_weight"] = s.r1_weight;
  j["r2_group"] = s.r2_group;
  j["r2_row_prob"] = s.r2_row_prob;
  j["r3_group"] = s.r3_group;
  j["r3_row_prob"] = s.r3_row_prob;
  j["r2_weight"] = s.r2_weight;
  j["length_weight"] = s.length_weight;
  j["label_noise"] = s.label_noise;
  j["correction_alpha"] = s.correction_alpha;
  j["correction_beta"] = s.correction_beta;
  j["clerk_cost"] = s.clerk_cost;
  j["mean_length"] = s.mean_length;
  j["max_length"] = s.max_length;
  return j.dump(2);
}

GeneratorSpec generator_spec_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("generator spec: ") + e.what());
  }
  GeneratorSpec s;
  const auto required = [&](const char* field) {
    if (!j.contains(field))
      throw ConfigError(std::string("generator spec: missing field '") + field + "'");
    return j.at(field);
  };
  try {
    s.n_claims = required("n_claims").get<std::int64_t>();
    s.seed = required("seed").get<std::uint64_t>();
    if (j.contains("format_version") && j.at("format_version").get<int>() != 1)
      throw ConfigError("generator spec: unsupported format_version");
    if (j.contains("v_code")) s.v_code = j.at("v_code").get<int>();
    if (j.contains("base_rate")) s.base_rate = j.at("base_rate").get<double>();
    if (j.contains("r1_group")) s.r1_group = j.at("r1_group").get<int>();
    if (j.contains("r1_row_prob")) s.r1_row_prob = j.at("r1_row_prob").get<double>();
    if (j.contains("r1_factor_min")) s.r1_factor_min = j.at("r1_factor_min").get<int>();
    if (j.contains("r1_weight")) s.r1_weight = j.at("r1_weight").get<double>();
    if (j.contains("r2_group")) s.r2_group = j.at("r2_group").get<int>();
    if (j.contains("r2_row_prob")) s.r2_row_prob = j.at("r2_row_prob").get<double>();
    if (j.contains("r3_group")) s.r3_group = j.at("r3_group").get<int>();
    if (j.contains("r3_row_prob")) s.r3_row_prob = j.at("r3_row_prob").get<double>();
    if (j.contains("r2_weight")) s.r2_weight = j.at("r2_weight").get<double>();
    if (j.contains("length_weight")) s.length_weight = j.at("length_weight").get<double>();
    if (j.contains("label_noise")) s.label_noise = j.at("label_noise").get<double>();
    if (j.contains("correction_alpha")) s.correction_alpha = j.at("correction_alpha").get<double>();
    if (j.contains("correction_beta")) s.correction_beta = j.at("correction_beta").get<double>();
    if (j.contains("clerk_cost")) s.clerk_cost = j.at("clerk_cost").get<double>();
    if (j.contains("mean_length")) s.mean_length = j.at("mean_length").get<double>();
    if (j.contains("max_length")) s.max_length = j.at("max_length").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("generator spec: ") + e.what());
  }
  validate(s);
  return s;
}

std::uint64_t fnv1a64(const void* data, std::size_t size) {
  const unsigned char* bytes = static_cast<const unsigned char*>(data);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a64_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("fnv1a64_file: cannot open " + path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    const std::streamsize got = in.gcount();
    for (std::streamsize i = 0; i < got; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

std::uint64_t checksum(const Dataset& data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto mix = [&h](const void* p, std::size_t n) {
    const unsigned char* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const Claim& c : data.claims) {
    mix(c.id.data(), c.id.size());
    mix(&c.label, sizeof(c.label));
    mix(&c.correction, sizeof(c.correction));
    for (const ClaimRow& r : c.rows) {
      mix(&r.code_id, sizeof(r.code_id));
      mix(&r.factor_id, sizeof(r.factor_id));
      mix(&r.amount, sizeof(r.amount));
    }
  }
  return h;
}

}  // namespace claims
