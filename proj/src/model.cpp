#include "claims/model.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "claims/errors.hpp"

namespace claims {

namespace {

// Keeps predict usable on freshly built models; fit replaces it with stats
// from the training split.
const PreprocessStats kDefaultStats{0.0, 1.0};

constexpr double kProbClamp = 1e-12;

}  // namespace

std::string encoder_name(EncoderKind kind) {
  switch (kind) {
    case EncoderKind::kBow: return "BOW";
    case EncoderKind::kCnn: return "CNN";
    case EncoderKind::kPff: return "PFF";
    case EncoderKind::kSelfAttention: return "SELF_ATTENTION";
  }
  throw ConfigError("encoder_name: invalid encoder kind");
}

std::string encoder_display_name(EncoderKind kind) {
  switch (kind) {
    case EncoderKind::kBow: return "bow";
    case EncoderKind::kCnn: return "cnn";
    case EncoderKind::kPff: return "pff";
    case EncoderKind::kSelfAttention: return "selfa";
  }
  throw ConfigError("encoder_display_name: invalid encoder kind");
}

EncoderKind encoder_from_name(const std::string& name) {
  if (name == "BOW") return EncoderKind::kBow;
  if (name == "CNN") return EncoderKind::kCnn;
  if (name == "PFF") return EncoderKind::kPff;
  if (name == "SELF_ATTENTION") return EncoderKind::kSelfAttention;
  throw ConfigError("unknown encoder '" + name +
                    "' (expected BOW, CNN, PFF, or SELF_ATTENTION)");
}

void validate(const ModelConfig& c) {
  if (c.encoder != EncoderKind::kBow && c.d_m < 1)
    throw ConfigError("model config: d_m must be positive, got " + std::to_string(c.d_m));
  if (c.fc_width < 1)
    throw ConfigError("model config: fc_width must be positive, got " +
                      std::to_string(c.fc_width));
  if (c.dropout < 0.0 || c.dropout >= 1.0)
    throw ConfigError("model config: dropout must be in [0, 1)");
  if (c.v_code < 1 || c.v_factor < 1)
    throw ConfigError("model config: vocabulary sizes must be positive");
  if (c.encoder == EncoderKind::kCnn && (c.kernel_width < 1 || c.kernel_width % 2 == 0))
    throw ConfigError("model config: kernel_width must be odd and positive, got " +
                      std::to_string(c.kernel_width));
}

Model::Model(const ModelConfig& config) : config_(config), preprocess_(kDefaultStats) {
  validate(config);
  const bool embedded = config.encoder != EncoderKind::kBow;
  if (embedded) {
    embedding_.emplace(config.v_code, config.v_factor, config.d_m);
    pool_.emplace(config.d_m);
  }
  switch (config.encoder) {
    case EncoderKind::kBow:
      break;
    case EncoderKind::kCnn:
      cnn_.emplace(config.d_m, config.kernel_width);
      break;
    case EncoderKind::kPff:
      pff_.emplace(config.d_m);
      break;
    case EncoderKind::kSelfAttention:
      attention_.emplace(config.d_m);
      break;
  }
  head_ = layers::HeadParamsT<double>(head_input_dim(), config.fc_width);
}

int Model::head_input_dim() const {
  if (config_.encoder == EncoderKind::kBow) return config_.v_code + config_.v_factor + 1;
  return config_.d_m;
}

std::vector<ag::Parameter*> Model::parameters() {
  std::vector<ag::Parameter*> out;
  const auto append = [&out](std::vector<ag::Parameter*> more) {
    out.insert(out.end(), more.begin(), more.end());
  };
  if (embedding_) append(embedding_->parameters());
  if (cnn_) append(cnn_->parameters());
  if (pff_) append(pff_->parameters());
  if (attention_) append(attention_->parameters());
  if (pool_) append(pool_->parameters());
  append(head_.parameters());
  return out;
}

std::vector<const ag::Parameter*> Model::parameters() const {
  std::vector<const ag::Parameter*> out;
  for (ag::Parameter* p : const_cast<Model*>(this)->parameters()) out.push_back(p);
  return out;
}

layers::EncodedRows Model::encode(const Claim& claim) const {
  if (claim.rows.empty()) throw InputError("claim " + claim.id + " has no rows");
  layers::EncodedRows rows;
  rows.code_ids.reserve(claim.rows.size());
  rows.factor_ids.reserve(claim.rows.size());
  rows.scaled_amounts.reserve(claim.rows.size());
  for (const ClaimRow& r : claim.rows) {
    rows.code_ids.push_back(layers::map_id(r.code_id, config_.v_code));
    rows.factor_ids.push_back(layers::map_id(r.factor_id, config_.v_factor));
    rows.scaled_amounts.push_back(apply_preprocess(r.amount, preprocess_));
  }
  return rows;
}

std::unique_ptr<Model> build_model(const ModelConfig& config) {
  auto model = std::make_unique<Model>(config);
  Rng rng(config.seed);
  if (auto* e = model->embedding()) e->init(rng);
  if (auto* c = model->cnn()) c->init(rng);
  if (auto* p = model->pff()) p->init(rng);
  if (auto* a = model->attention()) a->init(rng);
  if (auto* p = model->pool()) p->init(rng);
  model->head().init(rng);
  return model;
}

ForwardVars forward(Model& model, ag::Tape& tape, const Claim& claim, bool train_mode,
                    Rng* dropout_rng) {
  const layers::EncodedRows rows = model.encode(claim);
  const ModelConfig& config = model.config();
  ForwardVars out;

  if (config.encoder == EncoderKind::kBow) {
    std::vector<int> idx;
    std::vector<double> values;
    layers::bow_sparse(rows, config.v_code, config.v_factor, idx, values);
    out.prob = layers::mlp_head_sparse(tape, model.head(), std::move(idx), std::move(values),
                                       config.dropout, train_mode, dropout_rng);
    return out;
  }

  auto x = layers::embed_rows(tape, *model.embedding(), rows);
  ag::Var features;
  switch (config.encoder) {
    case EncoderKind::kPff:
      features = layers::pff_forward(tape, *model.pff(), x);
      break;
    case EncoderKind::kCnn:
      features = layers::cnn_encode(tape, *model.cnn(), x);
      break;
    case EncoderKind::kSelfAttention: {
      auto result = layers::attention_block(tape, *model.attention(), x);
      features = result.features;
      out.attention = result.attention;
      break;
    }
    case EncoderKind::kBow:
      break;  // unreachable
  }
  auto pooled = layers::sigmoid_pool(tape, *model.pool(), features);
  out.pool_weights = pooled.weights;
  out.prob =
      layers::mlp_head(tape, model.head(), pooled.pooled, config.dropout, train_mode, dropout_rng);
  return out;
}

double predict(Model& model, const Claim& claim) {
  ag::Tape tape;
  const ForwardVars vars = forward(model, tape, claim, /*train_mode=*/false, nullptr);
  const double p = vars.prob.value()(0, 0);
  return std::min(1.0 - kProbClamp, std::max(kProbClamp, p));
}

AttentionReport extract_attention(Model& model, const Claim& claim) {
  ag::Tape tape;
  const ForwardVars vars = forward(model, tape, claim, /*train_mode=*/false, nullptr);
  AttentionReport report;
  if (vars.attention) report.self_attention = vars.attention->value();
  if (vars.pool_weights) {
    const ag::Matrix& w = vars.pool_weights->value();
    report.pool_weights.assign(w.data(), w.data() + w.size());
  } else {
    // BOW sums rows with no learned gate; report the neutral gate value.
    report.pool_weights.assign(claim.rows.size(), 0.5);
  }
  return report;
}

std::string to_json(const ModelConfig& c) {
  nlohmann::json j;
  j["format_version"] = 1;
  j["encoder"] = encoder_name(c.encoder);
  j["d_m"] = c.d_m;
  j["fc_width"] = c.fc_width;
  j["dropout"] = c.dropout;
  if (c.has_weight_decay()) j["weight_decay"] = c.weight_decay;
  j["v_code"] = c.v_code;
  j["v_factor"] = c.v_factor;
  j["kernel_width"] = c.kernel_width;
  j["seed"] = c.seed;
  return j.dump(2);
}

ModelConfig model_config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  ModelConfig c;
  try {
    if (!j.contains("encoder")) throw ConfigError("model config: missing field 'encoder'");
    c.encoder = encoder_from_name(j.at("encoder").get<std::string>());
    if (j.contains("format_version") && j.at("format_version").get<int>() != 1)
      throw ConfigError("model config: unsupported format_version");
    if (j.contains("d_m")) c.d_m = j.at("d_m").get<int>();
    if (j.contains("fc_width")) c.fc_width = j.at("fc_width").get<int>();
    if (j.contains("dropout")) c.dropout = j.at("dropout").get<double>();
    if (j.contains("weight_decay")) c.weight_decay = j.at("weight_decay").get<double>();
    if (j.contains("v_code")) c.v_code = j.at("v_code").get<int>();
    if (j.contains("v_factor")) c.v_factor = j.at("v_factor").get<int>();
    if (j.contains("kernel_width")) c.kernel_width = j.at("kernel_width").get<int>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  validate(c);
  return c;
}

std::uint64_t parameter_checksum(const Model& model) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const ag::Parameter* p : model.parameters()) {
    h ^= fnv1a64(p->name.data(), p->name.size());
    h *= 0x100000001b3ULL;
    h ^= fnv1a64(p->value.data(), static_cast<std::size_t>(p->value.size()) * sizeof(double));
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace claims
