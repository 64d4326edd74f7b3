#pragma once

#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "claims/data.hpp"
#include "claims/layers.hpp"

namespace claims {

enum class EncoderKind { kBow, kCnn, kPff, kSelfAttention };

std::string encoder_name(EncoderKind kind);        // "BOW", "CNN", "PFF", "SELF_ATTENTION"
std::string encoder_display_name(EncoderKind kind);  // "bow", "cnn", "pff", "selfa"
EncoderKind encoder_from_name(const std::string& name);

struct ModelConfig {
  EncoderKind encoder = EncoderKind::kSelfAttention;
  int d_m = 32;        // feature width; ignored by BOW
  int fc_width = 256;  // head hidden width
  double dropout = 0.0;
  double weight_decay = -1.0;  // < 0 means "use the training default"
  int v_code = 4000;
  int v_factor = 6;
  int kernel_width = 3;  // CNN only
  std::uint64_t seed = 1;

  bool has_weight_decay() const { return weight_decay >= 0.0; }
};

void validate(const ModelConfig& config);

struct TrainMeta {
  int epochs_run = 0;
  int best_epoch = -1;
  double best_val_loss = std::numeric_limits<double>::quiet_NaN();
};

// Encoder-specific parameters plus the shared pooling and head. Immutable
// once trained; concurrent predict calls on one model are safe.
class Model {
 public:
  explicit Model(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  const PreprocessStats& preprocess() const { return preprocess_; }
  void set_preprocess(const PreprocessStats& stats) { preprocess_ = stats; }
  TrainMeta& meta() { return meta_; }
  const TrainMeta& meta() const { return meta_; }

  // Canonical parameter order: embedding, encoder, pool, head.
  std::vector<ag::Parameter*> parameters();
  std::vector<const ag::Parameter*> parameters() const;

  int head_input_dim() const;

  layers::EmbeddingParamsT<double>* embedding() { return embedding_ ? &*embedding_ : nullptr; }
  layers::PffParamsT<double>* pff() { return pff_ ? &*pff_ : nullptr; }
  layers::AttentionBlockParamsT<double>* attention() {
    return attention_ ? &*attention_ : nullptr;
  }
  layers::CnnParamsT<double>* cnn() { return cnn_ ? &*cnn_ : nullptr; }
  layers::PoolParamsT<double>* pool() { return pool_ ? &*pool_ : nullptr; }
  layers::HeadParamsT<double>& head() { return head_; }

  // Vocabulary-mapped, amount-scaled view of a claim.
  layers::EncodedRows encode(const Claim& claim) const;

 private:
  ModelConfig config_;
  PreprocessStats preprocess_;  // identity-ish default until fit
  TrainMeta meta_;
  std::optional<layers::EmbeddingParamsT<double>> embedding_;
  std::optional<layers::PffParamsT<double>> pff_;
  std::optional<layers::AttentionBlockParamsT<double>> attention_;
  std::optional<layers::CnnParamsT<double>> cnn_;
  std::optional<layers::PoolParamsT<double>> pool_;
  layers::HeadParamsT<double> head_;
};

// Deterministic in config.seed: same seed, same parameters bit for bit.
std::unique_ptr<Model> build_model(const ModelConfig& config);

// Differentiable forward pass on the caller's tape.
struct ForwardVars {
  ag::Var prob;                      // 1 x 1
  std::optional<ag::Var> pool_weights;  // T x 1; absent for BOW
  std::optional<ag::Var> attention;     // T x T; self-attention encoder only
};

ForwardVars forward(Model& model, ag::Tape& tape, const Claim& claim, bool train_mode,
                    Rng* dropout_rng);

// Eval-mode fraud probability, clamped into (0, 1) strictly.
double predict(Model& model, const Claim& claim);

struct AttentionReport {
  std::optional<ag::Matrix> self_attention;  // T x T, rows sum to 1
  std::vector<double> pool_weights;          // length T, entries in (0, 1)
};

// Interpretability view. BOW aggregates rows by an unweighted sum, so its
// reported per-row weight is the constant sum-pooling gate sigmoid(0) = 0.5.
AttentionReport extract_attention(Model& model, const Claim& claim);

// Model directory: manifest (model.json) + little-endian float64 blob
// (weights.bin) in manifest parameter order. Round-trips bit-exactly.
void save_model(const Model& model, const std::string& dir);
std::unique_ptr<Model> load_model(const std::string& dir);

std::string to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const std::string& text);

std::uint64_t parameter_checksum(const Model& model);

}  // namespace claims
