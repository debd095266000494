#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "planforge/codec.hpp"
#include "planforge/corpus.hpp"

namespace planforge {

enum class Activation : uint8_t { Tanh = 0, Relu = 1 };

Activation parse_activation(const std::string& name);
std::string activation_name(Activation a);

struct VaeConfig {
  int latent_dim = 16;
  int hidden = 128;
  Activation activation = Activation::Tanh;
  int batch_size = 64;
  int steps = 4000;
  double learning_rate = 2e-3;
  double kl_anneal_fraction = 0.2;
  /// KL weight reached at the end of the annealing ramp.
  double kl_weight = 0.1;
  double grad_clip = 5.0;
  /// Steps between evaluations; 0 evaluates once per epoch.
  int eval_every = 0;
  /// Cap on the train entries scored at each evaluation.
  int eval_train_limit = 2000;
};

class VaeDivergedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Encoder: position-aware token embeddings summed into a hidden layer, one
/// more hidden layer, then (mu, logvar). Decoder: z -> two hidden layers ->
/// per-position logits over the vocabulary. All parameters live in one flat
/// vector.
class VaeModel {
 public:
  VaeModel() = default;
  VaeModel(int seq_len, int vocab_size, int latent_dim, int hidden, Activation act, uint64_t vocab_hash,
           uint64_t seed);

  int seq_len() const { return seq_len_; }
  int vocab_size() const { return vocab_; }
  int latent_dim() const { return latent_; }
  int hidden() const { return hidden_; }
  Activation activation() const { return act_; }
  uint64_t vocab_hash() const { return vocab_hash_; }
  uint64_t seed() const { return seed_; }

  Eigen::VectorXd& params() { return params_; }
  const Eigen::VectorXd& params() const { return params_; }
  int param_count() const { return static_cast<int>(params_.size()); }

  /// Columns are sequences.
  void encode(const std::vector<PlanTokenSeq>& batch, Eigen::MatrixXd& mu, Eigen::MatrixXd& logvar) const;
  /// (seq_len * vocab) x batch logits for latent columns z.
  Eigen::MatrixXd decode_logits(const Eigen::MatrixXd& z) const;
  /// Per-position argmax tokens.
  PlanTokenSeq decode_tokens(const Eigen::VectorXd& z) const;

  void write(std::ostream& out) const;
  static VaeModel read(std::istream& in);
  void save(const std::string& path) const;
  static VaeModel load(const std::string& path);

 private:
  friend struct VaeLayout;
  int seq_len_ = 0;
  int vocab_ = 0;
  int latent_ = 0;
  int hidden_ = 0;
  Activation act_ = Activation::Tanh;
  uint64_t vocab_hash_ = 0;
  uint64_t seed_ = 0;
  Eigen::VectorXd params_;
};

struct VaeLoss {
  double loss = 0.0;           // mean over the batch of recon + beta * kl
  double reconstruction = 0.0;  // mean token cross-entropy summed over positions
  double kl = 0.0;             // mean KL(q(z|x) || N(0, I))
};

/// Negative ELBO on a batch with fixed reparameterization noise `eps`
/// (latent_dim x batch). Writes the gradient w.r.t. params when `grad` is set.
VaeLoss vae_loss(const VaeModel& model, const std::vector<PlanTokenSeq>& batch, const Eigen::MatrixXd& eps,
                 double kl_weight, Eigen::VectorXd* grad);

/// KL(N(mu, diag(exp(logvar))) || N(0, I)).
double gaussian_kl(const Eigen::VectorXd& mu, const Eigen::VectorXd& logvar);

struct VaeCurvePoint {
  int step = 0;
  int epoch = 0;
  double loss = 0.0;
  double reconstruction = 0.0;
  double kl = 0.0;
  double kl_weight = 0.0;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
};

struct VaeTrainResult {
  VaeModel model;
  std::vector<VaeCurvePoint> curve;
};

VaeTrainResult train_vae(const Corpus& corpus, const SymbolVocab& vocab, const VaeConfig& config, uint64_t seed);
VaeTrainResult train_vae(const std::vector<PlanTokenSeq>& train, const std::vector<PlanTokenSeq>& test,
                         int vocab_size, uint64_t vocab_hash, const VaeConfig& config, uint64_t seed);

void write_curve_csv(std::ostream& out, const std::vector<VaeCurvePoint>& curve);

/// Posterior mean of the encoder.
Eigen::VectorXd embed(const VaeModel& model, const PlanTokenSeq& tokens);
/// Argmax tokens at each position, repaired by the codec into a plan.
JoinTree decode_latent(const VaeModel& model, const PlanCodec& codec, const Query& query, const Eigen::VectorXd& z);

/// Fraction of sequences whose argmax reconstruction from the posterior mean
/// matches every token.
double reconstruction_accuracy(const VaeModel& model, const std::vector<PlanTokenSeq>& seqs);

}  // namespace planforge
