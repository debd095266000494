#include "planforge/vae.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "planforge/random.hpp"

namespace planforge {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using CMap = Eigen::Map<const MatrixXd>;
using Map = Eigen::Map<MatrixXd>;

Activation parse_activation(const std::string& name) {
  if (name == "tanh") return Activation::Tanh;
  if (name == "relu") return Activation::Relu;
  throw std::invalid_argument("unknown activation '" + name + "'");
}

std::string activation_name(Activation a) { return a == Activation::Tanh ? "tanh" : "relu"; }

struct VaeLayout {
  struct Block {
    Eigen::Index offset, rows, cols;
  };
  Block E, b1, W2, b2, W3, b3, D1, e1, D2, e2, D3, e3;
  Eigen::Index total = 0;

  VaeLayout(int T, int V, int d, int H) {
    auto add = [&](Eigen::Index r, Eigen::Index c) {
      Block b{total, r, c};
      total += r * c;
      return b;
    };
    E = add(H, T * V);
    b1 = add(H, 1);
    W2 = add(H, H);
    b2 = add(H, 1);
    W3 = add(2 * d, H);
    b3 = add(2 * d, 1);
    D1 = add(H, d);
    e1 = add(H, 1);
    D2 = add(H, H);
    e2 = add(H, 1);
    D3 = add(T * V, H);
    e3 = add(T * V, 1);
  }
  explicit VaeLayout(const VaeModel& m) : VaeLayout(m.seq_len_, m.vocab_, m.latent_, m.hidden_) {}

  static CMap view(const VectorXd& p, const Block& b) { return CMap(p.data() + b.offset, b.rows, b.cols); }
  static Map view(VectorXd& p, const Block& b) { return Map(p.data() + b.offset, b.rows, b.cols); }
};

namespace {

void activate(Activation act, MatrixXd& a) {
  if (act == Activation::Tanh) {
    a = a.array().tanh();
  } else {
    a = a.cwiseMax(0.0);
  }
}

// Multiplies the upstream gradient by the activation derivative, given the
// activated output h.
void activate_backward(Activation act, const MatrixXd& h, MatrixXd& grad) {
  if (act == Activation::Tanh) {
    grad.array() *= 1.0 - h.array().square();
  } else {
    grad.array() *= (h.array() > 0.0).cast<double>();
  }
}

void check_batch(const VaeModel& m, const std::vector<PlanTokenSeq>& batch) {
  for (const auto& s : batch) {
    if (static_cast<int>(s.tokens.size()) != m.seq_len()) throw std::invalid_argument("vae: token sequence length mismatch");
    for (int t : s.tokens) {
      if (t < 0 || t >= m.vocab_size()) throw std::invalid_argument("vae: token outside the vocabulary");
    }
  }
}

struct EncoderPass {
  MatrixXd h1, h2, mu, logvar;
};

EncoderPass encoder_forward(const VaeModel& m, const VaeLayout& L, const std::vector<PlanTokenSeq>& batch) {
  check_batch(m, batch);
  const auto& p = m.params();
  const int B = static_cast<int>(batch.size());
  const int V = m.vocab_size();
  const auto E = VaeLayout::view(p, L.E);
  EncoderPass f;
  f.h1 = VaeLayout::view(p, L.b1).replicate(1, B);
  for (int b = 0; b < B; ++b) {
    const auto& tok = batch[b].tokens;
    for (int t = 0; t < m.seq_len(); ++t) f.h1.col(b) += E.col(t * V + tok[t]);
  }
  activate(m.activation(), f.h1);
  f.h2 = VaeLayout::view(p, L.W2) * f.h1;
  f.h2.colwise() += VaeLayout::view(p, L.b2).col(0);
  activate(m.activation(), f.h2);
  MatrixXd o = VaeLayout::view(p, L.W3) * f.h2;
  o.colwise() += VaeLayout::view(p, L.b3).col(0);
  const int d = m.latent_dim();
  f.mu = o.topRows(d);
  f.logvar = o.bottomRows(d);
  return f;
}

struct DecoderPass {
  MatrixXd g1, g2, logits;
};

DecoderPass decoder_forward(const VaeModel& m, const VaeLayout& L, const MatrixXd& z) {
  const auto& p = m.params();
  DecoderPass f;
  f.g1 = VaeLayout::view(p, L.D1) * z;
  f.g1.colwise() += VaeLayout::view(p, L.e1).col(0);
  activate(m.activation(), f.g1);
  f.g2 = VaeLayout::view(p, L.D2) * f.g1;
  f.g2.colwise() += VaeLayout::view(p, L.e2).col(0);
  activate(m.activation(), f.g2);
  f.logits = VaeLayout::view(p, L.D3) * f.g2;
  f.logits.colwise() += VaeLayout::view(p, L.e3).col(0);
  return f;
}

}  // namespace

VaeModel::VaeModel(int seq_len, int vocab_size, int latent_dim, int hidden, Activation act, uint64_t vocab_hash,
                   uint64_t seed)
    : seq_len_(seq_len),
      vocab_(vocab_size),
      latent_(latent_dim),
      hidden_(hidden),
      act_(act),
      vocab_hash_(vocab_hash),
      seed_(seed) {
  if (seq_len < 1 || vocab_size < 2 || latent_dim < 1 || hidden < 1) throw std::invalid_argument("vae: bad dimensions");
  const VaeLayout L(*this);
  params_ = VectorXd::Zero(L.total);
  Rng rng(seed);
  auto init = [&](const VaeLayout::Block& b, double fan_in) {
    auto w = VaeLayout::view(params_, b);
    const double scale = 1.0 / std::sqrt(fan_in);
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = scale * rng.normal();
    }
  };
  init(L.E, seq_len);
  init(L.W2, hidden);
  init(L.W3, hidden);
  init(L.D1, latent_dim);
  init(L.D2, hidden);
  init(L.D3, hidden);
}

void VaeModel::encode(const std::vector<PlanTokenSeq>& batch, MatrixXd& mu, MatrixXd& logvar) const {
  auto f = encoder_forward(*this, VaeLayout(*this), batch);
  mu = std::move(f.mu);
  logvar = std::move(f.logvar);
}

MatrixXd VaeModel::decode_logits(const MatrixXd& z) const {
  if (z.rows() != latent_) throw std::invalid_argument("vae: latent dimension mismatch");
  return decoder_forward(*this, VaeLayout(*this), z).logits;
}

PlanTokenSeq VaeModel::decode_tokens(const VectorXd& z) const {
  const MatrixXd logits = decode_logits(z);
  PlanTokenSeq out;
  out.tokens.resize(seq_len_);
  for (int t = 0; t < seq_len_; ++t) {
    Eigen::Index arg = 0;
    logits.col(0).segment(t * vocab_, vocab_).maxCoeff(&arg);
    out.tokens[t] = static_cast<int>(arg);
  }
  return out;
}

double gaussian_kl(const VectorXd& mu, const VectorXd& logvar) {
  return 0.5 * (mu.array().square() + logvar.array().exp() - 1.0 - logvar.array()).sum();
}

VaeLoss vae_loss(const VaeModel& m, const std::vector<PlanTokenSeq>& batch, const MatrixXd& eps, double kl_weight,
                 VectorXd* grad) {
  const VaeLayout L(m);
  const int B = static_cast<int>(batch.size());
  if (B == 0) throw std::invalid_argument("vae: empty batch");
  if (eps.rows() != m.latent_dim() || eps.cols() != B) throw std::invalid_argument("vae: noise shape mismatch");
  const int T = m.seq_len();
  const int V = m.vocab_size();
  const auto& p = m.params();

  EncoderPass enc = encoder_forward(m, L, batch);
  const MatrixXd stdv = (0.5 * enc.logvar.array()).exp().matrix();
  const MatrixXd z = enc.mu + stdv.cwiseProduct(eps);
  DecoderPass dec = decoder_forward(m, L, z);

  // Softmax per position, in place: dec.logits becomes probabilities.
  VaeLoss out;
  MatrixXd& prob = dec.logits;
  double ce = 0.0;
  for (int b = 0; b < B; ++b) {
    for (int t = 0; t < T; ++t) {
      auto seg = prob.col(b).segment(t * V, V);
      const double mx = seg.maxCoeff();
      seg.array() = (seg.array() - mx).exp();
      const double s = seg.sum();
      const int tok = batch[b].tokens[t];
      ce -= std::log(seg(tok) / s);
      seg /= s;
    }
  }
  double kl = 0.0;
  for (int b = 0; b < B; ++b) kl += gaussian_kl(enc.mu.col(b), enc.logvar.col(b));
  out.reconstruction = ce / B;
  out.kl = kl / B;
  out.loss = out.reconstruction + kl_weight * out.kl;
  if (!grad) return out;

  grad->setZero(p.size());
  VectorXd& g = *grad;
  const double inv_b = 1.0 / B;

  MatrixXd dlogits = prob;
  for (int b = 0; b < B; ++b) {
    for (int t = 0; t < T; ++t) dlogits(t * V + batch[b].tokens[t], b) -= 1.0;
  }
  dlogits *= inv_b;
  VaeLayout::view(g, L.D3) = dlogits * dec.g2.transpose();
  VaeLayout::view(g, L.e3) = dlogits.rowwise().sum();
  MatrixXd dg2 = VaeLayout::view(p, L.D3).transpose() * dlogits;
  activate_backward(m.activation(), dec.g2, dg2);
  VaeLayout::view(g, L.D2) = dg2 * dec.g1.transpose();
  VaeLayout::view(g, L.e2) = dg2.rowwise().sum();
  MatrixXd dg1 = VaeLayout::view(p, L.D2).transpose() * dg2;
  activate_backward(m.activation(), dec.g1, dg1);
  VaeLayout::view(g, L.D1) = dg1 * z.transpose();
  VaeLayout::view(g, L.e1) = dg1.rowwise().sum();
  const MatrixXd dz = VaeLayout::view(p, L.D1).transpose() * dg1;

  const int d = m.latent_dim();
  MatrixXd dout(2 * d, B);
  dout.topRows(d) = dz + (kl_weight * inv_b) * enc.mu;
  dout.bottomRows(d) = (0.5 * dz.cwiseProduct(eps).cwiseProduct(stdv)).array() +
                       (0.5 * kl_weight * inv_b) * (enc.logvar.array().exp() - 1.0);
  VaeLayout::view(g, L.W3) = dout * enc.h2.transpose();
  VaeLayout::view(g, L.b3) = dout.rowwise().sum();
  MatrixXd dh2 = VaeLayout::view(p, L.W3).transpose() * dout;
  activate_backward(m.activation(), enc.h2, dh2);
  VaeLayout::view(g, L.W2) = dh2 * enc.h1.transpose();
  VaeLayout::view(g, L.b2) = dh2.rowwise().sum();
  MatrixXd dh1 = VaeLayout::view(p, L.W2).transpose() * dh2;
  activate_backward(m.activation(), enc.h1, dh1);
  VaeLayout::view(g, L.b1) = dh1.rowwise().sum();
  auto dE = VaeLayout::view(g, L.E);
  for (int b = 0; b < B; ++b) {
    for (int t = 0; t < T; ++t) dE.col(t * V + batch[b].tokens[t]) += dh1.col(b);
  }
  return out;
}

VectorXd embed(const VaeModel& model, const PlanTokenSeq& tokens) {
  MatrixXd mu, lv;
  model.encode({tokens}, mu, lv);
  return mu.col(0);
}

JoinTree decode_latent(const VaeModel& model, const PlanCodec& codec, const Query& query, const VectorXd& z) {
  if (model.vocab_size() != codec.vocab().size() || model.seq_len() != codec.sequence_length() ||
      model.vocab_hash() != codec.vocab().hash()) {
    throw std::invalid_argument("vae model does not match the codec");
  }
  return codec.decode(query, model.decode_tokens(z));
}

double reconstruction_accuracy(const VaeModel& model, const std::vector<PlanTokenSeq>& seqs) {
  if (seqs.empty()) return 0.0;
  constexpr size_t kChunk = 512;
  size_t hits = 0;
  const int T = model.seq_len();
  const int V = model.vocab_size();
  for (size_t start = 0; start < seqs.size(); start += kChunk) {
    const std::vector<PlanTokenSeq> chunk(seqs.begin() + start, seqs.begin() + std::min(seqs.size(), start + kChunk));
    MatrixXd mu, lv;
    model.encode(chunk, mu, lv);
    const MatrixXd logits = model.decode_logits(mu);
    for (size_t b = 0; b < chunk.size(); ++b) {
      bool ok = true;
      for (int t = 0; t < T && ok; ++t) {
        Eigen::Index arg = 0;
        logits.col(b).segment(t * V, V).maxCoeff(&arg);
        ok = arg == chunk[b].tokens[t];
      }
      hits += ok;
    }
  }
  return static_cast<double>(hits) / seqs.size();
}

VaeTrainResult train_vae(const Corpus& corpus, const SymbolVocab& vocab, const VaeConfig& config, uint64_t seed) {
  return train_vae(corpus.split(false), corpus.split(true), vocab.size(), vocab.hash(), config, seed);
}

VaeTrainResult train_vae(const std::vector<PlanTokenSeq>& train, const std::vector<PlanTokenSeq>& test, int vocab_size,
                         uint64_t vocab_hash, const VaeConfig& config, uint64_t seed) {
  if (train.empty()) throw std::invalid_argument("train_vae: empty training corpus");
  if (config.steps < 0 || config.batch_size < 1 || !(config.learning_rate > 0)) {
    throw std::invalid_argument("train_vae: bad config");
  }
  const int T = static_cast<int>(train.front().tokens.size());
  VaeTrainResult res;
  res.model = VaeModel(T, vocab_size, config.latent_dim, config.hidden, config.activation, vocab_hash,
                       derive_seed(seed, 1));
  VaeModel& m = res.model;
  Rng rng(derive_seed(seed, 2));

  const int n = static_cast<int>(train.size());
  const int batch = std::min(config.batch_size, n);
  const int steps_per_epoch = std::max(1, n / batch);
  const int eval_every = config.eval_every > 0 ? config.eval_every : steps_per_epoch;
  const int anneal = static_cast<int>(config.kl_anneal_fraction * config.steps);
  std::vector<PlanTokenSeq> eval_train(train.begin(), train.begin() + std::min<size_t>(train.size(), config.eval_train_limit));

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  int cursor = n;

  VectorXd g, adam_m = VectorXd::Zero(m.param_count()), adam_v = VectorXd::Zero(m.param_count());
  constexpr double b1 = 0.9, b2 = 0.999, adam_eps = 1e-8;
  double b1t = 1.0, b2t = 1.0;
  double loss_acc = 0, rec_acc = 0, kl_acc = 0;
  int acc_n = 0;
  std::vector<PlanTokenSeq> xb(batch);
  MatrixXd eps(config.latent_dim, batch);

  for (int step = 1; step <= config.steps; ++step) {
    if (cursor + batch > n) {
      rng.shuffle(std::span<int>(order));
      cursor = 0;
    }
    for (int b = 0; b < batch; ++b) xb[b] = train[order[cursor + b]];
    cursor += batch;
    for (Eigen::Index j = 0; j < eps.cols(); ++j) {
      for (Eigen::Index i = 0; i < eps.rows(); ++i) eps(i, j) = rng.normal();
    }
    const double beta = config.kl_weight * (anneal > 0 ? std::min(1.0, static_cast<double>(step) / anneal) : 1.0);
    const VaeLoss l = vae_loss(m, xb, eps, beta, &g);
    if (!std::isfinite(l.loss) || !g.allFinite()) {
      std::ostringstream msg;
      msg << "vae training diverged at step " << step << ": loss=" << l.loss << " recon=" << l.reconstruction
          << " kl=" << l.kl << " beta=" << beta << " lr=" << config.learning_rate;
      throw VaeDivergedError(msg.str());
    }
    const double gn = g.norm();
    if (config.grad_clip > 0 && gn > config.grad_clip) g *= config.grad_clip / gn;
    b1t *= b1;
    b2t *= b2;
    adam_m = b1 * adam_m + (1 - b1) * g;
    adam_v = b2 * adam_v + (1 - b2) * g.cwiseAbs2();
    const double lr = config.learning_rate * std::sqrt(1 - b2t) / (1 - b1t);
    m.params().array() -= lr * adam_m.array() / (adam_v.array().sqrt() + adam_eps);

    loss_acc += l.loss;
    rec_acc += l.reconstruction;
    kl_acc += l.kl;
    ++acc_n;
    if (step % eval_every == 0 || step == config.steps) {
      VaeCurvePoint pt;
      pt.step = step;
      pt.epoch = (step - 1) / steps_per_epoch + 1;
      pt.loss = loss_acc / acc_n;
      pt.reconstruction = rec_acc / acc_n;
      pt.kl = kl_acc / acc_n;
      pt.kl_weight = beta;
      pt.train_accuracy = reconstruction_accuracy(m, eval_train);
      pt.test_accuracy = reconstruction_accuracy(m, test);
      res.curve.push_back(pt);
      loss_acc = rec_acc = kl_acc = 0;
      acc_n = 0;
    }
  }
  return res;
}

void write_curve_csv(std::ostream& out, const std::vector<VaeCurvePoint>& curve) {
  out << "step,epoch,loss,reconstruction,kl,kl_weight,train_accuracy,test_accuracy\n";
  out.precision(10);
  for (const auto& p : curve) {
    out << p.step << ',' << p.epoch << ',' << p.loss << ',' << p.reconstruction << ',' << p.kl << ',' << p.kl_weight
        << ',' << p.train_accuracy << ',' << p.test_accuracy << "\n";
  }
}

namespace {

constexpr char kMagic[8] = {'P', 'F', 'V', 'A', 'E', '0', '0', '1'};

template <class T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::invalid_argument("vae checkpoint is truncated");
  return v;
}

}  // namespace

void VaeModel::write(std::ostream& out) const {
  out.write(kMagic, sizeof kMagic);
  put<int32_t>(out, seq_len_);
  put<int32_t>(out, vocab_);
  put<int32_t>(out, latent_);
  put<int32_t>(out, hidden_);
  put<int32_t>(out, static_cast<int32_t>(act_));
  put<uint64_t>(out, vocab_hash_);
  put<uint64_t>(out, seed_);
  put<int64_t>(out, params_.size());
  out.write(reinterpret_cast<const char*>(params_.data()), params_.size() * sizeof(double));
}

VaeModel VaeModel::read(std::istream& in) {
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw std::invalid_argument("not a vae checkpoint");
  VaeModel m;
  m.seq_len_ = get<int32_t>(in);
  m.vocab_ = get<int32_t>(in);
  m.latent_ = get<int32_t>(in);
  m.hidden_ = get<int32_t>(in);
  const auto act = get<int32_t>(in);
  if (act != 0 && act != 1) throw std::invalid_argument("vae checkpoint: unknown activation");
  m.act_ = static_cast<Activation>(act);
  m.vocab_hash_ = get<uint64_t>(in);
  m.seed_ = get<uint64_t>(in);
  const auto n = get<int64_t>(in);
  if (m.seq_len_ < 1 || m.vocab_ < 2 || m.latent_ < 1 || m.hidden_ < 1 || n != VaeLayout(m).total) {
    throw std::invalid_argument("vae checkpoint: inconsistent dimensions");
  }
  m.params_.resize(n);
  in.read(reinterpret_cast<char*>(m.params_.data()), n * sizeof(double));
  if (!in) throw std::invalid_argument("vae checkpoint is truncated");
  if (!m.params_.allFinite()) throw std::invalid_argument("vae checkpoint has non-finite parameters");
  return m;
}

void VaeModel::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  write(out);
}

VaeModel VaeModel::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot open vae checkpoint " + path);
  return read(in);
}

}  // namespace planforge
