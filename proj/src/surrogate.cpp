#include "planforge/surrogate.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <iomanip>
#include <istream>
#include <map>
#include <mutex>
#include <numbers>
#include <ostream>
#include <sstream>

#include "planforge/hash.hpp"
#include "planforge/random.hpp"

namespace planforge {

using Eigen::MatrixXd;
using Eigen::VectorXd;

Observation Observation::completed(VectorXd x, double latency_s, double tau_s) {
  if (!(latency_s > 0.0)) throw std::invalid_argument("observation latency must be positive");
  if (latency_s > tau_s) throw std::invalid_argument("completed observation above its threshold");
  return {std::move(x), latency_s, false, tau_s};
}

Observation Observation::timed_out(VectorXd x, double tau_s) {
  if (!(tau_s > 0.0)) throw std::invalid_argument("timeout must be positive");
  return {std::move(x), tau_s, true, tau_s};
}

const GaussHermite& gauss_hermite(int n) {
  if (n < 1 || n > 200) throw std::invalid_argument("gauss_hermite: node count must be in [1, 200]");
  static std::mutex mu;
  static std::map<int, GaussHermite> cache;
  std::lock_guard lock(mu);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  MatrixXd J = MatrixXd::Zero(n, n);
  for (int k = 1; k < n; ++k) J(k, k - 1) = J(k - 1, k) = std::sqrt(k / 2.0);
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(J);
  GaussHermite gh;
  for (int k = 0; k < n; ++k) {
    gh.nodes.push_back(es.eigenvalues()(k));
    gh.weights.push_back(std::sqrt(std::numbers::pi) * es.eigenvectors()(0, k) * es.eigenvectors()(0, k));
  }
  return cache.emplace(n, std::move(gh)).first->second;
}

namespace {

constexpr double kLogSqrt2Pi = 0.91893853320467274178;

double log_normal_pdf(double u) { return -0.5 * u * u - kLogSqrt2Pi; }

// Asymptotic series of Phi(u) / phi(u) * (-u) for u -> -inf.
double tail_series(double u) {
  const double r = 1.0 / (u * u);
  return 1.0 - r * (1.0 - 3.0 * r * (1.0 - 5.0 * r * (1.0 - 7.0 * r)));
}

}  // namespace

double log_normal_cdf(double u) {
  if (u > -30.0) return std::log(0.5 * std::erfc(-u / std::numbers::sqrt2));
  return log_normal_pdf(u) - std::log(-u) + std::log(tail_series(u));
}

double inverse_mills_ratio(double u) {
  if (u > -30.0) return std::exp(log_normal_pdf(u) - log_normal_cdf(u));
  return -u / tail_series(u);
}

double TargetTransform::forward(double seconds) const { return (std::log(seconds) - shift) / scale; }
double TargetTransform::inverse(double z) const { return std::exp(shift + scale * z); }

TargetTransform TargetTransform::from(const std::vector<Observation>& obs) {
  std::vector<double> logs;
  for (const auto& o : obs) {
    if (!o.censored) logs.push_back(std::log(o.y_raw));
  }
  TargetTransform t;
  if (logs.empty()) {
    for (const auto& o : obs) logs.push_back(std::log(o.tau_s));
    double s = 0;
    for (double v : logs) s += v;
    t.shift = s / logs.size();
    return t;
  }
  double s = 0;
  for (double v : logs) s += v;
  t.shift = s / logs.size();
  if (logs.size() >= 2) {
    double ss = 0;
    for (double v : logs) ss += (v - t.shift) * (v - t.shift);
    t.scale = std::max(0.1, std::sqrt(ss / (logs.size() - 1)));
  }
  return t;
}

double SurrogateState::signal_variance() const { return std::exp(log_signal_variance); }
double SurrogateState::noise_variance() const { return std::exp(log_noise_variance); }

double matern52(const VectorXd& a, const VectorXd& b, const VectorXd& lengthscale, double signal_variance) {
  const double r = ((a - b).array() / lengthscale.array()).matrix().norm();
  const double s5r = std::sqrt(5.0) * r;
  return signal_variance * (1.0 + s5r + 5.0 * r * r / 3.0) * std::exp(-s5r);
}

namespace {

// Squared lengthscale-scaled distances between the rows of P and of Q.
MatrixXd scaled_sqdist(const MatrixXd& P, const MatrixXd& Q, const VectorXd& ell) {
  const VectorXd inv = ell.cwiseInverse();
  const MatrixXd Ps = P * inv.asDiagonal();
  const MatrixXd Qs = Q * inv.asDiagonal();
  const VectorXd pn = Ps.rowwise().squaredNorm();
  const VectorXd qn = Qs.rowwise().squaredNorm();
  MatrixXd D = (-2.0 * Ps * Qs.transpose()).colwise() + pn;
  D.rowwise() += qn.transpose();
  return D;
}

// Kernel between the rows of P and the rows of Q.
MatrixXd kernel_matrix(const MatrixXd& P, const MatrixXd& Q, const VectorXd& ell, double s2) {
  const double s5 = std::sqrt(5.0);
  return scaled_sqdist(P, Q, ell).unaryExpr([&](double d2) {
    const double r = std::sqrt(std::max(d2, 0.0));
    return s2 * (1.0 + s5 * r + 5.0 * r * r / 3.0) * std::exp(-s5 * r);
  });
}

MatrixXd kuu_of(const SurrogateState& s) {
  MatrixXd K = kernel_matrix(s.inducing, s.inducing, s.log_lengthscale.array().exp(), s.signal_variance());
  K.diagonal().array() += s.signal_variance() * s.jitter;
  return K;
}

MatrixXd stack_inputs(const std::vector<Observation>& obs, int dim) {
  MatrixXd X(obs.size(), dim);
  for (size_t i = 0; i < obs.size(); ++i) {
    if (obs[i].x.size() != dim) throw std::invalid_argument("observation dimension mismatch");
    X.row(i) = obs[i].x.transpose();
  }
  return X;
}

struct SiteGrad {
  double value = 0.0;
  double g_mu = 0.0;
  double g_v = 0.0;
  double g_log_noise = 0.0;
};

SiteGrad gaussian_site(double y, double mu, double v, double noise) {
  const double r2 = (y - mu) * (y - mu) + v;
  SiteGrad g;
  g.value = -0.5 * std::log(2.0 * std::numbers::pi * noise) - r2 / (2.0 * noise);
  g.g_mu = (y - mu) / noise;
  g.g_v = -0.5 / noise;
  g.g_log_noise = -0.5 + r2 / (2.0 * noise);
  return g;
}

SiteGrad censored_site(double tau, double mu, double v, double noise, const GaussHermite& gh) {
  const double sigma = std::sqrt(noise);
  const double sv = std::sqrt(2.0 * std::max(v, 0.0));
  const double inv_sqrt_pi = 1.0 / std::sqrt(std::numbers::pi);
  SiteGrad g;
  double gv_num = 0.0;
  for (size_t k = 0; k < gh.nodes.size(); ++k) {
    const double w = gh.weights[k] * inv_sqrt_pi;
    const double u = (mu + sv * gh.nodes[k] - tau) / sigma;
    const double lam = inverse_mills_ratio(u);
    g.value += w * log_normal_cdf(u);
    g.g_mu += w * lam / sigma;
    gv_num += w * lam / sigma * gh.nodes[k];
    g.g_log_noise += w * (-0.5 * lam * u);
  }
  if (sv > 1e-150) {
    g.g_v = gv_num / sv;
  } else {
    const double u = (mu - tau) / sigma;
    const double lam = inverse_mills_ratio(u);
    g.g_v = -0.5 * lam * (u + lam) / noise;
  }
  return g;
}

struct Prepared {
  MatrixXd X;   // N x d
  VectorXd y;   // standardized targets
  std::vector<bool> censored;
  MatrixXd Kuf;  // M x N
  MatrixXd A;    // R^-1 Kuf
};

Prepared prepare(const SurrogateState& s, const std::vector<Observation>& obs) {
  Prepared p;
  p.X = stack_inputs(obs, s.dim());
  p.y.resize(obs.size());
  for (size_t i = 0; i < obs.size(); ++i) {
    p.y(i) = standardized_target(s, obs[i]);
    p.censored.push_back(obs[i].censored);
  }
  p.Kuf = kernel_matrix(s.inducing, p.X, s.log_lengthscale.array().exp(), s.signal_variance());
  p.A = s.chol_kuu.triangularView<Eigen::Lower>().solve(p.Kuf);
  return p;
}

struct Moments {
  VectorXd mu, v;
  MatrixXd SA;
};

Moments moments(const SurrogateState& s, const MatrixXd& A) {
  Moments mo;
  mo.SA = s.S * A;
  mo.mu = A.transpose() * s.m;
  mo.v = (s.signal_variance() - A.colwise().squaredNorm().array() + A.cwiseProduct(mo.SA).colwise().sum().array())
             .matrix()
             .transpose();
  mo.v = mo.v.cwiseMax(0.0);
  return mo;
}

std::vector<SiteGrad> site_grads(const SurrogateState& s, const Prepared& p, const Moments& mo) {
  const auto& gh = gauss_hermite(s.quadrature_nodes);
  const double noise = s.noise_variance();
  std::vector<SiteGrad> out(p.y.size());
  for (Eigen::Index i = 0; i < p.y.size(); ++i) {
    out[i] = p.censored[i] ? censored_site(p.y(i), mo.mu(i), mo.v(i), noise, gh)
                           : gaussian_site(p.y(i), mo.mu(i), mo.v(i), noise);
  }
  return out;
}

double kl_whitened(const SurrogateState& s, const Eigen::LLT<MatrixXd>& llt) {
  const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  return 0.5 * (s.S.trace() + s.m.squaredNorm() - s.m.size() - logdet);
}

Eigen::LLT<MatrixXd> chol_s(const SurrogateState& s) {
  Eigen::LLT<MatrixXd> llt(s.S);
  if (llt.info() != Eigen::Success) throw SurrogateError("variational covariance is not positive definite");
  return llt;
}

std::string hyper_dump(const SurrogateState& s) {
  std::ostringstream o;
  o << "lengthscales=[" << s.log_lengthscale.array().exp().transpose() << "] signal_variance=" << s.signal_variance()
    << " noise_variance=" << s.noise_variance();
  return o.str();
}

// Hyperparameter part of the ELBO gradient: d/dlog ell (d entries), d/dlog s2, d/dlog noise.
VectorXd hyper_gradient(const SurrogateState& s, const Prepared& p, const Moments& mo,
                        const std::vector<SiteGrad>& g) {
  const int N = static_cast<int>(p.y.size());
  const int d = s.dim();
  const double s2 = s.signal_variance();
  VectorXd gmu(N), gv(N);
  double g_noise = 0.0;
  for (int i = 0; i < N; ++i) {
    gmu(i) = g[i].g_mu;
    gv(i) = g[i].g_v;
    g_noise += g[i].g_log_noise;
  }
  const MatrixXd Abar = s.m * gmu.transpose() + 2.0 * (mo.SA - p.A) * gv.asDiagonal();
  const auto R = s.chol_kuu.triangularView<Eigen::Lower>();
  const MatrixXd Kufbar = R.transpose().solve(Abar);
  MatrixXd Rbar = -Kufbar * p.A.transpose();
  Rbar = Rbar.triangularView<Eigen::Lower>();
  MatrixXd P = s.chol_kuu.transpose() * Rbar;
  P = P.triangularView<Eigen::Lower>();
  P.diagonal() *= 0.5;
  MatrixXd Kbar = R.transpose().solve(P);
  Kbar = R.transpose().solve(Kbar.transpose()).transpose();
  const MatrixXd Ks = 0.5 * (Kbar + Kbar.transpose());

  const VectorXd ell = s.log_lengthscale.array().exp();
  const VectorXd inv2 = ell.array().square().inverse();
  VectorXd out = VectorXd::Zero(d + 2);
  // d k / d log ell_j = c(r) * (p_j - q_j)^2 / ell_j^2 with
  // c(r) = 5/3 s2 (1 + sqrt5 r) e^{-sqrt5 r}; the squared difference is
  // expanded so every sum is a matrix product.
  auto accumulate = [&](const MatrixXd& P1, const MatrixXd& P2, const MatrixXd& W) {
    const MatrixXd C = W.cwiseProduct(scaled_sqdist(P1, P2, ell).unaryExpr([&](double d2) {
      const double r = std::sqrt(std::max(d2, 0.0));
      return (5.0 / 3.0) * s2 * (1.0 + std::sqrt(5.0) * r) * std::exp(-std::sqrt(5.0) * r);
    }));
    const VectorXd rows = C.rowwise().sum();
    const VectorXd cols = C.colwise().sum().transpose();
    const MatrixXd CQ = C * P2;
    const VectorXd t = (P1.cwiseAbs2().transpose() * rows) - 2.0 * P1.cwiseProduct(CQ).colwise().sum().transpose() +
                       P2.cwiseAbs2().transpose() * cols;
    out.head(d) += t.cwiseProduct(inv2);
  };
  accumulate(s.inducing, p.X, Kufbar);
  accumulate(s.inducing, s.inducing, Ks);
  out(d) = Kufbar.cwiseProduct(p.Kuf).sum() + Ks.cwiseProduct(kuu_of(s)).sum() + s2 * gv.sum();
  out(d + 1) = g_noise;
  return out;
}

}  // namespace

void SurrogateState::refresh() {
  const MatrixXd K = kuu_of(*this);
  Eigen::LLT<MatrixXd> llt(K);
  if (llt.info() != Eigen::Success) throw SurrogateError("Kuu is not positive definite: " + hyper_dump(*this));
  chol_kuu = llt.matrixL();
}

uint64_t SurrogateState::hash() const {
  uint64_t h = kFnvOffset;
  auto mix = [&](const double* data, Eigen::Index n) {
    h = fnv1a(std::string_view(reinterpret_cast<const char*>(data), n * sizeof(double)), h);
  };
  mix(inducing.data(), inducing.size());
  mix(m.data(), m.size());
  mix(S.data(), S.size());
  mix(log_lengthscale.data(), log_lengthscale.size());
  mix(&log_signal_variance, 1);
  mix(&log_noise_variance, 1);
  mix(&transform.shift, 1);
  mix(&transform.scale, 1);
  return h;
}

double standardized_target(const SurrogateState& state, const Observation& o) {
  return state.transform.forward(o.censored ? o.tau_s : o.y_raw);
}

VectorXd pack_elbo_params(const SurrogateState& s) {
  const int M = s.inducing_count();
  const int d = s.dim();
  const MatrixXd L = chol_s(s).matrixL();
  VectorXd out(M + M * (M + 1) / 2 + d + 2);
  Eigen::Index k = 0;
  out.segment(k, M) = s.m;
  k += M;
  for (int j = 0; j < M; ++j) {
    for (int i = j; i < M; ++i) out(k++) = L(i, j);
  }
  out.segment(k, d) = s.log_lengthscale;
  k += d;
  out(k++) = s.log_signal_variance;
  out(k++) = s.log_noise_variance;
  return out;
}

SurrogateState unpack_elbo_params(const SurrogateState& like, const VectorXd& flat) {
  SurrogateState s = like;
  const int M = s.inducing_count();
  const int d = s.dim();
  if (flat.size() != M + M * (M + 1) / 2 + d + 2) throw std::invalid_argument("unpack_elbo_params: size mismatch");
  Eigen::Index k = 0;
  s.m = flat.segment(k, M);
  k += M;
  MatrixXd L = MatrixXd::Zero(M, M);
  for (int j = 0; j < M; ++j) {
    for (int i = j; i < M; ++i) L(i, j) = flat(k++);
  }
  s.S = L * L.transpose();
  s.log_lengthscale = flat.segment(k, d);
  k += d;
  s.log_signal_variance = flat(k++);
  s.log_noise_variance = flat(k++);
  s.refresh();
  return s;
}

double expected_log_survival(double mu, double v, double tau, double sigma, int nodes) {
  return censored_site(tau, mu, v, sigma * sigma, gauss_hermite(nodes)).value;
}

ElboTerms censored_elbo_terms(const SurrogateState& s, const std::vector<Observation>& obs) {
  if (obs.empty()) throw std::invalid_argument("censored_elbo: no observations");
  const Prepared p = prepare(s, obs);
  const Moments mo = moments(s, p.A);
  const auto g = site_grads(s, p, mo);
  ElboTerms t;
  for (size_t i = 0; i < g.size(); ++i) (p.censored[i] ? t.censored : t.uncensored) += g[i].value;
  t.kl = kl_whitened(s, chol_s(s));
  if (!std::isfinite(t.elbo())) throw SurrogateError("non-finite ELBO: " + hyper_dump(s));
  return t;
}

double censored_elbo(const SurrogateState& s, const std::vector<Observation>& obs, VectorXd* grad) {
  if (!grad) return censored_elbo_terms(s, obs).elbo();
  if (obs.empty()) throw std::invalid_argument("censored_elbo: no observations");
  const Prepared p = prepare(s, obs);
  const Moments mo = moments(s, p.A);
  const auto g = site_grads(s, p, mo);
  const auto llt = chol_s(s);
  double value = -kl_whitened(s, llt);
  for (const auto& gi : g) value += gi.value;
  if (!std::isfinite(value)) throw SurrogateError("non-finite ELBO: " + hyper_dump(s));

  const int M = s.inducing_count();
  const int N = static_cast<int>(obs.size());
  const int d = s.dim();
  VectorXd gmu(N), gv(N);
  for (int i = 0; i < N; ++i) {
    gmu(i) = g[i].g_mu;
    gv(i) = g[i].g_v;
  }
  grad->resize(M + M * (M + 1) / 2 + d + 2);
  Eigen::Index k = 0;
  grad->segment(k, M) = p.A * gmu - s.m;
  k += M;
  const MatrixXd L = llt.matrixL();
  MatrixXd G = p.A * gv.asDiagonal() * p.A.transpose();
  G.diagonal().array() -= 0.5;
  MatrixXd dL = 2.0 * G * L;
  for (int j = 0; j < M; ++j) {
    dL(j, j) += 1.0 / L(j, j);
    for (int i = j; i < M; ++i) (*grad)(k++) = dL(i, j);
  }
  grad->segment(k, d + 2) = hyper_gradient(s, p, mo, g);
  return value;
}

namespace {

MatrixXd choose_inducing(const MatrixXd& X, int max_points, uint64_t seed, int iterations, const MatrixXd* start) {
  std::vector<Eigen::Index> unique;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    bool dup = false;
    for (auto j : unique) {
      if (X.row(i) == X.row(j)) {
        dup = true;
        break;
      }
    }
    if (!dup) unique.push_back(i);
    if (static_cast<int>(unique.size()) > max_points) break;
  }
  if (static_cast<int>(unique.size()) <= max_points) {
    MatrixXd Z(unique.size(), X.cols());
    for (size_t k = 0; k < unique.size(); ++k) Z.row(k) = X.row(unique[k]);
    return Z;
  }
  // k-means++ seeding (or the previous centers) followed by Lloyd iterations.
  const Eigen::Index n = X.rows();
  MatrixXd Z(max_points, X.cols());
  if (start && start->rows() == max_points && start->cols() == X.cols()) {
    Z = *start;
  } else {
    Rng rng(seed);
    Z.row(0) = X.row(rng.uniform_int(n));
    VectorXd d2 = (X.rowwise() - Z.row(0)).rowwise().squaredNorm();
    for (int c = 1; c < max_points; ++c) {
      const double total = d2.sum();
      Eigen::Index pick = 0;
      if (total > 0) {
        double r = rng.uniform() * total;
        for (pick = 0; pick < n - 1; ++pick) {
          r -= d2(pick);
          if (r < 0) break;
        }
      } else {
        pick = rng.uniform_int(n);
      }
      Z.row(c) = X.row(pick);
      d2 = d2.cwiseMin((X.rowwise() - Z.row(c)).rowwise().squaredNorm());
    }
  }
  const VectorXd xn = X.rowwise().squaredNorm();
  std::vector<int> assign(n, -1);
  for (int it = 0; it < iterations; ++it) {
    MatrixXd D = (-2.0 * X * Z.transpose()).colwise() + xn;
    D.rowwise() += Z.rowwise().squaredNorm().transpose();
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index best = 0;
      D.row(i).minCoeff(&best);
      if (assign[i] != best) {
        assign[i] = static_cast<int>(best);
        changed = true;
      }
    }
    if (!changed) break;
    MatrixXd sum = MatrixXd::Zero(max_points, X.cols());
    VectorXd count = VectorXd::Zero(max_points);
    for (Eigen::Index i = 0; i < n; ++i) {
      sum.row(assign[i]) += X.row(i);
      count(assign[i]) += 1;
    }
    for (int c = 0; c < max_points; ++c) {
      if (count(c) > 0) Z.row(c) = sum.row(c) / count(c);
    }
  }
  return Z;
}

// q from the sites under the current whitening.
void set_q_from_sites(SurrogateState& s, const MatrixXd& A) {
  const int M = s.inducing_count();
  const Eigen::Index N = A.cols();
  VectorXd beta(N), gamma(N);
  for (Eigen::Index i = 0; i < N; ++i) {
    beta(i) = s.sites[i].beta;
    gamma(i) = s.sites[i].gamma;
  }
  MatrixXd Lambda = A * beta.asDiagonal() * A.transpose();
  Lambda.diagonal().array() += 1.0;
  Eigen::LLT<MatrixXd> llt(Lambda);
  if (llt.info() != Eigen::Success) throw SurrogateError("site precision is not positive definite: " + hyper_dump(s));
  s.S = llt.solve(MatrixXd::Identity(M, M));
  s.S = 0.5 * (s.S + s.S.transpose());
  s.m = llt.solve(A * gamma);
}

void clamp_hypers(SurrogateState& s, const SurrogateConfig& c) {
  s.log_lengthscale =
      s.log_lengthscale.cwiseMax(std::log(c.min_lengthscale)).cwiseMin(std::log(c.max_lengthscale));
  s.log_signal_variance =
      std::clamp(s.log_signal_variance, std::log(c.min_signal_variance), std::log(c.max_signal_variance));
  s.log_noise_variance =
      std::clamp(s.log_noise_variance, std::log(c.min_noise_variance), std::log(c.max_noise_variance));
}

}  // namespace

FitResult fit_surrogate(const std::vector<Observation>& obs, const SurrogateConfig& config, uint64_t seed,
                        const SurrogateState* warm) {
  if (obs.empty()) throw std::invalid_argument("fit: no observations");
  const int d = static_cast<int>(obs.front().x.size());
  if (d < 1) throw std::invalid_argument("fit: empty inputs");
  for (const auto& o : obs) {
    if (o.x.size() != d || !o.x.allFinite()) throw std::invalid_argument("fit: bad observation input");
    if (!(o.y_raw > 0.0) || !(o.tau_s > 0.0)) throw std::invalid_argument("fit: observations must be positive");
  }
  if (config.inducing_points < 1 || config.quadrature_nodes < 1) throw std::invalid_argument("fit: bad config");

  FitResult res;
  SurrogateState& s = res.state;
  s.jitter = config.jitter;
  s.quadrature_nodes = config.quadrature_nodes;
  s.transform = TargetTransform::from(obs);
  const MatrixXd X = stack_inputs(obs, d);
  s.inducing = choose_inducing(X, config.inducing_points, derive_seed(seed, 17), config.kmeans_iterations,
                               warm && warm->dim() == d ? &warm->inducing : nullptr);
  if (warm && warm->dim() == d) {
    s.log_lengthscale = warm->log_lengthscale;
    s.log_signal_variance = warm->log_signal_variance;
    s.log_noise_variance = warm->log_noise_variance;
  } else {
    s.log_lengthscale = VectorXd::Constant(d, std::log(config.init_lengthscale));
    s.log_signal_variance = std::log(config.init_signal_variance);
    s.log_noise_variance = std::log(config.init_noise_variance);
  }
  clamp_hypers(s, config);
  s.sites.assign(obs.size(), Site{});
  if (warm && warm->dim() == d) {
    // Carry censored sites over as pseudo-observations gamma / beta with
    // precision beta, re-expressed in the new target units.
    const double ratio = warm->transform.scale / s.transform.scale;
    const double offset = (warm->transform.shift - s.transform.shift) / s.transform.scale;
    for (size_t i = 0; i < obs.size() && i < warm->sites.size(); ++i) {
      const Site& w = warm->sites[i];
      if (!obs[i].censored || !(w.beta > 0.0)) continue;
      const double beta = w.beta / (ratio * ratio);
      s.sites[i] = {beta, beta * (w.gamma / w.beta * ratio + offset)};
    }
  }

  const int iterations = warm ? config.warm_fit_iterations : config.fit_iterations;
  const double rho = config.site_damping;
  VectorXd adam_m = VectorXd::Zero(d + 2), adam_v = VectorXd::Zero(d + 2);
  double b1t = 1.0, b2t = 1.0;
  const auto& gh = gauss_hermite(s.quadrature_nodes);

  for (int it = 0; it <= iterations; ++it) {
    s.refresh();
    const Prepared p = prepare(s, obs);
    const double noise = s.noise_variance();
    for (size_t i = 0; i < obs.size(); ++i) {
      if (!p.censored[i]) s.sites[i] = {1.0 / noise, p.y(i) / noise};
    }
    set_q_from_sites(s, p.A);
    Moments mo = moments(s, p.A);
    // Damped natural-gradient step on the censored sites.
    bool any_censored = false;
    for (size_t i = 0; i < obs.size(); ++i) {
      if (!p.censored[i]) continue;
      any_censored = true;
      const SiteGrad g = censored_site(p.y(i), mo.mu(i), mo.v(i), noise, gh);
      Site& site = s.sites[i];
      site.beta = (1 - rho) * site.beta + rho * std::max(0.0, -2.0 * g.g_v);
      site.gamma = (1 - rho) * site.gamma + rho * (g.g_mu - 2.0 * g.g_v * mo.mu(i));
    }
    if (any_censored) {
      set_q_from_sites(s, p.A);
      mo = moments(s, p.A);
    }
    const auto g = site_grads(s, p, mo);
    double elbo = -kl_whitened(s, chol_s(s));
    for (const auto& gi : g) elbo += gi.value;
    if (!std::isfinite(elbo)) throw SurrogateError("fit diverged at iteration " + std::to_string(it) + ": " + hyper_dump(s));
    res.trace.push_back({it, elbo});
    if (it == iterations) break;
    if (!config.learn_hyperparameters) continue;
    const VectorXd hg = hyper_gradient(s, p, mo, g);
    if (!hg.allFinite()) throw SurrogateError("non-finite hyperparameter gradient: " + hyper_dump(s));
    constexpr double b1 = 0.9, b2 = 0.999;
    b1t *= b1;
    b2t *= b2;
    adam_m = b1 * adam_m + (1 - b1) * hg;
    adam_v = b2 * adam_v + (1 - b2) * hg.cwiseAbs2();
    const double lr = config.hyper_learning_rate * std::sqrt(1 - b2t) / (1 - b1t);
    const VectorXd step = lr * adam_m.array() / (adam_v.array().sqrt() + 1e-8);
    s.log_lengthscale += step.head(d);
    s.log_signal_variance += step(d);
    s.log_noise_variance += step(d + 1);
    clamp_hypers(s, config);
  }
  return res;
}

SurrogateState fit(const std::vector<Observation>& obs, const SurrogateConfig& config, uint64_t seed,
                   const SurrogateState* warm) {
  return fit_surrogate(obs, config, seed, warm).state;
}

PosteriorMoments posterior(const SurrogateState& s, const VectorXd& x) {
  if (x.size() != s.dim()) throw std::invalid_argument("posterior: dimension mismatch");
  const MatrixXd kx = kernel_matrix(s.inducing, x.transpose(), s.log_lengthscale.array().exp(), s.signal_variance());
  const VectorXd a = s.chol_kuu.triangularView<Eigen::Lower>().solve(kx.col(0));
  const double var = s.signal_variance() - a.squaredNorm() + a.dot(s.S * a);
  return {a.dot(s.m), std::sqrt(std::max(var, 0.0))};
}

VectorXd sample_function(const SurrogateState& s, const MatrixXd& xs, uint64_t seed) {
  if (xs.rows() < 1 || xs.cols() != s.dim()) throw std::invalid_argument("sample_function: bad candidate set");
  const VectorXd ell = s.log_lengthscale.array().exp();
  const double s2 = s.signal_variance();
  const MatrixXd Kuc = kernel_matrix(s.inducing, xs, ell, s2);
  const MatrixXd A = s.chol_kuu.triangularView<Eigen::Lower>().solve(Kuc);
  const VectorXd mean = A.transpose() * s.m;
  MatrixXd cov = kernel_matrix(xs, xs, ell, s2) - A.transpose() * A + A.transpose() * (s.S * A);
  cov = 0.5 * (cov + cov.transpose());
  const Eigen::Index n = xs.rows();
  Rng rng(seed);
  VectorXd eps(n);
  for (Eigen::Index i = 0; i < n; ++i) eps(i) = rng.normal();
  double jitter = 1e-8 * s2;
  for (int attempt = 0; attempt < 8; ++attempt) {
    MatrixXd c = cov;
    c.diagonal().array() += jitter;
    Eigen::LLT<MatrixXd> llt(c);
    if (llt.info() == Eigen::Success) return mean + llt.matrixL() * eps;
    jitter *= 10.0;
  }
  throw SurrogateError("sample_function: candidate covariance factorization failed");
}

SurrogateState fantasize(const SurrogateState& state, const VectorXd& x, double tau_s, int steps, double damping) {
  if (x.size() != state.dim()) throw std::invalid_argument("fantasize: dimension mismatch");
  if (!(tau_s > 0.0)) throw std::invalid_argument("fantasize: timeout must be positive");
  SurrogateState s = state;
  const MatrixXd kx = kernel_matrix(s.inducing, x.transpose(), s.log_lengthscale.array().exp(), s.signal_variance());
  const VectorXd a = s.chol_kuu.triangularView<Eigen::Lower>().solve(kx.col(0));
  const VectorXd Sa = s.S * a;
  const double c = a.dot(Sa);
  const double p = a.dot(s.m);
  const double base_var = s.signal_variance() - a.squaredNorm();
  const double tau = s.transform.forward(tau_s);
  const double noise = s.noise_variance();
  const auto& gh = gauss_hermite(s.quadrature_nodes);
  double beta = 0.0, gamma = 0.0;
  for (int k = 0; k < steps; ++k) {
    const double mu = (p + gamma * c) / (1.0 + beta * c);
    const double v = std::max(0.0, base_var + c / (1.0 + beta * c));
    const SiteGrad g = censored_site(tau, mu, v, noise, gh);
    beta = (1 - damping) * beta + damping * std::max(0.0, -2.0 * g.g_v);
    gamma = (1 - damping) * gamma + damping * (g.g_mu - 2.0 * g.g_v * mu);
  }
  const double denom = 1.0 + beta * c;
  s.m += Sa * ((gamma - beta * p) / denom);
  s.S -= (beta / denom) * Sa * Sa.transpose();
  return s;
}

void write_fit_trace_csv(std::ostream& out, const std::vector<FitTraceRow>& trace) {
  out << "iteration,elbo\n";
  out << std::setprecision(12);
  for (const auto& r : trace) out << r.iteration << ',' << r.elbo << "\n";
}

namespace {

void write_matrix(std::ostream& out, const char* name, const MatrixXd& M) {
  out << name << ' ' << M.rows() << ' ' << M.cols();
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    for (Eigen::Index j = 0; j < M.cols(); ++j) out << ' ' << M(i, j);
  }
  out << "\n";
}

MatrixXd read_matrix(std::istream& in, const char* name) {
  std::string tag;
  Eigen::Index r = 0, c = 0;
  in >> tag >> r >> c;
  if (!in || tag != name || r < 0 || c < 0) throw std::invalid_argument(std::string("surrogate state: expected ") + name);
  MatrixXd M(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) in >> M(i, j);
  }
  if (!in) throw std::invalid_argument(std::string("surrogate state: truncated ") + name);
  return M;
}

}  // namespace

void SurrogateState::write(std::ostream& out) const {
  out << "planforge-surrogate 1\n" << std::setprecision(17);
  out << "hyper " << log_signal_variance << ' ' << log_noise_variance << ' ' << jitter << ' ' << quadrature_nodes
      << "\n";
  out << "transform " << transform.shift << ' ' << transform.scale << "\n";
  write_matrix(out, "log_lengthscale", log_lengthscale);
  write_matrix(out, "inducing", inducing);
  write_matrix(out, "m", m);
  write_matrix(out, "S", S);
  MatrixXd sites_m(sites.size(), 2);
  for (size_t i = 0; i < sites.size(); ++i) sites_m.row(i) << sites[i].beta, sites[i].gamma;
  write_matrix(out, "sites", sites_m);
}

SurrogateState SurrogateState::read(std::istream& in) {
  std::string line, tag;
  std::getline(in, line);
  if (line != "planforge-surrogate 1") throw std::invalid_argument("not a surrogate state");
  SurrogateState s;
  in >> tag >> s.log_signal_variance >> s.log_noise_variance >> s.jitter >> s.quadrature_nodes;
  if (!in || tag != "hyper") throw std::invalid_argument("surrogate state: bad hyper record");
  in >> tag >> s.transform.shift >> s.transform.scale;
  if (!in || tag != "transform") throw std::invalid_argument("surrogate state: bad transform record");
  s.log_lengthscale = read_matrix(in, "log_lengthscale");
  s.inducing = read_matrix(in, "inducing");
  s.m = read_matrix(in, "m");
  s.S = read_matrix(in, "S");
  const MatrixXd sites_m = read_matrix(in, "sites");
  for (Eigen::Index i = 0; i < sites_m.rows(); ++i) s.sites.push_back({sites_m(i, 0), sites_m(i, 1)});
  const auto M = s.inducing.rows();
  if (s.log_lengthscale.size() != s.inducing.cols() || s.m.size() != M || s.S.rows() != M || s.S.cols() != M) {
    throw std::invalid_argument("surrogate state: inconsistent dimensions");
  }
  s.refresh();
  return s;
}

}  // namespace planforge
