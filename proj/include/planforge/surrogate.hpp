#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace planforge {

/// One executed plan. Censored observations carry y_raw == tau_s.
struct Observation {
  Eigen::VectorXd x;
  double y_raw = 0.0;
  bool censored = false;
  double tau_s = 0.0;

  static Observation completed(Eigen::VectorXd x, double latency_s, double tau_s);
  static Observation timed_out(Eigen::VectorXd x, double tau_s);
};

class SurrogateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Gauss-Hermite rule for the weight e^{-x^2} (Golub-Welsch).
struct GaussHermite {
  std::vector<double> nodes;
  std::vector<double> weights;
};
const GaussHermite& gauss_hermite(int n);

/// log Phi(u), accurate far into the lower tail.
double log_normal_cdf(double u);
/// phi(u) / Phi(u).
double inverse_mills_ratio(double u);

/// Seconds <-> standardized log-latency.
struct TargetTransform {
  double shift = 0.0;
  double scale = 1.0;

  double forward(double seconds) const;
  double inverse(double z) const;
  static TargetTransform from(const std::vector<Observation>& obs);
};

struct SurrogateConfig {
  int inducing_points = 64;
  int quadrature_nodes = 20;
  int fit_iterations = 100;
  /// Iterations when warm-started from a previous state.
  int warm_fit_iterations = 10;
  double site_damping = 0.5;
  double hyper_learning_rate = 0.05;
  bool learn_hyperparameters = true;
  int fantasize_steps = 25;
  double fantasize_damping = 0.5;
  double init_lengthscale = 1.0;
  double init_signal_variance = 1.0;
  double init_noise_variance = 0.01;
  double jitter = 1e-5;
  int kmeans_iterations = 15;
  double min_lengthscale = 0.02;
  double max_lengthscale = 50.0;
  double min_noise_variance = 1e-4;
  double max_noise_variance = 1.0;
  double min_signal_variance = 0.02;
  double max_signal_variance = 20.0;
};

/// Per-observation Gaussian site in the whitened space: precision beta and
/// linear term gamma. q is always N(Lambda^-1 eta, Lambda^-1) with
/// Lambda = I + sum beta_i a_i a_i^T and eta = sum gamma_i a_i.
struct Site {
  double beta = 0.0;
  double gamma = 0.0;
};

struct PosteriorMoments {
  double mu = 0.0;
  double sigma = 0.0;
};

/// Fitted sparse variational GP in whitened form: u = R v with R R^T = Kuu
/// and q(v) = N(m, S). Matern-5/2 ARD kernel.
struct SurrogateState {
  Eigen::MatrixXd inducing;  // M x d, one inducing location per row
  Eigen::VectorXd m;
  Eigen::MatrixXd S;
  Eigen::VectorXd log_lengthscale;
  double log_signal_variance = 0.0;
  double log_noise_variance = 0.0;
  double jitter = 1e-5;
  int quadrature_nodes = 20;
  TargetTransform transform;
  std::vector<Site> sites;  // aligned with the fitting observations
  Eigen::MatrixXd chol_kuu;  // cached lower Cholesky factor of Kuu

  int dim() const { return static_cast<int>(inducing.cols()); }
  int inducing_count() const { return static_cast<int>(inducing.rows()); }
  double signal_variance() const;
  double noise_variance() const;

  /// Recomputes chol_kuu from the inducing points and hyperparameters.
  void refresh();
  uint64_t hash() const;

  void write(std::ostream& out) const;
  static SurrogateState read(std::istream& in);
};

double matern52(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const Eigen::VectorXd& lengthscale,
                double signal_variance);

/// Standardized threshold or latency for an observation.
double standardized_target(const SurrogateState& state, const Observation& o);

/// Flat layout used by the gradient: m, the lower triangle of chol(S) by
/// columns, log lengthscales, log signal variance, log noise variance.
Eigen::VectorXd pack_elbo_params(const SurrogateState& state);
SurrogateState unpack_elbo_params(const SurrogateState& like, const Eigen::VectorXd& flat);

struct ElboTerms {
  double uncensored = 0.0;
  double censored = 0.0;
  double kl = 0.0;
  double elbo() const { return uncensored + censored - kl; }
};

ElboTerms censored_elbo_terms(const SurrogateState& state, const std::vector<Observation>& obs);
/// Tobit ELBO; when `grad` is set it receives d ELBO / d pack_elbo_params.
double censored_elbo(const SurrogateState& state, const std::vector<Observation>& obs,
                     Eigen::VectorXd* grad = nullptr);

/// E_{f ~ N(mu, v)} log Phi((f - tau) / sigma) by Gauss-Hermite.
double expected_log_survival(double mu, double v, double tau, double sigma, int nodes);

struct FitTraceRow {
  int iteration = 0;
  double elbo = 0.0;
};

struct FitResult {
  SurrogateState state;
  std::vector<FitTraceRow> trace;
};

/// Alternates damped natural-gradient site updates for q with Adam steps on
/// the kernel and noise hyperparameters. A previous state warm-starts the
/// hyperparameters and the sites of the observations it was fitted on.
FitResult fit_surrogate(const std::vector<Observation>& obs, const SurrogateConfig& config, uint64_t seed,
                        const SurrogateState* warm = nullptr);
SurrogateState fit(const std::vector<Observation>& obs, const SurrogateConfig& config, uint64_t seed,
                   const SurrogateState* warm = nullptr);

/// Latent f moments in standardized units.
PosteriorMoments posterior(const SurrogateState& state, const Eigen::VectorXd& x);

/// One joint draw of f over the rows of xs.
Eigen::VectorXd sample_function(const SurrogateState& state, const Eigen::MatrixXd& xs, uint64_t seed);

/// Copy of `state` conditioned on a hypothetical timeout at tau_s seconds at x.
/// Existing sites and hyperparameters stay fixed; only the new site is fitted.
SurrogateState fantasize(const SurrogateState& state, const Eigen::VectorXd& x, double tau_s, int steps = 25,
                         double damping = 0.5);

void write_fit_trace_csv(std::ostream& out, const std::vector<FitTraceRow>& trace);

}  // namespace planforge
