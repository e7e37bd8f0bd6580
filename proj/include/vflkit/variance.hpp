#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "vflkit/matrix.hpp"
#include "vflkit/protocol.hpp"

namespace vflkit {

inline constexpr double kCovarianceFloor = 1e-9;

struct Gmm {
  std::vector<double> weights;
  std::vector<Vector> means;
  std::vector<Matrix> covariances;

  int k() const { return static_cast<int>(weights.size()); }
  int dim() const { return means.empty() ? 0 : static_cast<int>(means.front().size()); }
  void validate() const;
  /// Mean per-row log-likelihood.
  double log_likelihood(const Matrix& data) const;
  Matrix sample(int n, uint64_t seed) const;
};

struct GmmFit {
  Gmm gmm;
  std::vector<double> log_likelihood;  // mean per-row value after each iteration
  int iterations = 0;
  bool converged = false;
};

/// Full-covariance EM; covariance eigenvalues floored at kCovarianceFloor.
GmmFit fit_gmm_em(const Matrix& data, int k, int max_iters = 200, double tol = 1e-8, uint64_t seed = 1);

struct ScalarComponent {
  double weight = 1.0;
  double mean = 0.0;
  double stddev = 0.0;
};

using ScalarMixture = std::vector<ScalarComponent>;

void validate(const ScalarMixture& sm);

/// Constants of the Gaussian approximations to the sigmoid (sigma1) and its derivative (sigma2).
struct ApproxConstants {
  static constexpr double sigma1 = 1.699;
  static constexpr double sigma2 = 1.630;
};

double norm_cdf(double x);
double norm_pdf(double x);
/// phi(r) / Phi(r), stable for very negative r.
double inverse_mills(double r);

/// Distribution of theta . X + offset for X drawn from the mixture.
ScalarMixture project_mixture(const Gmm& gmm, const Vector& theta, double offset);

struct VarianceValue {
  double value = 0.0;  // clamped at zero
  double raw = 0.0;
};

VarianceValue heterolr_variance(const ScalarMixture& sm);

enum class SplitnnVarianceMode {
  exact,  // exact truncated moments of the mixture
  per_component,  // closed form built from per-component truncated moments
};

double splitnn_unit_variance(const ScalarMixture& sm, SplitnnVarianceMode mode = SplitnnVarianceMode::exact);

/// Unbiased sample variance of fn over n draws from the scalar mixture.
double variance_monte_carlo(const std::function<double(double)>& fn, const ScalarMixture& sm, int n, uint64_t seed);
/// Unbiased sample variance of fn over n draws from the GMM.
double variance_monte_carlo(const std::function<double(const Vector&)>& fn, const Gmm& gmm, int n, uint64_t seed);

double sample_variance(const std::vector<double>& xs);

enum class ExistenceRoot {
  stated,     // Phi(r_max) <= (K + sqrt(K^2 - 4 eps K)) / 2
  corrected,  // Phi(r_max) <= (K - sqrt(K^2 - 4 eps K)) / 2, the root that bounds Phi - Phi^2/K
};

struct ExistenceBounds {
  double r_max = 0.0;
  double r_min = 0.0;
  double mu_max = 0.0;
  double mu_min = 0.0;
  double sigma_max = 0.0;
  int k = 1;
};

/// Sufficient condition for an ADI under bounded mutation.
bool bounded_existence_check(const ExistenceBounds& b, double eps, ProtocolKind protocol,
                             ExistenceRoot root = ExistenceRoot::stated);

}  // namespace vflkit
