#include "vflkit/variance.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>

namespace vflkit {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

// log N(x | mu, L L^T), with L the Cholesky factor.
double log_gaussian(const Vector& x, const Vector& mu, const Eigen::LLT<Eigen::MatrixXd>& llt, double log_det) {
  Vector z = llt.matrixL().solve(x - mu);
  return -0.5 * (x.size() * kLog2Pi + log_det + z.squaredNorm());
}

Matrix floor_eigenvalues(const Matrix& s) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Eigen::MatrixXd(0.5 * (s + s.transpose())));
  Vector ev = es.eigenvalues().cwiseMax(kCovarianceFloor);
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

struct Factor {
  Eigen::LLT<Eigen::MatrixXd> llt;
  double log_det = 0.0;
};

Factor factor(const Matrix& s) {
  Factor f;
  f.llt.compute(Eigen::MatrixXd(s));
  if (f.llt.info() != Eigen::Success) throw std::runtime_error("gmm: covariance not positive definite");
  f.log_det = 2.0 * f.llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return f;
}

double log_sum_exp(const Vector& v) {
  double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

// Responsibilities (n x k) and mean log-likelihood.
double e_step(const Gmm& g, const Matrix& data, Matrix& resp) {
  int k = g.k();
  std::vector<Factor> f;
  for (const auto& s : g.covariances) f.push_back(factor(s));
  resp.resize(data.rows(), k);
  double total = 0;
  Vector lp(k);
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    Vector x = data.row(i).transpose();
    for (int c = 0; c < k; ++c) lp[c] = std::log(g.weights[c]) + log_gaussian(x, g.means[c], f[c].llt, f[c].log_det);
    double lse = log_sum_exp(lp);
    total += lse;
    resp.row(i) = (lp.array() - lse).exp().transpose();
  }
  return total / data.rows();
}

}  // namespace

void Gmm::validate() const {
  int kk = k();
  if (kk == 0 || static_cast<int>(means.size()) != kk || static_cast<int>(covariances.size()) != kk)
    throw std::invalid_argument("gmm: component lists disagree");
  double total = 0;
  for (double w : weights) {
    if (!(w > 0)) throw std::invalid_argument("gmm: weights must be positive");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("gmm: weights must sum to 1");
  for (int c = 0; c < kk; ++c) {
    const Matrix& s = covariances[c];
    if (means[c].size() != dim() || s.rows() != dim() || s.cols() != dim())
      throw std::invalid_argument("gmm: component dimension mismatch");
    if ((s - s.transpose()).cwiseAbs().maxCoeff() > 1e-9) throw std::invalid_argument("gmm: covariance not symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Eigen::MatrixXd(s), Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < kCovarianceFloor * (1 - 1e-6))
      throw std::invalid_argument("gmm: covariance eigenvalue below floor");
  }
}

double Gmm::log_likelihood(const Matrix& data) const {
  Matrix resp;
  return e_step(*this, data, resp);
}

Matrix Gmm::sample(int n, uint64_t seed) const {
  std::mt19937_64 rng(seed);
  std::discrete_distribution<int> pick(weights.begin(), weights.end());
  std::normal_distribution<double> nd;
  std::vector<Matrix> l;
  for (const auto& s : covariances) l.push_back(Eigen::LLT<Eigen::MatrixXd>(Eigen::MatrixXd(s)).matrixL().toDenseMatrix());
  Matrix out(n, dim());
  for (int i = 0; i < n; ++i) {
    int c = pick(rng);
    Vector z(dim());
    for (int j = 0; j < dim(); ++j) z[j] = nd(rng);
    out.row(i) = (means[c] + l[c] * z).transpose();
  }
  return out;
}

GmmFit fit_gmm_em(const Matrix& data, int k, int max_iters, double tol, uint64_t seed) {
  if (k < 1) throw std::invalid_argument("gmm: K must be >= 1");
  if (data.rows() < k) throw std::invalid_argument("gmm: need at least K rows");
  require_finite(data, "gmm data");
  Eigen::Index n = data.rows();

  GmmFit fit;
  Gmm& g = fit.gmm;
  Vector mean = data.colwise().mean().transpose();
  Matrix centered = data.rowwise() - mean.transpose();
  Matrix global_cov = floor_eigenvalues(centered.transpose() * centered / static_cast<double>(n));
  std::vector<int> init = sample_indices(static_cast<int>(n), k, seed);
  for (int c = 0; c < k; ++c) {
    g.weights.push_back(1.0 / k);
    g.means.push_back(data.row(init[c]).transpose());
    g.covariances.push_back(global_cov);
  }
  if (k == 1) g.means[0] = mean;

  Matrix resp;
  double prev = e_step(g, data, resp);
  for (int it = 0; it < max_iters; ++it) {
    for (int c = 0; c < k; ++c) {
      double nk = resp.col(c).sum();
      if (nk <= 1e-300) {
        // Empty component: keep it alive at a negligible weight on the global fit.
        g.means[c] = mean;
        g.covariances[c] = global_cov;
        g.weights[c] = 1e-12;
        continue;
      }
      Vector mu = (data.transpose() * resp.col(c)) / nk;
      Matrix diff = data.rowwise() - mu.transpose();
      Matrix s = diff.transpose() * resp.col(c).asDiagonal() * diff / nk;
      g.means[c] = mu;
      g.covariances[c] = floor_eigenvalues(s);
      g.weights[c] = nk / n;
    }
    double total = 0;
    for (double w : g.weights) total += w;
    for (double& w : g.weights) w /= total;
    double ll = e_step(g, data, resp);
    fit.log_likelihood.push_back(ll);
    fit.iterations = it + 1;
    if (std::abs(ll - prev) < tol) {
      fit.converged = true;
      break;
    }
    prev = ll;
  }
  return fit;
}

void validate(const ScalarMixture& sm) {
  if (sm.empty()) throw std::invalid_argument("mixture: no components");
  double total = 0;
  for (const auto& c : sm) {
    if (!(c.weight > 0) || !(c.stddev >= 0) || !std::isfinite(c.mean))
      throw std::invalid_argument("mixture: invalid component");
    total += c.weight;
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("mixture: weights must sum to 1");
}

double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double norm_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

double inverse_mills(double r) {
  if (r > -8.0) return norm_pdf(r) / norm_cdf(r);
  // Continued fraction for Q(x)/phi(x) at x = -r: 1/(x + 1/(x + 2/(x + 3/(x + ...)))).
  double x = -r;
  double t = x;
  for (int k = 200; k >= 1; --k) t = x + k / t;
  return t;
}

ScalarMixture project_mixture(const Gmm& gmm, const Vector& theta, double offset) {
  if (theta.size() != gmm.dim()) throw std::invalid_argument("project_mixture: dimension mismatch");
  ScalarMixture sm;
  for (int c = 0; c < gmm.k(); ++c) {
    double var = theta.dot(gmm.covariances[c] * theta);
    sm.push_back({gmm.weights[c], offset + theta.dot(gmm.means[c]), std::sqrt(std::max(var, 0.0))});
  }
  return sm;
}

VarianceValue heterolr_variance(const ScalarMixture& sm) {
  validate(sm);
  constexpr double s1 = ApproxConstants::sigma1, s2 = ApproxConstants::sigma2;
  double mean_term = 0, deriv_term = 0;
  for (const auto& c : sm) {
    double v = c.stddev * c.stddev;
    mean_term += c.weight * norm_cdf(c.mean / std::sqrt(s1 * s1 + v));
    deriv_term += c.weight / std::sqrt(2 * std::numbers::pi) / std::sqrt(v + s2 * s2) *
                  std::exp(-0.5 * c.mean * c.mean / (v + s2 * s2));
  }
  VarianceValue out;
  out.raw = mean_term * (1 - mean_term) - deriv_term;
  out.value = std::max(out.raw, 0.0);
  return out;
}

double splitnn_unit_variance(const ScalarMixture& sm, SplitnnVarianceMode mode) {
  validate(sm);
  if (mode == SplitnnVarianceMode::exact) {
    double m1 = 0, m2 = 0;
    for (const auto& c : sm) {
      if (c.stddev == 0) {
        double y = std::max(c.mean, 0.0);
        m1 += c.weight * y;
        m2 += c.weight * y * y;
        continue;
      }
      double r = c.mean / c.stddev;
      double cdf = norm_cdf(r), pdf = norm_pdf(r);
      m1 += c.weight * (c.mean * cdf + c.stddev * pdf);
      m2 += c.weight * ((c.mean * c.mean + c.stddev * c.stddev) * cdf + c.mean * c.stddev * pdf);
    }
    return std::max(m2 - m1 * m1, 0.0);
  }
  double p = 0, cond_var = 0, cond_mean = 0;
  for (const auto& c : sm) {
    if (c.stddev == 0) {
      // Point-mass limits: above zero contributes its mean, below zero vanishes.
      if (c.mean > 0) {
        p += c.weight;
        cond_mean += c.weight * c.mean;
      }
      continue;
    }
    double r = c.mean / c.stddev;
    double lambda = inverse_mills(r);
    p += c.weight * norm_cdf(r);
    cond_var += c.weight * c.weight * c.stddev * c.stddev * (1 - lambda * (r + lambda));
    cond_mean += c.weight * (c.mean + c.stddev * lambda);
  }
  return p * (cond_var + cond_mean * cond_mean * (1 - p));
}

double sample_variance(const std::vector<double>& xs) {
  if (xs.size() < 2) throw std::invalid_argument("sample_variance: need n >= 2");
  double mean = 0, m2 = 0;
  size_t n = 0;
  for (double x : xs) {
    ++n;
    double d = x - mean;
    mean += d / n;
    m2 += d * (x - mean);
  }
  return m2 / (n - 1);
}

double variance_monte_carlo(const std::function<double(double)>& fn, const ScalarMixture& sm, int n, uint64_t seed) {
  if (n < 2) throw std::invalid_argument("monte carlo: need n >= 2");
  validate(sm);
  std::vector<double> w;
  for (const auto& c : sm) w.push_back(c.weight);
  std::mt19937_64 rng(seed);
  std::discrete_distribution<int> pick(w.begin(), w.end());
  std::normal_distribution<double> nd;
  std::vector<double> ys(n);
  for (int i = 0; i < n; ++i) {
    const auto& c = sm[pick(rng)];
    ys[i] = fn(c.mean + c.stddev * nd(rng));
  }
  return sample_variance(ys);
}

double variance_monte_carlo(const std::function<double(const Vector&)>& fn, const Gmm& gmm, int n, uint64_t seed) {
  if (n < 2) throw std::invalid_argument("monte carlo: need n >= 2");
  Matrix xs = gmm.sample(n, seed);
  std::vector<double> ys(n);
  for (int i = 0; i < n; ++i) ys[i] = fn(xs.row(i).transpose());
  return sample_variance(ys);
}

bool bounded_existence_check(const ExistenceBounds& b, double eps, ProtocolKind protocol, ExistenceRoot root) {
  if (!(eps > 0)) throw std::invalid_argument("existence check: eps must be positive");
  if (b.r_min > b.r_max || b.mu_min > b.mu_max) throw std::invalid_argument("existence check: inconsistent bounds");
  double cdf_max = norm_cdf(b.r_max);
  if (protocol == ProtocolKind::heterolr) {
    double k = b.k;
    double disc = k * k - 4 * eps * k;
    if (disc < 0) return true;  // Phi - Phi^2/K never exceeds eps
    double bound = root == ExistenceRoot::stated ? (k + std::sqrt(disc)) / 2 : (k - std::sqrt(disc)) / 2;
    return cdf_max <= bound;
  }
  double cdf_min = norm_cdf(b.r_min);
  double pdf_max = norm_pdf(b.r_max);
  double tail = b.sigma_max == 0 ? 0.0 : 0.25 * b.sigma_max * b.sigma_max * pdf_max * pdf_max / (cdf_min * cdf_min);
  double lhs = cdf_max + 0.25 * cdf_max * b.mu_min * b.mu_min + 0.25 * b.mu_max * b.mu_max + tail;
  return lhs <= eps;
}

}  // namespace vflkit
