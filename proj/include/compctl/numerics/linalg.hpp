#pragma once

#include "compctl/numerics/rng.hpp"
#include "compctl/numerics/tensor.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace compctl {

struct PcaResult {
  Tensor components;                  // k x D, unit rows
  Tensor coords;                      // N x k
  std::vector<double> explained_variance;  // per component, divisor N - 1
  std::vector<double> mean;           // D
};

/// Principal components from the SVD of the mean-centred data.
/// Each component is flipped so that its largest-magnitude entry (first one
/// on ties) is positive, which makes the coordinates reproducible.
inline PcaResult pca(const Tensor& rows, std::size_t k) {
  const std::size_t n = rows.rows();
  const std::size_t d = rows.cols();
  if (n < 2) throw std::invalid_argument("pca: need at least two rows");
  if (k == 0 || k > std::min(n, d)) throw std::invalid_argument("pca: k exceeds min(N, D)");

  RowMatrix centered = rows.mat();
  const Eigen::RowVectorXd mean = centered.colwise().mean();
  centered.rowwise() -= mean;

  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(Eigen::MatrixXd(centered), Eigen::ComputeThinV);
  const Eigen::MatrixXd& v = svd.matrixV();
  const Eigen::VectorXd& s = svd.singularValues();

  PcaResult out;
  out.components = Tensor::matrix(k, d);
  out.mean.assign(mean.data(), mean.data() + d);
  for (std::size_t c = 0; c < k; ++c) {
    Eigen::VectorXd comp = v.col(static_cast<Eigen::Index>(c));
    Eigen::Index arg = 0;
    for (Eigen::Index j = 1; j < comp.size(); ++j) {
      if (std::abs(comp[j]) > std::abs(comp[arg])) arg = j;
    }
    if (comp[arg] < 0) comp = -comp;
    for (std::size_t j = 0; j < d; ++j) out.components.at(c, j) = comp[static_cast<Eigen::Index>(j)];
    const double sv = c < static_cast<std::size_t>(s.size()) ? s[static_cast<Eigen::Index>(c)] : 0.0;
    out.explained_variance.push_back(sv * sv / static_cast<double>(n - 1));
  }
  out.coords = Tensor::matrix(n, k);
  out.coords.mat().noalias() = centered * out.components.mat().transpose();
  return out;
}

/// Largest singular value by power iteration on A^T A.
///
/// Converged once the Rayleigh quotient |Ax|^2 / |x|^2 changes by at most
/// `rel_tol` relative to its value; iteration then continues while the
/// quotient still moves, so well-separated spectra settle to round-off.
/// `max_iter` bounds the total. The start vector comes from a fixed seeded
/// stream, so the result is reproducible.
inline double spectral_norm(const Tensor& a, double rel_tol = 1e-10, int max_iter = 1000) {
  const auto m = a.mat();
  if (m.size() == 0 || m.squaredNorm() == 0.0) return 0.0;
  RngStream rng(0x5EC7A1ULL, "spectral_norm");
  Eigen::VectorXd x(m.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = rng.normal();
  x.normalize();
  double lambda = 0.0;
  double last_change = std::numeric_limits<double>::infinity();
  bool converged = false;
  for (int it = 0; it < max_iter; ++it) {
    const Eigen::VectorXd ax = m * x;
    const double next = ax.squaredNorm() / x.squaredNorm();
    const double change = std::abs(next - lambda);
    lambda = next;
    if (converged && (change == 0.0 || change >= last_change)) break;
    if (change <= rel_tol * next) converged = true;
    last_change = change;
    Eigen::VectorXd y = m.transpose() * ax;
    const double ny = y.norm();
    if (ny == 0.0) break;  // start vector in the null space
    x = y / ny;
  }
  return std::sqrt(lambda);
}

inline double frobenius_norm_squared(const Tensor& a) { return a.squared_norm(); }

/// ||A||_F^2 / ||A||_2^2.
inline double stable_rank(const Tensor& a) {
  const double fro = frobenius_norm_squared(a);
  if (fro == 0.0) throw std::invalid_argument("stable_rank: zero matrix");
  const double sigma = spectral_norm(a);
  return fro / (sigma * sigma);
}

/// Pairwise cosine similarity between rows. A zero row has similarity 0 with
/// every other row and 1 with itself.
inline Tensor cosine_similarity_matrix(const Tensor& rows) {
  const std::size_t n = rows.rows();
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (double v : rows.row(i)) s += v * v;
    norms[i] = std::sqrt(s);
  }
  Tensor out = Tensor::matrix(n, n);
  const RowMatrix gram = rows.mat() * rows.mat().transpose();
  for (std::size_t i = 0; i < n; ++i) {
    out.at(i, i) = 1.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      double c = 0.0;
      if (norms[i] > 0.0 && norms[j] > 0.0) {
        c = gram(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) / (norms[i] * norms[j]);
        c = std::clamp(c, -1.0, 1.0);
      }
      out.at(i, j) = c;
      out.at(j, i) = c;
    }
  }
  return out;
}

/// Mean of |C[i][j]| over i != j.
inline double mean_abs_off_diagonal(const Tensor& c) {
  const std::size_t n = c.rows();
  if (n < 2) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j) s += std::abs(c.at(i, j));
    }
  }
  return s / static_cast<double>(n * (n - 1));
}

}  // namespace compctl
