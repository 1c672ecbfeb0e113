#pragma once

#include <stdexcept>

#include <Eigen/Dense>

namespace kinaero::harness {

struct PcaResult {
  Eigen::MatrixXd projection;          // steps x k
  Eigen::MatrixXd components;          // units x k, columns are unit vectors
  Eigen::VectorXd explained_variance;  // all eigenvalues, descending
  Eigen::VectorXd mean;

  double explained_ratio(Eigen::Index i) const {
    const double total = explained_variance.sum();
    return total > 0.0 ? explained_variance(i) / total : 0.0;
  }
};

// Principal components of a steps x units matrix from the eigendecomposition
// of its covariance.
inline PcaResult pca(const Eigen::MatrixXd& data, Eigen::Index k) {
  if (data.rows() < 2) throw std::invalid_argument("pca: need at least two rows");
  if (k < 1 || k > data.cols()) throw std::invalid_argument("pca: bad component count");
  PcaResult r;
  r.mean = data.colwise().mean();
  const Eigen::MatrixXd centered = data.rowwise() - r.mean.transpose();
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(data.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw std::runtime_error("pca: eigendecomposition failed");
  // ascending order from the solver
  r.explained_variance = eig.eigenvalues().reverse().cwiseMax(0.0);
  r.components = eig.eigenvectors().rowwise().reverse().leftCols(k);
  r.projection = centered * r.components;
  return r;
}

inline PcaResult pca3(const Eigen::MatrixXd& data) {
  if (data.cols() < 4) throw std::invalid_argument("pca3: need at least 4 columns");
  return pca(data, 3);
}

}  // namespace kinaero::harness
