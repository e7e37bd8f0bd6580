#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>
#include <vector>

namespace vflkit {

/// Row-major dense matrix; rows are samples.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic, Eigen::RowMajor>;

/// One matrix per participant, rows aligned across participants.
using Views = std::vector<Matrix>;

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

inline void require_finite(const Matrix& m, const std::string& what) {
  if (!m.allFinite()) throw std::invalid_argument(what + ": non-finite value");
}

inline void require_shape(const Matrix& m, Eigen::Index rows, Eigen::Index cols,
                          const std::string& what) {
  if (m.rows() != rows || m.cols() != cols) {
    throw std::invalid_argument(what + ": expected " + std::to_string(rows) + "x" +
                                std::to_string(cols) + ", got " + std::to_string(m.rows()) +
                                "x" + std::to_string(m.cols()));
  }
}

/// Builds a matrix from nested rows, rejecting ragged or non-finite input.
inline Matrix make_matrix(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) return Matrix(0, 0);
  Matrix m(rows.size(), rows.front().size());
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows.front().size()) throw std::invalid_argument("make_matrix: ragged rows");
    for (size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
  }
  require_finite(m, "make_matrix");
  return m;
}

inline Matrix row_matrix(const Vector& v) { return v.transpose(); }

/// Rows of `m` selected by `idx`, in order.
inline Matrix select_rows(const Matrix& m, const std::vector<int>& idx) {
  Matrix out(idx.size(), m.cols());
  for (size_t i = 0; i < idx.size(); ++i) out.row(i) = m.row(idx[i]);
  return out;
}

inline Views select_rows(const Views& views, const std::vector<int>& idx) {
  Views out;
  out.reserve(views.size());
  for (const auto& v : views) out.push_back(select_rows(v, idx));
  return out;
}

}  // namespace vflkit
