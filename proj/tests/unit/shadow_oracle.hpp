#pragma once

#include <cmath>
#include <vector>

#include "xplat/shadows.hpp"

namespace test {

using xplat::qsim::DensityMatrix;

// Full 2^n snapshot matrix of one record, built by Kronecker products.
inline DensityMatrix::Matrix dense_snapshot(const xplat::shadows::Record& r) {
  using Matrix = DensityMatrix::Matrix;
  Matrix out = Matrix::Ones(1, 1);
  for (std::size_t q = 0; q < r.basis.size(); ++q) {
    const Eigen::Matrix2cd s = xplat::shadows::snapshot_local(r.basis[q], r.outcome[q]);
    Matrix next(out.rows() * 2, out.cols() * 2);
    for (int i = 0; i < out.rows(); ++i)
      for (int j = 0; j < out.cols(); ++j) next.block(2 * i, 2 * j, 2, 2) = out(i, j) * s;
    out = next;
  }
  return out;
}

// Literal dense evaluation of the shadow fidelity estimator.
inline double dense_cs(const xplat::shadows::SnapshotSet& a, const xplat::shadows::SnapshotSet& b,
                       bool include_diagonal) {
  using Matrix = DensityMatrix::Matrix;
  std::vector<Matrix> da, db;
  for (const auto& r : a.records) da.push_back(dense_snapshot(r));
  for (const auto& r : b.records) db.push_back(dense_snapshot(r));
  auto overlap = [&](const std::vector<Matrix>& x, const std::vector<Matrix>& y, bool self) {
    double s = 0.0;
    long count = 0;
    for (std::size_t m = 0; m < x.size(); ++m)
      for (std::size_t k = 0; k < y.size(); ++k) {
        if (self && !include_diagonal && m == k) continue;
        s += (x[m] * y[k]).trace().real();
        ++count;
      }
    return s / count;
  };
  return overlap(da, db, false) / std::sqrt(overlap(da, da, true) * overlap(db, db, true));
}

}  // namespace test
