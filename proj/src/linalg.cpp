#include "ddrom/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ddrom {

SparseMatrix::SparseMatrix(int n_rows, int n_cols, std::vector<int> row_offsets,
                           std::vector<int> col_indices, std::vector<double> values)
    : n_rows_(n_rows),
      n_cols_(n_cols),
      row_offsets_(std::move(row_offsets)),
      col_indices_(std::move(col_indices)),
      values_(std::move(values)) {
  if (static_cast<int>(row_offsets_.size()) != n_rows_ + 1)
    throw DimensionMismatch("sparse: row_offsets length must be n_rows+1");
  if (col_indices_.size() != values_.size())
    throw DimensionMismatch("sparse: col_indices/values length mismatch");
  for (int r = 0; r < n_rows_; ++r) {
    if (row_offsets_[r] > row_offsets_[r + 1])
      throw DimensionMismatch("sparse: row_offsets must be nondecreasing");
    for (int k = row_offsets_[r]; k < row_offsets_[r + 1]; ++k) {
      if (col_indices_[k] < 0 || col_indices_[k] >= n_cols_)
        throw DimensionMismatch("sparse: column index out of range");
      if (k > row_offsets_[r] && col_indices_[k] <= col_indices_[k - 1])
        throw DimensionMismatch("sparse: duplicate or unsorted column in row");
    }
  }
}

SparseMatrix SparseMatrix::from_triplets(int n_rows, int n_cols,
                                         const std::vector<Triplet>& triplets) {
  std::vector<int> counts(n_rows + 1, 0);
  for (const auto& t : triplets) {
    if (t.row < 0 || t.row >= n_rows || t.col < 0 || t.col >= n_cols)
      throw DimensionMismatch("sparse: triplet index out of range");
    ++counts[t.row + 1];
  }
  std::vector<int> offsets(n_rows + 1, 0);
  std::partial_sum(counts.begin(), counts.end(), offsets.begin());

  std::vector<int> cols(triplets.size());
  std::vector<double> vals(triplets.size());
  std::vector<int> cursor(offsets.begin(), offsets.end() - 1);
  for (const auto& t : triplets) {
    const int k = cursor[t.row]++;
    cols[k] = t.col;
    vals[k] = t.value;
  }

  // Sort each row and merge duplicates.
  std::vector<int> out_offsets(n_rows + 1, 0);
  std::vector<int> out_cols;
  std::vector<double> out_vals;
  out_cols.reserve(cols.size());
  out_vals.reserve(vals.size());
  std::vector<int> perm;
  for (int r = 0; r < n_rows; ++r) {
    const int lo = offsets[r], hi = offsets[r + 1];
    perm.resize(hi - lo);
    std::iota(perm.begin(), perm.end(), lo);
    std::sort(perm.begin(), perm.end(),
              [&cols](int a, int b) { return cols[a] < cols[b]; });
    int in_row = 0;
    for (int idx : perm) {
      if (in_row > 0 && out_cols.back() == cols[idx]) {
        out_vals.back() += vals[idx];
      } else {
        out_cols.push_back(cols[idx]);
        out_vals.push_back(vals[idx]);
        ++in_row;
      }
    }
    out_offsets[r + 1] = out_offsets[r] + in_row;
  }
  return SparseMatrix(n_rows, n_cols, std::move(out_offsets), std::move(out_cols),
                      std::move(out_vals));
}

SparseMatrix SparseMatrix::identity(int n) {
  std::vector<Triplet> t;
  t.reserve(n);
  for (int i = 0; i < n; ++i) t.push_back({i, i, 1.0});
  return from_triplets(n, n, t);
}

double SparseMatrix::coeff(int row, int col) const {
  for (int k = row_offsets_[row]; k < row_offsets_[row + 1]; ++k)
    if (col_indices_[k] == col) return values_[k];
  return 0.0;
}

SparseMatrix SparseMatrix::transposed() const {
  std::vector<Triplet> t;
  t.reserve(values_.size());
  for (int r = 0; r < n_rows_; ++r)
    for (int k = row_offsets_[r]; k < row_offsets_[r + 1]; ++k)
      t.push_back({col_indices_[k], r, values_[k]});
  return from_triplets(n_cols_, n_rows_, t);
}

SparseMatrix SparseMatrix::scaled(double factor) const {
  SparseMatrix out = *this;
  for (double& v : out.values_) v *= factor;
  return out;
}

Eigen::SparseMatrix<double> SparseMatrix::to_eigen() const {
  Eigen::SparseMatrix<double> m(n_rows_, n_cols_);
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(values_.size());
  for (int r = 0; r < n_rows_; ++r)
    for (int k = row_offsets_[r]; k < row_offsets_[r + 1]; ++k)
      t.emplace_back(r, col_indices_[k], values_[k]);
  m.setFromTriplets(t.begin(), t.end());
  return m;
}

DenseMatrix SparseMatrix::to_dense() const {
  DenseMatrix m = DenseMatrix::Zero(n_rows_, n_cols_);
  for (int r = 0; r < n_rows_; ++r)
    for (int k = row_offsets_[r]; k < row_offsets_[r + 1]; ++k)
      m(r, col_indices_[k]) = values_[k];
  return m;
}

Vec spmv(const SparseMatrix& a, const Vec& x) {
  if (x.size() != a.n_cols())
    throw DimensionMismatch("spmv: vector length does not match matrix columns");
  Vec y = Vec::Zero(a.n_rows());
  const auto& off = a.row_offsets();
  const auto& col = a.col_indices();
  const auto& val = a.values();
  for (int r = 0; r < a.n_rows(); ++r) {
    double acc = 0.0;
    for (int k = off[r]; k < off[r + 1]; ++k) acc += val[k] * x[col[k]];
    y[r] = acc;
  }
  return y;
}

Vec spmv_transposed(const SparseMatrix& a, const Vec& y) {
  if (y.size() != a.n_rows())
    throw DimensionMismatch("spmv_transposed: vector length does not match rows");
  Vec x = Vec::Zero(a.n_cols());
  const auto& off = a.row_offsets();
  const auto& col = a.col_indices();
  const auto& val = a.values();
  for (int r = 0; r < a.n_rows(); ++r) {
    const double yr = y[r];
    if (yr == 0.0) continue;
    for (int k = off[r]; k < off[r + 1]; ++k) x[col[k]] += val[k] * yr;
  }
  return x;
}

LuFactorization::LuFactorization(const SparseMatrix& a) {
  if (a.n_rows() != a.n_cols())
    throw DimensionMismatch("lu_factorize: matrix must be square");
  n_ = a.n_rows();
  auto eigen_a = a.to_eigen();
  eigen_a.makeCompressed();
  lu_ = std::make_shared<Eigen::SparseLU<Eigen::SparseMatrix<double>>>();
  lu_->analyzePattern(eigen_a);
  lu_->factorize(eigen_a);
  if (lu_->info() != Eigen::Success)
    throw SingularMatrix("lu_factorize: zero pivot encountered");
}

Vec LuFactorization::solve(const Vec& rhs) const {
  if (rhs.size() != n_) throw DimensionMismatch("lu solve: rhs length mismatch");
  Vec x = lu_->solve(rhs);
  if (!x.allFinite()) throw SingularMatrix("lu solve: non-finite solution");
  return x;
}

Vec LuFactorization::solve_transposed(const Vec& rhs) const {
  if (rhs.size() != n_) throw DimensionMismatch("lu solve: rhs length mismatch");
  Vec x = lu_->transpose().solve(rhs);
  if (!x.allFinite()) throw SingularMatrix("lu solve: non-finite solution");
  return x;
}

LuFactorization lu_factorize(const SparseMatrix& a) { return LuFactorization(a); }

EigenDecomposition sym_eig(const DenseMatrix& c) {
  if (c.rows() != c.cols()) throw DimensionMismatch("sym_eig: matrix must be square");
  const double scale = std::max(1.0, c.cwiseAbs().maxCoeff());
  const double asym = (c - c.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-12 * scale)
    throw NotSymmetric("sym_eig: matrix is not symmetric to 1e-12 relative");

  const DenseMatrix sym = 0.5 * (c + c.transpose());
  Eigen::SelfAdjointEigenSolver<DenseMatrix> solver(sym);
  if (solver.info() != Eigen::Success)
    throw SingularMatrix("sym_eig: eigensolver failed to converge");

  const int n = static_cast<int>(c.rows());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  const Vec& ev = solver.eigenvalues();
  std::stable_sort(order.begin(), order.end(), [&ev](int a, int b) {
    const double ma = std::abs(ev[a]), mb = std::abs(ev[b]);
    if (ma != mb) return ma > mb;
    return ev[a] > ev[b];
  });

  EigenDecomposition out;
  out.eigenvalues.resize(n);
  out.eigenvectors.resize(n, n);
  for (int k = 0; k < n; ++k) {
    out.eigenvalues[k] = ev[order[k]];
    out.eigenvectors.col(k) = solver.eigenvectors().col(order[k]);
  }
  return out;
}

}  // namespace ddrom
