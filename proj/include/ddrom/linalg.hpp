#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <memory>
#include <vector>

#include "ddrom/errors.hpp"

namespace ddrom {

using Vec = Eigen::VectorXd;
// Column-major dense storage; snapshot and correlation matrices live here.
using DenseMatrix = Eigen::MatrixXd;

struct Triplet {
  int row = 0;
  int col = 0;
  double value = 0.0;
};

// Compressed-row sparse matrix. All assembled discrete operators use this
// storage. Within a row, column indices are strictly increasing and
// duplicate-free (from_triplets sums duplicates).
class SparseMatrix {
 public:
  SparseMatrix() = default;
  SparseMatrix(int n_rows, int n_cols, std::vector<int> row_offsets,
               std::vector<int> col_indices, std::vector<double> values);

  static SparseMatrix from_triplets(int n_rows, int n_cols,
                                    const std::vector<Triplet>& triplets);
  static SparseMatrix identity(int n);

  int n_rows() const { return n_rows_; }
  int n_cols() const { return n_cols_; }
  int n_nonzeros() const { return static_cast<int>(values_.size()); }

  const std::vector<int>& row_offsets() const { return row_offsets_; }
  const std::vector<int>& col_indices() const { return col_indices_; }
  const std::vector<double>& values() const { return values_; }
  std::vector<double>& values() { return values_; }

  double coeff(int row, int col) const;
  SparseMatrix transposed() const;
  SparseMatrix scaled(double factor) const;

  Eigen::SparseMatrix<double> to_eigen() const;
  DenseMatrix to_dense() const;

 private:
  int n_rows_ = 0;
  int n_cols_ = 0;
  std::vector<int> row_offsets_{0};
  std::vector<int> col_indices_;
  std::vector<double> values_;
};

// y = A x with exact sparse row dot products.
Vec spmv(const SparseMatrix& a, const Vec& x);

// x = A^T y convenience used by adjoint assembly and Galerkin projections.
Vec spmv_transposed(const SparseMatrix& a, const Vec& y);

// Direct sparse LU with partial pivoting. Solves are reentrant; the
// factorization itself is immutable after construction.
class LuFactorization {
 public:
  explicit LuFactorization(const SparseMatrix& a);

  int size() const { return n_; }
  Vec solve(const Vec& rhs) const;
  // Solves A^T x = rhs from the same factorization; the adjoint systems are
  // exactly the transposed state Jacobians.
  Vec solve_transposed(const Vec& rhs) const;

 private:
  int n_ = 0;
  std::shared_ptr<Eigen::SparseLU<Eigen::SparseMatrix<double>>> lu_;
};

LuFactorization lu_factorize(const SparseMatrix& a);

struct EigenDecomposition {
  // Sorted by decreasing magnitude; eigenvectors() columns pair with entries.
  Vec eigenvalues;
  DenseMatrix eigenvectors;
};

// Dense symmetric eigensolver for POD correlation matrices. Input must be
// symmetric to 1e-12 relative tolerance.
EigenDecomposition sym_eig(const DenseMatrix& c);

}  // namespace ddrom
