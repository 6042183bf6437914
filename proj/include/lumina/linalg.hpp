#pragma once

#include <vector>

namespace lumina::linalg {

/// Solve A x = b for dense row-major A (n x n) by LU with partial pivoting.
/// A and b are destroyed; the solution is returned. Throws NumericError when
/// the matrix is numerically singular.
std::vector<double> lu_solve(std::vector<double> a, std::vector<double> b, int n);

/// Eigendecomposition of a symmetric dense row-major matrix by cyclic Jacobi
/// rotations. Returns eigenvalues in descending order and the matching
/// eigenvectors as rows of `vectors` (k-th row is the k-th eigenvector).
struct SymmetricEigen {
    std::vector<double> values;
    std::vector<double> vectors;  // n x n, row-major, row k = eigenvector k
};
SymmetricEigen symmetric_eigen(std::vector<double> a, int n);

}  // namespace lumina::linalg
