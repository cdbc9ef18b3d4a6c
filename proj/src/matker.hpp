#pragma once

#include <Eigen/Dense>

#include <span>
#include <vector>

#include "error.hpp"

namespace ustab::matker {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline constexpr double kDefaultPsdTol = 1e-10;

// Dense symmetric real matrix. Construction symmetrizes the input as (A + A^T)/2
// so entries(i,j) == entries(j,i) holds bit-exactly afterwards.
class SymMatrix {
public:
    SymMatrix() = default;
    explicit SymMatrix(Matrix entries);

    static SymMatrix zero(int dim);
    static SymMatrix identity(int dim);
    static SymMatrix diagonal(std::span<const double> diag);

    int dim() const { return static_cast<int>(m_.rows()); }
    const Matrix& mat() const { return m_; }
    double operator()(int i, int j) const { return m_(i, j); }

    double frobenius_norm() const { return m_.norm(); }
    double trace() const { return m_.trace(); }

    SymMatrix operator+(const SymMatrix& o) const;
    SymMatrix operator-(const SymMatrix& o) const;
    SymMatrix operator*(double c) const;

private:
    Matrix m_;
};

inline SymMatrix operator*(double c, const SymMatrix& m) { return m * c; }

// weight * v v^T
struct RankOneFactor {
    Vector vec;
    double weight = 0.0;

    int dim() const { return static_cast<int>(vec.size()); }
    SymMatrix densify() const;
    double lambda_max() const { return weight * vec.squaredNorm(); }
};

struct EigenDecomposition {
    Vector values;  // descending
    Matrix vectors; // column k pairs with values[k]
};

EigenDecomposition sym_eig(const SymMatrix& m);

// Principal square root. Eigenvalues in [-tol*max(1, lambda_max), 0) are clamped to zero;
// anything more negative raises NotPSD.
SymMatrix psd_sqrt(const SymMatrix& m, double tol = kDefaultPsdTol);

// ||A B||_F for square-root factors A, B.
double frob_product(const SymMatrix& a_sqrt, const SymMatrix& b_sqrt);

// Tr(A B) for symmetric A, B, which equals ||A^{1/2} B^{1/2}||_F^2 when both are PSD.
double trace_product(const SymMatrix& a, const SymMatrix& b);

double lambda_max(const SymMatrix& m);
double lambda_min(const SymMatrix& m);

// Largest algebraic eigenvalue of a dense symmetric matrix given as raw Eigen storage.
// Dense solve up to kLanczosThreshold rows, Lanczos with full reorthogonalization above.
inline constexpr int kLanczosThreshold = 256;
double lambda_max_dense(const Matrix& m);
double lanczos_lambda_max(const Matrix& m, double rel_tol = 1e-13);

// Top eigenvalue of sum_a c_a v_a v_a^T via its weighted Gram matrix.
double lambda_max_factors(std::span<const RankOneFactor> factors, std::span<const double> scales);

// Exactly the rank-one identity: Tr[(wa a a^T)(wb b b^T)] = wa wb <a,b>^2.
inline double trace_product(const RankOneFactor& a, const RankOneFactor& b) {
    double dot = a.vec.dot(b.vec);
    return a.weight * b.weight * dot * dot;
}

bool is_psd(const SymMatrix& m, double tol = kDefaultPsdTol);

} // namespace ustab::matker
