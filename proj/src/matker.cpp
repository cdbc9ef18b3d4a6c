#include "matker.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "seed.hpp"

namespace ustab::matker {

namespace {

void require_same_dim(const SymMatrix& a, const SymMatrix& b, const char* op) {
    if (a.dim() != b.dim()) {
        throw Error(ErrorCode::ShapeError, std::string(op) + ": dimension mismatch " +
                                               std::to_string(a.dim()) + " vs " + std::to_string(b.dim()));
    }
}

} // namespace

SymMatrix::SymMatrix(Matrix entries) {
    if (entries.rows() != entries.cols()) {
        throw Error(ErrorCode::ShapeError, "SymMatrix requires a square matrix");
    }
    if (entries.rows() == 0) {
        throw Error(ErrorCode::ShapeError, "SymMatrix requires dim >= 1");
    }
    if (!entries.allFinite()) {
        throw Error(ErrorCode::InvalidMatrix, "non-finite entry");
    }
    Matrix sym = 0.5 * (entries + entries.transpose());
    for (Eigen::Index j = 0; j < sym.cols(); ++j) {
        for (Eigen::Index i = j + 1; i < sym.rows(); ++i) {
            sym(i, j) = sym(j, i);
        }
    }
    m_ = std::move(sym);
}

SymMatrix SymMatrix::zero(int dim) { return SymMatrix(Matrix::Zero(dim, dim)); }

SymMatrix SymMatrix::identity(int dim) { return SymMatrix(Matrix::Identity(dim, dim)); }

SymMatrix SymMatrix::diagonal(std::span<const double> diag) {
    Matrix m = Matrix::Zero(static_cast<Eigen::Index>(diag.size()), static_cast<Eigen::Index>(diag.size()));
    for (size_t i = 0; i < diag.size(); ++i) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) = diag[i];
    return SymMatrix(std::move(m));
}

SymMatrix SymMatrix::operator+(const SymMatrix& o) const {
    require_same_dim(*this, o, "add");
    return SymMatrix(m_ + o.m_);
}

SymMatrix SymMatrix::operator-(const SymMatrix& o) const {
    require_same_dim(*this, o, "sub");
    return SymMatrix(m_ - o.m_);
}

SymMatrix SymMatrix::operator*(double c) const { return SymMatrix(m_ * c); }

SymMatrix RankOneFactor::densify() const {
    if (vec.size() == 0) throw Error(ErrorCode::ShapeError, "empty rank-one factor");
    return SymMatrix(weight * vec * vec.transpose());
}

EigenDecomposition sym_eig(const SymMatrix& m) {
    Eigen::SelfAdjointEigenSolver<Matrix> solver(m.mat());
    if (solver.info() != Eigen::Success) {
        throw Error(ErrorCode::InvalidMatrix, "eigensolver failed to converge");
    }
    EigenDecomposition out;
    out.values = solver.eigenvalues().reverse();
    out.vectors = solver.eigenvectors().rowwise().reverse();
    return out;
}

SymMatrix psd_sqrt(const SymMatrix& m, double tol) {
    EigenDecomposition eig = sym_eig(m);
    const double top = eig.values(0);
    const double floor = -tol * std::max(1.0, top);
    Vector roots(eig.values.size());
    for (Eigen::Index i = 0; i < eig.values.size(); ++i) {
        double v = eig.values(i);
        if (v < floor) {
            throw Error(ErrorCode::NotPSD, "eigenvalue " + std::to_string(v) + " below tolerance");
        }
        roots(i) = v > 0.0 ? std::sqrt(v) : 0.0;
    }
    return SymMatrix(eig.vectors * roots.asDiagonal() * eig.vectors.transpose());
}

double frob_product(const SymMatrix& a_sqrt, const SymMatrix& b_sqrt) {
    require_same_dim(a_sqrt, b_sqrt, "frob_product");
    return (a_sqrt.mat() * b_sqrt.mat()).norm();
}

double trace_product(const SymMatrix& a, const SymMatrix& b) {
    require_same_dim(a, b, "trace_product");
    // Tr(AB) = sum_ij A_ij B_ji = sum_ij A_ij B_ij for symmetric B
    return a.mat().cwiseProduct(b.mat()).sum();
}

double lanczos_lambda_max(const Matrix& a, double rel_tol) {
    const Eigen::Index n = a.rows();
    if (n == 0) throw Error(ErrorCode::ShapeError, "empty matrix");
    if (n == 1) return a(0, 0);

    const Eigen::Index max_iter = std::min<Eigen::Index>(n, 400);
    Matrix basis(n, max_iter + 1);

    // All-ones has positive overlap with the Perron vector of a nonnegative matrix;
    // a fixed pseudo-random tilt covers general symmetric input.
    Vector q(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        double u = static_cast<double>(splitmix64(static_cast<uint64_t>(i)) >> 11) * 0x1.0p-53;
        q(i) = 1.0 + 0.1 * (u - 0.5);
    }
    q.normalize();
    basis.col(0) = q;

    std::vector<double> alpha;
    std::vector<double> beta;
    const double scale = std::max(a.norm(), 1e-300);
    double theta = 0.0;

    for (Eigen::Index j = 0; j < max_iter; ++j) {
        Vector w = a * basis.col(j);
        double aj = basis.col(j).dot(w);
        alpha.push_back(aj);
        w -= aj * basis.col(j);
        if (j > 0) w -= beta.back() * basis.col(j - 1);
        for (int pass = 0; pass < 2; ++pass) {
            auto span_q = basis.leftCols(j + 1);
            w -= span_q * (span_q.transpose() * w);
        }
        double bj = w.norm();

        const Eigen::Index k = j + 1;
        Vector diag = Eigen::Map<const Vector>(alpha.data(), k);
        Vector sub(std::max<Eigen::Index>(k - 1, 0));
        for (Eigen::Index i = 0; i + 1 < k; ++i) sub(i) = beta[static_cast<size_t>(i)];
        Eigen::SelfAdjointEigenSolver<Matrix> tri;
        tri.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);
        theta = tri.eigenvalues()(k - 1);
        double resid = std::abs(bj * tri.eigenvectors()(k - 1, k - 1));

        if (resid <= rel_tol * std::max(std::abs(theta), scale * 1e-300) || bj <= 1e-14 * scale || k == n) {
            return theta;
        }
        beta.push_back(bj);
        basis.col(j + 1) = w / bj;
    }
    return theta;
}

double lambda_max_dense(const Matrix& m) {
    if (m.rows() == 0) throw Error(ErrorCode::ShapeError, "empty matrix");
    if (m.rows() > kLanczosThreshold) return lanczos_lambda_max(m);
    Eigen::SelfAdjointEigenSolver<Matrix> solver(m, Eigen::EigenvaluesOnly);
    if (solver.info() != Eigen::Success) {
        throw Error(ErrorCode::InvalidMatrix, "eigensolver failed to converge");
    }
    return solver.eigenvalues()(m.rows() - 1);
}

double lambda_max(const SymMatrix& m) { return lambda_max_dense(m.mat()); }

double lambda_min(const SymMatrix& m) {
    Eigen::SelfAdjointEigenSolver<Matrix> solver(m.mat(), Eigen::EigenvaluesOnly);
    return solver.eigenvalues()(0);
}

double lambda_max_factors(std::span<const RankOneFactor> factors, std::span<const double> scales) {
    if (factors.size() != scales.size()) throw Error(ErrorCode::ShapeError, "factor/scale count mismatch");
    const size_t k = factors.size();
    if (k == 0) return 0.0;
    if (k == 1) return scales[0] * factors[0].lambda_max();

    std::vector<double> s(k);
    for (size_t a = 0; a < k; ++a) s[a] = std::sqrt(std::max(0.0, scales[a] * factors[a].weight));
    if (k == 2) {
        double g00 = s[0] * s[0] * factors[0].vec.squaredNorm();
        double g11 = s[1] * s[1] * factors[1].vec.squaredNorm();
        double g01 = s[0] * s[1] * factors[0].vec.dot(factors[1].vec);
        double half = 0.5 * (g00 - g11);
        return 0.5 * (g00 + g11) + std::sqrt(half * half + g01 * g01);
    }
    Matrix gram(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
    for (size_t a = 0; a < k; ++a) {
        for (size_t b = a; b < k; ++b) {
            double g = s[a] * s[b] * factors[a].vec.dot(factors[b].vec);
            gram(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = g;
            gram(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(a)) = g;
        }
    }
    return lambda_max_dense(gram);
}

bool is_psd(const SymMatrix& m, double tol) {
    Eigen::SelfAdjointEigenSolver<Matrix> solver(m.mat(), Eigen::EigenvaluesOnly);
    const auto& ev = solver.eigenvalues();
    return ev(0) >= -tol * std::max(1.0, ev(ev.size() - 1));
}

} // namespace ustab::matker
