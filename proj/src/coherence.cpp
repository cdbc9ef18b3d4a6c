#include "coherence.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "parallel.hpp"

namespace ustab {

using matker::Matrix;
using matker::RankOneFactor;
using matker::SymMatrix;
using matker::Vector;

void UnlearnConfig::validate() const {
    if (!(eta > 0.0) || !std::isfinite(eta)) throw Error(ErrorCode::InvalidArgument, "eta must be positive");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorCode::InvalidArgument, "alpha must lie in [0,1]");
    if (n_retain < 1) throw Error(ErrorCode::EmptyRetainSet, "n_retain must be >= 1");
    if (n_forget < 0) throw Error(ErrorCode::InvalidArgument, "n_forget must be >= 0");
    if (batch < 1) throw Error(ErrorCode::InvalidBatch, "batch must be >= 1");
    if (batch > n_retain) throw Error(ErrorCode::InvalidBatch, "batch exceeds n_retain");
    if (n_forget > 0 && batch > n_forget) throw Error(ErrorCode::InvalidBatch, "batch exceeds n_forget");
}

Coefficients noise_coefficients(const UnlearnConfig& cfg) {
    cfg.validate();
    Coefficients c;
    const double b = cfg.batch;
    const double nr = cfg.n_retain;
    c.c_r = cfg.eta * cfg.eta * (1 - cfg.alpha) * (1 - cfg.alpha) * (1.0 / nr) * (1.0 / b - 1.0 / nr);
    if (cfg.n_forget > 0) {
        const double nf = cfg.n_forget;
        c.c_f = cfg.eta * cfg.eta * cfg.alpha * cfg.alpha * (1.0 / nf) * (1.0 / b - 1.0 / nf);
    }
    // 1/B - 1/n can come out as -0.0 or a few ulps negative at B == n
    c.c_r = std::max(c.c_r, 0.0);
    c.c_f = std::max(c.c_f, 0.0);
    return c;
}

Coefficients coefficients(const UnlearnConfig& cfg) {
    Coefficients c = noise_coefficients(cfg);
    double sr = std::sqrt(c.c_r), sf = std::sqrt(c.c_f);
    if (sr + sf <= 0.0) {
        throw Error(ErrorCode::NoStochasticity, "C_r = C_f = 0; stability is governed by J alone");
    }
    c.cp_r = sr / (sr + sf);
    c.cp_f = 1.0 - c.cp_r;
    return c;
}

// ---- ensemble ----

HessianEnsemble HessianEnsemble::from_dense(std::vector<SymMatrix> retain, std::vector<SymMatrix> forget) {
    HessianEnsemble e;
    if (retain.empty() && forget.empty()) throw Error(ErrorCode::ShapeError, "empty ensemble");
    e.dim_ = retain.empty() ? forget.front().dim() : retain.front().dim();
    for (const auto* set : {&retain, &forget}) {
        for (const auto& h : *set) {
            if (h.dim() != e.dim_) throw Error(ErrorCode::ShapeError, "ensemble members differ in dimension");
        }
    }
    e.retain_ = std::move(retain);
    e.forget_ = std::move(forget);
    return e;
}

HessianEnsemble HessianEnsemble::from_factors(int dim, std::vector<RankOneFactor> retain,
                                              std::vector<RankOneFactor> forget) {
    if (dim < 1) throw Error(ErrorCode::ShapeError, "dim must be >= 1");
    for (const auto* set : {&retain, &forget}) {
        for (const auto& f : *set) {
            if (f.dim() != dim) throw Error(ErrorCode::ShapeError, "factor length differs from dim");
            if (!std::isfinite(f.weight) || !f.vec.allFinite()) throw Error(ErrorCode::InvalidMatrix, "non-finite factor");
            if (f.weight < 0.0) throw Error(ErrorCode::NotPSD, "negative rank-one weight");
        }
    }
    HessianEnsemble e;
    e.dim_ = dim;
    e.rank_one_ = true;
    e.retain_r1_ = std::move(retain);
    e.forget_r1_ = std::move(forget);
    return e;
}

SymMatrix HessianEnsemble::dense(SetKind s, int i) const {
    if (rank_one_) return factor(s, i).densify();
    const auto& set = s == SetKind::Retain ? retain_ : forget_;
    return set.at(static_cast<size_t>(i));
}

const RankOneFactor& HessianEnsemble::factor(SetKind s, int i) const {
    if (!rank_one_) throw Error(ErrorCode::InvalidArgument, "ensemble has no rank-one factors");
    const auto& set = s == SetKind::Retain ? retain_r1_ : forget_r1_;
    return set.at(static_cast<size_t>(i));
}

Vector HessianEnsemble::apply(SetKind s, int i, const Vector& w) const {
    if (w.size() != dim_) throw Error(ErrorCode::ShapeError, "vector length differs from dim");
    if (rank_one_) {
        const auto& f = factor(s, i);
        return (f.weight * f.vec.dot(w)) * f.vec;
    }
    const auto& set = s == SetKind::Retain ? retain_ : forget_;
    return set.at(static_cast<size_t>(i)).mat() * w;
}

Matrix HessianEnsemble::sandwich(SetKind s, int i, const Matrix& x) const {
    if (rank_one_) {
        const auto& f = factor(s, i);
        double q = f.vec.dot(x * f.vec);
        return (f.weight * f.weight * q) * (f.vec * f.vec.transpose());
    }
    const auto& h = (s == SetKind::Retain ? retain_ : forget_).at(static_cast<size_t>(i)).mat();
    return h * x * h;
}

void HessianEnsemble::check_psd(double tol) const {
    if (rank_one_) return; // weights checked at construction
    for (const auto* set : {&retain_, &forget_}) {
        for (const auto& h : *set) {
            if (!matker::is_psd(h, tol)) throw Error(ErrorCode::NotPSD, "ensemble member is not PSD");
        }
    }
}

// ---- mix-Hessians ----

SymMatrix mix_hessian_pair(const SymMatrix& h_r, const SymMatrix& h_f, const UnlearnConfig& cfg) {
    Coefficients c = coefficients(cfg);
    return h_r * c.cp_r + h_f * c.cp_f;
}

namespace {

void require_pairs(const HessianEnsemble& ens, const UnlearnConfig& cfg) {
    if (ens.n_retain() < 1) throw Error(ErrorCode::EmptyRetainSet, "retain set is empty");
    if (ens.n_forget() < 1) throw Error(ErrorCode::EmptyForgetSet, "forget set is empty");
    if (ens.n_retain() != cfg.n_retain || ens.n_forget() != cfg.n_forget) {
        throw Error(ErrorCode::ShapeError, "config set sizes do not match the ensemble");
    }
}

SymMatrix set_mean(const HessianEnsemble& ens, SetKind s) {
    const int n = ens.size(s);
    Matrix acc = Matrix::Zero(ens.dim(), ens.dim());
    for (int i = 0; i < n; ++i) {
        if (ens.rank_one()) {
            const auto& f = ens.factor(s, i);
            acc.noalias() += f.weight * f.vec * f.vec.transpose();
        } else {
            acc += ens.dense(s, i).mat();
        }
    }
    if (n > 0) acc /= static_cast<double>(n);
    return SymMatrix(std::move(acc));
}

} // namespace

SymMatrix mix_hessian(const HessianEnsemble& ens, const UnlearnConfig& cfg) {
    require_pairs(ens, cfg);
    Coefficients c = coefficients(cfg);
    return set_mean(ens, SetKind::Retain) * c.cp_r + set_mean(ens, SetKind::Forget) * c.cp_f;
}

double mix_hessian_lambda_max(const HessianEnsemble& ens, const UnlearnConfig& cfg) {
    require_pairs(ens, cfg);
    if (!ens.rank_one()) return matker::lambda_max(mix_hessian(ens, cfg));
    Coefficients c = coefficients(cfg);
    std::vector<RankOneFactor> all;
    std::vector<double> scales;
    for (const auto& f : ens.factors(SetKind::Retain)) {
        all.push_back(f);
        scales.push_back(c.cp_r / ens.n_retain());
    }
    for (const auto& f : ens.factors(SetKind::Forget)) {
        all.push_back(f);
        scales.push_back(c.cp_f / ens.n_forget());
    }
    return matker::lambda_max_factors(all, scales);
}

// ---- coherence ----

namespace {

CoherenceResult finish(Matrix s_entries, double max_lambda) {
    if (!(max_lambda > 0.0)) throw Error(ErrorCode::DegenerateEnsemble, "all Hessians are zero");
    CoherenceResult out;
    out.S = SymMatrix(std::move(s_entries));
    out.lambda_max_S = matker::lambda_max(out.S);
    out.max_pair_lambda = max_lambda;
    out.sigma = out.lambda_max_S / max_lambda;
    return out;
}

} // namespace

CoherenceResult single_coherence(const std::vector<SymMatrix>& hessians) {
    if (hessians.empty()) throw Error(ErrorCode::InvalidArgument, "no Hessians");
    const size_t n = hessians.size();
    std::vector<SymMatrix> roots;
    roots.reserve(n);
    double top = 0.0;
    for (const auto& h : hessians) {
        roots.push_back(matker::psd_sqrt(h));
        top = std::max(top, matker::lambda_max(h));
    }
    Matrix s(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = i; j < n; ++j) {
            double v = matker::frob_product(roots[i], roots[j]);
            s(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
            s(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = v;
        }
    }
    return finish(std::move(s), top);
}

CoherenceResult single_coherence(const std::vector<RankOneFactor>& hessians) {
    if (hessians.empty()) throw Error(ErrorCode::InvalidArgument, "no Hessians");
    const size_t n = hessians.size();
    Matrix s(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    double top = 0.0;
    for (size_t i = 0; i < n; ++i) {
        top = std::max(top, hessians[i].lambda_max());
        for (size_t j = i; j < n; ++j) {
            double v = std::sqrt(std::max(0.0, matker::trace_product(hessians[i], hessians[j])));
            s(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
            s(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = v;
        }
    }
    return finish(std::move(s), top);
}

namespace {

Matrix squared_dots(const std::vector<RankOneFactor>& a, const std::vector<RankOneFactor>& b) {
    Matrix g(static_cast<Eigen::Index>(a.size()), static_cast<Eigen::Index>(b.size()));
    for (size_t i = 0; i < a.size(); ++i) {
        for (size_t j = 0; j < b.size(); ++j) {
            double d = a[i].vec.dot(b[j].vec);
            g(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = d * d;
        }
    }
    return g;
}

CoherenceResult mix_factor_path(const HessianEnsemble& ens, const Coefficients& c, int workers) {
    const int nr = ens.n_retain(), nf = ens.n_forget();
    const auto& fr = ens.factors(SetKind::Retain);
    const auto& ff = ens.factors(SetKind::Forget);
    const Matrix grr = squared_dots(fr, fr);
    const Matrix gff = squared_dots(ff, ff);
    const Matrix grf = squared_dots(fr, ff);
    Vector a(nr), b(nf);
    for (int r = 0; r < nr; ++r) a(r) = c.cp_r * fr[static_cast<size_t>(r)].weight;
    for (int f = 0; f < nf; ++f) b(f) = c.cp_f * ff[static_cast<size_t>(f)].weight;

    const long np = static_cast<long>(nr) * nf;
    Matrix s(np, np);
    std::vector<double> pair_lambda(static_cast<size_t>(np));
    parallel_for(np, workers, [&](long p) {
        const int r = static_cast<int>(p / nf), f = static_cast<int>(p % nf);
        for (long q = 0; q < np; ++q) {
            const int r2 = static_cast<int>(q / nf), f2 = static_cast<int>(q % nf);
            double t = a(r) * a(r2) * grr(r, r2) + a(r) * b(f2) * grf(r, f2) + b(f) * a(r2) * grf(r2, f) +
                       b(f) * b(f2) * gff(f, f2);
            s(p, q) = std::sqrt(std::max(0.0, t));
        }
        const RankOneFactor pair[2] = {fr[static_cast<size_t>(r)], ff[static_cast<size_t>(f)]};
        const double scales[2] = {c.cp_r, c.cp_f};
        pair_lambda[static_cast<size_t>(p)] = matker::lambda_max_factors(pair, scales);
    });
    // S(p,q) and S(q,p) are computed from the same four terms in swapped order;
    // the SymMatrix constructor evens out the last-bit difference.
    return finish(std::move(s), *std::max_element(pair_lambda.begin(), pair_lambda.end()));
}

CoherenceResult mix_dense_path(const HessianEnsemble& ens, const Coefficients& c, bool literal, int workers) {
    const int nr = ens.n_retain(), nf = ens.n_forget();
    const long np = static_cast<long>(nr) * nf;
    std::vector<SymMatrix> retain, forget;
    for (int r = 0; r < nr; ++r) retain.push_back(ens.dense(SetKind::Retain, r));
    for (int f = 0; f < nf; ++f) forget.push_back(ens.dense(SetKind::Forget, f));

    std::vector<SymMatrix> mats(static_cast<size_t>(np));
    std::vector<double> pair_lambda(static_cast<size_t>(np));
    parallel_for(np, workers, [&](long p) {
        const auto r = static_cast<size_t>(p / nf), f = static_cast<size_t>(p % nf);
        SymMatrix d = retain[r] * c.cp_r + forget[f] * c.cp_f;
        pair_lambda[static_cast<size_t>(p)] = matker::lambda_max(d);
        mats[static_cast<size_t>(p)] = literal ? matker::psd_sqrt(d) : d;
    });

    Matrix s(np, np);
    parallel_for(np, workers, [&](long p) {
        for (long q = p; q < np; ++q) {
            const auto& x = mats[static_cast<size_t>(p)];
            const auto& y = mats[static_cast<size_t>(q)];
            s(p, q) = literal ? matker::frob_product(x, y) : std::sqrt(std::max(0.0, matker::trace_product(x, y)));
        }
    });
    for (long p = 0; p < np; ++p) {
        for (long q = 0; q < p; ++q) s(p, q) = s(q, p);
    }
    return finish(std::move(s), *std::max_element(pair_lambda.begin(), pair_lambda.end()));
}

} // namespace

CoherenceResult mix_coherence(const HessianEnsemble& ens, const UnlearnConfig& cfg, const CoherenceOptions& opts) {
    require_pairs(ens, cfg);
    const long np = static_cast<long>(ens.n_retain()) * ens.n_forget();
    if (np > opts.max_pairs) {
        throw Error(ErrorCode::TooManyPairs, std::to_string(np) + " pairs exceed max_pairs=" +
                                                 std::to_string(opts.max_pairs));
    }
    Coefficients c = coefficients(cfg);

    CoherencePath path = opts.path;
    if (path == CoherencePath::automatic) path = ens.rank_one() ? CoherencePath::factor : CoherencePath::literal;
    if (path == CoherencePath::factor && !ens.rank_one()) {
        throw Error(ErrorCode::InvalidArgument, "factor path needs a rank-one ensemble");
    }

    CoherenceResult out = path == CoherencePath::factor
                              ? mix_factor_path(ens, c, opts.workers)
                              : mix_dense_path(ens, c, path == CoherencePath::literal, opts.workers);
    out.lambda_max_D = mix_hessian_lambda_max(ens, cfg);
    return out;
}

} // namespace ustab
