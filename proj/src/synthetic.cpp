#include "synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace ustab {

using matker::RankOneFactor;
using matker::Vector;

namespace {

RankOneFactor basis_factor(int dim, int axis, double weight) {
    RankOneFactor f;
    f.vec = Vector::Zero(dim);
    f.vec(axis) = 1.0;
    f.weight = weight;
    return f;
}

std::vector<RankOneFactor> q_set(int n, int q, int dim) {
    const double m = 2.0 * n / q;
    std::vector<RankOneFactor> out;
    out.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) out.push_back(basis_factor(dim, i < q ? 0 : i - q + 1, m));
    return out;
}

} // namespace

int q_construction_dim(const QConstructionSpec& spec) {
    return spec.dim > 0 ? spec.dim : std::max(spec.n_retain, spec.n_forget) - spec.q + 2;
}

HessianEnsemble build_q_construction(const QConstructionSpec& spec) {
    if (spec.n_retain < 1 || spec.n_forget < 1) throw Error(ErrorCode::InvalidArgument, "set sizes must be >= 1");
    if (spec.q < 1 || spec.q > std::min(spec.n_retain, spec.n_forget)) {
        throw Error(ErrorCode::InvalidArgument, "Q must lie in [1, min(n_r, n_f)]");
    }
    const int dim = q_construction_dim(spec);
    const int need = std::max(spec.n_retain, spec.n_forget) - spec.q + 1;
    if (dim < need) {
        throw Error(ErrorCode::ShapeError, "dim " + std::to_string(dim) + " < n - Q + 1 = " + std::to_string(need));
    }
    return HessianEnsemble::from_factors(dim, q_set(spec.n_retain, spec.q, dim), q_set(spec.n_forget, spec.q, dim));
}

HessianEnsemble build_matching_construction(const MatchingSpec& spec) {
    const UnlearnConfig& cfg = spec.config;
    cfg.validate();
    if (cfg.n_forget < 1) throw Error(ErrorCode::EmptyForgetSet, "matching construction needs n_f >= 1");
    if (!(spec.sigma_target > 0.0) || !(spec.lambda1_D_target > 0.0)) {
        throw Error(ErrorCode::InvalidArgument, "targets must be positive");
    }
    if (spec.dim < 1) throw Error(ErrorCode::ShapeError, "dim must be >= 1");
    Coefficients c = coefficients(cfg);
    if (c.cp_r <= 0.0) throw Error(ErrorCode::NoStochasticity, "C'_r = 0");

    const double ratio = spec.sigma_target / cfg.n_forget;
    const double q_real = std::round(ratio);
    if (std::abs(ratio - q_real) > kIntegralityTol || q_real < 1 || q_real > cfg.n_retain) {
        throw Error(ErrorCode::InfeasibleSpec, "sigma/n_f = " + std::to_string(ratio) +
                                                   " is not an integer in [1, n_r]");
    }
    const int q = static_cast<int>(q_real);
    const double m = spec.lambda1_D_target * cfg.n_retain / (c.cp_r * q);

    std::vector<RankOneFactor> retain, forget;
    for (int i = 0; i < cfg.n_retain; ++i) retain.push_back(basis_factor(spec.dim, 0, i < q ? m : 0.0));
    for (int i = 0; i < cfg.n_forget; ++i) forget.push_back(basis_factor(spec.dim, 0, 0.0));
    return HessianEnsemble::from_factors(spec.dim, std::move(retain), std::move(forget));
}

HessianEnsemble random_rank_one_ensemble(int dim, int n_retain, int n_forget, double max_weight,
                                         std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, max_weight);
    auto draw = [&](int n) {
        std::vector<RankOneFactor> out;
        for (int i = 0; i < n; ++i) {
            RankOneFactor f;
            f.vec = Vector(dim);
            for (int k = 0; k < dim; ++k) f.vec(k) = normal(rng);
            double nrm = f.vec.norm();
            if (nrm > 0) f.vec /= nrm;
            f.weight = unif(rng);
            out.push_back(std::move(f));
        }
        return out;
    };
    auto r = draw(n_retain);
    auto f = draw(n_forget);
    return HessianEnsemble::from_factors(dim, std::move(r), std::move(f));
}

} // namespace ustab
