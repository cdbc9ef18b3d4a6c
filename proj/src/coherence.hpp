#pragma once

#include <vector>

#include "matker.hpp"

namespace ustab {

struct UnlearnConfig {
    double eta = 0.5;
    double alpha = 0.1;
    int batch = 10;
    int n_retain = 50;
    int n_forget = 50;

    void validate() const;
};

struct Coefficients {
    double c_r = 0.0;
    double c_f = 0.0;
    double cp_r = 0.0; // C'_r
    double cp_f = 0.0; // C'_f
};

// C_r, C_f only; never throws on the full-batch case.
Coefficients noise_coefficients(const UnlearnConfig& cfg);
// All four, NoStochasticity when C_r == C_f == 0.
Coefficients coefficients(const UnlearnConfig& cfg);

enum class SetKind { Retain, Forget };

// Per-sample Hessians, stored either dense or as weight * v v^T factors.
class HessianEnsemble {
public:
    static HessianEnsemble from_dense(std::vector<matker::SymMatrix> retain, std::vector<matker::SymMatrix> forget);
    static HessianEnsemble from_factors(int dim, std::vector<matker::RankOneFactor> retain,
                                        std::vector<matker::RankOneFactor> forget);

    int dim() const { return dim_; }
    int n_retain() const { return static_cast<int>(rank_one_ ? retain_r1_.size() : retain_.size()); }
    int n_forget() const { return static_cast<int>(rank_one_ ? forget_r1_.size() : forget_.size()); }
    int size(SetKind s) const { return s == SetKind::Retain ? n_retain() : n_forget(); }
    bool rank_one() const { return rank_one_; }

    matker::SymMatrix dense(SetKind s, int i) const;
    const matker::RankOneFactor& factor(SetKind s, int i) const;
    const std::vector<matker::RankOneFactor>& factors(SetKind s) const {
        return s == SetKind::Retain ? retain_r1_ : forget_r1_;
    }

    // H_i w without densifying
    matker::Vector apply(SetKind s, int i, const matker::Vector& w) const;
    // H_i X H_i
    matker::Matrix sandwich(SetKind s, int i, const matker::Matrix& x) const;

    void check_psd(double tol = matker::kDefaultPsdTol) const;

private:
    int dim_ = 0;
    bool rank_one_ = false;
    std::vector<matker::SymMatrix> retain_, forget_;
    std::vector<matker::RankOneFactor> retain_r1_, forget_r1_;
};

struct CoherenceResult {
    matker::SymMatrix S;
    double lambda_max_S = 0.0;
    double sigma = 0.0;
    double max_pair_lambda = 0.0;
    double lambda_max_D = 0.0; // 0 for single-set results
};

enum class CoherencePath {
    automatic, // factor for rank-one ensembles, literal otherwise
    literal,   // explicit PSD square roots and Frobenius products
    trace,     // sqrt(Tr(D D')) on dense D_rf
    factor,    // rank-one Gram identities
};

struct CoherenceOptions {
    CoherencePath path = CoherencePath::automatic;
    long max_pairs = 10000;
    int workers = 1;
};

matker::SymMatrix mix_hessian_pair(const matker::SymMatrix& h_r, const matker::SymMatrix& h_f,
                                   const UnlearnConfig& cfg);
matker::SymMatrix mix_hessian(const HessianEnsemble& ens, const UnlearnConfig& cfg);
double mix_hessian_lambda_max(const HessianEnsemble& ens, const UnlearnConfig& cfg);

CoherenceResult single_coherence(const std::vector<matker::SymMatrix>& hessians);
CoherenceResult single_coherence(const std::vector<matker::RankOneFactor>& hessians);

CoherenceResult mix_coherence(const HessianEnsemble& ens, const UnlearnConfig& cfg,
                              const CoherenceOptions& opts = {});

inline int pair_ordinal(int r, int f, int n_f) { return r * n_f + f; }

} // namespace ustab
