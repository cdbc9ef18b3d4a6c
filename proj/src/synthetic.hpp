#pragma once

#include <cstdint>
#include <random>

#include "coherence.hpp"

namespace ustab {

struct QConstructionSpec {
    int n_retain = 50;
    int n_forget = 50;
    int q = 25;
    int dim = 0; // 0 -> max(n_r, n_f) - q + 2
};

int q_construction_dim(const QConstructionSpec& spec);

// First q members of each set are m e1 e1^T, the rest m e_{i-q+1} e_{i-q+1}^T, m = 2n/q.
HessianEnsemble build_q_construction(const QConstructionSpec& spec);

struct MatchingSpec {
    double sigma_target = 0.0;
    double lambda1_D_target = 0.0;
    UnlearnConfig config;
    int dim = 2;
};

inline constexpr double kIntegralityTol = 1e-9;

// Retain: q = sigma/n_f copies of m e1 e1^T then zeros; forget all zero.
HessianEnsemble build_matching_construction(const MatchingSpec& spec);

// Unit-direction rank-one members with weights uniform in [0, max_weight].
HessianEnsemble random_rank_one_ensemble(int dim, int n_retain, int n_forget, double max_weight, std::mt19937_64& rng);

} // namespace ustab
