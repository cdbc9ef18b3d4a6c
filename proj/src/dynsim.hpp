#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "stability.hpp"

namespace ustab {

using Rng = std::mt19937_64;

std::vector<char> bernoulli_mask(int n, int batch, Rng& rng);

// w - eta[(1-alpha)/B sum_{retain in mask} H w - alpha/B sum_{forget in mask} H w]
matker::Vector unlearn_step(const matker::Vector& w, const HessianEnsemble& ens, const std::vector<char>& retain_mask,
                            const std::vector<char>& forget_mask, const UnlearnConfig& cfg);

inline constexpr double kDefaultDivergenceRatio = 1000.0;

struct TrajectoryOptions {
    int steps = 1000;
    double divergence_ratio = kDefaultDivergenceRatio;
    bool early_exit = true;
};

struct Trajectory {
    std::vector<double> norms; // ||w_k||, k = 0..steps
    bool diverged = false;
    bool overflow = false;
    uint64_t seed = 0;
};

// w_0 ~ N(0, I); fresh masks each step.
Trajectory run_trajectory(const HessianEnsemble& ens, const UnlearnConfig& cfg, const TrajectoryOptions& opts,
                          uint64_t seed);

enum class Outcome { Diverge, Converge };
const char* outcome_name(Outcome o);

struct MajorityResult {
    int repeats = 0;
    int n_diverged = 0;
    Outcome outcome = Outcome::Converge;
};

// Ties count as Diverge. Repeat t runs with derive_seed(seed, t).
MajorityResult majority_outcome(const HessianEnsemble& ens, const UnlearnConfig& cfg, const TrajectoryOptions& opts,
                                int repeats, uint64_t seed);

struct MomentEstimate {
    int k = 0;
    double mean = 0.0;   // mean of ||w_k||^2
    double std_error = 0.0;
};

// Monte-Carlo E||w_k||^2 over independent trajectories (no early exit).
std::vector<MomentEstimate> sample_second_moments(const HessianEnsemble& ens, const UnlearnConfig& cfg,
                                                  const std::vector<int>& ks, int trajectories, uint64_t seed,
                                                  int workers = 1);

struct SweepParams {
    double eta = 0.5;
    double alpha = 0.1;
    int n_retain = 50;
    int n_forget = 50;
    std::vector<int> q_list{1, 2, 5, 10, 25, 50};
    std::vector<int> b_list{2, 5, 10, 20, 40};
    int steps = 1000;
    int repeats = 10;
    uint64_t seed = 42;
    double divergence_ratio = kDefaultDivergenceRatio;
    int dim = 0; // 0 -> construction default
    int workers = 1;
};

struct SweepCell {
    int q = 0;
    int batch = 0;
    double sigma = 0.0; // NaN when undefined
    double lambda_max_D = 0.0;
    double thr_div = 0.0;
    double thr_conv_statement = 0.0;
    double thr_conv_proof = 0.0;
    int n_repeats = 0;
    int n_diverged = 0;
    Outcome outcome = Outcome::Converge;
};

// Cells ordered Q-outer, B-inner; cell seed = derive_seed(seed, ordinal).
std::vector<SweepCell> boundary_sweep(const SweepParams& params);

inline const char* kSweepHeader =
    "q,batch,sigma,lambda_max_D,thr_div,thr_conv_statement,thr_conv_proof,n_repeats,n_diverged,outcome";

std::string sweep_csv(const std::vector<SweepCell>& cells);

// Formats %.12g, or nothing for NaN.
std::string csv_number(double v);

} // namespace ustab
