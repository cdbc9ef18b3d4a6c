#pragma once

#include <string>
#include <utility>
#include <vector>

#include "coherence.hpp"

namespace ustab {

std::pair<matker::SymMatrix, matker::SymMatrix> full_hessians(const HessianEnsemble& ens);

struct JOperator {
    matker::SymMatrix matrix; // I - eta(1-alpha) H_R + eta alpha H_F
    double eta = 0.0;
    double alpha = 0.0;

    // 1 - max |lambda(J)|; positive iff J is a strict contraction
    double spectral_epsilon() const;
    bool spectral_bounded(double epsilon) const;
    // Tr(J^{2k})
    double trace_even_power(int k) const;
};

JOperator make_j_operator(const HessianEnsemble& ens, const UnlearnConfig& cfg);

struct NoiseSequence {
    std::vector<double> traces;            // traces[k] = Tr(N_k), k = 0..k_max
    std::vector<matker::SymMatrix> matrices; // N_0..N_min(k_max, keep)
};

inline constexpr int kDefaultKeepNoise = 50;
inline constexpr int kKeepNoiseMaxDim = 64;

// N_0 = I, N_k = C_f sum_f H N_{k-1} H + C_r sum_r H N_{k-1} H
NoiseSequence noise_recurrence(const HessianEnsemble& ens, const UnlearnConfig& cfg, int k_max,
                               int keep = kDefaultKeepNoise);

// Tr(V_k), k = 0..k_max, with V_0 = I. Exact under independent Bernoulli masks.
std::vector<double> exact_second_moment(const HessianEnsemble& ens, const UnlearnConfig& cfg, int k_max);

// Tr(J^{2k}) + Tr(N_k), k >= 1
double lower_bound_trace(const JOperator& j, const NoiseSequence& noise, int k);

enum class BoundTerms {
    through_k, // r = 0..k
    before_k,  // r = 0..k-1
};

double upper_bound_trace(const NoiseSequence& noise, double epsilon, int k,
                         BoundTerms terms = BoundTerms::through_k);

// d (1 - eps + eps^2)^k, valid whenever Tr(N_1) <= eps and eps in (0,1]
double decay_bound_trace(int dim, double epsilon, int k);

enum class ConvergenceForm { statement, proof };

double divergence_threshold(const UnlearnConfig& cfg, double sigma);
double convergence_threshold(const UnlearnConfig& cfg, double sigma, ConvergenceForm form);

// Smallest sigma at which lambda_max_D would meet each threshold. Inf when no
// finite sigma does.
double sigma_at_divergence(const UnlearnConfig& cfg, double lambda_max_D);
double sigma_at_convergence(const UnlearnConfig& cfg, double lambda_max_D, ConvergenceForm form);

enum class Classification { PredictDiverge, ConvergencePossible, Indeterminate };

const char* classification_name(Classification c);

Classification classify(double lambda_max_D, double thr_div, double thr_conv);
Classification classify(double lambda_max_D, const UnlearnConfig& cfg, double sigma,
                        ConvergenceForm form = ConvergenceForm::statement);

struct StabilityReport {
    double lambda_max_D = 0.0;
    double sigma = 0.0;
    double thr_div = 0.0;
    double thr_conv_statement = 0.0;
    double thr_conv_proof = 0.0;
    Classification classification = Classification::Indeterminate;

    std::string to_record() const;
};

StabilityReport stability_report(const HessianEnsemble& ens, const UnlearnConfig& cfg,
                                 const CoherenceOptions& opts = {},
                                 ConvergenceForm form = ConvergenceForm::statement);

} // namespace ustab
