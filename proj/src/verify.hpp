#pragma once

#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "dynsim.hpp"

namespace ustab::verify {

struct CriterionResult {
    int id = 0;
    std::string name;
    bool pass = false;
    std::string detail;
    std::vector<std::string> notes; // printed indented above the PASS/FAIL line
    double seconds = 0.0;
};

using DivThreshold = std::function<double(const UnlearnConfig&, double sigma)>;
using ConvThreshold = std::function<double(const UnlearnConfig&, double sigma, ConvergenceForm)>;

struct Thresholds {
    DivThreshold div = divergence_threshold;
    ConvThreshold conv = convergence_threshold;
};

struct BracketRow {
    int batch = 0;
    double sigma_div = 0.0;          // divergence predicted for sigma at or below
    double last_diverge = 0.0;       // largest sigma with an empirical DIVERGE (NaN if none)
    double first_converge = 0.0;     // smallest sigma with an empirical CONVERGE (NaN if none)
    double sigma_conv_statement = 0.0;
    double sigma_conv_proof = 0.0;
    int violations_div = 0;
    int violations_statement = 0;
    int violations_proof = 0;
};

struct BracketReport {
    std::vector<BracketRow> rows;
    int checked_cells = 0;
    int violations_div = 0;
    int violations_statement = 0;
    int violations_proof = 0;
    bool pass() const {
        return checked_cells > 0 && violations_div == 0 && (violations_statement == 0 || violations_proof == 0);
    }
};

// Cells with B >= min_batch and defined thresholds: lambda_D >= thr_div must diverge,
// lambda_D <= thr_conv must converge (for at least one convergence form).
BracketReport check_bracketing(const std::vector<SweepCell>& cells, const SweepParams& params,
                               const Thresholds& thr = {}, int min_batch = 10);

struct Options {
    bool full = true;
    uint64_t seed = 42;
    int workers = 1;
    Thresholds thresholds; // swapped out by the mutation fixture
    std::vector<int> only; // empty -> every criterion
};

SweepParams bracketing_params(double eta, const Options& o);

CriterionResult bracketing(const Options& o);
CriterionResult bound_orderings(const Options& o);
CriterionResult construction_fidelity(const Options& o);
CriterionResult monte_carlo_agreement(const Options& o);
CriterionResult cnn_numerics(const Options& o);
CriterionResult memorization_overlap(const Options& o);
CriterionResult coherence_trend(const Options& o);
CriterionResult determinism(const Options& o);

// Runs the selected criteria, prints one PASS/FAIL line each; true when all pass.
bool run_all(const Options& o, std::ostream& out, std::vector<CriterionResult>* results = nullptr);

void print_result(const CriterionResult& r, std::ostream& out);

} // namespace ustab::verify
