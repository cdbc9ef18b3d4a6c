#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "coherence.hpp"

namespace ustab::cnn {

using matker::Matrix;
using matker::Vector;
using Rng = std::mt19937_64;

struct Sample {
    Vector x1, x2;
    int y = 1;
    int signal_slot = 1; // which patch holds y*mu
};

struct DataParams {
    int n = 50;
    int d = 500;
    double mu_norm = 3.0;
    double noise_sigma = 1.0;
};

struct Dataset {
    std::vector<Sample> samples;
    Vector mu;
    double noise_sigma = 1.0;
    double snr = 0.0;
};

inline double snr_of(double mu_norm, double noise_sigma, int d) { return mu_norm / (noise_sigma * std::sqrt(double(d))); }

Sample draw_sample(const Vector& mu, double noise_sigma, Rng& rng);
Dataset generate_dataset(const DataParams& p, Rng& rng);

struct Model {
    Matrix w_pos; // m x d, filters with output sign +1
    Matrix w_neg; // m x d, filters with output sign -1

    int m() const { return static_cast<int>(w_pos.rows()); }
    int d() const { return static_cast<int>(w_pos.cols()); }
    static Model zeros(int m, int d);
};

double forward(const Model& model, const Vector& x1, const Vector& x2);
double sample_loss(const Model& model, const Sample& s);
double mean_loss(const Model& model, const std::vector<Sample>& samples);

struct Gradient {
    Matrix g_pos, g_neg;
};

struct LossGrad {
    double loss = 0.0;
    Gradient grad;
};

// gradient of a single sample's logistic loss
Gradient sample_grad(const Model& model, const Sample& s);
// (1/n) sum_i loss_i and its gradient
LossGrad loss_and_grad(const Model& model, const std::vector<Sample>& samples);

struct TrainParams {
    int m = 10;
    double lr = 0.1;
    int epochs = 100;
    double init_scale = 0.01;
};

inline constexpr double kTrainLossTarget = 0.1;

struct TrainResult {
    Model model;
    double train_loss = 0.0;
    bool above_target = false; // final loss > 0.1
};

TrainResult train_full_batch(const Dataset& data, const TrainParams& p, Rng& rng);

// Fraction of fresh samples with sign(f) != y; sign(0) counts as an error.
double test_error(const Model& model, const Dataset& like, int n_test, Rng& rng);

// H_i = ell2 * v v^T with v stacked (w_pos rows, then w_neg rows), length 2md.
struct HessianFactor {
    Vector v;
    double ell2 = 0.0;

    matker::RankOneFactor as_factor() const { return {v, ell2}; }
};

HessianFactor sample_hessian(const Model& model, const Sample& s);

struct UnlearnParams {
    int n_forget = 25;
    int batch = 5;
    double lr = 0.1;
    double alpha = 0.3;
    int steps = 90;
    bool fixed_size_batches = false; // default: Bernoulli(batch/n) per set
};

struct UnlearnTrace {
    std::vector<double> forget_loss; // mean forget loss before step 1 and after each step
    bool diverged = false;
    Model model;
};

UnlearnTrace unlearn_cnn(const Model& model, const std::vector<Sample>& retain, const std::vector<Sample>& forget,
                         const UnlearnParams& p, Rng& rng);

struct HeatmapParams {
    std::vector<double> signal_grid{0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0};
    std::vector<int> d_grid{100, 300, 500, 700, 900, 1100};
    int repeats = 20;
    uint64_t seed = 42;
    int n = 50;
    double noise_sigma = 1.0;
    int n_test = 1000;
    TrainParams train;
    UnlearnParams unlearn;
    int workers = 1;
};

struct HeatmapCell {
    double signal_norm = 0.0;
    int d = 0;
    double snr = 0.0;
    double train_loss = 0.0; // NaN when every repeat failed
    double test_error = 0.0;
    double forget_loss = 0.0;
    int n_failed = 0;
};

// Cells ordered signal-outer, d-inner; repeat t of cell c uses derive_seed(seed, c*repeats + t).
std::vector<HeatmapCell> snr_heatmap(const HeatmapParams& p);

inline const char* kHeatmapHeader = "signal_norm,d,snr,train_loss,test_error,forget_loss,n_failed";
std::string heatmap_csv(const std::vector<HeatmapCell>& cells);

struct CurveParams {
    std::vector<double> signal_grid{0.5, 1.0, 2.0, 3.0, 5.0};
    int d = 100;
    int n_retain = 10;
    int n_forget = 10;
    int repeats = 20;
    uint64_t seed = 42;
    double noise_sigma = 1.0;
    double alpha = 0.3;
    int batch = 5;
    TrainParams train;
    int workers = 1;
};

struct CurvePoint {
    double signal_norm = 0.0;
    double snr = 0.0;
    double lambda_max_S = 0.0;    // mean over repeats
    double max_pair_lambda = 0.0; // mean over repeats
    double ratio = 0.0;           // mean of per-repeat lambda_max_S / max_pair_lambda
    int n_used = 0;
    int n_skipped = 0;
};

// Points whose every repeat is degenerate are kept with n_used == 0 and omitted from the CSV rows.
std::vector<CurvePoint> coherence_ratio_curve(const CurveParams& p);

inline const char* kCurveHeader = "snr,lambda_max_S,max_pair_lambda,ratio";
std::string curve_csv(const std::vector<CurvePoint>& points);

double spearman(const std::vector<double>& a, const std::vector<double>& b);

} // namespace ustab::cnn
