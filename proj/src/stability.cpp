#include "stability.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

namespace ustab {

using matker::Matrix;
using matker::SymMatrix;

namespace {

SymMatrix mean_of(const HessianEnsemble& ens, SetKind s) {
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

// C_r sum_r H X H + C_f sum_f H X H
Matrix noise_map(const HessianEnsemble& ens, const Coefficients& c, const Matrix& x) {
    Matrix acc = Matrix::Zero(ens.dim(), ens.dim());
    if (c.c_r > 0.0) {
        Matrix part = Matrix::Zero(ens.dim(), ens.dim());
        for (int i = 0; i < ens.n_retain(); ++i) part += ens.sandwich(SetKind::Retain, i, x);
        acc += c.c_r * part;
    }
    if (c.c_f > 0.0) {
        Matrix part = Matrix::Zero(ens.dim(), ens.dim());
        for (int i = 0; i < ens.n_forget(); ++i) part += ens.sandwich(SetKind::Forget, i, x);
        acc += c.c_f * part;
    }
    return acc;
}

void check_sizes(const HessianEnsemble& ens, const UnlearnConfig& cfg) {
    cfg.validate();
    if (ens.n_retain() != cfg.n_retain || ens.n_forget() != cfg.n_forget) {
        throw Error(ErrorCode::ShapeError, "config set sizes do not match the ensemble");
    }
}

void require_threshold_domain(const UnlearnConfig& cfg) {
    cfg.validate();
    if (cfg.n_forget < 1) throw Error(ErrorCode::UndefinedThreshold, "threshold needs a forget set");
    if (cfg.batch >= cfg.n_retain || cfg.batch >= cfg.n_forget) {
        throw Error(ErrorCode::UndefinedThreshold, "threshold needs B < n_r and B < n_f");
    }
}

double divergence_denominator(const UnlearnConfig& cfg) {
    const double b = cfg.batch, nr = cfg.n_retain, nf = cfg.n_forget;
    return (1 - cfg.alpha) * nf * std::sqrt(nr / b - 1) + cfg.alpha * nr * std::sqrt(nf / b - 1);
}

double a_term(const UnlearnConfig& cfg) {
    return cfg.n_forget * (static_cast<double>(cfg.n_retain) / cfg.batch - 1);
}

constexpr double kInf = std::numeric_limits<double>::infinity();

} // namespace

std::pair<SymMatrix, SymMatrix> full_hessians(const HessianEnsemble& ens) {
    if (ens.n_retain() < 1) throw Error(ErrorCode::EmptyRetainSet, "retain set is empty");
    return {mean_of(ens, SetKind::Retain), mean_of(ens, SetKind::Forget)};
}

double JOperator::spectral_epsilon() const {
    auto eig = matker::sym_eig(matrix);
    double rho = std::max(std::abs(eig.values(0)), std::abs(eig.values(eig.values.size() - 1)));
    return 1.0 - rho;
}

bool JOperator::spectral_bounded(double epsilon) const {
    return spectral_epsilon() >= epsilon - 1e-12;
}

double JOperator::trace_even_power(int k) const {
    auto eig = matker::sym_eig(matrix);
    double t = 0.0;
    for (Eigen::Index i = 0; i < eig.values.size(); ++i) t += std::pow(eig.values(i) * eig.values(i), k);
    return t;
}

JOperator make_j_operator(const HessianEnsemble& ens, const UnlearnConfig& cfg) {
    check_sizes(ens, cfg);
    auto [hr, hf] = full_hessians(ens);
    JOperator j;
    j.eta = cfg.eta;
    j.alpha = cfg.alpha;
    j.matrix = SymMatrix::identity(ens.dim()) - hr * (cfg.eta * (1 - cfg.alpha)) + hf * (cfg.eta * cfg.alpha);
    return j;
}

NoiseSequence noise_recurrence(const HessianEnsemble& ens, const UnlearnConfig& cfg, int k_max, int keep) {
    check_sizes(ens, cfg);
    if (k_max < 0) throw Error(ErrorCode::InvalidArgument, "k_max must be >= 0");
    Coefficients c = noise_coefficients(cfg);
    if (c.c_r <= 0.0 && c.c_f <= 0.0) throw Error(ErrorCode::NoStochasticity, "C_r = C_f = 0");
    const bool store = ens.dim() <= kKeepNoiseMaxDim;

    NoiseSequence out;
    Matrix n = Matrix::Identity(ens.dim(), ens.dim());
    for (int k = 0; k <= k_max; ++k) {
        if (k > 0) n = noise_map(ens, c, n);
        SymMatrix sym(n);
        out.traces.push_back(sym.trace());
        if (store && k <= keep) out.matrices.push_back(sym);
        n = sym.mat();
    }
    return out;
}

std::vector<double> exact_second_moment(const HessianEnsemble& ens, const UnlearnConfig& cfg, int k_max) {
    if (k_max < 0) throw Error(ErrorCode::InvalidArgument, "k_max must be >= 0");
    JOperator j = make_j_operator(ens, cfg);
    Coefficients c = noise_coefficients(cfg);
    const Matrix& jm = j.matrix.mat();

    std::vector<double> out;
    Matrix v = Matrix::Identity(ens.dim(), ens.dim());
    out.push_back(v.trace());
    for (int k = 1; k <= k_max; ++k) {
        Matrix next = jm * v * jm + noise_map(ens, c, v);
        v = 0.5 * (next + next.transpose());
        out.push_back(v.trace());
    }
    return out;
}

double lower_bound_trace(const JOperator& j, const NoiseSequence& noise, int k) {
    if (k < 1 || static_cast<size_t>(k) >= noise.traces.size()) {
        throw Error(ErrorCode::InvalidArgument, "noise traces do not reach k");
    }
    return j.trace_even_power(k) + noise.traces[static_cast<size_t>(k)];
}

double upper_bound_trace(const NoiseSequence& noise, double epsilon, int k, BoundTerms terms) {
    if (!(epsilon > 0.0 && epsilon <= 1.0)) {
        throw Error(ErrorCode::BoundInapplicable, "J is not a strict contraction (epsilon <= 0)");
    }
    if (k < 0) throw Error(ErrorCode::InvalidArgument, "k must be >= 0");
    const int last = terms == BoundTerms::through_k ? k : k - 1;
    if (last >= static_cast<int>(noise.traces.size())) {
        throw Error(ErrorCode::InvalidArgument, "noise traces do not reach the requested k");
    }
    const double q = (1 - epsilon) * (1 - epsilon);
    double binom = 1.0; // C(k, r)
    double total = 0.0;
    for (int r = 0; r <= last; ++r) {
        double tr = noise.traces[static_cast<size_t>(r)];
        if (tr != 0.0) {
            if (!std::isfinite(binom)) return kInf;
            total += binom * std::pow(q, k - r) * tr;
        }
        binom = binom * (k - r) / (r + 1);
    }
    return std::isfinite(total) ? total : kInf;
}

double decay_bound_trace(int dim, double epsilon, int k) {
    if (!(epsilon > 0.0 && epsilon <= 1.0)) {
        throw Error(ErrorCode::BoundInapplicable, "J is not a strict contraction (epsilon <= 0)");
    }
    return dim * std::pow(1 - epsilon + epsilon * epsilon, k);
}

double divergence_threshold(const UnlearnConfig& cfg, double sigma) {
    require_threshold_domain(cfg);
    return std::sqrt(2.0) * sigma / (cfg.eta * divergence_denominator(cfg));
}

double convergence_threshold(const UnlearnConfig& cfg, double sigma, ConvergenceForm form) {
    require_threshold_domain(cfg);
    Coefficients c = coefficients(cfg);
    const double a = a_term(cfg);
    if (form == ConvergenceForm::statement) {
        if (c.cp_r <= 0.0) return kInf;
        return 2 * sigma / (cfg.eta * c.cp_r * (sigma + a));
    }
    return (2 * sigma / cfg.eta) * c.cp_r * (1 - cfg.alpha) / (sigma + a);
}

double sigma_at_divergence(const UnlearnConfig& cfg, double lambda_max_D) {
    require_threshold_domain(cfg);
    return lambda_max_D * cfg.eta * divergence_denominator(cfg) / std::sqrt(2.0);
}

double sigma_at_convergence(const UnlearnConfig& cfg, double lambda_max_D, ConvergenceForm form) {
    require_threshold_domain(cfg);
    Coefficients c = coefficients(cfg);
    const double a = a_term(cfg);
    const double lam = lambda_max_D;
    if (form == ConvergenceForm::statement) {
        double den = 2 - lam * cfg.eta * c.cp_r;
        if (den <= 0.0) return kInf;
        return lam * cfg.eta * c.cp_r * a / den;
    }
    double den = 2 * c.cp_r * (1 - cfg.alpha) / cfg.eta - lam;
    if (den <= 0.0) return kInf;
    return lam * a / den;
}

const char* classification_name(Classification c) {
    switch (c) {
    case Classification::PredictDiverge: return "PredictDiverge";
    case Classification::ConvergencePossible: return "ConvergencePossible";
    case Classification::Indeterminate: return "Indeterminate";
    }
    return "Indeterminate";
}

Classification classify(double lambda_max_D, double thr_div, double thr_conv) {
    if (lambda_max_D >= thr_div) return Classification::PredictDiverge;
    if (lambda_max_D <= thr_conv) return Classification::ConvergencePossible;
    return Classification::Indeterminate;
}

Classification classify(double lambda_max_D, const UnlearnConfig& cfg, double sigma, ConvergenceForm form) {
    return classify(lambda_max_D, divergence_threshold(cfg, sigma), convergence_threshold(cfg, sigma, form));
}

std::string StabilityReport::to_record() const {
    char buf[512];
    std::snprintf(buf, sizeof buf,
                  "lambda_max_D=%.12g\nsigma=%.12g\nthr_div=%.12g\nthr_conv_statement=%.12g\n"
                  "thr_conv_proof=%.12g\nclassification=%s\n",
                  lambda_max_D, sigma, thr_div, thr_conv_statement, thr_conv_proof,
                  classification_name(classification));
    return buf;
}

StabilityReport stability_report(const HessianEnsemble& ens, const UnlearnConfig& cfg, const CoherenceOptions& opts,
                                 ConvergenceForm form) {
    CoherenceResult coh = mix_coherence(ens, cfg, opts);
    StabilityReport rep;
    rep.lambda_max_D = coh.lambda_max_D;
    rep.sigma = coh.sigma;
    rep.thr_div = divergence_threshold(cfg, coh.sigma);
    rep.thr_conv_statement = convergence_threshold(cfg, coh.sigma, ConvergenceForm::statement);
    rep.thr_conv_proof = convergence_threshold(cfg, coh.sigma, ConvergenceForm::proof);
    rep.classification = classify(rep.lambda_max_D, rep.thr_div,
                                  form == ConvergenceForm::statement ? rep.thr_conv_statement : rep.thr_conv_proof);
    return rep;
}

} // namespace ustab
