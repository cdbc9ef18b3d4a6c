#include "dynsim.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

#include "parallel.hpp"
#include "seed.hpp"
#include "synthetic.hpp"

namespace ustab {

using matker::Vector;

std::vector<char> bernoulli_mask(int n, int batch, Rng& rng) {
    if (batch < 1 || batch > n) throw Error(ErrorCode::InvalidBatch, "batch must lie in [1, n]");
    std::vector<char> mask(static_cast<size_t>(n));
    if (batch == n) {
        std::fill(mask.begin(), mask.end(), 1);
        return mask;
    }
    const double p = static_cast<double>(batch) / n;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& m : mask) m = u(rng) < p ? 1 : 0;
    return mask;
}

Vector unlearn_step(const Vector& w, const HessianEnsemble& ens, const std::vector<char>& retain_mask,
                    const std::vector<char>& forget_mask, const UnlearnConfig& cfg) {
    if (w.size() != ens.dim()) throw Error(ErrorCode::ShapeError, "w length differs from ensemble dim");
    if (static_cast<int>(retain_mask.size()) != ens.n_retain() || static_cast<int>(forget_mask.size()) != ens.n_forget()) {
        throw Error(ErrorCode::ShapeError, "mask length differs from set size");
    }
    Vector gr = Vector::Zero(w.size());
    Vector gf = Vector::Zero(w.size());
    for (int i = 0; i < ens.n_retain(); ++i) {
        if (retain_mask[static_cast<size_t>(i)]) gr += ens.apply(SetKind::Retain, i, w);
    }
    for (int i = 0; i < ens.n_forget(); ++i) {
        if (forget_mask[static_cast<size_t>(i)]) gf += ens.apply(SetKind::Forget, i, w);
    }
    const double inv_b = 1.0 / cfg.batch;
    return w - cfg.eta * ((1 - cfg.alpha) * inv_b * gr - cfg.alpha * inv_b * gf);
}

Trajectory run_trajectory(const HessianEnsemble& ens, const UnlearnConfig& cfg, const TrajectoryOptions& opts,
                          uint64_t seed) {
    cfg.validate();
    if (opts.steps < 1) throw Error(ErrorCode::InvalidArgument, "steps must be >= 1");
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector w(ens.dim());
    for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = normal(rng);

    Trajectory t;
    t.seed = seed;
    t.norms.reserve(static_cast<size_t>(opts.steps) + 1);
    const double n0 = w.norm();
    t.norms.push_back(n0);
    const bool has_forget = ens.n_forget() > 0;
    std::vector<char> empty;
    for (int k = 1; k <= opts.steps; ++k) {
        auto mr = bernoulli_mask(ens.n_retain(), cfg.batch, rng);
        auto mf = has_forget ? bernoulli_mask(ens.n_forget(), cfg.batch, rng) : empty;
        w = unlearn_step(w, ens, mr, mf, cfg);
        double nk = w.norm();
        if (!std::isfinite(nk)) {
            t.overflow = true;
            t.diverged = true;
            t.norms.resize(static_cast<size_t>(opts.steps) + 1, std::numeric_limits<double>::infinity());
            return t;
        }
        t.norms.push_back(nk);
        if (opts.early_exit && nk / n0 >= opts.divergence_ratio) {
            t.norms.resize(static_cast<size_t>(opts.steps) + 1, nk);
            break;
        }
    }
    t.diverged = t.norms.back() / n0 >= opts.divergence_ratio;
    return t;
}

const char* outcome_name(Outcome o) { return o == Outcome::Diverge ? "DIVERGE" : "CONVERGE"; }

MajorityResult majority_outcome(const HessianEnsemble& ens, const UnlearnConfig& cfg, const TrajectoryOptions& opts,
                                int repeats, uint64_t seed) {
    if (repeats < 1) throw Error(ErrorCode::InvalidArgument, "repeats must be >= 1");
    MajorityResult out;
    out.repeats = repeats;
    for (int t = 0; t < repeats; ++t) {
        if (run_trajectory(ens, cfg, opts, derive_seed(seed, static_cast<uint64_t>(t))).diverged) ++out.n_diverged;
    }
    out.outcome = 2 * out.n_diverged >= repeats ? Outcome::Diverge : Outcome::Converge;
    return out;
}

std::vector<MomentEstimate> sample_second_moments(const HessianEnsemble& ens, const UnlearnConfig& cfg,
                                                  const std::vector<int>& ks, int trajectories, uint64_t seed,
                                                  int workers) {
    if (ks.empty()) return {};
    if (trajectories < 2) throw Error(ErrorCode::InvalidArgument, "need at least 2 trajectories");
    int kmax = 0;
    for (int k : ks) {
        if (k < 0) throw Error(ErrorCode::InvalidArgument, "k must be >= 0");
        kmax = std::max(kmax, k);
    }
    TrajectoryOptions opts;
    opts.steps = std::max(kmax, 1);
    opts.early_exit = false;
    opts.divergence_ratio = std::numeric_limits<double>::infinity();

    const size_t nk = ks.size();
    std::vector<double> sq(static_cast<size_t>(trajectories) * nk);
    parallel_for(trajectories, workers, [&](long t) {
        Trajectory tr = run_trajectory(ens, cfg, opts, derive_seed(seed, static_cast<uint64_t>(t)));
        for (size_t j = 0; j < nk; ++j) {
            double n = tr.norms[static_cast<size_t>(ks[j])];
            sq[static_cast<size_t>(t) * nk + j] = n * n;
        }
    });

    std::vector<MomentEstimate> out;
    for (size_t j = 0; j < nk; ++j) {
        double sum = 0.0;
        for (int t = 0; t < trajectories; ++t) sum += sq[static_cast<size_t>(t) * nk + j];
        double mean = sum / trajectories;
        double ss = 0.0;
        for (int t = 0; t < trajectories; ++t) {
            double dlt = sq[static_cast<size_t>(t) * nk + j] - mean;
            ss += dlt * dlt;
        }
        double var = ss / (trajectories - 1);
        out.push_back({ks[j], mean, std::sqrt(var / trajectories)});
    }
    return out;
}

std::vector<SweepCell> boundary_sweep(const SweepParams& p) {
    if (p.q_list.empty() || p.b_list.empty()) throw Error(ErrorCode::InvalidArgument, "empty Q or B list");
    if (p.repeats < 1 || p.steps < 1) throw Error(ErrorCode::InvalidArgument, "steps and repeats must be >= 1");
    const size_t nb = p.b_list.size();
    const long ncells = static_cast<long>(p.q_list.size() * nb);
    std::vector<SweepCell> cells(static_cast<size_t>(ncells));
    const double nan = std::numeric_limits<double>::quiet_NaN();

    // validate every cell up front so a bad grid fails before any simulation
    for (int q : p.q_list) build_q_construction({p.n_retain, p.n_forget, q, p.dim});
    for (int b : p.b_list) {
        UnlearnConfig c{p.eta, p.alpha, b, p.n_retain, p.n_forget};
        c.validate();
    }

    parallel_for(ncells, p.workers, [&](long ord) {
        SweepCell& cell = cells[static_cast<size_t>(ord)];
        cell.q = p.q_list[static_cast<size_t>(ord) / nb];
        cell.batch = p.b_list[static_cast<size_t>(ord) % nb];
        UnlearnConfig cfg{p.eta, p.alpha, cell.batch, p.n_retain, p.n_forget};
        HessianEnsemble ens = build_q_construction({p.n_retain, p.n_forget, cell.q, p.dim});

        cell.sigma = cell.lambda_max_D = cell.thr_div = cell.thr_conv_statement = cell.thr_conv_proof = nan;
        try {
            CoherenceResult coh = mix_coherence(ens, cfg);
            cell.sigma = coh.sigma;
            cell.lambda_max_D = coh.lambda_max_D;
        } catch (const Error& e) {
            if (e.code() != ErrorCode::NoStochasticity) throw;
        }
        if (std::isfinite(cell.sigma)) {
            try {
                cell.thr_div = divergence_threshold(cfg, cell.sigma);
                cell.thr_conv_statement = convergence_threshold(cfg, cell.sigma, ConvergenceForm::statement);
                cell.thr_conv_proof = convergence_threshold(cfg, cell.sigma, ConvergenceForm::proof);
            } catch (const Error& e) {
                if (e.code() != ErrorCode::UndefinedThreshold) throw;
                cell.thr_div = cell.thr_conv_statement = cell.thr_conv_proof = nan;
            }
        }
        TrajectoryOptions opts;
        opts.steps = p.steps;
        opts.divergence_ratio = p.divergence_ratio;
        MajorityResult m = majority_outcome(ens, cfg, opts, p.repeats, derive_seed(p.seed, static_cast<uint64_t>(ord)));
        cell.n_repeats = m.repeats;
        cell.n_diverged = m.n_diverged;
        cell.outcome = m.outcome;
    });
    return cells;
}

std::string csv_number(double v) {
    if (std::isnan(v)) return "";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

std::string sweep_csv(const std::vector<SweepCell>& cells) {
    std::string out = std::string(kSweepHeader) + "\n";
    for (const auto& c : cells) {
        out += std::to_string(c.q) + "," + std::to_string(c.batch) + "," + csv_number(c.sigma) + "," +
               csv_number(c.lambda_max_D) + "," + csv_number(c.thr_div) + "," + csv_number(c.thr_conv_statement) +
               "," + csv_number(c.thr_conv_proof) + "," + std::to_string(c.n_repeats) + "," +
               std::to_string(c.n_diverged) + "," + outcome_name(c.outcome) + "\n";
    }
    return out;
}

} // namespace ustab
