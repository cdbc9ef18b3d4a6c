#include "verify.hpp"

#include <algorithm>
#include <chrono>
#include <cstdarg>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>

#include "cnnmem.hpp"
#include "seed.hpp"
#include "synthetic.hpp"

namespace ustab::verify {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

bool rel_close(double a, double b, double tol) { return std::abs(a - b) <= tol * std::max(std::abs(a), std::abs(b)); }

template <class Fn>
CriterionResult timed(int id, const char* name, Fn&& fn) {
    auto t0 = std::chrono::steady_clock::now();
    CriterionResult r;
    r.id = id;
    r.name = name;
    try {
        fn(r);
    } catch (const std::exception& e) {
        r.pass = false;
        r.detail = std::string("exception: ") + e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

// sigma at which lambda_D meets a threshold, by bisection on the injected function
double sigma_where(const std::function<double(double)>& thr, double lambda_D, bool increasing_hit) {
    double lo = 1e-12, hi = 1.0;
    auto hit = [&](double s) { return increasing_hit ? lambda_D <= thr(s) : lambda_D >= thr(s); };
    // divergence is predicted for small sigma, convergence for large
    if (increasing_hit) {
        while (!hit(hi) && hi < 1e12) hi *= 2;
        if (!hit(hi)) return std::numeric_limits<double>::infinity();
        for (int i = 0; i < 200; ++i) {
            double mid = 0.5 * (lo + hi);
            (hit(mid) ? hi : lo) = mid;
        }
        return hi;
    }
    while (hit(hi) && hi < 1e12) hi *= 2;
    if (hit(hi)) return std::numeric_limits<double>::infinity();
    for (int i = 0; i < 200; ++i) {
        double mid = 0.5 * (lo + hi);
        (hit(mid) ? lo : hi) = mid;
    }
    return lo;
}

} // namespace

BracketReport check_bracketing(const std::vector<SweepCell>& cells, const SweepParams& params, const Thresholds& thr,
                               int min_batch) {
    BracketReport rep;
    std::map<int, BracketRow> rows;
    for (const auto& c : cells) {
        if (c.batch < min_batch || std::isnan(c.sigma) || std::isnan(c.thr_div)) continue;
        UnlearnConfig cfg{params.eta, params.alpha, c.batch, params.n_retain, params.n_forget};
        double td = thr.div(cfg, c.sigma);
        double ts = thr.conv(cfg, c.sigma, ConvergenceForm::statement);
        double tp = thr.conv(cfg, c.sigma, ConvergenceForm::proof);
        auto [it, fresh] = rows.try_emplace(c.batch);
        BracketRow& row = it->second;
        if (fresh) {
            row.batch = c.batch;
            row.last_diverge = kNaN;
            row.first_converge = kNaN;
            row.sigma_div = sigma_where([&](double s) { return thr.div(cfg, s); }, c.lambda_max_D, false);
            row.sigma_conv_statement = sigma_where(
                [&](double s) { return thr.conv(cfg, s, ConvergenceForm::statement); }, c.lambda_max_D, true);
            row.sigma_conv_proof = sigma_where([&](double s) { return thr.conv(cfg, s, ConvergenceForm::proof); },
                                               c.lambda_max_D, true);
        }
        ++rep.checked_cells;
        const bool diverged = c.outcome == Outcome::Diverge;
        if (diverged) {
            if (std::isnan(row.last_diverge) || c.sigma > row.last_diverge) row.last_diverge = c.sigma;
        } else if (std::isnan(row.first_converge) || c.sigma < row.first_converge) {
            row.first_converge = c.sigma;
        }
        if (c.lambda_max_D >= td && !diverged) ++row.violations_div;
        if (c.lambda_max_D <= ts && diverged) ++row.violations_statement;
        if (c.lambda_max_D <= tp && diverged) ++row.violations_proof;
    }
    for (auto& [b, row] : rows) {
        rep.violations_div += row.violations_div;
        rep.violations_statement += row.violations_statement;
        rep.violations_proof += row.violations_proof;
        rep.rows.push_back(row);
    }
    return rep;
}

SweepParams bracketing_params(double eta, const Options& o) {
    SweepParams p;
    p.eta = eta;
    p.alpha = 0.1;
    p.n_retain = p.n_forget = 50;
    p.q_list = {1, 2, 5, 10, 25, 50};
    p.b_list = {2, 5, 10, 20, 40};
    p.steps = 1000;
    p.repeats = 10;
    p.seed = o.seed;
    p.workers = o.workers;
    return p;
}

CriterionResult bracketing(const Options& o) {
    return timed(1, "threshold bracketing", [&](CriterionResult& r) {
        r.pass = true;
        std::string summary;
        for (double eta : {0.5, 0.8}) {
            SweepParams p = bracketing_params(eta, o);
            auto rep = check_bracketing(boundary_sweep(p), p, o.thresholds);
            for (const auto& row : rep.rows) {
                r.notes.push_back(fmt("eta=%g B=%d sigma_div=%.4g transition=(%.4g, %.4g] sigma_conv: statement=%.4g "
                                      "proof=%.4g violations div/stmt/proof=%d/%d/%d",
                                      eta, row.batch, row.sigma_div, row.last_diverge, row.first_converge,
                                      row.sigma_conv_statement, row.sigma_conv_proof, row.violations_div,
                                      row.violations_statement, row.violations_proof));
            }
            r.pass = r.pass && rep.pass();
            summary += fmt("%seta=%g: %d cells, violations div=%d statement=%d proof=%d", summary.empty() ? "" : "; ",
                           eta, rep.checked_cells, rep.violations_div, rep.violations_statement,
                           rep.violations_proof);
        }
        r.detail = summary;
    });
}

CriterionResult bound_orderings(const Options& o) {
    return timed(2, "noise-recursion bound orderings", [&](CriterionResult& r) {
        Rng rng(derive_seed(o.seed, 2));
        std::uniform_int_distribution<int> n_dist(1, 6), d_dist(1, 5);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        const double tol = 1e-8;
        int lower_bad = 0, upper_bad = 0, upper_checked = 0, instances = 0;
        while (instances < 50) {
            int nr = std::max(2, n_dist(rng)), nf = n_dist(rng), d = d_dist(rng);
            std::uniform_int_distribution<int> b_dist(1, std::min(nr - 1, nf));
            UnlearnConfig cfg{0.05 + 0.6 * u(rng), 0.5 * u(rng), b_dist(rng), nr, nf};
            auto ens = random_rank_one_ensemble(d, nr, nf, 2.0, rng);
            const int kmax = 15;
            auto exact = exact_second_moment(ens, cfg, kmax);
            auto noise = noise_recurrence(ens, cfg, kmax);
            auto j = make_j_operator(ens, cfg);
            double eps = j.spectral_epsilon();
            for (int k = 1; k <= kmax; ++k) {
                double ex = exact[static_cast<size_t>(k)];
                if (lower_bound_trace(j, noise, k) > ex * (1 + tol)) ++lower_bad;
                if (eps > 0) {
                    ++upper_checked;
                    if (ex > upper_bound_trace(noise, eps, k) * (1 + tol)) ++upper_bad;
                }
            }
            ++instances;
        }
        r.pass = lower_bad == 0 && upper_bad == 0 && upper_checked > 0;
        r.detail = fmt("%d instances, k<=15: lower violations %d, upper violations %d of %d contractive checks",
                       instances, lower_bad, upper_bad, upper_checked);
    });
}

CriterionResult construction_fidelity(const Options& o) {
    return timed(3, "matching construction", [&](CriterionResult& r) {
        MatchingSpec spec;
        spec.sigma_target = 200;
        spec.lambda1_D_target = 1.5;
        spec.config = UnlearnConfig{0.5, 0.1, 10, 50, 50};
        const auto& cfg = spec.config;
        auto ens = build_matching_construction(spec);
        auto coh = mix_coherence(ens, cfg, {CoherencePath::automatic, 10000, o.workers});
        bool lam_ok = rel_close(coh.lambda_max_D, spec.lambda1_D_target, 1e-9);
        bool sig_ok = rel_close(coh.sigma, spec.sigma_target, 1e-9);

        Coefficients c = coefficients(cfg);
        const int q = static_cast<int>(std::lround(spec.sigma_target / cfg.n_forget));
        const double m = spec.lambda1_D_target * cfg.n_retain / (c.cp_r * q);
        double worst = 0;
        const int nf = cfg.n_forget, pairs = cfg.n_retain * nf;
        for (int p = 0; p < pairs; ++p) {
            for (int pp = 0; pp < pairs; ++pp) {
                double want = (p / nf < q && pp / nf < q) ? 1.0 : 0.0;
                worst = std::max(worst, std::abs(coh.S(p, pp) / (c.cp_r * m) - want));
            }
        }
        bool block_ok = worst <= 1e-9;

        double thr = convergence_threshold(cfg, coh.sigma, ConvergenceForm::proof);
        bool strict = coh.lambda_max_D < thr;
        int converged = 0;
        for (int t = 0; t < 10; ++t) {
            auto tr = run_trajectory(ens, cfg, {}, derive_seed(derive_seed(o.seed, 3), static_cast<uint64_t>(t)));
            if (!tr.diverged && tr.norms.back() < tr.norms.front()) ++converged;
        }
        r.pass = lam_ok && sig_ok && block_ok && strict && converged == 10;
        r.detail = fmt("lambda_D=%.12g sigma=%.12g block max err=%.2e proof thr=%.6g (%s) converged %d/10",
                       coh.lambda_max_D, coh.sigma, worst, thr, strict ? "strict" : "not strict", converged);
    });
}

CriterionResult monte_carlo_agreement(const Options& o) {
    return timed(4, "monte-carlo vs exact second moment", [&](CriterionResult& r) {
        const int ensembles = o.full ? 10 : 3;
        const int trajectories = o.full ? 10000 : 2000;
        Rng rng(derive_seed(o.seed, 4));
        std::uniform_int_distribution<int> n_dist(2, 5), d_dist(2, 4);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        int bad = 0, checked = 0;
        double worst = 0;
        for (int e = 0; e < ensembles; ++e) {
            int nr = n_dist(rng), nf = n_dist(rng), d = d_dist(rng);
            std::uniform_int_distribution<int> b_dist(1, std::min(nr, nf) - 1);
            UnlearnConfig cfg{0.2 + 0.3 * u(rng), 0.3 * u(rng), b_dist(rng), nr, nf};
            auto ens = random_rank_one_ensemble(d, nr, nf, 1.0, rng);
            auto exact = exact_second_moment(ens, cfg, 50);
            auto est = sample_second_moments(ens, cfg, {1, 10, 50}, trajectories,
                                             derive_seed(o.seed, 400 + static_cast<uint64_t>(e)), o.workers);
            for (const auto& m : est) {
                double z = std::abs(m.mean - exact[static_cast<size_t>(m.k)]) / m.std_error;
                worst = std::max(worst, z);
                ++checked;
                if (!(z <= 3.0)) ++bad;
            }
        }
        r.pass = bad == 0;
        r.detail = fmt("%d ensembles x %d trajectories, %d comparisons, %d outside 3 SE (max %.2f SE)", ensembles,
                       trajectories, checked, bad, worst);
    });
}

namespace {

cnn::Model random_model(int m, int d, double scale, Rng& rng) {
    std::normal_distribution<double> n(0, scale);
    cnn::Model md = cnn::Model::zeros(m, d);
    for (matker::Matrix* w : {&md.w_pos, &md.w_neg})
        for (Eigen::Index i = 0; i < w->size(); ++i) w->data()[i] = n(rng);
    return md;
}

bool near_kink(const cnn::Model& md, const std::vector<cnn::Sample>& ss) {
    for (const auto& s : ss)
        for (const matker::Matrix* w : {&md.w_pos, &md.w_neg})
            if (((*w) * s.x1).cwiseAbs().minCoeff() < 1e-3 || ((*w) * s.x2).cwiseAbs().minCoeff() < 1e-3) return true;
    return false;
}

// (j/m)(1{<w, y mu> > 0} mu + 1{<w, xi> > 0} y xi) per filter, outer product times ell''
matker::Matrix block_formula(const cnn::Model& md, const cnn::Sample& s, double ell2) {
    const int m = md.m(), d = md.d();
    const matker::Vector& ymu = s.signal_slot == 1 ? s.x1 : s.x2;
    const matker::Vector& xi = s.signal_slot == 1 ? s.x2 : s.x1;
    matker::Vector u(2 * m * d);
    for (int jj = 0; jj < 2; ++jj) {
        const matker::Matrix& w = jj == 0 ? md.w_pos : md.w_neg;
        const double j = jj == 0 ? 1.0 : -1.0;
        for (int r = 0; r < m; ++r) {
            matker::Vector a = matker::Vector::Zero(d);
            if (w.row(r).dot(ymu) > 0) a += s.y * ymu;
            if (w.row(r).dot(xi) > 0) a += s.y * xi;
            u.segment((jj * m + r) * d, d) = (j / m) * a;
        }
    }
    return ell2 * u * u.transpose();
}

} // namespace

CriterionResult cnn_numerics(const Options& o) {
    return timed(5, "cnn gradient and hessian", [&](CriterionResult& r) {
        Rng rng(derive_seed(o.seed, 5));
        double grad_worst = 0;
        int probes = 0;
        while (probes < 20) {
            auto ds = cnn::generate_dataset({8, 10, 1.5, 1.0}, rng);
            cnn::Model md = random_model(3, 10, 0.5, rng);
            if (near_kink(md, ds.samples)) continue;
            auto lg = cnn::loss_and_grad(md, ds.samples);
            double err = 0, scale = 0;
            for (int which = 0; which < 2; ++which) {
                matker::Matrix& w = which == 0 ? md.w_pos : md.w_neg;
                const matker::Matrix& g = which == 0 ? lg.grad.g_pos : lg.grad.g_neg;
                for (Eigen::Index i = 0; i < w.size(); ++i) {
                    const double h = 1e-5, keep = w.data()[i];
                    w.data()[i] = keep + h;
                    double up = cnn::mean_loss(md, ds.samples);
                    w.data()[i] = keep - h;
                    double dn = cnn::mean_loss(md, ds.samples);
                    w.data()[i] = keep;
                    err = std::max(err, std::abs((up - dn) / (2 * h) - g.data()[i]));
                    scale = std::max(scale, std::abs(g.data()[i]));
                }
            }
            grad_worst = std::max(grad_worst, err / scale);
            ++probes;
        }

        double hess_worst = 0, coh_worst = 0;
        for (int t = 0; t < 10; ++t) {
            auto ds = cnn::generate_dataset({6, 6, 1.0, 1.0}, rng);
            cnn::Model md = random_model(2, 6, 0.7, rng);
            std::vector<cnn::HessianFactor> hs;
            for (const auto& s : ds.samples) {
                auto h = cnn::sample_hessian(md, s);
                hs.push_back(h);
                matker::Matrix diff = h.as_factor().densify().mat() - block_formula(md, s, h.ell2);
                hess_worst = std::max(hess_worst, diff.cwiseAbs().maxCoeff());
            }
            for (size_t i = 0; i < hs.size(); ++i) {
                for (size_t k = i; k < hs.size(); ++k) {
                    double fast = std::sqrt(matker::trace_product(hs[i].as_factor(), hs[k].as_factor()));
                    double dense = matker::frob_product(matker::psd_sqrt(hs[i].as_factor().densify()),
                                                        matker::psd_sqrt(hs[k].as_factor().densify()));
                    // entries of an orthogonal pair are exactly 0; scale by the diagonal entries instead
                    double scale = std::sqrt(hs[i].ell2 * hs[k].ell2) * hs[i].v.norm() * hs[k].v.norm();
                    if (scale > 0) coh_worst = std::max(coh_worst, std::abs(fast - dense) / std::max(dense, scale));
                }
            }
        }
        r.pass = grad_worst <= 1e-5 && hess_worst <= 1e-10 && coh_worst <= 1e-9;
        r.detail = fmt("gradient rel err %.2e over %d probes, hessian block err %.2e, coherence entry rel err %.2e",
                       grad_worst, probes, hess_worst, coh_worst);
    });
}

namespace {

cnn::HeatmapParams overlap_params(const Options& o) {
    cnn::HeatmapParams p;
    p.signal_grid = {0.5, 1, 2, 3, 4, 5};
    p.d_grid = {100, 500, 1100};
    p.repeats = o.full ? 20 : 5;
    p.seed = o.seed;
    p.workers = o.workers;
    return p;
}

} // namespace

CriterionResult memorization_overlap(const Options& o) {
    return timed(6, "memorization/forgetting overlap", [&](CriterionResult& r) {
        auto p = overlap_params(o);
        auto cells = cnn::snr_heatmap(p);
        std::vector<double> err, forget;
        for (const auto& c : cells) {
            r.notes.push_back(fmt("|mu|=%g d=%d snr=%.4f train_loss=%.4f test_error=%.4f forget_loss=%.4f failed=%d",
                                  c.signal_norm, c.d, c.snr, c.train_loss, c.test_error, c.forget_loss, c.n_failed));
            if (c.train_loss <= cnn::kTrainLossTarget && std::isfinite(c.forget_loss)) {
                err.push_back(c.test_error);
                forget.push_back(c.forget_loss);
            }
        }
        double rho = err.size() >= 2 ? cnn::spearman(err, forget) : kNaN;
        int ordered = 0;
        const double lo = p.signal_grid.front(), hi = p.signal_grid.back();
        for (int d : p.d_grid) {
            double f_lo = kNaN, f_hi = kNaN;
            for (const auto& c : cells) {
                if (c.d != d) continue;
                if (c.signal_norm == lo) f_lo = c.forget_loss;
                if (c.signal_norm == hi) f_hi = c.forget_loss;
            }
            if (f_lo > f_hi) ++ordered;
        }
        r.pass = rho >= 0.5 && ordered == static_cast<int>(p.d_grid.size());
        r.detail = fmt("spearman(test error, forget loss)=%.4f over %zu fitted cells; low-snr forget loss above "
                       "high-snr at %d/%zu d values (%d repeats)",
                       rho, err.size(), ordered, p.d_grid.size(), p.repeats);
    });
}

CriterionResult coherence_trend(const Options& o) {
    return timed(7, "coherence ratio grows with snr", [&](CriterionResult& r) {
        cnn::CurveParams p;
        p.seed = o.seed;
        p.workers = o.workers;
        p.repeats = o.full ? 20 : 5;
        auto pts = cnn::coherence_ratio_curve(p);
        for (const auto& pt : pts)
            r.notes.push_back(fmt("|mu|=%g snr=%.4f ratio=%.4f used=%d skipped=%d", pt.signal_norm, pt.snr, pt.ratio,
                                  pt.n_used, pt.n_skipped));
        const auto &a = pts.front(), &b = pts.back();
        r.pass = pts.size() >= 4 && a.n_used > 0 && b.n_used > 0 && b.ratio > a.ratio;
        r.detail = fmt("ratio %.4f at snr %.4f -> %.4f at snr %.4f (%d repeats)", a.ratio, a.snr, b.ratio, b.snr,
                       p.repeats);
    });
}

CriterionResult determinism(const Options& o) {
    return timed(8, "byte-identical reruns", [&](CriterionResult& r) {
        SweepParams sp = bracketing_params(0.5, o);
        std::string s1 = sweep_csv(boundary_sweep(sp));
        sp.workers = o.workers + 1;
        std::string s2 = sweep_csv(boundary_sweep(sp));

        auto hp = overlap_params(o);
        if (!o.full) hp.repeats = 2;
        std::string h1 = cnn::heatmap_csv(cnn::snr_heatmap(hp));
        hp.workers = o.workers + 1;
        std::string h2 = cnn::heatmap_csv(cnn::snr_heatmap(hp));
        r.pass = s1 == s2 && h1 == h2;
        r.detail = fmt("sweep csv %s (%zu bytes), heatmap csv %s (%zu bytes)", s1 == s2 ? "identical" : "DIFFERS",
                       s1.size(), h1 == h2 ? "identical" : "DIFFERS", h1.size());
    });
}

void print_result(const CriterionResult& r, std::ostream& out) {
    for (const auto& n : r.notes) out << "    " << n << '\n';
    out << (r.pass ? "PASS" : "FAIL") << " [" << r.id << "] " << r.name << " (" << fmt("%.1f", r.seconds)
        << " s): " << r.detail << '\n';
    out.flush();
}

bool run_all(const Options& o, std::ostream& out, std::vector<CriterionResult>* results) {
    using Fn = CriterionResult (*)(const Options&);
    const Fn all[] = {bracketing,    bound_orderings,      construction_fidelity, monte_carlo_agreement,
                      cnn_numerics,  memorization_overlap, coherence_trend,       determinism};
    bool ok = true;
    for (int i = 0; i < 8; ++i) {
        if (!o.only.empty() && std::find(o.only.begin(), o.only.end(), i + 1) == o.only.end()) continue;
        CriterionResult r = all[i](o);
        print_result(r, out);
        ok = ok && r.pass;
        if (results) results->push_back(std::move(r));
    }
    return ok;
}

} // namespace ustab::verify
