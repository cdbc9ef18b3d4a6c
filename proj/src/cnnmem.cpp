#include "cnnmem.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "dynsim.hpp"
#include "parallel.hpp"
#include "seed.hpp"

namespace ustab::cnn {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// log(1 + exp(-z))
double logistic_loss(double z) { return z > 0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z)); }

// 1 / (1 + exp(z))
double sigmoid_neg(double z) {
    if (z >= 0) {
        double e = std::exp(-z);
        return e / (1 + e);
    }
    return 1 / (1 + std::exp(z));
}

void check_dims(const Model& model, const Vector& x1, const Vector& x2) {
    if (x1.size() != model.d() || x2.size() != model.d()) {
        throw Error(ErrorCode::ShapeError, "patch length differs from filter length");
    }
}

// per-filter patch gates: a_r = 1{<w_r,x1> > 0} x1 + 1{<w_r,x2> > 0} x2 (row r of the result)
template <class Fn>
void for_active(const Matrix& w, const Vector& x1, const Vector& x2, Fn&& fn) {
    Vector p1 = w * x1, p2 = w * x2;
    for (Eigen::Index r = 0; r < w.rows(); ++r) fn(r, p1(r) > 0, p2(r) > 0);
}

} // namespace

Sample draw_sample(const Vector& mu, double noise_sigma, Rng& rng) {
    std::bernoulli_distribution coin(0.5);
    std::normal_distribution<double> normal(0.0, noise_sigma);
    Sample s;
    s.y = coin(rng) ? 1 : -1;
    s.signal_slot = coin(rng) ? 1 : 2;
    Vector xi(mu.size());
    for (Eigen::Index i = 0; i < xi.size(); ++i) xi(i) = normal(rng);
    Vector sig = s.y * mu;
    if (s.signal_slot == 1) {
        s.x1 = std::move(sig);
        s.x2 = std::move(xi);
    } else {
        s.x1 = std::move(xi);
        s.x2 = std::move(sig);
    }
    return s;
}

Dataset generate_dataset(const DataParams& p, Rng& rng) {
    if (p.n < 2) throw Error(ErrorCode::InvalidArgument, "n must be >= 2");
    if (p.d < 1) throw Error(ErrorCode::InvalidArgument, "d must be >= 1");
    if (!(p.noise_sigma > 0)) throw Error(ErrorCode::InvalidArgument, "noise_sigma must be positive");
    if (!(p.mu_norm >= 0)) throw Error(ErrorCode::InvalidArgument, "mu_norm must be >= 0");
    Dataset ds;
    ds.mu = Vector::Zero(p.d);
    ds.mu(0) = p.mu_norm;
    ds.noise_sigma = p.noise_sigma;
    ds.snr = snr_of(p.mu_norm, p.noise_sigma, p.d);
    ds.samples.reserve(static_cast<size_t>(p.n));
    for (int i = 0; i < p.n; ++i) ds.samples.push_back(draw_sample(ds.mu, p.noise_sigma, rng));
    return ds;
}

Model Model::zeros(int m, int d) { return {Matrix::Zero(m, d), Matrix::Zero(m, d)}; }

double forward(const Model& model, const Vector& x1, const Vector& x2) {
    check_dims(model, x1, x2);
    auto side = [&](const Matrix& w) {
        return (w * x1).cwiseMax(0.0).sum() + (w * x2).cwiseMax(0.0).sum();
    };
    return (side(model.w_pos) - side(model.w_neg)) / model.m();
}

double sample_loss(const Model& model, const Sample& s) { return logistic_loss(s.y * forward(model, s.x1, s.x2)); }

double mean_loss(const Model& model, const std::vector<Sample>& samples) {
    if (samples.empty()) throw Error(ErrorCode::InvalidArgument, "empty sample set");
    double total = 0.0;
    for (const auto& s : samples) total += sample_loss(model, s);
    return total / static_cast<double>(samples.size());
}

Gradient sample_grad(const Model& model, const Sample& s) {
    const double z = s.y * forward(model, s.x1, s.x2);
    // d loss / d f = -y sigmoid(-z)
    const double dl_df = -s.y * sigmoid_neg(z);
    Gradient g{Matrix::Zero(model.m(), model.d()), Matrix::Zero(model.m(), model.d())};
    const double c = dl_df / model.m();
    for_active(model.w_pos, s.x1, s.x2, [&](Eigen::Index r, bool a1, bool a2) {
        if (a1) g.g_pos.row(r) += c * s.x1.transpose();
        if (a2) g.g_pos.row(r) += c * s.x2.transpose();
    });
    for_active(model.w_neg, s.x1, s.x2, [&](Eigen::Index r, bool a1, bool a2) {
        if (a1) g.g_neg.row(r) -= c * s.x1.transpose();
        if (a2) g.g_neg.row(r) -= c * s.x2.transpose();
    });
    return g;
}

LossGrad loss_and_grad(const Model& model, const std::vector<Sample>& samples) {
    if (samples.empty()) throw Error(ErrorCode::InvalidArgument, "empty sample set");
    LossGrad out{0.0, {Matrix::Zero(model.m(), model.d()), Matrix::Zero(model.m(), model.d())}};
    for (const auto& s : samples) {
        out.loss += sample_loss(model, s);
        Gradient g = sample_grad(model, s);
        out.grad.g_pos += g.g_pos;
        out.grad.g_neg += g.g_neg;
    }
    const double inv = 1.0 / static_cast<double>(samples.size());
    out.loss *= inv;
    out.grad.g_pos *= inv;
    out.grad.g_neg *= inv;
    return out;
}

TrainResult train_full_batch(const Dataset& data, const TrainParams& p, Rng& rng) {
    if (!(p.lr >= 0)) throw Error(ErrorCode::InvalidArgument, "lr must be >= 0");
    if (p.m < 1 || p.epochs < 0) throw Error(ErrorCode::InvalidArgument, "m >= 1 and epochs >= 0 required");
    if (data.samples.empty()) throw Error(ErrorCode::InvalidArgument, "empty dataset");
    const int d = static_cast<int>(data.mu.size());
    std::normal_distribution<double> init(0.0, p.init_scale);
    Model model = Model::zeros(p.m, d);
    if (p.init_scale > 0) {
        for (Matrix* w : {&model.w_pos, &model.w_neg}) {
            for (Eigen::Index r = 0; r < w->rows(); ++r)
                for (Eigen::Index c = 0; c < w->cols(); ++c) (*w)(r, c) = init(rng);
        }
    }
    for (int e = 0; e < p.epochs; ++e) {
        LossGrad lg = loss_and_grad(model, data.samples);
        if (!std::isfinite(lg.loss)) throw Error(ErrorCode::TrainingDiverged, "non-finite training loss");
        if (p.lr == 0) break;
        model.w_pos -= p.lr * lg.grad.g_pos;
        model.w_neg -= p.lr * lg.grad.g_neg;
    }
    TrainResult out{model, mean_loss(model, data.samples), false};
    if (!std::isfinite(out.train_loss)) throw Error(ErrorCode::TrainingDiverged, "non-finite training loss");
    out.above_target = out.train_loss > kTrainLossTarget;
    return out;
}

double test_error(const Model& model, const Dataset& like, int n_test, Rng& rng) {
    if (n_test < 1) throw Error(ErrorCode::InvalidArgument, "n_test must be >= 1");
    int wrong = 0;
    for (int i = 0; i < n_test; ++i) {
        Sample s = draw_sample(like.mu, like.noise_sigma, rng);
        double f = forward(model, s.x1, s.x2);
        if (!(s.y * f > 0)) ++wrong;
    }
    return static_cast<double>(wrong) / n_test;
}

HessianFactor sample_hessian(const Model& model, const Sample& s) {
    const double z = s.y * forward(model, s.x1, s.x2);
    const double sg = sigmoid_neg(z);
    const int m = model.m(), d = model.d();
    HessianFactor h;
    h.ell2 = sg * (1 - sg);
    h.v = Vector::Zero(2 * m * d);
    // block (j, r) = (j/m) y (1{<w,x1> > 0} x1 + 1{<w,x2> > 0} x2)
    auto fill = [&](const Matrix& w, double j, Eigen::Index offset) {
        for_active(w, s.x1, s.x2, [&](Eigen::Index r, bool a1, bool a2) {
            auto blk = h.v.segment(offset + r * d, d);
            if (a1) blk += (j * s.y / m) * s.x1;
            if (a2) blk += (j * s.y / m) * s.x2;
        });
    };
    fill(model.w_pos, 1.0, 0);
    fill(model.w_neg, -1.0, static_cast<Eigen::Index>(m) * d);
    return h;
}

UnlearnTrace unlearn_cnn(const Model& model, const std::vector<Sample>& retain, const std::vector<Sample>& forget,
                         const UnlearnParams& p, Rng& rng) {
    if (retain.empty() || forget.empty()) throw Error(ErrorCode::InvalidArgument, "retain and forget must be nonempty");
    const int nr = static_cast<int>(retain.size()), nf = static_cast<int>(forget.size());
    if (p.batch < 1 || p.batch > nr || p.batch > nf) throw Error(ErrorCode::InvalidBatch, "batch must lie in [1, min(n_r, n_f)]");
    if (p.steps < 0) throw Error(ErrorCode::InvalidArgument, "steps must be >= 0");

    UnlearnTrace out;
    out.model = model;
    out.forget_loss.push_back(mean_loss(out.model, forget));

    auto pick = [&](int n) {
        if (!p.fixed_size_batches) return bernoulli_mask(n, p.batch, rng);
        std::vector<int> idx(static_cast<size_t>(n));
        std::iota(idx.begin(), idx.end(), 0);
        std::vector<char> mask(static_cast<size_t>(n), 0);
        for (int k = 0; k < p.batch; ++k) {
            std::uniform_int_distribution<int> u(k, n - 1);
            std::swap(idx[static_cast<size_t>(k)], idx[static_cast<size_t>(u(rng))]);
            mask[static_cast<size_t>(idx[static_cast<size_t>(k)])] = 1;
        }
        return mask;
    };

    const double inv_b = 1.0 / p.batch;
    for (int step = 0; step < p.steps; ++step) {
        auto mr = pick(nr);
        auto mf = pick(nf);
        Matrix dp = Matrix::Zero(model.m(), model.d()), dn = Matrix::Zero(model.m(), model.d());
        for (int i = 0; i < nr; ++i) {
            if (!mr[static_cast<size_t>(i)]) continue;
            Gradient g = sample_grad(out.model, retain[static_cast<size_t>(i)]);
            dp += (1 - p.alpha) * inv_b * g.g_pos;
            dn += (1 - p.alpha) * inv_b * g.g_neg;
        }
        for (int i = 0; i < nf; ++i) {
            if (!mf[static_cast<size_t>(i)]) continue;
            Gradient g = sample_grad(out.model, forget[static_cast<size_t>(i)]);
            dp -= p.alpha * inv_b * g.g_pos;
            dn -= p.alpha * inv_b * g.g_neg;
        }
        out.model.w_pos -= p.lr * dp;
        out.model.w_neg -= p.lr * dn;
        double fl = mean_loss(out.model, forget);
        if (!std::isfinite(fl) || !out.model.w_pos.allFinite() || !out.model.w_neg.allFinite()) {
            out.diverged = true;
            break;
        }
        out.forget_loss.push_back(fl);
    }
    return out;
}

// ---- experiments ----

namespace {

struct RepeatOutcome {
    bool failed = false;
    double train_loss = 0, test_error = 0, forget_loss = 0;
};

RepeatOutcome heatmap_repeat(const HeatmapParams& p, double signal, int d, uint64_t seed) {
    Rng rng(seed);
    RepeatOutcome r;
    try {
        Dataset ds = generate_dataset({p.n, d, signal, p.noise_sigma}, rng);
        TrainResult tr = train_full_batch(ds, p.train, rng);
        r.train_loss = tr.train_loss;
        r.test_error = test_error(tr.model, ds, p.n_test, rng);
        const auto nf = static_cast<size_t>(p.unlearn.n_forget);
        std::vector<Sample> forget(ds.samples.begin(), ds.samples.begin() + static_cast<long>(nf));
        std::vector<Sample> retain(ds.samples.begin() + static_cast<long>(nf), ds.samples.end());
        UnlearnTrace ut = unlearn_cnn(tr.model, retain, forget, p.unlearn, rng);
        if (ut.diverged) {
            r.failed = true;
        } else {
            r.forget_loss = ut.forget_loss.back();
        }
    } catch (const Error& e) {
        if (e.code() != ErrorCode::TrainingDiverged) throw;
        r.failed = true;
    }
    return r;
}

} // namespace

std::vector<HeatmapCell> snr_heatmap(const HeatmapParams& p) {
    if (p.signal_grid.empty() || p.d_grid.empty()) throw Error(ErrorCode::InvalidArgument, "empty grid");
    if (p.repeats < 1) throw Error(ErrorCode::InvalidArgument, "repeats must be >= 1");
    if (p.unlearn.n_forget < 1 || p.unlearn.n_forget >= p.n) {
        throw Error(ErrorCode::InvalidArgument, "n_forget must lie in [1, n-1]");
    }
    if (p.unlearn.batch < 1 || p.unlearn.batch > std::min(p.unlearn.n_forget, p.n - p.unlearn.n_forget)) {
        throw Error(ErrorCode::InvalidBatch, "unlearning batch exceeds a set size");
    }
    const size_t nd = p.d_grid.size();
    const size_t ncell = p.signal_grid.size() * nd;
    const auto reps = static_cast<size_t>(p.repeats);
    std::vector<RepeatOutcome> runs(ncell * reps);
    parallel_for(static_cast<long>(ncell * reps), p.workers, [&](long task) {
        const size_t cell = static_cast<size_t>(task) / reps;
        runs[static_cast<size_t>(task)] =
            heatmap_repeat(p, p.signal_grid[cell / nd], p.d_grid[cell % nd], derive_seed(p.seed, static_cast<uint64_t>(task)));
    });

    std::vector<HeatmapCell> cells;
    for (size_t c = 0; c < ncell; ++c) {
        HeatmapCell hc;
        hc.signal_norm = p.signal_grid[c / nd];
        hc.d = p.d_grid[c % nd];
        hc.snr = snr_of(hc.signal_norm, p.noise_sigma, hc.d);
        double tl = 0, te = 0, fl = 0;
        int used = 0;
        for (size_t t = 0; t < reps; ++t) {
            const auto& r = runs[c * reps + t];
            if (r.failed) {
                ++hc.n_failed;
                continue;
            }
            tl += r.train_loss;
            te += r.test_error;
            fl += r.forget_loss;
            ++used;
        }
        hc.train_loss = used ? tl / used : kNaN;
        hc.test_error = used ? te / used : kNaN;
        hc.forget_loss = used ? fl / used : kNaN;
        cells.push_back(hc);
    }
    return cells;
}

std::string heatmap_csv(const std::vector<HeatmapCell>& cells) {
    std::string out = std::string(kHeatmapHeader) + "\n";
    for (const auto& c : cells) {
        out += csv_number(c.signal_norm) + "," + std::to_string(c.d) + "," + csv_number(c.snr) + "," +
               csv_number(c.train_loss) + "," + csv_number(c.test_error) + "," + csv_number(c.forget_loss) + "," +
               std::to_string(c.n_failed) + "\n";
    }
    return out;
}

std::vector<CurvePoint> coherence_ratio_curve(const CurveParams& p) {
    if (p.signal_grid.empty()) throw Error(ErrorCode::InvalidArgument, "empty signal grid");
    if (p.repeats < 1) throw Error(ErrorCode::InvalidArgument, "repeats must be >= 1");
    UnlearnConfig cfg{p.train.lr, p.alpha, p.batch, p.n_retain, p.n_forget};
    cfg.validate();
    coefficients(cfg);

    struct Run {
        bool skipped = true;
        double lambda_s = 0, pair = 0, ratio = 0;
    };
    const auto reps = static_cast<size_t>(p.repeats);
    std::vector<Run> runs(p.signal_grid.size() * reps);
    parallel_for(static_cast<long>(runs.size()), p.workers, [&](long task) {
        const double signal = p.signal_grid[static_cast<size_t>(task) / reps];
        Rng rng(derive_seed(p.seed, static_cast<uint64_t>(task)));
        Run& run = runs[static_cast<size_t>(task)];
        try {
            Dataset ds = generate_dataset({p.n_retain + p.n_forget, p.d, signal, p.noise_sigma}, rng);
            TrainResult tr = train_full_batch(ds, p.train, rng);
            std::vector<matker::RankOneFactor> forget, retain;
            for (size_t i = 0; i < ds.samples.size(); ++i) {
                auto f = sample_hessian(tr.model, ds.samples[i]).as_factor();
                (i < static_cast<size_t>(p.n_forget) ? forget : retain).push_back(std::move(f));
            }
            auto ens = HessianEnsemble::from_factors(2 * p.train.m * p.d, std::move(retain), std::move(forget));
            CoherenceResult coh = mix_coherence(ens, cfg);
            run = {false, coh.lambda_max_S, coh.max_pair_lambda, coh.sigma};
        } catch (const Error& e) {
            if (e.code() != ErrorCode::DegenerateEnsemble && e.code() != ErrorCode::TrainingDiverged) throw;
        }
    });

    std::vector<CurvePoint> out;
    for (size_t s = 0; s < p.signal_grid.size(); ++s) {
        CurvePoint pt;
        pt.signal_norm = p.signal_grid[s];
        pt.snr = snr_of(pt.signal_norm, p.noise_sigma, p.d);
        for (size_t t = 0; t < reps; ++t) {
            const Run& r = runs[s * reps + t];
            if (r.skipped) {
                ++pt.n_skipped;
                continue;
            }
            pt.lambda_max_S += r.lambda_s;
            pt.max_pair_lambda += r.pair;
            pt.ratio += r.ratio;
            ++pt.n_used;
        }
        if (pt.n_used > 0) {
            pt.lambda_max_S /= pt.n_used;
            pt.max_pair_lambda /= pt.n_used;
            pt.ratio /= pt.n_used;
        } else {
            pt.lambda_max_S = pt.max_pair_lambda = pt.ratio = kNaN;
        }
        out.push_back(pt);
    }
    return out;
}

std::string curve_csv(const std::vector<CurvePoint>& points) {
    std::string out = std::string(kCurveHeader) + "\n";
    for (const auto& pt : points) {
        if (pt.n_used == 0) {
            out += "# skipped signal_norm=" + csv_number(pt.signal_norm) + ": all repeats degenerate\n";
            continue;
        }
        out += csv_number(pt.snr) + "," + csv_number(pt.lambda_max_S) + "," + csv_number(pt.max_pair_lambda) + "," +
               csv_number(pt.ratio) + "\n";
    }
    return out;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2) throw Error(ErrorCode::InvalidArgument, "spearman needs paired data");
    auto ranks = [](const std::vector<double>& x) {
        std::vector<size_t> idx(x.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::sort(idx.begin(), idx.end(), [&](size_t i, size_t j) { return x[i] < x[j]; });
        std::vector<double> r(x.size());
        for (size_t i = 0; i < idx.size();) {
            size_t j = i;
            while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
            double avg = 0.5 * static_cast<double>(i + j) + 1.0;
            for (size_t k = i; k <= j; ++k) r[idx[k]] = avg;
            i = j + 1;
        }
        return r;
    };
    auto ra = ranks(a), rb = ranks(b);
    const double n = static_cast<double>(a.size());
    double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n, mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
    double sab = 0, saa = 0, sbb = 0;
    for (size_t i = 0; i < ra.size(); ++i) {
        sab += (ra[i] - ma) * (rb[i] - mb);
        saa += (ra[i] - ma) * (ra[i] - ma);
        sbb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (saa == 0 || sbb == 0) return kNaN;
    return sab / std::sqrt(saa * sbb);
}

} // namespace ustab::cnn
