#include "doctest.h"
#include <limits>
#include "helpers.hpp"

#include "cnnmem.hpp"
#include "seed.hpp"

using namespace ustab;
using namespace ustab::cnn;

namespace {

Model random_model(int m, int d, double scale, Rng& rng) {
    std::normal_distribution<double> n(0, scale);
    Model md = Model::zeros(m, d);
    for (Matrix* w : {&md.w_pos, &md.w_neg})
        for (Eigen::Index i = 0; i < w->size(); ++i) w->data()[i] = n(rng);
    return md;
}

bool near_kink(const Model& md, const std::vector<Sample>& ss) {
    for (const auto& s : ss) {
        for (const Matrix* w : {&md.w_pos, &md.w_neg}) {
            if (((*w) * s.x1).cwiseAbs().minCoeff() < 1e-3 || ((*w) * s.x2).cwiseAbs().minCoeff() < 1e-3) return true;
        }
    }
    return false;
}

// block formula straight from the model definition: block (j,r) =
// (j/m)(1{<w,y mu> > 0} mu + 1{<w,xi> > 0} y xi), H = ell2 * u u^T
oracle::Mat block_hessian(const Model& md, const Sample& s, double ell2) {
    const int m = md.m(), d = md.d();
    Vector ymu = s.signal_slot == 1 ? s.x1 : s.x2;
    Vector xi = s.signal_slot == 1 ? s.x2 : s.x1;
    Vector mu = s.y * ymu;
    std::vector<oracle::Vec> blocks;
    for (int jj = 0; jj < 2; ++jj) {
        const Matrix& w = jj == 0 ? md.w_pos : md.w_neg;
        double j = jj == 0 ? 1.0 : -1.0;
        for (int r = 0; r < m; ++r) {
            oracle::Vec a(static_cast<size_t>(d), 0.0);
            bool on_sig = w.row(r).dot(ymu) > 0, on_noise = w.row(r).dot(xi) > 0;
            for (int k = 0; k < d; ++k) {
                a[static_cast<size_t>(k)] = (j / m) * ((on_sig ? mu(k) : 0.0) + (on_noise ? s.y * xi(k) : 0.0));
            }
            blocks.push_back(a);
        }
    }
    oracle::Vec u;
    for (auto& b : blocks) u.insert(u.end(), b.begin(), b.end());
    return oracle::outer(u, u, ell2);
}

} // namespace

TEST_CASE("dataset generation") {
    Rng rng(1);
    auto ds = generate_dataset({50, 500, 3.0, 1.0}, rng);
    CHECK(ds.snr == doctest::Approx(3.0 / std::sqrt(500.0)).epsilon(1e-12));
    CHECK(std::abs(ds.snr - 0.1342) < 1e-4);
    for (const auto& s : ds.samples) {
        const Vector& sig = s.signal_slot == 1 ? s.x1 : s.x2;
        CHECK((sig - s.y * ds.mu).norm() == 0.0);
        CHECK((s.y == 1 || s.y == -1));
    }
    auto zero = generate_dataset({10, 20, 0.0, 1.0}, rng);
    CHECK(zero.snr == 0.0);

    int slot1 = 0;
    const int draws = 100000;
    Vector mu = Vector::Zero(1);
    for (int i = 0; i < draws; ++i) slot1 += draw_sample(mu, 1.0, rng).signal_slot == 1;
    CHECK(std::abs(slot1 - draws / 2.0) <= 3 * std::sqrt(draws * 0.25));
}

TEST_CASE("forward examples") {
    Model z = Model::zeros(3, 4);
    Vector x1 = Vector::Random(4), x2 = Vector::Random(4);
    CHECK(forward(z, x1, x2) == 0.0);
    Rng rng(2);
    Model same = random_model(3, 4, 1.0, rng);
    same.w_neg = same.w_pos;
    CHECK(forward(same, x1, x2) == 0.0);
    Model one = Model::zeros(1, 3);
    one.w_pos(0, 0) = 1.0;
    CHECK(forward(one, Vector::Unit(3, 0) * 2.0, Vector::Zero(3)) == 2.0);
    CHECK_THROWS_AS(forward(one, Vector::Zero(2), Vector::Zero(3)), Error);
}

TEST_CASE("loss at zero weights is log 2") {
    Rng rng(3);
    auto ds = generate_dataset({8, 10, 2.0, 1.0}, rng);
    auto lg = loss_and_grad(Model::zeros(3, 10), ds.samples);
    CHECK(lg.loss == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(lg.grad.g_pos.norm() == 0.0);
}

TEST_CASE("gradient matches central finite differences") {
    Rng rng(4);
    int probes = 0;
    while (probes < 20) {
        auto ds = generate_dataset({8, 10, 1.5, 1.0}, rng);
        Model md = random_model(3, 10, 0.5, rng);
        if (near_kink(md, ds.samples)) continue;
        auto lg = loss_and_grad(md, ds.samples);
        double worst = 0, scale = 0;
        for (int which = 0; which < 2; ++which) {
            Matrix& w = which == 0 ? md.w_pos : md.w_neg;
            const Matrix& g = which == 0 ? lg.grad.g_pos : lg.grad.g_neg;
            for (Eigen::Index i = 0; i < w.size(); ++i) {
                const double h = 1e-5, keep = w.data()[i];
                w.data()[i] = keep + h;
                double up = loss_and_grad(md, ds.samples).loss;
                w.data()[i] = keep - h;
                double dn = loss_and_grad(md, ds.samples).loss;
                w.data()[i] = keep;
                double fd = (up - dn) / (2 * h);
                worst = std::max(worst, std::abs(fd - g.data()[i]));
                scale = std::max(scale, std::abs(g.data()[i]));
            }
        }
        CHECK(worst <= 1e-5 * scale);
        ++probes;
    }
}

TEST_CASE("perfectly fit model has vanishing loss and gradient") {
    Rng rng(5);
    auto ds = generate_dataset({10, 3, 1.0, 0.01}, rng);
    Model md = Model::zeros(1, 3);
    md.w_pos.row(0) = ds.mu.transpose() * 1e3;
    md.w_neg.row(0) = -ds.mu.transpose() * 1e3;
    auto lg = loss_and_grad(md, ds.samples);
    CHECK(lg.loss < 1e-12);
    CHECK(lg.grad.g_pos.norm() < 1e-10);
}

TEST_CASE("training") {
    Rng rng(6);
    auto ds = generate_dataset({50, 20, 5.0, 1.0}, rng);
    Rng r1(7);
    auto frozen = train_full_batch(ds, {10, 0.0, 100, 0.01}, r1);
    Rng r2(7);
    std::normal_distribution<double> init(0.0, 0.01);
    CHECK(frozen.model.w_pos(0, 0) == init(r2));

    Rng r3(8);
    auto fit = train_full_batch(ds, {}, r3);
    CHECK(fit.train_loss <= 0.1);
    CHECK(!fit.above_target);

    TrainParams wild{10, std::numeric_limits<double>::infinity(), 3, 1.0};
    Rng r4(9);
    CHECK_THROWS_AS(train_full_batch(ds, wild, r4), Error);
}

TEST_CASE("test_error conventions") {
    Rng rng(10);
    auto ds = generate_dataset({10, 5, 4.0, 0.05}, rng);
    CHECK(test_error(Model::zeros(2, 5), ds, 200, rng) == 1.0);
    Model perfect = Model::zeros(1, 5);
    perfect.w_pos.row(0) = ds.mu.transpose();
    perfect.w_neg.row(0) = -ds.mu.transpose();
    CHECK(test_error(perfect, ds, 1000, rng) < 0.01);
}

TEST_CASE("sample Hessian equals the block formula") {
    Rng rng(11);
    for (int t = 0; t < 10; ++t) {
        auto ds = generate_dataset({4, 6, 1.0, 1.0}, rng);
        Model md = random_model(2, 6, 0.7, rng);
        for (const auto& s : ds.samples) {
            auto h = sample_hessian(md, s);
            double z = s.y * forward(md, s.x1, s.x2);
            double sg = 1 / (1 + std::exp(z));
            CHECK(h.ell2 == doctest::Approx(sg * (1 - sg)).epsilon(1e-12));
            auto dense = h.as_factor().densify();
            auto ref = block_hessian(md, s, h.ell2);
            double worst = 0;
            for (int i = 0; i < dense.dim(); ++i)
                for (int j = 0; j < dense.dim(); ++j)
                    worst = std::max(worst, std::abs(dense(i, j) - ref[static_cast<size_t>(i)][static_cast<size_t>(j)]));
            CHECK(worst <= 1e-10);
            double tr = matker::trace_product(dense, dense);
            CHECK(tr == doctest::Approx(h.ell2 * h.ell2 * std::pow(h.v.squaredNorm(), 2)).epsilon(1e-10));
        }
    }
}

TEST_CASE("sample Hessian matches finite differences of the gradient") {
    Rng rng(12);
    int done = 0;
    while (done < 10) {
        auto ds = generate_dataset({2, 5, 1.0, 1.0}, rng);
        ds.samples.resize(1);
        Model md = random_model(2, 5, 0.7, rng);
        if (near_kink(md, ds.samples)) continue;
        const auto& s = ds.samples[0];
        auto h = sample_hessian(md, s);
        Vector dir = Vector::Random(h.v.size());
        Vector hv = h.ell2 * h.v.dot(dir) * h.v;
        const double eps = 1e-6;
        auto shifted = [&](double sgn) {
            Model x = md;
            x.w_pos += sgn * eps * Eigen::Map<const Matrix>(dir.data(), 5, 2).transpose();
            x.w_neg += sgn * eps * Eigen::Map<const Matrix>(dir.data() + 10, 5, 2).transpose();
            Gradient g = sample_grad(x, s);
            Vector out(20);
            Eigen::Map<Matrix>(out.data(), 5, 2) = g.g_pos.transpose();
            Eigen::Map<Matrix>(out.data() + 10, 5, 2) = g.g_neg.transpose();
            return out;
        };
        Vector fd = (shifted(1) - shifted(-1)) / (2 * eps);
        CHECK((fd - hv).norm() <= 1e-6 * std::max(1.0, hv.norm()));
        ++done;
    }
}

TEST_CASE("inactive filters give a zero factor") {
    Model md = Model::zeros(2, 3);
    md.w_pos.setConstant(-1.0);
    md.w_neg.setConstant(-1.0);
    Sample s{Vector::Ones(3), Vector::Ones(3) * 2, 1, 1};
    auto h = sample_hessian(md, s);
    CHECK(h.v.norm() == 0.0);
}

TEST_CASE("rank-one coherence entries match dense square-root products") {
    Rng rng(13);
    auto ds = generate_dataset({6, 4, 1.0, 1.0}, rng);
    Model md = random_model(2, 4, 0.5, rng);
    std::vector<HessianFactor> hs;
    for (const auto& s : ds.samples) hs.push_back(sample_hessian(md, s));
    for (size_t i = 0; i < hs.size(); ++i) {
        for (size_t k = 0; k < hs.size(); ++k) {
            double fast = std::sqrt(matker::trace_product(hs[i].as_factor(), hs[k].as_factor()));
            double dense = matker::frob_product(matker::psd_sqrt(hs[i].as_factor().densify()),
                                                matker::psd_sqrt(hs[k].as_factor().densify()));
            CHECK(std::abs(fast - dense) <= 1e-9 * std::max(1e-12, dense) + 1e-12);
        }
    }
}

TEST_CASE("unlearn_cnn") {
    Rng rng(14);
    auto ds = generate_dataset({50, 50, 2.0, 1.0}, rng);
    auto tr = train_full_batch(ds, {}, rng);
    std::vector<Sample> forget(ds.samples.begin(), ds.samples.begin() + 25), retain(ds.samples.begin() + 25, ds.samples.end());
    UnlearnParams none;
    none.steps = 0;
    auto t0 = unlearn_cnn(tr.model, retain, forget, none, rng);
    CHECK(t0.forget_loss.size() == 1);
    CHECK(t0.forget_loss[0] == doctest::Approx(mean_loss(tr.model, forget)));

    UnlearnParams up;
    auto t1 = unlearn_cnn(tr.model, retain, forget, up, rng);
    CHECK(t1.forget_loss.size() == 91);
    CHECK(!t1.diverged);
    CHECK(t1.forget_loss.back() > t1.forget_loss.front());

    // descent only, fresh forget samples from the same distribution
    Rng r2(15);
    auto fresh = generate_dataset({50, 50, 2.0, 1.0}, r2);
    Rng r3(16);
    auto base = train_full_batch(generate_dataset({50, 50, 2.0, 1.0}, r3), {10, 0.1, 5, 0.01}, r3);
    UnlearnParams desc;
    desc.alpha = 0.0;
    desc.steps = 10;
    std::vector<Sample> f2(fresh.samples.begin(), fresh.samples.begin() + 25);
    double mean_drop = 0;
    for (uint64_t s = 0; s < 10; ++s) {
        Rng rr(derive_seed(1, s));
        auto t = unlearn_cnn(base.model, retain, f2, desc, rr);
        mean_drop += t.forget_loss[0] - t.forget_loss[3];
    }
    CHECK(mean_drop > 0);

    UnlearnParams fixed;
    fixed.fixed_size_batches = true;
    fixed.steps = 3;
    CHECK(!unlearn_cnn(tr.model, retain, forget, fixed, rng).diverged);
    UnlearnParams bad;
    bad.batch = 30;
    CHECK_THROWS_AS(unlearn_cnn(tr.model, retain, forget, bad, rng), Error);
}

TEST_CASE("spearman") {
    CHECK(spearman({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
    CHECK(spearman({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0));
    CHECK(spearman({1, 2, 2, 3}, {1, 2, 3, 4}) == doctest::Approx(0.9486832980505138));
}

TEST_CASE("heatmap determinism and schema") {
    HeatmapParams p;
    p.signal_grid = {0.0, 3.0};
    p.d_grid = {40};
    p.repeats = 1;
    p.seed = 7;
    p.n_test = 200;
    auto a = heatmap_csv(snr_heatmap(p));
    auto b = heatmap_csv(snr_heatmap(p));
    CHECK(a == b);
    CHECK(a.rfind(std::string(kHeatmapHeader) + "\n", 0) == 0);
    p.workers = 2;
    CHECK(heatmap_csv(snr_heatmap(p)) == a);
}

TEST_CASE("pure-noise data at large d is memorized") {
    HeatmapParams p;
    p.signal_grid = {0.0};
    p.d_grid = {1100};
    p.repeats = 2;
    auto cells = snr_heatmap(p);
    CHECK(cells[0].train_loss <= 0.1);
    CHECK(std::abs(cells[0].test_error - 0.5) < 0.1);
}

TEST_CASE("coherence ratio sanity") {
    CurveParams p;
    p.signal_grid = {1.0};
    p.d = 20;
    p.n_retain = 2;
    p.n_forget = 1;
    p.batch = 1;
    p.repeats = 3;
    auto pts = coherence_ratio_curve(p);
    REQUIRE(pts[0].n_used == 3);
    CHECK(pts[0].ratio >= 1.0);
    CHECK(curve_csv(pts).rfind(std::string(kCurveHeader) + "\n", 0) == 0);
}

TEST_CASE("fully aligned CNN Hessians maximize the ratio") {
    Rng rng(17);
    auto ds = generate_dataset({6, 10, 1.0, 1.0}, rng);
    Model md = random_model(2, 10, 0.5, rng);
    auto h = sample_hessian(md, ds.samples[0]).as_factor();
    std::vector<matker::RankOneFactor> same(3, h);
    UnlearnConfig cfg{0.1, 0.3, 1, 3, 3};
    double aligned = mix_coherence(HessianEnsemble::from_factors(40, same, same), cfg).sigma;
    CHECK(aligned == doctest::Approx(9.0).epsilon(1e-9));
    std::normal_distribution<double> n(0, 1);
    for (int t = 0; t < 10; ++t) {
        auto f = same;
        for (auto& x : f) {
            const double len = x.vec.norm();
            for (Eigen::Index k = 0; k < x.vec.size(); ++k) x.vec(k) += 0.3 * n(rng) * len / std::sqrt(40.0);
            x.vec *= len / x.vec.norm();
        }
        double pert = mix_coherence(HessianEnsemble::from_factors(40, same, f), cfg).sigma;
        CHECK(pert <= aligned * (1 + 1e-9));
    }
}

// with heterogeneous retain Hessians, copying them into the forget set is not an extremum:
// misaligning the forget vectors can shrink max_pair lambda faster than lambda_max(S)
TEST_CASE("identical heterogeneous sets are not always maximal") {
    Rng rng(17);
    auto ds = generate_dataset({6, 10, 1.0, 1.0}, rng);
    Model md = random_model(2, 10, 0.5, rng);
    std::vector<matker::RankOneFactor> r;
    for (int i = 0; i < 3; ++i) r.push_back(sample_hessian(md, ds.samples[static_cast<size_t>(i)]).as_factor());
    UnlearnConfig cfg{0.1, 0.3, 1, 3, 3};
    double aligned = mix_coherence(HessianEnsemble::from_factors(40, r, r), cfg).sigma;
    std::normal_distribution<double> n(0, 1);
    int above = 0;
    for (int t = 0; t < 10; ++t) {
        auto f = r;
        for (auto& x : f) {
            const double len = x.vec.norm();
            for (Eigen::Index k = 0; k < x.vec.size(); ++k) x.vec(k) += 0.3 * n(rng) * len / std::sqrt(40.0);
            x.vec *= len / x.vec.norm();
        }
        above += mix_coherence(HessianEnsemble::from_factors(40, r, f), cfg).sigma > aligned;
    }
    CHECK(above > 0);
}
