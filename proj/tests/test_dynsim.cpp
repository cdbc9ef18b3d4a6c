#include "doctest.h"
#include "helpers.hpp"

#include "dynsim.hpp"
#include "seed.hpp"
#include "synthetic.hpp"

using namespace ustab;
using namespace ustab::matker;

namespace {
ErrorCode code_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    return ErrorCode{};
}
} // namespace

TEST_CASE("seed derivation") {
    static_assert(splitmix64(0) == 0xE220A8397B1DCDAFULL);
    CHECK(derive_seed(42, 0) == splitmix64(42));
    CHECK(derive_seed(42, 1) != derive_seed(42, 2));
}

TEST_CASE("bernoulli_mask") {
    Rng rng(1);
    auto all = bernoulli_mask(7, 7, rng);
    for (char m : all) CHECK(m == 1);
    CHECK(code_of([&] { bernoulli_mask(5, 0, rng); }) == ErrorCode::InvalidBatch);
    CHECK(code_of([&] { bernoulli_mask(5, 6, rng); }) == ErrorCode::InvalidBatch);

    const int draws = 100000, n = 50, b = 10;
    double total = 0;
    for (int t = 0; t < draws; ++t) {
        for (char m : bernoulli_mask(n, b, rng)) total += m;
    }
    double mean = total / draws;
    double se = std::sqrt(n * 0.2 * 0.8 / draws);
    CHECK(std::abs(mean - b) <= 3 * se);
}

TEST_CASE("unlearn_step examples") {
    std::mt19937_64 rng(4);
    auto ens = random_rank_one_ensemble(4, 3, 3, 2.0, rng);
    UnlearnConfig cfg{0.5, 0.3, 2, 3, 3};
    Vector w = Vector::Random(4);
    std::vector<char> none(3, 0);
    CHECK((unlearn_step(w, ens, none, none, cfg) - w).norm() == 0.0);

    auto scalar = HessianEnsemble::from_dense({SymMatrix::identity(1) * 3.0, SymMatrix::zero(1)}, {});
    UnlearnConfig sc{0.2, 0.0, 2, 2, 0};
    Vector w1(1);
    w1 << 1.5;
    Vector out = unlearn_step(w1, scalar, {1, 0}, {}, sc);
    CHECK(out(0) == doctest::Approx((1 - 0.2 * 3 / 2) * 1.5));

    // ascent on the forget set grows w inside the Hessian range
    auto f = HessianEnsemble::from_factors(2, {{Vector::Unit(2, 1), 1.0}}, {{Vector::Unit(2, 0), 2.0}});
    UnlearnConfig asc{0.3, 1.0, 1, 1, 1};
    Vector w2 = Vector::Unit(2, 0) * 0.7;
    CHECK(unlearn_step(w2, f, {0}, {1}, asc).norm() >= w2.norm());

    // rank-one fast path vs dense members
    std::vector<SymMatrix> r, fo;
    for (int i = 0; i < 3; ++i) r.push_back(ens.dense(SetKind::Retain, i));
    for (int i = 0; i < 3; ++i) fo.push_back(ens.dense(SetKind::Forget, i));
    auto dense = HessianEnsemble::from_dense(r, fo);
    Rng mr(9);
    for (int t = 0; t < 50; ++t) {
        auto a = bernoulli_mask(3, 2, mr), b = bernoulli_mask(3, 2, mr);
        Vector x = Vector::Random(4);
        Vector p = unlearn_step(x, ens, a, b, cfg), q = unlearn_step(x, dense, a, b, cfg);
        CHECK((p - q).norm() <= 1e-10 * std::max(1.0, q.norm()));
    }
    CHECK(code_of([&] { unlearn_step(Vector::Zero(3), ens, none, none, cfg); }) == ErrorCode::ShapeError);
}

TEST_CASE("run_trajectory basics") {
    auto zero = HessianEnsemble::from_dense({SymMatrix::zero(3), SymMatrix::zero(3)}, {SymMatrix::zero(3)});
    auto t = run_trajectory(zero, {0.5, 0.1, 1, 2, 1}, {50}, 3);
    CHECK(t.norms.size() == 51);
    for (double n : t.norms) CHECK(n == t.norms[0]);
    CHECK(!t.diverged);

    auto q1 = build_q_construction({50, 50, 1, 0});
    UnlearnConfig red{0.5, 0.1, 2, 50, 50};
    auto m = majority_outcome(q1, red, {1000}, 10, 77);
    CHECK(m.outcome == Outcome::Diverge);
    auto again = majority_outcome(q1, red, {1000}, 10, 77);
    CHECK(again.n_diverged == m.n_diverged);

    auto a = run_trajectory(q1, red, {200}, 5), b = run_trajectory(q1, red, {200}, 5);
    CHECK(a.norms == b.norms);
    CHECK(a.norms.size() == 201);
}

TEST_CASE("majority tie-break") {
    // alternate diverging and converging repeats cannot be forced, so check the rule on counts directly
    auto ens = build_q_construction({4, 4, 1, 0});
    UnlearnConfig cfg{0.5, 0.1, 2, 4, 4};
    MajorityResult r = majority_outcome(ens, cfg, {10, 1e300}, 4, 1);
    CHECK(r.n_diverged == 0);
    CHECK(r.outcome == Outcome::Converge);
    MajorityResult all = majority_outcome(ens, cfg, {10, 0.0}, 4, 1);
    CHECK(all.n_diverged == 4);
    CHECK(all.outcome == Outcome::Diverge);
}

TEST_CASE("full-batch trajectories follow the power iteration") {
    std::mt19937_64 rng(12);
    auto ens = random_rank_one_ensemble(4, 3, 3, 1.5, rng);
    UnlearnConfig cfg{0.6, 0.0, 3, 3, 3};
    TrajectoryOptions opts{40, 1e300, false};
    auto tr = run_trajectory(ens, cfg, opts, 99);
    auto j = make_j_operator(ens, cfg);
    Rng w0rng(99);
    std::normal_distribution<double> nd(0, 1);
    Vector w(4);
    for (int i = 0; i < 4; ++i) w(i) = nd(w0rng);
    for (int k = 0; k <= 40; ++k) {
        CHECK(std::abs(tr.norms[static_cast<size_t>(k)] - w.norm()) <= 1e-9 * std::max(1.0, w.norm()));
        w = j.matrix.mat() * w;
    }
}

TEST_CASE("Monte-Carlo second moment matches the exact recursion") {
    std::mt19937_64 rng(31);
    auto ens = random_rank_one_ensemble(3, 4, 4, 2.0, rng);
    UnlearnConfig cfg{0.4, 0.3, 2, 4, 4};
    auto exact = exact_second_moment(ens, cfg, 10);
    auto mc = sample_second_moments(ens, cfg, {1, 10}, 10000, 5);
    for (const auto& e : mc) {
        CHECK(std::abs(e.mean - exact[static_cast<size_t>(e.k)]) <= 3 * e.std_error);
    }
    auto mc4 = sample_second_moments(ens, cfg, {1, 10}, 200, 5, 4);
    auto mc1 = sample_second_moments(ens, cfg, {1, 10}, 200, 5, 1);
    CHECK(mc4[1].mean == mc1[1].mean);
}

TEST_CASE("deep-red cells stay diverged with more steps") {
    auto q1 = build_q_construction({50, 50, 1, 0});
    UnlearnConfig red{0.5, 0.1, 2, 50, 50};
    for (uint64_t s = 0; s < 5; ++s) {
        auto t1 = run_trajectory(q1, red, {1000, 1e300, false}, s);
        if (t1.norms.back() / t1.norms[0] < 1e6) continue;
        auto t2 = run_trajectory(q1, red, {2000, 1000.0, false}, s);
        CHECK(t2.diverged);
    }
}

TEST_CASE("boundary sweep") {
    SweepParams p;
    p.q_list = {2};
    p.b_list = {10};
    p.steps = 300;
    p.repeats = 3;
    p.seed = 11;
    auto cells = boundary_sweep(p);
    REQUIRE(cells.size() == 1);
    auto ens = build_q_construction({50, 50, 2, 0});
    auto m = majority_outcome(ens, {0.5, 0.1, 10, 50, 50}, {300}, 3, derive_seed(11, 0));
    CHECK(cells[0].n_diverged == m.n_diverged);
    CHECK(cells[0].outcome == m.outcome);
    CHECK(cells[0].lambda_max_D == doctest::Approx(2.0));

    p.q_list = {1, 5};
    p.b_list = {5, 50};
    p.steps = 100;
    auto one = sweep_csv(boundary_sweep(p));
    p.workers = 3;
    auto three = sweep_csv(boundary_sweep(p));
    CHECK(one == three);
    CHECK(one.rfind(std::string(kSweepHeader) + "\n", 0) == 0);
    // B = n: sigma and thresholds undefined, outcome still simulated
    CHECK(one.find("\n1,50,,,,,,3,") != std::string::npos);
}

TEST_CASE("matching construction converges when the proof-form bound holds") {
    UnlearnConfig cfg{0.5, 0.1, 10, 50, 50};
    const double sigma = 200.0;
    double thr = convergence_threshold(cfg, sigma, ConvergenceForm::proof);
    CHECK(thr == doctest::Approx(1.62));
    auto ens = build_matching_construction({sigma, 1.5, cfg, 2});
    int converged = 0;
    for (uint64_t t = 0; t < 10; ++t) {
        auto tr = run_trajectory(ens, cfg, {1000, 1.0, false}, derive_seed(3, t));
        if (tr.norms.back() / tr.norms[0] < 1.0) ++converged;
    }
    CHECK(converged == 10);
}
