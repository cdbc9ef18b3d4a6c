#include "doctest.h"
#include "helpers.hpp"

#include "stability.hpp"
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

TEST_CASE("Q-construction layout") {
    auto ens = build_q_construction({50, 50, 25, 0});
    CHECK(ens.dim() == 27);
    CHECK(ens.factor(SetKind::Retain, 0).weight == 4.0);
    CHECK(ens.factor(SetKind::Retain, 24).vec(0) == 1.0);
    CHECK(ens.factor(SetKind::Retain, 25).vec(1) == 1.0);
    CHECK(ens.factor(SetKind::Forget, 49).vec(25) == 1.0);

    auto all = build_q_construction({50, 50, 50, 0});
    for (int i = 0; i < 50; ++i) {
        CHECK(all.factor(SetKind::Retain, i).weight == 2.0);
        CHECK(all.factor(SetKind::Retain, i).vec(0) == 1.0);
    }
    auto q1 = build_q_construction({50, 50, 1, 0});
    CHECK(q1.factor(SetKind::Forget, 0).weight == 100.0);

    CHECK(code_of([] { build_q_construction({50, 50, 10, 40}); }) == ErrorCode::ShapeError);
    CHECK(code_of([] { build_q_construction({50, 50, 0, 0}); }) == ErrorCode::InvalidArgument);
    CHECK(code_of([] { build_q_construction({50, 50, 51, 0}); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("Q-construction: lambda_max(D) = 2 and sigma monotone in Q") {
    for (int b : {2, 10, 40}) {
        UnlearnConfig cfg{0.5, 0.1, b, 50, 50};
        double prev = 0.0;
        for (int q : {1, 2, 5, 10, 25, 50}) {
            auto ens = build_q_construction({50, 50, q, 0});
            CHECK(mix_hessian_lambda_max(ens, cfg) == doctest::Approx(2.0).epsilon(1e-12));
            auto [hr, hf] = full_hessians(ens);
            CHECK(lambda_max(hr) == doctest::Approx(2.0).epsilon(1e-12));
            CHECK(lambda_max(hf) == doctest::Approx(2.0).epsilon(1e-12));
            double s = mix_coherence(ens, cfg).sigma;
            CHECK(s >= prev);
            prev = s;
        }
        // Q = n: every D_rf equals 2 e1 e1^T, so S is constant and sigma = n_r n_f
        CHECK(prev == doctest::Approx(2500.0).epsilon(1e-9));
    }
}

TEST_CASE("matching construction reproduces its targets") {
    for (double lam : {0.3, 1.5, 4.0}) {
        for (int q : {1, 4, 7}) {
            UnlearnConfig cfg{0.5, 0.1, 10, 50, 50};
            MatchingSpec spec{50.0 * q, lam, cfg, 2};
            auto ens = build_matching_construction(spec);
            auto coh = mix_coherence(ens, cfg);
            CHECK(th::rel_err(coh.lambda_max_D, lam) < 1e-9);
            CHECK(std::abs(coh.sigma - spec.sigma_target) <= 1e-9 * spec.sigma_target);
            for (int p = 0; p < 2500; p += 7) {
                for (int p2 = 0; p2 < 2500; p2 += 13) {
                    bool live = p / 50 < q && p2 / 50 < q;
                    CHECK(coh.S(p, p2) / coh.max_pair_lambda == doctest::Approx(live ? 1.0 : 0.0).epsilon(1e-12));
                }
            }
            // every member is diagonal, so all step operators commute
            for (int i = 0; i < 50; ++i) {
                Matrix h = ens.dense(SetKind::Retain, i).mat();
                Matrix offdiag = h;
                offdiag.diagonal().setZero();
                CHECK(offdiag.norm() <= 1e-12);
            }
        }
    }
}

TEST_CASE("matching construction errors") {
    UnlearnConfig cfg{0.5, 0.1, 10, 50, 50};
    CHECK(code_of([&] { build_matching_construction({75.0, 1.0, cfg, 2}); }) == ErrorCode::InfeasibleSpec);
    CHECK(code_of([&] { build_matching_construction({50.0 * 51, 1.0, cfg, 2}); }) == ErrorCode::InfeasibleSpec);
    CHECK(code_of([&] { build_matching_construction({50.0 + 1e-12, 1.0, cfg, 2}); }) == ErrorCode{});
    UnlearnConfig a1{0.5, 1.0, 10, 50, 50};
    CHECK(code_of([&] { build_matching_construction({50.0, 1.0, a1, 2}); }) == ErrorCode::NoStochasticity);
}
