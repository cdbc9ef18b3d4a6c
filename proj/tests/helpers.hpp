#pragma once

#include <cmath>
#include <random>

#include "matker.hpp"
#include "oracles.hpp"

namespace th {

inline ustab::matker::SymMatrix to_sym(const oracle::Mat& m) {
    ustab::matker::Matrix e(static_cast<Eigen::Index>(m.size()), static_cast<Eigen::Index>(m.size()));
    for (size_t i = 0; i < m.size(); ++i)
        for (size_t j = 0; j < m.size(); ++j) e(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = m[i][j];
    return ustab::matker::SymMatrix(e);
}

inline oracle::Mat to_mat(const ustab::matker::SymMatrix& s) {
    oracle::Mat m(static_cast<size_t>(s.dim()), oracle::Vec(static_cast<size_t>(s.dim())));
    for (int i = 0; i < s.dim(); ++i)
        for (int j = 0; j < s.dim(); ++j) m[static_cast<size_t>(i)][static_cast<size_t>(j)] = s(i, j);
    return m;
}

inline oracle::Vec to_vec(const ustab::matker::Vector& v) { return oracle::Vec(v.data(), v.data() + v.size()); }

inline oracle::Mat random_sym(size_t d, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0, 1);
    oracle::Mat m = oracle::zeros(d);
    for (size_t i = 0; i < d; ++i)
        for (size_t j = i; j < d; ++j) m[i][j] = m[j][i] = n(rng);
    return m;
}

inline oracle::Mat random_psd(size_t d, std::mt19937_64& rng) {
    oracle::Mat a = random_sym(d, rng);
    return oracle::mul(a, a);
}

inline oracle::Vec random_unit(size_t d, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0, 1);
    oracle::Vec v(d);
    for (auto& x : v) x = n(rng);
    double s = std::sqrt(oracle::dot(v, v));
    for (auto& x : v) x /= s;
    return v;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

} // namespace th
