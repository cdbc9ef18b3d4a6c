#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace oracle {

Mat zeros(size_t n) { return Mat(n, Vec(n, 0.0)); }

Mat eye(size_t n) {
    Mat m = zeros(n);
    for (size_t i = 0; i < n; ++i) m[i][i] = 1.0;
    return m;
}

Mat outer(const Vec& a, const Vec& b, double w) {
    Mat m(a.size(), Vec(b.size()));
    for (size_t i = 0; i < a.size(); ++i)
        for (size_t j = 0; j < b.size(); ++j) m[i][j] = w * a[i] * b[j];
    return m;
}

Mat add(const Mat& a, const Mat& b, double cb) {
    Mat m = a;
    for (size_t i = 0; i < a.size(); ++i)
        for (size_t j = 0; j < a[i].size(); ++j) m[i][j] += cb * b[i][j];
    return m;
}

Mat scale(const Mat& a, double c) { return add(zeros(a.size()), a, c); }

Mat mul(const Mat& a, const Mat& b) {
    Mat m(a.size(), Vec(b[0].size(), 0.0));
    for (size_t i = 0; i < a.size(); ++i)
        for (size_t k = 0; k < b.size(); ++k)
            for (size_t j = 0; j < b[0].size(); ++j) m[i][j] += a[i][k] * b[k][j];
    return m;
}

double trace(const Mat& a) {
    double t = 0;
    for (size_t i = 0; i < a.size(); ++i) t += a[i][i];
    return t;
}

double frob(const Mat& a) {
    double s = 0;
    for (const auto& r : a)
        for (double v : r) s += v * v;
    return std::sqrt(s);
}

double dot(const Vec& a, const Vec& b) {
    double s = 0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

Vec jacobi_eigen(const Mat& in, Mat* vecs) {
    const size_t n = in.size();
    Mat a = in;
    Mat v = eye(n);
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0;
        for (size_t p = 0; p < n; ++p)
            for (size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
        if (off < 1e-30) break;
        for (size_t p = 0; p < n; ++p) {
            for (size_t q = p + 1; q < n; ++q) {
                if (std::abs(a[p][q]) < 1e-300) continue;
                double theta = (a[q][q] - a[p][p]) / (2 * a[p][q]);
                double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1));
                double c = 1 / std::sqrt(t * t + 1), s = t * c;
                for (size_t k = 0; k < n; ++k) {
                    double akp = a[k][p], akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for (size_t k = 0; k < n; ++k) {
                    double apk = a[p][k], aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for (size_t k = 0; k < n; ++k) {
                    double vkp = v[k][p], vkq = v[k][q];
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](size_t x, size_t y) { return a[x][x] > a[y][y]; });
    Vec vals(n);
    Mat sorted = zeros(n);
    for (size_t i = 0; i < n; ++i) {
        vals[i] = a[idx[i]][idx[i]];
        for (size_t k = 0; k < n; ++k) sorted[k][i] = v[k][idx[i]];
    }
    if (vecs) *vecs = sorted;
    return vals;
}

Vec closed_form_eigen(const Mat& a) {
    if (a.size() == 1) return {a[0][0]};
    if (a.size() == 2) {
        double m = 0.5 * (a[0][0] + a[1][1]);
        double r = std::hypot(0.5 * (a[0][0] - a[1][1]), a[0][1]);
        return {m + r, m - r};
    }
    if (a.size() != 3) throw std::invalid_argument("closed form needs d <= 3");
    // trigonometric solution of the characteristic cubic
    double p1 = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
    double q = trace(a) / 3;
    double p2 = (a[0][0] - q) * (a[0][0] - q) + (a[1][1] - q) * (a[1][1] - q) + (a[2][2] - q) * (a[2][2] - q) + 2 * p1;
    double p = std::sqrt(p2 / 6);
    if (p == 0) return {q, q, q};
    Mat b = scale(add(a, eye(3), -q), 1 / p);
    double detb = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1]) - b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0]) +
                  b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
    double r = std::clamp(detb / 2, -1.0, 1.0);
    double phi = std::acos(r) / 3;
    double e1 = q + 2 * p * std::cos(phi);
    double e3 = q + 2 * p * std::cos(phi + 2 * std::numbers::pi / 3);
    return {e1, 3 * q - e1 - e3, e3};
}

Mat jacobi_sqrt(const Mat& a) {
    Mat v;
    Vec vals = jacobi_eigen(a, &v);
    const size_t n = a.size();
    Mat out = zeros(n);
    for (size_t k = 0; k < n; ++k) {
        double s = std::sqrt(std::max(0.0, vals[k]));
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < n; ++j) out[i][j] += s * v[i][k] * v[j][k];
    }
    return out;
}

double c_r(const Instance& in) {
    double n = static_cast<double>(in.retain.size());
    return in.eta * in.eta * (1 - in.alpha) * (1 - in.alpha) / n * (1.0 / in.batch - 1.0 / n);
}

double c_f(const Instance& in) {
    if (in.forget.empty()) return 0.0;
    double n = static_cast<double>(in.forget.size());
    return in.eta * in.eta * in.alpha * in.alpha / n * (1.0 / in.batch - 1.0 / n);
}

Mat j_matrix(const Instance& in) {
    const size_t d = in.retain[0].size();
    Mat j = eye(d);
    for (const auto& h : in.retain) j = add(j, h, -in.eta * (1 - in.alpha) / in.retain.size());
    for (const auto& h : in.forget) j = add(j, h, in.eta * in.alpha / in.forget.size());
    return j;
}

Mat noise_step(const Instance& in, const Mat& x) {
    Mat acc = zeros(x.size());
    for (const auto& h : in.retain) acc = add(acc, mul(mul(h, x), h), c_r(in));
    for (const auto& h : in.forget) acc = add(acc, mul(mul(h, x), h), c_f(in));
    return acc;
}

Vec second_moment_traces(const Instance& in, int kmax) {
    Mat j = j_matrix(in);
    Mat v = eye(j.size());
    Vec out{trace(v)};
    for (int k = 1; k <= kmax; ++k) {
        v = add(mul(mul(j, v), j), noise_step(in, v));
        out.push_back(trace(v));
    }
    return out;
}

Vec noise_traces(const Instance& in, int kmax) {
    Mat n = eye(in.retain[0].size());
    Vec out{trace(n)};
    for (int k = 1; k <= kmax; ++k) {
        n = noise_step(in, n);
        out.push_back(trace(n));
    }
    return out;
}

Mat mix_coherence_matrix(const Instance& in, double cpr, double cpf) {
    std::vector<Mat> roots;
    for (const auto& hr : in.retain)
        for (const auto& hf : in.forget) roots.push_back(jacobi_sqrt(add(scale(hr, cpr), hf, cpf)));
    Mat s = zeros(roots.size());
    for (size_t p = 0; p < roots.size(); ++p)
        for (size_t q = 0; q < roots.size(); ++q) s[p][q] = frob(mul(roots[p], roots[q]));
    return s;
}

} // namespace oracle
