// SPDX-License-Identifier: Apache-2.0
//
// Test oracle: balanced transport problems solved as a plain linear program
// with a dense two-phase simplex (Bland's rule). Deliberately independent of
// the successive-shortest-path solver in measure_tools.hpp.
#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace oracle {

/// min c^T x subject to A x = b, x >= 0. Returns the optimal objective.
/// Throws std::runtime_error when infeasible or unbounded.
inline double simplex_min(std::vector<std::vector<double>> A, std::vector<double> b, const std::vector<double>& c) {
    constexpr double eps = 1e-12;
    const std::size_t m = A.size();
    const std::size_t n = c.size();
    for (std::size_t i = 0; i < m; ++i) {
        if (b[i] < 0.0) {
            b[i] = -b[i];
            for (auto& v : A[i]) v = -v;
        }
    }
    // Columns: n structural, m artificial, then the right-hand side.
    const std::size_t cols = n + m + 1;
    std::vector<std::vector<double>> T(m + 1, std::vector<double>(cols, 0.0));
    std::vector<std::size_t> basis(m);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) T[i][j] = A[i][j];
        T[i][n + i] = 1.0;
        T[i][cols - 1] = b[i];
        basis[i] = n + i;
    }

    auto pivot = [&](std::size_t r, std::size_t s) {
        const double p = T[r][s];
        for (auto& v : T[r]) v /= p;
        for (std::size_t i = 0; i <= m; ++i) {
            if (i == r || T[i][s] == 0.0) continue;
            const double f = T[i][s];
            for (std::size_t j = 0; j < cols; ++j) T[i][j] -= f * T[r][j];
        }
        basis[r] = s;
    };

    // Objective row holds reduced costs; T[m][cols-1] holds -objective.
    auto run = [&](std::size_t allowed) {
        for (int iter = 0; iter < 100000; ++iter) {
            std::size_t s = cols;
            for (std::size_t j = 0; j < allowed; ++j) {
                if (T[m][j] < -eps) {
                    s = j;
                    break;
                }
            }
            if (s == cols) return;
            std::size_t r = m;
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < m; ++i) {
                if (T[i][s] > eps) {
                    const double ratio = T[i][cols - 1] / T[i][s];
                    if (ratio < best - eps || (std::abs(ratio - best) <= eps && r < m && basis[i] < basis[r])) {
                        best = ratio;
                        r = i;
                    }
                }
            }
            if (r == m) throw std::runtime_error("unbounded LP");
            pivot(r, s);
        }
        throw std::runtime_error("simplex iteration limit");
    };

    // Phase 1: minimise the sum of artificials.
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < cols; ++j)
            if (j < n || j == cols - 1) T[m][j] -= T[i][j];
    run(n + m);
    if (-T[m][cols - 1] > 1e-9) throw std::runtime_error("infeasible LP");
    // Drive artificials out of the basis; rows where that fails are redundant.
    for (std::size_t i = 0; i < m; ++i) {
        if (basis[i] < n) continue;
        for (std::size_t j = 0; j < n; ++j) {
            if (std::abs(T[i][j]) > 1e-9) {
                pivot(i, j);
                break;
            }
        }
    }

    // Phase 2 on the structural columns.
    std::fill(T[m].begin(), T[m].end(), 0.0);
    for (std::size_t j = 0; j < n; ++j) T[m][j] = c[j];
    for (std::size_t i = 0; i < m; ++i) {
        if (basis[i] >= n) continue;
        const double f = T[m][basis[i]];
        if (f == 0.0) continue;
        for (std::size_t j = 0; j < cols; ++j) T[m][j] -= f * T[i][j];
    }
    run(n);
    return -T[m][cols - 1];
}

/// Optimal cost of moving `supply` onto `demand` (equal totals) with unit
/// costs cost[i][j].
inline double transport_lp(const std::vector<double>& supply, const std::vector<double>& demand,
                           const std::vector<std::vector<double>>& cost) {
    const std::size_t n = supply.size();
    const std::size_t k = demand.size();
    std::vector<std::vector<double>> A(n + k, std::vector<double>(n * k, 0.0));
    std::vector<double> b(n + k), c(n * k);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            A[i][i * k + j] = 1.0;
            A[n + j][i * k + j] = 1.0;
            c[i * k + j] = cost[i][j];
        }
        b[i] = supply[i];
    }
    for (std::size_t j = 0; j < k; ++j) b[n + j] = demand[j];
    return simplex_min(std::move(A), std::move(b), c);
}

}  // namespace oracle
