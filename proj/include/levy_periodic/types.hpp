// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

namespace levy_periodic {

template <int Dim>
using Vec = Eigen::Matrix<double, Dim, 1>;

template <int Dim>
using Mat = Eigen::Matrix<double, Dim, Dim>;

/// One atom of a realized Poisson random measure.
template <int Dim>
struct JumpEvent {
    double time = 0.0;
    Vec<Dim> mark = Vec<Dim>::Zero();
    int component_id = 0;
};

/// A time-gridded trajectory. `states` holds X(t) (right-continuous values),
/// `left_states` holds X(t-), which differs from X(t) only at jump times.
/// `jump_counts[k]` is the number of jumps in (grid[k-1], grid[k]].
template <int Dim>
struct SamplePath {
    std::vector<double> grid;
    std::vector<Vec<Dim>> states;
    std::vector<Vec<Dim>> left_states;
    std::vector<int> jump_counts;
    std::vector<JumpEvent<Dim>> jumps;
    std::uint64_t seed = 0;

    std::size_t size() const noexcept { return grid.size(); }
    double horizon() const noexcept { return grid.empty() ? 0.0 : grid.back(); }
};

}  // namespace levy_periodic
