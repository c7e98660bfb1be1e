// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "levy_periodic/errors.hpp"
#include "levy_periodic/types.hpp"

namespace levy_periodic {

/// Weighted atoms in R^d. Points are stored column-wise (d x n).
class EmpiricalMeasure {
public:
    EmpiricalMeasure() = default;

    EmpiricalMeasure(Eigen::MatrixXd points, std::vector<double> weights)
        : points_(std::move(points)), weights_(std::move(weights)) {
        if (points_.cols() == 0) throw EmptySampleError("measure needs at least one atom");
        if (static_cast<Eigen::Index>(weights_.size()) != points_.cols())
            throw ParameterError("one weight per atom required");
        if (!points_.allFinite()) throw InvalidAtom("measure atoms must be finite");
        long double total = 0.0L;
        for (double w : weights_) {
            if (!(w > 0.0) || !std::isfinite(w)) throw ParameterError("weights must be positive");
            total += w;
        }
        for (double& w : weights_) w = static_cast<double>(w / total);
        cumulative_.resize(weights_.size());
        std::partial_sum(weights_.begin(), weights_.end(), cumulative_.begin());
    }

    Eigen::Index dim() const noexcept { return points_.rows(); }
    Eigen::Index size() const noexcept { return points_.cols(); }
    const Eigen::MatrixXd& points() const noexcept { return points_; }
    const std::vector<double>& weights() const noexcept { return weights_; }
    Eigen::VectorXd point(Eigen::Index i) const { return points_.col(i); }
    double weight(Eigen::Index i) const { return weights_[static_cast<std::size_t>(i)]; }

    /// True when every weight equals 1/n exactly.
    bool uniform() const {
        const double w0 = weights_.front();
        return std::all_of(weights_.begin(), weights_.end(), [&](double w) { return w == w0; });
    }

    template <class Fn>
    double expectation(Fn&& fn) const {
        long double acc = 0.0L;
        for (Eigen::Index i = 0; i < size(); ++i)
            acc += static_cast<long double>(weights_[static_cast<std::size_t>(i)]) * fn(points_.col(i));
        return static_cast<double>(acc);
    }

    Eigen::VectorXd mean() const {
        Eigen::VectorXd m = Eigen::VectorXd::Zero(dim());
        for (Eigen::Index i = 0; i < size(); ++i) m += weights_[static_cast<std::size_t>(i)] * points_.col(i);
        return m;
    }

    /// Index of the atom selected by a uniform u in [0, 1).
    Eigen::Index select(double u) const {
        auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u * cumulative_.back());
        return std::min<Eigen::Index>(it - cumulative_.begin(), size() - 1);
    }

private:
    Eigen::MatrixXd points_;
    std::vector<double> weights_;
    std::vector<double> cumulative_;
};

/// Uniform weights 1/n on the samples (duplicates kept as separate atoms).
template <int Dim>
EmpiricalMeasure empirical_measure(const std::vector<Vec<Dim>>& samples) {
    if (samples.empty()) throw EmptySampleError("empirical_measure needs at least one sample");
    const Eigen::Index d = samples.front().rows();
    Eigen::MatrixXd pts(d, static_cast<Eigen::Index>(samples.size()));
    for (std::size_t i = 0; i < samples.size(); ++i) pts.col(static_cast<Eigen::Index>(i)) = samples[i];
    return EmpiricalMeasure(std::move(pts), std::vector<double>(samples.size(), 1.0));
}

inline EmpiricalMeasure empirical_measure_1d(const std::vector<double>& samples) {
    if (samples.empty()) throw EmptySampleError("empirical_measure needs at least one sample");
    Eigen::MatrixXd pts(1, static_cast<Eigen::Index>(samples.size()));
    for (std::size_t i = 0; i < samples.size(); ++i) pts(0, static_cast<Eigen::Index>(i)) = samples[i];
    return EmpiricalMeasure(std::move(pts), std::vector<double>(samples.size(), 1.0));
}

}  // namespace levy_periodic
