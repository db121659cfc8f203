#pragma once

// Shared fixtures for the unit and acceptance suites: random generators,
// a central-difference gradient checker and small graph builders.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "xghsi/autodiff.hpp"

namespace xghsi::testing {

inline Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor<double> t(std::move(shape));
    for (auto& x : t.data) {
        x = dist(rng);
    }
    return t;
}

/// Builds a scalar loss on a fresh tape from parameter leaves.
using LossBuilder = std::function<ad::Var<double>(ad::Tape<double>&, const std::vector<ad::Var<double>>&)>;

inline double loss_value(const std::vector<Tensor<double>>& params, const LossBuilder& build) {
    ad::Tape<double> tape;
    std::vector<ad::Var<double>> leaves;
    for (const auto& p : params) {
        leaves.push_back(tape.constant(p));
    }
    return build(tape, leaves).value().data[0];
}

/// Largest per-tensor relative error ||analytic - numeric|| / max(||analytic|| + ||numeric||, 1e-12)
/// between backward() and central differences.
inline double gradient_check(const std::vector<Tensor<double>>& params, const LossBuilder& build,
                             double step = 1e-4) {
    ad::Tape<double> tape;
    std::vector<ad::Var<double>> leaves;
    for (const auto& p : params) {
        leaves.push_back(tape.parameter(p));
    }
    auto loss = build(tape, leaves);
    tape.backward(loss);

    double worst = 0.0;
    for (std::size_t k = 0; k < params.size(); ++k) {
        const auto& analytic = leaves[k].grad();
        double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
        for (std::size_t i = 0; i < params[k].size(); ++i) {
            auto plus = params;
            auto minus = params;
            plus[k].data[i] += step;
            minus[k].data[i] -= step;
            const double numeric = (loss_value(plus, build) - loss_value(minus, build)) / (2.0 * step);
            const double a = analytic.data[i];
            diff2 += (a - numeric) * (a - numeric);
            a2 += a * a;
            n2 += numeric * numeric;
        }
        const double denom = std::max(std::sqrt(a2) + std::sqrt(n2), 1e-12);
        worst = std::max(worst, std::sqrt(diff2) / denom);
    }
    return worst;
}

} // namespace xghsi::testing
