#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sjepa/params.hpp"

namespace sjepa {

struct GradCheckOptions {
    double h = 1e-5;
    double tol = 1e-4;
    /// Denominator floor for the relative error |a - n| / max(|a|, |n|, floor).
    double floor = 1e-8;
    /// Coordinates checked per parameter; 0 checks every coordinate.
    std::size_t max_coords = 0;
    std::uint64_t seed = 0;
};

struct ParamGradError {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    std::size_t checked = 0;
};

struct GradCheckReport {
    std::vector<ParamGradError> params;
    double max_rel_error = 0.0;
    bool passed = false;
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences. `loss` must rebuild its graph from the current parameter values
/// on every call. Throws ContractError when two evaluations at the same point
/// disagree bitwise, or when h is outside [1e-7, 1e-3].
GradCheckReport grad_check(const std::function<Tensor()>& loss, ParamSet params, const GradCheckOptions& options = {});

}  // namespace sjepa
