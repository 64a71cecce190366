#include "sjepa/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sjepa/errors.hpp"
#include "sjepa/rng.hpp"

namespace sjepa {

GradCheckReport grad_check(const std::function<Tensor()>& loss, ParamSet params, const GradCheckOptions& options) {
    if (!(options.h >= 1e-7 && options.h <= 1e-3)) {
        throw ContractError("grad_check: step h must lie in [1e-7, 1e-3]");
    }
    for (auto& p : params) {
        p.tensor.set_requires_grad(true);
        p.tensor.zero_grad();
    }
    Tape::current().reset();
    Tensor value = loss();
    const double base = value.item();
    backward(value);

    auto evaluate = [&] {
        NoGradGuard no_grad;
        return loss().item();
    };
    if (evaluate() != base) {
        throw ContractError("grad_check: loss is not deterministic (two evaluations disagree)");
    }

    GradCheckReport report;
    Rng rng(options.seed);
    for (auto& p : params) {
        ParamGradError err;
        err.name = p.name;
        const std::size_t n = p.tensor.numel();
        std::vector<double> analytic(n, 0.0);
        if (p.tensor.has_grad()) {
            auto g = p.tensor.grad();
            std::copy(g.begin(), g.end(), analytic.begin());
        }
        std::vector<std::size_t> coords(n);
        std::iota(coords.begin(), coords.end(), 0);
        if (options.max_coords > 0 && options.max_coords < n) {
            std::shuffle(coords.begin(), coords.end(), rng);
            coords.resize(options.max_coords);
            std::sort(coords.begin(), coords.end());
        }
        auto data = p.tensor.mutable_data();
        for (auto i : coords) {
            const double saved = data[i];
            data[i] = saved + options.h;
            const double plus = evaluate();
            data[i] = saved - options.h;
            const double minus = evaluate();
            data[i] = saved;
            const double numeric = (plus - minus) / (2.0 * options.h);
            const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), options.floor});
            const double rel = std::abs(analytic[i] - numeric) / denom;
            if (rel > err.max_rel_error || err.checked == 0) {
                err.max_rel_error = rel;
                err.worst_index = i;
                err.analytic = analytic[i];
                err.numeric = numeric;
            }
            ++err.checked;
        }
        report.max_rel_error = std::max(report.max_rel_error, err.max_rel_error);
        report.params.push_back(std::move(err));
    }
    report.passed = report.max_rel_error < options.tol;
    return report;
}

}  // namespace sjepa
