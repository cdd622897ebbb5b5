#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "olora/tape.hpp"

namespace olora {

/// Objective under test. Must be deterministic. When `record_grads` is true the
/// callee runs a full forward+backward so that the grads of the given
/// Parameters are populated; when false only the scalar value is needed.
using Objective = std::function<double(bool record_grads)>;

/// Compares tape gradients against central finite differences
/// (f(x+h) - f(x-h)) / 2h, coordinate by coordinate, over the given
/// Parameters. Returns the max over coordinates of
/// |analytic - numeric| / (|analytic| + |numeric| + 1e-12).
inline double finite_diff_check(const Objective& f, const std::vector<Parameter*>& params,
                                double h = 1e-6) {
    if (!(h > 0.0)) throw RangeError("finite_diff_check: step h must be positive");
    zero_grads(params);
    const double f0 = f(true);
    if (!std::isfinite(f0)) throw NumericError("finite_diff_check: objective is non-finite");

    std::vector<Matrix> analytic;
    analytic.reserve(params.size());
    for (const Parameter* p : params) analytic.push_back(p->grad);

    double max_rel = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Parameter& p = *params[pi];
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double saved = p.value.data()[i];
            p.value.data()[i] = saved + h;
            const double fp = f(false);
            p.value.data()[i] = saved - h;
            const double fm = f(false);
            p.value.data()[i] = saved;
            if (!std::isfinite(fp) || !std::isfinite(fm)) {
                throw NumericError("finite_diff_check: perturbed objective is non-finite");
            }
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic[pi].data()[i];
            const double rel = std::fabs(a - numeric) / (std::fabs(a) + std::fabs(numeric) + 1e-12);
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

}  // namespace olora
