#pragma once

#include <functional>

#include "mct/tape.hpp"

namespace mct {

// A differentiable scalar function of one tensor: builds the value on the
// given tape from the given input var.
using ScalarFn = std::function<Var(Tape&, Var)>;

// Max over coordinates of |analytic - central difference| / (|analytic| + 1e-12).
// The function is re-evaluated on a fresh tape for every probe, so it must be
// deterministic.
inline double finite_difference_check(const ScalarFn& f, const Tensor& x, double h) {
    if (h <= 0.0) throw ValueError("finite_difference_check: h must be positive");

    Tape tape;
    Var xv = tape.put(x);
    Var y = f(tape, xv);
    Tensor analytic = tape.grad(y, {xv})[0].value();

    auto eval = [&](const Tensor& probe) {
        Tape t;
        Var v = t.put(probe);
        return f(t, v).value().item();
    };

    double max_rel = 0.0;
    for (int64_t i = 0; i < x.numel(); ++i) {
        Tensor hi = x, lo = x;
        hi.at(i) += h;
        lo.at(i) -= h;
        const double fd = (eval(hi) - eval(lo)) / (2.0 * h);
        const double rel = std::abs(analytic.at(i) - fd) / (std::abs(analytic.at(i)) + 1e-12);
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

}  // namespace mct
