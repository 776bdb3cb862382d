#include "hctx/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace hctx {

double grad_rel_err(double analytic, double numeric, double floor) {
    const double denom =
        std::max({std::fabs(analytic), std::fabs(numeric), floor});
    return std::fabs(analytic - numeric) / denom;
}

GradCheckResult gradcheck(const LossFn& f, std::vector<Tensor> inputs,
                          double step, double tol, double floor) {
    for (Tensor& t : inputs) t.set_requires_grad(true);

    GradTape tape;
    Tensor loss = f(&tape, inputs);
    if (loss.numel() != 1) {
        throw std::invalid_argument("gradcheck: loss must be scalar");
    }
    for (Tensor& t : inputs) t.zero_grad();
    tape.backward(loss);

    GradCheckResult result;
    for (Tensor& t : inputs) {
        const std::vector<double>& g = t.grad();
        for (std::size_t i = 0; i < t.numel(); ++i) {
            const double saved = t.data()[i];
            t.data()[i] = saved + step;
            const double up = f(nullptr, inputs).value();
            t.data()[i] = saved - step;
            const double down = f(nullptr, inputs).value();
            t.data()[i] = saved;
            const double numeric = (up - down) / (2.0 * step);
            result.max_rel_err =
                std::max(result.max_rel_err, grad_rel_err(g[i], numeric, floor));
            ++result.checked;
        }
    }
    result.pass = result.max_rel_err < tol;
    return result;
}

}  // namespace hctx
