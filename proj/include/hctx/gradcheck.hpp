#pragma once

#include <functional>
#include <vector>

#include "hctx/tensor.hpp"

namespace hctx {

// Builds a scalar loss from the given leaf tensors, recording on the tape.
using LossFn = std::function<Tensor(GradTape*, std::vector<Tensor>&)>;

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::size_t checked = 0;
    bool pass = false;
};

// Relative error with an absolute floor so near-zero gradients compare
// on an absolute scale instead of blowing up the ratio.
double grad_rel_err(double analytic, double numeric, double floor = 1e-4);

// Central-difference check of every element of every input against the
// tape gradient. Inputs are marked requires_grad by the checker.
GradCheckResult gradcheck(const LossFn& f, std::vector<Tensor> inputs,
                          double step = 1e-5, double tol = 1e-4,
                          double floor = 1e-4);

}  // namespace hctx
