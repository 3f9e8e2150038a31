#pragma once

#include <string>
#include <vector>

#include "raunet/tensor.hpp"

namespace raunet {

struct GradCheckResult {
    std::string op;
    double max_rel_err = 0.0;
    double tolerance = 0.0;
    int cases = 0;

    bool passed() const { return max_rel_err < tolerance; }
};

// Central finite-difference check of every differentiable op at F64:
// random small shapes, analytic gradients from the tape vs (f(x+h)-f(x-h))/2h
// with h = 1e-5, relative error |a-fd| / max(1,|a|) maximised over all input
// elements. Covers the tensor ops, the neural ops, the attention composite
// and the three losses.
std::vector<GradCheckResult> run_gradcheck(std::uint64_t seed, int cases_per_op);

// Generic engine, reusable from tests: `build` must reconstruct the scalar
// loss from the same leaves on every call.
struct FdProblem {
    std::vector<TensorPtr<double>> leaves;  // requires_grad inputs
    std::function<TensorPtr<double>(Tape<double>*)> build;
};

double fd_max_rel_err(const FdProblem& problem, double step = 1e-5);

}  // namespace raunet
