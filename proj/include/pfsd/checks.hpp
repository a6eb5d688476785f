#pragma once

#include <ostream>

#include "pfsd/tensor.hpp"

namespace pfsd {

struct SuiteResult {
    int checks = 0;
    int failures = 0;
    double seconds = 0.0;

    bool pass() const { return checks > 0 && failures == 0; }
};

// Cross-checks the fast kernels and taped losses against the definitional
// loop implementations on random instances. CSV rows: op,instances,
// max_abs_err,pass. Tolerance 1e-10 in f64.
SuiteResult run_oracle_suite(int instances_per_op, std::ostream& os, uint64_t seed = 7);

// Central-difference gradient checks for every differentiable op and loss.
// CSV rows: op_name,shape,max_rel_err,pass. h = 1e-5, relative tol 1e-4, f64.
SuiteResult run_gradcheck_suite(int configs_per_op, std::ostream& os, uint64_t seed = 11);

}  // namespace pfsd
