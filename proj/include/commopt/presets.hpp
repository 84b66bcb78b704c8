#pragma once

// Constant presets.  "paper" keeps the published constants (impractically
// conservative union-bound factors); "desk" uses calibrated small-scale
// values so that invariants, not union-bound slack, are what gets tested.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

namespace commopt {

struct Preset {
    std::string name = "desk";

    // refinement sampling (leverage score overestimates)
    double jl_rows_factor = 200.0;   // r = factor * ln(n); paper: 1e6
    int kernel_primes = 16;          // z; paper: ceil(100 ln n)
    double sample_c = 3.0;           // c in Sample(u, alpha, c)

    // block leverage score estimation
    double block_C = 0.25;                // pruning constant C
    double block_sketch_rows_per_k = 8.0; // sketch rows = ceil(f * k_r)

    // block leverage sampling (spectral approximation sample count)
    double block_sample_factor = 2.0; // N = f * (d/(beta eps^2)) ln(d/(beta eps)) ln(d)

    // lp sampler sketch
    double lp_sampler_width_factor = 4.0; // count-sketch width = next_pow2(max(64, f*n))
    int lp_sampler_depth_extra = 5;       // depth = ceil(log2 n) + extra

    // relative Lewis weight sampling
    double outlier_scan_factor = 2.0; // scans = ceil(f * T * max(1, ln T) * ln(1/delta))

    // recursive Lewis form
    double lewis_rows_factor = 4.0; // per-level samples N = ceil(f * d * max(1, ln d))

    // IPM (desk replaces the sqrt(d)-rate schedule with a bolder one)
    double ipm_gamma_cap = 0.05;     // desk cap on the step normalization gamma
    double ipm_mu_rate_factor = 8.0; // mu shrink rate = 1/(f * sqrt(n))
    std::uint64_t ipm_max_steps = 2'000'000;
    double im_gamma_factor = 40.0;   // gamma_im = f * log d (paper: 1000 C log d)

    static Preset desk() { return Preset{}; }

    static Preset paper() {
        Preset p;
        p.name = "paper";
        p.jl_rows_factor = 1e6;
        p.kernel_primes = -1; // ceil(100 ln n), resolved at use site
        p.block_C = 0.25;     // "absolute constant C", never pinned in print
        p.ipm_gamma_cap = std::numeric_limits<double>::infinity();
        p.ipm_mu_rate_factor = 0.0; // use gamma*alpha/(2^15 sqrt(d))
        p.im_gamma_factor = 1000.0;
        return p;
    }

    static Preset by_name(const std::string& name) {
        if (name == "desk") return desk();
        if (name == "paper") return paper();
        throw std::invalid_argument("unknown preset: " + name);
    }

    int refinement_jl_rows(Eigen::Index n) const {
        return int(std::ceil(jl_rows_factor * std::log(std::max<double>(double(n), 2.0))));
    }

    int num_kernel_primes(Eigen::Index n) const {
        if (kernel_primes > 0) return kernel_primes;
        return int(std::ceil(100.0 * std::log(std::max<double>(double(n), 2.0))));
    }
};

} // namespace commopt
