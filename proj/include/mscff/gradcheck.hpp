#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace mscff {

enum class GradCheckTarget { Conv, DilatedConv, Deconv, BatchNorm, MaxPool, Relu, Mse, Cbrr, Model };

struct GradCheckResult {
    std::string name;
    double max_error = 0.0;  // relative, except Mse which is absolute
    double tolerance = 0.0;
    std::size_t probes = 0;
    std::size_t skipped = 0;  // probes on a non-differentiable point

    bool passed() const { return max_error < tolerance; }
};

/// |a - n| / max(|a|, |n|, floor). The floor keeps gradients that are zero
/// analytically (e.g. a conv bias feeding batch norm) from dividing noise by
/// noise.
double relative_error(double analytic, double numeric, double floor = 1e-4);

/// Compares analytic backward passes against central differences
/// (eps = 1e-4) in double precision on small random instances.
GradCheckResult grad_check(GradCheckTarget target, std::uint64_t seed);

/// Every target, in declaration order.
std::vector<GradCheckResult> grad_check_all(std::uint64_t seed);

std::optional<GradCheckTarget> parse_grad_check_target(const std::string& name);
std::string to_string(GradCheckTarget target);

}  // namespace mscff
