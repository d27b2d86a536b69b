#pragma once

#include <cmath>
#include <functional>
#include <vector>

// Central finite differences on 64-bit floats: step 1e-5, relative error
// target 1e-4. f re-evaluates the scalar objective from a flat parameter
// vector; the caller supplies the analytic gradient to compare against.
inline double fd_derivative(const std::function<double(const std::vector<double>&)>& f,
                            std::vector<double> theta, size_t i, double step = 1e-5) {
    double orig = theta[i];
    theta[i] = orig + step;
    double up = f(theta);
    theta[i] = orig - step;
    double down = f(theta);
    return (up - down) / (2.0 * step);
}

inline double rel_err(double a, double b) {
    double denom = std::abs(a) + std::abs(b);
    if (denom < 1e-10) return 0.0;  // both negligibly small
    return std::abs(a - b) / denom;
}
