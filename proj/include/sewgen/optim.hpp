#pragma once

#include <cmath>
#include <cstdint>

namespace sewgen {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// One Adam update with bias correction over a flat parameter block. `t` is the
// 1-based step count; grad_scale multiplies the raw gradient (used to turn an
// accumulated sum into a mean).
template <typename T>
void adam_update(T* w, const T* g, T* m, T* v, int64_t n, int64_t t, const AdamConfig& hp,
                 double grad_scale = 1.0) {
    const double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(t));
    for (int64_t i = 0; i < n; ++i) {
        const double gi = static_cast<double>(g[i]) * grad_scale;
        const double mi = hp.beta1 * static_cast<double>(m[i]) + (1.0 - hp.beta1) * gi;
        const double vi = hp.beta2 * static_cast<double>(v[i]) + (1.0 - hp.beta2) * gi * gi;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        const double mhat = mi / bc1;
        const double vhat = vi / bc2;
        w[i] = static_cast<T>(static_cast<double>(w[i]) - hp.lr * mhat / (std::sqrt(vhat) + hp.eps));
    }
}

} // namespace sewgen
