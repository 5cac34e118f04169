#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "gelato/tape.hpp"

namespace gelato {

struct ClipResult {
    double pre_norm = 0.0;
    double post_norm = 0.0;
    double scale = 1.0;
};

inline double global_norm(const GradStore& grads) {
    double s = 0.0;
    for (const auto& [_, g] : grads) s += squared_norm(g.data());
    return std::sqrt(s);
}

// Rescales every gradient by max_norm / g when the global L2 norm g exceeds
// max_norm.
inline ClipResult clip_global_norm(GradStore& grads, double max_norm) {
    if (!(max_norm > 0.0)) throw ConfigError("max_norm must be positive");
    ClipResult r;
    r.pre_norm = global_norm(grads);
    if (r.pre_norm > max_norm) {
        r.scale = max_norm / r.pre_norm;
        for (auto& [_, g] : grads)
            for (auto& v : g.data()) v *= r.scale;
        r.post_norm = global_norm(grads);
    } else {
        r.post_norm = r.pre_norm;
    }
    return r;
}

struct GradCheckOptions {
    double h = 1e-4;
    // Magnitudes below this are compared on an absolute scale; FD roundoff
    // makes a pure relative error meaningless for near-zero gradients.
    double floor = 1e-6;
};

// Builds the loss on a fresh tape each time. The closure must read parameter
// values from the given ParamSets at call time.
using LossBuilder = std::function<Var(Tape&)>;

inline double loss_value(const LossBuilder& build) {
    Tape t;
    const double v = t.value(build(t)).item();
    if (!std::isfinite(v)) throw NumericError("loss is not finite");
    return v;
}

// Fourth-order central-difference check of every trainable entry across
// `sets`; returns the worst |fd - tape| / max(|fd|, |tape|, floor). The
// two-point stencil's O(h^2) error exceeds 1e-4 at small temperatures.
inline double grad_check(const LossBuilder& build, const std::vector<ParamSet*>& sets,
                         GradCheckOptions opt = {}) {
    if (!(opt.h >= 1e-7 && opt.h <= 1e-3)) throw ConfigError("grad_check step must lie in [1e-7, 1e-3]");
    GradStore analytic;
    {
        Tape t;
        Var loss = build(t);
        if (!std::isfinite(t.value(loss).item())) throw NumericError("loss is not finite");
        t.backward(loss);
        analytic = t.gradients();
    }
    double worst = 0.0;
    for (ParamSet* set : sets) {
        for (const auto& name : set->names()) {
            if (!set->trainable(name)) continue;
            const std::size_t n = set->get(name).size();
            auto it = analytic.find(name);
            for (std::size_t i = 0; i < n; ++i) {
                const double orig = set->get(name)[i];
                auto at = [&](double offset) {
                    set->mutate(name)[i] = orig + offset;
                    return loss_value(build);
                };
                const double d1 = at(opt.h) - at(-opt.h);
                const double d2 = at(2.0 * opt.h) - at(-2.0 * opt.h);
                set->mutate(name)[i] = orig;
                const double fd = (8.0 * d1 - d2) / (12.0 * opt.h);
                const double an = it == analytic.end() ? 0.0 : it->second[i];
                const double denom = std::max({std::abs(fd), std::abs(an), opt.floor});
                worst = std::max(worst, std::abs(fd - an) / denom);
            }
        }
    }
    return worst;
}

} // namespace gelato
