// Central-difference verification of reverse-mode gradients. Large graphs are
// checked on a seeded sample of coordinates per parameter tensor; small ones
// exhaustively. Only the nodes downstream of the perturbed parameter are
// re-evaluated, which keeps full-model checks fast.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "thama/executor.hpp"
#include "thama/graph.hpp"
#include "thama/rng.hpp"

namespace thama::ad {

struct GradCheckOptions {
    double epsilon = 1e-5;
    // Above this many total trainable coordinates, each tensor is checked on
    // at most `sample_per_tensor` seeded random coordinates.
    std::size_t exhaustive_limit = 10000;
    std::size_t sample_per_tensor = 256;
    std::uint64_t seed = 0;
    // Coordinates whose double-precision central difference disagrees by more
    // than this are re-differenced on the extended-precision mirror, where
    // cancellation noise is orders of magnitude below the failure bar.
    double refine_threshold = 1e-6;
};

namespace detail {

inline std::vector<std::size_t> pick_coords(std::size_t numel, std::size_t want,
                                            Rng& rng) {
    if (numel <= want) {
        std::vector<std::size_t> all(numel);
        for (std::size_t i = 0; i < numel; ++i) all[i] = i;
        return all;
    }
    // Partial Fisher-Yates over [0, numel).
    std::vector<std::size_t> pool(numel);
    for (std::size_t i = 0; i < numel; ++i) pool[i] = i;
    std::vector<std::size_t> out(want);
    for (std::size_t i = 0; i < want; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(numel - i));
        std::swap(pool[i], pool[j]);
        out[i] = pool[i];
    }
    return out;
}

} // namespace detail

// Compares a precomputed analytic gradient map against central differences of
// the loss evaluated on `ex` (which may run at a higher precision than the
// gradients under test). Exposed separately so tests can hand it deliberately
// corrupted gradients and watch the comparison fail.
template <typename E, typename S>
double max_relative_error(Executor<E>& ex, int loss, const GradientMap<S>& analytic,
                          const GradCheckOptions& opt = {}) {
    if (opt.epsilon <= 0.0) throw ConfigError("grad check: epsilon must be positive");
    const Graph& g = ex.graph();
    std::size_t total = 0;
    for (int pid : g.params()) {
        if (analytic.count(g.node(pid).name)) total += shape_numel(g.node(pid).shape);
    }
    const bool sample = total > opt.exhaustive_limit;

    double worst = 0.0;
    std::size_t tensor_index = 0;
    for (int pid : g.params()) {
        const auto it = analytic.find(g.node(pid).name);
        if (it == analytic.end()) continue;
        const TensorT<S>& a = it->second;
        Rng coord_rng(derive_seed(opt.seed, 0xC0DE + tensor_index++));
        const std::vector<std::size_t> coords =
            sample ? detail::pick_coords(a.numel(), opt.sample_per_tensor, coord_rng)
                   : detail::pick_coords(a.numel(), a.numel(), coord_rng);
        const E eps = static_cast<E>(opt.epsilon);
        for (std::size_t c : coords) {
            const E lp = ex.loss_after_perturb(pid, c, eps, loss);
            const E lm = ex.loss_after_perturb(pid, c, -eps, loss);
            const double fd = static_cast<double>((lp - lm) / (E(2) * static_cast<E>(opt.epsilon)));
            const double an = static_cast<double>(a[c]);
            const double denom = std::max({std::fabs(an), std::fabs(fd), 1e-8});
            worst = std::max(worst, std::fabs(an - fd) / denom);
        }
    }
    return worst;
}

// Full check: one training-mode forward (fixed dropout masks), one backward,
// then central differences per sampled coordinate. Differences run in the
// executor's own precision first; only coordinates the double oracle cannot
// settle (cancellation noise near the bar) are re-differenced on an
// extended-precision mirror sharing parameters, bindings, and masks.
template <typename S>
double grad_check(Executor<S>& ex, int loss, const GradCheckOptions& opt = {}) {
    if (opt.epsilon <= 0.0) throw ConfigError("grad check: epsilon must be positive");
    Rng dropout_rng(derive_seed(opt.seed, 0xD70));
    ex.forward({loss}, Mode::Train, &dropout_rng);
    const GradientMap<S> analytic = ex.backward(loss);

    const Graph& g = ex.graph();
    std::size_t total = 0;
    for (int pid : g.params())
        if (analytic.count(g.node(pid).name)) total += shape_numel(g.node(pid).shape);
    const bool sample = total > opt.exhaustive_limit;

    std::optional<Executor<long double>> mirror;
    auto refine = [&](int pid, std::size_t c) -> double {
        if (!mirror) {
            mirror.emplace(ex.template cast_to<long double>());
            mirror->forward({loss}, Mode::Replay);
        }
        const long double eps = static_cast<long double>(opt.epsilon);
        const long double lp = mirror->loss_after_perturb(pid, c, eps, loss);
        const long double lm = mirror->loss_after_perturb(pid, c, -eps, loss);
        return static_cast<double>((lp - lm) / (2.0L * eps));
    };

    double worst = 0.0;
    std::size_t tensor_index = 0;
    for (int pid : g.params()) {
        const auto it = analytic.find(g.node(pid).name);
        if (it == analytic.end()) continue;
        const TensorT<S>& a = it->second;
        Rng coord_rng(derive_seed(opt.seed, 0xC0DE + tensor_index++));
        const std::vector<std::size_t> coords = detail::pick_coords(
            a.numel(), sample ? opt.sample_per_tensor : a.numel(), coord_rng);
        const S eps = static_cast<S>(opt.epsilon);
        for (std::size_t c : coords) {
            const double lp =
                static_cast<double>(ex.loss_after_perturb(pid, c, eps, loss));
            const double lm =
                static_cast<double>(ex.loss_after_perturb(pid, c, -eps, loss));
            double fd = (lp - lm) / (2.0 * opt.epsilon);
            const double an = static_cast<double>(a[c]);
            auto rel = [an](double f) {
                return std::fabs(an - f) / std::max({std::fabs(an), std::fabs(f), 1e-8});
            };
            double err = rel(fd);
            if (err > opt.refine_threshold) err = rel(refine(pid, c));
            worst = std::max(worst, err);
        }
    }
    return worst;
}

} // namespace thama::ad
