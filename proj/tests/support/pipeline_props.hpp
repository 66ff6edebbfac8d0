#pragma once

// Randomized checks of the residual -> mask pipeline invariants.

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "generators.hpp"
#include "uad/pipeline.hpp"

namespace props {

struct Tally {
    std::int64_t cases = 0;
    /// Cases where the residual or the mask is non-zero outside the brain mask.
    std::int64_t outside_mask = 0;
    /// Cases where rewriting strictly negative residuals changed the mask.
    std::int64_t clamp = 0;
    /// Cases with a mask value other than 0 or 1.
    std::int64_t binary = 0;
    /// Cases where the median filter produced a value absent from its input.
    std::int64_t selection = 0;
    std::string first_failure;

    bool ok() const { return cases > 0 && outside_mask + clamp + binary + selection == 0; }
};

inline Tally pipeline_invariants(std::int64_t n, std::uint64_t seed) {
    gen::Source src(seed);
    Tally t;
    auto fail = [&](std::int64_t& counter, std::int64_t i, const char* what) {
        if (t.first_failure.empty()) t.first_failure = std::string(what) + " in case " + std::to_string(i);
        ++counter;
    };
    for (std::int64_t i = 0; i < n; ++i, ++t.cases) {
        const auto h = src.integer(6, 40), w = src.integer(6, 40);
        const auto mask = src.ellipse_mask(h, w);
        const double p = src.coin() ? 1.0 : src.uniform(0.5, 30.0);

        uad::Tensor x({h, w, 1}), x_hat({h, w, 1});
        const auto plane = src.residual_plane(h, w);
        for (std::int64_t k = 0; k < x.size(); ++k) {
            x_hat[k] = static_cast<float>(src.uniform());
            x[k] = x_hat[k] + plane[k];
        }
        const auto r = uad::residual(x, x_hat, mask);
        const auto m = uad::postprocess(r, mask, p);

        bool outside = false, binary = true;
        for (std::int64_t k = 0; k < mask.size(); ++k) {
            if (mask[k] == 0.f && (r[k] != 0.f || m[k] != 0.f)) outside = true;
            if (m[k] != 0.f && m[k] != 1.f) binary = false;
        }
        if (outside) fail(t.outside_mask, i, "non-zero residual or mask outside the brain");
        if (!binary) fail(t.binary, i, "non-binary mask");

        auto r2 = r;
        for (auto& v : r2.storage())
            if (v < 0.f) v = -static_cast<float>(src.uniform(1e-6, 10.0));
        if (!(uad::postprocess(r2, mask, p) == m)) fail(t.clamp, i, "mask depends on negative residuals");

        const std::int64_t k = 2 * src.integer(0, 3) + 1;
        auto in = plane;
        const auto out = uad::median_filter2d(in, k);
        auto sorted = in.storage();
        std::sort(sorted.begin(), sorted.end());
        bool subset = true;
        for (float v : out.data()) subset = subset && std::binary_search(sorted.begin(), sorted.end(), v);
        if (!subset) fail(t.selection, i, "median filter created a value");
    }
    return t;
}

} // namespace props
