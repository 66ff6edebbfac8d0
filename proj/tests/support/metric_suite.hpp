#pragma once

// Library metrics against the brute-force oracles on random cases.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "generators.hpp"
#include "oracles.hpp"
#include "uad/data.hpp"
#include "uad/metrics.hpp"

namespace metricsuite {

struct Result {
    std::int64_t auroc_cases = 0;
    double auroc_max_err = 0;
    std::int64_t dice_cases = 0;
    double dice_max_err = 0;
    std::int64_t median_cases = 0;
    std::int64_t median_mismatches = 0;
    std::int64_t ssim_cases = 0;
    double ssim_max_err = 0;
    std::int64_t bilinear_cases = 0;
    double bilinear_max_err = 0;

    bool ok() const {
        return auroc_max_err < 1e-9 && dice_max_err < 1e-12 && median_mismatches == 0 && ssim_max_err < 1e-6 &&
               bilinear_max_err < 1e-5;
    }
};

/// 64 scores with both classes present; about a third of the cases are
/// quantized to force ties.
inline void auroc_case(gen::Source& src, std::vector<double>& scores, std::vector<std::uint8_t>& labels) {
    scores.assign(64, 0.0);
    labels.assign(64, 0);
    const bool ties = src.coin(0.35);
    const double p = src.uniform(0.1, 0.9);
    for (int i = 0; i < 64; ++i) {
        labels[i] = src.coin(p) ? 1 : 0;
        const double s = src.uniform() + (labels[i] ? src.uniform(0, 0.5) : 0.0);
        scores[i] = ties ? std::round(s * 4) / 4 : s;
    }
    labels[0] = 1;
    labels[1] = 0;
}

inline Result run(std::uint64_t seed) {
    gen::Source src(seed);
    Result r;

    for (int t = 0; t < 50; ++t, ++r.auroc_cases) {
        std::vector<double> s;
        std::vector<std::uint8_t> l;
        auroc_case(src, s, l);
        r.auroc_max_err = std::max(r.auroc_max_err, std::abs(uad::auroc(s, l) - oracle::mann_whitney_auroc(s, l)));
    }

    for (int t = 0; t < 200; ++t, ++r.dice_cases) {
        const auto h = src.integer(1, 12), w = src.integer(1, 12);
        const double pm = src.uniform(0, 0.6), pl = src.uniform(0, 0.6);
        uad::Tensor m({h, w}), l({h, w});
        std::vector<int> mi(static_cast<std::size_t>(h * w)), li(mi.size());
        for (std::int64_t i = 0; i < m.size(); ++i) {
            mi[i] = src.coin(pm);
            li[i] = src.coin(pl);
            m[i] = static_cast<float>(mi[i]);
            l[i] = static_cast<float>(li[i]);
        }
        r.dice_max_err = std::max(r.dice_max_err, std::abs(uad::dice(m, l) - oracle::dice(mi, li)));
    }

    for (int t = 0; t < 50; ++t, ++r.median_cases) {
        const auto h = src.integer(1, 16), w = src.integer(1, 16);
        const int k = static_cast<int>(2 * src.integer(0, 3) + 1);
        const auto img = src.coin() ? src.tensor({h, w}) : src.residual_plane(h, w);
        const auto got = uad::median_filter2d(img, k);
        const auto want = oracle::median_filter(img.storage(), static_cast<int>(h), static_cast<int>(w), k);
        if (got.storage() != want) ++r.median_mismatches;
    }

    for (int t = 0; t < 20; ++t, ++r.ssim_cases) {
        const auto h = t == 0 ? 16 : src.integer(11, 24), w = t == 0 ? 16 : src.integer(11, 24);
        auto a = src.tensor({h, w}, 0, 1);
        auto b = a;
        const double noise = src.uniform(0, 0.5);
        for (auto& v : b.storage()) v = std::clamp(v + static_cast<float>(src.uniform(-noise, noise)), 0.f, 1.f);
        r.ssim_max_err = std::max(r.ssim_max_err, std::abs(uad::ssim(a, b) - oracle::ssim(gen::to_double(a), gen::to_double(b),
                                                                                           static_cast<int>(h), static_cast<int>(w))));
    }

    for (int t = 0; t < 50; ++t, ++r.bilinear_cases) {
        const auto h = src.integer(1, 10), w = src.integer(1, 10), oh = src.integer(1, 20), ow = src.integer(1, 20);
        const auto img = src.tensor({h, w});
        const auto out = uad::resize_bilinear(img, oh, ow);
        const auto ref = gen::to_double(img);
        for (std::int64_t i = 0; i < oh; ++i)
            for (std::int64_t j = 0; j < ow; ++j)
                r.bilinear_max_err = std::max(
                    r.bilinear_max_err,
                    std::abs(out.at(i, j) - oracle::bilinear_at(ref, static_cast<int>(h), static_cast<int>(w), static_cast<int>(oh),
                                                                static_cast<int>(ow), static_cast<int>(i), static_cast<int>(j))));
    }
    return r;
}

} // namespace metricsuite
