#pragma once

// Random case generators for property tests.

#include <cstdint>
#include <random>
#include <vector>

#include "uad/tensor.hpp"

namespace gen {

class Source {
public:
    explicit Source(std::uint64_t seed) : eng_(seed) {}

    double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(eng_); }
    std::int64_t integer(std::int64_t lo, std::int64_t hi) {
        return std::uniform_int_distribution<std::int64_t>(lo, hi)(eng_);
    }
    bool coin(double p = 0.5) { return uniform() < p; }
    double normal() { return std::normal_distribution<double>(0.0, 1.0)(eng_); }

    template <class T = float>
    uad::TensorT<T> tensor(uad::Shape shape, double lo = -1.0, double hi = 1.0) {
        uad::TensorT<T> t(std::move(shape));
        for (auto& v : t.storage()) v = static_cast<T>(uniform(lo, hi));
        return t;
    }

    /// [h, w] binary mask: a random ellipse, occasionally with random holes.
    uad::Tensor ellipse_mask(std::int64_t h, std::int64_t w) {
        uad::Tensor m({h, w});
        const double cy = uniform(0.3, 0.7) * h, cx = uniform(0.3, 0.7) * w;
        const double ry = uniform(0.2, 0.5) * h, rx = uniform(0.2, 0.5) * w;
        const bool holes = coin(0.3);
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t x = 0; x < w; ++x) {
                const double dy = (y - cy) / ry, dx = (x - cx) / rx;
                m.at(y, x) = dy * dy + dx * dx <= 1.0 && !(holes && coin(0.1)) ? 1.f : 0.f;
            }
        if (m.at(h / 2, w / 2) == 0.f) m.at(h / 2, w / 2) = 1.f;
        return m;
    }

    /// [h, w] residual-like plane mixing negative values, zeros, ties and a few bright spots.
    uad::Tensor residual_plane(std::int64_t h, std::int64_t w) {
        uad::Tensor r({h, w});
        const double zero_p = uniform(0.0, 0.5);
        for (auto& v : r.storage()) {
            if (coin(zero_p)) v = 0.f;
            else if (coin(0.1)) v = static_cast<float>(integer(1, 4)) * 0.25f;
            else v = static_cast<float>(uniform(-1.0, 1.0));
        }
        const auto spots = integer(0, 3);
        for (std::int64_t s = 0; s < spots; ++s) {
            const auto y0 = integer(0, h - 1), x0 = integer(0, w - 1), size = integer(2, 6);
            for (std::int64_t y = y0; y < std::min(h, y0 + size); ++y)
                for (std::int64_t x = x0; x < std::min(w, x0 + size); ++x) r.at(y, x) = static_cast<float>(uniform(1.0, 2.0));
        }
        return r;
    }

private:
    std::mt19937_64 eng_;
};

inline std::vector<double> to_double(const uad::Tensor& t) { return {t.data().begin(), t.data().end()}; }

} // namespace gen
