#pragma once

// Central finite-difference gradient checks in double precision.
//
// The scalar probed is sum(f(inputs) * R) for a fixed random R, so every
// output element contributes. Each checked entry compares the analytic
// derivative a with (L(x + h) - L(x - h)) / 2h = n by |a - n| / max(|a|, |n|);
// entries where both are below 1e-9 are compared absolutely instead.
//
// Central differences are only an oracle where the function is smooth over
// [x - h, x + h]. When a leaky_relu input changes sign inside that stencil,
// the step is divided by 10 until it no longer does; such entries are counted.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "generators.hpp"
#include "uad/autograd.hpp"
#include "uad/ops.hpp"

namespace gradcheck {

using uad::TensorD;
using Fn = std::function<uad::Var<double>(uad::Tape<double>&, const std::vector<uad::Var<double>>&)>;

struct Options {
    double h = 1e-3;
    double tolerance = 1e-3;
    /// Entries checked per tensor; larger tensors are sampled.
    std::int64_t max_entries = 8;
    std::uint64_t seed = 1;
};

struct Report {
    double max_error = 0;
    std::string worst;
    std::int64_t checked = 0;
    /// Entries whose stencil straddled a leaky_relu kink at the nominal step.
    std::int64_t kinked = 0;
    double min_step = 0;
    bool ok(double tol = 1e-3) const { return max_error < tol; }
};

inline double entry_error(double a, double n) {
    const double scale = std::max(std::abs(a), std::abs(n));
    if (scale < 1e-9) return std::abs(a - n);
    return std::abs(a - n) / scale;
}

/// Checks d(sum(fn(inputs) * R))/d(inputs and params). `params` may be null.
inline Report check(const Fn& fn, std::vector<TensorD> inputs, uad::ParameterStore<double>* params,
                    const Options& opt = {}) {
    gen::Source src(opt.seed);
    TensorD weights;
    auto loss = [&](uad::Tape<double>& tape, std::vector<uad::Var<double>>* leaves) {
        std::vector<uad::Var<double>> vars;
        for (const auto& x : inputs) vars.push_back(tape.leaf(x, leaves != nullptr));
        if (leaves) *leaves = vars;
        auto out = fn(tape, vars);
        if (weights.empty()) weights = src.tensor<double>(out.shape(), -1.0, 1.0);
        return uad::sum(uad::mul(out, uad::constant(weights)));
    };

    uad::Tape<double> tape;
    std::vector<uad::Var<double>> leaves;
    auto l = loss(tape, &leaves);
    const auto grads = tape.backward(l);

    auto eval = [&](std::vector<bool>* signs) {
        uad::KinkRecorder rec;
        uad::Tape<double> t(false);
        const double v = loss(t, nullptr).value()[0];
        if (signs) *signs = rec.signs();
        return v;
    };
    std::vector<bool> base_signs;
    eval(&base_signs);

    Report rep;
    rep.min_step = opt.h;
    auto probe = [&](TensorD& value, const TensorD& analytic, const std::string& name, auto&& bump) {
        std::vector<std::int64_t> idx;
        if (value.size() <= opt.max_entries) {
            for (std::int64_t i = 0; i < value.size(); ++i) idx.push_back(i);
        } else {
            while (static_cast<std::int64_t>(idx.size()) < opt.max_entries) {
                const auto i = src.integer(0, value.size() - 1);
                if (std::find(idx.begin(), idx.end(), i) == idx.end()) idx.push_back(i);
            }
        }
        for (auto i : idx) {
            const double orig = value[i];
            double h = opt.h, up = 0, down = 0;
            for (;;) {
                std::vector<bool> s_up, s_down;
                bump(i, orig + h);
                up = eval(&s_up);
                bump(i, orig - h);
                down = eval(&s_down);
                bump(i, orig);
                if ((s_up == base_signs && s_down == base_signs) || h < 1e-8) break;
                h /= 10;
            }
            if (h < opt.h) {
                ++rep.kinked;
                rep.min_step = std::min(rep.min_step, h);
            }
            const double numeric = (up - down) / (2 * h);
            const double err = entry_error(analytic[i], numeric);
            ++rep.checked;
            if (err > rep.max_error || !std::isfinite(err)) {
                rep.max_error = std::isfinite(err) ? err : 1e300;
                rep.worst = name + "[" + std::to_string(i) + "] analytic " + std::to_string(analytic[i]) + " numeric " +
                            std::to_string(numeric);
            }
        }
    };

    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const auto analytic = tape.grad(leaves[k]);
        probe(inputs[k], analytic, "input" + std::to_string(k), [&](std::int64_t i, double v) { inputs[k][i] = v; });
    }
    if (params) {
        for (auto& p : *params) {
            const auto analytic = grads.of(p);
            auto snapshot = p.value();
            probe(snapshot, analytic, p.name(), [&](std::int64_t i, double v) {
                p.mutable_value()[i] = v;
                snapshot[i] = v;
            });
        }
    }
    return rep;
}

} // namespace gradcheck
