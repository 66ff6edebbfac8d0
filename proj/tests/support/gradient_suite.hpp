#pragma once

// Finite-difference checks of every block and every desk architecture on
// inputs no larger than 8x8, shared by the unit tests and the acceptance run.

#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "uad/blocks.hpp"
#include "uad/models.hpp"

namespace gradsuite {

using namespace uad;
using V = Var<double>;
using Vs = std::vector<V>;

struct Case {
    std::string name;
    gradcheck::Report report;
};

/// A desk configuration shrunk to 8x8 images: patch 2 gives a 4x4 token grid,
/// conv AEs get stages that fit. Widths, heads and layer counts stay desk.
inline ModelConfig tiny_config(Architecture a) {
    auto c = make_config(a, Preset::desk);
    c.height = c.width = 8;
    if (has_transformer(a)) c.block.patch_size = 2;
    if (a == Architecture::ae_dense || a == Architecture::ae_spatial) c.block.conv_channels = {8, 16};
    validate(c);
    return c;
}

inline TokenSequence<double> tokens(const V& v, std::int64_t rows, std::int64_t cols) { return {v, rows, cols}; }

inline gradcheck::Options options(std::uint64_t seed, std::int64_t entries = 8) {
    gradcheck::Options o;
    o.seed = seed;
    o.max_entries = entries;
    return o;
}

inline std::vector<Case> block_cases() {
    std::vector<Case> out;
    gen::Source src(404);
    const std::int64_t k = 8, heads = 2;

    auto run_block = [&](const std::string& name, auto&& make_fn, std::vector<Shape> shapes, double lo = -1,
                         double hi = 1) {
        ParameterStore<double> store;
        ParamFactory<double> f(store, 17);
        gradcheck::Fn fn = make_fn(f);
        std::vector<TensorD> inputs;
        for (auto& s : shapes) inputs.push_back(src.tensor<double>(s, lo, hi));
        out.push_back({name, gradcheck::check(fn, inputs, &store, options(out.size() + 1, 16))});
    };

    run_block("patchify", [](auto&) -> gradcheck::Fn { return [](Tape<double>&, const Vs& v) { return patchify(v[0], 2); }; },
              {{2, 4, 6, 2}});
    run_block("unpatchify", [](auto&) -> gradcheck::Fn {
        return [](Tape<double>&, const Vs& v) { return unpatchify(v[0], 2, 3, 2, 2); };
    }, {{2, 6, 8}});
    run_block("PatchEmbed", [&](auto& f) -> gradcheck::Fn {
        auto b = std::make_shared<PatchEmbed<double>>(f, "embed", 8, 8, 1, 2, k);
        return [b](Tape<double>& t, const Vs& v) { return b->forward(t, v[0]).tokens; };
    }, {{2, 8, 8, 1}}, 0, 1);
    run_block("PatchUnembed", [&](auto& f) -> gradcheck::Fn {
        auto b = std::make_shared<PatchUnembed<double>>(f, "unembed", k, 2, 1);
        return [b](Tape<double>& t, const Vs& v) { return b->forward(t, tokens(v[0], 2, 2)); };
    }, {{2, 4, k}});
    run_block("MultiHeadAttention", [&](auto& f) -> gradcheck::Fn {
        auto b = std::make_shared<MultiHeadAttention<double>>(f, "attn", k, heads);
        return [b](Tape<double>& t, const Vs& v) { return b->forward(t, tokens(v[0], 2, 2)).tokens; };
    }, {{2, 4, k}});
    run_block("TransformerLayer", [&](auto& f) -> gradcheck::Fn {
        auto b = std::make_shared<TransformerLayer<double>>(f, "layer", k, heads, 4);
        return [b](Tape<double>& t, const Vs& v) { return b->forward(t, tokens(v[0], 2, 2)).tokens; };
    }, {{2, 4, k}});
    run_block("PatchMerging", [&](auto& f) -> gradcheck::Fn {
        auto b = std::make_shared<PatchMerging<double>>(f, "merge", k);
        return [b](Tape<double>& t, const Vs& v) { return b->forward(t, tokens(v[0], 4, 4)).tokens; };
    }, {{2, 16, k}});
    run_block("PatchExpanding", [&](auto& f) -> gradcheck::Fn {
        auto b = std::make_shared<PatchExpanding<double>>(f, "expand", k);
        return [b](Tape<double>& t, const Vs& v) { return b->forward(t, tokens(v[0], 2, 2)).tokens; };
    }, {{2, 4, k}});
    run_block("ConvEncoder", [&](auto& f) -> gradcheck::Fn {
        auto b = std::make_shared<ConvEncoder<double>>(f, "enc", 1, std::vector<std::int64_t>{4, 6});
        return [b](Tape<double>& t, const Vs& v) { return b->forward(t, v[0]); };
    }, {{2, 8, 8, 1}}, 0, 1);
    run_block("ConvDecoder", [&](auto& f) -> gradcheck::Fn {
        auto b = std::make_shared<ConvDecoder<double>>(f, "dec", 1, std::vector<std::int64_t>{4, 6});
        return [b](Tape<double>& t, const Vs& v) { return b->forward(t, v[0]); };
    }, {{2, 2, 2, 6}});
    run_block("DenseBottleneck", [&](auto& f) -> gradcheck::Fn {
        auto b = std::make_shared<DenseBottleneck<double>>(f, "dense", 2, 2, 6, 5);
        return [b](Tape<double>& t, const Vs& v) { return b->forward(t, v[0]).restored; };
    }, {{2, 2, 2, 6}});
    run_block("SpatialBottleneck", [&](auto& f) -> gradcheck::Fn {
        auto b = std::make_shared<SpatialBottleneck<double>>(f, "spatial", 6, 3);
        return [b](Tape<double>& t, const Vs& v) { return b->forward(t, v[0]).restored; };
    }, {{2, 2, 2, 6}});
    run_block("SkipFusion", [&](auto& f) -> gradcheck::Fn {
        auto b = std::make_shared<SkipFusion<double>>(f, "skip", k);
        return [b](Tape<double>& t, const Vs& v) { return b->forward(t, tokens(v[0], 2, 2), tokens(v[1], 2, 2)).tokens; };
    }, {{2, 4, k}, {2, 4, k}});
    return out;
}

/// Moves every parameter to a random point near its initial value. At the
/// initialization itself the 0.02-scale embeddings give LayerNorm nearly
/// constant rows, whose curvature makes h = 1e-3 central differences
/// inaccurate by more than 1e-3 even where the gradient is exact.
inline void randomize(ParameterStore<double>& store, std::uint64_t seed, double spread = 0.3) {
    gen::Source src(seed);
    for (auto& p : store) {
        const bool gain = p.name().ends_with("gamma");
        for (auto& v : p.mutable_value().storage()) v = gain ? 1 + src.uniform(-spread, spread) : v + src.uniform(-spread, spread);
    }
}

inline Case architecture_case(Architecture a) {
    auto model = ModelT<double>::build(tiny_config(a), 23);
    randomize(model.parameters(), 77);
    gen::Source src(500 + static_cast<int>(a));
    gradcheck::Fn fn = [&model](Tape<double>& t, const Vs& v) { return model.forward(t, v[0]); };
    auto rep = gradcheck::check(fn, {src.tensor<double>({2, 8, 8, 1}, 0, 1)}, &model.parameters(),
                                options(100 + static_cast<int>(a)));
    return {to_string(a), rep};
}

inline std::vector<Case> architecture_cases() {
    std::vector<Case> out;
    for (auto a : all_architectures()) out.push_back(architecture_case(a));
    return out;
}

} // namespace gradsuite
