#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "support/generators.hpp"
#include "uad/blocks.hpp"

using namespace uad;

namespace {

Tensor eye(std::int64_t rows, std::int64_t cols) {
    Tensor t({rows, cols});
    for (std::int64_t i = 0; i < std::min(rows, cols); ++i) t.at(i, i) = 1.f;
    return t;
}

void set(ParameterStore<float>& store, const std::string& name, Tensor value) {
    auto& p = store.at(name);
    REQUIRE(p.value().shape() == value.shape());
    p.mutable_value() = std::move(value);
}

void zero(ParameterStore<float>& store, const std::string& name) {
    auto& p = store.at(name);
    p.mutable_value() = Tensor(p.value().shape());
}

double max_diff(const Tensor& a, const Tensor& b) {
    REQUIRE(a.shape() == b.shape());
    double m = 0;
    for (std::int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
    return m;
}

/// Columns of a random rows x cols matrix made orthonormal by Gram-Schmidt (rows >= cols).
std::vector<std::vector<double>> orthonormal_columns(gen::Source& src, int rows, int cols) {
    std::vector<std::vector<double>> q;
    while (static_cast<int>(q.size()) < cols) {
        std::vector<double> v(rows);
        for (auto& x : v) x = src.normal();
        for (const auto& u : q) {
            const double d = std::inner_product(v.begin(), v.end(), u.begin(), 0.0);
            for (int i = 0; i < rows; ++i) v[i] -= d * u[i];
        }
        const double n = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
        for (auto& x : v) x /= n;
        q.push_back(v);
    }
    return q;
}

TokenSequence<float> seq(Tensor t, std::int64_t rows, std::int64_t cols) { return {constant(std::move(t)), rows, cols}; }

} // namespace

TEST_SUITE("patch embedding") {
    TEST_CASE("token count is H*W/P^2") {
        gen::Source src(1);
        for (int t = 0; t < 20; ++t) {
            const auto p = src.integer(1, 4), r = src.integer(1, 5), q = src.integer(1, 5), c = src.integer(1, 3);
            ParameterStore<float> store;
            ParamFactory<float> f(store, 1);
            PatchEmbed<float> embed(f, "e", r * p, q * p, c, p, 8);
            Tape<float> tape(false);
            auto out = embed.forward(tape, constant(src.tensor({2, r * p, q * p, c})));
            CHECK(out.tokens.shape() == Shape{2, r * q, 8});
            CHECK(out.rows * out.cols == out.count());
            CHECK(out.count() == r * q);
        }
    }
    TEST_CASE("256x256 at patch 16 gives 256 tokens; a 4x4 image at patch 4 gives one") {
        ParameterStore<float> store;
        ParamFactory<float> f(store, 1);
        PatchEmbed<float> big(f, "big", 256, 256, 1, 16, 96);
        Tape<float> tape(false);
        CHECK(big.forward(tape, constant(Tensor({1, 256, 256, 1}))).count() == 256);
        PatchEmbed<float> small(f, "small", 4, 4, 2, 4, 5);
        CHECK(small.weight().value().shape() == Shape{32, 5});
        CHECK(small.forward(tape, constant(Tensor({1, 4, 4, 2}))).count() == 1);
    }
    TEST_CASE("non-divisible patch size is rejected") {
        ParameterStore<float> store;
        ParamFactory<float> f(store, 1);
        CHECK_THROWS_AS(PatchEmbed<float>(f, "e", 10, 8, 1, 4, 8), ConfigError);
        CHECK_THROWS_AS(patchify(constant(Tensor({1, 6, 6, 1})), 4), ShapeError);
    }
    TEST_CASE("identity projections make unembed(embed(x)) = x exactly") {
        gen::Source src(2);
        ParameterStore<float> store;
        ParamFactory<float> f(store, 1);
        PatchEmbed<float> embed(f, "e", 6, 4, 2, 2, 8);
        PatchUnembed<float> unembed(f, "u", 8, 2, 2);
        set(store, "e.proj.weight", eye(8, 8));
        zero(store, "e.pos");
        set(store, "u.weight", eye(8, 8));
        auto x = src.tensor({3, 6, 4, 2});
        Tape<float> tape(false);
        auto tokens = embed.forward(tape, constant(x));
        auto y = unembed.forward(tape, tokens);
        CHECK(y.shape() == Shape{3, 6, 4, 2});
        CHECK(y.value() == x);
    }
    TEST_CASE("unembed output shape is (rows*P, cols*P, C)") {
        gen::Source src(3);
        ParameterStore<float> store;
        ParamFactory<float> f(store, 1);
        PatchUnembed<float> unembed(f, "u", 6, 3, 2);
        Tape<float> tape(false);
        CHECK(unembed.forward(tape, seq(src.tensor({1, 8, 6}), 2, 4)).shape() == Shape{1, 6, 12, 2});
    }
    TEST_CASE("unembed(embed(.)) without biases is additive") {
        gen::Source src(4);
        ParameterStore<float> store;
        ParamFactory<float> f(store, 5);
        PatchEmbed<float> embed(f, "e", 8, 8, 1, 4, 12);
        PatchUnembed<float> unembed(f, "u", 12, 4, 1);
        zero(store, "e.pos");
        auto run = [&](const Tensor& x) {
            Tape<float> tape(false);
            return unembed.forward(tape, embed.forward(tape, constant(x))).value();
        };
        for (int t = 0; t < 10; ++t) {
            auto a = src.tensor({2, 8, 8, 1}), b = src.tensor({2, 8, 8, 1});
            Tensor ab(a.shape());
            for (std::int64_t i = 0; i < a.size(); ++i) ab[i] = a[i] + b[i];
            auto fa = run(a), fb = run(b), fab = run(ab);
            for (std::int64_t i = 0; i < fa.size(); ++i) fb[i] += fa[i];
            CHECK(max_diff(fab, fb) < 1e-5);
        }
    }
}

TEST_SUITE("attention") {
    TEST_CASE("a single token attends to itself with weight 1") {
        gen::Source src(5);
        ParameterStore<float> store;
        ParamFactory<float> f(store, 9);
        MultiHeadAttention<float> attn(f, "a", 4, 2);
        auto x = src.tensor({1, 1, 4});
        Tensor weights;
        Tape<float> tape(false);
        auto y = attn.forward(tape, seq(x, 1, 1), &weights).tokens.value();
        CHECK(weights.shape() == Shape{1, 2, 1, 1});
        for (float w : weights.data()) CHECK(w == doctest::Approx(1.0));
        // Output = ((x Wv + bv) Wo + bo) when all attention goes to the only token.
        const auto& wv = store.at("a.v.weight").value();
        const auto& wo = store.at("a.o.weight").value();
        for (int j = 0; j < 4; ++j) {
            double expect = 0;
            for (int m = 0; m < 4; ++m) {
                double v = 0;
                for (int i = 0; i < 4; ++i) v += x[i] * wv.at(i, m);
                expect += v * wo.at(m, j);
            }
            CHECK(y[j] == doctest::Approx(expect).epsilon(1e-5));
        }
    }
    TEST_CASE("attention rows sum to one") {
        gen::Source src(6);
        ParameterStore<float> store;
        ParamFactory<float> f(store, 3);
        MultiHeadAttention<float> attn(f, "a", 8, 4);
        Tensor weights;
        Tape<float> tape(false);
        attn.forward(tape, seq(src.tensor({2, 6, 8}, -3, 3), 2, 3), &weights);
        CHECK(weights.shape() == Shape{2, 4, 6, 6});
        for (std::int64_t r = 0; r < weights.size() / 6; ++r) {
            double s = 0;
            for (int i = 0; i < 6; ++i) s += weights[r * 6 + i];
            CHECK(std::abs(s - 1) < 1e-6);
        }
    }
    TEST_CASE("three tokens, one head, two dimensions, against a hand evaluation") {
        ParameterStore<float> store;
        ParamFactory<float> f(store, 1);
        MultiHeadAttention<float> attn(f, "a", 2, 1);
        const Tensor wq({2, 2}, {1, 0.5f, -0.5f, 1}), wk({2, 2}, {0.3f, -1, 1, 0.2f}), wv({2, 2}, {2, 0, 1, -1}),
            wo({2, 2}, {0.5f, 1, -1, 0.25f});
        set(store, "a.q.weight", wq);
        set(store, "a.k.weight", wk);
        set(store, "a.v.weight", wv);
        set(store, "a.o.weight", wo);
        const Tensor x({1, 3, 2}, {1, 2, -1, 0.5f, 0, -2});
        Tape<float> tape(false);
        auto y = attn.forward(tape, seq(x, 1, 3)).tokens.value();

        auto project = [&](const Tensor& w, int t, int j) { return x[t * 2] * w.at(0, j) + x[t * 2 + 1] * w.at(1, j); };
        for (int t = 0; t < 3; ++t) {
            double s[3], z = 0;
            for (int u = 0; u < 3; ++u) {
                s[u] = (project(wq, t, 0) * project(wk, u, 0) + project(wq, t, 1) * project(wk, u, 1)) / std::sqrt(2.0);
            }
            const double mx = std::max({s[0], s[1], s[2]});
            for (double& v : s) z += (v = std::exp(v - mx));
            double ctx[2] = {0, 0};
            for (int u = 0; u < 3; ++u)
                for (int j = 0; j < 2; ++j) ctx[j] += s[u] / z * project(wv, u, j);
            for (int j = 0; j < 2; ++j) {
                const double expect = ctx[0] * wo.at(0, j) + ctx[1] * wo.at(1, j);
                CHECK(std::abs(y[t * 2 + j] - expect) < 1e-5);
            }
        }
    }
    TEST_CASE("without positional information attention is permutation-equivariant") {
        gen::Source src(7);
        for (int trial = 0; trial < 20; ++trial) {
            const auto n = src.integer(2, 8);
            ParameterStore<float> store;
            ParamFactory<float> f(store, static_cast<std::uint64_t>(trial));
            MultiHeadAttention<float> attn(f, "a", 6, 2);
            auto x = src.tensor({1, n, 6});
            std::vector<std::int64_t> perm(static_cast<std::size_t>(n));
            std::iota(perm.begin(), perm.end(), 0);
            for (auto i = n - 1; i > 0; --i) std::swap(perm[i], perm[src.integer(0, i)]);
            Tensor xp(x.shape());
            for (std::int64_t t = 0; t < n; ++t)
                for (int k = 0; k < 6; ++k) xp[t * 6 + k] = x[perm[t] * 6 + k];
            Tape<float> tape(false);
            auto y = attn.forward(tape, seq(x, 1, n)).tokens.value();
            auto yp = attn.forward(tape, seq(xp, 1, n)).tokens.value();
            for (std::int64_t t = 0; t < n; ++t)
                for (int k = 0; k < 6; ++k) CHECK(std::abs(yp[t * 6 + k] - y[perm[t] * 6 + k]) < 1e-6);
        }
    }
    TEST_CASE("embed dim not divisible by heads") {
        ParameterStore<float> store;
        ParamFactory<float> f(store, 1);
        CHECK_THROWS_AS(MultiHeadAttention<float>(f, "a", 6, 4), ConfigError);
    }
}

TEST_SUITE("transformer layer") {
    TEST_CASE("zero output projections make the layer the identity") {
        gen::Source src(8);
        ParameterStore<float> store;
        ParamFactory<float> f(store, 2);
        TransformerLayer<float> layer(f, "l", 8, 2, 4);
        for (const char* name : {"l.attn.o.weight", "l.attn.o.bias", "l.mlp.fc2.weight", "l.mlp.fc2.bias"}) zero(store, name);
        auto x = src.tensor({2, 5, 8});
        Tape<float> tape(false);
        CHECK(layer.forward(tape, seq(x, 1, 5)).tokens.value() == x);
    }
    TEST_CASE("shape is preserved for any N and K") {
        gen::Source src(9);
        for (int t = 0; t < 10; ++t) {
            const auto heads = src.integer(1, 3), k = heads * src.integer(1, 4), n = src.integer(1, 9);
            ParameterStore<float> store;
            ParamFactory<float> f(store, 2);
            TransformerLayer<float> layer(f, "l", k, heads, 2);
            Tape<float> tape(false);
            CHECK(layer.forward(tape, seq(src.tensor({1, n, k}), 1, n)).tokens.shape() == Shape{1, n, k});
        }
    }
    TEST_CASE("gradient reaches every parameter") {
        gen::Source src(10);
        ParameterStore<float> store;
        ParamFactory<float> f(store, 4);
        TransformerLayer<float> layer(f, "l", 8, 2, 4);
        Tape<float> tape;
        auto y = layer.forward(tape, seq(src.tensor({2, 4, 8}), 2, 2)).tokens;
        auto grads = tape.backward(sum(mul(y, constant(src.tensor(y.shape())))));
        CHECK(store.size() == 16);
        for (const auto& p : store) {
            const auto g = grads.of(p);
            INFO(p.name());
            CHECK(std::any_of(g.data().begin(), g.data().end(), [](float v) { return v != 0.f; }));
        }
    }
}

TEST_SUITE("merging and expanding") {
    TEST_CASE("(4096, 384) merges to (1024, 768) and expands back") {
        ParameterStore<float> store;
        ParamFactory<float> f(store, 1);
        PatchMerging<float> merge(f, "m", 384);
        PatchExpanding<float> expand(f, "x", 768);
        Tape<float> tape(false);
        auto m = merge.forward(tape, seq(Tensor({1, 4096, 384}), 64, 64));
        CHECK(m.tokens.shape() == Shape{1, 1024, 768});
        CHECK((m.rows == 32 && m.cols == 32));
        auto e = expand.forward(tape, m);
        CHECK(e.tokens.shape() == Shape{1, 4096, 384});
        CHECK((e.rows == 64 && e.cols == 64));
    }
    TEST_CASE("a 2x2 grid merges to a single token") {
        ParameterStore<float> store;
        ParamFactory<float> f(store, 1);
        PatchMerging<float> merge(f, "m", 4);
        Tape<float> tape(false);
        auto m = merge.forward(tape, seq(Tensor({3, 4, 4}), 2, 2));
        CHECK(m.tokens.shape() == Shape{3, 1, 8});
        CHECK(m.count() == 1);
    }
    TEST_CASE("token-count laws on random even grids") {
        gen::Source src(11);
        for (int t = 0; t < 20; ++t) {
            const auto r = 2 * src.integer(1, 4), c = 2 * src.integer(1, 4), k = 2 * src.integer(1, 4);
            ParameterStore<float> store;
            ParamFactory<float> f(store, 1);
            PatchMerging<float> merge(f, "m", k);
            PatchExpanding<float> expand(f, "x", 2 * k);
            Tape<float> tape(false);
            auto m = merge.forward(tape, seq(src.tensor({1, r * c, k}), r, c));
            CHECK(m.count() * 4 == r * c);
            auto e = expand.forward(tape, m);
            CHECK(e.count() == 4 * m.count());
            CHECK(e.tokens.shape() == Shape{1, r * c, k});
        }
    }
    TEST_CASE("odd grids and odd widths are rejected") {
        ParameterStore<float> store;
        ParamFactory<float> f(store, 1);
        PatchMerging<float> merge(f, "m", 4);
        Tape<float> tape(false);
        CHECK_THROWS_AS(merge.forward(tape, seq(Tensor({1, 6, 4}), 3, 2)), ShapeError);
        CHECK_THROWS_AS(PatchExpanding<float>(f, "x", 5), ConfigError);
    }
    TEST_CASE("pseudo-inverse weights make expand(merge(t)) = t on the merge row space") {
        gen::Source src(12);
        const int k = 4, rows = 4, cols = 6;
        const auto q = orthonormal_columns(src, 4 * k, 2 * k);
        Tensor wm({4 * k, 2 * k}), we({2 * k, 4 * k});
        for (int j = 0; j < 2 * k; ++j)
            for (int i = 0; i < 4 * k; ++i) wm.at(i, j) = we.at(j, i) = static_cast<float>(q[j][i]);
        // Tokens whose 2x2 neighbourhoods, concatenated, lie in the span of wm's columns.
        Tensor x({1, rows * cols, k});
        for (int gr = 0; gr < rows / 2; ++gr)
            for (int gc = 0; gc < cols / 2; ++gc) {
                std::vector<double> v(4 * k, 0.0);
                for (int j = 0; j < 2 * k; ++j) {
                    const double coef = src.uniform(-1, 1);
                    for (int i = 0; i < 4 * k; ++i) v[i] += coef * q[j][i];
                }
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx)
                        for (int c = 0; c < k; ++c)
                            x[((2 * gr + dy) * cols + 2 * gc + dx) * k + c] = static_cast<float>(v[(dy * 2 + dx) * k + c]);
            }
        ParameterStore<float> store;
        ParamFactory<float> f(store, 1);
        PatchMerging<float> merge(f, "m", k);
        PatchExpanding<float> expand(f, "x", 2 * k);
        set(store, "m.weight", wm);
        set(store, "x.weight", we);
        Tape<float> tape(false);
        auto back = expand.forward(tape, merge.forward(tape, seq(x, rows, cols)));
        CHECK(max_diff(back.tokens.value(), x) < 1e-4);
    }
}

TEST_SUITE("conv autoencoder pieces") {
    TEST_CASE("four stages take 256x256 to 16x16 and the decoder mirrors back") {
        ParameterStore<float> store;
        ParamFactory<float> f(store, 1);
        const std::vector<std::int64_t> ch{32, 64, 128, 128};
        ConvEncoder<float> enc(f, "e", 1, ch);
        ConvDecoder<float> dec(f, "d", 1, ch);
        Tape<float> tape(false);
        auto h = enc.forward(tape, constant(Tensor({1, 256, 256, 1}, 0.5f)));
        CHECK(h.shape() == Shape{1, 16, 16, 128});
        CHECK(dec.forward(tape, h).shape() == Shape{1, 256, 256, 1});
    }
    TEST_CASE("an empty schedule keeps the shape") {
        gen::Source src(13);
        ParameterStore<float> store;
        ParamFactory<float> f(store, 1);
        ConvEncoder<float> enc(f, "e", 3, {});
        ConvDecoder<float> dec(f, "d", 3, {});
        auto x = src.tensor({2, 5, 7, 3});
        Tape<float> tape(false);
        CHECK(enc.forward(tape, constant(x)).value() == x);
        CHECK(dec.forward(tape, constant(x)).value() == x);
        CHECK(store.size() == 0);
    }
    TEST_CASE("decoder(encoder(x)) has the shape of x on random schedules") {
        gen::Source src(14);
        for (int t = 0; t < 10; ++t) {
            std::vector<std::int64_t> ch;
            for (auto s = src.integer(1, 3); s > 0; --s) ch.push_back(src.integer(1, 6));
            const std::int64_t f2 = std::int64_t{1} << ch.size();
            const auto h = f2 * src.integer(1, 3), w = f2 * src.integer(1, 3), c = src.integer(1, 3);
            ParameterStore<float> store;
            ParamFactory<float> f(store, 1);
            ConvEncoder<float> enc(f, "e", c, ch);
            ConvDecoder<float> dec(f, "d", c, ch);
            Tape<float> tape(false);
            auto x = constant(src.tensor({1, h, w, c}));
            CHECK(dec.forward(tape, enc.forward(tape, x)).shape() == x.shape());
        }
    }
    TEST_CASE("dense bottleneck: latent shape and identity round trip") {
        gen::Source src(15);
        ParameterStore<float> store;
        ParamFactory<float> f(store, 1);
        DenseBottleneck<float> full(f, "full", 2, 2, 128, 512);
        Tape<float> tape(false);
        CHECK(full.forward(tape, constant(Tensor({3, 2, 2, 128}))).latent.shape() == Shape{3, 512});

        DenseBottleneck<float> small(f, "small", 2, 3, 2, 20);
        set(store, "small.enc.weight", eye(12, 20));
        set(store, "small.dec.weight", eye(20, 12));
        auto x = src.tensor({2, 2, 3, 2});
        auto out = small.forward(tape, constant(x));
        CHECK(out.latent.shape() == Shape{2, 20});
        CHECK(max_diff(out.restored.value(), x) < 1e-5);
    }
    TEST_CASE("spatial bottleneck keeps the spatial layout") {
        ParameterStore<float> store;
        ParamFactory<float> f(store, 1);
        SpatialBottleneck<float> b(f, "s", 128, 16);
        Tape<float> tape(false);
        auto out = b.forward(tape, constant(Tensor({1, 16, 16, 128})));
        CHECK(out.latent.shape() == Shape{1, 16, 16, 16});
        CHECK(out.restored.shape() == Shape{1, 16, 16, 128});
    }
    TEST_CASE("skip fusion with a zeroed skip half passes the decoder tokens through") {
        gen::Source src(16);
        ParameterStore<float> store;
        ParamFactory<float> f(store, 1);
        SkipFusion<float> fuse(f, "s", 6);
        auto& w = store.at("s.weight").mutable_value();
        for (std::int64_t i = fuse.skip_row_begin(); i < 12; ++i)
            for (std::int64_t j = 0; j < 6; ++j) w.at(i, j) = 0.f;
        auto dec = src.tensor({2, 4, 6}), skip = src.tensor({2, 4, 6});
        Tape<float> tape(false);
        CHECK(fuse.forward(tape, seq(dec, 2, 2), seq(skip, 2, 2)).tokens.value() == dec);
    }
}
