#include <doctest.h>

#include "support/gradient_suite.hpp"

using namespace uad;

TEST_SUITE("finite differences per block") {
    TEST_CASE("every block matches central differences") {
        for (const auto& c : gradsuite::block_cases()) {
            INFO(c.name, " worst ", c.report.worst);
            CHECK(c.report.checked > 0);
            CHECK(c.report.max_error < 1e-3);
        }
    }
}

TEST_SUITE("finite differences per architecture") {
    TEST_CASE("every desk architecture on 8x8 inputs matches central differences") {
        for (auto a : all_architectures()) {
            SUBCASE(to_string(a).c_str()) {
                const auto c = gradsuite::architecture_case(a);
                INFO(c.name, " worst ", c.report.worst, " over ", c.report.checked, " entries, ", c.report.kinked, " kinked");
                CHECK(c.report.max_error < 1e-3);
            }
        }
    }
    TEST_CASE("tiny configurations keep the desk topology") {
        for (auto a : all_architectures()) {
            const auto tiny = gradsuite::tiny_config(a), desk = make_config(a, Preset::desk);
            CHECK(tiny.height == 8);
            CHECK(tiny.block.num_layers == desk.block.num_layers);
            CHECK(tiny.block.embed_dim == desk.block.embed_dim);
            CHECK(tiny.block.num_heads == desk.block.num_heads);
        }
    }
}

TEST_SUITE("finite differences at initialization") {
    TEST_CASE("gradients at the initial parameters match h = 1e-4 central differences") {
        for (auto a : all_architectures()) {
            auto model = ModelT<double>::build(gradsuite::tiny_config(a), 29);
            gen::Source src(600 + static_cast<int>(a));
            gradcheck::Fn fn = [&model](Tape<double>& t, const gradsuite::Vs& v) { return model.forward(t, v[0]); };
            auto opt = gradsuite::options(7, 4);
            opt.h = 1e-4;
            const auto rep = gradcheck::check(fn, {src.tensor<double>({1, 8, 8, 1}, 0, 1)}, &model.parameters(), opt);
            INFO(to_string(a), " worst ", rep.worst, ", ", rep.kinked, " kinked");
            CHECK(rep.max_error < 1e-3);
        }
    }
}

TEST_SUITE("kink recorder") {
    TEST_CASE("records leaky_relu input signs in order, only while alive") {
        leaky_relu(constant(Tensor({2}, {1, -1})));
        KinkRecorder outer;
        leaky_relu(constant(Tensor({3}, {1, -1, 0})));
        {
            KinkRecorder inner;
            leaky_relu(constant(Tensor({1}, {2})));
            CHECK(inner.signs() == std::vector<bool>{true});
        }
        leaky_relu(constant(Tensor({1}, {-3})));
        CHECK(outer.signs() == std::vector<bool>{true, false, false, false});
    }
}
