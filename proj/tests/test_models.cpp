#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "support/generators.hpp"
#include "uad/models.hpp"

using namespace uad;
namespace fs = std::filesystem;

namespace {

Shape bottleneck_of(const ModelConfig& cfg) {
    const auto m = Model::build(cfg, 1);
    ForwardProbe<float> probe;
    probe.stop_at_bottleneck = true;
    Tape<float> tape(false);
    m.forward(tape, constant(Tensor({1, cfg.height, cfg.width, cfg.channels}, 0.5f)), &probe);
    return probe.bottleneck_shape;
}

fs::path temp_file(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "uad_test_models";
    fs::create_directories(dir);
    return dir / name;
}

std::vector<char> read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const fs::path& p, const std::vector<char>& b) {
    std::ofstream out(p, std::ios::binary);
    out.write(b.data(), static_cast<std::streamsize>(b.size()));
}

} // namespace

TEST_SUITE("model configs") {
    TEST_CASE("architecture and preset names parse in both spellings") {
        for (auto a : all_architectures()) {
            CHECK(parse_architecture(to_string(a)) == a);
            std::string upper = to_string(a);
            for (auto& c : upper) c = static_cast<char>(std::toupper(c));
            CHECK(parse_architecture(upper) == a);
        }
        CHECK(parse_preset("desk") == Preset::desk);
        CHECK(parse_preset("FULL") == Preset::full);
        CHECK_THROWS_AS(parse_architecture("vq_vae"), ConfigError);
        CHECK_THROWS_AS(parse_preset("huge"), ConfigError);
    }
    TEST_CASE("every preset config validates and round-trips through its text form") {
        for (auto a : all_architectures())
            for (auto p : {Preset::full, Preset::desk}) {
                const auto c = make_config(a, p);
                CHECK_NOTHROW(validate(c));
                CHECK(parse_model_config(serialize(c)) == c);
            }
    }
    TEST_CASE("divisibility violations are config errors") {
        auto c = make_config(Architecture::b_tae, Preset::desk);
        c.block.patch_size = 7;
        CHECK_THROWS_AS(validate(c), ConfigError);
        c = make_config(Architecture::dc_tae, Preset::desk);
        c.block.num_heads = 5;
        CHECK_THROWS_AS(validate(c), ConfigError);
        c = make_config(Architecture::ae_dense, Preset::desk);
        c.block.conv_channels.push_back(8);
        c.block.conv_channels.push_back(8);
        c.block.conv_channels.push_back(8);
        CHECK_THROWS_AS(validate(c), ConfigError);
        c = make_config(Architecture::h_tae, Preset::desk);
        c.height = c.width = 20;
        CHECK_THROWS_AS(validate(c), ConfigError);
        CHECK_THROWS_AS(parse_model_config("architecture=b_tae\nbogus=1\n"), ConfigError);
    }
}

TEST_SUITE("model shapes") {
    TEST_CASE("full-preset bottlenecks") {
        CHECK(bottleneck_of(make_config(Architecture::b_tae, Preset::full)) == Shape{256, 96});
        CHECK(bottleneck_of(make_config(Architecture::dc_tae, Preset::full)) == Shape{512});
        CHECK(bottleneck_of(make_config(Architecture::sc_tae, Preset::full)) == Shape{16, 16, 16});
        CHECK(bottleneck_of(make_config(Architecture::h_tae, Preset::full)) == Shape{1024, 768});
        CHECK(bottleneck_of(make_config(Architecture::h_tae_s, Preset::full)) == Shape{1024, 768});
        CHECK(bottleneck_of(make_config(Architecture::ae_dense, Preset::full)) == Shape{512});
        CHECK(bottleneck_of(make_config(Architecture::ae_spatial, Preset::full)) == Shape{16, 16, 16});
    }
    TEST_CASE("desk models map 64x64x1 to 64x64x1 in (0, 1), deterministically") {
        gen::Source src(1);
        const auto x = src.tensor({2, 64, 64, 1}, 0, 1);
        for (auto a : all_architectures()) {
            INFO(to_string(a));
            const auto m = Model::build(make_config(a, Preset::desk), 3);
            const auto y = m.reconstruct(x);
            CHECK(y.shape() == x.shape());
            bool in_range = true;
            for (float v : y.data()) in_range = in_range && v > 0.f && v < 1.f;
            CHECK(in_range);
            CHECK(m.reconstruct(x) == y);
        }
    }
    TEST_CASE("full-preset models preserve shape") {
        const Tensor x({1, 256, 256, 1}, 0.25f);
        for (auto a : all_architectures()) {
            INFO(to_string(a));
            CHECK(Model::build(make_config(a, Preset::full), 3).reconstruct(x).shape() == x.shape());
        }
    }
    TEST_CASE("a batch of the wrong size is a shape error") {
        const auto m = Model::build(make_config(Architecture::b_tae, Preset::desk), 1);
        CHECK_THROWS_AS(m.reconstruct(Tensor({1, 32, 32, 1})), ShapeError);
    }
    TEST_CASE("non-finite activations raise a numeric error naming the layer") {
        auto m = Model::build(make_config(Architecture::b_tae, Preset::desk), 1);
        m.parameters().at("enc.layer2.mlp.fc2.bias").mutable_value()[0] = std::nanf("");
        try {
            m.reconstruct(Tensor({1, 64, 64, 1}, 0.5f));
            FAIL("expected NumericError");
        } catch (const NumericError& e) {
            CHECK(std::string(e.what()).find("enc.layer2") != std::string::npos);
        }
    }
}

TEST_SUITE("model parameters") {
    TEST_CASE("AE_DENSE desk count equals the hand-summed layers") {
        const std::vector<std::int64_t> ch{8, 16, 32, 32};
        std::int64_t expect = 0, cin = 1;
        for (auto c : ch) {
            expect += 5 * 5 * cin * c + c; // encoder conv + bias
            expect += 5 * 5 * c * cin + cin; // mirrored transposed conv + bias
            cin = c;
        }
        const std::int64_t flat = 4 * 4 * 32, latent = 128;
        expect += flat * latent + latent + latent * flat + flat;
        CHECK(expect == 215457);
        CHECK(Model::build(make_config(Architecture::ae_dense, Preset::desk), 1).param_count() == expect);
    }
    TEST_CASE("count depends on the config, not the seed, and grows with embed_dim") {
        for (auto a : all_architectures()) {
            INFO(to_string(a));
            auto c = make_config(a, Preset::desk);
            const auto n = Model::build(c, 1).param_count();
            CHECK(Model::build(c, 99).param_count() == n);
            if (has_transformer(a)) {
                c.block.embed_dim *= 2;
                CHECK(Model::build(c, 1).param_count() > n);
            }
        }
    }
    TEST_CASE("one backward from the MAE loss reaches every parameter") {
        gen::Source src(2);
        const auto x = src.tensor({2, 64, 64, 1}, 0, 1);
        for (auto a : all_architectures()) {
            INFO(to_string(a));
            const auto m = Model::build(make_config(a, Preset::desk), 5);
            Tape<float> tape;
            auto in = constant(x);
            auto grads = tape.backward(l1_loss(m.forward(tape, in), in));
            for (const auto& p : m.parameters()) {
                const auto g = grads.of(p);
                const bool any = std::any_of(g.data().begin(), g.data().end(), [](float v) { return v != 0.f; });
                if (!any) INFO("all-zero gradient: ", p.name());
                CHECK(any);
            }
        }
    }
    TEST_CASE("H_TAE_S differs from H_TAE, and matches it with the skip halves zeroed") {
        gen::Source src(3);
        const auto x = src.tensor({1, 64, 64, 1}, 0, 1);
        const auto plain = Model::build(make_config(Architecture::h_tae, Preset::desk), 11);
        auto skip = Model::build(make_config(Architecture::h_tae_s, Preset::desk), 11);
        const auto y0 = plain.reconstruct(x), y1 = skip.reconstruct(x);
        double diff = 0;
        for (std::int64_t i = 0; i < y0.size(); ++i) diff = std::max(diff, std::abs(static_cast<double>(y0[i]) - y1[i]));
        CHECK(diff > 1e-3);

        int zeroed = 0;
        for (auto& p : skip.parameters()) {
            if (!p.name().starts_with("skip") || !p.name().ends_with(".weight")) continue;
            auto& w = p.mutable_value();
            const auto k = w.dim(1);
            for (std::int64_t i = k; i < 2 * k; ++i)
                for (std::int64_t j = 0; j < k; ++j) w.at(i, j) = 0.f;
            ++zeroed;
        }
        CHECK(zeroed > 0);
        const auto y2 = skip.reconstruct(x);
        diff = 0;
        for (std::int64_t i = 0; i < y0.size(); ++i) diff = std::max(diff, std::abs(static_cast<double>(y0[i]) - y2[i]));
        CHECK(diff <= 1e-6);
    }
}

TEST_SUITE("checkpoints") {
    TEST_CASE("save/load reproduces every parameter bitwise") {
        for (auto a : all_architectures()) {
            INFO(to_string(a));
            const auto m = Model::build(make_config(a, Preset::desk), 7);
            const auto path = temp_file(to_string(a) + ".uadc");
            save_checkpoint(m, path);
            const auto back = load_checkpoint(path);
            CHECK(back.config() == m.config());
            const auto s0 = m.snapshot(), s1 = back.snapshot();
            REQUIRE(s0.size() == s1.size());
            for (std::size_t i = 0; i < s0.size(); ++i) CHECK(s0[i] == s1[i]);
        }
    }
    TEST_CASE("a reloaded desk B_TAE gives the same forward output") {
        gen::Source src(4);
        const auto x = src.tensor({2, 64, 64, 1}, 0, 1);
        const auto m = Model::build(make_config(Architecture::b_tae, Preset::desk), 8);
        const auto path = temp_file("b_tae_forward.uadc");
        save_checkpoint(m, path);
        CHECK(load_checkpoint(path).reconstruct(x) == m.reconstruct(x));
    }
    TEST_CASE("mismatched expectations and damaged files") {
        const auto m = Model::build(make_config(Architecture::b_tae, Preset::desk), 8);
        const auto path = temp_file("damaged.uadc");
        save_checkpoint(m, path);
        auto other = make_config(Architecture::b_tae, Preset::full);
        CHECK_THROWS_AS(load_checkpoint(path, other), ConfigError);
        CHECK_THROWS_AS(load_checkpoint(path, make_config(Architecture::dc_tae, Preset::desk)), ConfigError);
        CHECK_NOTHROW(load_checkpoint(path, make_config(Architecture::b_tae, Preset::desk)));

        const auto bytes = read_bytes(path);
        auto truncated = bytes;
        truncated.resize(bytes.size() / 2);
        write_bytes(path, truncated);
        CHECK_THROWS_AS(load_checkpoint(path), TruncatedError);

        auto bad_magic = bytes;
        bad_magic[0] = 'X';
        write_bytes(path, bad_magic);
        CHECK_THROWS_AS(load_checkpoint(path), MagicError);

        auto bad_version = bytes;
        bad_version[4] = 99;
        write_bytes(path, bad_version);
        CHECK_THROWS_AS(load_checkpoint(path), VersionError);

        CHECK_THROWS_AS(load_checkpoint(temp_file("does_not_exist.uadc")), IoError);
    }
}
