#include "uad/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <sstream>

#include "uad/binary_io.hpp"
#include "uad/rng.hpp"

namespace uad {

void validate(const PhantomParams& p) {
    auto fail = [](const std::string& m) { throw ConfigError("phantom parameters: " + m); };
    if (p.height < 16 || p.width < 16) fail("image must be at least 16x16");
    if (!(p.noise_std >= 0 && p.noise_std <= 0.1)) fail("noise_std must lie in [0, 0.1]");
    if (!(p.texture_amplitude >= 0 && p.texture_amplitude <= 0.1)) fail("texture_amplitude must lie in [0, 0.1]");
    if (p.min_blobs < 1 || p.max_blobs < p.min_blobs || p.max_blobs > 8) fail("blob counts must satisfy 1 <= min <= max <= 8");
    if (!(p.blob_offset_min > 0 && p.blob_offset_max >= p.blob_offset_min && p.blob_offset_max <= 1))
        fail("blob offsets must satisfy 0 < min <= max <= 1");
    if (!(p.blob_radius_min > 0 && p.blob_radius_max >= p.blob_radius_min && p.blob_radius_max <= 0.25))
        fail("blob radii must satisfy 0 < min <= max <= 0.25");
}

namespace {

double smoothstep(double edge, double width, double x) {
    const double t = std::clamp((x - (edge - width / 2)) / width, 0.0, 1.0);
    return t * t * (3 - 2 * t);
}

struct Plane {
    std::int64_t h, w;
};

Plane plane_of(const Tensor& t, const char* what) {
    if (t.rank() == 2) return {t.dim(0), t.dim(1)};
    if (t.rank() == 3 && t.dim(2) == 1) return {t.dim(0), t.dim(1)};
    throw ShapeError(std::string(what) + " expects [H, W] or [H, W, 1], got " + to_string(t.shape()));
}

} // namespace

Sample generate_phantom(std::uint64_t seed, bool anomalous, const PhantomParams& params) {
    validate(params);
    const auto H = params.height, W = params.width;
    const Rng root(mix64(seed));
    Rng geo = root.split(1), tex = root.split(2), noise = root.split(3), blobs = root.split(4);

    const double cy = H / 2.0 + geo.uniform(-0.04, 0.04) * H;
    const double cx = W / 2.0 + geo.uniform(-0.04, 0.04) * W;
    const double ax = geo.uniform(0.30, 0.40) * W;
    const double ay = geo.uniform(0.36, 0.44) * H;
    const double theta = geo.uniform(-0.35, 0.35);
    const double ct = std::cos(theta), st = std::sin(theta);
    const double outer = geo.uniform(0.42, 0.50), middle = geo.uniform(0.32, 0.38), inner = geo.uniform(0.36, 0.44);
    const double r_outer = geo.uniform(0.78, 0.86), r_inner = geo.uniform(0.40, 0.52);
    constexpr double kEdge = 0.08;

    struct Wave {
        double amp, fx, fy, phase;
    };
    Wave waves[3];
    for (auto& wv : waves) {
        wv.amp = params.texture_amplitude / 3 * tex.uniform(0.5, 1.0);
        wv.fx = tex.uniform(0.5, 2.0) * (tex.uniform() < 0.5 ? -1 : 1);
        wv.fy = tex.uniform(0.5, 2.0);
        wv.phase = tex.uniform(0, 2 * std::numbers::pi);
    }

    auto radius = [&](double y, double x) {
        const double dy = y - cy, dx = x - cx;
        const double u = ct * dx + st * dy, v = -st * dx + ct * dy;
        return std::sqrt((u / ax) * (u / ax) + (v / ay) * (v / ay));
    };

    Tensor inside({H, W});
    for (std::int64_t y = 0; y < H; ++y)
        for (std::int64_t x = 0; x < W; ++x) inside.at(y, x) = radius(y + 0.5, x + 0.5) <= 1.0 ? 1.f : 0.f;
    Tensor support = binary_closing3x3(inside);

    constexpr double kFloor = 0.05;
    std::vector<double> base(static_cast<std::size_t>(H * W), 0.0);
    for (std::int64_t y = 0; y < H; ++y) {
        for (std::int64_t x = 0; x < W; ++x) {
            const double eps = noise.normal() * params.noise_std;
            if (support.at(y, x) == 0.f) continue;
            const double r = radius(y + 0.5, x + 0.5);
            double level = inner + (middle - inner) * smoothstep(r_inner, kEdge, r);
            level += (outer - level) * smoothstep(r_outer, kEdge, r);
            double t = 0;
            for (const auto& wv : waves)
                t += wv.amp * std::sin(2 * std::numbers::pi * (wv.fx * x / W + wv.fy * y / H) + wv.phase);
            base[static_cast<std::size_t>(y * W + x)] = level + t + eps;
        }
    }

    Tensor label({H, W});
    std::vector<double> offset(base.size(), 0.0);
    if (anomalous) {
        const auto n = blobs.uniform_int(params.min_blobs, params.max_blobs);
        for (std::int64_t i = 0; i < n; ++i) {
            const double rho = blobs.uniform(0.0, 0.6), phi = blobs.uniform(0, 2 * std::numbers::pi);
            const double u0 = rho * ax * std::cos(phi), v0 = rho * ay * std::sin(phi);
            const double by = cy + st * u0 + ct * v0, bx = cx + ct * u0 - st * v0;
            const double ra = blobs.uniform(params.blob_radius_min, params.blob_radius_max) * H;
            const double rb = blobs.uniform(params.blob_radius_min, params.blob_radius_max) * H;
            const double psi = blobs.uniform(0, std::numbers::pi);
            const double cp = std::cos(psi), sp = std::sin(psi);
            const double off = blobs.uniform(params.blob_offset_min, params.blob_offset_max);
            for (std::int64_t y = 0; y < H; ++y) {
                for (std::int64_t x = 0; x < W; ++x) {
                    if (support.at(y, x) == 0.f) continue;
                    const double dy = y + 0.5 - by, dx = x + 0.5 - bx;
                    const double u = cp * dx + sp * dy, v = -sp * dx + cp * dy;
                    if ((u / ra) * (u / ra) + (v / rb) * (v / rb) > 1.0) continue;
                    label.at(y, x) = 1.f;
                    auto& o = offset[static_cast<std::size_t>(y * W + x)];
                    o = std::max(o, off);
                }
            }
        }
    }

    Tensor image({H, W, 1});
    for (std::int64_t i = 0; i < H * W; ++i)
        if (support[i] != 0.f)
            image[i] = static_cast<float>(std::clamp(base[static_cast<std::size_t>(i)] + offset[static_cast<std::size_t>(i)], kFloor, 1.0));
    return {std::move(image), std::move(support), std::move(label)};
}

Tensor binary_closing3x3(const Tensor& mask) {
    const auto [H, W] = plane_of(mask, "binary_closing3x3");
    auto pass = [&](const Tensor& in, bool dilate) {
        Tensor out({H, W});
        for (std::int64_t y = 0; y < H; ++y) {
            for (std::int64_t x = 0; x < W; ++x) {
                bool v = !dilate;
                for (std::int64_t dy = -1; dy <= 1; ++dy) {
                    for (std::int64_t dx = -1; dx <= 1; ++dx) {
                        const auto yy = y + dy, xx = x + dx;
                        if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
                        const bool on = in[yy * W + xx] != 0.f;
                        v = dilate ? (v || on) : (v && on);
                    }
                }
                out.at(y, x) = v ? 1.f : 0.f;
            }
        }
        return out;
    };
    Tensor bin({H, W});
    for (std::int64_t i = 0; i < H * W; ++i) bin[i] = mask[i] != 0.f ? 1.f : 0.f;
    return pass(pass(bin, true), false);
}

Tensor brain_mask(const Tensor& image) {
    const auto [H, W] = plane_of(image, "brain_mask");
    Tensor positive({H, W});
    for (std::int64_t i = 0; i < H * W; ++i) positive[i] = image[i] > 0.f ? 1.f : 0.f;
    return binary_closing3x3(positive);
}

Tensor normalize(const Tensor& image) {
    Tensor out(image.shape());
    if (image.empty()) return out;
    const auto [lo, hi] = std::minmax_element(image.data().begin(), image.data().end());
    const double mn = *lo, range = static_cast<double>(*hi) - mn;
    if (range <= 0) return out;
    for (std::int64_t i = 0; i < image.size(); ++i) out[i] = static_cast<float>((image[i] - mn) / range);
    return out;
}

Tensor resize_bilinear(const Tensor& image, std::int64_t out_h, std::int64_t out_w) {
    if (image.rank() != 2 && image.rank() != 3)
        throw ShapeError("resize_bilinear expects [H, W] or [H, W, C], got " + to_string(image.shape()));
    if (out_h <= 0 || out_w <= 0) throw ValueError("resize_bilinear target size must be positive");
    const auto H = image.dim(0), W = image.dim(1), C = image.rank() == 3 ? image.dim(2) : 1;
    Shape shape = image.rank() == 3 ? Shape{out_h, out_w, C} : Shape{out_h, out_w};
    Tensor out(shape);
    auto coord = [](std::int64_t i, std::int64_t n_out, std::int64_t n_in) {
        return n_out == 1 ? 0.0 : static_cast<double>(i) * static_cast<double>(n_in - 1) / static_cast<double>(n_out - 1);
    };
    for (std::int64_t y = 0; y < out_h; ++y) {
        const double sy = coord(y, out_h, H);
        const auto y0 = std::min(static_cast<std::int64_t>(sy), H - 1), y1 = std::min(y0 + 1, H - 1);
        const double fy = sy - static_cast<double>(y0);
        for (std::int64_t x = 0; x < out_w; ++x) {
            const double sx = coord(x, out_w, W);
            const auto x0 = std::min(static_cast<std::int64_t>(sx), W - 1), x1 = std::min(x0 + 1, W - 1);
            const double fx = sx - static_cast<double>(x0);
            for (std::int64_t c = 0; c < C; ++c) {
                auto px = [&](std::int64_t yy, std::int64_t xx) { return static_cast<double>(image[(yy * W + xx) * C + c]); };
                const double top = px(y0, x0) + fx * (px(y0, x1) - px(y0, x0));
                const double bot = px(y1, x0) + fx * (px(y1, x1) - px(y1, x0));
                out[(y * out_w + x) * C + c] = static_cast<float>(top + fy * (bot - top));
            }
        }
    }
    return out;
}

namespace {
constexpr char kSampleMagic[4] = {'U', 'A', 'D', 'S'};
constexpr std::uint16_t kSampleVersion = 1;
} // namespace

void save_array(const Tensor& t, Dtype dtype, const std::filesystem::path& path) {
    if (t.rank() < 1 || t.rank() > 3) throw RankError("sample arrays have rank 1 to 3, got " + to_string(t.shape()));
    io::ByteWriter w;
    w.bytes(kSampleMagic, 4);
    w.u16(kSampleVersion);
    w.u8(static_cast<std::uint8_t>(dtype));
    w.u8(static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    if (dtype == Dtype::f32) {
        for (float v : t.data()) w.f32(v);
    } else {
        for (float v : t.data()) {
            if (!(v >= 0 && v <= 255) || v != std::floor(v))
                throw ValueError("value " + std::to_string(v) + " cannot be stored as u8 in '" + path.string() + "'");
            w.u8(static_cast<std::uint8_t>(v));
        }
    }
    io::write_file(path, w.buffer());
}

Tensor load_array(const std::filesystem::path& path, Dtype* dtype_out) {
    const std::string what = "'" + path.string() + "'";
    io::ByteReader r(io::read_file(path), what);
    char magic[4];
    r.bytes(magic, 4);
    if (!std::equal(magic, magic + 4, kSampleMagic)) throw MagicError(what + " does not start with UADS");
    if (const auto v = r.u16(); v != kSampleVersion)
        throw VersionError(what + " has format version " + std::to_string(v) + ", expected " +
                           std::to_string(kSampleVersion));
    const auto dt = r.u8();
    if (dt > 1) throw DtypeError(what + " has unknown dtype code " + std::to_string(dt));
    const auto rank = r.u8();
    if (rank < 1 || rank > 3) throw RankError(what + " has rank " + std::to_string(rank) + ", expected 1 to 3");
    Shape shape;
    for (int i = 0; i < rank; ++i) {
        const auto d = r.u32();
        if (d == 0) throw FormatError(what + " has a zero dimension");
        shape.push_back(d);
    }
    Tensor t(shape);
    const auto dtype = static_cast<Dtype>(dt);
    for (auto& v : t.data()) v = dtype == Dtype::f32 ? r.f32() : static_cast<float>(r.u8());
    if (r.remaining() != 0) throw FormatError(what + " has " + std::to_string(r.remaining()) + " trailing bytes");
    if (dtype_out) *dtype_out = dtype;
    return t;
}

void save_sample(const Sample& s, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    save_array(s.image, Dtype::f32, dir / "image.uads");
    save_array(s.brain_mask, Dtype::u8, dir / "mask.uads");
    save_array(s.label, Dtype::u8, dir / "label.uads");
}

Sample load_sample(const std::filesystem::path& dir) {
    Dtype dt;
    Sample s;
    s.image = load_array(dir / "image.uads", &dt);
    if (dt != Dtype::f32 || s.image.rank() != 3 || s.image.dim(2) != 1)
        throw FormatError("'" + (dir / "image.uads").string() + "' must be f32 [H, W, 1]");
    s.brain_mask = load_array(dir / "mask.uads", &dt);
    if (dt != Dtype::u8) throw DtypeError("'" + (dir / "mask.uads").string() + "' must be u8");
    s.label = load_array(dir / "label.uads", &dt);
    if (dt != Dtype::u8) throw DtypeError("'" + (dir / "label.uads").string() + "' must be u8");
    const Shape plane{s.image.dim(0), s.image.dim(1)};
    if (s.brain_mask.shape() != plane || s.label.shape() != plane)
        throw FormatError("sample '" + dir.string() + "' has inconsistent array shapes");
    return s;
}

std::vector<SplitSpec> split_specs(const SplitCounts& c) {
    return {{"train", c.train, false, 0},
            {"val", c.val, false, 1'000'000},
            {"test_healthy", c.test_healthy, false, 2'000'000},
            {"test_anomalous", c.test_anomalous, true, 3'000'000}};
}

std::uint64_t sample_seed(std::uint64_t seed, const SplitSpec& split, std::int64_t index) {
    return seed * 4'000'000 + split.seed_offset + static_cast<std::uint64_t>(index);
}

std::uint32_t crc32_file(const std::filesystem::path& path) {
    const auto bytes = io::read_file(path);
    uLong crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, bytes.data(), static_cast<uInt>(bytes.size()));
    return static_cast<std::uint32_t>(crc);
}

namespace {

std::string index_name(std::int64_t i) {
    std::ostringstream o;
    o << std::setw(6) << std::setfill('0') << i;
    return o.str();
}

std::string hex32(std::uint32_t v) {
    std::ostringstream o;
    o << std::hex << std::setw(8) << std::setfill('0') << v;
    return o.str();
}

const char* kSampleFiles[] = {"image.uads", "mask.uads", "label.uads"};

} // namespace

void build_splits(const std::filesystem::path& root, const SplitCounts& counts, std::uint64_t seed,
                  const PhantomParams& params) {
    validate(params);
    const auto specs = split_specs(counts);
    for (const auto& s : specs)
        if (s.count < 0 || s.count > 1'000'000)
            throw ConfigError("split '" + s.name + "' count must lie in [0, 1000000], got " + std::to_string(s.count));
    for (const auto& s : specs) {
        const auto dir = root / s.name;
        std::filesystem::create_directories(dir);
        std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
        for (std::int64_t i = 0; i < s.count; ++i) {
            try {
                save_sample(generate_phantom(sample_seed(seed, s, i), s.anomalous, params), dir / index_name(i));
            } catch (...) {
#pragma omp critical(uad_build_splits)
                if (!failure) failure = std::current_exception();
            }
        }
        if (failure) std::rethrow_exception(failure);

        std::ostringstream m;
        m << std::setprecision(17);
        m << "split=" << s.name << '\n'
          << "count=" << s.count << '\n'
          << "height=" << params.height << '\n'
          << "width=" << params.width << '\n'
          << "channels=1\n"
          << "anomalous=" << (s.anomalous ? 1 : 0) << '\n'
          << "seed=" << seed << '\n'
          << "seed_offset=" << s.seed_offset << '\n'
          << "noise_std=" << params.noise_std << '\n'
          << "texture_amplitude=" << params.texture_amplitude << '\n'
          << "min_blobs=" << params.min_blobs << '\n'
          << "max_blobs=" << params.max_blobs << '\n'
          << "blob_offset_min=" << params.blob_offset_min << '\n'
          << "blob_offset_max=" << params.blob_offset_max << '\n'
          << "blob_radius_min=" << params.blob_radius_min << '\n'
          << "blob_radius_max=" << params.blob_radius_max << '\n';
        for (std::int64_t i = 0; i < s.count; ++i)
            for (const char* f : kSampleFiles) {
                const auto rel = index_name(i) + "/" + f;
                m << "file " << rel << ' ' << hex32(crc32_file(dir / rel)) << '\n';
            }
        io::write_text(dir / "manifest.txt", m.str());
    }
}

namespace {

struct Manifest {
    std::map<std::string, std::string> values;
    std::vector<std::pair<std::string, std::string>> files;
};

Manifest read_manifest(const std::filesystem::path& split_dir) {
    const auto path = split_dir / "manifest.txt";
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest '" + path.string() + "'");
    Manifest m;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line.rfind("file ", 0) == 0) {
            std::istringstream parts(line.substr(5));
            std::string rel, crc;
            if (!(parts >> rel >> crc)) throw FormatError("malformed manifest line '" + line + "'");
            m.files.emplace_back(rel, crc);
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw FormatError("malformed manifest line '" + line + "'");
        m.values[line.substr(0, eq)] = line.substr(eq + 1);
    }
    if (!m.values.count("count")) throw FormatError("manifest '" + path.string() + "' has no count");
    return m;
}

} // namespace

void verify_manifest(const std::filesystem::path& split_dir) {
    const auto m = read_manifest(split_dir);
    const auto count = std::stoll(m.values.at("count"));
    if (static_cast<std::int64_t>(m.files.size()) != 3 * count)
        throw FormatError("manifest in '" + split_dir.string() + "' lists " + std::to_string(m.files.size()) +
                          " files for " + std::to_string(count) + " samples");
    for (const auto& [rel, crc] : m.files) {
        const auto path = split_dir / rel;
        if (!std::filesystem::exists(path)) throw IoError("manifest entry '" + path.string() + "' is missing");
        const auto actual = hex32(crc32_file(path));
        if (actual != crc)
            throw ChecksumError("checksum of '" + path.string() + "' is " + actual + ", manifest says " + crc);
    }
}

std::vector<Sample> load_split(const std::filesystem::path& split_dir) {
    verify_manifest(split_dir);
    const auto m = read_manifest(split_dir);
    const auto count = std::stoll(m.values.at("count"));
    std::vector<Sample> out(static_cast<std::size_t>(count));
    std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
    for (std::int64_t i = 0; i < count; ++i) {
        try {
            out[static_cast<std::size_t>(i)] = load_sample(split_dir / index_name(i));
        } catch (...) {
#pragma omp critical(uad_load_split)
            if (!failure) failure = std::current_exception();
        }
    }
    if (failure) std::rethrow_exception(failure);
    return out;
}

} // namespace uad
