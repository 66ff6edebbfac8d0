#include "uad/models.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <sstream>
#include <utility>

#include "uad/binary_io.hpp"

namespace uad {

namespace {

struct ArchName {
    Architecture arch;
    const char* name;
};
constexpr ArchName kArchNames[] = {
    {Architecture::b_tae, "b_tae"},       {Architecture::dc_tae, "dc_tae"},     {Architecture::sc_tae, "sc_tae"},
    {Architecture::h_tae, "h_tae"},       {Architecture::h_tae_s, "h_tae_s"},   {Architecture::ae_dense, "ae_dense"},
    {Architecture::ae_spatial, "ae_spatial"},
};

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::int64_t parse_int(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const auto v = std::stoll(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' expects an integer, got '" + value + "'");
    }
}

std::string join(const std::vector<std::int64_t>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
    return out;
}

} // namespace

std::string to_string(Architecture a) {
    for (const auto& n : kArchNames)
        if (n.arch == a) return n.name;
    throw ConfigError("unknown architecture tag");
}

std::string to_string(Preset p) { return p == Preset::full ? "full" : "desk"; }

Architecture parse_architecture(const std::string& s) {
    const auto l = lower(s);
    for (const auto& n : kArchNames)
        if (l == n.name) return n.arch;
    throw ConfigError("unknown architecture '" + s +
                      "' (expected b_tae, dc_tae, sc_tae, h_tae, h_tae_s, ae_dense or ae_spatial)");
}

Preset parse_preset(const std::string& s) {
    const auto l = lower(s);
    if (l == "full") return Preset::full;
    if (l == "desk") return Preset::desk;
    throw ConfigError("unknown preset '" + s + "' (expected full or desk)");
}

const std::vector<Architecture>& all_architectures() {
    static const std::vector<Architecture> all = {Architecture::b_tae,   Architecture::dc_tae,   Architecture::sc_tae,
                                                  Architecture::h_tae,   Architecture::h_tae_s,  Architecture::ae_dense,
                                                  Architecture::ae_spatial};
    return all;
}

bool is_hierarchical(Architecture a) { return a == Architecture::h_tae || a == Architecture::h_tae_s; }
bool has_transformer(Architecture a) { return a != Architecture::ae_dense && a != Architecture::ae_spatial; }
bool has_conv_autoencoder(Architecture a) {
    return a == Architecture::dc_tae || a == Architecture::sc_tae || a == Architecture::ae_dense ||
           a == Architecture::ae_spatial;
}

static bool uses_dense(Architecture a) { return a == Architecture::dc_tae || a == Architecture::ae_dense; }

// Spatial size seen by the conv AE: the token grid for DC/SC_TAE, pixels otherwise.
static std::pair<std::int64_t, std::int64_t> conv_input_size(const ModelConfig& c) {
    if (has_transformer(c.architecture) && c.block.patch_size > 0)
        return {c.height / c.block.patch_size, c.width / c.block.patch_size};
    return {c.height, c.width};
}

ModelConfig make_config(Architecture a, Preset p) {
    ModelConfig c;
    c.architecture = a;
    c.preset = p;
    const bool full = p == Preset::full;
    c.height = c.width = full ? 256 : 64;
    c.channels = 1;
    if (is_hierarchical(a)) {
        c.block.patch_size = 4;
        c.block.embed_dim = full ? 384 : 96;
        c.block.num_layers = full ? 8 : 4;
        c.block.num_heads = 4;
    } else {
        c.block.patch_size = full ? 16 : 8;
        c.block.embed_dim = full ? 96 : 24;
        c.block.num_layers = full ? 12 : 6;
        c.block.num_heads = 8;
    }
    c.block.mlp_ratio = 4;
    // The conv AE of DC_TAE runs on the token grid (16x16 full, 8x8 desk) and
    // that of SC_TAE keeps the grid resolution; the baselines run on pixels.
    if (a == Architecture::dc_tae)
        c.block.conv_channels = {full ? 128 : 64};
    else if (a == Architecture::ae_dense || a == Architecture::ae_spatial)
        c.block.conv_channels = full ? std::vector<std::int64_t>{32, 64, 128, 128} : std::vector<std::int64_t>{8, 16, 32, 32};
    c.latent_dim = full ? 512 : 128;
    c.latent_channels = full || !has_transformer(a) ? 16 : 4;
    return c;
}

void validate(const ModelConfig& c) {
    auto fail = [&](const std::string& msg) { throw ConfigError(to_string(c.architecture) + ": " + msg); };
    if (c.height <= 0 || c.width <= 0 || c.channels <= 0) fail("image dimensions must be positive");
    const auto& b = c.block;
    if (has_transformer(c.architecture)) {
        if (b.patch_size <= 0 || c.height % b.patch_size || c.width % b.patch_size)
            fail("patch size " + std::to_string(b.patch_size) + " does not divide " + std::to_string(c.height) + "x" +
                 std::to_string(c.width));
        if (b.embed_dim <= 0 || b.num_heads <= 0 || b.embed_dim % b.num_heads)
            fail("embed dim " + std::to_string(b.embed_dim) + " is not divisible by " + std::to_string(b.num_heads) +
                 " heads");
        if (b.num_layers < 1) fail("at least one transformer layer is required");
        if (b.mlp_ratio < 1) fail("mlp ratio must be at least 1");
        if (is_hierarchical(c.architecture)) {
            const auto rows = c.height / b.patch_size, cols = c.width / b.patch_size;
            if (rows % 2 || cols % 2)
                fail("token grid " + std::to_string(rows) + "x" + std::to_string(cols) + " cannot be merged 2x2");
        }
    }
    if (has_conv_autoencoder(c.architecture)) {
        const std::int64_t factor = std::int64_t{1} << b.conv_channels.size();
        const auto [h, w] = conv_input_size(c);
        if (h % factor || w % factor)
            fail(std::to_string(b.conv_channels.size()) + " stride-2 stages do not divide " + std::to_string(h) + "x" +
                 std::to_string(w));
        for (auto ch : b.conv_channels)
            if (ch <= 0) fail("conv channels must be positive");
        if (uses_dense(c.architecture) && c.latent_dim <= 0) fail("latent dim must be positive");
        if (!uses_dense(c.architecture) && c.latent_channels <= 0) fail("latent channels must be positive");
    }
}

std::string serialize(const ModelConfig& c) {
    std::ostringstream o;
    o << "architecture=" << to_string(c.architecture) << '\n'
      << "preset=" << to_string(c.preset) << '\n'
      << "height=" << c.height << '\n'
      << "width=" << c.width << '\n'
      << "channels=" << c.channels << '\n'
      << "patch_size=" << c.block.patch_size << '\n'
      << "embed_dim=" << c.block.embed_dim << '\n'
      << "num_layers=" << c.block.num_layers << '\n'
      << "num_heads=" << c.block.num_heads << '\n'
      << "mlp_ratio=" << c.block.mlp_ratio << '\n'
      << "conv_channels=" << join(c.block.conv_channels) << '\n'
      << "latent_dim=" << c.latent_dim << '\n'
      << "latent_channels=" << c.latent_channels << '\n';
    return o.str();
}

ModelConfig parse_model_config(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("malformed config line '" + line + "'");
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    auto take = [&](const std::string& k) -> std::optional<std::string> {
        auto it = kv.find(k);
        if (it == kv.end()) return std::nullopt;
        auto v = it->second;
        kv.erase(it);
        return v;
    };
    const auto arch = take("architecture");
    if (!arch) throw ConfigError("model config has no architecture");
    const auto preset = take("preset");
    ModelConfig c = make_config(parse_architecture(*arch), preset ? parse_preset(*preset) : Preset::desk);
    auto set_int = [&](const char* k, std::int64_t& dst) {
        if (auto v = take(k)) dst = parse_int(k, *v);
    };
    set_int("height", c.height);
    set_int("width", c.width);
    set_int("channels", c.channels);
    set_int("patch_size", c.block.patch_size);
    set_int("embed_dim", c.block.embed_dim);
    set_int("num_layers", c.block.num_layers);
    set_int("num_heads", c.block.num_heads);
    set_int("mlp_ratio", c.block.mlp_ratio);
    set_int("latent_dim", c.latent_dim);
    set_int("latent_channels", c.latent_channels);
    if (auto v = take("conv_channels")) {
        c.block.conv_channels.clear();
        std::istringstream parts(*v);
        std::string item;
        while (std::getline(parts, item, ','))
            if (!trim(item).empty()) c.block.conv_channels.push_back(parse_int("conv_channels", trim(item)));
    }
    if (!kv.empty()) throw ConfigError("unknown model config key '" + kv.begin()->first + "'");
    return c;
}

template <class T>
struct ModelT<T>::Impl {
    ModelConfig cfg;
    ParameterStore<T> store;
    std::optional<PatchEmbed<T>> embed;
    std::optional<PatchUnembed<T>> unembed;
    std::vector<TransformerLayer<T>> enc_layers, mid_layers, dec_layers;
    std::optional<ConvEncoder<T>> conv_enc;
    std::optional<ConvDecoder<T>> conv_dec;
    std::optional<DenseBottleneck<T>> dense;
    std::optional<SpatialBottleneck<T>> spatial;
    std::optional<PatchMerging<T>> merge;
    std::optional<PatchExpanding<T>> expand;
    std::optional<SkipFusion<T>> skip;
    // LayerNorm closing each pre-norm transformer stack.
    const Parameter<T>*norm_mid_g = nullptr, *norm_mid_b = nullptr, *norm_g = nullptr, *norm_b = nullptr;

    Impl(const ModelConfig& c, std::uint64_t seed);
    void build_conv_ae(ParamFactory<T>& f, std::int64_t in_channels);
};

template <class T>
ModelT<T>::Impl::Impl(const ModelConfig& c, std::uint64_t seed) : cfg(c) {
    validate(cfg);
    ParamFactory<T> f(store, seed);
    const auto& b = cfg.block;
    const auto a = cfg.architecture;
    auto layers = [&](std::vector<TransformerLayer<T>>& out, const std::string& prefix, std::int64_t n,
                      std::int64_t dim) {
        for (std::int64_t i = 0; i < n; ++i)
            out.emplace_back(f, prefix + ".layer" + std::to_string(i), dim, b.num_heads, b.mlp_ratio);
    };

    if (a == Architecture::ae_dense || a == Architecture::ae_spatial) {
        build_conv_ae(f, cfg.channels);
        return;
    }
    embed.emplace(f, "embed", cfg.height, cfg.width, cfg.channels, b.patch_size, b.embed_dim);
    if (a == Architecture::b_tae) {
        layers(enc_layers, "enc", b.num_layers, b.embed_dim);
    } else if (a == Architecture::dc_tae || a == Architecture::sc_tae) {
        const auto before = b.num_layers / 2;
        layers(enc_layers, "enc", before, b.embed_dim);
        norm_mid_g = &f.ones("norm_mid.gamma", {b.embed_dim});
        norm_mid_b = &f.zeros("norm_mid.beta", {b.embed_dim});
        build_conv_ae(f, b.embed_dim);
        layers(dec_layers, "dec", b.num_layers - before, b.embed_dim);
    } else {
        const auto enc = b.num_layers / 4, mid = b.num_layers / 2;
        layers(enc_layers, "enc", enc, b.embed_dim);
        merge.emplace(f, "merge", b.embed_dim);
        layers(mid_layers, "mid", mid, 2 * b.embed_dim);
        expand.emplace(f, "expand", 2 * b.embed_dim);
        if (a == Architecture::h_tae_s) skip.emplace(f, "skip0", b.embed_dim);
        layers(dec_layers, "dec", b.num_layers - enc - mid, b.embed_dim);
    }
    norm_g = &f.ones("norm.gamma", {b.embed_dim});
    norm_b = &f.zeros("norm.beta", {b.embed_dim});
    unembed.emplace(f, "unembed", b.embed_dim, b.patch_size, cfg.channels);
}

template <class T>
void ModelT<T>::Impl::build_conv_ae(ParamFactory<T>& f, std::int64_t in_channels) {
    const auto& ch = cfg.block.conv_channels;
    conv_enc.emplace(f, "conv_enc", in_channels, ch);
    const auto stages = static_cast<int>(ch.size());
    const auto [in_h, in_w] = conv_input_size(cfg);
    const auto h = in_h >> stages, w = in_w >> stages;
    const auto c = conv_enc->out_channels();
    if (uses_dense(cfg.architecture))
        dense.emplace(f, "bottleneck", h, w, c, cfg.latent_dim);
    else
        spatial.emplace(f, "bottleneck", c, cfg.latent_channels);
    conv_dec.emplace(f, "conv_dec", in_channels, ch);
}

template <class T>
ModelT<T>::ModelT(std::unique_ptr<Impl> impl) : impl_(std::move(impl)) {}
template <class T>
ModelT<T>::ModelT(ModelT&&) noexcept = default;
template <class T>
ModelT<T>& ModelT<T>::operator=(ModelT&&) noexcept = default;
template <class T>
ModelT<T>::~ModelT() = default;

template <class T>
ModelT<T> ModelT<T>::build(const ModelConfig& cfg, std::uint64_t seed) {
    return ModelT(std::make_unique<Impl>(cfg, seed));
}

template <class T>
const ModelConfig& ModelT<T>::config() const {
    return impl_->cfg;
}
template <class T>
ParameterStore<T>& ModelT<T>::parameters() {
    return impl_->store;
}
template <class T>
const ParameterStore<T>& ModelT<T>::parameters() const {
    return impl_->store;
}
template <class T>
std::int64_t ModelT<T>::param_count() const {
    return impl_->store.scalar_count();
}

template <class T>
static const Var<T>& checked(const Var<T>& v, const std::string& layer) {
    if (!v.value().all_finite()) throw NumericError("non-finite activation after layer '" + layer + "'");
    return v;
}

template <class T>
static TokenSequence<T> checked_tokens(TokenSequence<T> t, const std::string& layer) {
    checked(t.tokens, layer);
    return t;
}

template <class T>
Var<T> ModelT<T>::forward(Tape<T>& tape, const Var<T>& batch, ForwardProbe<T>* probe) const {
    const auto& m = *impl_;
    const auto& c = m.cfg;
    if (batch.rank() != 4 || batch.dim(1) != c.height || batch.dim(2) != c.width || batch.dim(3) != c.channels)
        throw ShapeError(to_string(c.architecture) + " expects [B, " + std::to_string(c.height) + ", " +
                         std::to_string(c.width) + ", " + std::to_string(c.channels) + "], got " +
                         to_string(batch.shape()));

    // Returns true when the caller asked to stop at the bottleneck.
    auto bottleneck = [&](const Var<T>& v) {
        if (!probe) return false;
        probe->bottleneck_shape = Shape(v.shape().begin() + 1, v.shape().end());
        probe->bottleneck = v.value();
        return probe->stop_at_bottleneck;
    };
    auto run_layers = [&](TokenSequence<T> t, const std::vector<TransformerLayer<T>>& ls, const char* prefix) {
        for (std::size_t i = 0; i < ls.size(); ++i) {
            t = ls[i].forward(tape, t);
            checked(t.tokens, std::string(prefix) + ".layer" + std::to_string(i));
        }
        return t;
    };
    auto norm = [&](TokenSequence<T> t, const Parameter<T>* g, const Parameter<T>* b) {
        t.tokens = layer_norm(t.tokens, tape.watch(*g), tape.watch(*b));
        return t;
    };
    auto conv_ae = [&](const Var<T>& x, Var<T>& out) {
        auto f = checked(m.conv_enc->forward(tape, x), "conv_enc");
        auto z = m.dense ? m.dense->forward(tape, f) : m.spatial->forward(tape, f);
        checked(z.restored, "bottleneck");
        if (bottleneck(z.latent)) {
            out = z.latent;
            return true;
        }
        out = checked(m.conv_dec->forward(tape, z.restored), "conv_dec");
        return false;
    };

    Var<T> y;
    switch (c.architecture) {
    case Architecture::ae_dense:
    case Architecture::ae_spatial:
        if (conv_ae(batch, y)) return y;
        break;
    case Architecture::b_tae: {
        auto t = run_layers(checked_tokens(m.embed->forward(tape, batch), "embed"), m.enc_layers, "enc");
        if (bottleneck(t.tokens)) return t.tokens;
        y = checked(m.unembed->forward(tape, norm(t, m.norm_g, m.norm_b)), "unembed");
        break;
    }
    case Architecture::dc_tae:
    case Architecture::sc_tae: {
        auto t = run_layers(checked_tokens(m.embed->forward(tape, batch), "embed"), m.enc_layers, "enc");
        const auto k = t.dim();
        auto grid = reshape(norm(t, m.norm_mid_g, m.norm_mid_b).tokens, {batch.dim(0), t.rows, t.cols, k});
        Var<T> restored;
        if (conv_ae(grid, restored)) return restored;
        t.tokens = reshape(restored, {batch.dim(0), t.count(), k});
        t = run_layers(t, m.dec_layers, "dec");
        y = checked(m.unembed->forward(tape, norm(t, m.norm_g, m.norm_b)), "unembed");
        break;
    }
    case Architecture::h_tae:
    case Architecture::h_tae_s: {
        auto enc = run_layers(checked_tokens(m.embed->forward(tape, batch), "embed"), m.enc_layers, "enc");
        auto t = m.merge->forward(tape, enc);
        checked(t.tokens, "merge");
        if (bottleneck(t.tokens)) return t.tokens;
        t = run_layers(t, m.mid_layers, "mid");
        t = m.expand->forward(tape, t);
        checked(t.tokens, "expand");
        if (m.skip) {
            t = m.skip->forward(tape, t, enc);
            checked(t.tokens, "skip0");
        }
        t = run_layers(t, m.dec_layers, "dec");
        y = checked(m.unembed->forward(tape, norm(t, m.norm_g, m.norm_b)), "unembed");
        break;
    }
    }
    return checked(sigmoid(y), "output");
}

template <class T>
TensorT<T> ModelT<T>::reconstruct(const TensorT<T>& batch) const {
    Tape<T> tape(false);
    return forward(tape, tape.leaf(batch)).value();
}

template <class T>
std::vector<TensorT<T>> ModelT<T>::snapshot() const {
    std::vector<TensorT<T>> out;
    out.reserve(impl_->store.size());
    for (const auto& p : impl_->store) out.push_back(p.value());
    return out;
}

template <class T>
void ModelT<T>::restore(const std::vector<TensorT<T>>& values) {
    auto& store = impl_->store;
    if (values.size() != store.size())
        throw ShapeError("snapshot holds " + std::to_string(values.size()) + " tensors for " +
                         std::to_string(store.size()) + " parameters");
    for (std::size_t i = 0; i < values.size(); ++i)
        if (values[i].shape() != store[i].value().shape())
            throw ShapeError("snapshot tensor " + to_string(values[i].shape()) + " does not match parameter '" +
                             store[i].name() + "' " + to_string(store[i].value().shape()));
    for (std::size_t i = 0; i < values.size(); ++i) store[i].mutable_value() = values[i];
}

template class ModelT<float>;
template class ModelT<double>;

namespace {
constexpr char kCheckpointMagic[4] = {'U', 'A', 'D', 'C'};
constexpr std::uint16_t kCheckpointVersion = 1;
} // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
    io::ByteWriter w;
    w.bytes(kCheckpointMagic, 4);
    w.u16(kCheckpointVersion);
    w.str(serialize(model.config()));
    const auto& store = model.parameters();
    w.u32(static_cast<std::uint32_t>(store.size()));
    for (const auto& p : store) {
        w.str(p.name());
        w.u32(static_cast<std::uint32_t>(p.value().size()));
        for (float v : p.value().data()) w.f32(v);
    }
    io::write_file(path, w.buffer());
}

Model load_checkpoint(const std::filesystem::path& path, const std::optional<ModelConfig>& expected) {
    io::ByteReader r(io::read_file(path), "checkpoint '" + path.string() + "'");
    char magic[4] = {};
    try {
        r.bytes(magic, 4);
    } catch (const TruncatedError&) {
        throw MagicError("'" + path.string() + "' is too short to be a checkpoint");
    }
    if (!std::equal(magic, magic + 4, kCheckpointMagic)) throw MagicError("'" + path.string() + "' is not a checkpoint");
    if (const auto v = r.u16(); v != kCheckpointVersion)
        throw VersionError("checkpoint version " + std::to_string(v) + " is not supported (expected " +
                           std::to_string(kCheckpointVersion) + ")");
    const ModelConfig cfg = parse_model_config(r.str());
    if (expected) {
        if (cfg.architecture != expected->architecture)
            throw ConfigError("checkpoint holds " + to_string(cfg.architecture) + ", expected " +
                              to_string(expected->architecture));
        if (cfg.height != expected->height || cfg.width != expected->width || cfg.channels != expected->channels)
            throw ConfigError("checkpoint image size " + std::to_string(cfg.height) + "x" + std::to_string(cfg.width) +
                              "x" + std::to_string(cfg.channels) + " does not match expected " +
                              std::to_string(expected->height) + "x" + std::to_string(expected->width) + "x" +
                              std::to_string(expected->channels));
    }
    Model model = Model::build(cfg, 0);
    auto& store = model.parameters();
    const auto count = r.u32();
    if (count != store.size())
        throw FormatError("checkpoint has " + std::to_string(count) + " parameters, architecture " +
                          to_string(cfg.architecture) + " has " + std::to_string(store.size()));
    for (std::size_t i = 0; i < store.size(); ++i) {
        auto& p = store[i];
        const auto name = r.str();
        if (name != p.name())
            throw FormatError("checkpoint parameter " + std::to_string(i) + " is '" + name + "', expected '" +
                              p.name() + "'");
        const auto n = r.u32();
        if (static_cast<std::int64_t>(n) != p.value().size())
            throw FormatError("checkpoint parameter '" + name + "' has " + std::to_string(n) + " values, expected " +
                              std::to_string(p.value().size()));
        auto& dst = p.mutable_value();
        for (auto& v : dst.data()) v = r.f32();
    }
    if (r.remaining() != 0) throw FormatError("checkpoint has " + std::to_string(r.remaining()) + " trailing bytes");
    return model;
}

} // namespace uad
