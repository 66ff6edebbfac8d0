#include "uad/blocks.hpp"

#include <cmath>

namespace uad {

template <class T>
Rng ParamFactory<T>::rng_for(const std::string& name) const {
    return Rng(mix64(seed_ ^ hash_name(name)));
}

template <class T>
const Parameter<T>& ParamFactory<T>::truncated_normal(const std::string& name, Shape shape, double std) {
    TensorT<T> t(std::move(shape));
    Rng rng = rng_for(name);
    for (auto& v : t.data()) v = static_cast<T>(rng.truncated_normal(std));
    return store_.add(name, std::move(t));
}

template <class T>
const Parameter<T>& ParamFactory<T>::fan_in_uniform(const std::string& name, Shape shape, std::int64_t fan_in,
                                                     double gain) {
    if (fan_in <= 0) throw ConfigError("fan-in of '" + name + "' must be positive");
    TensorT<T> t(std::move(shape));
    Rng rng = rng_for(name);
    const double bound = gain / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
    return store_.add(name, std::move(t));
}

template <class T>
const Parameter<T>& ParamFactory<T>::zeros(const std::string& name, Shape shape) {
    return store_.add(name, TensorT<T>(std::move(shape)));
}

template <class T>
const Parameter<T>& ParamFactory<T>::ones(const std::string& name, Shape shape) {
    return store_.add(name, TensorT<T>(std::move(shape), T(1)));
}

template <class T>
const Parameter<T>& ParamFactory<T>::from(const std::string& name, TensorT<T> value) {
    return store_.add(name, std::move(value));
}

template <class T>
Var<T> patchify(const Var<T>& image, std::int64_t patch) {
    if (image.rank() != 4) throw ShapeError("patchify expects [B, H, W, C], got " + to_string(image.shape()));
    const auto b = image.dim(0), h = image.dim(1), w = image.dim(2), c = image.dim(3);
    if (patch <= 0 || h % patch || w % patch)
        throw ShapeError("image " + to_string(image.shape()) + " is not divisible into " + std::to_string(patch) +
                         "x" + std::to_string(patch) + " patches");
    const auto r = h / patch, q = w / patch;
    auto x = reshape(image, {b, r, patch, q, patch, c});
    x = permute(x, {0, 1, 3, 2, 4, 5});
    return reshape(x, {b, r * q, patch * patch * c});
}

template <class T>
Var<T> unpatchify(const Var<T>& patches, std::int64_t rows, std::int64_t cols, std::int64_t patch,
                  std::int64_t channels) {
    if (patches.rank() != 3 || patches.dim(1) != rows * cols || patches.dim(2) != patch * patch * channels)
        throw ShapeError("unpatchify: " + to_string(patches.shape()) + " does not hold a " + std::to_string(rows) +
                         "x" + std::to_string(cols) + " grid of " + std::to_string(patch) + "x" +
                         std::to_string(patch) + "x" + std::to_string(channels) + " patches");
    const auto b = patches.dim(0);
    auto x = reshape(patches, {b, rows, cols, patch, patch, channels});
    x = permute(x, {0, 1, 3, 2, 4, 5});
    return reshape(x, {b, rows * patch, cols * patch, channels});
}

template <class T>
static Var<T> affine(Tape<T>& tape, const Var<T>& x, const Parameter<T>& w, const Parameter<T>* b) {
    auto y = linear(x, tape.watch(w));
    return b ? add_broadcast(y, tape.watch(*b)) : y;
}

template <class T>
PatchEmbed<T>::PatchEmbed(ParamFactory<T>& f, const std::string& prefix, std::int64_t height, std::int64_t width,
                          std::int64_t channels, std::int64_t patch, std::int64_t embed_dim)
    : height_(height), width_(width), channels_(channels), patch_(patch), embed_dim_(embed_dim) {
    if (patch <= 0 || height % patch || width % patch)
        throw ConfigError("image " + std::to_string(height) + "x" + std::to_string(width) +
                          " is not divisible by patch size " + std::to_string(patch));
    const auto n = (height / patch) * (width / patch);
    weight_ = &f.truncated_normal(prefix + ".proj.weight", {patch * patch * channels, embed_dim});
    bias_ = &f.zeros(prefix + ".proj.bias", {embed_dim});
    pos_ = &f.truncated_normal(prefix + ".pos", {n, embed_dim});
}

template <class T>
TokenSequence<T> PatchEmbed<T>::forward(Tape<T>& tape, const Var<T>& image) const {
    if (image.rank() != 4 || image.dim(1) != height_ || image.dim(2) != width_ || image.dim(3) != channels_)
        throw ShapeError("patch embedding expects [B, " + std::to_string(height_) + ", " + std::to_string(width_) +
                         ", " + std::to_string(channels_) + "], got " + to_string(image.shape()));
    auto tokens = affine(tape, patchify(image, patch_), *weight_, bias_);
    tokens = add_broadcast(tokens, tape.watch(*pos_));
    return {tokens, height_ / patch_, width_ / patch_};
}

template <class T>
PatchUnembed<T>::PatchUnembed(ParamFactory<T>& f, const std::string& prefix, std::int64_t embed_dim,
                              std::int64_t patch, std::int64_t channels)
    : embed_dim_(embed_dim), patch_(patch), channels_(channels) {
    weight_ = &f.truncated_normal(prefix + ".weight", {embed_dim, patch * patch * channels});
    bias_ = &f.zeros(prefix + ".bias", {patch * patch * channels});
}

template <class T>
Var<T> PatchUnembed<T>::forward(Tape<T>& tape, const TokenSequence<T>& t) const {
    if (t.dim() != embed_dim_)
        throw ShapeError("patch unembedding expects width " + std::to_string(embed_dim_) + ", got " +
                         to_string(t.tokens.shape()));
    auto p = affine(tape, t.tokens, *weight_, bias_);
    return unpatchify(p, t.rows, t.cols, patch_, channels_);
}

template <class T>
MultiHeadAttention<T>::MultiHeadAttention(ParamFactory<T>& f, const std::string& prefix, std::int64_t embed_dim,
                                          std::int64_t heads)
    : embed_dim_(embed_dim), heads_(heads) {
    if (heads <= 0 || embed_dim % heads)
        throw ConfigError("embedding width " + std::to_string(embed_dim) + " is not divisible by " +
                          std::to_string(heads) + " heads");
    q_w_ = &f.truncated_normal(prefix + ".q.weight", {embed_dim, embed_dim});
    q_b_ = &f.zeros(prefix + ".q.bias", {embed_dim});
    k_w_ = &f.truncated_normal(prefix + ".k.weight", {embed_dim, embed_dim});
    k_b_ = &f.zeros(prefix + ".k.bias", {embed_dim});
    v_w_ = &f.truncated_normal(prefix + ".v.weight", {embed_dim, embed_dim});
    v_b_ = &f.zeros(prefix + ".v.bias", {embed_dim});
    o_w_ = &f.truncated_normal(prefix + ".o.weight", {embed_dim, embed_dim});
    o_b_ = &f.zeros(prefix + ".o.bias", {embed_dim});
}

template <class T>
TokenSequence<T> MultiHeadAttention<T>::forward(Tape<T>& tape, const TokenSequence<T>& t, TensorT<T>* weights) const {
    const auto& x = t.tokens;
    if (x.rank() != 3 || x.dim(2) != embed_dim_)
        throw ShapeError("attention expects [B, N, " + std::to_string(embed_dim_) + "], got " + to_string(x.shape()));
    const auto b = x.dim(0), n = x.dim(1), d = embed_dim_ / heads_;
    auto split_heads = [&](const Var<T>& y) { return permute(reshape(y, {b, n, heads_, d}), {0, 2, 1, 3}); };
    auto q = split_heads(affine(tape, x, *q_w_, q_b_));
    auto k = split_heads(affine(tape, x, *k_w_, k_b_));
    auto v = split_heads(affine(tape, x, *v_w_, v_b_));
    auto scores = scale(bmm(q, k, true), static_cast<T>(1.0 / std::sqrt(static_cast<double>(d))));
    auto attn = softmax(scores, -1);
    if (weights) *weights = attn.value();
    auto ctx = reshape(permute(bmm(attn, v), {0, 2, 1, 3}), {b, n, embed_dim_});
    return {affine(tape, ctx, *o_w_, o_b_), t.rows, t.cols};
}

template <class T>
TransformerLayer<T>::TransformerLayer(ParamFactory<T>& f, const std::string& prefix, std::int64_t embed_dim,
                                      std::int64_t heads, std::int64_t mlp_ratio)
    : attn_(f, prefix + ".attn", embed_dim, heads) {
    if (mlp_ratio <= 0) throw ConfigError("mlp ratio must be positive");
    ln1_g_ = &f.ones(prefix + ".ln1.gamma", {embed_dim});
    ln1_b_ = &f.zeros(prefix + ".ln1.beta", {embed_dim});
    ln2_g_ = &f.ones(prefix + ".ln2.gamma", {embed_dim});
    ln2_b_ = &f.zeros(prefix + ".ln2.beta", {embed_dim});
    const auto hidden = mlp_ratio * embed_dim;
    fc1_w_ = &f.truncated_normal(prefix + ".mlp.fc1.weight", {embed_dim, hidden});
    fc1_b_ = &f.zeros(prefix + ".mlp.fc1.bias", {hidden});
    fc2_w_ = &f.truncated_normal(prefix + ".mlp.fc2.weight", {hidden, embed_dim});
    fc2_b_ = &f.zeros(prefix + ".mlp.fc2.bias", {embed_dim});
}

template <class T>
TokenSequence<T> TransformerLayer<T>::forward(Tape<T>& tape, const TokenSequence<T>& t) const {
    auto h = layer_norm(t.tokens, tape.watch(*ln1_g_), tape.watch(*ln1_b_));
    auto x = add(t.tokens, attn_.forward(tape, {h, t.rows, t.cols}).tokens);
    auto m = layer_norm(x, tape.watch(*ln2_g_), tape.watch(*ln2_b_));
    m = gelu(affine(tape, m, *fc1_w_, fc1_b_));
    m = affine(tape, m, *fc2_w_, fc2_b_);
    return {add(x, m), t.rows, t.cols};
}

template <class T>
PatchMerging<T>::PatchMerging(ParamFactory<T>& f, const std::string& prefix, std::int64_t embed_dim)
    : embed_dim_(embed_dim) {
    weight_ = &f.truncated_normal(prefix + ".weight", {4 * embed_dim, 2 * embed_dim});
}

template <class T>
TokenSequence<T> PatchMerging<T>::forward(Tape<T>& tape, const TokenSequence<T>& t) const {
    if (t.rows % 2 || t.cols % 2 || t.dim() != embed_dim_ || t.tokens.dim(1) != t.count())
        throw ShapeError("patch merging needs an even token grid of width " + std::to_string(embed_dim_) + ", got " +
                         std::to_string(t.rows) + "x" + std::to_string(t.cols) + " " + to_string(t.tokens.shape()));
    const auto b = t.tokens.dim(0), k = embed_dim_;
    auto x = reshape(t.tokens, {b, t.rows / 2, 2, t.cols / 2, 2, k});
    x = permute(x, {0, 1, 3, 2, 4, 5});
    x = reshape(x, {b, t.count() / 4, 4 * k});
    return {linear(x, tape.watch(*weight_)), t.rows / 2, t.cols / 2};
}

template <class T>
PatchExpanding<T>::PatchExpanding(ParamFactory<T>& f, const std::string& prefix, std::int64_t embed_dim)
    : embed_dim_(embed_dim) {
    if (embed_dim % 2) throw ConfigError("patch expanding needs an even width, got " + std::to_string(embed_dim));
    weight_ = &f.truncated_normal(prefix + ".weight", {embed_dim, 2 * embed_dim});
}

template <class T>
TokenSequence<T> PatchExpanding<T>::forward(Tape<T>& tape, const TokenSequence<T>& t) const {
    if (t.dim() != embed_dim_ || t.tokens.dim(1) != t.count())
        throw ShapeError("patch expanding expects width " + std::to_string(embed_dim_) + ", got " +
                         to_string(t.tokens.shape()));
    const auto b = t.tokens.dim(0), k = embed_dim_;
    auto x = linear(t.tokens, tape.watch(*weight_));
    x = reshape(x, {b, t.rows, t.cols, 2, 2, k / 2});
    x = permute(x, {0, 1, 3, 2, 4, 5});
    return {reshape(x, {b, 4 * t.count(), k / 2}), 2 * t.rows, 2 * t.cols};
}

constexpr std::int64_t kConvKernel = 5;
// Variance-preserving uniform bounds: sqrt(3) for linear maps, and the
// LeakyReLU(0.2) Kaiming gain for activated conv stages.
const double kLinearGain = std::sqrt(3.0);
const double kLeakyGain = std::sqrt(6.0 / (1.0 + 0.2 * 0.2));

template <class T>
ConvEncoder<T>::ConvEncoder(ParamFactory<T>& f, const std::string& prefix, std::int64_t in_channels,
                            const std::vector<std::int64_t>& channels)
    : out_channels_(in_channels) {
    std::int64_t cin = in_channels;
    for (std::size_t i = 0; i < channels.size(); ++i) {
        const auto name = prefix + ".conv" + std::to_string(i);
        weights_.push_back(&f.fan_in_uniform(name + ".weight", {kConvKernel, kConvKernel, cin, channels[i]},
                                             kConvKernel * kConvKernel * cin, kLeakyGain));
        biases_.push_back(&f.zeros(name + ".bias", {channels[i]}));
        cin = channels[i];
    }
    out_channels_ = cin;
}

template <class T>
Var<T> ConvEncoder<T>::forward(Tape<T>& tape, const Var<T>& x) const {
    Var<T> h = x;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
        h = conv2d(h, tape.watch(*weights_[i]), 2, Padding::same);
        h = leaky_relu(add_broadcast(h, tape.watch(*biases_[i])));
    }
    return h;
}

template <class T>
ConvDecoder<T>::ConvDecoder(ParamFactory<T>& f, const std::string& prefix, std::int64_t out_channels,
                            const std::vector<std::int64_t>& channels) {
    for (std::size_t i = 0; i < channels.size(); ++i) {
        const std::size_t j = channels.size() - 1 - i;
        const auto cin = channels[j];
        const auto cout = j == 0 ? out_channels : channels[j - 1];
        const auto name = prefix + ".deconv" + std::to_string(i);
        // A stride-2 transposed conv sums about k*k/4 taps per input channel.
        weights_.push_back(&f.fan_in_uniform(name + ".weight", {kConvKernel, kConvKernel, cout, cin},
                                             kConvKernel * kConvKernel * cin / 4, j == 0 ? kLinearGain : kLeakyGain));
        biases_.push_back(&f.zeros(name + ".bias", {cout}));
    }
}

template <class T>
Var<T> ConvDecoder<T>::forward(Tape<T>& tape, const Var<T>& x) const {
    Var<T> h = x;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
        h = add_broadcast(conv2d_transpose(h, tape.watch(*weights_[i]), 2), tape.watch(*biases_[i]));
        if (i + 1 < weights_.size()) h = leaky_relu(h);
    }
    return h;
}

template <class T>
DenseBottleneck<T>::DenseBottleneck(ParamFactory<T>& f, const std::string& prefix, std::int64_t h, std::int64_t w,
                                    std::int64_t c, std::int64_t latent_dim)
    : h_(h), w_(w), c_(c), latent_dim_(latent_dim) {
    const auto flat = h * w * c;
    enc_w_ = &f.fan_in_uniform(prefix + ".enc.weight", {flat, latent_dim}, flat, kLinearGain);
    enc_b_ = &f.zeros(prefix + ".enc.bias", {latent_dim});
    dec_w_ = &f.fan_in_uniform(prefix + ".dec.weight", {latent_dim, flat}, latent_dim, kLinearGain);
    dec_b_ = &f.zeros(prefix + ".dec.bias", {flat});
}

template <class T>
BottleneckOutput<T> DenseBottleneck<T>::forward(Tape<T>& tape, const Var<T>& features) const {
    if (features.rank() != 4 || features.dim(1) != h_ || features.dim(2) != w_ || features.dim(3) != c_)
        throw ShapeError("dense bottleneck expects [B, " + std::to_string(h_) + ", " + std::to_string(w_) + ", " +
                         std::to_string(c_) + "], got " + to_string(features.shape()));
    const auto b = features.dim(0);
    auto z = affine(tape, reshape(features, {b, h_ * w_ * c_}), *enc_w_, enc_b_);
    auto back = affine(tape, z, *dec_w_, dec_b_);
    return {z, reshape(back, {b, h_, w_, c_})};
}

template <class T>
SpatialBottleneck<T>::SpatialBottleneck(ParamFactory<T>& f, const std::string& prefix, std::int64_t channels,
                                        std::int64_t latent_channels) {
    enc_w_ = &f.fan_in_uniform(prefix + ".enc.weight", {1, 1, channels, latent_channels}, channels, kLinearGain);
    enc_b_ = &f.zeros(prefix + ".enc.bias", {latent_channels});
    dec_w_ = &f.fan_in_uniform(prefix + ".dec.weight", {1, 1, latent_channels, channels}, latent_channels,
                               kLinearGain);
    dec_b_ = &f.zeros(prefix + ".dec.bias", {channels});
}

template <class T>
BottleneckOutput<T> SpatialBottleneck<T>::forward(Tape<T>& tape, const Var<T>& features) const {
    auto z = add_broadcast(conv2d(features, tape.watch(*enc_w_), 1, Padding::valid), tape.watch(*enc_b_));
    auto back = add_broadcast(conv2d(z, tape.watch(*dec_w_), 1, Padding::valid), tape.watch(*dec_b_));
    return {z, back};
}

template <class T>
SkipFusion<T>::SkipFusion(ParamFactory<T>& f, const std::string& prefix, std::int64_t embed_dim)
    : embed_dim_(embed_dim) {
    const auto name = prefix + ".weight";
    TensorT<T> w({2 * embed_dim, embed_dim});
    Rng rng = f.rng_for(name);
    for (std::int64_t i = 0; i < embed_dim; ++i) w.at(i, i) = T(1);
    for (std::int64_t i = embed_dim; i < 2 * embed_dim; ++i)
        for (std::int64_t j = 0; j < embed_dim; ++j) w.at(i, j) = static_cast<T>(rng.truncated_normal(0.02));
    weight_ = &f.from(name, std::move(w));
    bias_ = &f.zeros(prefix + ".bias", {embed_dim});
}

template <class T>
TokenSequence<T> SkipFusion<T>::forward(Tape<T>& tape, const TokenSequence<T>& decoder,
                                        const TokenSequence<T>& skip) const {
    if (decoder.tokens.shape() != skip.tokens.shape() || decoder.dim() != embed_dim_)
        throw ShapeError("skip fusion: decoder " + to_string(decoder.tokens.shape()) + " and skip " +
                         to_string(skip.tokens.shape()) + " must match with width " + std::to_string(embed_dim_));
    auto x = concat<T>({decoder.tokens, skip.tokens}, -1);
    return {affine(tape, x, *weight_, bias_), decoder.rows, decoder.cols};
}

#define UAD_INSTANTIATE_BLOCKS(T)                                                                        \
    template class ParamFactory<T>;                                                                      \
    template Var<T> patchify(const Var<T>&, std::int64_t);                                               \
    template Var<T> unpatchify(const Var<T>&, std::int64_t, std::int64_t, std::int64_t, std::int64_t);   \
    template class PatchEmbed<T>;                                                                        \
    template class PatchUnembed<T>;                                                                      \
    template class MultiHeadAttention<T>;                                                                \
    template class TransformerLayer<T>;                                                                  \
    template class PatchMerging<T>;                                                                      \
    template class PatchExpanding<T>;                                                                    \
    template class ConvEncoder<T>;                                                                       \
    template class ConvDecoder<T>;                                                                       \
    template class DenseBottleneck<T>;                                                                   \
    template class SpatialBottleneck<T>;                                                                 \
    template class SkipFusion<T>;

UAD_INSTANTIATE_BLOCKS(float)
UAD_INSTANTIATE_BLOCKS(double)

} // namespace uad
