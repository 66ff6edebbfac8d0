#pragma once

// Architecture building blocks: patch embedding, attention, transformer
// layers, hierarchical merging/expanding, and the convolutional autoencoder
// pieces. Blocks hold pointers into a ParameterStore owned by the model and
// are immutable after construction.

#include <cstdint>
#include <string>
#include <vector>

#include "uad/ops.hpp"
#include "uad/rng.hpp"

namespace uad {

struct BlockConfig {
    std::int64_t patch_size = 16;
    std::int64_t embed_dim = 96;
    std::int64_t num_layers = 12;
    std::int64_t num_heads = 8;
    std::int64_t mlp_ratio = 4;
    /// Output channels of each stride-2 conv stage.
    std::vector<std::int64_t> conv_channels;

    bool operator==(const BlockConfig&) const = default;
};

/// Tokens [B, N, K] laid out over a rows x cols grid, N = rows * cols.
template <class T>
struct TokenSequence {
    Var<T> tokens;
    std::int64_t rows = 0;
    std::int64_t cols = 0;

    std::int64_t count() const { return rows * cols; }
    std::int64_t dim() const { return tokens.dim(-1); }
};

/// Creates named parameters in a store, seeding each from (seed, name) so a
/// parameter's initial value does not depend on creation order.
template <class T>
class ParamFactory {
public:
    ParamFactory(ParameterStore<T>& store, std::uint64_t seed) : store_(store), seed_(seed) {}

    const Parameter<T>& truncated_normal(const std::string& name, Shape shape, double std = 0.02);
    /// U(-gain/sqrt(fan_in), gain/sqrt(fan_in)).
    const Parameter<T>& fan_in_uniform(const std::string& name, Shape shape, std::int64_t fan_in, double gain = 1.0);
    const Parameter<T>& zeros(const std::string& name, Shape shape);
    const Parameter<T>& ones(const std::string& name, Shape shape);
    const Parameter<T>& from(const std::string& name, TensorT<T> value);

    Rng rng_for(const std::string& name) const;

private:
    ParameterStore<T>& store_;
    std::uint64_t seed_;
};

/// Splits [B, H, W, C] into non-overlapping P x P patches: [B, N, P*P*C].
template <class T>
Var<T> patchify(const Var<T>& image, std::int64_t patch);
/// Inverse of patchify for a rows x cols token grid.
template <class T>
Var<T> unpatchify(const Var<T>& patches, std::int64_t rows, std::int64_t cols, std::int64_t patch,
                  std::int64_t channels);

template <class T>
class PatchEmbed {
public:
    PatchEmbed(ParamFactory<T>& f, const std::string& prefix, std::int64_t height, std::int64_t width,
               std::int64_t channels, std::int64_t patch, std::int64_t embed_dim);
    TokenSequence<T> forward(Tape<T>& tape, const Var<T>& image) const;

    const Parameter<T>& weight() const { return *weight_; }
    const Parameter<T>& bias() const { return *bias_; }
    const Parameter<T>& position() const { return *pos_; }

private:
    std::int64_t height_, width_, channels_, patch_, embed_dim_;
    const Parameter<T>* weight_;
    const Parameter<T>* bias_;
    const Parameter<T>* pos_;
};

/// Linear K -> P*P*C per token, then rearranged into [B, rows*P, cols*P, C].
template <class T>
class PatchUnembed {
public:
    PatchUnembed(ParamFactory<T>& f, const std::string& prefix, std::int64_t embed_dim, std::int64_t patch,
                 std::int64_t channels);
    Var<T> forward(Tape<T>& tape, const TokenSequence<T>& t) const;

    const Parameter<T>& weight() const { return *weight_; }
    const Parameter<T>& bias() const { return *bias_; }

private:
    std::int64_t embed_dim_, patch_, channels_;
    const Parameter<T>* weight_;
    const Parameter<T>* bias_;
};

template <class T>
class MultiHeadAttention {
public:
    MultiHeadAttention(ParamFactory<T>& f, const std::string& prefix, std::int64_t embed_dim, std::int64_t heads);
    /// When `weights` is non-null it receives the attention matrix [B, heads, N, N].
    TokenSequence<T> forward(Tape<T>& tape, const TokenSequence<T>& t, TensorT<T>* weights = nullptr) const;

    std::int64_t heads() const { return heads_; }

private:
    std::int64_t embed_dim_, heads_;
    const Parameter<T>*q_w_, *q_b_, *k_w_, *k_b_, *v_w_, *v_b_, *o_w_, *o_b_;
};

/// Pre-norm layer: t + MHA(LN(t)), then + MLP(LN(.)) with a GELU hidden layer.
template <class T>
class TransformerLayer {
public:
    TransformerLayer(ParamFactory<T>& f, const std::string& prefix, std::int64_t embed_dim, std::int64_t heads,
                     std::int64_t mlp_ratio);
    TokenSequence<T> forward(Tape<T>& tape, const TokenSequence<T>& t) const;

private:
    MultiHeadAttention<T> attn_;
    const Parameter<T>*ln1_g_, *ln1_b_, *ln2_g_, *ln2_b_;
    const Parameter<T>*fc1_w_, *fc1_b_, *fc2_w_, *fc2_b_;
};

/// Concatenates each 2x2 token neighbourhood (4K) and projects to 2K.
template <class T>
class PatchMerging {
public:
    PatchMerging(ParamFactory<T>& f, const std::string& prefix, std::int64_t embed_dim);
    TokenSequence<T> forward(Tape<T>& tape, const TokenSequence<T>& t) const;
    const Parameter<T>& weight() const { return *weight_; }

private:
    std::int64_t embed_dim_;
    const Parameter<T>* weight_;
};

/// Projects K -> 2K and splits every token into a 2x2 block of K/2 tokens.
template <class T>
class PatchExpanding {
public:
    PatchExpanding(ParamFactory<T>& f, const std::string& prefix, std::int64_t embed_dim);
    TokenSequence<T> forward(Tape<T>& tape, const TokenSequence<T>& t) const;
    const Parameter<T>& weight() const { return *weight_; }

private:
    std::int64_t embed_dim_;
    const Parameter<T>* weight_;
};

/// Stride-2, 5x5 conv stages with LeakyReLU(0.2).
template <class T>
class ConvEncoder {
public:
    ConvEncoder(ParamFactory<T>& f, const std::string& prefix, std::int64_t in_channels,
                const std::vector<std::int64_t>& channels);
    Var<T> forward(Tape<T>& tape, const Var<T>& x) const;
    std::int64_t stages() const { return static_cast<std::int64_t>(weights_.size()); }
    std::int64_t out_channels() const { return out_channels_; }

private:
    std::vector<const Parameter<T>*> weights_;
    std::vector<const Parameter<T>*> biases_;
    std::int64_t out_channels_;
};

/// Mirror of ConvEncoder using transposed convolutions; the last stage is linear.
template <class T>
class ConvDecoder {
public:
    ConvDecoder(ParamFactory<T>& f, const std::string& prefix, std::int64_t out_channels,
                const std::vector<std::int64_t>& channels);
    Var<T> forward(Tape<T>& tape, const Var<T>& x) const;

private:
    std::vector<const Parameter<T>*> weights_;
    std::vector<const Parameter<T>*> biases_;
};

template <class T>
struct BottleneckOutput {
    Var<T> latent;
    Var<T> restored;
};

/// Flatten -> linear to latent_dim -> linear back -> reshape.
template <class T>
class DenseBottleneck {
public:
    DenseBottleneck(ParamFactory<T>& f, const std::string& prefix, std::int64_t h, std::int64_t w, std::int64_t c,
                    std::int64_t latent_dim);
    BottleneckOutput<T> forward(Tape<T>& tape, const Var<T>& features) const;

    const Parameter<T>& enc_weight() const { return *enc_w_; }
    const Parameter<T>& enc_bias() const { return *enc_b_; }
    const Parameter<T>& dec_weight() const { return *dec_w_; }
    const Parameter<T>& dec_bias() const { return *dec_b_; }

private:
    std::int64_t h_, w_, c_, latent_dim_;
    const Parameter<T>*enc_w_, *enc_b_, *dec_w_, *dec_b_;
};

/// 1x1 conv down to `latent_channels` and back; keeps the spatial layout.
template <class T>
class SpatialBottleneck {
public:
    SpatialBottleneck(ParamFactory<T>& f, const std::string& prefix, std::int64_t channels,
                      std::int64_t latent_channels);
    BottleneckOutput<T> forward(Tape<T>& tape, const Var<T>& features) const;

private:
    const Parameter<T>*enc_w_, *enc_b_, *dec_w_, *dec_b_;
};

/// Concatenates decoder tokens with same-resolution encoder tokens and fuses
/// them back to K with one linear layer. The decoder half of the weight starts
/// as the identity, so zeroing the skip half reduces the block to a no-op.
template <class T>
class SkipFusion {
public:
    SkipFusion(ParamFactory<T>& f, const std::string& prefix, std::int64_t embed_dim);
    TokenSequence<T> forward(Tape<T>& tape, const TokenSequence<T>& decoder, const TokenSequence<T>& skip) const;

    const Parameter<T>& weight() const { return *weight_; }
    /// Rows of the weight that multiply the skip tokens.
    std::int64_t skip_row_begin() const { return embed_dim_; }

private:
    std::int64_t embed_dim_;
    const Parameter<T>* weight_;
    const Parameter<T>* bias_;
};

} // namespace uad
