#pragma once

// The five transformer autoencoders and the two convolutional baselines.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "uad/blocks.hpp"

namespace uad {

enum class Architecture { b_tae, dc_tae, sc_tae, h_tae, h_tae_s, ae_dense, ae_spatial };
enum class Preset { full, desk };

std::string to_string(Architecture a);
std::string to_string(Preset p);
/// Accepts the lower-case CLI spelling ("dc_tae") or the upper-case one ("DC_TAE").
Architecture parse_architecture(const std::string& s);
Preset parse_preset(const std::string& s);
const std::vector<Architecture>& all_architectures();

bool is_hierarchical(Architecture a);
bool has_transformer(Architecture a);
bool has_conv_autoencoder(Architecture a);

struct ModelConfig {
    Architecture architecture = Architecture::b_tae;
    Preset preset = Preset::desk;
    std::int64_t height = 64;
    std::int64_t width = 64;
    std::int64_t channels = 1;
    BlockConfig block;
    /// Width of the dense latent vector (DC_TAE, AE_DENSE).
    std::int64_t latent_dim = 128;
    /// Channels of the spatial latent map (SC_TAE, AE_SPATIAL).
    std::int64_t latent_channels = 16;

    bool operator==(const ModelConfig&) const = default;
};

ModelConfig make_config(Architecture a, Preset p);
/// Throws ConfigError describing the first violated constraint.
void validate(const ModelConfig& cfg);
/// key=value lines, one per field, in a fixed order.
std::string serialize(const ModelConfig& cfg);
ModelConfig parse_model_config(const std::string& text);

/// Observes a forward pass. With `stop_at_bottleneck` the forward returns the
/// bottleneck activation instead of running the decoder.
template <class T>
struct ForwardProbe {
    bool stop_at_bottleneck = false;
    /// Bottleneck shape without the batch axis.
    Shape bottleneck_shape;
    TensorT<T> bottleneck;
};

template <class T>
class ModelT {
public:
    static ModelT build(const ModelConfig& cfg, std::uint64_t seed);

    ModelT(ModelT&&) noexcept;
    ModelT& operator=(ModelT&&) noexcept;
    ~ModelT();

    const ModelConfig& config() const;
    ParameterStore<T>& parameters();
    const ParameterStore<T>& parameters() const;

    /// batch [B, H, W, C] -> reconstruction in (0, 1) with the same shape.
    /// Non-finite activations raise NumericError naming the layer.
    Var<T> forward(Tape<T>& tape, const Var<T>& batch, ForwardProbe<T>* probe = nullptr) const;
    /// Inference-only forward.
    TensorT<T> reconstruct(const TensorT<T>& batch) const;

    std::int64_t param_count() const;
    std::vector<TensorT<T>> snapshot() const;
    void restore(const std::vector<TensorT<T>>& values);

private:
    struct Impl;
    explicit ModelT(std::unique_ptr<Impl> impl);
    std::unique_ptr<Impl> impl_;
};

using Model = ModelT<float>;

extern template class ModelT<float>;
extern template class ModelT<double>;

void save_checkpoint(const Model& model, const std::filesystem::path& path);
/// Rebuilds the model described by the embedded config and loads its values.
/// With `expected`, a checkpoint whose architecture or image size differs raises ConfigError.
Model load_checkpoint(const std::filesystem::path& path, const std::optional<ModelConfig>& expected = std::nullopt);

} // namespace uad
