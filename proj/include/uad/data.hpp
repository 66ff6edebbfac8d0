#pragma once

// Synthetic brain phantoms, preprocessing, and the on-disk dataset format.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "uad/tensor.hpp"

namespace uad {

struct Sample {
    /// [H, W, 1], values in [0, 1], zero outside the brain.
    Tensor image;
    /// [H, W] binary.
    Tensor brain_mask;
    /// [H, W] binary; all zero for healthy samples.
    Tensor label;
};

struct PhantomParams {
    std::int64_t height = 64;
    std::int64_t width = 64;
    /// Standard deviation of the additive Gaussian noise inside the brain.
    double noise_std = 0.005;
    /// Peak amplitude of the smooth low-frequency texture.
    double texture_amplitude = 0.03;
    std::int64_t min_blobs = 1;
    std::int64_t max_blobs = 3;
    double blob_offset_min = 0.3;
    double blob_offset_max = 0.6;
    /// Blob semi-axis range as a fraction of the image height.
    double blob_radius_min = 0.05;
    double blob_radius_max = 0.11;

    bool operator==(const PhantomParams&) const = default;
};

/// Throws ConfigError on out-of-range parameters.
void validate(const PhantomParams& p);

Sample generate_phantom(std::uint64_t seed, bool anomalous, const PhantomParams& params = {});

/// 3x3 binary closing; pixels outside the image are ignored by both passes.
Tensor binary_closing3x3(const Tensor& mask);
/// Pixels > 0 after a 3x3 closing. Accepts [H, W] or [H, W, 1].
Tensor brain_mask(const Tensor& image);

/// Min-max scaling to [0, 1]; a constant image maps to zeros.
Tensor normalize(const Tensor& image);
/// Bilinear resampling of [H, W] or [H, W, C] with a corner-aligned grid.
Tensor resize_bilinear(const Tensor& image, std::int64_t out_h, std::int64_t out_w);

enum class Dtype : std::uint8_t { f32 = 0, u8 = 1 };

/// Writes one array as a .uads file. u8 arrays must hold integers in [0, 255].
void save_array(const Tensor& t, Dtype dtype, const std::filesystem::path& path);
Tensor load_array(const std::filesystem::path& path, Dtype* dtype = nullptr);

/// A sample is a directory holding image.uads, mask.uads and label.uads.
void save_sample(const Sample& s, const std::filesystem::path& dir);
Sample load_sample(const std::filesystem::path& dir);

struct SplitSpec {
    std::string name;
    std::int64_t count = 0;
    bool anomalous = false;
    std::uint64_t seed_offset = 0;
};

struct SplitCounts {
    std::int64_t train = 512;
    std::int64_t val = 64;
    std::int64_t test_healthy = 64;
    std::int64_t test_anomalous = 128;
};

/// Per-split seed ranges are [base + offset, base + offset + count) with
/// offsets 0, 1e6, 2e6, 3e6, so counts are limited to 1e6 per split.
std::vector<SplitSpec> split_specs(const SplitCounts& counts);
std::uint64_t sample_seed(std::uint64_t seed, const SplitSpec& split, std::int64_t index);

/// Generates the four splits under `root` and writes a manifest per split.
void build_splits(const std::filesystem::path& root, const SplitCounts& counts, std::uint64_t seed,
                  const PhantomParams& params = {});
/// Checks every file listed in a split's manifest; throws ChecksumError on a mismatch.
void verify_manifest(const std::filesystem::path& split_dir);
/// Loads a split after verifying its manifest.
std::vector<Sample> load_split(const std::filesystem::path& split_dir);

std::uint32_t crc32_file(const std::filesystem::path& path);

} // namespace uad
