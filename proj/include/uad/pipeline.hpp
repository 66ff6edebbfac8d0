#pragma once

// Training on healthy samples and the residual-to-mask inference pipeline.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "uad/adam.hpp"
#include "uad/data.hpp"
#include "uad/models.hpp"

namespace uad {

struct TrainConfig {
    std::int64_t epochs = 50;
    std::int64_t batch_size = 12;
    double learning_rate = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t seed = 0;
    /// Validate every N epochs; the last epoch is always validated.
    std::int64_t validate_every = 1;
};

void validate(const TrainConfig& cfg);

/// Full preset: the struct defaults. Desk preset: 20 epochs, batch 4, learning
/// rate 2e-3, which fits the 64x64 phantom budget on one CPU core.
TrainConfig default_train_config(Preset preset);

struct EpochRecord {
    std::int64_t epoch = 0;
    double train_mae = 0;
    /// Absent on epochs skipped by the validation cadence.
    std::optional<double> val_mae;
};

struct TrainResult {
    std::vector<EpochRecord> history;
    std::int64_t best_epoch = 0;
    double best_val_mae = 0;
    /// Parameter values at the best validation epoch, in build order.
    std::vector<Tensor> best_parameters;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Minimizes the mean absolute reconstruction error with ADAM. The model ends
/// holding the final-epoch parameters; the best ones are in the result.
TrainResult train(Model& model, const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                  const TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// Stacks sample images [H, W, 1] into a batch [B, H, W, 1].
Tensor stack_images(const std::vector<Sample>& samples, std::size_t begin, std::size_t end);
/// Mean absolute error per sample, computed in inference mode.
double mean_reconstruction_mae(const Model& model, const std::vector<Sample>& samples, std::int64_t batch_size);

void write_loss_csv(const std::vector<EpochRecord>& history, const std::filesystem::path& path);

/// r = b_mask * (x - x_hat) as an [H, W] plane. x and x_hat may be [H, W] or [H, W, 1].
Tensor residual(const Tensor& x, const Tensor& x_hat, const Tensor& brain_mask);
/// k x k median with edge replication; k must be odd.
Tensor median_filter2d(const Tensor& img, std::int64_t k = 5);
/// Keeps the ceil(p% of in-mask pixels) largest in-mask values: with tau the
/// value at that rank, the output is 1 where img >= tau, img > 0 and the mask
/// is set. Ties at tau are all kept, so a constant positive image maps to the
/// whole mask while an all-zero image maps to an empty mask.
Tensor squash(const Tensor& img, double p, const Tensor& brain_mask);
/// median_filter2d(max(r, 0), k).
Tensor filtered_residual(const Tensor& r, std::int64_t k = 5);
/// squash(filtered_residual(r), p, b_mask).
Tensor postprocess(const Tensor& r, const Tensor& brain_mask, double p = 1.0, std::int64_t k = 5);

struct SegmentationResult {
    /// [H, W] planes.
    Tensor reconstruction;
    Tensor residual;
    Tensor filtered;
    Tensor mask;
};

SegmentationResult segment(const Model& model, const Sample& sample, double p = 1.0);
/// Segments every sample, reconstructing `batch_size` samples per forward; results follow input order.
std::vector<SegmentationResult> segment_all(const Model& model, const std::vector<Sample>& samples, double p = 1.0,
                                            std::int64_t batch_size = 16);

} // namespace uad
