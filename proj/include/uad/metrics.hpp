#pragma once

// Segmentation and reconstruction metrics and the evaluation report.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "uad/pipeline.hpp"

namespace uad {

/// 2|m & l| / (|m| + |l|); two empty masks score 1. Inputs must be 0/1.
double dice(const Tensor& m, const Tensor& l);

/// Area under the ROC curve by trapezoidal integration over unique-score thresholds.
double auroc(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels);
/// Average precision: sum over unique thresholds of (recall step) x precision.
double auprc(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels);

/// Mean SSIM over all valid 11x11 Gaussian windows (sigma 1.5, K1 0.01, K2 0.03, L 1).
double ssim(const Tensor& x, const Tensor& y);

struct MeanStd {
    double mean = 0;
    /// Population standard deviation.
    double std = 0;
};
MeanStd mean_std(const std::vector<double>& values);

/// `n` nested thresholds over [lo, hi]: lo, hi, then the van der Corput points
/// lo + (hi - lo) * {1/2, 1/4, 3/4, 1/8, ...}. Each set contains every smaller one.
std::vector<double> sweep_thresholds(double lo, double hi, std::int64_t n);

struct BestDiceResult {
    /// Mean dice at the best operating point.
    double value = 0;
    /// Population std of per-sample dice at that operating point.
    double std = 0;
    /// Threshold of the best global operating point (dataset mode); NaN when
    /// the supplied operating masks won or in per-sample mode.
    double threshold = 0;
    std::vector<double> per_sample;
};

enum class SweepMode { dataset, per_sample };

/// Sweeps thresholds over the in-mask range of the filtered residuals and
/// binarizes each sample at >= t inside its brain mask. Dataset mode picks one
/// threshold maximizing mean dice; per-sample mode averages each sample's own
/// best. `operating_masks`, when given, is one extra candidate binarization
/// per sample (the pipeline's own output), so the result bounds its dice.
BestDiceResult best_dice(const std::vector<Tensor>& filtered, const std::vector<Tensor>& labels,
                         const std::vector<Tensor>& brain_masks, std::int64_t n_thresholds = 100,
                         SweepMode mode = SweepMode::dataset, const std::vector<Tensor>& operating_masks = {});

struct MetricReport {
    std::string dataset;
    double auroc = 0;
    double auprc = 0;
    double dsc_mean = 0;
    double dsc_std = 0;
    double best_dsc = 0;
    double best_dsc_std = 0;
    double ssim = 0;
    std::int64_t params = 0;
    std::int64_t anomalous_samples = 0;
    std::int64_t healthy_samples = 0;
};

struct EvalOptions {
    std::string dataset = "phantom";
    double percentile = 1.0;
    std::int64_t sweep = 100;
    SweepMode sweep_mode = SweepMode::dataset;
    std::int64_t batch_size = 16;
};

/// Segments the anomalous set (dice statistics over samples, pooled in-mask
/// AUROC/AUPRC on the filtered residual, best dice) and reports the mean SSIM
/// of reconstructions on the healthy set.
MetricReport evaluate(const Model& model, const std::vector<Sample>& test_set, const std::vector<Sample>& healthy_set,
                      const EvalOptions& opts = {});

std::string report_csv(const std::vector<MetricReport>& reports);
/// Aligned plain-text table with the same columns as the CSV.
std::string report_text(const std::vector<MetricReport>& reports);

} // namespace uad
