#include "uad/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

namespace uad {

namespace {

void require_binary(const Tensor& t, const char* what) {
    for (float v : t.data())
        if (v != 0.f && v != 1.f) throw ValueError(std::string(what) + " is not binary (found " + std::to_string(v) + ")");
}

struct Counts {
    std::int64_t positives = 0, negatives = 0;
};

Counts count_classes(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels, const char* what) {
    if (scores.size() != labels.size())
        throw ShapeError(std::string(what) + ": " + std::to_string(scores.size()) + " scores for " +
                         std::to_string(labels.size()) + " labels");
    Counts c;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] > 1) throw ValueError(std::string(what) + ": labels must be 0 or 1");
        if (!std::isfinite(scores[i])) throw NumericError(std::string(what) + ": non-finite score");
        (labels[i] ? c.positives : c.negatives)++;
    }
    if (c.positives == 0 || c.negatives == 0)
        throw ValueError(std::string(what) + " needs both classes (" + std::to_string(c.positives) + " positive, " +
                         std::to_string(c.negatives) + " negative)");
    return c;
}

std::vector<std::size_t> descending_order(const std::vector<double>& scores) {
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return idx;
}

} // namespace

double dice(const Tensor& m, const Tensor& l) {
    if (m.size() != l.size()) throw ShapeError("dice: shapes " + to_string(m.shape()) + " and " + to_string(l.shape()) + " differ");
    require_binary(m, "dice prediction");
    require_binary(l, "dice label");
    std::int64_t inter = 0, sm = 0, sl = 0;
    for (std::int64_t i = 0; i < m.size(); ++i) {
        const bool a = m[i] != 0.f, b = l[i] != 0.f;
        inter += a && b;
        sm += a;
        sl += b;
    }
    if (sm + sl == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(sm + sl);
}

double auroc(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels) {
    const auto c = count_classes(scores, labels, "auroc");
    const auto idx = descending_order(scores);
    double area = 0;
    std::int64_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < idx.size();) {
        const std::int64_t tp0 = tp, fp0 = fp;
        const double s = scores[idx[i]];
        for (; i < idx.size() && scores[idx[i]] == s; ++i) (labels[idx[i]] ? tp : fp)++;
        area += static_cast<double>(fp - fp0) * static_cast<double>(tp + tp0) / 2.0;
    }
    return area / (static_cast<double>(c.positives) * static_cast<double>(c.negatives));
}

double auprc(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels) {
    const auto c = count_classes(scores, labels, "auprc");
    const auto idx = descending_order(scores);
    double ap = 0;
    std::int64_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < idx.size();) {
        const std::int64_t tp0 = tp;
        const double s = scores[idx[i]];
        for (; i < idx.size() && scores[idx[i]] == s; ++i) (labels[idx[i]] ? tp : fp)++;
        if (tp > tp0)
            ap += static_cast<double>(tp - tp0) / static_cast<double>(c.positives) * static_cast<double>(tp) /
                  static_cast<double>(tp + fp);
    }
    return ap;
}

double ssim(const Tensor& x, const Tensor& y) {
    auto plane = [](const Tensor& t) -> std::pair<std::int64_t, std::int64_t> {
        if (t.rank() == 2 || (t.rank() == 3 && t.dim(2) == 1)) return {t.dim(0), t.dim(1)};
        throw ShapeError("ssim expects [H, W] or [H, W, 1], got " + to_string(t.shape()));
    };
    const auto [h, w] = plane(x);
    if (plane(y) != std::make_pair(h, w))
        throw ShapeError("ssim: shapes " + to_string(x.shape()) + " and " + to_string(y.shape()) + " differ");
    constexpr int kWin = 11;
    constexpr double kSigma = 1.5, C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
    if (h < kWin || w < kWin) throw ShapeError("ssim needs images of at least 11x11");
    double g[kWin];
    double gsum = 0;
    for (int i = 0; i < kWin; ++i) {
        const double d = i - kWin / 2;
        g[i] = std::exp(-d * d / (2 * kSigma * kSigma));
        gsum += g[i];
    }
    for (auto& v : g) v /= gsum;

    const auto oh = h - kWin + 1, ow = w - kWin + 1;
    double total = 0;
    for (std::int64_t i = 0; i < oh; ++i) {
        for (std::int64_t j = 0; j < ow; ++j) {
            double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
            for (int a = 0; a < kWin; ++a) {
                for (int b = 0; b < kWin; ++b) {
                    const double wt = g[a] * g[b];
                    const double vx = x[(i + a) * w + j + b], vy = y[(i + a) * w + j + b];
                    mx += wt * vx;
                    my += wt * vy;
                    xx += wt * vx * vx;
                    yy += wt * vy * vy;
                    xy += wt * vx * vy;
                }
            }
            const double sx = xx - mx * mx, sy = yy - my * my, sxy = xy - mx * my;
            total += ((2 * mx * my + C1) * (2 * sxy + C2)) / ((mx * mx + my * my + C1) * (sx + sy + C2));
        }
    }
    return total / static_cast<double>(oh * ow);
}

MeanStd mean_std(const std::vector<double>& values) {
    if (values.empty()) throw ValueError("mean_std of an empty set");
    MeanStd r;
    for (double v : values) r.mean += v;
    r.mean /= static_cast<double>(values.size());
    double var = 0;
    for (double v : values) var += (v - r.mean) * (v - r.mean);
    r.std = std::sqrt(var / static_cast<double>(values.size()));
    return r;
}

std::vector<double> sweep_thresholds(double lo, double hi, std::int64_t n) {
    if (n < 1) throw ValueError("threshold sweep needs at least one threshold");
    std::vector<double> t;
    t.reserve(static_cast<std::size_t>(n));
    t.push_back(lo);
    if (n >= 2) t.push_back(hi);
    for (std::uint64_t j = 1; static_cast<std::int64_t>(t.size()) < n; ++j) {
        double f = 0, base = 0.5;
        for (std::uint64_t k = j; k; k >>= 1, base /= 2)
            if (k & 1) f += base;
        t.push_back(lo + (hi - lo) * f);
    }
    return t;
}

namespace {

struct SampleView {
    std::vector<float> values;
    std::vector<std::uint8_t> in_label;
    std::int64_t label_total = 0;
};

double dice_at(const SampleView& s, double t) {
    std::int64_t pred = 0, inter = 0;
    for (std::size_t i = 0; i < s.values.size(); ++i)
        if (s.values[i] >= t) {
            ++pred;
            inter += s.in_label[i];
        }
    if (pred + s.label_total == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(pred + s.label_total);
}

} // namespace

BestDiceResult best_dice(const std::vector<Tensor>& filtered, const std::vector<Tensor>& labels,
                         const std::vector<Tensor>& brain_masks, std::int64_t n_thresholds, SweepMode mode,
                         const std::vector<Tensor>& operating_masks) {
    if (filtered.empty()) throw ValueError("best_dice needs at least one sample");
    if (labels.size() != filtered.size() || brain_masks.size() != filtered.size() ||
        (!operating_masks.empty() && operating_masks.size() != filtered.size()))
        throw ShapeError("best_dice: residual, label, mask and operating-mask counts differ");

    std::vector<SampleView> views(filtered.size());
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t s = 0; s < filtered.size(); ++s) {
        const auto& r = filtered[s];
        if (labels[s].size() != r.size() || brain_masks[s].size() != r.size())
            throw ShapeError("best_dice: sample " + std::to_string(s) + " has mismatched shapes");
        require_binary(labels[s], "best_dice label");
        auto& v = views[s];
        for (std::int64_t i = 0; i < r.size(); ++i) {
            v.label_total += labels[s][i] != 0.f;
            if (brain_masks[s][i] == 0.f) continue;
            v.values.push_back(r[i]);
            v.in_label.push_back(labels[s][i] != 0.f);
        }
        if (v.values.empty()) throw ValueError("best_dice: sample " + std::to_string(s) + " has an empty brain mask");
        const auto [mn, mx] = std::minmax_element(v.values.begin(), v.values.end());
        lo = std::min(lo, static_cast<double>(*mn));
        hi = std::max(hi, static_cast<double>(*mx));
    }

    BestDiceResult best;
    best.value = -1;
    if (mode == SweepMode::dataset) {
        for (double t : sweep_thresholds(lo, hi, n_thresholds)) {
            std::vector<double> d(views.size());
#pragma omp parallel for schedule(static)
            for (std::size_t s = 0; s < views.size(); ++s) d[s] = dice_at(views[s], t);
            const auto ms = mean_std(d);
            if (ms.mean > best.value) {
                best.value = ms.mean;
                best.std = ms.std;
                best.threshold = t;
                best.per_sample = std::move(d);
            }
        }
    } else {
        best.per_sample.resize(views.size());
#pragma omp parallel for schedule(dynamic)
        for (std::size_t s = 0; s < views.size(); ++s) {
            const auto [mn, mx] = std::minmax_element(views[s].values.begin(), views[s].values.end());
            double b = -1;
            for (double t : sweep_thresholds(*mn, *mx, n_thresholds)) b = std::max(b, dice_at(views[s], t));
            best.per_sample[s] = b;
        }
        const auto ms = mean_std(best.per_sample);
        best.value = ms.mean;
        best.std = ms.std;
        best.threshold = std::numeric_limits<double>::quiet_NaN();
    }

    if (!operating_masks.empty()) {
        std::vector<double> d(operating_masks.size());
        for (std::size_t s = 0; s < d.size(); ++s) {
            if (mode == SweepMode::per_sample) {
                d[s] = std::max(best.per_sample[s], dice(operating_masks[s], labels[s]));
            } else {
                d[s] = dice(operating_masks[s], labels[s]);
            }
        }
        const auto ms = mean_std(d);
        if (mode == SweepMode::per_sample) {
            best.value = ms.mean;
            best.std = ms.std;
            best.per_sample = std::move(d);
        } else if (ms.mean > best.value) {
            best.value = ms.mean;
            best.std = ms.std;
            best.threshold = std::numeric_limits<double>::quiet_NaN();
            best.per_sample = std::move(d);
        }
    }
    return best;
}

MetricReport evaluate(const Model& model, const std::vector<Sample>& test_set, const std::vector<Sample>& healthy_set,
                      const EvalOptions& opts) {
    if (test_set.empty()) throw ValueError("evaluation needs a non-empty anomalous test set");
    if (healthy_set.empty()) throw ValueError("evaluation needs a non-empty healthy set");
    MetricReport rep;
    rep.dataset = opts.dataset;
    rep.params = model.param_count();
    rep.anomalous_samples = static_cast<std::int64_t>(test_set.size());
    rep.healthy_samples = static_cast<std::int64_t>(healthy_set.size());

    const auto seg = segment_all(model, test_set, opts.percentile, opts.batch_size);
    std::vector<double> dices, scores;
    std::vector<std::uint8_t> pixel_labels;
    std::vector<Tensor> filtered, labels, masks, predicted;
    for (std::size_t s = 0; s < seg.size(); ++s) {
        dices.push_back(dice(seg[s].mask, test_set[s].label));
        const auto& bm = test_set[s].brain_mask;
        for (std::int64_t i = 0; i < bm.size(); ++i) {
            if (bm[i] == 0.f) continue;
            scores.push_back(seg[s].filtered[i]);
            pixel_labels.push_back(test_set[s].label[i] != 0.f);
        }
        filtered.push_back(seg[s].filtered);
        labels.push_back(test_set[s].label);
        masks.push_back(bm);
        predicted.push_back(seg[s].mask);
    }
    const auto ds = mean_std(dices);
    rep.dsc_mean = ds.mean;
    rep.dsc_std = ds.std;
    rep.auroc = auroc(scores, pixel_labels);
    rep.auprc = auprc(scores, pixel_labels);
    const auto best = best_dice(filtered, labels, masks, opts.sweep, opts.sweep_mode, predicted);
    rep.best_dsc = best.value;
    rep.best_dsc_std = best.std;

    std::vector<double> ss(healthy_set.size());
    const auto bs = static_cast<std::size_t>(opts.batch_size);
    const auto& c = model.config();
    for (std::size_t b = 0; b < healthy_set.size(); b += bs) {
        const auto e = std::min(healthy_set.size(), b + bs);
        const Tensor y = model.reconstruct(stack_images(healthy_set, b, e));
        const auto plane = c.height * c.width;
#pragma omp parallel for schedule(static)
        for (std::size_t i = b; i < e; ++i) {
            const auto off = static_cast<std::ptrdiff_t>((i - b) * static_cast<std::size_t>(plane));
            Tensor x_hat({c.height, c.width}, std::vector<float>(y.data().begin() + off, y.data().begin() + off + plane));
            ss[i] = ssim(healthy_set[i].image, x_hat);
        }
    }
    rep.ssim = mean_std(ss).mean;
    return rep;
}

namespace {
const char* kColumns[] = {"dataset", "auroc", "auprc", "dsc_mean", "dsc_std", "best_dsc", "best_dsc_std", "ssim", "params"};

std::vector<std::string> row(const MetricReport& r) {
    auto f = [](double v) {
        std::ostringstream o;
        o << std::fixed << std::setprecision(4) << v;
        return o.str();
    };
    return {r.dataset, f(r.auroc), f(r.auprc), f(r.dsc_mean), f(r.dsc_std), f(r.best_dsc), f(r.best_dsc_std),
            f(r.ssim), std::to_string(r.params)};
}
} // namespace

std::string report_csv(const std::vector<MetricReport>& reports) {
    std::ostringstream o;
    for (std::size_t i = 0; i < std::size(kColumns); ++i) o << (i ? "," : "") << kColumns[i];
    o << '\n';
    for (const auto& r : reports) {
        const auto cells = row(r);
        for (std::size_t i = 0; i < cells.size(); ++i) o << (i ? "," : "") << cells[i];
        o << '\n';
    }
    return o.str();
}

std::string report_text(const std::vector<MetricReport>& reports) {
    const std::vector<std::string> header = {"Dataset", "AUROC", "AUPRC", "DSC (mean +- std)", "[DSC] (mean +- std)",
                                             "SSIM", "Params"};
    std::vector<std::vector<std::string>> rows;
    for (const auto& r : reports) {
        const auto c = row(r);
        rows.push_back({c[0], c[1], c[2], c[3] + " +- " + c[4], c[5] + " +- " + c[6], c[7], c[8]});
    }
    std::vector<std::size_t> width(header.size());
    for (std::size_t i = 0; i < header.size(); ++i) {
        width[i] = header[i].size();
        for (const auto& r : rows) width[i] = std::max(width[i], r[i].size());
    }
    std::ostringstream o;
    o << "# DSC statistics are over samples (2-D slices); AUROC/AUPRC pool all in-brain pixels.\n";
    auto line = [&](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) o << "  ";
            if (i == 0)
                o << std::left << std::setw(static_cast<int>(width[i])) << cells[i];
            else
                o << std::right << std::setw(static_cast<int>(width[i])) << cells[i];
        }
        o << '\n';
    };
    line(header);
    std::size_t total = 0;
    for (auto w : width) total += w;
    o << std::string(total + 2 * (width.size() - 1), '-') << '\n';
    for (const auto& r : rows) line(r);
    return o.str();
}

} // namespace uad
