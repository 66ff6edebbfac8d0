#include "uad/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <sstream>

#include "uad/binary_io.hpp"
#include "uad/kernels.hpp"
#include "uad/rng.hpp"

namespace uad {

void validate(const TrainConfig& c) {
    if (c.epochs < 1) throw ConfigError("epochs must be at least 1");
    if (c.batch_size < 1) throw ConfigError("batch size must be at least 1");
    if (!(c.learning_rate > 0)) throw ConfigError("learning rate must be positive");
    if (!(c.beta1 >= 0 && c.beta1 < 1) || !(c.beta2 >= 0 && c.beta2 < 1)) throw ConfigError("ADAM betas must lie in [0, 1)");
    if (!(c.epsilon > 0)) throw ConfigError("ADAM epsilon must be positive");
    if (c.validate_every < 1) throw ConfigError("validation cadence must be at least 1");
}

TrainConfig default_train_config(Preset preset) {
    TrainConfig c;
    if (preset == Preset::desk) {
        c.epochs = 20;
        c.batch_size = 4;
        c.learning_rate = 2e-3;
    }
    return c;
}

Tensor stack_images(const std::vector<Sample>& samples, std::size_t begin, std::size_t end) {
    if (begin >= end || end > samples.size()) throw ValueError("empty or out-of-range batch");
    const auto& first = samples[begin].image;
    Shape shape{static_cast<std::int64_t>(end - begin)};
    shape.insert(shape.end(), first.shape().begin(), first.shape().end());
    Tensor out(shape);
    auto* dst = out.ptr();
    for (std::size_t i = begin; i < end; ++i) {
        const auto& img = samples[i].image;
        if (img.shape() != first.shape())
            throw ShapeError("sample " + std::to_string(i) + " has shape " + to_string(img.shape()) + ", expected " +
                             to_string(first.shape()));
        dst = std::copy(img.data().begin(), img.data().end(), dst);
    }
    return out;
}

static void check_dataset(const Model& model, const std::vector<Sample>& set, const char* name) {
    if (set.empty()) throw ValueError(std::string(name) + " set is empty");
    const auto& c = model.config();
    const Shape want{c.height, c.width, c.channels};
    for (std::size_t i = 0; i < set.size(); ++i)
        if (set[i].image.shape() != want)
            throw ShapeError(std::string(name) + " sample " + std::to_string(i) + " has shape " +
                             to_string(set[i].image.shape()) + ", the model expects " + to_string(want));
}

double mean_reconstruction_mae(const Model& model, const std::vector<Sample>& samples, std::int64_t batch_size) {
    double total = 0;
    std::int64_t count = 0;
    for (std::size_t b = 0; b < samples.size(); b += static_cast<std::size_t>(batch_size)) {
        const auto e = std::min(samples.size(), b + static_cast<std::size_t>(batch_size));
        const Tensor x = stack_images(samples, b, e);
        const Tensor y = model.reconstruct(x);
        for (std::int64_t i = 0; i < x.size(); ++i) total += std::abs(static_cast<double>(x[i]) - y[i]);
        count += x.size();
    }
    return total / static_cast<double>(count);
}

TrainResult train(Model& model, const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                  const TrainConfig& cfg, const EpochCallback& on_epoch) {
    validate(cfg);
    check_dataset(model, train_set, "training");
    check_dataset(model, val_set, "validation");

    auto& store = model.parameters();
    AdamState<float> state(store, AdamOptions{cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon});
    const Rng shuffler(mix64(cfg.seed));
    std::vector<std::size_t> order(train_set.size());
    const auto bs = static_cast<std::size_t>(cfg.batch_size);

    TrainResult result;
    bool have_best = false;
    for (std::int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng = shuffler.split(static_cast<std::uint64_t>(epoch));
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);

        double loss_sum = 0;
        std::vector<Sample> batch_samples;
        for (std::size_t b = 0, batch = 0; b < order.size(); b += bs, ++batch) {
            const auto e = std::min(order.size(), b + bs);
            batch_samples.clear();
            for (std::size_t i = b; i < e; ++i) batch_samples.push_back(train_set[order[i]]);
            const auto where = "epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch);
            Tape<float> tape;
            Gradients<float> grads;
            double loss_value = 0;
            try {
                auto x = tape.leaf(stack_images(batch_samples, 0, batch_samples.size()));
                auto loss = l1_loss(model.forward(tape, x), x);
                loss_value = loss.value()[0];
                if (!std::isfinite(loss_value)) throw NumericError("non-finite loss");
                grads = tape.backward(loss);
            } catch (const NumericError& err) {
                throw NumericError(where + ": " + err.what());
            }
            adam_step(store, grads, state);
            loss_sum += loss_value * static_cast<double>(e - b);
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_mae = loss_sum / static_cast<double>(order.size());
        if (epoch % cfg.validate_every == 0 || epoch == cfg.epochs) {
            const double v = mean_reconstruction_mae(model, val_set, cfg.batch_size);
            if (!std::isfinite(v)) throw NumericError("epoch " + std::to_string(epoch) + ": non-finite validation MAE");
            rec.val_mae = v;
            if (!have_best || v < result.best_val_mae) {
                have_best = true;
                result.best_val_mae = v;
                result.best_epoch = epoch;
                result.best_parameters = model.snapshot();
            }
        }
        result.history.push_back(rec);
        if (on_epoch) on_epoch(rec);
    }
    return result;
}

void write_loss_csv(const std::vector<EpochRecord>& history, const std::filesystem::path& path) {
    std::ostringstream o;
    o.precision(9);
    o << "epoch,train_mae,val_mae\n";
    for (const auto& r : history) {
        o << r.epoch << ',' << r.train_mae << ',';
        if (r.val_mae) o << *r.val_mae;
        o << '\n';
    }
    io::write_text(path, o.str());
}

namespace {

struct Plane {
    std::int64_t h, w;
};

Plane plane_of(const Tensor& t, const char* what) {
    if (t.rank() == 2) return {t.dim(0), t.dim(1)};
    if (t.rank() == 3 && t.dim(2) == 1) return {t.dim(0), t.dim(1)};
    throw ShapeError(std::string(what) + " expects [H, W] or [H, W, 1], got " + to_string(t.shape()));
}

void require_same_plane(Plane a, Plane b, const char* what) {
    if (a.h != b.h || a.w != b.w)
        throw ShapeError(std::string(what) + ": planes " + std::to_string(a.h) + "x" + std::to_string(a.w) + " and " +
                         std::to_string(b.h) + "x" + std::to_string(b.w) + " differ");
}

} // namespace

Tensor residual(const Tensor& x, const Tensor& x_hat, const Tensor& brain_mask) {
    const auto p = plane_of(x, "residual");
    require_same_plane(p, plane_of(x_hat, "residual"), "residual");
    require_same_plane(p, plane_of(brain_mask, "residual"), "residual");
    Tensor r({p.h, p.w});
    for (std::int64_t i = 0; i < r.size(); ++i) r[i] = brain_mask[i] * (x[i] - x_hat[i]);
    return r;
}

Tensor median_filter2d(const Tensor& img, std::int64_t k) {
    const auto p = plane_of(img, "median_filter2d");
    if (k < 1 || k % 2 == 0) throw ValueError("median filter size must be odd and positive, got " + std::to_string(k));
    Tensor out({p.h, p.w});
    kernels::median_filter(img.ptr(), p.h, p.w, static_cast<int>(k), out.ptr());
    return out;
}

Tensor squash(const Tensor& img, double p, const Tensor& brain_mask) {
    const auto pl = plane_of(img, "squash");
    require_same_plane(pl, plane_of(brain_mask, "squash"), "squash");
    if (!(p > 0 && p < 100)) throw ValueError("squash percentile must lie in (0, 100), got " + std::to_string(p));
    std::vector<float> values;
    for (std::int64_t i = 0; i < img.size(); ++i)
        if (brain_mask[i] != 0.f) values.push_back(img[i]);
    if (values.empty()) throw ValueError("squash: brain mask is empty");
    const auto n = values.size();
    const auto keep = std::clamp<std::size_t>(static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(n) - 1e-9)),
                                              1, n);
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(keep - 1), values.end(),
                     std::greater<float>());
    const float tau = values[keep - 1];
    Tensor out({pl.h, pl.w});
    for (std::int64_t i = 0; i < img.size(); ++i)
        out[i] = brain_mask[i] != 0.f && img[i] >= tau && img[i] > 0.f ? 1.f : 0.f;
    return out;
}

Tensor filtered_residual(const Tensor& r, std::int64_t k) {
    const auto p = plane_of(r, "filtered_residual");
    Tensor clamped({p.h, p.w});
    for (std::int64_t i = 0; i < clamped.size(); ++i) clamped[i] = std::max(r[i], 0.f);
    return median_filter2d(clamped, k);
}

Tensor postprocess(const Tensor& r, const Tensor& brain_mask, double p, std::int64_t k) {
    return squash(filtered_residual(r, k), p, brain_mask);
}

static SegmentationResult finish(const Tensor& x_hat_plane, const Sample& s, double p) {
    SegmentationResult out;
    const auto h = s.image.dim(0), w = s.image.dim(1);
    out.reconstruction = x_hat_plane.reshaped({h, w});
    out.residual = residual(s.image, out.reconstruction, s.brain_mask);
    out.filtered = filtered_residual(out.residual);
    out.mask = squash(out.filtered, p, s.brain_mask);
    return out;
}

SegmentationResult segment(const Model& model, const Sample& sample, double p) {
    std::vector<Sample> one{sample};
    check_dataset(model, one, "segmentation");
    const Tensor y = model.reconstruct(stack_images(one, 0, 1));
    return finish(y, sample, p);
}

std::vector<SegmentationResult> segment_all(const Model& model, const std::vector<Sample>& samples, double p,
                                            std::int64_t batch_size) {
    if (batch_size < 1) throw ValueError("batch size must be at least 1");
    if (samples.empty()) return {};
    check_dataset(model, samples, "segmentation");
    std::vector<SegmentationResult> out(samples.size());
    const auto& c = model.config();
    const auto plane = c.height * c.width;
    for (std::size_t b = 0; b < samples.size(); b += static_cast<std::size_t>(batch_size)) {
        const auto e = std::min(samples.size(), b + static_cast<std::size_t>(batch_size));
        const Tensor y = model.reconstruct(stack_images(samples, b, e));
        std::exception_ptr failure;
#pragma omp parallel for schedule(static)
        for (std::size_t i = b; i < e; ++i) {
            try {
                const auto off = static_cast<std::ptrdiff_t>((i - b) * static_cast<std::size_t>(plane));
                Tensor x_hat({c.height, c.width}, std::vector<float>(y.data().begin() + off, y.data().begin() + off + plane));
                out[i] = finish(x_hat, samples[i], p);
            } catch (...) {
#pragma omp critical(uad_segment_all)
                if (!failure) failure = std::current_exception();
            }
        }
        if (failure) std::rethrow_exception(failure);
    }
    return out;
}

} // namespace uad
