#include "uad/cli.hpp"

#include <charconv>
#include <filesystem>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "uad/binary_io.hpp"
#include "uad/metrics.hpp"
#include "uad/pipeline.hpp"
#include "uad/png.hpp"

namespace uad::cli {

namespace fs = std::filesystem;

namespace {

constexpr const char* kRunConfigFile = "run.cfg";
const char* const kSplitNames[] = {"train", "val", "test_healthy", "test_anomalous"};

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <class N>
N parse_number(const std::string& key, const std::string& text) {
    N v{};
    const auto* end = text.data() + text.size();
    const auto [p, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || p != end || text.empty())
        throw UsageError("invalid value '" + text + "' for " + key);
    return v;
}

std::string format_double(double v) {
    char buf[64];
    const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

bool parse_bool(const std::string& key, const std::string& text) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw UsageError("invalid value '" + text + "' for " + key + " (expected true or false)");
}

std::int64_t parse_count(const std::string& key, const std::string& text) {
    const auto n = parse_number<std::int64_t>(key, text);
    if (n < 1 || n > 1'000'000) throw UsageError(key + " must lie in [1, 1000000], got " + text);
    return n;
}

void require(const fs::path& p, const char* flag, const std::string& command) {
    if (p.empty()) throw UsageError(command + " requires --" + std::string(flag));
}

void require_exists(const fs::path& p, const char* what) {
    if (!fs::exists(p)) throw UsageError(std::string(what) + " '" + p.string() + "' does not exist");
}

void write_run_config(const RunConfig& cfg) {
    fs::create_directories(cfg.out);
    io::write_text(cfg.out / kRunConfigFile, serialize(cfg));
}

void cmd_gen_data(const RunConfig& cfg, std::ostream& out) {
    require(cfg.out, "out", cfg.command);
    if (fs::exists(cfg.out) && !fs::is_directory(cfg.out))
        throw UsageError("output path '" + cfg.out.string() + "' is not a directory");
    if (fs::exists(cfg.out) && !fs::is_empty(cfg.out)) {
        if (!cfg.force)
            throw UsageError("output directory '" + cfg.out.string() + "' is not empty; pass --force to overwrite");
        for (const char* name : kSplitNames) fs::remove_all(cfg.out / name);
        fs::remove(cfg.out / kRunConfigFile);
    }
    PhantomParams params;
    params.height = params.width = make_config(cfg.arch, cfg.preset).height;
    build_splits(cfg.out, cfg.counts, cfg.seed, params);
    write_run_config(cfg);
    out << "wrote " << cfg.counts.train << "/" << cfg.counts.val << "/" << cfg.counts.test_healthy << "/"
        << cfg.counts.test_anomalous << " samples to " << cfg.out.string() << "\n";
}

void cmd_train(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    require(cfg.data, "data", cfg.command);
    require(cfg.out, "out", cfg.command);
    require_exists(cfg.data, "dataset");
    const auto train_set = load_split(cfg.data / "train");
    const auto val_set = load_split(cfg.data / "val");

    auto model = Model::build(make_config(cfg.arch, cfg.preset), cfg.seed);
    TrainConfig tc = default_train_config(cfg.preset);
    tc.epochs = cfg.epochs;
    tc.batch_size = cfg.batch_size;
    tc.learning_rate = cfg.lr;
    tc.seed = cfg.seed;
    err << to_string(cfg.arch) << " (" << to_string(cfg.preset) << "): " << model.param_count() << " parameters, "
        << train_set.size() << " train / " << val_set.size() << " val samples\n";
    const auto result = train(model, train_set, val_set, tc, [&](const EpochRecord& r) {
        err << "epoch " << r.epoch << "/" << tc.epochs << "  train_mae " << std::fixed << std::setprecision(6) << r.train_mae;
        if (r.val_mae) err << "  val_mae " << *r.val_mae;
        err << "\n" << std::flush;
    });

    fs::create_directories(cfg.out);
    save_checkpoint(model, cfg.out / "final.uadc");
    model.restore(result.best_parameters);
    save_checkpoint(model, cfg.out / "best.uadc");
    write_loss_csv(result.history, cfg.out / "loss.csv");
    write_run_config(cfg);
    out << "best epoch " << result.best_epoch << " val_mae " << format_double(result.best_val_mae) << "\n";
}

void cmd_eval(const RunConfig& cfg, std::ostream& out) {
    require(cfg.checkpoint, "checkpoint", cfg.command);
    require(cfg.data, "data", cfg.command);
    require(cfg.out, "out", cfg.command);
    require_exists(cfg.checkpoint, "checkpoint");
    require_exists(cfg.data, "dataset");
    std::optional<ModelConfig> expected;
    if (cfg.explicit_keys.count("arch") || cfg.explicit_keys.count("preset"))
        expected = make_config(cfg.arch, cfg.preset);
    const auto model = load_checkpoint(cfg.checkpoint, expected);
    const auto anomalous = load_split(cfg.data / "test_anomalous");
    const auto healthy = load_split(cfg.data / "test_healthy");

    EvalOptions opts;
    opts.percentile = cfg.percentile;
    opts.sweep = cfg.sweep;
    const std::vector<MetricReport> reports{evaluate(model, anomalous, healthy, opts)};
    fs::create_directories(cfg.out);
    io::write_text(cfg.out / "report.csv", report_csv(reports));
    const auto text = report_text(reports);
    io::write_text(cfg.out / "report.txt", text);
    write_run_config(cfg);
    out << text;
}

void cmd_segment(const RunConfig& cfg, std::ostream& out) {
    require(cfg.checkpoint, "checkpoint", cfg.command);
    require(cfg.input, "input", cfg.command);
    require(cfg.out, "out", cfg.command);
    require_exists(cfg.checkpoint, "checkpoint");
    require_exists(cfg.input, "input sample");
    const auto model = load_checkpoint(cfg.checkpoint);
    const auto sample = load_sample(cfg.input);
    const auto r = segment(model, sample, cfg.percentile);

    fs::create_directories(cfg.out);
    save_array(r.reconstruction, Dtype::f32, cfg.out / "reconstruction.uads");
    save_array(r.residual, Dtype::f32, cfg.out / "residual.uads");
    save_array(r.mask, Dtype::u8, cfg.out / "mask.uads");

    double peak = 0;
    for (auto v : r.residual.data()) peak = std::max(peak, static_cast<double>(v));
    write_png(sample.image, cfg.out / "input.png");
    write_png(r.reconstruction, cfg.out / "reconstruction.png");
    // Positive residuals, stretched to the brightest one.
    write_png(r.residual, cfg.out / "residual.png", peak > 0 ? peak : 1.0);
    write_png(r.mask, cfg.out / "mask.png");
    write_png(sample.label, cfg.out / "label.png");
    write_run_config(cfg);

    std::int64_t area = 0, hit = 0;
    for (std::int64_t i = 0; i < r.mask.size(); ++i) {
        area += r.mask[i] > 0;
        hit += r.mask[i] > 0 && sample.label[i] > 0;
    }
    out << "mask pixels " << area << ", overlapping the label " << hit << "\n";
}

} // namespace

KeyValues parse_key_values(const std::string& text) {
    KeyValues kv;
    std::istringstream in(text);
    std::string line;
    for (int n = 1; std::getline(in, line); ++n) {
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw UsageError("config line " + std::to_string(n) + " has no '='");
        const auto key = trim(line.substr(0, eq));
        if (key.empty()) throw UsageError("config line " + std::to_string(n) + " has an empty key");
        kv[key] = trim(line.substr(eq + 1));
    }
    return kv;
}

RunConfig resolve(const std::string& command, const KeyValues& file, const KeyValues& flags) {
    KeyValues kv = file;
    for (const auto& [k, v] : flags) kv[k] = v;

    RunConfig c;
    c.command = command;
    for (const auto& [k, v] : kv) c.explicit_keys.insert(k);
    auto take = [&](const char* key) -> std::optional<std::string> {
        const auto it = kv.find(key);
        if (it == kv.end()) return std::nullopt;
        auto v = it->second;
        kv.erase(it);
        return v;
    };

    if (auto v = take("command"); v && *v != command)
        throw UsageError("config is for command '" + *v + "', not '" + command + "'");
    try {
        if (auto v = take("arch")) c.arch = parse_architecture(*v);
        if (auto v = take("preset")) c.preset = parse_preset(*v);
    } catch (const ConfigError& e) {
        throw UsageError(e.what());
    }
    const auto defaults = default_train_config(c.preset);
    c.epochs = defaults.epochs;
    c.batch_size = defaults.batch_size;
    c.lr = defaults.learning_rate;

    if (auto v = take("data")) c.data = *v;
    if (auto v = take("out")) c.out = *v;
    if (auto v = take("checkpoint")) c.checkpoint = *v;
    if (auto v = take("input")) c.input = *v;
    if (auto v = take("seed")) c.seed = parse_number<std::uint64_t>("seed", *v);
    if (auto v = take("epochs")) c.epochs = parse_count("epochs", *v);
    if (auto v = take("batch_size")) c.batch_size = parse_count("batch_size", *v);
    if (auto v = take("lr")) {
        c.lr = parse_number<double>("lr", *v);
        if (!(c.lr > 0)) throw UsageError("lr must be positive, got " + *v);
    }
    if (auto v = take("percentile")) {
        c.percentile = parse_number<double>("percentile", *v);
        if (!(c.percentile > 0 && c.percentile < 100)) throw UsageError("percentile must lie in (0, 100), got " + *v);
    }
    if (auto v = take("sweep")) {
        c.sweep = parse_number<std::int64_t>("sweep", *v);
        if (c.sweep < 2) throw UsageError("sweep needs at least 2 thresholds, got " + *v);
    }
    if (auto v = take("n_train")) c.counts.train = parse_count("n_train", *v);
    if (auto v = take("n_val")) c.counts.val = parse_count("n_val", *v);
    if (auto v = take("n_test_healthy")) c.counts.test_healthy = parse_count("n_test_healthy", *v);
    if (auto v = take("n_test_anomalous")) c.counts.test_anomalous = parse_count("n_test_anomalous", *v);
    if (auto v = take("force")) c.force = parse_bool("force", *v);
    if (!kv.empty()) throw UsageError("unknown config key '" + kv.begin()->first + "'");
    return c;
}

std::string serialize(const RunConfig& c) {
    std::ostringstream o;
    o << "command=" << c.command << '\n';
    if (c.command == "gen-data") {
        o << "preset=" << to_string(c.preset) << '\n'
          << "seed=" << c.seed << '\n'
          << "n_train=" << c.counts.train << '\n'
          << "n_val=" << c.counts.val << '\n'
          << "n_test_healthy=" << c.counts.test_healthy << '\n'
          << "n_test_anomalous=" << c.counts.test_anomalous << '\n';
    } else if (c.command == "train") {
        o << "data=" << c.data.string() << '\n'
          << "arch=" << to_string(c.arch) << '\n'
          << "preset=" << to_string(c.preset) << '\n'
          << "seed=" << c.seed << '\n'
          << "epochs=" << c.epochs << '\n'
          << "batch_size=" << c.batch_size << '\n'
          << "lr=" << format_double(c.lr) << '\n';
    } else if (c.command == "eval") {
        o << "checkpoint=" << c.checkpoint.string() << '\n' << "data=" << c.data.string() << '\n';
        if (c.explicit_keys.count("arch") || c.explicit_keys.count("preset"))
            o << "arch=" << to_string(c.arch) << '\n' << "preset=" << to_string(c.preset) << '\n';
        o << "percentile=" << format_double(c.percentile) << '\n' << "sweep=" << c.sweep << '\n';
    } else if (c.command == "segment") {
        o << "checkpoint=" << c.checkpoint.string() << '\n'
          << "input=" << c.input.string() << '\n'
          << "percentile=" << format_double(c.percentile) << '\n';
    }
    return o.str();
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Transformer autoencoders for unsupervised anomaly segmentation", "uad"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "uad 1.0");

    // Flag values are collected as strings and merged with the config file.
    std::map<std::string, std::string> values;
    std::string config_path;
    bool force = false;
    std::vector<std::tuple<CLI::Option*, CLI::App*, std::string>> bound;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "key=value config file; flags take precedence");
        for (const auto& [flag, key, help] : std::vector<std::tuple<std::string, std::string, std::string>>{
                 {"--seed", "seed", "random seed"},
                 {"--out", "out", "output directory"},
                 {"--preset", "preset", "full or desk"},
                 {"--arch", "arch", "b_tae, dc_tae, sc_tae, h_tae, h_tae_s, ae_dense or ae_spatial"},
                 {"--percentile", "percentile", "percent of in-mask pixels kept by the squash step (default 1.0)"},
                 {"--sweep", "sweep", "number of thresholds for the best-dice sweep (default 100)"}})
            bound.emplace_back(sub->add_option(flag, values[key + "@" + sub->get_name()], help), sub, key);
    };
    auto option = [&](CLI::App* sub, const std::string& flag, const std::string& key, const std::string& help) {
        bound.emplace_back(sub->add_option(flag, values[key + "@" + sub->get_name()], help), sub, key);
    };

    auto* gen = app.add_subcommand("gen-data", "generate the phantom splits");
    common(gen);
    option(gen, "--n-train", "n_train", "training samples (default 512)");
    option(gen, "--n-val", "n_val", "validation samples (default 64)");
    option(gen, "--n-test-healthy", "n_test_healthy", "healthy test samples (default 64)");
    option(gen, "--n-test-anomalous", "n_test_anomalous", "anomalous test samples (default 128)");
    gen->add_flag("--force", force, "overwrite a non-empty output directory");

    auto* tr = app.add_subcommand("train", "train a model on the healthy splits");
    common(tr);
    option(tr, "--data", "data", "dataset directory from gen-data");
    option(tr, "--epochs", "epochs", "training epochs");
    option(tr, "--batch-size", "batch_size", "mini-batch size");
    option(tr, "--lr", "lr", "ADAM learning rate");

    auto* ev = app.add_subcommand("eval", "score a checkpoint on the test splits");
    common(ev);
    option(ev, "--data", "data", "dataset directory from gen-data");
    option(ev, "--checkpoint", "checkpoint", "checkpoint file");

    auto* sg = app.add_subcommand("segment", "segment one sample directory");
    common(sg);
    option(sg, "--checkpoint", "checkpoint", "checkpoint file");
    option(sg, "--input", "input", "sample directory holding image.uads, mask.uads and label.uads");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? ok : usage_error;
    }

    CLI::App* sub = app.get_subcommands().front();
    try {
        KeyValues flags;
        for (const auto& [opt, owner, key] : bound)
            if (opt->count() > 0 && owner == sub) flags[key] = values[key + "@" + sub->get_name()];
        if (force) flags["force"] = "true";
        KeyValues file;
        if (!config_path.empty()) {
            if (!fs::exists(config_path)) throw UsageError("config file '" + config_path + "' does not exist");
            const auto bytes = io::read_file(config_path);
            file = parse_key_values(std::string(bytes.begin(), bytes.end()));
        }
        const auto cfg = resolve(sub->get_name(), file, flags);
        if (cfg.command == "gen-data") cmd_gen_data(cfg, out);
        else if (cfg.command == "train") cmd_train(cfg, out, err);
        else if (cfg.command == "eval") cmd_eval(cfg, out);
        else cmd_segment(cfg, out);
        return ok;
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\n" << "run 'uad " << sub->get_name() << " --help' for usage\n";
        return usage_error;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return runtime_failure;
    }
}

} // namespace uad::cli
