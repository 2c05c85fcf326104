// Command-line front end: dataset staging, single-model train/evaluate/audit,
// the two full studies, and report rendering.
//
// Exit codes: 0 success (audit: unbiased), 3 audit found bias, 2 usage or
// configuration error, 1 runtime failure.

#include <zlib.h>

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "insidebias/dataset.hpp"
#include "insidebias/detector.hpp"
#include "insidebias/errors.hpp"
#include "insidebias/harness.hpp"
#include "insidebias/model_zoo.hpp"
#include "insidebias/serialize.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace insidebias;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;
constexpr int kExitBiased = 3;

const char* const kMnistFiles[4] = {"train-images-idx3-ubyte", "train-labels-idx1-ubyte",
                                    "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"};

fs::path default_data_dir() {
    if (const char* env = std::getenv("INSIDEBIAS_DATA_DIR")) return fs::path(env);
    return fs::path("data") / "mnist";
}

json load_config_file(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("config file '" + path.string() + "' is not readable");
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config file '" + path.string() + "' is not valid JSON: " + e.what());
    }
    return j;
}

void log_line(const std::string& s) { std::cerr << s << "\n"; }

double parse_scale(const std::string& text) {
    if (text == "small") return 0.1;
    if (text == "full") return 1.0;
    try {
        const double v = std::stod(text);
        if (v > 0.0 && v <= 1.0) return v;
    } catch (...) {
    }
    throw ConfigError("--scale takes 'small', 'full', or a fraction in (0, 1]");
}

/// Copy one MNIST file, transparently gunzipping `.gz` sources.
void stage_file(const fs::path& src_dir, const fs::path& dst) {
    const std::string name = dst.filename().string();
    const fs::path plain = src_dir / name;
    const fs::path gz = src_dir / (name + ".gz");
    if (fs::exists(plain)) {
        fs::copy_file(plain, dst, fs::copy_options::overwrite_existing);
        return;
    }
    if (!fs::exists(gz)) throw DataError("'" + name + "[.gz]' not found in " + src_dir.string());
    gzFile in = gzopen(gz.string().c_str(), "rb");
    if (!in) throw IoError("cannot open " + gz.string());
    std::ofstream out(dst, std::ios::binary | std::ios::trunc);
    char buf[1 << 16];
    int n;
    while ((n = gzread(in, buf, sizeof(buf))) > 0) out.write(buf, n);
    const bool bad = n < 0 || !out;
    gzclose(in);
    if (bad) throw IoError("decompressing " + gz.string() + " failed");
}

data::GroupedDataset load_uniform_colored_test(const fs::path& mnist_dir, std::uint64_t seed) {
    auto gray = data::load_idx(mnist_dir / "t10k-images-idx3-ubyte",
                               mnist_dir / "t10k-labels-idx1-ubyte");
    data::ColorBiasConfig cfg;
    cfg.primary_fraction = 1.0 / 3.0;
    cfg.seed = seed;
    return data::colorize(gray, cfg);
}

struct CommonOpts {
    std::string config_path;
    std::optional<std::uint64_t> seed;

    json config() const {
        return config_path.empty() ? json::object() : load_config_file(config_path);
    }
};

void add_common(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--config", o.config_path, "JSON config file (flags override its values)");
    cmd->add_option("--seed", o.seed, "Base RNG seed override");
}

// ---------------------------------------------------------------------------

int cmd_fetch_mnist(const fs::path& out_dir, const std::string& from) {
    fs::create_directories(out_dir);
    if (from.empty()) {
        std::cerr << "fetch-mnist: no --from directory given and this build does not bundle\n"
                     "a download mirror; place the four IDX files (optionally .gz) in a local\n"
                     "directory and pass it with --from.\n";
        return kExitUsage;
    }
    for (const char* name : kMnistFiles) stage_file(from, out_dir / name);

    // Verify by parsing: counts and digests are printed for provenance.
    auto train = data::load_idx(out_dir / kMnistFiles[0], out_dir / kMnistFiles[1]);
    auto test = data::load_idx(out_dir / kMnistFiles[2], out_dir / kMnistFiles[3]);
    if (train.size() != 60000 || test.size() != 10000)
        throw DataError("staged files have unexpected sample counts");
    std::cout << "staged " << out_dir.string() << ": train " << train.size() << " (digest "
              << train.digest() << "), test " << test.size() << " (digest " << test.digest()
              << ")\n";
    return kExitOk;
}

int cmd_train(const CommonOpts& common, const std::string& arch, const fs::path& mnist_dir,
              const std::string& manifest, int digit, const std::string& color, double fraction,
              const fs::path& out, const std::string& scale) {
    json cfg = common.config();
    harness::TrainConfig tc = cfg.contains("train")
                                  ? harness::TrainConfig::from_json(cfg.at("train"))
                                  : harness::TrainConfig{};
    if (common.seed) tc.seed = *common.seed;
    if (!scale.empty()) tc.scale = parse_scale(scale);

    data::GroupedDataset train_set;
    if (!manifest.empty()) {
        train_set = data::load_manifest(manifest, "train");
    } else {
        auto gray = data::load_idx(mnist_dir / kMnistFiles[0], mnist_dir / kMnistFiles[1]);
        data::ColorBiasConfig cc;
        if (fraction > 0.0) {
            cc.primary_digit = digit;
            cc.primary_color = data::color_from_name(color);
            cc.primary_fraction = fraction;
        } else {
            cc.primary_fraction = 1.0 / 3.0;
        }
        cc.seed = derive_seed(tc.seed, 0xC0105);
        train_set = data::colorize(gray, cc);
    }

    Model model = zoo::build(arch, {train_set.height(), train_set.width(), 3},
                             train_set.num_classes(), tc.seed);
    std::vector<double> losses;
    harness::train_model(model, train_set, tc, log_line, &losses);
    fs::create_directories(out.parent_path().empty() ? "." : out.parent_path());
    serialize::save_weights(model, out);
    std::cout << "wrote " << out.string() << " (digest " << serialize::file_crc32_hex(out)
              << ")\n";
    return kExitOk;
}

data::GroupedDataset load_eval_set(const std::string& manifest, const fs::path& mnist_dir,
                                   std::uint64_t seed) {
    if (!manifest.empty()) return data::load_manifest(manifest, "test");
    return load_uniform_colored_test(mnist_dir, seed);
}

int cmd_evaluate(const CommonOpts& common, const fs::path& model_path, const std::string& manifest,
                 const fs::path& mnist_dir, const std::string& criterion, const fs::path& out) {
    const std::uint64_t seed = common.seed.value_or(1);
    Model model = serialize::load_weights(model_path);
    auto test = load_eval_set(manifest, mnist_dir, derive_seed(seed, 9001));
    auto res = harness::evaluate(model, test, criterion);
    const json j = res.to_json();
    if (out.empty())
        std::cout << harness::json_to_text(j);
    else
        harness::write_json_atomic(out, j);
    return kExitOk;
}

int cmd_audit(const CommonOpts& common, const fs::path& model_path, const std::string& manifest,
              const fs::path& mnist_dir, detect::AuditOptions opts, const fs::path& out,
              const fs::path& profile_csv) {
    const std::uint64_t seed = common.seed.value_or(1);
    opts.bootstrap_seed = derive_seed(seed, 7001);
    Model model = serialize::load_weights(model_path);
    auto test = load_eval_set(manifest, mnist_dir, derive_seed(seed, 9001));
    auto report = detect::audit(model, test, opts, serialize::file_crc32_hex(model_path));

    if (out.empty())
        std::cout << harness::json_to_text(report.to_json());
    else
        harness::write_json_atomic(out, report.to_json());
    if (!profile_csv.empty()) {
        std::ofstream os(profile_csv, std::ios::binary | std::ios::trunc);
        probe::write_profiles_csv(os, report.profiles);
    }
    std::cerr << "ratio " << report.verdict.ratio << " at " << report.verdict.layer << " (tau "
              << report.verdict.tau << ") -> " << (report.verdict.biased ? "biased" : "unbiased")
              << "\n";
    return detect::exit_code_for(report.verdict);
}

int cmd_study_colored(const CommonOpts& common, const fs::path& mnist_dir, const fs::path& out_dir,
                      const std::string& scale, const std::string& subset) {
    harness::ColoredMnistStudy cfg = harness::ColoredMnistStudy::from_json(common.config());
    if (cfg.mnist_dir.empty()) cfg.mnist_dir = mnist_dir;
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (cfg.out_dir.empty()) cfg.out_dir = fs::path("out") / "colored-mnist";
    if (common.seed) {
        cfg.seed = *common.seed;
        cfg.train.seed = *common.seed;
    }
    if (!scale.empty()) cfg.train.scale = parse_scale(scale);
    if (!subset.empty()) {
        // "d7:red,d3:green" — a handful of biased runs instead of all 30.
        cfg.biased_runs.clear();
        std::istringstream is(subset);
        std::string item;
        while (std::getline(is, item, ',')) {
            const auto colon = item.find(':');
            if (item.size() < 4 || item[0] != 'd' || colon == std::string::npos)
                throw ConfigError("--runs expects entries like d7:red");
            cfg.biased_runs.emplace_back(std::stoi(item.substr(1, colon - 1)),
                                         data::color_from_name(item.substr(colon + 1)));
        }
    }
    harness::run_colored_mnist_study(cfg, log_line);
    std::cout << "study manifest: " << (cfg.out_dir / "study_manifest.json").string() << "\n";
    return kExitOk;
}

int cmd_study_grouped(const CommonOpts& common, const fs::path& out_dir, const std::string& scale) {
    harness::GroupedStudy cfg = harness::GroupedStudy::from_json(common.config());
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (cfg.out_dir.empty()) cfg.out_dir = fs::path("out") / "grouped";
    if (common.seed) {
        cfg.seed = *common.seed;
        cfg.train.seed = *common.seed;
    }
    if (!scale.empty()) cfg.train.scale = parse_scale(scale);
    harness::run_grouped_study(cfg, log_line);
    std::cout << "study manifest: " << (cfg.out_dir / "study_manifest.json").string() << "\n";
    return kExitOk;
}

int cmd_gen_grouped(const fs::path& out_dir, std::size_t per_group_per_class, std::size_t size,
                    std::uint64_t seed) {
    data::SyntheticConfig sc;
    sc.per_group_per_class = per_group_per_class;
    sc.height = sc.width = size;
    sc.seed = seed;
    auto ds = data::generate_synthetic_grouped(sc, "train");
    data::export_grouped(ds, out_dir);
    std::cout << "wrote " << ds.size() << " images + manifest.csv to " << out_dir.string()
              << " (digest " << ds.digest() << ")\n";
    return kExitOk;
}

// Render report/study JSON as CSV tables (accuracy table and lambda/ratio
// table, mirroring the layouts of the original summaries).
int cmd_report(const fs::path& in, const std::string& format) {
    const json j = load_config_file(in);
    if (format == "json") {
        std::cout << harness::json_to_text(j);
        return kExitOk;
    }
    if (format != "csv") throw ConfigError("--format takes csv or json");

    char buf[64];
    auto pct = [&buf](const json& v) {
        std::snprintf(buf, sizeof(buf), "%.2f", v.get<double>() * 100.0);
        return std::string(buf);
    };
    auto num = [&buf](const json& v) {
        std::snprintf(buf, sizeof(buf), "%.4f", v.get<double>());
        return std::string(buf);
    };

    const std::string schema = j.value("schema", "");
    if (schema == "insidebias.study/1") {
        std::vector<std::string> groups;
        for (const auto& run : j.at("runs"))
            if (run.at("status") == "ok") {
                for (const auto& [g, a] : run.at("group_accuracy").items()) groups.push_back(g);
                break;
            }
        std::cout << "table,run";
        for (const auto& g : groups) std::cout << ",acc_" << g;
        std::cout << ",avg,std\n";
        for (const auto& run : j.at("runs")) {
            if (run.at("status") != "ok") continue;
            std::cout << "accuracy," << run.at("run_id").get<std::string>();
            for (const auto& g : groups) std::cout << "," << pct(run.at("group_accuracy").at(g));
            std::cout << "," << pct(run.at("avg")) << "," << pct(run.at("std")) << "\n";
        }
        std::cout << "table,run";
        for (const auto& g : groups) std::cout << ",lambda_" << g;
        std::cout << ",ratio,biased\n";
        for (const auto& run : j.at("runs")) {
            if (run.at("status") != "ok") continue;
            std::cout << "activation," << run.at("run_id").get<std::string>();
            for (const auto& g : groups) std::cout << "," << num(run.at("lambda").at(g));
            std::cout << "," << num(run.at("ratio")) << ","
                      << (run.at("biased").get<bool>() ? "yes" : "no") << "\n";
        }
        return kExitOk;
    }
    if (schema == "insidebias.bias_report/1") {
        std::cout << "group,n,accuracy,confidence,lambda,lambda_norm\n";
        const std::string layer = j.at("verdict").at("layer").get<std::string>();
        for (const auto& [g, e] : j.at("groups").items()) {
            std::cout << g << "," << e.at("n_samples") << "," << pct(e.at("accuracy")) << ","
                      << num(e.at("mean_confidence")) << "," << num(e.at("lambda").at(layer))
                      << "," << num(e.at("lambda_norm").at(layer)) << "\n";
        }
        std::cout << "ratio," << num(j.at("verdict").at("ratio")) << ",tau,"
                  << num(j.at("verdict").at("tau")) << ",biased,"
                  << (j.at("verdict").at("biased").get<bool>() ? "yes" : "no") << "\n";
        return kExitOk;
    }
    throw ConfigError("unrecognized schema in " + in.string());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Train small CNNs under controlled demographic bias and detect the bias from "
                 "per-layer activation statistics"};
    app.require_subcommand(1);

    // fetch-mnist
    auto* fetch = app.add_subcommand("fetch-mnist", "Stage the MNIST IDX files into a data dir");
    CommonOpts fetch_common;
    add_common(fetch, fetch_common);
    fs::path fetch_out = default_data_dir();
    std::string fetch_from;
    fetch->add_option("--out", fetch_out, "Destination directory");
    fetch->add_option("--from", fetch_from, "Directory holding the IDX files (optionally .gz)");

    // train
    auto* train = app.add_subcommand("train", "Train one model and write its weight file");
    CommonOpts train_common;
    add_common(train, train_common);
    std::string train_arch = zoo::kVggSmall;
    fs::path train_mnist = default_data_dir();
    std::string train_manifest, train_color = "red", train_scale;
    int train_digit = -1;
    double train_fraction = 0.0;
    fs::path train_out = "weights.bin";
    train->add_option("--arch", train_arch, "vgg_small | resnet_small");
    train->add_option("--mnist-dir", train_mnist, "MNIST data directory");
    train->add_option("--manifest", train_manifest, "Grouped-image manifest instead of MNIST");
    train->add_option("--digit", train_digit, "Primary digit of the color bias");
    train->add_option("--color", train_color, "Primary color (red|green|blue)");
    train->add_option("--fraction", train_fraction,
                      "Primary-color fraction (0 = uniform coloring)");
    train->add_option("--scale", train_scale, "small | full | fraction of the training set");
    train->add_option("--out", train_out, "Weight-file path");

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "Per-group accuracy of a trained model");
    CommonOpts ev_common;
    add_common(ev, ev_common);
    fs::path ev_model, ev_out;
    std::string ev_manifest, ev_criterion = "color";
    fs::path ev_mnist = default_data_dir();
    ev->add_option("--model", ev_model, "Weight file")->required();
    ev->add_option("--manifest", ev_manifest, "Test manifest (default: uniform colored MNIST)");
    ev->add_option("--mnist-dir", ev_mnist, "MNIST data directory");
    ev->add_option("--criterion", ev_criterion, "Grouping criterion");
    ev->add_option("--out", ev_out, "Write eval JSON here instead of stdout");

    // audit
    auto* audit = app.add_subcommand("audit", "Bias verdict from per-group activation ratios");
    CommonOpts audit_common;
    add_common(audit, audit_common);
    fs::path audit_model, audit_out, audit_csv;
    std::string audit_manifest, audit_layers = "last-conv", audit_stat = "max";
    fs::path audit_mnist = default_data_dir();
    detect::AuditOptions audit_opts;
    audit->add_option("--model", audit_model, "Weight file")->required();
    audit->add_option("--manifest", audit_manifest, "Test manifest (default: colored MNIST)");
    audit->add_option("--mnist-dir", audit_mnist, "MNIST data directory");
    audit->add_option("--criterion", audit_opts.criterion, "Grouping criterion");
    audit->add_option("--tau", audit_opts.tau, "Bias threshold on the activation ratio");
    audit->add_option("--layers", audit_layers, "last-conv | final-k | probe name");
    audit->add_option("--stat", audit_stat, "max | mean per-map statistic");
    audit->add_option("--bootstrap", audit_opts.bootstrap_resamples,
                      "Bootstrap resamples for the ratio spread (0 = off)");
    audit->add_option("--out", audit_out, "Write report JSON here instead of stdout");
    audit->add_option("--profile-csv", audit_csv, "Also write the per-layer profile CSV");

    // study
    auto* study = app.add_subcommand("study", "Run a full multi-model study");
    study->require_subcommand(1);
    auto* sc_colored = study->add_subcommand("colored-mnist", "30 biased + 1 unbiased models");
    CommonOpts scc_common;
    add_common(sc_colored, scc_common);
    fs::path scc_mnist = default_data_dir(), scc_out;
    std::string scc_scale, scc_runs;
    sc_colored->add_option("--mnist-dir", scc_mnist, "MNIST data directory");
    sc_colored->add_option("--out", scc_out, "Study output directory");
    sc_colored->add_option("--scale", scc_scale, "small | full | training-set fraction");
    sc_colored->add_option("--runs", scc_runs, "Biased subset, e.g. d7:red,d3:green");
    auto* sc_grouped = study->add_subcommand("grouped", "Biased(A/B/C) + unbiased grouped models");
    CommonOpts scg_common;
    add_common(sc_grouped, scg_common);
    fs::path scg_out;
    std::string scg_scale;
    sc_grouped->add_option("--out", scg_out, "Study output directory");
    sc_grouped->add_option("--scale", scg_scale, "small | full | training-set fraction");

    // report
    auto* report = app.add_subcommand("report", "Render report/study JSON as CSV tables");
    CommonOpts report_common;
    add_common(report, report_common);
    fs::path report_in;
    std::string report_format = "csv";
    report->add_option("--in", report_in, "bias_report.json or study_manifest.json")->required();
    report->add_option("--format", report_format, "csv | json");

    // gen-grouped
    auto* gen = app.add_subcommand("gen-grouped", "Write the synthetic grouped image set");
    CommonOpts gen_common;
    add_common(gen, gen_common);
    fs::path gen_out = "grouped-data";
    std::size_t gen_n = 300, gen_size = 32;
    gen->add_option("--out", gen_out, "Output directory");
    gen->add_option("--per-class", gen_n, "Samples per group per class");
    gen->add_option("--size", gen_size, "Image edge length");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*fetch) return cmd_fetch_mnist(fetch_out, fetch_from);
        if (*train)
            return cmd_train(train_common, train_arch, train_mnist, train_manifest, train_digit,
                             train_color,
                             train_digit >= 0 && train_fraction == 0.0 ? 0.9 : train_fraction,
                             train_out, train_scale);
        if (*ev)
            return cmd_evaluate(ev_common, ev_model, ev_manifest, ev_mnist, ev_criterion, ev_out);
        if (*audit) {
            audit_opts.selector = detect::LayerSelector::parse(audit_layers);
            audit_opts.stat = probe::stat_from_name(audit_stat);
            return cmd_audit(audit_common, audit_model, audit_manifest, audit_mnist, audit_opts,
                             audit_out, audit_csv);
        }
        if (*sc_colored) return cmd_study_colored(scc_common, scc_mnist, scc_out, scc_scale, scc_runs);
        if (*sc_grouped) return cmd_study_grouped(scg_common, scg_out, scg_scale);
        if (*report) return cmd_report(report_in, report_format);
        if (*gen) return cmd_gen_grouped(gen_out, gen_n, gen_size, gen_common.seed.value_or(0));
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}
