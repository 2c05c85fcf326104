// Acceptance gate: one PASS/FAIL line per criterion, exit 0 only if all pass.
//
// Heavy by design — criteria 1-4 train full-size digit models (3 seeds x
// 4 protocols, cached as weight files in --work so reruns resume). Use
// --scale/--epochs to smoke-test the plumbing at reduced size (the reduced
// run is NOT the acceptance evidence).

#include <unistd.h>

#include <CLI11.hpp>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <vector>

#include "insidebias/dataset.hpp"
#include "insidebias/detector.hpp"
#include "insidebias/errors.hpp"
#include "insidebias/harness.hpp"
#include "insidebias/model_zoo.hpp"
#include "insidebias/probe.hpp"
#include "insidebias/rng.hpp"
#include "insidebias/serialize.hpp"
#include "../oracles.hpp"

namespace fs = std::filesystem;
using namespace insidebias;

namespace {

struct Options {
    fs::path mnist_dir;
    fs::path work = "acceptance-work";
    std::vector<std::uint64_t> seeds = {1, 2, 3};
    double scale = 1.0;
    std::size_t epochs = 5;
    std::set<int> only;  // empty = all criteria

    bool wants(int c) const { return only.empty() || only.count(c) > 0; }
};

struct Gate {
    int failures = 0;

    void report(int criterion, bool pass, const std::string& detail) {
        std::printf("CRITERION %d: %s — %s\n", criterion, pass ? "PASS" : "FAIL",
                    detail.c_str());
        std::fflush(stdout);
        if (!pass) ++failures;
    }
};

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof(buf), f, ap);
    va_end(ap);
    return buf;
}

void log_line(const std::string& s) { std::cerr << "  " << s << "\n"; }

// The three representative biased configurations of the CI study.
const std::vector<std::pair<int, data::Color>> kBiasedConfigs = {
    {0, data::Color::red}, {4, data::Color::green}, {9, data::Color::blue}};

std::string run_name(std::uint64_t seed, int digit, data::Color color) {
    return "mnist-s" + std::to_string(seed) + "-biased-d" + std::to_string(digit) + "-" +
           data::color_name(color);
}

/// One trained model with everything criteria 1-4 read from it.
struct MnistRun {
    std::string name;
    bool biased = false;
    int digit = -1;
    data::Color color = data::Color::red;
    double accuracy = 0.0;
    double ratio = 0.0;
    std::map<std::string, double> lambda_last;  // per color at last conv probe
    fs::path weights;
};

Model train_or_load(const fs::path& weights, const std::string& arch,
                    const data::GroupedDataset& train_set, const harness::TrainConfig& tc,
                    std::uint64_t model_seed) {
    if (fs::exists(weights)) {
        try {
            Model m = serialize::load_weights(weights, arch);
            std::cerr << "  [resume] " << weights.filename().string() << "\n";
            return m;
        } catch (const LoadError&) {
        }
    }
    Model m = zoo::build(arch, {train_set.height(), train_set.width(), 3},
                         train_set.num_classes(), model_seed);
    harness::train_model(m, train_set, tc, log_line);
    serialize::save_weights(m, weights);
    return m;
}

// ---------------------------------------------------------------------------
// Criteria 1-4 share the trained seed-sweep models.

struct SweepResult {
    // seed -> runs (index 0 = unbiased, then the biased configs)
    std::map<std::uint64_t, std::vector<MnistRun>> by_seed;
    data::GroupedDataset test_set;
};

SweepResult run_mnist_sweep(const Options& opt) {
    SweepResult out;
    const auto train_gray = data::load_idx(opt.mnist_dir / "train-images-idx3-ubyte",
                                           opt.mnist_dir / "train-labels-idx1-ubyte");
    const auto test_gray = data::load_idx(opt.mnist_dir / "t10k-images-idx3-ubyte",
                                          opt.mnist_dir / "t10k-labels-idx1-ubyte");
    data::ColorBiasConfig test_cc;
    test_cc.primary_fraction = 1.0 / 3.0;
    test_cc.seed = 777;
    out.test_set = data::colorize(test_gray, test_cc);

    fs::create_directories(opt.work);
    for (std::uint64_t seed : opt.seeds) {
        std::vector<MnistRun> runs;
        auto execute = [&](const std::string& name, const data::ColorBiasConfig& cc, bool biased,
                           int digit, data::Color color) {
            std::cerr << "[sweep] " << name << "\n";
            auto train_set = data::colorize(train_gray, cc);
            harness::TrainConfig tc;
            tc.epochs = opt.epochs;
            tc.scale = opt.scale;
            tc.seed = seed;
            MnistRun r;
            r.name = name;
            r.biased = biased;
            r.digit = digit;
            r.color = color;
            r.weights = opt.work / (name + ".bin");
            Model model = train_or_load(r.weights, zoo::kVggSmall, train_set, tc, seed);

            auto ev = harness::evaluate(model, out.test_set, "color", 64);
            r.accuracy = ev.overall_accuracy;

            detect::AuditOptions ao;
            ao.criterion = "color";
            ao.bootstrap_resamples = 0;
            ao.batch_size = 64;
            auto report = detect::audit(model, out.test_set, ao);
            r.ratio = report.verdict.ratio;
            for (const auto& p : report.profiles)
                r.lambda_last[p.group] = p.lambda.at(report.verdict.layer);
            runs.push_back(std::move(r));
        };

        data::ColorBiasConfig un;
        un.primary_fraction = 1.0 / 3.0;
        un.seed = derive_seed(seed, 50);
        execute("mnist-s" + std::to_string(seed) + "-unbiased", un, false, -1, data::Color::red);
        for (const auto& [digit, color] : kBiasedConfigs) {
            data::ColorBiasConfig cc;
            cc.primary_digit = digit;
            cc.primary_color = color;
            cc.primary_fraction = 0.9;
            cc.seed = derive_seed(seed, 60 + static_cast<std::uint64_t>(digit));
            execute(run_name(seed, digit, color), cc, true, digit, color);
        }
        out.by_seed[seed] = std::move(runs);
    }
    return out;
}

void criterion1(Gate& gate, const SweepResult& sweep) {
    bool pass = true;
    std::ostringstream detail;
    for (const auto& [seed, runs] : sweep.by_seed) {
        const double un = runs[0].accuracy;
        if (un < 0.95) pass = false;
        detail << "s" << seed << ": unbiased " << fmt("%.2f%%", un * 100.0);
        for (std::size_t i = 1; i < runs.size(); ++i) {
            const double b = runs[i].accuracy;
            if (b > 0.75 || un - b < 0.20) pass = false;
            detail << " " << fmt("%.2f%%", b * 100.0);
        }
        detail << "; ";
    }
    gate.report(1, pass, "accuracy separation (unbiased >= 95%, biased <= 75%, gap >= 20): " +
                             detail.str());
}

void criterion2(Gate& gate, const SweepResult& sweep) {
    bool pass = true;
    std::ostringstream detail;
    for (const auto& [seed, runs] : sweep.by_seed) {
        for (const auto& r : runs) {
            if (!r.biased) continue;
            const double primary = r.lambda_last.at(data::color_name(r.color));
            for (const auto& [g, lam] : r.lambda_last) {
                if (g != data::color_name(r.color) && primary <= lam) {
                    pass = false;
                    detail << r.name << ": lambda_" << data::color_name(r.color) << "="
                           << fmt("%.3f", primary) << " <= lambda_" << g << "="
                           << fmt("%.3f", lam) << "; ";
                }
            }
        }
    }
    if (pass) detail << "primary color dominates at the last conv layer in every biased model";
    gate.report(2, pass, detail.str());
}

void criterion3(Gate& gate, const SweepResult& sweep) {
    bool pass = true;
    std::ostringstream detail;
    for (const auto& [seed, runs] : sweep.by_seed) {
        const double un = runs[0].ratio;
        detail << "s" << seed << fmt(": unbiased %.3f vs", un);
        for (std::size_t i = 1; i < runs.size(); ++i) {
            detail << fmt(" %.3f", runs[i].ratio);
            if (un <= runs[i].ratio) pass = false;
        }
        detail << "; ";
    }
    gate.report(3, pass, "unbiased ratio dominance: " + detail.str());
}

void criterion4(Gate& gate, const Options& opt, const SweepResult& sweep) {
    // 10 disjoint 15-image draws (5 per color); ratio ordering must hold for
    // the majority of draws, for every seed and biased model.
    auto parts = data::partition(sweep.test_set, "color");
    std::vector<std::vector<std::size_t>> draws(10);
    {
        Rng rng(derive_seed(4242, 15));
        for (auto& [color, idx] : parts) {
            shuffle_indices(idx, rng);
            for (std::size_t d = 0; d < 10; ++d)
                for (std::size_t j = 0; j < 5; ++j) draws[d].push_back(idx[d * 5 + j]);
        }
    }

    bool pass = true;
    std::ostringstream detail;
    for (const auto& [seed, runs] : sweep.by_seed) {
        // ratio of each run on each draw
        std::vector<std::vector<double>> ratios(runs.size());
        for (std::size_t m = 0; m < runs.size(); ++m) {
            Model model = serialize::load_weights(runs[m].weights);
            for (const auto& draw : draws) {
                std::map<std::string, std::vector<std::size_t>> by_color;
                for (auto i : draw) by_color[sweep.test_set.group_of(i, "color")].push_back(i);
                std::vector<probe::ActivationProfile> ps;
                for (const auto& [g, idx] : by_color)
                    ps.push_back(
                        probe::group_profile(model, sweep.test_set, idx, g, {}).profile);
                auto v = detect::verdict(ps, {}, 0.9, "color");
                ratios[m].push_back(v.ratio);
            }
            model.clear_caches();
        }
        for (std::size_t m = 1; m < runs.size(); ++m) {
            int wins = 0;
            for (std::size_t d = 0; d < draws.size(); ++d)
                wins += ratios[0][d] > ratios[m][d];
            detail << "s" << seed << " vs " << runs[m].name << ": " << wins << "/10; ";
            if (wins < 6) pass = false;
        }
    }
    (void)opt;
    gate.report(4, pass, "15-image detection majority: " + detail.str());
}

// ---------------------------------------------------------------------------
// Criterion 5: oracle fidelity.

void criterion5(Gate& gate) {
    bool pass = true;
    std::ostringstream detail;

    // conv2d vs nested loops, 200 random small instances.
    {
        Rng rng(20240817);
        float worst = 0.f;
        for (int it = 0; it < 200; ++it) {
            const std::size_t m_in = 1 + uniform_index(rng, 4);
            const std::size_t m_out = 1 + uniform_index(rng, 4);
            const std::size_t k = 1 + 2 * uniform_index(rng, 3);
            const std::size_t stride = 1 + uniform_index(rng, 2);
            const std::size_t pad = uniform_index(rng, 2);
            const std::size_t h = k + uniform_index(rng, 9 - k);
            const std::size_t w = k + uniform_index(rng, 9 - k);
            ConvFilterBank bank{oracle::random_tensor({m_out, m_in, k, k}, rng),
                                oracle::random_tensor({m_out}, rng), stride, pad};
            Tensor x = oracle::random_tensor({m_in, h, w}, rng);
            Tensor got = conv2d(x, bank);
            Tensor want = oracle::conv2d(x, bank.filters, bank.bias, stride, pad);
            for (std::size_t i = 0; i < got.size(); ++i)
                worst = std::max(worst, std::abs(got[i] - want[i]));
        }
        detail << fmt("conv max err %.2e; ", worst);
        if (worst > 1e-6f) pass = false;
    }
    // Spatial mean / layer activation vs naive loops.
    {
        Rng rng(7);
        double worst = 0.0;
        for (int it = 0; it < 50; ++it) {
            Tensor maps = oracle::random_tensor({8, 7, 7}, rng, 0.f, 1.f);
            worst = std::max(worst, std::abs(probe::layer_activation(maps, probe::Stat::max) -
                                             oracle::layer_activation_max(maps)));
            Tensor one = oracle::random_tensor({1, 7, 7}, rng, 0.f, 1.f);
            worst = std::max(worst, std::abs(probe::mean_map_activation(one.reshaped({7, 7})) -
                                             oracle::map_mean(one, 0)));
        }
        detail << fmt("stat max err %.2e; ", worst);
        if (worst > 1e-7) pass = false;
    }
    // Finite differences on both stock architectures.
    {
        Rng rng(13);
        Model vgg = zoo::build_vgg({28, 28, 3}, 10, 5);
        Tensor x = oracle::random_tensor({3, 28, 28}, rng, 0.f, 1.f);
        const double e_vgg = finite_diff_check(vgg, x, 3, 1e-6, 80, 31);
        Model res = zoo::build_resnet({28, 28, 3}, 10, 5);
        const double e_res = finite_diff_check(res, x, 3, 1e-6, 80, 31);
        detail << fmt("fd vgg %.2e resnet %.2e; ", e_vgg, e_res);
        if (e_vgg > 1e-3 || e_res > 1e-3) pass = false;
    }
    // Reference activation-ratio rows.
    {
        const double r1 = detect::activation_ratio({{"A", 2.24}, {"B", 3.25}, {"C", 2.61}});
        const double r2 = detect::activation_ratio({{"A", 2.49}, {"B", 2.67}, {"C", 2.51}});
        const double r3 = detect::activation_ratio({{"A", 2.33}, {"B", 2.32}, {"C", 2.34}});
        detail << fmt("ratios %.3f/%.3f/%.3f", r1, r2, r3);
        if (std::abs(r1 - 0.69) > 0.005 || std::abs(r2 - 0.93) > 0.005 ||
            std::abs(r3 - 0.99) > 0.005)
            pass = false;
    }
    gate.report(5, pass, "oracle fidelity: " + detail.str());
}

// ---------------------------------------------------------------------------
// Criterion 6: grouped-study fairness spread on the synthetic set.

void criterion6(Gate& gate, const Options& opt) {
    bool pass = true;
    std::ostringstream detail;
    for (std::uint64_t seed : opt.seeds) {
        harness::GroupedStudy cfg;
        cfg.out_dir = opt.work / ("grouped-s" + std::to_string(seed));
        cfg.arch = zoo::kVggSmall;
        cfg.image_size = 32;
        cfg.synth_per_group_per_class = 450;
        cfg.synth_test_per_group_per_class = 150;
        cfg.train_total = 900;
        cfg.train.epochs = 10;
        cfg.train.batch_size = 32;
        cfg.train.seed = seed;
        cfg.audit.bootstrap_resamples = 0;
        cfg.seed = seed;
        std::cerr << "[grouped] seed " << seed << "\n";
        auto manifest = harness::run_grouped_study(cfg, log_line);

        double unbiased_std = -1.0;
        std::vector<std::pair<std::string, double>> biased_std;
        for (const auto& run : manifest.at("runs")) {
            if (run.at("status") != "ok") {
                pass = false;
                detail << run.at("run_id").get<std::string>() << " diverged; ";
                continue;
            }
            const std::string id = run.at("run_id").get<std::string>();
            const double sd = run.at("std").get<double>();
            if (id == "unbiased") {
                unbiased_std = sd;
            } else {
                biased_std.emplace_back(id, sd);
                // Diagonal: Biased(k)'s best test group is k itself.
                const std::string favored = id.substr(std::string("biased-").size());
                std::string best;
                double best_acc = -1.0;
                for (const auto& [g, a] : run.at("group_accuracy").items())
                    if (a.get<double>() > best_acc) {
                        best_acc = a.get<double>();
                        best = g;
                    }
                if (best != favored) {
                    pass = false;
                    detail << id << " best group " << best << "; ";
                }
            }
        }
        detail << "s" << seed << fmt(" std: unbiased %.4f vs", unbiased_std);
        for (const auto& [id, sd] : biased_std) {
            detail << fmt(" %.4f", sd);
            if (unbiased_std < 0.0 || unbiased_std >= sd) pass = false;
        }
        detail << "; ";
    }
    gate.report(6, pass, "fairness-spread ordering: " + detail.str());
}

// ---------------------------------------------------------------------------
// Criterion 7: byte-identical determinism of a rerun study.

std::string file_bytes(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

void criterion7(Gate& gate, const Options& opt) {
    harness::ColoredMnistStudy cfg;
    cfg.mnist_dir = opt.mnist_dir;
    cfg.arch = zoo::kVggSmall;
    cfg.biased_runs = {{7, data::Color::red}};
    cfg.train.epochs = 1;
    cfg.train.scale = 0.02;
    cfg.train.seed = 5;
    cfg.audit.bootstrap_resamples = 20;
    cfg.seed = 5;

    const fs::path a = opt.work / "determinism-a", b = opt.work / "determinism-b";
    fs::remove_all(a);
    fs::remove_all(b);
    cfg.out_dir = a;
    std::cerr << "[determinism] first run\n";
    harness::run_colored_mnist_study(cfg, log_line);
    cfg.out_dir = b;
    std::cerr << "[determinism] second run\n";
    harness::run_colored_mnist_study(cfg, log_line);

    bool pass = true;
    std::ostringstream detail;
    std::size_t compared = 0;
    for (const auto& entry : fs::recursive_directory_iterator(a)) {
        if (!entry.is_regular_file()) continue;
        const fs::path rel = fs::relative(entry.path(), a);
        if (rel == "study_manifest.json") continue;  // config echo holds out_dir
        if (file_bytes(entry.path()) != file_bytes(b / rel)) {
            pass = false;
            detail << rel.string() << " differs; ";
        }
        ++compared;
    }
    if (pass) detail << compared << " artifacts byte-identical across reruns";
    gate.report(7, pass, "determinism: " + detail.str());
}

}  // namespace

int main(int argc, char** argv) {
    Options opt;
    if (const char* env = std::getenv("INSIDEBIAS_MNIST_DIR")) opt.mnist_dir = env;

    CLI::App app{"acceptance gate"};
    app.add_option("--mnist-dir", opt.mnist_dir, "Directory with the four MNIST IDX files");
    app.add_option("--work", opt.work, "Cache/output directory (reruns resume from it)");
    app.add_option("--seeds", opt.seeds, "Seed sweep");
    app.add_option("--scale", opt.scale, "Training-set fraction (1.0 = the acceptance config)");
    app.add_option("--epochs", opt.epochs, "Training epochs (5 = the acceptance config)");
    app.add_option("--only", opt.only, "Run a subset of criteria (1-7)");
    CLI11_PARSE(app, argc, argv);

    Gate gate;
    try {
        const bool needs_sweep =
            opt.wants(1) || opt.wants(2) || opt.wants(3) || opt.wants(4);
        if (needs_sweep || opt.wants(7)) {
            if (opt.mnist_dir.empty() ||
                !fs::exists(opt.mnist_dir / "train-images-idx3-ubyte")) {
                std::cerr << "MNIST not found (set --mnist-dir or INSIDEBIAS_MNIST_DIR)\n";
                return 2;
            }
        }
        if (needs_sweep) {
            auto sweep = run_mnist_sweep(opt);
            if (opt.wants(1)) criterion1(gate, sweep);
            if (opt.wants(2)) criterion2(gate, sweep);
            if (opt.wants(3)) criterion3(gate, sweep);
            if (opt.wants(4)) criterion4(gate, opt, sweep);
        }
        if (opt.wants(5)) criterion5(gate);
        if (opt.wants(6)) criterion6(gate, opt);
        if (opt.wants(7)) criterion7(gate, opt);
    } catch (const std::exception& e) {
        std::cerr << "acceptance run aborted: " << e.what() << "\n";
        return 1;
    }
    return gate.failures == 0 ? 0 : 1;
}
