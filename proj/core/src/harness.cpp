#include "insidebias/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "insidebias/errors.hpp"
#include "insidebias/model_zoo.hpp"
#include "insidebias/rng.hpp"
#include "insidebias/serialize.hpp"

namespace insidebias::harness {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Config serialization

json TrainConfig::to_json() const {
    return json{{"epochs", epochs},
                {"batch_size", batch_size},
                {"lr", lr},
                {"momentum", momentum},
                {"lr_decay_epoch", lr_decay_epoch},
                {"lr_decay", lr_decay},
                {"scale", scale},
                {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const json& j) {
    TrainConfig c;
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.momentum = j.value("momentum", c.momentum);
    c.lr_decay_epoch = j.value("lr_decay_epoch", c.lr_decay_epoch);
    c.lr_decay = j.value("lr_decay", c.lr_decay);
    c.scale = j.value("scale", c.scale);
    c.seed = j.value("seed", c.seed);
    if (c.epochs == 0 || c.batch_size == 0) throw ConfigError("epochs and batch_size must be positive");
    if (c.scale <= 0.0 || c.scale > 1.0) throw ConfigError("scale must be in (0, 1]");
    return c;
}

namespace {

json audit_to_json(const detect::AuditOptions& a) {
    return json{{"criterion", a.criterion},
                {"tau", a.tau},
                {"layers", a.selector.to_string()},
                {"stat", probe::stat_name(a.stat)},
                {"scope", a.scope == probe::NormalizerScope::per_group ? "per-group" : "pooled"},
                {"bootstrap_resamples", a.bootstrap_resamples},
                {"batch_size", a.batch_size}};
}

detect::AuditOptions audit_from_json(const json& j, detect::AuditOptions a) {
    a.tau = j.value("tau", a.tau);
    if (j.contains("layers")) a.selector = detect::LayerSelector::parse(j.at("layers").get<std::string>());
    if (j.contains("stat")) a.stat = probe::stat_from_name(j.at("stat").get<std::string>());
    if (j.contains("scope")) {
        const auto s = j.at("scope").get<std::string>();
        if (s == "per-group")
            a.scope = probe::NormalizerScope::per_group;
        else if (s == "pooled")
            a.scope = probe::NormalizerScope::per_model_pooled;
        else
            throw ConfigError("unknown normalizer scope '" + s + "'");
    }
    a.bootstrap_resamples = j.value("bootstrap_resamples", a.bootstrap_resamples);
    a.batch_size = j.value("batch_size", a.batch_size);
    if (a.tau < 0.0 || a.tau > 1.0) throw ConfigError("tau must be in [0, 1]");
    return a;
}

}  // namespace

ColoredMnistStudy ColoredMnistStudy::from_json(const json& j) {
    ColoredMnistStudy c;
    if (j.contains("mnist_dir")) c.mnist_dir = j.at("mnist_dir").get<std::string>();
    if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
    c.arch = j.value("arch", c.arch);
    if (j.contains("train")) c.train = TrainConfig::from_json(j.at("train"));
    if (j.contains("audit")) c.audit = audit_from_json(j.at("audit"), c.audit);
    c.include_unbiased = j.value("include_unbiased", c.include_unbiased);
    c.seed = j.value("seed", c.seed);
    if (j.contains("biased_runs")) {
        for (const auto& r : j.at("biased_runs")) {
            c.biased_runs.emplace_back(r.at("digit").get<int>(),
                                       data::color_from_name(r.at("color").get<std::string>()));
        }
    }
    return c;
}

json ColoredMnistStudy::to_json() const {
    json runs = json::array();
    for (const auto& [d, col] : biased_runs)
        runs.push_back(json{{"digit", d}, {"color", data::color_name(col)}});
    return json{{"study", "colored-mnist"},
                {"mnist_dir", mnist_dir.string()},
                {"out_dir", out_dir.string()},
                {"arch", arch},
                {"train", train.to_json()},
                {"audit", audit_to_json(audit)},
                {"biased_runs", runs},
                {"include_unbiased", include_unbiased},
                {"seed", seed}};
}

GroupedStudy GroupedStudy::from_json(const json& j) {
    GroupedStudy c;
    if (j.contains("train_manifest")) c.train_manifest = j.at("train_manifest").get<std::string>();
    if (j.contains("test_manifest")) c.test_manifest = j.at("test_manifest").get<std::string>();
    c.synth_per_group_per_class = j.value("synth_per_group_per_class", c.synth_per_group_per_class);
    c.synth_test_per_group_per_class =
        j.value("synth_test_per_group_per_class", c.synth_test_per_group_per_class);
    c.image_size = j.value("image_size", c.image_size);
    if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
    c.arch = j.value("arch", c.arch);
    c.train_total = j.value("train_total", c.train_total);
    c.test_total = j.value("test_total", c.test_total);
    if (j.contains("biased_fractions"))
        c.biased_fractions = j.at("biased_fractions").get<std::vector<double>>();
    if (j.contains("train")) c.train = TrainConfig::from_json(j.at("train"));
    if (j.contains("audit")) c.audit = audit_from_json(j.at("audit"), c.audit);
    c.seed = j.value("seed", c.seed);
    return c;
}

json GroupedStudy::to_json() const {
    return json{{"study", "grouped"},
                {"train_manifest", train_manifest.string()},
                {"test_manifest", test_manifest.string()},
                {"synth_per_group_per_class", synth_per_group_per_class},
                {"synth_test_per_group_per_class", synth_test_per_group_per_class},
                {"image_size", image_size},
                {"out_dir", out_dir.string()},
                {"arch", arch},
                {"train_total", train_total},
                {"test_total", test_total},
                {"biased_fractions", biased_fractions},
                {"train", train.to_json()},
                {"audit", audit_to_json(audit)},
                {"seed", seed}};
}

// ---------------------------------------------------------------------------
// Training

namespace {

/// Stratified seeded subsample keeping `scale` of each class.
std::vector<std::size_t> training_indices(const data::GroupedDataset& ds, double scale,
                                          std::uint64_t seed) {
    std::vector<std::size_t> all(ds.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    if (scale >= 1.0) return all;

    std::vector<std::vector<std::size_t>> by_class(ds.num_classes());
    for (std::size_t i = 0; i < ds.size(); ++i) by_class[static_cast<std::size_t>(ds.label(i))].push_back(i);
    Rng rng(derive_seed(seed, 0x5CA1E));
    std::vector<std::size_t> kept;
    for (auto& idx : by_class) {
        shuffle_indices(idx, rng);
        const auto n = static_cast<std::size_t>(std::floor(scale * static_cast<double>(idx.size()) + 0.5));
        idx.resize(std::max<std::size_t>(n, idx.empty() ? 0 : 1));
        kept.insert(kept.end(), idx.begin(), idx.end());
    }
    std::sort(kept.begin(), kept.end());
    return kept;
}

}  // namespace

double train_model(Model& model, const data::GroupedDataset& train, const TrainConfig& cfg,
                   const LogFn& log, std::vector<double>* epoch_losses) {
    if (train.size() == 0) throw DataError("training set is empty");
    auto indices = training_indices(train, cfg.scale, cfg.seed);
    model.seed_dropout(derive_seed(cfg.seed, 0xD20));

    double lr = cfg.lr;
    double last_epoch_loss = 0.0;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        if (cfg.lr_decay_epoch != 0 && epoch == cfg.lr_decay_epoch) lr *= cfg.lr_decay;
        Rng rng(derive_seed(cfg.seed, epoch));
        shuffle_indices(indices, rng);

        double loss_sum = 0.0;
        std::size_t n_batches = 0;
        for (std::size_t start = 0; start < indices.size(); start += cfg.batch_size) {
            const auto end = std::min(start + cfg.batch_size, indices.size());
            std::vector<std::size_t> batch(indices.begin() + static_cast<std::ptrdiff_t>(start),
                                           indices.begin() + static_cast<std::ptrdiff_t>(end));
            auto [inputs, labels] = data::make_batch(train, batch);
            const double loss = train_step(model, inputs, labels, static_cast<float>(lr),
                                           static_cast<float>(cfg.momentum));
            loss_sum += loss;
            ++n_batches;
            if (log && n_batches % 100 == 0) {
                char buf[128];
                std::snprintf(buf, sizeof(buf), "epoch %zu step %zu/%zu loss %.4f", epoch,
                              n_batches, (indices.size() + cfg.batch_size - 1) / cfg.batch_size,
                              loss);
                log(buf);
            }
        }
        last_epoch_loss = loss_sum / static_cast<double>(n_batches);
        if (epoch_losses) epoch_losses->push_back(last_epoch_loss);
        if (log) {
            char buf[96];
            std::snprintf(buf, sizeof(buf), "epoch %zu done, mean loss %.4f (lr %.4g)", epoch,
                          last_epoch_loss, lr);
            log(buf);
        }
    }
    model.clear_caches();
    return last_epoch_loss;
}

// ---------------------------------------------------------------------------
// Evaluation

double population_stddev(const std::vector<double>& values) {
    if (values.empty()) return 0.0;
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) /
                        static_cast<double>(values.size());
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    return std::sqrt(ss / static_cast<double>(values.size()));
}

EvaluationResult evaluate(Model& model, const data::GroupedDataset& test,
                          const std::string& criterion, std::size_t batch_size) {
    if (test.size() == 0) throw DataError("evaluation set is empty");
    if (!test.has_criterion(criterion))
        throw DataError("evaluation criterion '" + criterion + "' is not present in the dataset");

    EvaluationResult res;
    res.confusion.assign(test.num_classes(), std::vector<std::size_t>(test.num_classes(), 0));

    std::vector<int> predicted(test.size(), -1);
    std::vector<std::size_t> batch;
    for (std::size_t start = 0; start < test.size(); start += batch_size) {
        const auto end = std::min(start + batch_size, test.size());
        batch.resize(end - start);
        std::iota(batch.begin(), batch.end(), start);
        auto [inputs, labels] = data::make_batch(test, batch);
        const Tensor probs = model.predict(inputs);
        const std::size_t classes = probs.dim(1);
        for (std::size_t r = 0; r < batch.size(); ++r) {
            std::size_t best = 0;
            for (std::size_t c = 1; c < classes; ++c)
                if (probs.values()[r * classes + c] > probs.values()[r * classes + best]) best = c;
            predicted[batch[r]] = static_cast<int>(best);
        }
    }
    model.clear_caches();

    std::size_t correct_total = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
        const auto& g = test.group_of(i, criterion);
        res.group_total[g] += 1;
        const bool ok = predicted[i] == test.label(i);
        if (ok) {
            res.group_correct[g] += 1;
            ++correct_total;
        } else {
            res.group_correct.try_emplace(g, 0);
        }
        res.confusion[static_cast<std::size_t>(test.label(i))]
                     [static_cast<std::size_t>(predicted[i])] += 1;
    }
    res.overall_accuracy = static_cast<double>(correct_total) / static_cast<double>(test.size());

    std::vector<double> accs;
    for (const auto& [g, total] : res.group_total) {
        const double acc = static_cast<double>(res.group_correct[g]) / static_cast<double>(total);
        res.group_accuracy[g] = acc;
        accs.push_back(acc);
        if (total < 5)
            res.warnings.push_back("group '" + g + "' has only " + std::to_string(total) +
                                   " samples; its accuracy is unstable");
    }
    res.avg = std::accumulate(accs.begin(), accs.end(), 0.0) / static_cast<double>(accs.size());
    res.stddev = population_stddev(accs);
    return res;
}

json EvaluationResult::to_json() const {
    json groups = json::object();
    for (const auto& [g, total] : group_total) {
        groups[g] = json{{"n", total},
                         {"correct", group_correct.at(g)},
                         {"accuracy", group_accuracy.at(g)}};
    }
    return json{{"schema", "insidebias.eval/1"},
                {"groups", groups},
                {"avg", avg},
                {"std", stddev},
                {"overall_accuracy", overall_accuracy},
                {"confusion", confusion},
                {"warnings", warnings}};
}

// ---------------------------------------------------------------------------
// Artifact plumbing

std::string json_to_text(const json& j) { return j.dump(2) + "\n"; }

void write_json_atomic(const fs::path& path, const json& j) {
    if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot open '" + tmp.string() + "' for writing");
        os << json_to_text(j);
        if (!os) throw IoError("write to '" + tmp.string() + "' failed");
    }
    fs::rename(tmp, path);
}

namespace {

void write_text_atomic(const fs::path& path, const std::string& text) {
    if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot open '" + tmp.string() + "' for writing");
        os << text;
        if (!os) throw IoError("write to '" + tmp.string() + "' failed");
    }
    fs::rename(tmp, path);
}

std::string curves_csv(const std::vector<double>& epoch_losses) {
    std::ostringstream os;
    os << "epoch,loss\n";
    char buf[64];
    for (std::size_t e = 0; e < epoch_losses.size(); ++e) {
        std::snprintf(buf, sizeof(buf), "%zu,%.9g\n", e + 1, epoch_losses[e]);
        os << buf;
    }
    return os.str();
}

/// Shared per-run pipeline: train (or reload cached weights), evaluate,
/// audit, and write the run directory. Returns the study-manifest entry.
json execute_run(const std::string& run_id, const fs::path& run_dir, const std::string& arch,
                 std::uint64_t model_seed, const data::GroupedDataset& train_set,
                 const data::GroupedDataset& test_set, const TrainConfig& tc,
                 const detect::AuditOptions& ao, json run_config, const LogFn& log) {
    json entry{{"run_id", run_id}, {"dir", run_dir.filename().string()}};
    entry["train_digest"] = train_set.digest();
    entry["test_digest"] = test_set.digest();

    const fs::path weights_path = run_dir / "weights.bin";
    std::optional<Model> model;
    std::vector<double> epoch_losses;
    bool cached = false;
    if (fs::exists(weights_path)) {
        try {
            model.emplace(serialize::load_weights(weights_path, arch));
            cached = true;
            if (log) log("[" + run_id + "] reusing existing weights");
        } catch (const LoadError&) {
            model.reset();  // unreadable leftovers: retrain below
        }
    }
    if (!model) {
        model.emplace(zoo::build(arch, {train_set.height(), train_set.width(), 3},
                                 train_set.num_classes(), model_seed));
        if (log) log("[" + run_id + "] training " + arch + " on " + std::to_string(train_set.size()) + " samples");
        try {
            train_model(*model, train_set, tc, log, &epoch_losses);
        } catch (const NumericError& e) {
            // A diverged run is part of the study record, not a study failure.
            entry["status"] = "diverged";
            entry["error"] = e.what();
            run_config["status"] = "diverged";
            run_config["error"] = e.what();
            write_json_atomic(run_dir / "manifest.json", run_config);
            if (log) log("[" + run_id + "] diverged: " + std::string(e.what()));
            return entry;
        }
        fs::create_directories(run_dir);
        serialize::save_weights(*model, weights_path);
    }
    const std::string weight_digest = serialize::file_crc32_hex(weights_path);
    entry["weight_digest"] = weight_digest;
    entry["cached_weights"] = cached;

    const EvaluationResult ev = evaluate(*model, test_set, ao.criterion, tc.batch_size);
    const detect::BiasReport report = detect::audit(*model, test_set, ao, weight_digest);

    write_json_atomic(run_dir / "eval.json", ev.to_json());
    write_json_atomic(run_dir / "bias_report.json", report.to_json());
    if (!cached) write_text_atomic(run_dir / "curves.csv", curves_csv(epoch_losses));

    entry["status"] = "ok";
    entry["overall_accuracy"] = ev.overall_accuracy;
    entry["avg"] = ev.avg;
    entry["std"] = ev.stddev;
    json acc = json::object(), lam = json::object();
    for (const auto& [g, a] : ev.group_accuracy) acc[g] = a;
    for (const auto& p : report.profiles) lam[p.group] = p.lambda.at(report.verdict.layer);
    entry["group_accuracy"] = acc;
    entry["lambda"] = lam;
    entry["ratio"] = report.verdict.ratio;
    entry["biased"] = report.verdict.biased;
    entry["verdict_layer"] = report.verdict.layer;

    run_config["status"] = "ok";
    run_config["weight_digest"] = weight_digest;
    run_config["files"] = {"weights.bin", "eval.json", "bias_report.json", "curves.csv"};
    write_json_atomic(run_dir / "manifest.json", run_config);
    if (log) {
        char buf[128];
        std::snprintf(buf, sizeof(buf), "[%s] acc %.4f ratio %.4f -> %s", run_id.c_str(),
                      ev.overall_accuracy, report.verdict.ratio,
                      report.verdict.biased ? "biased" : "unbiased");
        log(buf);
    }
    return entry;
}

}  // namespace

// ---------------------------------------------------------------------------
// Studies

json run_colored_mnist_study(const ColoredMnistStudy& cfg, const LogFn& log) {
    if (cfg.out_dir.empty()) throw ConfigError("colored-mnist study needs an output directory");
    const auto train_gray = data::load_idx(cfg.mnist_dir / "train-images-idx3-ubyte",
                                           cfg.mnist_dir / "train-labels-idx1-ubyte");
    const auto test_gray = data::load_idx(cfg.mnist_dir / "t10k-images-idx3-ubyte",
                                          cfg.mnist_dir / "t10k-labels-idx1-ubyte");

    // One uniformly colored test set is shared by every run of the study.
    data::ColorBiasConfig test_cfg;
    test_cfg.primary_fraction = 1.0 / 3.0;
    test_cfg.seed = derive_seed(cfg.seed, 9001);
    const auto test_set = data::colorize(test_gray, test_cfg);

    std::vector<std::pair<int, data::Color>> biased = cfg.biased_runs;
    if (biased.empty()) {
        for (int d = 0; d < 10; ++d)
            for (int c = 0; c < 3; ++c) biased.emplace_back(d, static_cast<data::Color>(c));
    }

    detect::AuditOptions ao = cfg.audit;
    ao.criterion = "color";

    json runs = json::array();
    std::size_t run_index = 0;
    auto do_run = [&](const std::string& run_id, const data::ColorBiasConfig& color_cfg,
                      json protocol) {
        const auto train_set = data::colorize(train_gray, color_cfg);
        TrainConfig tc = cfg.train;
        tc.seed = derive_seed(cfg.train.seed, run_index);
        detect::AuditOptions run_ao = ao;
        run_ao.bootstrap_seed = derive_seed(cfg.seed, 7000 + run_index);

        json run_config{{"schema", "insidebias.run/1"},
                        {"run_id", run_id},
                        {"study", "colored-mnist"},
                        {"arch", cfg.arch},
                        {"protocol", std::move(protocol)},
                        {"train", tc.to_json()},
                        {"audit", audit_to_json(run_ao)},
                        {"train_digest", train_set.digest()},
                        {"test_digest", test_set.digest()},
                        {"train_provenance", train_set.provenance()},
                        {"test_provenance", test_set.provenance()}};
        runs.push_back(execute_run(run_id, cfg.out_dir / run_id, cfg.arch, tc.seed, train_set,
                                   test_set, tc, run_ao, std::move(run_config), log));
        ++run_index;
    };

    for (const auto& [digit, color] : biased) {
        data::ColorBiasConfig cc;
        cc.primary_digit = digit;
        cc.primary_color = color;
        cc.primary_fraction = 0.9;
        cc.seed = derive_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(run_index));
        const std::string run_id =
            "biased-d" + std::to_string(digit) + "-" + data::color_name(color);
        do_run(run_id, cc,
               json{{"kind", "biased"}, {"digit", digit}, {"color", data::color_name(color)},
                    {"primary_fraction", cc.primary_fraction}});
    }
    if (cfg.include_unbiased) {
        data::ColorBiasConfig cc;
        cc.primary_fraction = 1.0 / 3.0;
        cc.seed = derive_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(run_index));
        do_run("unbiased", cc, json{{"kind", "unbiased"}});
    }

    json manifest{{"schema", "insidebias.study/1"},
                  {"config", cfg.to_json()},
                  {"test_digest", test_set.digest()},
                  {"runs", runs}};
    write_json_atomic(cfg.out_dir / "study_manifest.json", manifest);
    return manifest;
}

json run_grouped_study(const GroupedStudy& cfg, const LogFn& log) {
    if (cfg.out_dir.empty()) throw ConfigError("grouped study needs an output directory");

    data::GroupedDataset train_pool, test_pool;
    if (!cfg.train_manifest.empty()) {
        if (cfg.test_manifest.empty())
            throw ConfigError("a train manifest requires a test manifest");
        train_pool = data::load_manifest(cfg.train_manifest, "train");
        test_pool = data::load_manifest(cfg.test_manifest, "test");
    } else {
        data::SyntheticConfig sc;
        sc.per_group_per_class = cfg.synth_per_group_per_class;
        sc.height = sc.width = cfg.image_size;
        sc.seed = derive_seed(cfg.seed, 11);
        train_pool = data::generate_synthetic_grouped(sc, "train");
        sc.per_group_per_class = cfg.synth_test_per_group_per_class;
        sc.seed = derive_seed(cfg.seed, 12);
        sc.id_prefix = "synth-test";
        test_pool = data::generate_synthetic_grouped(sc, "test");
    }
    if (!train_pool.has_criterion("group") || !test_pool.has_criterion("group"))
        throw DataError("grouped study pools need a 'group' criterion");

    data::GroupedDataset test_set =
        cfg.test_total == 0
            ? test_pool
            : data::build_group_protocol(test_pool, "group",
                                         partition(test_pool, "group").begin()->first, {},
                                         cfg.test_total, derive_seed(cfg.seed, 13));
    data::assert_disjoint(train_pool, test_set);

    std::vector<std::string> groups;
    for (const auto& [g, idx] : data::partition(train_pool, "group")) groups.push_back(g);

    detect::AuditOptions ao = cfg.audit;
    ao.criterion = "group";

    json runs = json::array();
    std::size_t run_index = 0;
    auto do_run = [&](const std::string& run_id, const std::string& favored,
                      std::vector<double> fractions, json protocol) {
        const auto train_set =
            data::build_group_protocol(train_pool, "group", favored, std::move(fractions),
                                       cfg.train_total, derive_seed(cfg.seed, 500 + run_index));
        data::assert_disjoint(train_set, test_set);
        TrainConfig tc = cfg.train;
        tc.seed = derive_seed(cfg.train.seed, run_index);
        detect::AuditOptions run_ao = ao;
        run_ao.bootstrap_seed = derive_seed(cfg.seed, 7000 + run_index);

        json run_config{{"schema", "insidebias.run/1"},
                        {"run_id", run_id},
                        {"study", "grouped"},
                        {"arch", cfg.arch},
                        {"protocol", std::move(protocol)},
                        {"train", tc.to_json()},
                        {"audit", audit_to_json(run_ao)},
                        {"train_digest", train_set.digest()},
                        {"test_digest", test_set.digest()},
                        {"train_provenance", train_set.provenance()},
                        {"test_provenance", test_set.provenance()}};
        runs.push_back(execute_run(run_id, cfg.out_dir / run_id, cfg.arch, tc.seed, train_set,
                                   test_set, tc, run_ao, std::move(run_config), log));
        ++run_index;
    };

    for (const auto& g : groups) {
        do_run("biased-" + g, g, cfg.biased_fractions,
               json{{"kind", "biased"}, {"favored", g}, {"fractions", cfg.biased_fractions}});
    }
    do_run("unbiased", groups.front(), {}, json{{"kind", "unbiased"}});

    json manifest{{"schema", "insidebias.study/1"},
                  {"config", cfg.to_json()},
                  {"groups", groups},
                  {"test_digest", test_set.digest()},
                  {"runs", runs}};
    write_json_atomic(cfg.out_dir / "study_manifest.json", manifest);
    return manifest;
}

}  // namespace insidebias::harness
