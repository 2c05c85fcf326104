#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "insidebias/tensor.hpp"

namespace insidebias::data {

enum class Color { red = 0, green = 1, blue = 2 };

const char* color_name(Color c);
Color color_from_name(const std::string& name);

/// Colored-MNIST bias injection parameters. primary_fraction 0.9 is the
/// biased protocol; 1/3 switches to the uniform (unbiased) coloring where
/// every digit is split exactly in thirds across the colors.
struct ColorBiasConfig {
    int primary_digit = 0;
    Color primary_color = Color::red;
    double primary_fraction = 0.9;
    std::uint64_t seed = 0;

    bool uniform() const { return std::abs(primary_fraction - 1.0 / 3.0) < 1e-9; }
    std::string digest() const;
    void validate() const;
};

/// Labeled image set with one or more demographic criteria. Samples are
/// stored compactly (MNIST stays 8-bit grayscale with a color tag after
/// colorization); image(i) materializes float tensors scaled to [0, 1].
class GroupedDataset {
public:
    std::size_t size() const { return labels_.size(); }
    std::size_t height() const { return height_; }
    std::size_t width() const { return width_; }
    /// 1 before colorization (grayscale), 3 afterwards / for RGB sets.
    std::size_t channels() const;

    const std::string& id(std::size_t i) const { return ids_[i]; }
    int label(std::size_t i) const { return labels_[i]; }
    std::size_t num_classes() const { return num_classes_; }

    /// Full image as [C, H, W] floats in [0, 1].
    Tensor image(std::size_t i) const;
    /// Write sample i as 3 x H x W floats into dst (grayscale-tagged samples
    /// land in their color channel, other channels zero).
    void write_chw3(std::size_t i, float* dst) const;

    std::vector<std::string> criteria_names() const;
    bool has_criterion(const std::string& name) const;
    const std::string& group_of(std::size_t i, const std::string& criterion) const;

    const std::string& split() const { return split_; }
    /// Content digest (images + labels + criteria), 16 hex chars.
    std::string digest() const;
    /// Provenance line: source, seed and bias-config digest.
    const std::string& provenance() const { return provenance_; }

    // Mutating construction API, used by loaders/generators in this module.
    struct Builder;

private:
    friend struct Builder;
    friend GroupedDataset colorize(const GroupedDataset&, const ColorBiasConfig&);
    friend GroupedDataset subset(const GroupedDataset&, const std::vector<std::size_t>&);
    friend GroupedDataset build_group_protocol(const GroupedDataset&, const std::string&,
                                               const std::string&, std::vector<double>, std::size_t,
                                               std::uint64_t);
    friend GroupedDataset load_manifest(const std::filesystem::path&, const std::string&);

    std::size_t height_ = 0, width_ = 0;
    std::size_t num_classes_ = 0;
    bool rgb_ = false;
    std::vector<std::vector<std::uint8_t>> gray_;   // grayscale path
    std::vector<std::int8_t> color_tag_;            // channel index, -1 = untagged
    std::vector<std::vector<float>> rgbf_;          // generic RGB path
    std::vector<std::string> ids_;
    std::vector<int> labels_;
    std::map<std::string, std::vector<std::string>> criteria_;
    std::string split_ = "train";
    std::string provenance_;
};

struct GroupedDataset::Builder {
    GroupedDataset ds;
    Builder(std::size_t h, std::size_t w, std::size_t num_classes, bool rgb, std::string split,
            std::string provenance);
    void add_gray(std::string id, int label, std::vector<std::uint8_t> pixels);
    void add_rgb(std::string id, int label, std::vector<float> chw,
                 std::map<std::string, std::string> groups);
    GroupedDataset finish();
};

/// Parse an IDX image/label file pair into a grayscale dataset (labels 0-9,
/// pixels scaled to [0, 1] when materialized).
GroupedDataset load_idx(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path);

/// Apply the colored-bias rule and add the "color" criterion. Exact-count
/// seeded assignment: the configured fractions hold exactly (up to integer
/// rounding), not just in expectation.
GroupedDataset colorize(const GroupedDataset& ds, const ColorBiasConfig& cfg);

/// Exhaustive disjoint partition by criterion value; index order within each
/// part follows dataset order.
std::map<std::string, std::vector<std::size_t>> partition(const GroupedDataset& ds,
                                                          const std::string& criterion);

GroupedDataset subset(const GroupedDataset& ds, const std::vector<std::size_t>& indices);

/// Seeded subsample with per-group fractions (favored group gets
/// fractions[0] plus any rounding remainder) and task classes balanced
/// inside each group. Empty `fractions` means the balanced protocol.
GroupedDataset build_group_protocol(const GroupedDataset& ds, const std::string& criterion,
                                    const std::string& favored, std::vector<double> fractions,
                                    std::size_t total_n, std::uint64_t seed);

/// Throws if the two datasets share a sample identifier.
void assert_disjoint(const GroupedDataset& train, const GroupedDataset& test);

/// CSV manifest (`id,path,task,group`, paths relative to the manifest) over
/// a directory of .png/.ppm images.
GroupedDataset load_manifest(const std::filesystem::path& csv_path, const std::string& split);

/// Synthetic grouped binary-classification set: two shape classes rendered
/// with a group-correlated nuisance cue (tint, stroke style, contrast), so
/// the grouped-study protocols run without any face data.
struct SyntheticConfig {
    std::size_t per_group_per_class = 300;
    std::size_t height = 32, width = 32;
    std::uint64_t seed = 0;
    std::string id_prefix = "synth";
};

GroupedDataset generate_synthetic_grouped(const SyntheticConfig& cfg, const std::string& split);

/// Write a dataset as PNG files plus manifest.csv in `dir`.
void export_grouped(const GroupedDataset& ds, const std::filesystem::path& dir);

/// Batch assembly: gather `indices` into ([n, 3, H, W], labels).
std::pair<Tensor, std::vector<int>> make_batch(const GroupedDataset& ds,
                                               const std::vector<std::size_t>& indices);

}  // namespace insidebias::data
