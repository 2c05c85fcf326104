#include "insidebias/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

#include "insidebias/errors.hpp"
#include "insidebias/image_io.hpp"
#include "insidebias/rng.hpp"

namespace insidebias::data {

namespace {

class Fnv1a {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h_ ^= b[i];
            h_ *= 0x100000001B3ULL;
        }
    }
    void str(const std::string& s) { bytes(s.data(), s.size()); }
    template <typename T>
    void pod(const T& v) {
        bytes(&v, sizeof(T));
    }
    std::string hex() const {
        char out[17];
        std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h_));
        return out;
    }

private:
    std::uint64_t h_ = 0xCBF29CE484222325ULL;
};

std::uint32_t read_be_u32(std::istream& is, const std::string& path) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (is.gcount() != 4) throw DataError("'" + path + "' truncated while reading header");
    return (static_cast<std::uint32_t>(b[0]) << 24) | (static_cast<std::uint32_t>(b[1]) << 16) |
           (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
}

}  // namespace

const char* color_name(Color c) {
    switch (c) {
        case Color::red: return "red";
        case Color::green: return "green";
        case Color::blue: return "blue";
    }
    throw ConfigError("invalid color");
}

Color color_from_name(const std::string& name) {
    if (name == "red") return Color::red;
    if (name == "green") return Color::green;
    if (name == "blue") return Color::blue;
    throw ConfigError("unknown color '" + name + "'");
}

void ColorBiasConfig::validate() const {
    if (primary_digit < 0 || primary_digit > 9) {
        throw ConfigError("primary_digit must be 0-9, got " + std::to_string(primary_digit));
    }
    if (primary_fraction < 0.0 || primary_fraction > 1.0) {
        throw ConfigError("primary_fraction must be in [0, 1]");
    }
}

std::string ColorBiasConfig::digest() const {
    Fnv1a h;
    h.pod(primary_digit);
    h.pod(primary_color);
    h.pod(primary_fraction);
    h.pod(seed);
    return h.hex();
}

// ---------------------------------------------------------------------------
// GroupedDataset

std::size_t GroupedDataset::channels() const {
    if (rgb_) return 3;
    return color_tag_.empty() ? 1 : 3;
}

Tensor GroupedDataset::image(std::size_t i) const {
    if (rgb_ || !color_tag_.empty()) {
        Tensor out({3, height_, width_});
        write_chw3(i, out.data());
        return out;
    }
    Tensor out({1, height_, width_});
    const auto& px = gray_[i];
    for (std::size_t p = 0; p < px.size(); ++p) out[p] = static_cast<float>(px[p]) / 255.0f;
    return out;
}

void GroupedDataset::write_chw3(std::size_t i, float* dst) const {
    const std::size_t plane = height_ * width_;
    if (rgb_) {
        std::memcpy(dst, rgbf_[i].data(), 3 * plane * sizeof(float));
        return;
    }
    if (color_tag_.empty()) {
        throw ConfigError("dataset is grayscale; colorize it before 3-channel batching");
    }
    std::fill(dst, dst + 3 * plane, 0.0f);
    const auto& px = gray_[i];
    float* ch = dst + static_cast<std::size_t>(color_tag_[i]) * plane;
    for (std::size_t p = 0; p < plane; ++p) ch[p] = static_cast<float>(px[p]) / 255.0f;
}

std::vector<std::string> GroupedDataset::criteria_names() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : criteria_) out.push_back(k);
    return out;
}

bool GroupedDataset::has_criterion(const std::string& name) const {
    return criteria_.count(name) != 0;
}

const std::string& GroupedDataset::group_of(std::size_t i, const std::string& criterion) const {
    auto it = criteria_.find(criterion);
    if (it == criteria_.end()) throw DataError("unknown criterion '" + criterion + "'");
    return it->second[i];
}

std::string GroupedDataset::digest() const {
    Fnv1a h;
    h.pod(height_);
    h.pod(width_);
    h.pod(rgb_);
    for (std::size_t i = 0; i < size(); ++i) {
        h.str(ids_[i]);
        h.pod(labels_[i]);
        if (rgb_) {
            h.bytes(rgbf_[i].data(), rgbf_[i].size() * sizeof(float));
        } else {
            h.bytes(gray_[i].data(), gray_[i].size());
            if (!color_tag_.empty()) h.pod(color_tag_[i]);
        }
    }
    for (const auto& [name, vals] : criteria_) {
        h.str(name);
        for (const auto& v : vals) h.str(v);
    }
    return h.hex();
}

GroupedDataset::Builder::Builder(std::size_t h, std::size_t w, std::size_t num_classes, bool rgb,
                                 std::string split, std::string provenance) {
    ds.height_ = h;
    ds.width_ = w;
    ds.num_classes_ = num_classes;
    ds.rgb_ = rgb;
    ds.split_ = std::move(split);
    ds.provenance_ = std::move(provenance);
}

void GroupedDataset::Builder::add_gray(std::string id, int label, std::vector<std::uint8_t> pixels) {
    if (ds.rgb_) throw ConfigError("builder is in RGB mode");
    if (pixels.size() != ds.height_ * ds.width_) throw ShapeError("pixel count mismatch");
    ds.ids_.push_back(std::move(id));
    ds.labels_.push_back(label);
    ds.gray_.push_back(std::move(pixels));
}

void GroupedDataset::Builder::add_rgb(std::string id, int label, std::vector<float> chw,
                                      std::map<std::string, std::string> groups) {
    if (!ds.rgb_) throw ConfigError("builder is in grayscale mode");
    if (chw.size() != 3 * ds.height_ * ds.width_) throw ShapeError("pixel count mismatch");
    ds.ids_.push_back(std::move(id));
    ds.labels_.push_back(label);
    ds.rgbf_.push_back(std::move(chw));
    for (auto& [k, v] : groups) {
        auto& col = ds.criteria_[k];
        col.resize(ds.labels_.size() - 1, "");
        col.push_back(v);
    }
}

GroupedDataset GroupedDataset::Builder::finish() {
    for (auto& [k, v] : ds.criteria_) {
        if (v.size() != ds.labels_.size()) {
            throw DataError("criterion '" + k + "' missing labels for some samples");
        }
        for (const auto& g : v) {
            if (g.empty()) throw DataError("criterion '" + k + "' has an empty class label");
        }
    }
    return std::move(ds);
}

// ---------------------------------------------------------------------------
// IDX ingestion

GroupedDataset load_idx(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path) {
    std::ifstream imgs(images_path, std::ios::binary);
    if (!imgs) throw IoError("cannot open '" + images_path.string() + "'");
    std::ifstream lbls(labels_path, std::ios::binary);
    if (!lbls) throw IoError("cannot open '" + labels_path.string() + "'");

    const std::uint32_t img_magic = read_be_u32(imgs, images_path.string());
    if (img_magic != 0x00000803) {
        std::ostringstream os;
        os << "'" << images_path.string() << "': bad magic number 0x" << std::hex << img_magic
           << ", expected 0x803 (IDX images)";
        throw DataError(os.str());
    }
    const std::uint32_t lbl_magic = read_be_u32(lbls, labels_path.string());
    if (lbl_magic != 0x00000801) {
        std::ostringstream os;
        os << "'" << labels_path.string() << "': bad magic number 0x" << std::hex << lbl_magic
           << ", expected 0x801 (IDX labels)";
        throw DataError(os.str());
    }

    const std::uint32_t n_images = read_be_u32(imgs, images_path.string());
    const std::uint32_t rows = read_be_u32(imgs, images_path.string());
    const std::uint32_t cols = read_be_u32(imgs, images_path.string());
    const std::uint32_t n_labels = read_be_u32(lbls, labels_path.string());
    if (n_images != n_labels) {
        throw DataError("image count " + std::to_string(n_images) + " != label count " +
                        std::to_string(n_labels));
    }

    GroupedDataset::Builder b(rows, cols, 10, /*rgb=*/false,
                              /*split=*/"", "idx:" + images_path.filename().string());
    std::vector<std::uint8_t> px(static_cast<std::size_t>(rows) * cols);
    for (std::uint32_t i = 0; i < n_images; ++i) {
        imgs.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size()));
        if (imgs.gcount() != static_cast<std::streamsize>(px.size())) {
            throw DataError("'" + images_path.string() + "' truncated at image " + std::to_string(i));
        }
        char lab;
        if (!lbls.get(lab)) {
            throw DataError("'" + labels_path.string() + "' truncated at label " + std::to_string(i));
        }
        if (lab < 0 || lab > 9) throw DataError("label out of range at sample " + std::to_string(i));
        b.add_gray("mnist-" + std::to_string(i), lab, px);
    }
    return b.finish();
}

// ---------------------------------------------------------------------------
// Colorize

GroupedDataset colorize(const GroupedDataset& ds, const ColorBiasConfig& cfg) {
    cfg.validate();
    if (ds.rgb_ || !ds.color_tag_.empty()) {
        throw ConfigError("colorize requires an uncolored grayscale dataset");
    }

    GroupedDataset out = ds;
    out.color_tag_.assign(ds.size(), -1);
    out.provenance_ = ds.provenance_ + " colorized seed=" + std::to_string(cfg.seed) +
                      " cfg=" + cfg.digest();

    // Per-digit index lists, then exact-count assignment within each digit.
    std::vector<std::vector<std::size_t>> by_digit(10);
    for (std::size_t i = 0; i < ds.size(); ++i) by_digit[ds.labels_[i]].push_back(i);

    Rng rng(derive_seed(cfg.seed, 0xC0104));
    const int primary = static_cast<int>(cfg.primary_color);
    int secondary[2];
    for (int c = 0, j = 0; c < 3; ++c) {
        if (c != primary) secondary[j++] = c;
    }

    for (int digit = 0; digit < 10; ++digit) {
        auto idx = by_digit[digit];
        shuffle_indices(idx, rng);
        const std::size_t n = idx.size();
        if (cfg.uniform()) {
            const std::size_t base = n / 3, rem = n % 3;
            std::size_t counts[3] = {base + (rem > 0), base + (rem > 1), base};
            std::size_t pos = 0;
            for (int c = 0; c < 3; ++c) {
                for (std::size_t j = 0; j < counts[c]; ++j) {
                    out.color_tag_[idx[pos++]] = static_cast<std::int8_t>(c);
                }
            }
        } else if (digit == cfg.primary_digit) {
            const std::size_t n_primary =
                static_cast<std::size_t>(std::floor(cfg.primary_fraction * static_cast<double>(n) + 0.5));
            const std::size_t rest = n - n_primary;
            const std::size_t n_s0 = rest - rest / 2;
            std::size_t pos = 0;
            for (std::size_t j = 0; j < n_primary; ++j) out.color_tag_[idx[pos++]] = static_cast<std::int8_t>(primary);
            for (std::size_t j = 0; j < n_s0; ++j) out.color_tag_[idx[pos++]] = static_cast<std::int8_t>(secondary[0]);
            while (pos < n) out.color_tag_[idx[pos++]] = static_cast<std::int8_t>(secondary[1]);
        } else {
            const std::size_t n_s0 = n - n / 2;
            std::size_t pos = 0;
            for (std::size_t j = 0; j < n_s0; ++j) out.color_tag_[idx[pos++]] = static_cast<std::int8_t>(secondary[0]);
            while (pos < n) out.color_tag_[idx[pos++]] = static_cast<std::int8_t>(secondary[1]);
        }
    }

    auto& colors = out.criteria_["color"];
    colors.resize(out.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        colors[i] = color_name(static_cast<Color>(out.color_tag_[i]));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Partition / subset / protocol

std::map<std::string, std::vector<std::size_t>> partition(const GroupedDataset& ds,
                                                          const std::string& criterion) {
    std::map<std::string, std::vector<std::size_t>> parts;
    if (criterion == "label") {
        for (std::size_t i = 0; i < ds.size(); ++i) {
            parts[std::to_string(ds.label(i))].push_back(i);
        }
        return parts;
    }
    if (!ds.has_criterion(criterion)) {
        throw DataError("unknown criterion '" + criterion + "'");
    }
    for (std::size_t i = 0; i < ds.size(); ++i) {
        parts[ds.group_of(i, criterion)].push_back(i);
    }
    return parts;
}

GroupedDataset subset(const GroupedDataset& ds, const std::vector<std::size_t>& indices) {
    GroupedDataset out;
    out.height_ = ds.height_;
    out.width_ = ds.width_;
    out.num_classes_ = ds.num_classes_;
    out.rgb_ = ds.rgb_;
    out.split_ = ds.split_;
    out.provenance_ = ds.provenance_ + " subset(n=" + std::to_string(indices.size()) + ")";
    for (std::size_t i : indices) {
        if (i >= ds.size()) throw ShapeError("subset index out of range");
        out.ids_.push_back(ds.ids_[i]);
        out.labels_.push_back(ds.labels_[i]);
        if (ds.rgb_) {
            out.rgbf_.push_back(ds.rgbf_[i]);
        } else {
            out.gray_.push_back(ds.gray_[i]);
            if (!ds.color_tag_.empty()) out.color_tag_.push_back(ds.color_tag_[i]);
        }
    }
    for (const auto& [name, vals] : ds.criteria_) {
        auto& col = out.criteria_[name];
        for (std::size_t i : indices) col.push_back(vals[i]);
    }
    return out;
}

GroupedDataset build_group_protocol(const GroupedDataset& ds, const std::string& criterion,
                                    const std::string& favored, std::vector<double> fractions,
                                    std::size_t total_n, std::uint64_t seed) {
    auto parts = partition(ds, criterion);
    if (parts.find(favored) == parts.end()) {
        throw ConfigError("favored group '" + favored + "' not present in criterion '" + criterion + "'");
    }
    std::vector<std::string> groups;
    for (const auto& [g, _] : parts) groups.push_back(g);

    // Per-group target counts: balanced split, or fractions with the favored
    // group taking fractions[0] plus the rounding remainder.
    std::map<std::string, std::size_t> want;
    if (fractions.empty()) {
        const std::size_t base = total_n / groups.size();
        for (const auto& g : groups) want[g] = base;
        want[favored] += total_n - base * groups.size();
    } else {
        if (fractions.size() != groups.size()) {
            throw ConfigError("got " + std::to_string(fractions.size()) + " fractions for " +
                              std::to_string(groups.size()) + " groups");
        }
        double sum = 0.0;
        for (double f : fractions) sum += f;
        if (std::abs(sum - 1.0) > 1e-6) throw ConfigError("fractions must sum to 1");
        std::size_t assigned = 0, fi = 1;
        for (const auto& g : groups) {
            if (g == favored) continue;
            want[g] = static_cast<std::size_t>(std::floor(fractions[fi++] * static_cast<double>(total_n)));
            assigned += want[g];
        }
        want[favored] = total_n - assigned;
    }

    const std::size_t n_classes = ds.num_classes_;
    Rng rng(derive_seed(seed, 0x9107));
    std::vector<std::size_t> chosen;
    for (const auto& g : groups) {
        // Classes balanced inside each group, remainder to the lowest labels.
        std::vector<std::vector<std::size_t>> by_class(n_classes);
        for (std::size_t i : parts[g]) by_class[ds.labels_[i]].push_back(i);
        const std::size_t n_g = want[g];
        const std::size_t base = n_g / n_classes, rem = n_g % n_classes;
        for (std::size_t cls = 0; cls < n_classes; ++cls) {
            const std::size_t need = base + (cls < rem ? 1 : 0);
            auto& pool = by_class[cls];
            if (pool.size() < need) {
                throw CapacityError("group '" + g + "' class " + std::to_string(cls) + " needs " +
                                    std::to_string(need) + " samples, has " +
                                    std::to_string(pool.size()) + " (short by " +
                                    std::to_string(need - pool.size()) + ")");
            }
            shuffle_indices(pool, rng);
            chosen.insert(chosen.end(), pool.begin(), pool.begin() + static_cast<long>(need));
        }
    }
    GroupedDataset out = subset(ds, chosen);
    out.provenance_ += " protocol(favored=" + favored + ", n=" + std::to_string(total_n) +
                       ", seed=" + std::to_string(seed) + ")";
    return out;
}

void assert_disjoint(const GroupedDataset& train, const GroupedDataset& test) {
    std::vector<std::string> a, b;
    for (std::size_t i = 0; i < train.size(); ++i) a.push_back(train.id(i));
    for (std::size_t i = 0; i < test.size(); ++i) b.push_back(test.id(i));
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    std::vector<std::string> both;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(both));
    if (!both.empty()) {
        throw DataError("train/test overlap: sample '" + both.front() + "' (and " +
                          std::to_string(both.size() - 1) + " more) appears in both splits");
    }
}

// ---------------------------------------------------------------------------
// Manifest ingestion

GroupedDataset load_manifest(const std::filesystem::path& csv_path, const std::string& split) {
    std::ifstream is(csv_path);
    if (!is) throw IoError("cannot open '" + csv_path.string() + "'");
    std::string line;
    if (!std::getline(is, line)) throw DataError("'" + csv_path.string() + "' is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "id,path,task,group") {
        throw DataError("'" + csv_path.string() + "': header must be 'id,path,task,group', got '" +
                        line + "'");
    }

    const auto base = csv_path.parent_path();
    std::unique_ptr<GroupedDataset::Builder> b;
    int max_label = -1;
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::array<std::string, 4> f;
        std::size_t field = 0, start = 0;
        for (std::size_t i = 0; i <= line.size(); ++i) {
            if (i == line.size() || line[i] == ',') {
                if (field >= 4) throw DataError(csv_path.string() + ":" + std::to_string(line_no) + ": too many fields");
                f[field++] = line.substr(start, i - start);
                start = i + 1;
            }
        }
        if (field != 4) {
            throw DataError(csv_path.string() + ":" + std::to_string(line_no) + ": expected 4 fields");
        }
        const ImageRgb8 img = read_image(base / f[1]);
        if (!b) {
            b = std::make_unique<GroupedDataset::Builder>(img.height, img.width, 0, /*rgb=*/true,
                                                          split, "manifest:" + csv_path.string());
        } else if (img.height != b->ds.height_ || img.width != b->ds.width_) {
            throw DataError(csv_path.string() + ":" + std::to_string(line_no) +
                            ": image size differs from the rest of the set");
        }
        int task = 0;
        try {
            task = std::stoi(f[2]);
        } catch (const std::exception&) {
            throw DataError(csv_path.string() + ":" + std::to_string(line_no) + ": bad task label '" + f[2] + "'");
        }
        max_label = std::max(max_label, task);
        const std::size_t plane = img.height * img.width;
        std::vector<float> chw(3 * plane);
        for (std::size_t p = 0; p < plane; ++p) {
            for (std::size_t c = 0; c < 3; ++c) {
                chw[c * plane + p] = static_cast<float>(img.pixels[p * 3 + c]) / 255.0f;
            }
        }
        b->add_rgb(f[0], task, std::move(chw), {{"group", f[3]}});
    }
    if (!b) throw DataError("'" + csv_path.string() + "' holds no samples");
    b->ds.num_classes_ = static_cast<std::size_t>(max_label) + 1;
    return b->finish();
}

// ---------------------------------------------------------------------------
// Synthetic grouped set

namespace {

struct GroupStyle {
    float tint[3];
    float stroke;
    float fg, bg;
    float tex_freq;
};

// Styles differ in tint, stroke weight, contrast polarity and background
// texture so a model trained on one group generalizes imperfectly to the
// others.
const std::map<std::string, GroupStyle>& group_styles() {
    static const std::map<std::string, GroupStyle> styles = {
        {"A", {{1.00f, 0.58f, 0.30f}, 1.1f, 0.95f, 0.15f, 0.55f}},
        {"B", {{0.35f, 1.00f, 0.45f}, 2.4f, 0.30f, 0.85f, 0.22f}},
        {"C", {{0.38f, 0.55f, 1.00f}, 1.7f, 0.80f, 0.45f, 0.40f}},
    };
    return styles;
}

std::vector<float> render_sample(const GroupStyle& st, int klass, std::size_t H, std::size_t W,
                                 Rng& rng) {
    const float cx = W / 2.0f + uniform_in(rng, -2.0f, 2.0f);
    const float cy = H / 2.0f + uniform_in(rng, -2.0f, 2.0f);
    const float size = uniform_in(rng, 0.26f, 0.38f) * static_cast<float>(W);
    const float theta = uniform_in(rng, 0.0f, 3.14159265f);
    const float ct = std::cos(theta), sn = std::sin(theta);
    const float stroke = st.stroke * uniform_in(rng, 0.85f, 1.15f);
    const float phase = uniform_in(rng, 0.0f, 6.2831853f);

    const std::size_t plane = H * W;
    std::vector<float> chw(3 * plane);
    for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) {
            const float dx = static_cast<float>(x) - cx;
            const float dy = static_cast<float>(y) - cy;
            float d;
            if (klass == 0) {
                // ring
                d = std::abs(std::sqrt(dx * dx + dy * dy) - size);
            } else {
                // rotated cross
                const float u = ct * dx + sn * dy;
                const float v = -sn * dx + ct * dy;
                const float arm = size * 1.1f;
                const float d1 = std::max(std::abs(v), std::abs(u) - arm);
                const float d2 = std::max(std::abs(u), std::abs(v) - arm);
                d = std::min(d1, d2);
            }
            const float mask = std::clamp(1.5f - (d - stroke), 0.0f, 1.0f);
            const float tex = 0.08f * std::sin(st.tex_freq * (static_cast<float>(x) + 2.0f * static_cast<float>(y)) + phase);
            const float base = st.bg + tex + uniform_in(rng, -0.04f, 0.04f);
            const float level = std::clamp(base + mask * (st.fg - st.bg), 0.0f, 1.0f);
            for (std::size_t c = 0; c < 3; ++c) {
                chw[c * plane + y * W + x] = level * st.tint[c];
            }
        }
    }
    return chw;
}

}  // namespace

GroupedDataset generate_synthetic_grouped(const SyntheticConfig& cfg, const std::string& split) {
    GroupedDataset::Builder b(cfg.height, cfg.width, 2, /*rgb=*/true, split,
                              "synthetic seed=" + std::to_string(cfg.seed) + " split=" + split);
    Rng rng(derive_seed(cfg.seed, split == "train" ? 0x51 : 0x52));
    std::size_t counter = 0;
    for (const auto& [group, style] : group_styles()) {
        for (int klass = 0; klass < 2; ++klass) {
            for (std::size_t i = 0; i < cfg.per_group_per_class; ++i) {
                const std::string id = cfg.id_prefix + "-" + split + "-" + group + "-" +
                                       std::to_string(counter++);
                b.add_rgb(id, klass, render_sample(style, klass, cfg.height, cfg.width, rng),
                          {{"group", group}});
            }
        }
    }
    return b.finish();
}

void export_grouped(const GroupedDataset& ds, const std::filesystem::path& dir) {
    if (!ds.has_criterion("group")) throw ConfigError("export requires a 'group' criterion");
    std::filesystem::create_directories(dir / "images");
    std::ofstream csv(dir / "manifest.csv", std::ios::trunc);
    if (!csv) throw IoError("cannot write manifest in '" + dir.string() + "'");
    csv << "id,path,task,group\n";
    const std::size_t plane = ds.height() * ds.width();
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const Tensor img = ds.image(i);
        ImageRgb8 rgb{ds.height(), ds.width(), std::vector<std::uint8_t>(plane * 3)};
        for (std::size_t p = 0; p < plane; ++p) {
            for (std::size_t c = 0; c < 3; ++c) {
                const float v = img.rank() == 3 && img.dim(0) == 3 ? img[c * plane + p] : img[p];
                rgb.pixels[p * 3 + c] = static_cast<std::uint8_t>(std::clamp(v, 0.0f, 1.0f) * 255.0f + 0.5f);
            }
        }
        const std::string rel = "images/" + ds.id(i) + ".png";
        write_png(dir / rel, rgb);
        csv << ds.id(i) << "," << rel << "," << ds.label(i) << "," << ds.group_of(i, "group") << "\n";
    }
}

std::pair<Tensor, std::vector<int>> make_batch(const GroupedDataset& ds,
                                               const std::vector<std::size_t>& indices) {
    if (indices.empty()) throw ConfigError("empty batch");
    Tensor batch({indices.size(), 3, ds.height(), ds.width()});
    std::vector<int> labels(indices.size());
    const std::size_t stride = 3 * ds.height() * ds.width();
    for (std::size_t i = 0; i < indices.size(); ++i) {
        ds.write_chw3(indices[i], batch.data() + i * stride);
        labels[i] = ds.label(indices[i]);
    }
    return {std::move(batch), std::move(labels)};
}

}  // namespace insidebias::data
