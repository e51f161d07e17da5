#ifndef MAT_DATA_HPP
#define MAT_DATA_HPP

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mat/core/error.hpp"
#include "mat/core/rng.hpp"
#include "mat/core/tensor.hpp"
#include "mat/io.hpp"

namespace mat {

enum class Split { Train, Val, Test, All };

inline const char* split_name(Split s)
{
    switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
    case Split::All: return "all";
    }
    return "?";
}

struct Dataset {
    Batch inputs;  // one example per row, values in [0, 1]
    Labels labels;
    InputShape shape{};
    int classes{2};
    Split split{Split::All};
    std::string provenance;

    [[nodiscard]] std::size_t size() const noexcept { return labels.size(); }

    void validate() const
    {
        if (inputs.rows() != static_cast<Eigen::Index>(labels.size())) {
            throw ShapeError("dataset has " + std::to_string(inputs.rows()) + " inputs but " +
                             std::to_string(labels.size()) + " labels");
        }
        if (inputs.cols() != shape.dim()) {
            throw ShapeError("dataset rows do not match the declared input shape");
        }
        require_labels(labels, inputs.rows(), classes);
        if (inputs.size() > 0 && (inputs.minCoeff() < 0.0 || inputs.maxCoeff() > 1.0)) {
            throw ConfigError("dataset inputs must lie in [0, 1]");
        }
    }
};

inline Dataset subset(const Dataset& ds, std::span<const std::size_t> idx, Split tag)
{
    Dataset out;
    out.inputs = gather_rows(ds.inputs, idx);
    out.labels = gather_labels(ds.labels, idx);
    out.shape = ds.shape;
    out.classes = ds.classes;
    out.split = tag;
    out.provenance = ds.provenance;
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic data

// Two class-conditional Gaussians with diagonal covariance, centred at 0.5.
// Coordinate 0 carries a wide class gap with large noise; the remaining
// coordinates carry a narrow gap with small noise, so a natural classifier
// leans on features a small linf perturbation can flip.
// Label c in {0, 1} sets sign s = 2c - 1 and
//   x_0 = 0.5 + s * gap/2      + sigma * n
//   x_j = 0.5 + s * weak_gap/2 + weak_sigma * n   (j >= 1)
// clipped to [0, 1].
struct SyntheticParams {
    int dim{20};
    double gap{0.4};
    double sigma{0.2};
    double weak_gap{0.06};
    double weak_sigma{0.03};
    double spiral_noise{0.02};
    int image_size{8};
    int image_channels{1};
};

namespace detail {

inline Labels balanced_labels(std::size_t n, int classes, Rng& rng)
{
    Labels y(n);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = static_cast<int>(i % static_cast<std::size_t>(classes));
    }
    shuffle(y, rng);
    return y;
}

}  // namespace detail

// kind: "two-gaussians", "spirals" (2-D), or "bars" (image-shaped: horizontal vs vertical stripes).
inline Dataset make_synthetic(std::string_view kind, std::size_t n, std::uint64_t seed,
                              const SyntheticParams& params = {})
{
    if (n < 2) {
        throw ConfigError("synthetic dataset needs n >= 2");
    }
    Rng rng = substream(seed, "data/synthetic");
    Dataset ds;
    ds.classes = 2;
    ds.labels = detail::balanced_labels(n, 2, rng);
    ds.provenance = std::string(kind) + ":n=" + std::to_string(n) + ":seed=" + std::to_string(seed);
    const auto rows = static_cast<Eigen::Index>(n);

    if (kind == "two-gaussians") {
        if (params.dim < 1) {
            throw ConfigError("two-gaussians needs dim >= 1");
        }
        ds.shape = InputShape::flat(params.dim);
        ds.inputs.resize(rows, params.dim);
        for (Eigen::Index i = 0; i < rows; ++i) {
            const double s = ds.labels[static_cast<std::size_t>(i)] == 1 ? 1.0 : -1.0;
            ds.inputs(i, 0) = 0.5 + s * params.gap / 2.0 + params.sigma * standard_normal(rng);
            for (int j = 1; j < params.dim; ++j) {
                ds.inputs(i, j) = 0.5 + s * params.weak_gap / 2.0 + params.weak_sigma * standard_normal(rng);
            }
        }
    } else if (kind == "spirals") {
        ds.shape = InputShape::flat(2);
        ds.inputs.resize(rows, 2);
        for (Eigen::Index i = 0; i < rows; ++i) {
            const int c = ds.labels[static_cast<std::size_t>(i)];
            const double t = uniform01(rng);
            const double angle = 3.0 * std::numbers::pi * t + (c == 1 ? std::numbers::pi : 0.0);
            const double r = 0.05 + 0.4 * t;
            ds.inputs(i, 0) = 0.5 + r * std::cos(angle) + params.spiral_noise * standard_normal(rng);
            ds.inputs(i, 1) = 0.5 + r * std::sin(angle) + params.spiral_noise * standard_normal(rng);
        }
    } else if (kind == "bars") {
        const int s = params.image_size;
        const int ch = params.image_channels;
        if (s < 2 || ch < 1) {
            throw ConfigError("bars needs image_size >= 2 and image_channels >= 1");
        }
        ds.shape = InputShape::img(ch, s, s);
        ds.inputs.resize(rows, ds.shape.dim());
        for (Eigen::Index i = 0; i < rows; ++i) {
            const bool vertical = ds.labels[static_cast<std::size_t>(i)] == 1;
            const int phase = static_cast<int>(uniform_index(rng, 2));
            for (int c = 0; c < ch; ++c) {
                for (int yy = 0; yy < s; ++yy) {
                    for (int xx = 0; xx < s; ++xx) {
                        const int coord = vertical ? xx : yy;
                        const double base = (coord + phase) % 2 == 0 ? 0.7 : 0.3;
                        ds.inputs(i, c * s * s + yy * s + xx) = base + 0.1 * standard_normal(rng);
                    }
                }
            }
        }
    } else {
        throw ConfigError("unknown synthetic dataset '" + std::string(kind) + "'");
    }
    ds.inputs = clip01(std::move(ds.inputs));
    return ds;
}

// Seeded partition of [0, n) into train/val/test index sets.
struct SplitIndices {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
    std::vector<std::size_t> test;
};

inline SplitIndices split_indices(std::size_t n, double val_fraction, double test_fraction, Rng& rng)
{
    if (val_fraction < 0.0 || test_fraction < 0.0 || val_fraction + test_fraction >= 1.0) {
        throw ConfigError("split fractions must be non-negative and leave a training set");
    }
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) {
        idx[i] = i;
    }
    shuffle(idx, rng);
    const auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n)));
    const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
    SplitIndices s;
    s.val.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
    s.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_val),
                  idx.begin() + static_cast<std::ptrdiff_t>(n_val + n_test));
    s.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_val + n_test), idx.end());
    return s;
}

// ---------------------------------------------------------------------------
// Binary image batches: each record is one label byte followed by channel-major
// pixel bytes. A JSON manifest next to the batch files declares the layout.
//
//   {"classes": 10, "channels": 3, "height": 32, "width": 32, "records": 1000,
//    "files": ["data_batch_1.bin"], "digest": "<fnv1a64 hex of the concatenated files>"}

struct ImageManifest {
    int classes{0};
    int channels{0};
    int height{0};
    int width{0};
    std::size_t records{0};
    std::vector<std::string> files;
    std::string digest;

    [[nodiscard]] nlohmann::json to_json() const
    {
        return {{"classes", classes}, {"channels", channels}, {"height", height}, {"width", width},
                {"records", records}, {"files", files},       {"digest", digest}};
    }

    static ImageManifest from_json(const nlohmann::json& j)
    {
        ImageManifest m;
        try {
            m.classes = j.at("classes").get<int>();
            m.channels = j.at("channels").get<int>();
            m.height = j.at("height").get<int>();
            m.width = j.at("width").get<int>();
            m.records = j.at("records").get<std::size_t>();
            m.files = j.at("files").get<std::vector<std::string>>();
            m.digest = j.value("digest", std::string{});
        } catch (const nlohmann::json::exception& e) {
            throw ManifestError(std::string("malformed image manifest: ") + e.what());
        }
        if (m.classes < 2 || m.classes > 256 || m.channels < 1 || m.height < 1 || m.width < 1 || m.files.empty()) {
            throw ManifestError("image manifest declares an impossible layout");
        }
        return m;
    }
};

inline Dataset load_image_batches(const std::filesystem::path& dir, const std::filesystem::path& manifest_path = {})
{
    const auto mpath = manifest_path.empty() ? dir / "manifest.json" : manifest_path;
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(io::read_file(mpath));
    } catch (const nlohmann::json::parse_error& e) {
        throw ManifestError("unparseable manifest '" + mpath.string() + "': " + e.what());
    }
    const ImageManifest m = ImageManifest::from_json(j);

    std::string bytes;
    for (const auto& f : m.files) {
        bytes += io::read_file(dir / f);
    }
    if (!m.digest.empty() && io::hex_digest(bytes) != m.digest) {
        throw CorruptDataError("digest mismatch for image batches in '" + dir.string() + "'");
    }
    const auto pixels = static_cast<std::size_t>(m.channels * m.height * m.width);
    const std::size_t record = 1 + pixels;
    if (bytes.size() != m.records * record) {
        throw CorruptDataError("image batches hold " + std::to_string(bytes.size()) + " bytes, manifest implies " +
                               std::to_string(m.records * record));
    }
    Dataset ds;
    ds.shape = InputShape::img(m.channels, m.height, m.width);
    ds.classes = m.classes;
    ds.provenance = "image-batches:" + dir.string();
    ds.inputs.resize(static_cast<Eigen::Index>(m.records), static_cast<Eigen::Index>(pixels));
    ds.labels.resize(m.records);
    for (std::size_t r = 0; r < m.records; ++r) {
        const auto* rec = reinterpret_cast<const unsigned char*>(bytes.data() + r * record);
        if (rec[0] >= m.classes) {
            throw ManifestError("label byte " + std::to_string(rec[0]) + " in record " + std::to_string(r) +
                                " exceeds the declared class count");
        }
        ds.labels[r] = rec[0];
        for (std::size_t p = 0; p < pixels; ++p) {
            ds.inputs(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(p)) = rec[1 + p] / 255.0;
        }
    }
    return ds;
}

// Quantizes to bytes and writes one batch file plus manifest.json into `dir`.
inline ImageManifest write_image_batches(const Dataset& ds, const std::filesystem::path& dir,
                                         const std::string& file = "data_batch_1.bin")
{
    if (!ds.shape.image) {
        throw ConfigError("only image-shaped datasets can be written as image batches");
    }
    std::string bytes;
    bytes.reserve(ds.size() * static_cast<std::size_t>(1 + ds.shape.dim()));
    for (std::size_t r = 0; r < ds.size(); ++r) {
        bytes.push_back(static_cast<char>(ds.labels[r]));
        for (Eigen::Index p = 0; p < ds.inputs.cols(); ++p) {
            const double v = ds.inputs(static_cast<Eigen::Index>(r), p);
            bytes.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
        }
    }
    ImageManifest m{ds.classes, ds.shape.channels, ds.shape.height, ds.shape.width, ds.size(), {file},
                    io::hex_digest(bytes)};
    io::atomic_write(dir / file, bytes);
    io::atomic_write(dir / "manifest.json", m.to_json().dump(2) + "\n");
    return m;
}

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentOps {
    double flip_prob{0.5};
    int pad{4};  // random crop offsets in [-pad, pad], reflect padding
};

inline Eigen::RowVectorXd flip_horizontal(const Eigen::Ref<const Eigen::RowVectorXd>& row, InputShape s)
{
    Eigen::RowVectorXd out(row.size());
    for (int c = 0; c < s.channels; ++c) {
        for (int y = 0; y < s.height; ++y) {
            for (int x = 0; x < s.width; ++x) {
                const int base = c * s.height * s.width + y * s.width;
                out[base + x] = row[base + (s.width - 1 - x)];
            }
        }
    }
    return out;
}

namespace detail {

inline int reflect(int i, int n)
{
    if (n == 1) {
        return 0;
    }
    while (i < 0 || i >= n) {
        i = i < 0 ? -i : 2 * n - 2 - i;
    }
    return i;
}

}  // namespace detail

// Translates the image by (dy, dx) inside a reflect-padded canvas.
inline Eigen::RowVectorXd shift_crop(const Eigen::Ref<const Eigen::RowVectorXd>& row, InputShape s, int dy, int dx)
{
    Eigen::RowVectorXd out(row.size());
    for (int c = 0; c < s.channels; ++c) {
        for (int y = 0; y < s.height; ++y) {
            for (int x = 0; x < s.width; ++x) {
                const int sy = detail::reflect(y + dy, s.height);
                const int sx = detail::reflect(x + dx, s.width);
                out[c * s.height * s.width + y * s.width + x] = row[c * s.height * s.width + sy * s.width + sx];
            }
        }
    }
    return out;
}

// Random horizontal flip and pad-and-crop, one draw per example.
inline Batch augment(const Batch& batch, InputShape shape, const AugmentOps& ops, Rng& rng)
{
    const bool noop = ops.flip_prob <= 0.0 && ops.pad == 0;
    if (!shape.image) {
        if (noop) {
            return batch;
        }
        throw ConfigError("flip/crop augmentation needs image-shaped inputs");
    }
    if (ops.pad < 0 || ops.pad >= shape.height || ops.pad >= shape.width) {
        throw ConfigError("crop padding must lie in [0, image size)");
    }
    Batch out(batch.rows(), batch.cols());
    for (Eigen::Index i = 0; i < batch.rows(); ++i) {
        Eigen::RowVectorXd row = batch.row(i);
        if (ops.flip_prob > 0.0 && uniform01(rng) < ops.flip_prob) {
            row = flip_horizontal(row, shape);
        }
        if (ops.pad > 0) {
            const int span = 2 * ops.pad + 1;
            const int dy = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(span))) - ops.pad;
            const int dx = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(span))) - ops.pad;
            row = shift_crop(row, shape, dy, dx);
        }
        out.row(i) = row;
    }
    return out;
}

}  // namespace mat

#endif  // MAT_DATA_HPP
