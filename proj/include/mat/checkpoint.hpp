#ifndef MAT_CHECKPOINT_HPP
#define MAT_CHECKPOINT_HPP

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "mat/core/classifier.hpp"
#include "mat/core/error.hpp"
#include "mat/core/optim.hpp"
#include "mat/core/rng.hpp"
#include "mat/io.hpp"

namespace mat {

static_assert(std::endian::native == std::endian::little, "checkpoint payloads are written little-endian");

// Container layout:
//   "MATCKPT\n" | u64 header length (LE) | header JSON | raw float64 arrays
// The header lists every array (parameters, then momentum buffers) with its
// shape; "digest" is FNV-1a-64 over the header serialized without the digest
// field followed by the payload.
inline constexpr std::string_view kCheckpointMagic = "MATCKPT\n";
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
    int format_version{kCheckpointVersion};
    std::string architecture;
    InputShape shape{};
    int classes{0};
    Parameters params;
    OptimState optim;
    int epoch{0};
    std::string rng_state;
    std::string digest;

    // Rebuilds the classifier with the stored parameters.
    [[nodiscard]] Classifier classifier() const
    {
        Rng unused{0};
        Classifier c = Classifier::build(architecture, shape, classes, unused);
        if (c.parameters().size() != params.size()) {
            throw CorruptDataError("checkpoint parameter count does not match architecture '" + architecture + "'");
        }
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (c.parameters()[i].rows() != params[i].rows() || c.parameters()[i].cols() != params[i].cols()) {
                throw CorruptDataError("checkpoint parameter " + std::to_string(i) + " has the wrong shape");
            }
            c.parameters()[i] = params[i];
        }
        return c;
    }
};

namespace detail {

inline nlohmann::json shape_json(InputShape s)
{
    return {{"channels", s.channels}, {"height", s.height}, {"width", s.width}, {"image", s.image}};
}

inline InputShape shape_from_json(const nlohmann::json& j)
{
    return {j.at("channels").get<int>(), j.at("height").get<int>(), j.at("width").get<int>(),
            j.at("image").get<bool>()};
}

inline void append_array(std::string& payload, nlohmann::json& arrays, const std::string& name,
                         const Eigen::MatrixXd& m)
{
    arrays.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
    const auto bytes = static_cast<std::size_t>(m.size()) * sizeof(double);
    const auto offset = payload.size();
    payload.resize(offset + bytes);
    std::memcpy(payload.data() + offset, m.data(), bytes);
}

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& c)
{
    nlohmann::json h;
    h["format_version"] = c.format_version;
    h["architecture"] = c.architecture;
    h["input_shape"] = detail::shape_json(c.shape);
    h["classes"] = c.classes;
    h["epoch"] = c.epoch;
    h["rng_state"] = c.rng_state;
    h["optim"] = {{"learning_rate", c.optim.learning_rate}, {"momentum", c.optim.momentum},
                  {"weight_decay", c.optim.weight_decay},   {"milestones", c.optim.milestones},
                  {"factor", c.optim.factor}};
    std::string payload;
    nlohmann::json arrays = nlohmann::json::array();
    for (std::size_t i = 0; i < c.params.size(); ++i) {
        detail::append_array(payload, arrays, "param" + std::to_string(i), c.params[i]);
    }
    for (std::size_t i = 0; i < c.optim.velocity.size(); ++i) {
        detail::append_array(payload, arrays, "velocity" + std::to_string(i), c.optim.velocity[i]);
    }
    h["arrays"] = arrays;
    const std::string digest = io::hex_digest(h.dump() + payload);
    h["digest"] = digest;
    const std::string header = h.dump();

    std::string out(kCheckpointMagic);
    const std::uint64_t len = header.size();
    out.append(reinterpret_cast<const char*>(&len), sizeof len);
    out += header;
    out += payload;
    return out;
}

inline Checkpoint decode_checkpoint(std::string_view bytes, const std::string& origin = "checkpoint")
{
    if (bytes.size() < kCheckpointMagic.size() + sizeof(std::uint64_t) ||
        bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic) {
        throw CorruptDataError(origin + ": not a checkpoint file");
    }
    std::uint64_t len = 0;
    std::memcpy(&len, bytes.data() + kCheckpointMagic.size(), sizeof len);
    const std::size_t header_start = kCheckpointMagic.size() + sizeof len;
    if (len > bytes.size() - header_start) {
        throw CorruptDataError(origin + ": truncated header");
    }
    nlohmann::json h;
    try {
        h = nlohmann::json::parse(bytes.substr(header_start, len));
    } catch (const nlohmann::json::parse_error&) {
        throw CorruptDataError(origin + ": unreadable header");
    }
    const std::string_view payload = bytes.substr(header_start + len);

    Checkpoint c;
    try {
        c.format_version = h.at("format_version").get<int>();
        if (c.format_version != kCheckpointVersion) {
            throw FormatVersionError(origin + ": format version " + std::to_string(c.format_version) +
                                     " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
        }
        c.digest = h.at("digest").get<std::string>();
        nlohmann::json body = h;
        body.erase("digest");
        if (io::hex_digest(body.dump() + std::string(payload)) != c.digest) {
            throw CorruptDataError(origin + ": digest mismatch");
        }
        c.architecture = h.at("architecture").get<std::string>();
        c.shape = detail::shape_from_json(h.at("input_shape"));
        c.classes = h.at("classes").get<int>();
        c.epoch = h.at("epoch").get<int>();
        c.rng_state = h.at("rng_state").get<std::string>();
        const auto& o = h.at("optim");
        c.optim.learning_rate = o.at("learning_rate").get<double>();
        c.optim.momentum = o.at("momentum").get<double>();
        c.optim.weight_decay = o.at("weight_decay").get<double>();
        c.optim.milestones = o.at("milestones").get<std::vector<int>>();
        c.optim.factor = o.at("factor").get<double>();
        std::size_t offset = 0;
        for (const auto& a : h.at("arrays")) {
            const auto rows = a.at("rows").get<Eigen::Index>();
            const auto cols = a.at("cols").get<Eigen::Index>();
            const auto n = static_cast<std::size_t>(rows * cols) * sizeof(double);
            if (rows < 0 || cols < 0 || offset + n > payload.size()) {
                throw CorruptDataError(origin + ": truncated payload");
            }
            Eigen::MatrixXd m(rows, cols);
            std::memcpy(m.data(), payload.data() + offset, n);
            offset += n;
            const auto name = a.at("name").get<std::string>();
            (name.starts_with("velocity") ? c.optim.velocity : c.params).push_back(std::move(m));
        }
        if (offset != payload.size()) {
            throw CorruptDataError(origin + ": trailing bytes after payload");
        }
    } catch (const nlohmann::json::exception& e) {
        throw CorruptDataError(origin + ": malformed header (" + e.what() + ")");
    }
    return c;
}

inline Checkpoint make_checkpoint(const Classifier& model, const OptimState& optim, int epoch, const Rng& rng)
{
    Checkpoint c;
    c.architecture = model.architecture();
    c.shape = model.input_shape();
    c.classes = model.classes();
    c.params = model.parameters();
    c.optim = optim;
    c.epoch = epoch;
    c.rng_state = rng_state(rng);
    return c;
}

inline void save_checkpoint(const Classifier& model, const OptimState& optim, int epoch, const Rng& rng,
                            const std::filesystem::path& path)
{
    io::atomic_write(path, encode_checkpoint(make_checkpoint(model, optim, epoch, rng)));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path)
{
    if (!std::filesystem::exists(path)) {
        throw ConfigError("checkpoint '" + path.string() + "' does not exist");
    }
    return decode_checkpoint(io::read_file(path), path.string());
}

}  // namespace mat

#endif  // MAT_CHECKPOINT_HPP
