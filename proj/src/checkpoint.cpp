#include "neurodec/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "neurodec/errors.hpp"

namespace neurodec {

namespace fs = std::filesystem;

const Tensor* Checkpoint::find(std::string_view name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return &t;
    return nullptr;
}

fs::path checkpoint_blob_path(const fs::path& manifest) {
    fs::path blob = manifest;
    blob += ".bin";
    return blob;
}

void write_f64_le(std::ostream& os, const double* data, std::size_t n) {
    if constexpr (std::endian::native == std::endian::little) {
        os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            auto bits = std::bit_cast<std::uint64_t>(data[i]);
            char bytes[8];
            for (int b = 0; b < 8; ++b) bytes[b] = static_cast<char>((bits >> (8 * b)) & 0xff);
            os.write(bytes, 8);
        }
    }
}

void read_f64_le(std::istream& is, double* data, std::size_t n) {
    if constexpr (std::endian::native == std::endian::little) {
        is.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            unsigned char bytes[8];
            is.read(reinterpret_cast<char*>(bytes), 8);
            std::uint64_t bits = 0;
            for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[b]) << (8 * b);
            data[i] = std::bit_cast<double>(bits);
        }
    }
    if (!is) throw FormatError("unexpected end of binary data");
}

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    nlohmann::json manifest;
    manifest["format"] = "neurodec-checkpoint";
    manifest["version"] = kCheckpointVersion;
    manifest["meta"] = ckpt.meta;
    manifest["tensors"] = nlohmann::json::array();

    const fs::path blob_path = checkpoint_blob_path(path);
    std::ofstream blob(blob_path, std::ios::binary | std::ios::trunc);
    if (!blob) throw FormatError("cannot write " + blob_path.string());
    std::size_t offset = 0;
    for (const auto& [name, t] : ckpt.tensors) {
        const std::size_t bytes = t.numel() * sizeof(double);
        manifest["tensors"].push_back({{"name", name},
                                       {"shape", t.shape()},
                                       {"dtype", "f64"},
                                       {"byte_offset", offset},
                                       {"byte_length", bytes}});
        write_f64_le(blob, t.data(), t.numel());
        offset += bytes;
    }
    if (!blob) throw FormatError("write failed for " + blob_path.string());

    std::ofstream out(path, std::ios::trunc);
    if (!out) throw FormatError("cannot write " + path.string());
    out << manifest.dump(2) << '\n';
}

Checkpoint load_checkpoint(const fs::path& path) {
    if (!fs::exists(path)) throw MissingArtifact("checkpoint not found: " + path.string());
    const fs::path blob_path = checkpoint_blob_path(path);
    if (!fs::exists(blob_path)) throw MissingArtifact("checkpoint blob not found: " + blob_path.string());

    nlohmann::json manifest;
    try {
        std::ifstream in(path);
        manifest = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("malformed checkpoint manifest " + path.string() + ": " + e.what());
    }
    if (manifest.value("format", "") != "neurodec-checkpoint") {
        throw FormatError(path.string() + " is not a checkpoint manifest");
    }
    if (manifest.value("version", -1) != kCheckpointVersion) {
        throw FormatError("checkpoint version mismatch in " + path.string());
    }

    const auto blob_size = fs::file_size(blob_path);
    std::ifstream blob(blob_path, std::ios::binary);
    Checkpoint ckpt;
    ckpt.meta = manifest.value("meta", nlohmann::json::object());
    try {
        for (const auto& entry : manifest.at("tensors")) {
            if (entry.at("dtype").get<std::string>() != "f64") throw FormatError("unsupported dtype");
            Shape shape = entry.at("shape").get<Shape>();
            const auto offset = entry.at("byte_offset").get<std::size_t>();
            const auto length = entry.at("byte_length").get<std::size_t>();
            if (length != shape_numel(shape) * sizeof(double) || offset + length > blob_size) {
                throw FormatError("tensor '" + entry.at("name").get<std::string>() + "' exceeds blob " +
                                  blob_path.string());
            }
            Tensor t(shape);
            blob.seekg(static_cast<std::streamoff>(offset));
            read_f64_le(blob, t.data(), t.numel());
            ckpt.tensors.emplace_back(entry.at("name").get<std::string>(), std::move(t));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("malformed tensor entry in " + path.string() + ": " + e.what());
    }
    return ckpt;
}

Checkpoint checkpoint_from(const ParamSet& params, nlohmann::json meta, std::string_view prefix) {
    Checkpoint ckpt;
    ckpt.meta = std::move(meta);
    for (const auto& p : params.items()) ckpt.tensors.emplace_back(std::string(prefix) + p.name, p.var.value());
    return ckpt;
}

void restore_params(const Checkpoint& ckpt, const ParamSet& params, std::string_view prefix) {
    for (const auto& p : params.items()) {
        const std::string key = std::string(prefix) + p.name;
        const Tensor* t = ckpt.find(key);
        if (!t) throw FormatError("checkpoint lacks parameter '" + key + "'");
        if (t->shape() != p.var.shape()) {
            throw ShapeError("checkpoint parameter '" + key + "' has shape " + shape_str(t->shape()) +
                             ", model expects " + shape_str(p.var.shape()));
        }
        Var v = p.var;
        v.mutable_value() = *t;
    }
}

}  // namespace neurodec
