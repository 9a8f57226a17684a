#include "neurodec/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <vector>

#include "neurodec/errors.hpp"

namespace neurodec {

namespace {

unsigned char to_byte(double v) {
    return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

void write_ppm(const std::filesystem::path& path, const Tensor& image, std::size_t h, std::size_t w) {
    if (image.numel() != h * w * 3) throw ShapeError("write_ppm: expected " + std::to_string(h * w * 3) + " values");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("write_ppm: cannot open " + path.string());
    os << "P6\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> bytes(image.numel());
    for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = to_byte(image[i]);
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Tensor read_ppm(const std::filesystem::path& path, std::size_t& h, std::size_t& w) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw MissingArtifact("image not found: " + path.string());
    std::string magic;
    std::size_t maxval = 0;
    is >> magic >> w >> h >> maxval;
    if (magic != "P6" || maxval != 255 || w == 0 || h == 0) throw FormatError("read_ppm: unsupported header in " + path.string());
    is.get();
    std::vector<unsigned char> bytes(h * w * 3);
    is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (static_cast<std::size_t>(is.gcount()) != bytes.size()) throw FormatError("read_ppm: truncated " + path.string());
    Tensor out({h * w, 3});
    for (std::size_t i = 0; i < bytes.size(); ++i) out[i] = bytes[i] / 255.0;
    return out;
}

Tensor quantize_8bit(const Tensor& image) {
    Tensor out = image;
    for (auto& v : out.values()) v = to_byte(v) / 255.0;
    return out;
}

}  // namespace neurodec
