#include "kdi/report.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "kdi/errors.hpp"

namespace kdi {

std::vector<std::uint8_t> pgm_bytes(const Tensor& map) {
    int h = 0, w = 0;
    if (map.rank() == 2) {
        h = map.dim(0), w = map.dim(1);
    } else if (map.rank() == 3 && map.dim(0) == 1) {
        h = map.dim(1), w = map.dim(2);
    } else {
        throw ShapeError("pgm: expected [H,W] or [1,H,W], got " + shape_str(map.shape));
    }
    if (h < 1 || w < 1) throw ShapeError("pgm: empty image");

    float lo = map[0], hi = map[0];
    for (std::int64_t i = 0; i < map.numel(); ++i) {
        const float v = map[i];
        if (!std::isfinite(v)) throw ParamError("pgm: non-finite value at index " + std::to_string(i));
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }

    std::ostringstream header;
    header << "P5\n" << w << " " << h << "\n255\n";
    const std::string head = header.str();
    std::vector<std::uint8_t> bytes(head.begin(), head.end());
    bytes.reserve(head.size() + std::size_t(h) * w);
    const double range = double(hi) - double(lo);
    for (std::int64_t i = 0; i < map.numel(); ++i) {
        double q = 0.0;
        if (range > 0.0) q = std::floor((double(map[i]) - lo) / range * 255.0 + 0.5);
        bytes.push_back(static_cast<std::uint8_t>(q));
    }
    return bytes;
}

void write_pgm(const std::string& path, const Tensor& map) {
    const std::vector<std::uint8_t> bytes = pgm_bytes(map);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("pgm: cannot open '" + path + "' for writing", 0);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("pgm: write failed for '" + path + "'", 0);
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open '" + path + "' for writing", 0);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw FormatError("write failed for '" + path + "'", 0);
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open '" + path + "'", 0);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace kdi
