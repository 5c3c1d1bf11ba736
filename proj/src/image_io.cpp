#include "semcomm/image_io.hpp"

#include <cmath>
#include <fstream>

#include "semcomm/errors.hpp"

namespace semcomm {

namespace {

// header token reader: skips whitespace and '#' comment lines
int next_header_int(std::istream& is, const std::string& path) {
    int c;
    while ((c = is.get()) != EOF) {
        if (c == '#') {
            while ((c = is.get()) != EOF && c != '\n') {}
        } else if (!std::isspace(c)) {
            break;
        }
    }
    if (c == EOF) throw FormatError("truncated NetPBM header: " + path);
    long v = 0;
    bool any = false;
    while (c != EOF && std::isdigit(c)) {
        v = v * 10 + (c - '0');
        any = true;
        if (v > 1 << 24) throw FormatError("NetPBM extent implausible: " + path);
        c = is.get();
    }
    if (!any) throw FormatError("malformed NetPBM header: " + path);
    return static_cast<int>(v);
}

void read_header(std::istream& is, const std::string& path, const char* magic, int& w, int& h) {
    char m[2];
    is.read(m, 2);
    if (!is || m[0] != magic[0] || m[1] != magic[1]) {
        throw FormatError("bad NetPBM magic in " + path);
    }
    w = next_header_int(is, path);
    h = next_header_int(is, path);
    const int maxval = next_header_int(is, path);
    if (w < 1 || h < 1) throw FormatError("bad NetPBM extents in " + path);
    if (maxval != 255) throw FormatError("only maxval 255 NetPBM is supported: " + path);
    // exactly one whitespace byte separates header and raster
}

std::uint8_t to_byte(float v) {
    const float r = std::round(v);
    if (r <= 0.0f) return 0;
    if (r >= 255.0f) return 255;
    return static_cast<std::uint8_t>(r);
}

}  // namespace

Tensor read_ppm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open image: " + path);
    int w, h;
    read_header(is, path, "P6", w, h);
    std::vector<std::uint8_t> raw(static_cast<std::size_t>(w) * h * 3);
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!is) throw FormatError("truncated PPM raster: " + path);
    Tensor t({3, h, w});
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    for (std::size_t p = 0; p < hw; ++p) {
        for (int c = 0; c < 3; ++c) {
            t.data[c * hw + p] = static_cast<float>(raw[p * 3 + static_cast<std::size_t>(c)]);
        }
    }
    return t;
}

void write_ppm(const std::string& path, const Tensor& rgb) {
    if (rgb.rank() != 3 || rgb.dim(0) != 3) throw ShapeError("write_ppm wants 3xHxW");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write image: " + path);
    const int h = rgb.dim(1), w = rgb.dim(2);
    os << "P6\n" << w << ' ' << h << "\n255\n";
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    std::vector<std::uint8_t> raw(hw * 3);
    for (std::size_t p = 0; p < hw; ++p) {
        for (int c = 0; c < 3; ++c) {
            raw[p * 3 + static_cast<std::size_t>(c)] = to_byte(rgb.data[c * hw + p]);
        }
    }
    os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!os) throw IoError("write failed: " + path);
}

LabelMap read_pgm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open image: " + path);
    int w, h;
    read_header(is, path, "P5", w, h);
    LabelMap map(w, h);
    is.read(reinterpret_cast<char*>(map.labels.data()),
            static_cast<std::streamsize>(map.labels.size()));
    if (!is) throw FormatError("truncated PGM raster: " + path);
    return map;
}

void write_pgm(const std::string& path, const LabelMap& map) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write image: " + path);
    os << "P5\n" << map.width << ' ' << map.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(map.labels.data()),
             static_cast<std::streamsize>(map.labels.size()));
    if (!os) throw IoError("write failed: " + path);
}

}  // namespace semcomm
