#include "semcomm/label_map.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "semcomm/errors.hpp"

namespace semcomm {

LabelMap::LabelMap(int w, int h, std::uint8_t fill) : width(w), height(h) {
    if (w < 1 || h < 1) throw ShapeError("LabelMap extents must be >= 1");
    labels.assign(static_cast<std::size_t>(w) * h, fill);
}

void LabelMap::validate(int num_classes) const {
    for (std::uint8_t v : labels) {
        if (v >= num_classes) {
            throw ContractError("label " + std::to_string(int(v)) + " out of range, K=" +
                                std::to_string(num_classes));
        }
    }
}

Palette Palette::make_default(int num_classes) {
    Palette p;
    p.colors.reserve(static_cast<std::size_t>(num_classes));
    for (int i = 0; i < num_classes; ++i) {
        if (i == 0) {
            p.colors.push_back({0, 0, 0});  // background stays black
            continue;
        }
        // golden-angle hue walk, full saturation, alternating value
        const double h = std::fmod(i * 137.50776405, 360.0) / 60.0;
        const double v = (i % 2) ? 1.0 : 0.72;
        const double c = v;  // s = 1
        const double x = c * (1.0 - std::fabs(std::fmod(h, 2.0) - 1.0));
        double r = 0, g = 0, b = 0;
        switch (static_cast<int>(h)) {
            case 0: r = c; g = x; break;
            case 1: r = x; g = c; break;
            case 2: g = c; b = x; break;
            case 3: g = x; b = c; break;
            case 4: r = x; b = c; break;
            default: r = c; b = x; break;
        }
        p.colors.push_back({static_cast<std::uint8_t>(std::lround(r * 255)),
                            static_cast<std::uint8_t>(std::lround(g * 255)),
                            static_cast<std::uint8_t>(std::lround(b * 255))});
    }
    return p;
}

Palette Palette::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open palette file: " + path);
    Palette p;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        int idx, r, g, b;
        if (!(ls >> idx >> r >> g >> b)) throw FormatError("bad palette line: " + line);
        if (idx != static_cast<int>(p.colors.size())) {
            throw FormatError("palette indices must be consecutive from 0");
        }
        if (r < 0 || r > 255 || g < 0 || g > 255 || b < 0 || b > 255) {
            throw FormatError("palette channel out of [0,255]: " + line);
        }
        p.colors.push_back({static_cast<std::uint8_t>(r), static_cast<std::uint8_t>(g),
                            static_cast<std::uint8_t>(b)});
    }
    if (p.colors.empty()) throw FormatError("palette file has no entries: " + path);
    return p;
}

void Palette::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write palette file: " + path);
    for (std::size_t i = 0; i < colors.size(); ++i) {
        out << i << ' ' << int(colors[i][0]) << ' ' << int(colors[i][1]) << ' '
            << int(colors[i][2]) << '\n';
    }
}

Rgb Palette::color(int index) const {
    if (index < 0 || index >= static_cast<int>(colors.size())) {
        throw ContractError("palette index out of range: " + std::to_string(index));
    }
    return colors[static_cast<std::size_t>(index)];
}

Tensor colorize(const LabelMap& map, const Palette& palette) {
    Tensor out({3, map.height, map.width});
    for (int y = 0; y < map.height; ++y) {
        for (int x = 0; x < map.width; ++x) {
            const Rgb c = palette.color(map.at(y, x));
            for (int ch = 0; ch < 3; ++ch) out.at(ch, y, x) = static_cast<float>(c[ch]);
        }
    }
    return out;
}

LabelMap nearest_labels(const Tensor& rgb, const Palette& palette) {
    if (rgb.rank() != 3 || rgb.dim(0) != 3) throw ShapeError("nearest_labels wants 3xHxW");
    const int h = rgb.dim(1), w = rgb.dim(2);
    LabelMap out(w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double best = 1e30;
            int best_k = 0;
            for (std::size_t k = 0; k < palette.colors.size(); ++k) {
                const Rgb& c = palette.colors[k];
                double d = 0;
                for (int ch = 0; ch < 3; ++ch) {
                    const double e = rgb.at(ch, y, x) - c[ch];
                    d += e * e;
                }
                if (d < best) {
                    best = d;
                    best_k = static_cast<int>(k);
                }
            }
            out.at(y, x) = static_cast<std::uint8_t>(best_k);
        }
    }
    return out;
}

}  // namespace semcomm
