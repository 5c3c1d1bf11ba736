#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "semcomm/tensor.hpp"

namespace semcomm {

// Per-pixel class indices, the semantic image produced by the transmitter.
struct LabelMap {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> labels;  // row-major, height*width entries

    LabelMap() = default;
    LabelMap(int w, int h, std::uint8_t fill = 0);

    std::uint8_t at(int y, int x) const {
        return labels[static_cast<std::size_t>(y) * width + x];
    }
    std::uint8_t& at(int y, int x) { return labels[static_cast<std::size_t>(y) * width + x]; }
    std::int64_t pixels() const { return static_cast<std::int64_t>(width) * height; }

    bool operator==(const LabelMap& other) const = default;
    // throws ContractError if any label >= num_classes
    void validate(int num_classes) const;
};

using Rgb = std::array<std::uint8_t, 3>;

// Class color palette used to render label maps and to feed the restorer
// (the generator consumes 3-channel images). The default palette is a fixed
// deterministic function of the class index.
struct Palette {
    std::vector<Rgb> colors;

    static Palette make_default(int num_classes);
    static Palette load(const std::string& path);  // "index R G B" lines
    void save(const std::string& path) const;
    Rgb color(int index) const;
};

// LabelMap -> 3xHxW tensor with values in [0,255].
Tensor colorize(const LabelMap& map, const Palette& palette);

// Nearest-palette-color inverse of colorize, used on restored images when a
// label-domain metric is wanted. Exact on images produced by colorize.
LabelMap nearest_labels(const Tensor& rgb, const Palette& palette);

}  // namespace semcomm
