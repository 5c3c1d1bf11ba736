#include "semcomm/datasets.hpp"

#include <algorithm>
#include <cmath>

namespace semcomm {

namespace {

struct ColorFamily {
    float base[3];
    float jitter;
};

// background bluish-gray, rectangles warm, disks green
constexpr ColorFamily kFamilies[3] = {
    {{60.0f, 70.0f, 90.0f}, 10.0f},
    {{200.0f, 110.0f, 60.0f}, 18.0f},
    {{70.0f, 180.0f, 90.0f}, 18.0f},
};

void paint(Tensor& img, int y, int x, const float rgb[3]) {
    for (int c = 0; c < 3; ++c) img.at(c, y, x) = rgb[c];
}

}  // namespace

SynthSample make_shapes_sample(Rng& rng, int size) {
    SynthSample s{Tensor({3, size, size}), LabelMap(size, size, 0)};

    float bg[3];
    for (int c = 0; c < 3; ++c) {
        bg[c] = kFamilies[0].base[c] + static_cast<float>(rng.uniform(-1, 1)) * kFamilies[0].jitter;
    }
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) paint(s.image, y, x, bg);
    }

    const int n_rect = 1 + static_cast<int>(rng.below(3));
    for (int i = 0; i < n_rect; ++i) {
        const int w = size / 8 + static_cast<int>(rng.below(static_cast<std::uint64_t>(size) / 3));
        const int h = size / 8 + static_cast<int>(rng.below(static_cast<std::uint64_t>(size) / 3));
        const int x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(size - w)));
        const int y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(size - h)));
        float col[3];
        for (int c = 0; c < 3; ++c) {
            col[c] = kFamilies[1].base[c] +
                     static_cast<float>(rng.uniform(-1, 1)) * kFamilies[1].jitter;
        }
        for (int y = y0; y < y0 + h; ++y) {
            for (int x = x0; x < x0 + w; ++x) {
                paint(s.image, y, x, col);
                s.labels.at(y, x) = 1;
            }
        }
    }

    const int n_disk = 1 + static_cast<int>(rng.below(3));
    for (int i = 0; i < n_disk; ++i) {
        const int r = size / 10 + static_cast<int>(rng.below(static_cast<std::uint64_t>(size) / 6));
        const int cx = r + static_cast<int>(rng.below(static_cast<std::uint64_t>(size - 2 * r)));
        const int cy = r + static_cast<int>(rng.below(static_cast<std::uint64_t>(size - 2 * r)));
        float col[3];
        for (int c = 0; c < 3; ++c) {
            col[c] = kFamilies[2].base[c] +
                     static_cast<float>(rng.uniform(-1, 1)) * kFamilies[2].jitter;
        }
        for (int y = cy - r; y <= cy + r; ++y) {
            for (int x = cx - r; x <= cx + r; ++x) {
                if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r) {
                    paint(s.image, y, x, col);
                    s.labels.at(y, x) = 2;
                }
            }
        }
    }

    // pixel noise over the whole frame
    for (float& v : s.image.data) {
        v = std::clamp(v + static_cast<float>(rng.uniform(-12, 12)), 0.0f, 255.0f);
    }
    return s;
}

std::vector<SynthSample> make_shapes_dataset(Rng& rng, int count, int size) {
    std::vector<SynthSample> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) out.push_back(make_shapes_sample(rng, size));
    return out;
}

Tensor remap_colors(const Tensor& rgb) {
    if (rgb.rank() != 3 || rgb.dim(0) != 3) throw ShapeError("remap_colors wants 3xHxW");
    Tensor out(rgb.shape);
    const std::size_t hw = static_cast<std::size_t>(rgb.dim(1)) * rgb.dim(2);
    for (std::size_t p = 0; p < hw; ++p) {
        const float r = rgb.data[p], g = rgb.data[hw + p], b = rgb.data[2 * hw + p];
        out.data[p] = std::clamp(0.85f * b + 30.0f, 0.0f, 255.0f);
        out.data[hw + p] = std::clamp(0.85f * r + 10.0f, 0.0f, 255.0f);
        out.data[2 * hw + p] = std::clamp(0.85f * g + 20.0f, 0.0f, 255.0f);
    }
    return out;
}

Tensor to_unit_range(const Tensor& rgb255) {
    Tensor out(rgb255.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] = rgb255.data[i] / 127.5f - 1.0f;
    }
    return out;
}

Tensor from_unit_range(const Tensor& unit) {
    Tensor out(unit.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] = (unit.data[i] + 1.0f) * 127.5f;
    }
    return out;
}

}  // namespace semcomm
