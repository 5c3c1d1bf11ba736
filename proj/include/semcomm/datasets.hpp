#pragma once

#include <vector>

#include "semcomm/label_map.hpp"
#include "semcomm/tensor.hpp"

namespace semcomm {

// Synthetic scenes for the desk-scale experiments: a textured background
// (class 0) with axis-aligned rectangles (class 1) and filled disks
// (class 2), each class drawn from its own color family plus pixel noise.
struct SynthSample {
    Tensor image;  // 3xSxS, [0,255]
    LabelMap labels;
};

SynthSample make_shapes_sample(Rng& rng, int size);
std::vector<SynthSample> make_shapes_dataset(Rng& rng, int count, int size);

// Fixed invertible color transform (channel rotation plus offset) defining
// the second domain of the unpaired translation task.
Tensor remap_colors(const Tensor& rgb);

// [0,255] -> [-1,1] and back, the generator's working range.
Tensor to_unit_range(const Tensor& rgb255);
Tensor from_unit_range(const Tensor& unit);

}  // namespace semcomm
