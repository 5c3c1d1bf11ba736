#pragma once

#include <string>

#include "semcomm/label_map.hpp"
#include "semcomm/tensor.hpp"

namespace semcomm {

// Binary NetPBM with maxval 255. PPM P6 carries RGB images as 3xHxW tensors
// in [0,255]; PGM P5 carries label maps (one class index per pixel).

Tensor read_ppm(const std::string& path);
void write_ppm(const std::string& path, const Tensor& rgb);  // values clamped+rounded

LabelMap read_pgm(const std::string& path);
void write_pgm(const std::string& path, const LabelMap& map);

}  // namespace semcomm
