#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "semcomm/params.hpp"
#include "semcomm/tensor.hpp"

namespace semcomm {

// SCWT weight container, little-endian:
//
//   "SCWT" | u32 version=1 | u32 tensor_count
//   per tensor:
//     u16 name_len | name bytes (UTF-8)
//     u8 dtype (0 = f32, 1 = i8) | u8 ndim | u32 dims[ndim]
//     raw data (f32 or i8)
//     dtype 1 only: f32 scale | i32 zero_point

struct WeightRecord {
    std::string name;
    std::uint8_t dtype = 0;  // 0 f32, 1 i8
    std::vector<int> shape;
    std::vector<float> f32;        // dtype 0
    std::vector<std::int8_t> i8;   // dtype 1
    float scale = 1.0f;            // dtype 1
    std::int32_t zero_point = 0;   // dtype 1
    bool trainable = true;         // not serialized; set by naming convention

    std::int64_t numel() const;
};

struct WeightFile {
    std::vector<WeightRecord> records;

    const WeightRecord* find(const std::string& name) const;
    // Bytes of tensor payload only (no header, names, dims or quant params).
    std::int64_t parameter_data_bytes() const;
};

void save_weights(const std::string& path, const WeightFile& wf);
WeightFile load_weights(const std::string& path);

// Running statistics (name ending in ".running_mean"/".running_var") are
// restored as non-trainable entries.
WeightFile to_weight_file(const ParamStore& store);
void load_into_store(const WeightFile& wf, ParamStore& store);

std::int64_t file_size_bytes(const std::string& path);

}  // namespace semcomm
