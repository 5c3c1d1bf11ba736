#include "semcomm/weights_io.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "semcomm/errors.hpp"

namespace semcomm {

namespace {

constexpr char kMagic[4] = {'S', 'C', 'W', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& os, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));  // little-endian host
}

template <typename T>
T take(std::istream& is) {
    T v;
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw FormatError("SCWT: truncated file");
    return v;
}

bool is_running_stat(const std::string& name) {
    return name.ends_with(".running_mean") || name.ends_with(".running_var");
}

}  // namespace

std::int64_t WeightRecord::numel() const {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

const WeightRecord* WeightFile::find(const std::string& name) const {
    for (const auto& r : records) {
        if (r.name == name) return &r;
    }
    return nullptr;
}

std::int64_t WeightFile::parameter_data_bytes() const {
    std::int64_t bytes = 0;
    for (const auto& r : records) {
        bytes += r.numel() * (r.dtype == 0 ? 4 : 1);
    }
    return bytes;
}

void save_weights(const std::string& path, const WeightFile& wf) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write weights file: " + path);
    os.write(kMagic, 4);
    put<std::uint32_t>(os, kVersion);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(wf.records.size()));
    for (const auto& r : wf.records) {
        if (r.name.size() > 0xFFFF) throw FormatError("SCWT: tensor name too long");
        put<std::uint16_t>(os, static_cast<std::uint16_t>(r.name.size()));
        os.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
        put<std::uint8_t>(os, r.dtype);
        put<std::uint8_t>(os, static_cast<std::uint8_t>(r.shape.size()));
        for (int d : r.shape) put<std::uint32_t>(os, static_cast<std::uint32_t>(d));
        if (r.dtype == 0) {
            if (static_cast<std::int64_t>(r.f32.size()) != r.numel()) {
                throw ContractError("SCWT: f32 payload size mismatch for " + r.name);
            }
            os.write(reinterpret_cast<const char*>(r.f32.data()),
                     static_cast<std::streamsize>(r.f32.size() * 4));
        } else if (r.dtype == 1) {
            if (static_cast<std::int64_t>(r.i8.size()) != r.numel()) {
                throw ContractError("SCWT: i8 payload size mismatch for " + r.name);
            }
            os.write(reinterpret_cast<const char*>(r.i8.data()),
                     static_cast<std::streamsize>(r.i8.size()));
            put<float>(os, r.scale);
            put<std::int32_t>(os, r.zero_point);
        } else {
            throw ContractError("SCWT: unknown dtype");
        }
    }
    if (!os) throw IoError("write failed: " + path);
}

WeightFile load_weights(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open weights file: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) {
        throw FormatError("SCWT: bad magic in " + path);
    }
    const auto version = take<std::uint32_t>(is);
    if (version != kVersion) throw FormatError("SCWT: unsupported version");
    const auto count = take<std::uint32_t>(is);

    WeightFile wf;
    wf.records.reserve(count);
    for (std::uint32_t t = 0; t < count; ++t) {
        WeightRecord r;
        const auto name_len = take<std::uint16_t>(is);
        r.name.resize(name_len);
        is.read(r.name.data(), name_len);
        if (!is) throw FormatError("SCWT: truncated name");
        r.dtype = take<std::uint8_t>(is);
        if (r.dtype > 1) throw FormatError("SCWT: unknown dtype for " + r.name);
        const auto ndim = take<std::uint8_t>(is);
        if (ndim == 0) throw FormatError("SCWT: zero-rank tensor " + r.name);
        r.shape.resize(ndim);
        for (auto& d : r.shape) {
            const auto v = take<std::uint32_t>(is);
            if (v == 0 || v > (1u << 24)) throw FormatError("SCWT: bad extent in " + r.name);
            d = static_cast<int>(v);
        }
        const std::int64_t n = r.numel();
        if (r.dtype == 0) {
            r.f32.resize(static_cast<std::size_t>(n));
            is.read(reinterpret_cast<char*>(r.f32.data()),
                    static_cast<std::streamsize>(n * 4));
        } else {
            r.i8.resize(static_cast<std::size_t>(n));
            is.read(reinterpret_cast<char*>(r.i8.data()), static_cast<std::streamsize>(n));
            if (!is) throw FormatError("SCWT: truncated tensor data");
            r.scale = take<float>(is);
            r.zero_point = take<std::int32_t>(is);
        }
        if (!is) throw FormatError("SCWT: truncated tensor data");
        r.trainable = !is_running_stat(r.name);
        wf.records.push_back(std::move(r));
    }
    return wf;
}

WeightFile to_weight_file(const ParamStore& store) {
    WeightFile wf;
    wf.records.reserve(store.size());
    for (const auto& [name, e] : store.entries()) {
        WeightRecord r;
        r.name = name;
        r.dtype = 0;
        r.shape = e.value.shape;
        r.f32 = e.value.data;
        r.trainable = e.trainable;
        wf.records.push_back(std::move(r));
    }
    return wf;
}

void load_into_store(const WeightFile& wf, ParamStore& store) {
    for (const auto& r : wf.records) {
        if (r.dtype != 0) {
            throw ContractError("load_into_store: float model expected, got i8 tensor " +
                                r.name + " (dequantize first)");
        }
        Tensor t = Tensor::from(r.shape, r.f32);
        if (store.contains(r.name)) {
            Tensor& dst = store.value(r.name);
            if (dst.shape != t.shape) {
                throw ShapeError("weights: shape mismatch for " + r.name);
            }
            dst = std::move(t);
        } else {
            store.create(r.name, std::move(t), !is_running_stat(r.name));
        }
    }
}

std::int64_t file_size_bytes(const std::string& path) {
    std::error_code ec;
    const auto n = std::filesystem::file_size(path, ec);
    if (ec) throw IoError("cannot stat file: " + path);
    return static_cast<std::int64_t>(n);
}

}  // namespace semcomm
