#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "semcomm/errors.hpp"

namespace semcomm {

// Dense 32-bit float tensor, row-major. Canonical image layout is
// channels x height x width; rank-1 tensors are used for biases and
// rank-4 for convolution kernels [F,C,kh,kw].
struct Tensor {
    std::vector<int> shape;
    std::vector<float> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s, float fill = 0.0f);
    static Tensor from(std::vector<int> s, std::vector<float> values);

    int rank() const { return static_cast<int>(shape.size()); }
    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
    bool same_shape(const Tensor& other) const { return shape == other.shape; }

    // rank-3 accessors (C,H,W)
    float& at(int c, int i, int j) {
        return data[(static_cast<std::size_t>(c) * shape[1] + i) * shape[2] + j];
    }
    float at(int c, int i, int j) const {
        return data[(static_cast<std::size_t>(c) * shape[1] + i) * shape[2] + j];
    }
    // rank-4 accessors (F,C,kh,kw)
    float& at4(int f, int c, int u, int v) {
        return data[((static_cast<std::size_t>(f) * shape[1] + c) * shape[2] + u) * shape[3] + v];
    }
    float at4(int f, int c, int u, int v) const {
        return data[((static_cast<std::size_t>(f) * shape[1] + c) * shape[2] + u) * shape[3] + v];
    }

    bool all_finite() const;
    std::string shape_str() const;
};

std::int64_t numel_of(const std::vector<int>& shape);
void check_same_shape(const Tensor& a, const Tensor& b, const char* where);

// Deterministic RNG used everywhere randomness is needed. The engine is
// std::mt19937_64 (bit-reproducible across platforms); uniforms come from a
// fixed 53-bit mapping and gaussians from the Marsaglia polar method, so the
// realized streams depend only on the seed, never on the standard library.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // [0,1)
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // integer in [0, n)
    std::uint64_t below(std::uint64_t n) { return gen_() % n; }

    // standard normal, Marsaglia polar
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double m = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * m;
        has_spare_ = true;
        return u * m;
    }

  private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

Tensor random_tensor(Rng& rng, std::vector<int> shape, float lo = -1.0f, float hi = 1.0f);
Tensor gaussian_tensor(Rng& rng, std::vector<int> shape, float stddev);

// Worker count for tensor-op inner parallelism. Reads SEMCOMM_THREADS once;
// unset or 0 means the strict single-threaded deterministic mode.
int thread_count();

// Splits [0,n) into contiguous chunks across workers. Falls through to a
// plain loop in single-threaded mode. Output regions must be disjoint per
// index, which keeps results identical regardless of the worker count.
void parallel_for(int n, const std::function<void(int, int)>& body);

}  // namespace semcomm
