#include "semcomm/tensor.hpp"

#include <cmath>
#include <cstdlib>
#include <functional>
#include <sstream>
#include <thread>

namespace semcomm {

Tensor::Tensor(std::vector<int> s, float fill) : shape(std::move(s)) {
    const std::int64_t n = numel_of(shape);
    data.assign(static_cast<std::size_t>(n), fill);
}

Tensor Tensor::from(std::vector<int> s, std::vector<float> values) {
    if (numel_of(s) != static_cast<std::int64_t>(values.size())) {
        throw ShapeError("Tensor::from: value count does not match shape");
    }
    Tensor t;
    t.shape = std::move(s);
    t.data = std::move(values);
    return t;
}

std::int64_t numel_of(const std::vector<int>& shape) {
    if (shape.empty()) throw ShapeError("tensor shape must have at least one extent");
    std::int64_t n = 1;
    for (int d : shape) {
        if (d < 1) throw ShapeError("tensor extents must be >= 1");
        n *= d;
    }
    return n;
}

bool Tensor::all_finite() const {
    for (float v : data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* where) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(where) + ": shape mismatch " + a.shape_str() + " vs " +
                         b.shape_str());
    }
}

Tensor random_tensor(Rng& rng, std::vector<int> shape, float lo, float hi) {
    Tensor t(std::move(shape));
    for (float& v : t.data) v = static_cast<float>(rng.uniform(lo, hi));
    return t;
}

Tensor gaussian_tensor(Rng& rng, std::vector<int> shape, float stddev) {
    Tensor t(std::move(shape));
    for (float& v : t.data) v = static_cast<float>(rng.gaussian() * stddev);
    return t;
}

int thread_count() {
    static const int n = [] {
        const char* env = std::getenv("SEMCOMM_THREADS");
        if (!env) return 0;
        const int v = std::atoi(env);
        return v > 0 ? v : 0;
    }();
    return n;
}

void parallel_for(int n, const std::function<void(int, int)>& body) {
    const int workers = thread_count();
    if (workers <= 1 || n < 2 * workers) {
        body(0, n);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    const int chunk = (n + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
        const int lo = w * chunk;
        const int hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&body, lo, hi] { body(lo, hi); });
    }
    for (auto& t : pool) t.join();
}

}  // namespace semcomm
