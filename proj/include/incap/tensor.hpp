#pragma once

#include <cstdint>
#include <map>
#include <numeric>
#include <string>
#include <vector>

namespace incap {

// Dense row-major array. Shape is bookkeeping only; all math indexes flat.
template <typename T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> v;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        v.assign(static_cast<size_t>(count(shape)), T(0));
    }

    static int64_t count(const std::vector<int>& s) {
        int64_t n = 1;
        for (int d : s) n *= d;
        return n;
    }

    int64_t size() const { return static_cast<int64_t>(v.size()); }

    bool operator==(const Tensor& o) const { return shape == o.shape && v == o.v; }
};

// Named parameters. std::map gives a stable (sorted) iteration order, which
// serialization, checksums and the optimizer all rely on.
template <typename T>
using ParamMap = std::map<std::string, Tensor<T>>;

template <typename T>
ParamMap<T> zeros_like(const ParamMap<T>& params) {
    ParamMap<T> out;
    for (const auto& [name, t] : params) out.emplace(name, Tensor<T>(t.shape));
    return out;
}

// FNV-1a over a byte view; used for checkpoint/pseudo-cache invalidation.
inline uint64_t fnv1a(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace incap
