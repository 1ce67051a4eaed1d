#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace bldg {

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Signals inputs a Delaunay triangulation cannot handle (too few points,
// collinear sets, duplicates). Callers fall back to a chain graph.
class DegenerateGeometry : public Error {
public:
    explicit DegenerateGeometry(const std::string& msg) : Error(msg) {}
};

namespace detail {
inline void concat_into(std::ostringstream&) {}
template <typename T, typename... Rest>
void concat_into(std::ostringstream& oss, const T& v, const Rest&... rest) {
    oss << v;
    concat_into(oss, rest...);
}
}  // namespace detail

template <typename... Args>
std::string concat(const Args&... args) {
    std::ostringstream oss;
    detail::concat_into(oss, args...);
    return oss.str();
}

template <typename... Args>
[[noreturn]] void fail(const Args&... args) {
    throw Error(concat(args...));
}

template <typename... Args>
void require(bool cond, const Args&... args) {
    if (!cond) fail(args...);
}

// Deterministic RNG. mt19937_64 has a standardized sequence; the value
// transforms below are written out so streams are identical across
// platforms (std::*_distribution is implementation-defined).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    // [0, 1)
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // [0, n), unbiased
    std::uint64_t uniform_int(std::uint64_t n) {
        if (n == 0) fail("uniform_int: n must be > 0");
        const std::uint64_t rem = std::numeric_limits<std::uint64_t>::max() % n;
        const std::uint64_t lim = std::numeric_limits<std::uint64_t>::max() - rem;
        std::uint64_t x;
        do {
            x = eng_();
        } while (x > lim);
        return x % n;
    }

    // Box-Muller; consumes two uniforms per pair, caches the second value
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    bool bernoulli(double p) { return uniform() < p; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 eng_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// splitmix64 finalizer; derives independent child seeds from (seed, index).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Splits [0, n) into fixed-size chunks and runs fn(chunk_index, begin, end)
// over them. Chunk boundaries depend only on (n, chunk); each chunk is
// processed by exactly one thread, so per-chunk accumulators reduced in
// chunk order give results independent of the thread count.
template <typename Fn>
void for_chunks(std::size_t n, std::size_t chunk, unsigned threads, Fn&& fn) {
    if (n == 0) return;
    if (chunk == 0) chunk = 1;
    const std::size_t num_chunks = (n + chunk - 1) / chunk;
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, num_chunks));

    auto run_chunk = [&](std::size_t c) {
        const std::size_t b = c * chunk;
        const std::size_t e = std::min(n, b + chunk);
        fn(c, b, e);
    };

    if (threads <= 1) {
        for (std::size_t c = 0; c < num_chunks; ++c) run_chunk(c);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (unsigned t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
            for (;;) {
                const std::size_t c = next.fetch_add(1);
                if (c >= num_chunks) return;
                run_chunk(c);
            }
        });
    }
    for (auto& th : pool) th.join();
}

inline std::size_t chunk_count(std::size_t n, std::size_t chunk) {
    return n == 0 ? 0 : (n + std::max<std::size_t>(chunk, 1) - 1) / std::max<std::size_t>(chunk, 1);
}

}  // namespace bldg
