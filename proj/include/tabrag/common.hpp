#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tabrag {

// ---------------------------------------------------------------------------
// Hashing (FNV-1a, 64-bit). Used for feature hashing, content hashes and
// file checksums.
// ---------------------------------------------------------------------------

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

inline std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed = kFnvOffset) {
    std::uint64_t h = seed;
    for (unsigned char c : data) {
        h ^= c;
        h *= kFnvPrime;
    }
    return h;
}

class Fnv1aStream {
public:
    void update(const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            hash_ ^= p[i];
            hash_ *= kFnvPrime;
        }
    }
    std::uint64_t value() const { return hash_; }

private:
    std::uint64_t hash_ = kFnvOffset;
};

// ---------------------------------------------------------------------------
// Seeded RNG. All randomness in the library flows through this wrapper so
// runs are reproducible bit-for-bit across platforms; std::mt19937_64 output
// is fully specified by the standard, the derived draws below avoid the
// implementation-defined std::*_distribution classes.
// ---------------------------------------------------------------------------

class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1).
    double next_unit() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

    // Uniform integer in [0, n). Rejection sampling keeps it unbiased.
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
        std::uint64_t x;
        do {
            x = gen_();
        } while (x >= limit);
        return x % n;
    }

    // Standard normal via Box-Muller (deterministic, platform independent).
    double gaussian() {
        double u1 = next_unit();
        double u2 = next_unit();
        while (u1 <= 0.0) u1 = next_unit();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        if (v.size() < 2) return;
        for (std::size_t i = v.size() - 1; i > 0; --i) {
            std::size_t j = static_cast<std::size_t>(below(i + 1));
            std::swap(v[i], v[j]);
        }
    }

private:
    std::mt19937_64 gen_;
};

// Derive a child seed from a master seed and a string key, for per-item
// deterministic streams.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view key) {
    std::uint64_t h = kFnvOffset;
    for (int i = 0; i < 8; ++i) {
        h ^= (seed >> (8 * i)) & 0xff;
        h *= kFnvPrime;
    }
    return fnv1a64(key, h);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view a, std::string_view b) {
    return fnv1a64(b, derive_seed(seed, a));
}

// ---------------------------------------------------------------------------
// String helpers.
// ---------------------------------------------------------------------------

inline std::string to_lower_ascii(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

// Trim and collapse runs of whitespace to single spaces. Idempotent.
inline std::string collapse_whitespace(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool in_ws = true;  // swallows leading whitespace
    for (unsigned char c : s) {
        if (std::isspace(c)) {
            in_ws = true;
        } else {
            if (in_ws && !out.empty()) out.push_back(' ');
            out.push_back(static_cast<char>(c));
            in_ws = false;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Little-endian binary IO with running checksum. The file formats in this
// project are: payload bytes followed by a trailing FNV-1a checksum of the
// payload.
// ---------------------------------------------------------------------------

class BinaryWriter {
public:
    explicit BinaryWriter(std::ostream& os) : os_(os) {}

    void u8(std::uint8_t v) { raw(&v, 1); }
    void u32(std::uint32_t v) {
        unsigned char b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
        raw(b, 4);
    }
    void u64(std::uint64_t v) {
        unsigned char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
        raw(b, 8);
    }
    void f32(float v) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        u32(bits);
    }
    void str(std::string_view s) {
        u32(static_cast<std::uint32_t>(s.size()));
        raw(s.data(), s.size());
    }
    void magic(const char m[4]) { raw(m, 4); }

    // Writes the running checksum itself (not fed back into the stream).
    void finish_with_checksum() {
        std::uint64_t h = sum_.value();
        unsigned char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((h >> (8 * i)) & 0xff);
        os_.write(reinterpret_cast<const char*>(b), 8);
        if (!os_) throw std::runtime_error("write failed");
    }

private:
    void raw(const void* p, std::size_t n) {
        os_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
        if (!os_) throw std::runtime_error("write failed");
        sum_.update(p, n);
    }
    std::ostream& os_;
    Fnv1aStream sum_;
};

class BinaryReader {
public:
    explicit BinaryReader(std::istream& is, std::string name) : is_(is), name_(std::move(name)) {}

    std::uint8_t u8() {
        unsigned char b;
        raw(&b, 1);
        return b;
    }
    std::uint32_t u32() {
        unsigned char b[4];
        raw(b, 4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        unsigned char b[8];
        raw(b, 8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
        return v;
    }
    float f32() {
        std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    std::string str(std::size_t max_len = 1u << 20) {
        std::uint32_t n = u32();
        if (n > max_len) corrupt("string length out of range");
        std::string s(n, '\0');
        raw(s.data(), n);
        return s;
    }
    void expect_magic(const char m[4]) {
        char got[4];
        raw(got, 4);
        if (std::memcmp(got, m, 4) != 0) corrupt("bad magic bytes");
    }

    // Reads the trailing checksum and compares against the running sum.
    void verify_checksum() {
        std::uint64_t expected = sum_.value();
        unsigned char b[8];
        is_.read(reinterpret_cast<char*>(b), 8);
        if (is_.gcount() != 8) corrupt("truncated file (checksum missing)");
        std::uint64_t stored = 0;
        for (int i = 0; i < 8; ++i) stored |= static_cast<std::uint64_t>(b[i]) << (8 * i);
        if (stored != expected) corrupt("checksum mismatch");
    }

    [[noreturn]] void corrupt(const std::string& what) {
        throw std::runtime_error(name_ + ": " + what);
    }

private:
    void raw(void* p, std::size_t n) {
        is_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(is_.gcount()) != n)
            corrupt("truncated file (checksum cannot be verified)");
        sum_.update(p, n);
    }
    std::istream& is_;
    std::string name_;
    Fnv1aStream sum_;
};

// ---------------------------------------------------------------------------
// Small vector math used across modules. Sums accumulate in double even for
// float storage, so scores are reproducible.
// ---------------------------------------------------------------------------

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("dot: dimension mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

inline bool all_finite(const std::vector<double>& a) {
    return std::all_of(a.begin(), a.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace tabrag
