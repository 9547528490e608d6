#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "mlmadapt/common.hpp"

using namespace mlmadapt;

TEST_CASE("fnv1a64 matches the published test vectors") {
    // Reference values computed independently from the FNV-1a definition.
    CHECK(fnv1a64("", 0, kFnvOffset) == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64(std::string_view("a")) == 0xaf63dc4c8601ec8cULL);
    CHECK(fnv1a64(std::string_view("hello")) == 0xa430d84680aabd0bULL);
    // Chaining equals hashing the concatenation.
    const uint64_t h1 = fnv1a64(std::string_view("hel"));
    CHECK(fnv1a64(std::string_view("lo"), h1) == fnv1a64(std::string_view("hello")));
}

TEST_CASE("mix64 is the splitmix64 finalizer") {
    CHECK(mix64(0) == 0xe220a8397b1dcdafULL);  // splitmix64(seed=0) first output
    CHECK(mix64(42) == 0xbdd732262feb6e95ULL);
    CHECK(mix_chain(1, 2) == mix64(1 ^ 2));
}

TEST_CASE("unit_double lands in [0,1) and uses the top 53 bits") {
    CHECK(unit_double(0) == 0.0);
    CHECK(unit_double(UINT64_MAX) < 1.0);
    CHECK(unit_double(UINT64_MAX) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(unit_double(uint64_t(1) << 63) == 0.5);
    // Low 11 bits cannot matter.
    CHECK(unit_double(0x7FF) == 0.0);
}

TEST_CASE("RngStream is deterministic and key-sensitive") {
    RngStream a(123), b(123), c(124);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    bool all_equal = true;
    RngStream a2(123);
    for (int i = 0; i < 100; ++i) all_equal = all_equal && (a2.next_u64() == c.next_u64());
    CHECK_FALSE(all_equal);
}

TEST_CASE("RngStream next_below stays in range and covers small ranges") {
    RngStream rng(7);
    std::set<uint64_t> seen;
    for (int i = 0; i < 200; ++i) {
        const uint64_t v = rng.next_below(5);
        CHECK(v < 5);
        seen.insert(v);
    }
    CHECK(seen.size() == 5);
}

TEST_CASE("RngStream gaussians have sane mean and spread") {
    RngStream rng(99);
    double sum = 0.0, sq = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double g = rng.next_gaussian();
        sum += g;
        sq += g * g;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    CHECK(std::abs(mean) < 0.03);
    CHECK(var == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("binary16 round-trip hits the known encodings") {
    CHECK(float_to_half(0.0f) == 0x0000);
    CHECK(float_to_half(1.0f) == 0x3C00);
    CHECK(float_to_half(-2.0f) == 0xC000);
    CHECK(float_to_half(65504.0f) == 0x7BFF);  // max finite half
    CHECK(half_to_float(0x3C00) == 1.0f);
    CHECK(half_to_float(0x3555) == doctest::Approx(0.333251953125));

    // Exactly representable halves survive the round trip unchanged.
    for (float f : {0.5f, -0.25f, 1024.0f, 0.0009765625f}) {
        CHECK(round_to_half(f) == f);
    }
}

TEST_CASE("binary16 rounding is round-to-nearest-even") {
    // 1 + 2^-11 sits exactly between half(1.0) and half(1 + 2^-10):
    // ties go to the even significand, which is 1.0.
    CHECK(round_to_half(1.0f + 0.00048828125f) == 1.0f);
    // 1 + 3*2^-11 ties between 1+2^-10 and 1+2^-9; even neighbor is 1+2^-9.
    CHECK(round_to_half(1.0f + 3 * 0.00048828125f) == 1.0f + 2 * 0.0009765625f);
    // Just above the tie rounds up.
    CHECK(round_to_half(1.00050f) == 1.0009765625f);
}

TEST_CASE("binary16 handles subnormals and overflow") {
    // Smallest positive subnormal half is 2^-24.
    const float tiny = std::ldexp(1.0f, -24);
    CHECK(float_to_half(tiny) == 0x0001);
    CHECK(half_to_float(0x0001) == tiny);
    // Below half range flushes to zero through rounding.
    CHECK(round_to_half(std::ldexp(1.0f, -26)) == 0.0f);
    // Values beyond the half range become infinite, sign preserved.
    CHECK(half_to_float(float_to_half(1.0e6f)) == std::numeric_limits<float>::infinity());
    CHECK(half_to_float(float_to_half(-1.0e6f)) == -std::numeric_limits<float>::infinity());
}

TEST_CASE("hex helpers round-trip") {
    CHECK(to_hex(0) == "0000000000000000");
    CHECK(to_hex(0xdeadbeefULL) == "00000000deadbeef");
    CHECK(hex_to_u64("00000000deadbeef") == 0xdeadbeefULL);
    CHECK(hex_to_u64(to_hex(UINT64_MAX)) == UINT64_MAX);
    CHECK_THROWS_AS((void)hex_to_u64("xyz"), FormatError);
}

TEST_CASE("file_digest hashes exact bytes") {
    const auto dir = std::filesystem::temp_directory_path() / "mlmadapt-common-test";
    std::filesystem::create_directories(dir);
    const auto file = dir / "digest.bin";
    {
        std::ofstream out(file, std::ios::binary);
        out << "hello";
    }
    CHECK(file_digest(file) == fnv1a64(std::string_view("hello")));
    CHECK(file_size_or_throw(file) == 5);
    CHECK_THROWS_AS((void)file_digest(dir / "missing.bin"), DataError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("trim strips ASCII whitespace from both ends") {
    CHECK(trim("  a b \t\r\n") == "a b");
    CHECK(trim("") == "");
    CHECK(trim(" \t ") == "");
}
