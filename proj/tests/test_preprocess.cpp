#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "cartiq/preprocess.hpp"
#include "cartiq/rng.hpp"
#include "oracles.hpp"

using namespace cartiq;

namespace {

std::vector<double> to_doubles(const std::vector<float>& v) {
    return {v.begin(), v.end()};
}

} // namespace

TEST_CASE("normalize_slice maps the integer ramp through (v-50)/25") {
    std::vector<float> ramp(101);
    for (int i = 0; i <= 100; ++i) ramp[i] = static_cast<float>(i);
    std::vector<float> out = normalize_slice(ramp);
    CHECK(out[75] == doctest::Approx(1.0).epsilon(1e-7));
    CHECK(out[25] == doctest::Approx(-1.0).epsilon(1e-7));
    CHECK(out[50] == doctest::Approx(0.0));
    // winsorized tails: inputs 0..2 clamp to the 3rd percentile value
    CHECK(out[0] == doctest::Approx(out[3]));
    CHECK(out[100] == doctest::Approx(out[97]));
}

TEST_CASE("trim percentiles must bracket the anchor quartiles") {
    std::vector<float> ramp(101);
    for (int i = 0; i <= 100; ++i) ramp[i] = static_cast<float>(i);
    NormalizationParams bad;
    bad.trim_lo_pct = 30.0;
    CHECK_THROWS_AS(normalize_slice(ramp, bad), error);
    bad = NormalizationParams{};
    bad.trim_hi_pct = 70.0;
    CHECK_THROWS_AS(normalize_slice(ramp, bad), error);
}

TEST_CASE("constant image is degenerate") {
    std::vector<float> flat(64 * 64, 7.0f);
    CHECK_THROWS_AS(normalize_slice(flat), error);
    try {
        normalize_slice(flat);
    } catch (const error& e) {
        CHECK(e.code() == errc::degenerate_intensity);
    }
}

TEST_CASE("normalized lognormal slice has quartiles (-1, 0, 1)") {
    Rng rng(42);
    for (int trial = 0; trial < 5; ++trial) {
        std::vector<float> img(64 * 64);
        for (auto& v : img) v = static_cast<float>(std::exp(rng.gaussian()));
        std::vector<float> out = normalize_slice(img);
        auto d = to_doubles(out);
        CHECK(std::abs(oracle::percentile(d, 25.0) - (-1.0)) < 1e-5);
        CHECK(std::abs(oracle::percentile(d, 50.0) - 0.0) < 1e-5);
        CHECK(std::abs(oracle::percentile(d, 75.0) - 1.0) < 1e-5);
    }
}

TEST_CASE("normalization is invariant to positive affine input transforms") {
    Rng rng(7);
    std::vector<float> img(64 * 64);
    for (auto& v : img) v = static_cast<float>(std::exp(rng.gaussian()) * 40.0 + 5.0);

    std::vector<float> base = normalize_slice(img);
    for (auto [a, b] : {std::pair{2.0, 0.0}, {0.5, 100.0}, {3.0, -1.0}}) {
        std::vector<float> t(img.size());
        for (std::size_t i = 0; i < img.size(); ++i) {
            t[i] = static_cast<float>(a * img[i] + b);
        }
        std::vector<float> out = normalize_slice(t);
        for (std::size_t i = 0; i < img.size(); ++i) {
            CHECK(std::abs(out[i] - base[i]) < 1e-5);
        }
    }
}

TEST_CASE("normalization is idempotent within 1e-4") {
    Rng rng(11);
    std::vector<float> img(64 * 64);
    for (auto& v : img) v = static_cast<float>(std::exp(rng.gaussian()));
    std::vector<float> once = normalize_slice(img);
    std::vector<float> twice = normalize_slice(once);
    double max_change = 0.0;
    for (std::size_t i = 0; i < img.size(); ++i) {
        max_change = std::max(max_change, std::abs(static_cast<double>(twice[i]) - once[i]));
    }
    CHECK(max_change < 1e-4);
}

TEST_CASE("echo sampling") {
    SUBCASE("degenerate policy always picks its echo") {
        EchoSamplingPolicy policy;
        policy.probabilities = {0.0, 0.0, 1.0};
        Rng rng(1);
        for (int i = 0; i < 100; ++i) CHECK(sample_training_echo(policy, 7, rng) == 2);
    }

    SUBCASE("default policy frequencies over 100k draws") {
        EchoSamplingPolicy policy; // 0.2 / 0.6 / 0.2
        Rng rng(20240810);
        const int n = 100000;
        int counts[3] = {0, 0, 0};
        for (int i = 0; i < n; ++i) ++counts[sample_training_echo(policy, 7, rng)];
        CHECK(std::abs(counts[0] / double(n) - 0.2) < 0.01);
        CHECK(std::abs(counts[1] / double(n) - 0.6) < 0.01);
        CHECK(std::abs(counts[2] / double(n) - 0.2) < 0.01);
    }

    SUBCASE("default policy on a 2-echo volume") {
        EchoSamplingPolicy policy;
        Rng rng(1);
        CHECK_THROWS_AS(sample_training_echo(policy, 2, rng), error);
        try {
            sample_training_echo(policy, 2, rng);
        } catch (const error& e) {
            CHECK(e.code() == errc::policy_echo_out_of_range);
        }
    }

    SUBCASE("fixed seed reproduces the sequence") {
        EchoSamplingPolicy policy;
        Rng r1(987), r2(987);
        for (int i = 0; i < 1000; ++i) {
            CHECK(sample_training_echo(policy, 3, r1) == sample_training_echo(policy, 3, r2));
        }
    }

    SUBCASE("invalid policies are rejected") {
        EchoSamplingPolicy bad;
        bad.probabilities = {0.5, 0.2};
        Rng rng(1);
        CHECK_THROWS_AS(sample_training_echo(bad, 3, rng), error);
    }
}

TEST_CASE("drop_empty_slices") {
    Grid3 g{4, 4, 21};

    SUBCASE("cartilage everywhere: all slices retained") {
        SegmentationMask m(g);
        for (int k = 0; k < g.nz; ++k) m.set(0, 0, k, true);
        Rng rng(3);
        auto kept = drop_empty_slices(m, 0.9, rng);
        CHECK(kept.size() == 21);
    }

    SUBCASE("drop fraction zero keeps everything") {
        SegmentationMask m(g); // fully empty
        Rng rng(3);
        auto kept = drop_empty_slices(m, 0.0, rng);
        CHECK(kept.size() == 21);
        CHECK(std::is_sorted(kept.begin(), kept.end()));
    }

    SUBCASE("empty slices survive with frequency 1 - drop_fraction") {
        SegmentationMask m(g);
        for (int k = 5; k <= 15; ++k) m.set(2, 2, k, true);
        Rng rng(20240810);
        const int trials = 10000;
        std::vector<int> kept_count(21, 0);
        for (int t = 0; t < trials; ++t) {
            for (int k : drop_empty_slices(m, 0.9, rng)) ++kept_count[k];
        }
        for (int k = 0; k < 21; ++k) {
            double freq = kept_count[k] / double(trials);
            if (k >= 5 && k <= 15) {
                CHECK(freq == 1.0);
            } else {
                CHECK(std::abs(freq - 0.10) < 0.01);
            }
        }
    }

    SUBCASE("retained indices are sorted and unique") {
        SegmentationMask m(g);
        m.set(1, 1, 10, true);
        Rng rng(5);
        auto kept = drop_empty_slices(m, 0.5, rng);
        CHECK(std::is_sorted(kept.begin(), kept.end()));
        CHECK(std::adjacent_find(kept.begin(), kept.end()) == kept.end());
        CHECK(std::find(kept.begin(), kept.end(), 10) != kept.end());
    }

    SUBCASE("out-of-range drop fraction") {
        SegmentationMask m(g);
        Rng rng(1);
        CHECK_THROWS_AS(drop_empty_slices(m, 1.5, rng), error);
    }
}
