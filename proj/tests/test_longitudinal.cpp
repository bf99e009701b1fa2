#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "cartiq/longitudinal.hpp"
#include "cartiq/rng.hpp"
#include "oracles.hpp"

using namespace cartiq;

namespace {

// textured rectangular plate with pixelwise-distinct values
FlattenedPlate textured_plate(int n_slices, int n_bins, int u0, int v0, int h, int w,
                              std::uint64_t seed = 17, float base = 40.0f) {
    FlattenedPlate p;
    p.n_slices = n_slices;
    p.n_bins = n_bins;
    p.bin_width_deg = 360.0 / n_bins;
    p.cells.resize(static_cast<std::size_t>(n_slices) * n_bins);
    Rng rng(seed);
    for (int u = u0; u < u0 + h; ++u) {
        for (int v = v0; v < v0 + w; ++v) {
            PlateCell& cell = p.at(u, v);
            float val = base + static_cast<float>(rng.uniform(-8.0, 8.0));
            cell.t2[0] = val;
            cell.t2[1] = val + 1.0f;
            cell.weight[0] = cell.weight[1] = 1;
            cell.column_count = 2;
            p.mask_voxels += 2;
        }
    }
    return p;
}

FlattenedPlate shifted(const FlattenedPlate& src, int du, int dv) {
    FlattenedPlate p;
    p.n_slices = src.n_slices;
    p.n_bins = src.n_bins;
    p.bin_width_deg = src.bin_width_deg;
    p.cells.resize(src.cells.size());
    for (int u = 0; u < src.n_slices; ++u) {
        for (int v = 0; v < src.n_bins; ++v) {
            if (!src.occupied(u, v)) continue;
            int nu = u + du, nv = v + dv;
            if (nu < 0 || nu >= p.n_slices || nv < 0 || nv >= p.n_bins) continue;
            p.at(nu, nv) = src.at(u, v);
            p.mask_voxels += src.at(u, v).column_count;
        }
    }
    return p;
}

ChangeMap map_from_grid(const std::vector<float>& delta, int rows, int cols) {
    ChangeMap cm;
    cm.n_slices = rows;
    cm.n_bins = cols;
    cm.delta = delta;
    double sum = 0.0;
    for (float d : delta) {
        if (!std::isnan(d)) {
            sum += d;
            ++cm.plate_area;
        }
    }
    if (cm.plate_area > 0) cm.mean_delta = sum / static_cast<double>(cm.plate_area);
    if (cm.plate_area > 1) {
        double ss = 0.0;
        for (float d : delta) {
            if (!std::isnan(d)) ss += (d - cm.mean_delta) * (d - cm.mean_delta);
        }
        cm.sd_delta = std::sqrt(ss / static_cast<double>(cm.plate_area - 1));
    }
    return cm;
}

} // namespace

TEST_CASE("registration") {
    FlattenedPlate base = textured_plate(40, 60, 8, 10, 20, 30);

    SUBCASE("identical plates register at (0,0)") {
        Translation t = register_plates(base, base);
        CHECK(t.du == 0);
        CHECK(t.dv == 0);
    }

    SUBCASE("a (2,-3) shift is recovered") {
        FlattenedPlate moved = shifted(base, 2, -3);
        Translation t = register_plates(base, moved);
        CHECK(t.du == 2);
        CHECK(t.dv == -3);
    }

    SUBCASE("every shift in the +/-10 window is recovered on a textured plate") {
        for (int du = -10; du <= 10; du += 5) {
            for (int dv = -10; dv <= 10; dv += 5) {
                FlattenedPlate moved = shifted(base, du, dv);
                Translation t = register_plates(base, moved);
                CHECK(t.du == du);
                CHECK(t.dv == dv);
            }
        }
    }

    SUBCASE("disjoint occupancy raises NoOverlap") {
        FlattenedPlate a = textured_plate(60, 80, 0, 0, 10, 10);
        FlattenedPlate b = textured_plate(60, 80, 45, 60, 10, 10);
        CHECK_THROWS_AS(register_plates(a, b), error);
        try {
            register_plates(a, b);
        } catch (const error& e) {
            CHECK(e.code() == errc::no_overlap);
        }
    }

    SUBCASE("empty plate is rejected") {
        FlattenedPlate empty;
        empty.n_slices = 10;
        empty.n_bins = 10;
        empty.cells.resize(100);
        CHECK_THROWS_AS(register_plates(base, empty), error);
    }
}

TEST_CASE("change maps") {
    FlattenedPlate base = textured_plate(20, 40, 2, 5, 10, 20);

    SUBCASE("identical plates have zero delta and zero SD") {
        ChangeMap cm = change_map(base, base, {0, 0});
        CHECK(cm.plate_area == 200);
        CHECK(cm.mean_delta == doctest::Approx(0.0));
        CHECK(cm.sd_delta == doctest::Approx(0.0));
        for (float d : cm.delta) {
            if (!std::isnan(d)) CHECK(d == 0.0f);
        }
    }

    SUBCASE("uniform +5 ms shift shows up everywhere") {
        FlattenedPlate plus = base;
        for (auto& cell : plus.cells) {
            for (int layer = 0; layer < 2; ++layer) {
                if (!std::isnan(cell.t2[layer])) cell.t2[layer] += 5.0f;
            }
        }
        ChangeMap cm = change_map(base, plus, {0, 0});
        CHECK(cm.mean_delta == doctest::Approx(5.0));
        CHECK(cm.sd_delta == doctest::Approx(0.0).epsilon(1e-6));
        for (float d : cm.delta) {
            if (!std::isnan(d)) CHECK(d == doctest::Approx(5.0));
        }
    }

    SUBCASE("constructed per-pixel deltas match direct subtraction") {
        FlattenedPlate follow = base;
        Rng rng(4);
        std::vector<float> expected(follow.cells.size(), std::nanf(""));
        for (int u = 0; u < follow.n_slices; ++u) {
            for (int v = 0; v < follow.n_bins; ++v) {
                PlateCell& cell = follow.at(u, v);
                if (cell.column_count == 0) continue;
                float d0 = static_cast<float>(rng.uniform(-3, 3));
                float d1 = static_cast<float>(rng.uniform(-3, 3));
                cell.t2[0] += d0;
                cell.t2[1] += d1;
                expected[static_cast<std::size_t>(u) * follow.n_bins + v] =
                    0.5f * (d0 + d1);
            }
        }
        ChangeMap cm = change_map(base, follow, {0, 0});
        for (std::size_t i = 0; i < cm.delta.size(); ++i) {
            if (std::isnan(expected[i])) {
                CHECK(std::isnan(cm.delta[i]));
            } else {
                CHECK(cm.delta[i] == doctest::Approx(expected[i]).epsilon(1e-5));
            }
        }
        // stored mean/SD match a recomputation from the grid
        double sum = 0.0;
        std::size_t n = 0;
        for (float d : cm.delta) {
            if (!std::isnan(d)) {
                sum += d;
                ++n;
            }
        }
        CHECK(cm.plate_area == n);
        double mean = sum / static_cast<double>(n);
        CHECK(cm.mean_delta == doctest::Approx(mean).epsilon(1e-9));
        double ss = 0.0;
        for (float d : cm.delta) {
            if (!std::isnan(d)) ss += (d - mean) * (d - mean);
        }
        CHECK(cm.sd_delta ==
              doctest::Approx(std::sqrt(ss / static_cast<double>(n - 1))).epsilon(1e-9));
    }

    SUBCASE("mean/SD invariants after registration") {
        FlattenedPlate moved = shifted(base, 3, -2);
        Translation t = register_plates(base, moved);
        ChangeMap cm = change_map(base, moved, t);
        CHECK(cm.plate_area == 200);
        CHECK(std::abs(cm.mean_delta) < 1e-6);
    }
}

TEST_CASE("focal clusters") {
    SUBCASE("uniform map has no clusters") {
        std::vector<float> d(100, 2.0f);
        ChangeMap cm = map_from_grid(d, 10, 10);
        auto clusters = find_focal_clusters(cm);
        CHECK(clusters.empty());
    }

    SUBCASE("3x3 hot patch on a 100-pixel plate is one 9-pixel cluster") {
        std::vector<float> d(100, 0.0f);
        for (int u = 4; u < 7; ++u) {
            for (int v = 4; v < 7; ++v) d[u * 10 + v] = 10.0f;
        }
        ChangeMap cm = map_from_grid(d, 10, 10);
        auto clusters = find_focal_clusters(cm, 0.01);
        REQUIRE(clusters.size() == 1);
        CHECK(clusters[0].pixels.size() == 9);
        CHECK(clusters[0].area_fraction == doctest::Approx(0.09));
        CHECK(clusters[0].mean_delta == doctest::Approx(10.0));
        CHECK(lesion_area_percentage(clusters, cm.plate_area) == doctest::Approx(9.0));
    }

    SUBCASE("a single hot pixel misses the strict 1% area cut") {
        std::vector<float> d(100, 0.0f);
        d[55] = 10.0f;
        ChangeMap cm = map_from_grid(d, 10, 10);
        auto clusters = find_focal_clusters(cm, 0.01);
        CHECK(clusters.empty());
    }

    SUBCASE("adding a constant shifts the threshold with the mean") {
        Rng rng(20240814);
        std::vector<float> d(32 * 32, std::nanf(""));
        for (std::size_t i = 0; i < d.size(); ++i) {
            if (rng.unit() < 0.8) d[i] = static_cast<float>(rng.gaussian() * 2.0);
        }
        ChangeMap cm = map_from_grid(d, 32, 32);
        auto base_clusters = find_focal_clusters(cm);

        std::vector<float> shifted_d = d;
        for (auto& v : shifted_d) {
            if (!std::isnan(v)) v += 25.0f;
        }
        ChangeMap cm2 = map_from_grid(shifted_d, 32, 32);
        auto shifted_clusters = find_focal_clusters(cm2);

        REQUIRE(base_clusters.size() == shifted_clusters.size());
        for (std::size_t i = 0; i < base_clusters.size(); ++i) {
            CHECK(base_clusters[i].pixels == shifted_clusters[i].pixels);
        }
    }

    SUBCASE("matches the flood-fill oracle on 100 seeded fixtures") {
        for (int trial = 0; trial < 100; ++trial) {
            Rng rng(9000 + trial);
            std::vector<float> d(32 * 32, std::nanf(""));
            for (std::size_t i = 0; i < d.size(); ++i) {
                double u = rng.unit();
                if (u < 0.7) {
                    d[i] = static_cast<float>(rng.gaussian());
                } else if (u < 0.8) {
                    d[i] = static_cast<float>(8.0 + rng.gaussian());
                }
            }
            ChangeMap cm = map_from_grid(d, 32, 32);
            if (cm.plate_area == 0) continue;
            auto got = find_focal_clusters(cm);
            auto want = oracle::flood_clusters(d, 32, 32, cm.mean_delta + cm.sd_delta,
                                               0.01, cm.plate_area, true);

            REQUIRE(got.size() == want.size());
            // compare as sets of pixel sets
            std::set<std::vector<std::pair<int, int>>> got_sets, want_sets;
            for (const auto& cl : got) got_sets.insert(cl.pixels);
            for (const auto& cl : want) want_sets.insert(cl.pixels);
            CHECK(got_sets == want_sets);

            // clusters are pairwise disjoint and exactly cover the
            // super-threshold pixels of components above the cut
            std::set<std::pair<int, int>> all;
            std::size_t total = 0;
            for (const auto& cl : got) {
                all.insert(cl.pixels.begin(), cl.pixels.end());
                total += cl.pixels.size();
            }
            CHECK(all.size() == total);
        }
    }

    SUBCASE("4-connectivity splits diagonal chains") {
        std::vector<float> d(100, 0.0f);
        // diagonal pair: one 8-connected component, two 4-connected ones
        d[0] = 10.0f;
        d[11] = 10.0f;
        d[22] = 10.0f;
        ChangeMap cm = map_from_grid(d, 10, 10);
        auto eight = find_focal_clusters(cm, 0.01, Connectivity::eight);
        auto four = find_focal_clusters(cm, 0.01, Connectivity::four);
        CHECK(eight.size() == 1);
        CHECK(four.empty()); // each 1-pixel component misses the area cut
    }
}

TEST_CASE("lesion area percentage") {
    CHECK(lesion_area_percentage({}, 100) == doctest::Approx(0.0));

    Cluster nine;
    for (int i = 0; i < 9; ++i) nine.pixels.emplace_back(0, i);
    CHECK(lesion_area_percentage({nine}, 100) == doctest::Approx(9.0));

    CHECK_THROWS_AS(lesion_area_percentage({}, 0), error);
}

TEST_CASE("region change") {
    RegionReport a;
    for (const RegionSelector& sel : report_selectors()) {
        RegionRow row;
        row.selector = sel;
        row.name = sel.name();
        row.mean_t2_ms = 40.0;
        row.voxel_count = 10;
        a.rows.push_back(row);
    }

    SUBCASE("identical reports give all-zero deltas") {
        auto deltas = region_change(a, a);
        REQUIRE(deltas.size() == 27);
        for (const auto& rd : deltas) {
            CHECK(rd.defined);
            CHECK(rd.delta_ms == doctest::Approx(0.0));
        }
    }

    SUBCASE("uniform +2 ms") {
        RegionReport b = a;
        for (auto& row : b.rows) row.mean_t2_ms += 2.0;
        auto deltas = region_change(a, b);
        for (const auto& rd : deltas) CHECK(rd.delta_ms == doctest::Approx(2.0));
    }

    SUBCASE("constructed per-region deltas match an elementwise oracle") {
        RegionReport b = a;
        Rng rng(3);
        std::vector<double> expect;
        for (auto& row : b.rows) {
            double d = rng.uniform(-4, 4);
            row.mean_t2_ms += d;
            expect.push_back(d);
        }
        auto deltas = region_change(a, b);
        for (std::size_t i = 0; i < deltas.size(); ++i) {
            CHECK(deltas[i].delta_ms == doctest::Approx(expect[i]).epsilon(1e-12));
        }
    }

    SUBCASE("selector mismatch") {
        RegionReport b = a;
        b.rows.pop_back();
        CHECK_THROWS_AS(region_change(a, b), error);
        RegionReport c = a;
        c.rows[3].name = "something_else";
        CHECK_THROWS_AS(region_change(a, c), error);
    }
}
