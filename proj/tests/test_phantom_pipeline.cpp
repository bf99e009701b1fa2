#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "cartiq/io.hpp"
#include "cartiq/phantom.hpp"
#include "cartiq/pipeline.hpp"
#include "cartiq/t2fit.hpp"
#include "oracles.hpp"

using namespace cartiq;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path fresh_dir(const std::string& name) {
    fs::path d = fs::temp_directory_path() / "cartiq_pipe" / name;
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

PhantomSpec small_spec() {
    PhantomSpec spec;
    spec.nx = 72;
    spec.ny = 72;
    spec.nz = 6;
    spec.cx = 36.5;
    spec.cy = 36.5;
    spec.r_inner = 18.0;
    spec.r_outer = 26.0;
    spec.slice_lo = 0;
    spec.slice_hi = 5;
    spec.set_uniform_t2(40.0);
    return spec;
}

std::vector<char> slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    REQUIRE(is.good());
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

void write_phantom_files(const Phantom& ph, const fs::path& dir) {
    write_volume(dir / "volume.mev", ph.volume);
    write_mask(dir / "mask.msk", ph.mask);
    write_probability_map(dir / "pmap.pmap", ph.pmap, ph.volume.spacing_mm());
}

} // namespace

TEST_CASE("phantom generator ground truth is self-consistent") {
    PhantomSpec spec = small_spec();
    for (int i = 0; i < 12; ++i) spec.t2_regions[i] = 30.0 + 3.0 * i;
    Phantom ph = generate_phantom(spec);

    REQUIRE(ph.truth.size() == 27);
    CHECK(ph.truth[0].name == "all");
    CHECK(static_cast<std::size_t>(ph.truth[0].voxel_count) >= ph.mask.count());

    // aggregates blend their atomics
    double lat_sum = 0.0;
    std::int64_t lat_cnt = 0;
    for (const TruthRow& row : ph.truth) {
        if (row.name == "deep_lateral_anterior" || row.name == "deep_lateral_central" ||
            row.name == "deep_lateral_posterior" ||
            row.name == "superficial_lateral_anterior" ||
            row.name == "superficial_lateral_central" ||
            row.name == "superficial_lateral_posterior") {
            lat_sum += row.mean_t2_ms * static_cast<double>(row.voxel_count);
            lat_cnt += row.voxel_count;
        }
    }
    for (const TruthRow& row : ph.truth) {
        if (row.name == "lateral") {
            CHECK(row.voxel_count == lat_cnt);
            CHECK(row.mean_t2_ms == doctest::Approx(lat_sum / lat_cnt).epsilon(1e-12));
        }
    }

    SUBCASE("invalid specs are rejected") {
        PhantomSpec bad = spec;
        bad.r_inner = 30.0; // inner >= outer
        CHECK_THROWS_AS(generate_phantom(bad), error);
        bad = spec;
        bad.t2_regions[4] = 150.0;
        CHECK_THROWS_AS(generate_phantom(bad), error);
        bad = spec;
        bad.slice_hi = 99;
        CHECK_THROWS_AS(generate_phantom(bad), error);
    }
}

TEST_CASE("noiseless uniform phantom: full pipeline recovers 40 ms everywhere") {
    fs::path dir = fresh_dir("uniform");
    Phantom ph = generate_phantom(small_spec());
    write_phantom_files(ph, dir);

    std::vector<std::pair<std::string, std::string>> entries{
        {"volume", (dir / "volume.mev").string()},
        {"pmap", (dir / "pmap.pmap").string()},
        {"out_dir", (dir / "out").string()},
        {"min_voxels_per_slice", "0"},
        {"seed", "7"},
    };
    PipelineConfig cfg = config_from_entries(entries);
    REQUIRE(run_pipeline(cfg) == 0);

    // 27 rows, every mean at 40 +/- 0.01
    std::ifstream is(dir / "out" / "regions_baseline.json");
    REQUIRE(is.good());
    json j;
    is >> j;
    REQUIRE(j.at("regions").size() == 27);
    for (const auto& row : j.at("regions")) {
        REQUIRE_FALSE(row.at("mean_t2_ms").is_null());
        CHECK(std::abs(row.at("mean_t2_ms").get<double>() - 40.0) < 0.01);
    }

    // CSV has a header comment, a column header, and 27 rows
    std::ifstream csv(dir / "out" / "regions_baseline.csv");
    REQUIRE(csv.good());
    int lines = 0;
    std::string line, first;
    while (std::getline(csv, line)) {
        if (lines == 0) first = line;
        ++lines;
    }
    CHECK(lines == 29);
    CHECK(first.find("toolkit_version=") != std::string::npos);
    CHECK(first.find("config_hash=") != std::string::npos);
    CHECK(first.find("seed=7") != std::string::npos);

    // every stage report embeds the provenance triple
    for (const char* name : {"refine_baseline.json", "regions_baseline.json"}) {
        std::ifstream ris(dir / "out" / name);
        REQUIRE(ris.good());
        json rj;
        ris >> rj;
        CHECK(rj.at("provenance").contains("toolkit_version"));
        CHECK(rj.at("provenance").contains("config_hash"));
        CHECK(rj.at("provenance").at("seed").get<std::uint64_t>() == 7);
    }
}

TEST_CASE("medial/lateral split phantom reports M=45, L=35 and blends the rest") {
    fs::path dir = fresh_dir("ml");
    PhantomSpec spec = small_spec();
    for (int d = 0; d < 2; ++d) {
        for (int c = 0; c < 3; ++c) {
            spec.t2_regions[region_index(static_cast<Depth>(d), Side::medial,
                                         static_cast<Sector>(c))] = 45.0;
            spec.t2_regions[region_index(static_cast<Depth>(d), Side::lateral,
                                         static_cast<Sector>(c))] = 35.0;
        }
    }
    Phantom ph = generate_phantom(spec);
    write_phantom_files(ph, dir);

    PipelineConfig cfg = config_from_entries({
        {"volume", (dir / "volume.mev").string()},
        {"pmap", (dir / "pmap.pmap").string()},
        {"out_dir", (dir / "out").string()},
        {"min_voxels_per_slice", "0"},
    });
    REQUIRE(run_pipeline(cfg) == 0);

    std::ifstream is(dir / "out" / "regions_baseline.json");
    json j;
    is >> j;
    double medial = 0, lateral = 0, all = 0;
    std::int64_t n_m = 0, n_l = 0;
    for (const auto& row : j.at("regions")) {
        if (row.at("region") == "medial") {
            medial = row.at("mean_t2_ms").get<double>();
            n_m = row.at("voxel_count").get<std::int64_t>();
        }
        if (row.at("region") == "lateral") {
            lateral = row.at("mean_t2_ms").get<double>();
            n_l = row.at("voxel_count").get<std::int64_t>();
        }
        if (row.at("region") == "all") all = row.at("mean_t2_ms").get<double>();
    }
    CHECK(std::abs(medial - 45.0) < 0.01);
    CHECK(std::abs(lateral - 35.0) < 0.01);
    double blend = (45.0 * n_m + 35.0 * n_l) / static_cast<double>(n_m + n_l);
    CHECK(std::abs(all - blend) < 0.01);
}

TEST_CASE("seeded noisy phantom tracks the grid-oracle estimator") {
    fs::path dir = fresh_dir("noisy");
    PhantomSpec spec = small_spec();
    for (int i = 0; i < 12; ++i) spec.t2_regions[i] = 32.0 + 2.0 * i;
    spec.noise_sigma = 5.0;
    spec.seed = 20240815;
    Phantom ph = generate_phantom(spec);
    write_phantom_files(ph, dir);

    // tolerance derivation: the least-squares estimator is biased upward
    // a little under noise (the c >= 0 bound truncates); the reference for
    // the fitted values is therefore the grid-search oracle on the same
    // noisy curves, and only a looser band applies against ground truth
    {
        const Grid3& g = ph.volume.grid();
        T2Map fitted = compute_t2_map(ph.volume, ph.mask);
        double fit_sum = 0.0, oracle_sum = 0.0;
        int n_checked = 0;
        for (std::size_t i = 0; i < g.voxels() && n_checked < 150; i += 17) {
            if (!ph.mask.at(i) || !fitted.present(i)) continue;
            DecayCurve curve;
            curve.te_ms.assign(ph.volume.te_ms().begin() + 1, ph.volume.te_ms().end());
            for (std::size_t e = 1; e < ph.volume.te_ms().size(); ++e) {
                curve.signal.push_back(ph.volume.data()[e * g.voxels() + i]);
            }
            auto gs = oracle::grid_search_fit(curve.te_ms, curve.signal, 700.0, 1300.0, 1.0,
                                              20.0, 90.0, 0.1, 0.0, 60.0, 0.1);
            fit_sum += fitted.t2(i);
            oracle_sum += gs.t2;
            ++n_checked;
        }
        REQUIRE(n_checked == 150);
        // the continuous fit and the discrete oracle see the same bias
        CHECK(std::abs(fit_sum - oracle_sum) / n_checked < 0.1);
    }

    PipelineConfig cfg = config_from_entries({
        {"volume", (dir / "volume.mev").string()},
        {"pmap", (dir / "pmap.pmap").string()},
        {"out_dir", (dir / "out").string()},
        {"min_voxels_per_slice", "0"},
    });
    REQUIRE(run_pipeline(cfg) == 0);

    std::ifstream is(dir / "out" / "regions_baseline.json");
    json j;
    is >> j;
    for (const auto& row : j.at("regions")) {
        std::string name = row.at("region").get<std::string>();
        for (const TruthRow& truth : ph.truth) {
            if (truth.name == name) {
                CHECK(std::abs(row.at("mean_t2_ms").get<double>() - truth.mean_t2_ms) < 2.0);
            }
        }
    }
}

TEST_CASE("pipeline determinism: identical config+seed produce byte-identical reports") {
    fs::path dir = fresh_dir("determinism");
    Phantom ph = generate_phantom(small_spec());
    write_phantom_files(ph, dir);

    auto run_into = [&](const std::string& sub) {
        PipelineConfig cfg = config_from_entries({
            {"volume", (dir / "volume.mev").string()},
            {"pmap", (dir / "pmap.pmap").string()},
            {"truth_mask", (dir / "mask.msk").string()},
            {"followup_volume", (dir / "volume.mev").string()},
            {"followup_pmap", (dir / "pmap.pmap").string()},
            {"out_dir", (dir / sub).string()},
            {"min_voxels_per_slice", "0"},
            {"seed", "123"},
            {"threads", sub == "a" ? "1" : "4"}, // thread count must not matter
        });
        REQUIRE(run_pipeline(cfg) == 0);
    };
    run_into("a");
    run_into("b");

    for (const char* name :
         {"regions_baseline.csv", "regions_baseline.json", "refine_baseline.json",
          "regions_followup.csv", "regions_followup.json", "longitudinal.json",
          "compare_baseline.json", "baseline_mask.msk", "baseline_t2.t2m"}) {
        CAPTURE(name);
        CHECK(slurp(dir / "a" / name) == slurp(dir / "b" / name));
    }
}

TEST_CASE("two identical timepoints give zero deltas and no lesions") {
    fs::path dir = fresh_dir("self");
    Phantom ph = generate_phantom(small_spec());
    write_phantom_files(ph, dir);

    PipelineConfig cfg = config_from_entries({
        {"volume", (dir / "volume.mev").string()},
        {"pmap", (dir / "pmap.pmap").string()},
        {"followup_volume", (dir / "volume.mev").string()},
        {"followup_pmap", (dir / "pmap.pmap").string()},
        {"out_dir", (dir / "out").string()},
        {"min_voxels_per_slice", "0"},
    });
    REQUIRE(run_pipeline(cfg) == 0);

    std::ifstream is(dir / "out" / "longitudinal.json");
    REQUIRE(is.good());
    json j;
    is >> j;
    CHECK(j.at("translation").at("du").get<int>() == 0);
    CHECK(j.at("translation").at("dv").get<int>() == 0);
    CHECK(j.at("lesion_area_pct").get<double>() == doctest::Approx(0.0));
    CHECK(j.at("clusters").size() == 0);
    for (const auto& rd : j.at("region_deltas")) {
        if (!rd.at("delta_ms").is_null()) {
            CHECK(std::abs(rd.at("delta_ms").get<double>()) < 1e-9);
        }
    }
}

TEST_CASE("missing input files fail with a diagnostic exit code") {
    PipelineConfig cfg = config_from_entries({
        {"volume", "/nonexistent/v.mev"},
        {"pmap", "/nonexistent/p.pmap"},
        {"out_dir", (fs::temp_directory_path() / "cartiq_pipe" / "missing").string()},
    });
    CHECK(run_pipeline(cfg) == 2);
}

TEST_CASE("config parsing") {
    fs::path dir = fresh_dir("config");
    {
        std::ofstream os(dir / "c.cfg");
        os << "# comment\n"
           << "volume = /tmp/v.mev\n"
           << "pmap = /tmp/p.pmap\n"
           << "binarize_p = 0.501\n"
           << "min_voxels_per_slice = 425\n"
           << "laterality = left\n"
           << "formats = csv,svg\n";
    }
    auto entries = parse_config_file(dir / "c.cfg");
    CHECK(entries.size() == 6);
    PipelineConfig cfg = config_from_entries(entries);
    CHECK(cfg.baseline.volume == "/tmp/v.mev");
    CHECK(cfg.thresholds.binarize_p == doctest::Approx(0.501f));
    CHECK(cfg.thresholds.min_voxels_per_slice == 425);
    CHECK(cfg.laterality == Laterality::left);
    CHECK(cfg.fmt_csv);
    CHECK(cfg.fmt_svg);

    SUBCASE("later entries win (flag overrides)") {
        entries.emplace_back("binarize_p", "0.6");
        PipelineConfig cfg2 = config_from_entries(entries);
        CHECK(cfg2.thresholds.binarize_p == doctest::Approx(0.6f));
        CHECK(config_hash(entries) != config_hash(parse_config_file(dir / "c.cfg")));
    }

    SUBCASE("unknown keys are rejected") {
        entries.emplace_back("no_such_key", "1");
        CHECK_THROWS_AS(config_from_entries(entries), error);
    }

    SUBCASE("pmap and mask are mutually exclusive") {
        entries.emplace_back("mask", "/tmp/m.msk");
        CHECK_THROWS_AS(config_from_entries(entries), error);
    }
}
