// cartiq: quantitative T2 relaxometry for knee cartilage from MESE MRI.
//
// Subcommands: fit, refine, regions, longitudinal, compare, agree,
// preprocess, phantom, pipeline. Exit codes: 0 success, 2 config error,
// 3 data error, 4 numerical failure.

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cartiq/io.hpp"
#include "cartiq/metrics.hpp"
#include "cartiq/phantom.hpp"
#include "cartiq/pipeline.hpp"
#include "cartiq/preprocess.hpp"
#include "cartiq/version.hpp"

namespace {

using namespace cartiq;
using nlohmann::json;

void write_json_out(const std::string& path, const json& j) {
    if (path.empty() || path == "-") {
        std::cout << j.dump(2) << "\n";
        return;
    }
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw error(errc::config_error, "cannot write " + path);
    os << j.dump(2) << "\n";
}

PairedMeasurements read_pairs_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw error(errc::config_error, "cannot open " + path);
    PairedMeasurements pairs;
    std::string line;
    bool header = true;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        if (header) { // first non-empty row is the header
            header = false;
            continue;
        }
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream ss(line);
        double a, b;
        if (!(ss >> a >> b)) {
            throw error(errc::malformed_file,
                        path + ":" + std::to_string(lineno) + ": expected two numeric columns");
        }
        pairs.emplace_back(a, b);
    }
    return pairs;
}

json phantom_spec_from_json(const json& j, PhantomSpec& spec) {
    auto opt = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    opt("nx", spec.nx);
    opt("ny", spec.ny);
    opt("nz", spec.nz);
    opt("cx", spec.cx);
    opt("cy", spec.cy);
    opt("r_inner", spec.r_inner);
    opt("r_outer", spec.r_outer);
    opt("theta_start_deg", spec.theta_start_deg);
    opt("theta_span_deg", spec.theta_span_deg);
    opt("slice_lo", spec.slice_lo);
    opt("slice_hi", spec.slice_hi);
    opt("s0", spec.s0);
    opt("c", spec.c);
    opt("noise_sigma", spec.noise_sigma);
    opt("background_t2_ms", spec.background_t2_ms);
    opt("tr_ms", spec.tr_ms);
    opt("spacing", spec.spacing);
    opt("bin_width_deg", spec.bin_width_deg);
    opt("seed", spec.seed);
    if (j.contains("te_ms")) spec.te_ms = j.at("te_ms").get<std::vector<double>>();
    if (j.contains("laterality")) {
        spec.laterality =
            (j.at("laterality").get<std::string>() == "left") ? Laterality::left
                                                              : Laterality::right;
    }
    if (j.contains("t2_uniform")) {
        spec.set_uniform_t2(j.at("t2_uniform").get<double>());
    }
    if (j.contains("t2_regions")) {
        auto v = j.at("t2_regions").get<std::vector<double>>();
        if (v.size() != 12) {
            throw error(errc::invalid_spec, "t2_regions needs exactly 12 values");
        }
        std::copy(v.begin(), v.end(), spec.t2_regions.begin());
    }
    if (j.contains("t2_shells")) {
        spec.t2_shells = j.at("t2_shells").get<std::vector<double>>();
    }
    return j;
}

int dispatch(int argc, char** argv) {
    CLI::App app{"quantitative T2 relaxometry toolkit for knee cartilage MESE MRI"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    // ---- fit ----
    auto* fit_cmd = app.add_subcommand("fit", "voxelwise T2 fit over a candidate mask");
    std::string fit_volume, fit_mask, fit_out, fit_summary;
    int fit_threads = 0;
    FitOptions fit_opts;
    bool fit_rician = false;
    fit_cmd->add_option("--volume", fit_volume, "multi-echo volume")->required();
    fit_cmd->add_option("--mask", fit_mask, "candidate mask")->required();
    fit_cmd->add_option("--out", fit_out, "output T2 map (.t2m)")->required();
    fit_cmd->add_option("--summary", fit_summary, "fit summary JSON path (default: stdout)");
    fit_cmd->add_option("--threads", fit_threads, "worker threads (0 = hardware)");
    fit_cmd->add_option("--max-iterations", fit_opts.max_iterations);
    fit_cmd->add_option("--tolerance", fit_opts.tolerance);
    fit_cmd->add_option("--t2-lo", fit_opts.t2_lo_ms);
    fit_cmd->add_option("--t2-hi", fit_opts.t2_hi_ms);
    fit_cmd->add_flag("--rician", fit_rician, "use the Rician-floor noise model");

    // ---- refine ----
    auto* refine_cmd = app.add_subcommand("refine", "probability map -> refined mask + T2 map");
    std::string rf_pmap, rf_volume, rf_thresholds, rf_out_mask, rf_out_t2;
    int rf_threads = 0;
    refine_cmd->add_option("--pmap", rf_pmap, "probability map")->required();
    refine_cmd->add_option("--volume", rf_volume, "multi-echo volume")->required();
    refine_cmd->add_option("--thresholds", rf_thresholds,
                           "JSON with candidate_p, binarize_p, min_voxels_per_slice");
    refine_cmd->add_option("--out-mask", rf_out_mask, "refined mask output")->required();
    refine_cmd->add_option("--out-t2", rf_out_t2, "restricted T2 map output")->required();
    refine_cmd->add_option("--threads", rf_threads);

    // ---- regions ----
    auto* regions_cmd = app.add_subcommand("regions", "subregional mean T2 report");
    std::string rg_t2, rg_mask, rg_out, rg_lat = "right";
    double rg_bin = 1.0;
    regions_cmd->add_option("--t2", rg_t2, "T2 map (.t2m)")->required();
    regions_cmd->add_option("--mask", rg_mask, "mask")->required();
    regions_cmd->add_option("--out", rg_out, "report CSV path")->required();
    regions_cmd->add_option("--laterality", rg_lat, "left | right");
    regions_cmd->add_option("--bin-width", rg_bin, "angular bin width, degrees");

    // ---- longitudinal ----
    auto* long_cmd = app.add_subcommand("longitudinal", "two-timepoint change analysis");
    std::string lg_bt2, lg_bmask, lg_ft2, lg_fmask, lg_out, lg_svg, lg_lat = "right";
    int lg_conn = 8;
    long_cmd->add_option("--baseline-t2", lg_bt2)->required();
    long_cmd->add_option("--baseline-mask", lg_bmask)->required();
    long_cmd->add_option("--followup-t2", lg_ft2)->required();
    long_cmd->add_option("--followup-mask", lg_fmask)->required();
    long_cmd->add_option("--out", lg_out, "change report JSON")->required();
    long_cmd->add_option("--svg", lg_svg, "optional change-map heatmap (SVG)");
    long_cmd->add_option("--laterality", lg_lat);
    long_cmd->add_option("--connectivity", lg_conn, "4 or 8");

    // ---- compare ----
    auto* cmp_cmd = app.add_subcommand("compare", "Dice / Jaccard between two masks");
    std::string cp_a, cp_b, cp_out;
    cmp_cmd->add_option("--mask-a", cp_a)->required();
    cmp_cmd->add_option("--mask-b", cp_b)->required();
    cmp_cmd->add_option("--out", cp_out, "JSON output (default: stdout)");

    // ---- agree ----
    auto* agree_cmd = app.add_subcommand("agree", "agreement statistics for paired values");
    std::string ag_pairs, ag_out;
    agree_cmd->add_option("--pairs", ag_pairs, "CSV with two numeric columns and a header")
        ->required();
    agree_cmd->add_option("--out", ag_out, "JSON output (default: stdout)");

    // ---- preprocess ----
    auto* prep_cmd = app.add_subcommand("preprocess", "per-slice intensity normalization");
    std::string pp_volume, pp_out;
    prep_cmd->add_option("--volume", pp_volume)->required();
    prep_cmd->add_option("--out", pp_out, "normalized float container")->required();

    // ---- phantom ----
    auto* ph_cmd = app.add_subcommand("phantom", "synthetic annulus phantom generator");
    std::string ph_spec, ph_dir;
    ph_cmd->add_option("--spec", ph_spec, "phantom spec JSON")->required();
    ph_cmd->add_option("--out-dir", ph_dir, "output directory")->required();

    // ---- pipeline ----
    auto* pipe_cmd = app.add_subcommand("pipeline", "full analysis from a config file");
    std::string pl_config;
    std::vector<std::string> pl_sets;
    std::string pl_outdir;
    pipe_cmd->add_option("--config", pl_config, "key = value config file")->required();
    pipe_cmd->add_option("--set", pl_sets, "override: key=value (repeatable, wins over file)");
    pipe_cmd->add_option("--out-dir", pl_outdir, "override the output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2; // bad flags are configuration errors
    }

    if (*fit_cmd) {
        if (fit_rician) fit_opts.noise_model = NoiseModel::rician_floor;
        MultiEchoVolume volume = load_multi_echo_volume(fit_volume);
        SegmentationMask mask = load_mask(fit_mask);
        auto start = std::chrono::steady_clock::now();
        T2Map t2 = compute_t2_map(volume, mask, fit_opts, fit_threads);
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
                          .count();
        auto [gated, surviving] = filter_physiological(t2);
        write_t2_map(fit_out, t2, volume.spacing_mm());
        json summary{{"toolkit_version", kVersion},
                     {"voxels_fitted", mask.count()},
                     {"converged", t2.count_present()},
                     {"discarded_physiological", t2.count_present() - surviving.count()},
                     {"runtime_seconds", secs}};
        write_json_out(fit_summary, summary);
        return 0;
    }

    if (*refine_cmd) {
        RefinementThresholds thr;
        if (!rf_thresholds.empty()) {
            std::ifstream is(rf_thresholds);
            if (!is) throw error(errc::config_error, "cannot open " + rf_thresholds);
            json j;
            is >> j;
            if (j.contains("candidate_p")) thr.candidate_p = j["candidate_p"].get<float>();
            if (j.contains("binarize_p")) thr.binarize_p = j["binarize_p"].get<float>();
            if (j.contains("min_voxels_per_slice")) {
                thr.min_voxels_per_slice = j["min_voxels_per_slice"].get<int>();
            }
        }
        ProbabilityMap pm = load_probability_map(rf_pmap);
        MultiEchoVolume volume = load_multi_echo_volume(rf_volume);
        RefineStats stats;
        auto [mask, t2] = refine(pm, volume, thr, FitOptions{}, &stats, rf_threads);
        write_mask(rf_out_mask, mask);
        write_t2_map(rf_out_t2, t2, volume.spacing_mm());
        json summary{{"toolkit_version", kVersion},
                     {"candidate_voxels", stats.candidate_voxels},
                     {"converged", stats.converged},
                     {"physiological", stats.physiological},
                     {"final_voxels", stats.final_voxels}};
        std::cout << summary.dump(2) << "\n";
        return 0;
    }

    if (*regions_cmd) {
        T2Map t2 = load_t2_map(rg_t2);
        SegmentationMask mask = load_mask(rg_mask);
        RawContainer rc = read_raw_container(rg_t2);
        PlateOptions opts;
        opts.bin_width_deg = rg_bin;
        FlattenedPlate plate = project_to_plane(t2, mask, rc.spacing_mm, opts);
        Laterality lat = (rg_lat == "left") ? Laterality::left : Laterality::right;
        PlateLabels labels = partition(plate, lat);
        RegionReport report = build_region_report(plate, labels);
        json prov{{"toolkit_version", kVersion}, {"config_hash", ""}, {"seed", 0}};
        write_region_report_csv(rg_out, report, prov);
        return 0;
    }

    if (*long_cmd) {
        Laterality lat = (lg_lat == "left") ? Laterality::left : Laterality::right;
        auto load_tp = [&](const std::string& t2p, const std::string& mp) {
            T2Map t2 = load_t2_map(t2p);
            SegmentationMask mask = load_mask(mp);
            RawContainer rc = read_raw_container(t2p);
            FlattenedPlate plate = project_to_plane(t2, mask, rc.spacing_mm);
            PlateLabels labels = partition(plate, lat);
            RegionReport report = build_region_report(plate, labels);
            return std::make_pair(std::move(plate), std::move(report));
        };
        auto [bplate, breport] = load_tp(lg_bt2, lg_bmask);
        auto [fplate, freport] = load_tp(lg_ft2, lg_fmask);
        Translation tr = register_plates(bplate, fplate);
        ChangeMap cm = change_map(bplate, fplate, tr);
        auto clusters = find_focal_clusters(
            cm, 0.01, lg_conn == 4 ? Connectivity::four : Connectivity::eight);
        double pct = lesion_area_percentage(clusters, cm.plate_area);
        auto deltas = region_change(breport, freport);

        json jc = json::array();
        for (const Cluster& cl : clusters) {
            jc.push_back(json{{"area_px", cl.pixels.size()},
                              {"area_fraction", cl.area_fraction},
                              {"mean_delta_ms", cl.mean_delta}});
        }
        json jd = json::array();
        for (const RegionDelta& rd : deltas) {
            jd.push_back(
                json{{"region", rd.name}, {"delta_ms", rd.defined ? json(rd.delta_ms) : json()}});
        }
        json rep{{"toolkit_version", kVersion},
                 {"translation", {{"du", tr.du}, {"dv", tr.dv}}},
                 {"plate_area_px", cm.plate_area},
                 {"mean_delta_ms", cm.mean_delta},
                 {"sd_delta_ms", cm.sd_delta},
                 {"clusters", jc},
                 {"lesion_area_pct", pct},
                 {"region_deltas", jd}};
        write_json_out(lg_out, rep);
        if (!lg_svg.empty()) write_change_map_svg(lg_svg, cm);
        return 0;
    }

    if (*cmp_cmd) {
        SegmentationMask a = load_mask(cp_a);
        SegmentationMask b = load_mask(cp_b);
        write_json_out(cp_out, json{{"dice", dice(a, b)}, {"jaccard", jaccard(a, b)}});
        return 0;
    }

    if (*agree_cmd) {
        PairedMeasurements pairs = read_pairs_csv(ag_pairs);
        write_json_out(ag_out, agreement_json(agreement_summary(pairs)));
        return 0;
    }

    if (*prep_cmd) {
        MultiEchoVolume volume = load_multi_echo_volume(pp_volume);
        const Grid3& g = volume.grid();
        RawContainer rc;
        rc.kind = ContainerKind::float_volume;
        rc.grid = g;
        rc.channels = static_cast<std::uint32_t>(volume.echoes());
        rc.spacing_mm = volume.spacing_mm();
        rc.tr_ms = volume.tr_ms();
        rc.te_ms = volume.te_ms();
        rc.data.resize(g.voxels() * rc.channels);
        std::vector<float> slice(static_cast<std::size_t>(g.nx) * g.ny);
        int degenerate = 0;
        for (int e = 0; e < volume.echoes(); ++e) {
            for (int k = 0; k < g.nz; ++k) {
                for (int j = 0; j < g.ny; ++j) {
                    for (int i = 0; i < g.nx; ++i) {
                        slice[static_cast<std::size_t>(j) * g.nx + i] = volume.at(i, j, k, e);
                    }
                }
                std::size_t base = g.voxels() * e + g.index(0, 0, k);
                try {
                    std::vector<float> norm = normalize_slice(slice);
                    std::copy(norm.begin(), norm.end(), rc.data.begin() + base);
                } catch (const error& err) {
                    if (err.code() != errc::degenerate_intensity) throw;
                    // constant slice: no intensity information, emit zeros
                    std::fill_n(rc.data.begin() + base, slice.size(), 0.0f);
                    ++degenerate;
                }
            }
        }
        if (degenerate > 0) {
            std::cerr << "cartiq: " << degenerate
                      << " degenerate slice(s) carried no intensity scale; wrote zeros\n";
        }
        write_raw_container(pp_out, rc);
        return 0;
    }

    if (*ph_cmd) {
        std::ifstream is(ph_spec);
        if (!is) throw error(errc::config_error, "cannot open " + ph_spec);
        json j;
        try {
            is >> j;
        } catch (const std::exception& e) {
            throw error(errc::malformed_file, ph_spec + ": " + std::string(e.what()));
        }
        PhantomSpec spec;
        phantom_spec_from_json(j, spec);
        Phantom ph = generate_phantom(spec);
        std::filesystem::path dir(ph_dir);
        std::filesystem::create_directories(dir);
        write_volume(dir / "volume.mev", ph.volume);
        write_mask(dir / "mask.msk", ph.mask);
        write_probability_map(dir / "pmap.pmap", ph.pmap, ph.volume.spacing_mm());
        json truth = json::array();
        for (const TruthRow& row : ph.truth) {
            truth.push_back(json{{"region", row.name},
                                 {"mean_t2_ms", row.mean_t2_ms},
                                 {"voxel_count", row.voxel_count}});
        }
        write_json_out((dir / "truth.json").string(),
                       json{{"toolkit_version", kVersion},
                            {"seed", spec.seed},
                            {"mask_voxels", ph.mask.count()},
                            {"regions", truth}});
        return 0;
    }

    if (*pipe_cmd) {
        auto entries = parse_config_file(pl_config);
        for (const std::string& s : pl_sets) {
            std::size_t eq = s.find('=');
            if (eq == std::string::npos) {
                throw error(errc::config_error, "--set expects key=value, got '" + s + "'");
            }
            entries.emplace_back(s.substr(0, eq), s.substr(eq + 1));
        }
        if (!pl_outdir.empty()) entries.emplace_back("out_dir", pl_outdir);
        PipelineConfig cfg = config_from_entries(entries);
        return run_pipeline(cfg);
    }

    return 0;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return dispatch(argc, argv);
    } catch (const cartiq::error& e) {
        std::cerr << "cartiq: " << e.what() << "\n";
        return cartiq::exit_code_for(e.code());
    } catch (const std::exception& e) {
        std::cerr << "cartiq: " << e.what() << "\n";
        return 4;
    }
}
