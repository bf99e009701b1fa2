#include "cartiq/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "cartiq/io.hpp"
#include "cartiq/metrics.hpp"
#include "cartiq/version.hpp"

namespace cartiq {

namespace {

using nlohmann::json;

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        double v = std::stod(value, &pos);
        if (pos != value.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw error(errc::config_error, "bad numeric value for " + key + ": '" + value + "'");
    }
}

long parse_long(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        long v = std::stol(value, &pos);
        if (pos != value.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw error(errc::config_error, "bad integer value for " + key + ": '" + value + "'");
    }
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw error(errc::config_error, "cannot write " + path.string());
    os << text;
}

void write_json_file(const std::filesystem::path& path, const json& j) {
    write_text_file(path, j.dump(2) + "\n");
}

} // namespace

std::vector<std::pair<std::string, std::string>> parse_config_file(
    const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw error(errc::config_error, "cannot open config file " + path.string());
    std::vector<std::pair<std::string, std::string>> entries;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        std::size_t eq = t.find('=');
        if (eq == std::string::npos) {
            throw error(errc::config_error, path.string() + ":" + std::to_string(lineno) +
                                                ": expected key = value");
        }
        std::string key = trim(t.substr(0, eq));
        std::string value = trim(t.substr(eq + 1));
        if (key.empty()) {
            throw error(errc::config_error,
                        path.string() + ":" + std::to_string(lineno) + ": empty key");
        }
        entries.emplace_back(key, value);
    }
    return entries;
}

PipelineConfig config_from_entries(
    const std::vector<std::pair<std::string, std::string>>& entries) {
    PipelineConfig cfg;
    cfg.entries = entries;
    for (const auto& [key, value] : entries) {
        if (key == "out_dir") {
            cfg.out_dir = value;
        } else if (key == "seed") {
            cfg.seed = static_cast<std::uint64_t>(parse_long(key, value));
        } else if (key == "threads") {
            cfg.threads = static_cast<int>(parse_long(key, value));
        } else if (key == "volume") {
            cfg.baseline.volume = value;
        } else if (key == "pmap") {
            cfg.baseline.pmap = value;
        } else if (key == "mask") {
            cfg.baseline.mask = value;
        } else if (key == "truth_mask") {
            cfg.baseline.truth_mask = value;
        } else if (key == "followup_volume") {
            cfg.followup.volume = value;
        } else if (key == "followup_pmap") {
            cfg.followup.pmap = value;
        } else if (key == "followup_mask") {
            cfg.followup.mask = value;
        } else if (key == "followup_truth_mask") {
            cfg.followup.truth_mask = value;
        } else if (key == "candidate_p") {
            cfg.thresholds.candidate_p = static_cast<float>(parse_double(key, value));
        } else if (key == "binarize_p") {
            cfg.thresholds.binarize_p = static_cast<float>(parse_double(key, value));
        } else if (key == "min_voxels_per_slice") {
            cfg.thresholds.min_voxels_per_slice = static_cast<int>(parse_long(key, value));
        } else if (key == "t2_lo") {
            cfg.fit.t2_lo_ms = parse_double(key, value);
        } else if (key == "t2_hi") {
            cfg.fit.t2_hi_ms = parse_double(key, value);
        } else if (key == "max_iterations") {
            cfg.fit.max_iterations = static_cast<int>(parse_long(key, value));
        } else if (key == "tolerance") {
            cfg.fit.tolerance = parse_double(key, value);
        } else if (key == "noise_model") {
            if (value == "offset") {
                cfg.fit.noise_model = NoiseModel::offset;
            } else if (value == "rician") {
                cfg.fit.noise_model = NoiseModel::rician_floor;
            } else {
                throw error(errc::config_error, "noise_model must be offset or rician");
            }
        } else if (key == "bin_width_deg") {
            cfg.bin_width_deg = parse_double(key, value);
        } else if (key == "laterality") {
            if (value == "left") {
                cfg.laterality = Laterality::left;
            } else if (value == "right") {
                cfg.laterality = Laterality::right;
            } else {
                throw error(errc::config_error, "laterality must be left or right");
            }
        } else if (key == "connectivity") {
            long c = parse_long(key, value);
            if (c == 4) {
                cfg.connectivity = Connectivity::four;
            } else if (c == 8) {
                cfg.connectivity = Connectivity::eight;
            } else {
                throw error(errc::config_error, "connectivity must be 4 or 8");
            }
        } else if (key == "formats") {
            cfg.fmt_csv = cfg.fmt_json = cfg.fmt_svg = false;
            std::string v = value;
            std::replace(v.begin(), v.end(), ',', ' ');
            std::istringstream ss(v);
            std::string f;
            while (ss >> f) {
                if (f == "csv") {
                    cfg.fmt_csv = true;
                } else if (f == "json") {
                    cfg.fmt_json = true;
                } else if (f == "svg") {
                    cfg.fmt_svg = true;
                } else {
                    throw error(errc::config_error, "unknown report format '" + f + "'");
                }
            }
            cfg.fmt_json = true; // stage reports are always machine-readable
        } else {
            throw error(errc::config_error, "unknown config key '" + key + "'");
        }
    }

    if (cfg.baseline.volume.empty()) {
        throw error(errc::config_error, "config needs a volume path");
    }
    if (cfg.baseline.pmap.empty() == cfg.baseline.mask.empty()) {
        throw error(errc::config_error, "config needs exactly one of pmap / mask");
    }
    if (cfg.has_followup() && cfg.followup.pmap.empty() == cfg.followup.mask.empty()) {
        throw error(errc::config_error,
                    "followup timepoint needs exactly one of followup_pmap / followup_mask");
    }
    return cfg;
}

std::string config_hash(const std::vector<std::pair<std::string, std::string>>& entries) {
    // canonicalize: later entries override earlier ones, then sort by key;
    // execution-environment keys stay out of the hash because they cannot
    // change any result byte
    std::map<std::string, std::string> effective;
    for (const auto& [k, v] : entries) {
        if (k == "out_dir" || k == "threads") continue;
        effective[k] = v;
    }
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&](const std::string& s) {
        for (unsigned char c : s) {
            h ^= c;
            h *= 1099511628211ull;
        }
        h ^= 0x1f;
        h *= 1099511628211ull;
    };
    for (const auto& [k, v] : effective) {
        mix(k);
        mix(v);
    }
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

json provenance_json(const PipelineConfig& config) {
    return json{{"toolkit_version", kVersion},
                {"config_hash", config_hash(config.entries)},
                {"seed", config.seed}};
}

void write_region_report_csv(const std::filesystem::path& path, const RegionReport& report,
                             const json& provenance) {
    std::string text;
    text += "# toolkit_version=" + provenance.at("toolkit_version").get<std::string>() +
            " config_hash=" + provenance.at("config_hash").get<std::string>() +
            " seed=" + std::to_string(provenance.at("seed").get<std::uint64_t>()) + "\n";
    text += "region,mean_t2_ms,voxel_count,pixel_count\n";
    for (const RegionRow& row : report.rows) {
        text += row.name + ",";
        text += (row.voxel_count > 0) ? fmt_double(row.mean_t2_ms) : std::string("");
        text += "," + std::to_string(row.voxel_count) + "," + std::to_string(row.pixel_count) +
                "\n";
    }
    write_text_file(path, text);
}

json region_report_json(const RegionReport& report) {
    json rows = json::array();
    for (const RegionRow& row : report.rows) {
        json r{{"region", row.name},
               {"voxel_count", row.voxel_count},
               {"pixel_count", row.pixel_count}};
        if (row.voxel_count > 0) {
            r["mean_t2_ms"] = row.mean_t2_ms;
        } else {
            r["mean_t2_ms"] = nullptr;
        }
        rows.push_back(std::move(r));
    }
    return json{{"regions", rows}};
}

json agreement_json(const AgreementSummary& s) {
    json j{{"bias", s.bias},         {"loa_lo", s.loa_lo},
           {"loa_hi", s.loa_hi},     {"mae", s.mae},
           {"rms_cv_pct", s.rms_cv}, {"bias_p_value", s.bias_p_value}};
    j["spearman_rho"] = std::isnan(s.spearman_rho) ? json() : json(s.spearman_rho);
    j["pearson_r"] = std::isnan(s.pearson_r) ? json() : json(s.pearson_r);
    return j;
}

void write_change_map_svg(const std::filesystem::path& path, const ChangeMap& cm) {
    // blue (decrease) -> white (0) -> red (increase), scaled to max |delta|
    double amax = 0.0;
    for (float d : cm.delta) {
        if (!std::isnan(d)) amax = std::max(amax, std::abs(static_cast<double>(d)));
    }
    if (amax == 0.0) amax = 1.0;

    const int cell = 6;
    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
           std::to_string(cm.n_bins * cell) + "\" height=\"" +
           std::to_string(cm.n_slices * cell) + "\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"#222\"/>\n";
    for (int u = 0; u < cm.n_slices; ++u) {
        for (int v = 0; v < cm.n_bins; ++v) {
            if (!cm.occupied(u, v)) continue;
            double t = std::clamp(static_cast<double>(cm.at(u, v)) / amax, -1.0, 1.0);
            int r = 255, g = 255, b = 255;
            if (t > 0) {
                g = b = static_cast<int>(std::lround(255.0 * (1.0 - t)));
            } else if (t < 0) {
                r = g = static_cast<int>(std::lround(255.0 * (1.0 + t)));
            }
            char buf[160];
            std::snprintf(buf, sizeof(buf),
                          "<rect x=\"%d\" y=\"%d\" width=\"%d\" height=\"%d\" "
                          "fill=\"rgb(%d,%d,%d)\"/>\n",
                          v * cell, u * cell, cell, cell, r, g, b);
            svg += buf;
        }
    }
    svg += "</svg>\n";
    write_text_file(path, svg);
}

void write_plate_container(const std::filesystem::path& path, const FlattenedPlate& plate) {
    RawContainer rc;
    rc.kind = ContainerKind::float_volume;
    rc.grid = Grid3{plate.n_slices, plate.n_bins, 1};
    rc.channels = 6; // t2_deep, t2_sup, w_deep, w_sup, column_count, thickness
    std::size_t n = rc.grid.voxels();
    rc.data.assign(n * 6, 0.0f);
    for (int u = 0; u < plate.n_slices; ++u) {
        for (int v = 0; v < plate.n_bins; ++v) {
            std::size_t i = static_cast<std::size_t>(v) * plate.n_slices + u;
            const PlateCell& cell = plate.at(u, v);
            rc.data[0 * n + i] = cell.t2[0];
            rc.data[1 * n + i] = cell.t2[1];
            rc.data[2 * n + i] = static_cast<float>(cell.weight[0]);
            rc.data[3 * n + i] = static_cast<float>(cell.weight[1]);
            rc.data[4 * n + i] = static_cast<float>(cell.column_count);
            rc.data[5 * n + i] = cell.thickness_mm;
        }
    }
    write_raw_container(path, rc);
}

namespace {

struct TimepointOutputs {
    SegmentationMask mask;
    T2Map t2;
    FlattenedPlate plate;
    PlateLabels labels;
    RegionReport report;
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
};

json labels_json(const PlateLabels& labels) {
    json j;
    j["side_split"] = labels.side_split;
    j["side_of_slice"] = labels.side_of_slice;
    j["sector_of_bin_lateral"] = labels.sector_of_bin[static_cast<int>(Side::lateral)];
    j["sector_of_bin_medial"] = labels.sector_of_bin[static_cast<int>(Side::medial)];
    return j;
}

TimepointOutputs process_timepoint(const PipelineConfig& cfg, const TimepointInput& in,
                                   const std::string& tag, const json& provenance) {
    namespace fs = std::filesystem;
    const fs::path out(cfg.out_dir);

    MultiEchoVolume volume = load_multi_echo_volume(in.volume);

    ProbabilityMap pm;
    RefinementThresholds thr = cfg.thresholds;
    if (!in.pmap.empty()) {
        pm = load_probability_map(in.pmap);
    } else {
        // binary reader mask: refinement degenerates to the physiological
        // T2 gate, matching how reader segmentations are refined
        SegmentationMask m = load_mask(in.mask);
        std::vector<float> p(m.grid().voxels(), 0.0f);
        for (std::size_t i = 0; i < p.size(); ++i) p[i] = m.at(i) ? 1.0f : 0.0f;
        pm = ProbabilityMap(m.grid(), std::move(p));
        thr = RefinementThresholds{0.0f, 0.5f, 0};
    }

    TimepointOutputs tp;
    tp.spacing = volume.spacing_mm();
    RefineStats stats;
    auto [mask, t2] = refine(pm, volume, thr, cfg.fit, &stats, cfg.threads);
    tp.mask = std::move(mask);
    tp.t2 = std::move(t2);

    write_mask(out / (tag + "_mask.msk"), tp.mask);
    write_t2_map(out / (tag + "_t2.t2m"), tp.t2, tp.spacing);
    json refine_report{{"provenance", provenance},
                       {"input_volume", in.volume},
                       {"input_segmentation", in.pmap.empty() ? in.mask : in.pmap},
                       {"thresholds",
                        {{"candidate_p", thr.candidate_p},
                         {"binarize_p", thr.binarize_p},
                         {"min_voxels_per_slice", thr.min_voxels_per_slice}}},
                       {"candidate_voxels", stats.candidate_voxels},
                       {"fitted", stats.fitted},
                       {"converged", stats.converged},
                       {"physiological", stats.physiological},
                       {"final_voxels", stats.final_voxels}};
    write_json_file(out / ("refine_" + tag + ".json"), refine_report);

    PlateOptions popts;
    popts.bin_width_deg = cfg.bin_width_deg;
    tp.plate = project_to_plane(tp.t2, tp.mask, tp.spacing, popts);
    tp.labels = partition(tp.plate, cfg.laterality);
    tp.report = build_region_report(tp.plate, tp.labels);

    if (cfg.fmt_csv) {
        write_region_report_csv(out / ("regions_" + tag + ".csv"), tp.report, provenance);
    }
    json jr = region_report_json(tp.report);
    jr["provenance"] = provenance;
    jr["labels"] = labels_json(tp.labels);
    jr["mask_voxels"] = tp.plate.mask_voxels;
    jr["dropped_voxels"] = tp.plate.dropped_voxels;
    write_json_file(out / ("regions_" + tag + ".json"), jr);
    write_plate_container(out / ("plate_" + tag + ".plt"), tp.plate);
    return tp;
}

} // namespace

int run_pipeline(const PipelineConfig& config) {
    namespace fs = std::filesystem;
    std::string stage = "config";
    std::string input = "";
    try {
        for (const TimepointInput* in :
             {&config.baseline, config.has_followup() ? &config.followup : nullptr}) {
            if (!in) continue;
            for (const std::string& p :
                 {in->volume, in->pmap, in->mask, in->truth_mask}) {
                if (!p.empty() && !fs::exists(p)) {
                    throw error(errc::config_error, "input file does not exist: " + p);
                }
            }
        }
        fs::create_directories(config.out_dir);

        const json prov = provenance_json(config);

        stage = "refine/regions (baseline)";
        input = config.baseline.volume;
        TimepointOutputs base = process_timepoint(config, config.baseline, "baseline", prov);

        if (!config.baseline.truth_mask.empty()) {
            stage = "compare (baseline)";
            input = config.baseline.truth_mask;
            SegmentationMask truth = load_mask(config.baseline.truth_mask);
            json cmp{{"provenance", prov},
                     {"dice", dice(base.mask, truth)},
                     {"jaccard", jaccard(base.mask, truth)}};
            write_json_file(fs::path(config.out_dir) / "compare_baseline.json", cmp);
        }

        if (config.has_followup()) {
            stage = "refine/regions (followup)";
            input = config.followup.volume;
            TimepointOutputs follow =
                process_timepoint(config, config.followup, "followup", prov);

            if (!config.followup.truth_mask.empty()) {
                stage = "compare (followup)";
                input = config.followup.truth_mask;
                SegmentationMask truth = load_mask(config.followup.truth_mask);
                json cmp{{"provenance", prov},
                         {"dice", dice(follow.mask, truth)},
                         {"jaccard", jaccard(follow.mask, truth)}};
                write_json_file(fs::path(config.out_dir) / "compare_followup.json", cmp);
            }

            stage = "longitudinal";
            input = config.followup.volume;
            Translation tr = register_plates(base.plate, follow.plate);
            ChangeMap cm = change_map(base.plate, follow.plate, tr);
            auto clusters = find_focal_clusters(cm, 0.01, config.connectivity);
            double lesion_pct = lesion_area_percentage(clusters, cm.plate_area);
            auto deltas = region_change(base.report, follow.report);

            json jc = json::array();
            for (const Cluster& cl : clusters) {
                jc.push_back(json{{"area_px", cl.pixels.size()},
                                  {"area_fraction", cl.area_fraction},
                                  {"mean_delta_ms", cl.mean_delta}});
            }
            json jd = json::array();
            for (const RegionDelta& rd : deltas) {
                jd.push_back(json{{"region", rd.name},
                                  {"delta_ms", rd.defined ? json(rd.delta_ms) : json()}});
            }
            json rep{{"provenance", prov},
                     {"translation", {{"du", tr.du}, {"dv", tr.dv}}},
                     {"plate_area_px", cm.plate_area},
                     {"mean_delta_ms", cm.mean_delta},
                     {"sd_delta_ms", cm.sd_delta},
                     {"clusters", jc},
                     {"lesion_area_pct", lesion_pct},
                     {"region_deltas", jd}};
            write_json_file(fs::path(config.out_dir) / "longitudinal.json", rep);
            if (config.fmt_svg) {
                write_change_map_svg(fs::path(config.out_dir) / "change_map.svg", cm);
            }
        }
        return 0;
    } catch (const error& e) {
        std::cerr << "cartiq: stage '" << stage << "' failed on " << input << ": " << e.what()
                  << "\n";
        return exit_code_for(e.code());
    } catch (const std::exception& e) {
        std::cerr << "cartiq: stage '" << stage << "' failed on " << input << ": " << e.what()
                  << "\n";
        return 4;
    }
}

} // namespace cartiq
