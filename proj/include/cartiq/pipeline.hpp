#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cartiq/anatomy.hpp"
#include "cartiq/longitudinal.hpp"
#include "cartiq/mask_refine.hpp"
#include "cartiq/t2fit.hpp"

namespace cartiq {

struct TimepointInput {
    std::string volume;     // required
    std::string pmap;       // exactly one of pmap / mask
    std::string mask;       // a binary mask skips binarization thresholds
    std::string truth_mask; // optional; enables the compare stage
};

struct PipelineConfig {
    TimepointInput baseline;
    TimepointInput followup; // optional second timepoint (empty volume = absent)
    std::string out_dir = ".";
    std::uint64_t seed = 1;
    int threads = 0;
    RefinementThresholds thresholds;
    FitOptions fit;
    double bin_width_deg = 1.0;
    Laterality laterality = Laterality::right;
    Connectivity connectivity = Connectivity::eight;
    bool fmt_csv = true;
    bool fmt_json = true;
    bool fmt_svg = false;

    // canonical key=value entries, kept for the provenance hash
    std::vector<std::pair<std::string, std::string>> entries;

    bool has_followup() const { return !followup.volume.empty(); }
};

// `key = value` lines, '#' comments. Later entries override earlier ones.
std::vector<std::pair<std::string, std::string>> parse_config_file(
    const std::filesystem::path& path);

// Builds a validated config from entries (file entries first, then flag
// overrides). Throws ConfigError on unknown keys or bad values.
PipelineConfig config_from_entries(
    const std::vector<std::pair<std::string, std::string>>& entries);

// FNV-1a over the canonical serialization of the entries.
std::string config_hash(const std::vector<std::pair<std::string, std::string>>& entries);

nlohmann::json provenance_json(const PipelineConfig& config);

// refine -> regions -> (longitudinal) -> (compare), one report per stage.
// Returns 0 on success or the exit code matching the failing stage's
// error, after printing a diagnostic naming the stage and input.
int run_pipeline(const PipelineConfig& config);

// report emission, shared with the standalone subcommands
void write_region_report_csv(const std::filesystem::path& path, const RegionReport& report,
                             const nlohmann::json& provenance);
nlohmann::json region_report_json(const RegionReport& report);
nlohmann::json agreement_json(const struct AgreementSummary& s);
void write_change_map_svg(const std::filesystem::path& path, const ChangeMap& cm);
void write_plate_container(const std::filesystem::path& path, const FlattenedPlate& plate);

} // namespace cartiq
