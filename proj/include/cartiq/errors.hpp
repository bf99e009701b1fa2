#pragma once

#include <stdexcept>
#include <string>

namespace cartiq {

enum class errc {
    // file ingestion
    malformed_file,
    missing_metadata,
    invalid_geometry,
    non_binary_values,
    // pairing / shape
    grid_mismatch,
    // preprocessing
    degenerate_intensity,
    policy_echo_out_of_range,
    // fitting
    insufficient_points,
    too_few_echoes,
    invalid_range,
    // refinement
    empty_validation_set,
    // anatomy
    empty_mask,
    empty_plate,
    empty_region,
    // longitudinal
    no_overlap,
    selector_mismatch,
    zero_plate_area,
    // statistics
    constant_column,
    zero_mean_pair,
    empty_truth,
    // phantom / config
    invalid_spec,
    config_error,
};

const char* errc_name(errc c);

class error : public std::runtime_error {
public:
    error(errc code, const std::string& what)
        : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

    errc code() const { return code_; }

private:
    errc code_;
};

// Exit-code categories used by the CLI: 2 config, 3 data, 4 numerical.
int exit_code_for(errc c);

} // namespace cartiq
