#include "cartiq/errors.hpp"

namespace cartiq {

const char* errc_name(errc c) {
    switch (c) {
        case errc::malformed_file: return "MalformedFile";
        case errc::missing_metadata: return "MissingMetadata";
        case errc::invalid_geometry: return "InvalidGeometry";
        case errc::non_binary_values: return "NonBinaryValues";
        case errc::grid_mismatch: return "GridMismatch";
        case errc::degenerate_intensity: return "DegenerateIntensity";
        case errc::policy_echo_out_of_range: return "PolicyEchoOutOfRange";
        case errc::insufficient_points: return "InsufficientPoints";
        case errc::too_few_echoes: return "TooFewEchoes";
        case errc::invalid_range: return "InvalidRange";
        case errc::empty_validation_set: return "EmptyValidationSet";
        case errc::empty_mask: return "EmptyMask";
        case errc::empty_plate: return "EmptyPlate";
        case errc::empty_region: return "EmptyRegion";
        case errc::no_overlap: return "NoOverlap";
        case errc::selector_mismatch: return "SelectorMismatch";
        case errc::zero_plate_area: return "ZeroPlateArea";
        case errc::constant_column: return "ConstantColumn";
        case errc::zero_mean_pair: return "ZeroMeanPair";
        case errc::empty_truth: return "EmptyTruth";
        case errc::invalid_spec: return "InvalidSpec";
        case errc::config_error: return "ConfigError";
    }
    return "UnknownError";
}

int exit_code_for(errc c) {
    switch (c) {
        case errc::config_error:
        case errc::invalid_spec:
        case errc::invalid_range:
        case errc::empty_validation_set:
            return 2;
        case errc::malformed_file:
        case errc::missing_metadata:
        case errc::invalid_geometry:
        case errc::non_binary_values:
        case errc::grid_mismatch:
        case errc::empty_mask:
        case errc::empty_truth:
        case errc::selector_mismatch:
            return 3;
        default:
            return 4;
    }
}

} // namespace cartiq
