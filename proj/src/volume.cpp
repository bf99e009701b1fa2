#include "cartiq/volume.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace cartiq {

std::string Grid3::str() const {
    std::ostringstream os;
    os << "(" << nx << "," << ny << "," << nz << ")";
    return os.str();
}

void check_grid_compatibility(const Grid3& a, const Grid3& b) {
    if (!(a == b)) {
        throw error(errc::grid_mismatch, "dims " + a.str() + " vs " + b.str());
    }
}

MultiEchoVolume::MultiEchoVolume(Grid3 grid, std::vector<double> te_ms, double tr_ms,
                                 std::array<double, 3> spacing_mm, std::vector<float> data)
    : grid_(grid),
      te_ms_(std::move(te_ms)),
      tr_ms_(tr_ms),
      spacing_mm_(spacing_mm),
      data_(std::move(data)) {
    if (grid_.nx <= 0 || grid_.ny <= 0 || grid_.nz <= 0) {
        throw error(errc::invalid_geometry, "nonpositive dims " + grid_.str());
    }
    for (double s : spacing_mm_) {
        if (!(s > 0.0) || !std::isfinite(s)) {
            throw error(errc::invalid_geometry, "nonpositive spacing");
        }
    }
    if (te_ms_.size() < 2) {
        throw error(errc::missing_metadata, "need at least 2 echo times, got " +
                                                std::to_string(te_ms_.size()));
    }
    for (std::size_t e = 0; e < te_ms_.size(); ++e) {
        if (!(te_ms_[e] > 0.0) || !std::isfinite(te_ms_[e]) ||
            (e > 0 && !(te_ms_[e] > te_ms_[e - 1]))) {
            throw error(errc::invalid_geometry, "TE list must be strictly increasing and > 0");
        }
    }
    if (data_.size() != grid_.voxels() * te_ms_.size()) {
        throw error(errc::malformed_file,
                    "payload has " + std::to_string(data_.size()) + " values, expected " +
                        std::to_string(grid_.voxels() * te_ms_.size()));
    }
    for (float v : data_) {
        if (!std::isfinite(v) || v < 0.0f) {
            throw error(errc::malformed_file, "signal values must be finite and non-negative");
        }
    }
}

ProbabilityMap::ProbabilityMap(Grid3 grid, std::vector<float> values)
    : grid_(grid), values_(std::move(values)) {
    if (grid_.nx <= 0 || grid_.ny <= 0 || grid_.nz <= 0) {
        throw error(errc::invalid_geometry, "nonpositive dims " + grid_.str());
    }
    if (values_.size() != grid_.voxels()) {
        throw error(errc::malformed_file, "probability payload size mismatch");
    }
    for (float v : values_) {
        if (!std::isfinite(v) || v < 0.0f || v > 1.0f) {
            throw error(errc::malformed_file, "probability values must lie in [0,1]");
        }
    }
}

SegmentationMask::SegmentationMask(Grid3 grid, std::vector<std::uint8_t> values)
    : grid_(grid), values_(std::move(values)) {
    if (grid_.nx <= 0 || grid_.ny <= 0 || grid_.nz <= 0) {
        throw error(errc::invalid_geometry, "nonpositive dims " + grid_.str());
    }
    if (values_.size() != grid_.voxels()) {
        throw error(errc::malformed_file, "mask payload size mismatch");
    }
}

std::size_t SegmentationMask::count() const {
    std::size_t n = 0;
    for (auto v : values_) n += (v != 0);
    return n;
}

T2Map::T2Map(Grid3 grid)
    : grid_(grid),
      t2_(grid.voxels(), std::nanf("")),
      s0_(grid.voxels(), std::nanf("")),
      c_(grid.voxels(), std::nanf("")) {}

void T2Map::set(std::size_t idx, float t2, float s0, float c) {
    t2_[idx] = t2;
    s0_[idx] = s0;
    c_[idx] = c;
}

void T2Map::clear(std::size_t idx) {
    t2_[idx] = std::nanf("");
    s0_[idx] = std::nanf("");
    c_[idx] = std::nanf("");
}

std::size_t T2Map::count_present() const {
    std::size_t n = 0;
    for (float v : t2_) n += !std::isnan(v);
    return n;
}

} // namespace cartiq
