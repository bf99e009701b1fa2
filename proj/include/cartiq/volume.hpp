#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cartiq/errors.hpp"

namespace cartiq {

struct Grid3 {
    int nx = 0, ny = 0, nz = 0;

    std::size_t voxels() const {
        return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) *
               static_cast<std::size_t>(nz);
    }
    std::size_t index(int i, int j, int k) const {
        return static_cast<std::size_t>(i) +
               static_cast<std::size_t>(nx) *
                   (static_cast<std::size_t>(j) + static_cast<std::size_t>(ny) * k);
    }
    bool operator==(const Grid3&) const = default;
    std::string str() const;
};

// Throws GridMismatch (with both dim tuples) unless dims match exactly.
void check_grid_compatibility(const Grid3& a, const Grid3& b);

// Multi-echo spin-echo volume. Voxel ordering is x-fastest, echo-slowest:
// data[i + nx*(j + ny*(k + nz*e))]. Signal stored as float regardless of
// on-disk type.
class MultiEchoVolume {
public:
    MultiEchoVolume() = default;
    MultiEchoVolume(Grid3 grid, std::vector<double> te_ms, double tr_ms,
                    std::array<double, 3> spacing_mm, std::vector<float> data);

    const Grid3& grid() const { return grid_; }
    int echoes() const { return static_cast<int>(te_ms_.size()); }
    const std::vector<double>& te_ms() const { return te_ms_; }
    double tr_ms() const { return tr_ms_; }
    const std::array<double, 3>& spacing_mm() const { return spacing_mm_; }

    float at(int i, int j, int k, int e) const {
        return data_[grid_.voxels() * e + grid_.index(i, j, k)];
    }
    const std::vector<float>& data() const { return data_; }

private:
    Grid3 grid_;
    std::vector<double> te_ms_;
    double tr_ms_ = 0.0;
    std::array<double, 3> spacing_mm_{1.0, 1.0, 1.0};
    std::vector<float> data_;
};

// Per-voxel cartilage probability, p in [0,1].
class ProbabilityMap {
public:
    ProbabilityMap() = default;
    ProbabilityMap(Grid3 grid, std::vector<float> values);

    const Grid3& grid() const { return grid_; }
    float at(std::size_t idx) const { return values_[idx]; }
    float at(int i, int j, int k) const { return values_[grid_.index(i, j, k)]; }
    const std::vector<float>& values() const { return values_; }

private:
    Grid3 grid_;
    std::vector<float> values_;
};

class SegmentationMask {
public:
    SegmentationMask() = default;
    explicit SegmentationMask(Grid3 grid) : grid_(grid), values_(grid.voxels(), 0) {}
    SegmentationMask(Grid3 grid, std::vector<std::uint8_t> values);

    const Grid3& grid() const { return grid_; }
    bool at(std::size_t idx) const { return values_[idx] != 0; }
    bool at(int i, int j, int k) const { return values_[grid_.index(i, j, k)] != 0; }
    void set(std::size_t idx, bool v) { values_[idx] = v ? 1 : 0; }
    void set(int i, int j, int k, bool v) { values_[grid_.index(i, j, k)] = v ? 1 : 0; }
    std::size_t count() const;
    const std::vector<std::uint8_t>& values() const { return values_; }

private:
    Grid3 grid_;
    std::vector<std::uint8_t> values_;
};

// Per-voxel fitted T2 (ms) with companion S0 and noise-floor c. Absent
// voxels carry NaN in all three channels.
class T2Map {
public:
    T2Map() = default;
    explicit T2Map(Grid3 grid);

    const Grid3& grid() const { return grid_; }
    bool present(std::size_t idx) const { return !std::isnan(t2_[idx]); }
    bool present(int i, int j, int k) const { return present(grid_.index(i, j, k)); }
    float t2(std::size_t idx) const { return t2_[idx]; }
    float t2(int i, int j, int k) const { return t2_[grid_.index(i, j, k)]; }
    float s0(std::size_t idx) const { return s0_[idx]; }
    float c(std::size_t idx) const { return c_[idx]; }

    void set(std::size_t idx, float t2, float s0, float c);
    void clear(std::size_t idx);
    std::size_t count_present() const;

    const std::vector<float>& t2_values() const { return t2_; }
    const std::vector<float>& s0_values() const { return s0_; }
    const std::vector<float>& c_values() const { return c_; }

private:
    Grid3 grid_;
    std::vector<float> t2_, s0_, c_;
};

} // namespace cartiq
