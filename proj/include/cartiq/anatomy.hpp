#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "cartiq/volume.hpp"

namespace cartiq {

enum class Laterality { left, right };

enum class Depth : int { deep = 0, superficial = 1 };
enum class Side : int { lateral = 0, medial = 1 };
enum class Sector : int { anterior = 0, central = 1, posterior = 2 };

struct RegionSelector {
    enum class DepthSel { deep, superficial, both };
    enum class SideSel { lateral, medial, both };
    enum class SectorSel { anterior, central, posterior, all };

    DepthSel depth = DepthSel::both;
    SideSel side = SideSel::both;
    SectorSel sector = SectorSel::all;

    bool matches(Depth d, Side s, Sector c) const;
    std::string name() const; // e.g. "deep_lateral_anterior", "all"
};

// The 27 selectors of the subregional report, in the order they are
// published: all, depth aggregates, side aggregates, depth-side,
// side-sector, depth-side-sector.
const std::vector<RegionSelector>& report_selectors();

struct PlateCell {
    float t2[2] = {std::nanf(""), std::nanf("")}; // deep, superficial means
    std::int32_t weight[2] = {0, 0};              // contributing voxels per layer
    std::int32_t column_count = 0;                // all mask voxels in the column
    float thickness_mm = std::nanf("");
};

// 2D parameterization of the cartilage plate: rows are sagittal slices,
// columns are angular bins about the per-slice condylar center.
struct FlattenedPlate {
    int n_slices = 0;
    int n_bins = 0;
    double bin_width_deg = 1.0;
    std::vector<PlateCell> cells; // n_slices * n_bins, bin-fastest
    std::size_t mask_voxels = 0;
    std::size_t dropped_voxels = 0; // voxels on slices we could not parameterize

    PlateCell& at(int u, int v) { return cells[static_cast<std::size_t>(u) * n_bins + v]; }
    const PlateCell& at(int u, int v) const {
        return cells[static_cast<std::size_t>(u) * n_bins + v];
    }
    bool occupied(int u, int v) const { return at(u, v).column_count > 0; }
};

struct PlateOptions {
    double bin_width_deg = 1.0;
    int min_slice_voxels = 3; // fewer cannot define a condylar center
};

// Projects each sagittal slice's cartilage into (angle, radius) about that
// slice's condylar center (least-squares circle through the inner
// boundary). Voxels in a (slice, angle) bin are ordered by radius; the
// inner half contributes the deep layer, the outer half the superficial
// layer, odd counts give the middle voxel to deep, and a single-voxel
// column feeds both layers. Slices too small or too degenerate for a
// center are skipped and their voxels counted as dropped.
FlattenedPlate project_to_plane(const T2Map& t2map, const SegmentationMask& mask,
                                const std::array<double, 3>& spacing_mm,
                                const PlateOptions& opts = {});

struct PlateLabels {
    int n_slices = 0;
    int n_bins = 0;
    int side_split = 0;                            // first slice of the second side
    std::vector<std::int8_t> side_of_slice;        // -1 outside extent
    std::array<std::vector<std::int8_t>, 2> sector_of_bin; // per side, -1 unassigned

    bool get(int u, int v, Side& side, Sector& sector) const;
};

// Medial/lateral at the midpoint of the occupied slice extent (which half
// is medial follows the knee laterality); anterior/central/posterior as
// equal thirds of each side's occupied angular bins.
PlateLabels partition(const FlattenedPlate& plate, Laterality laterality = Laterality::right);

// Voxel-count-weighted mean T2 over all pixel-layers matched by the
// selector. Throws EmptyRegion when the selector matches nothing.
double region_mean(const FlattenedPlate& plate, const PlateLabels& labels,
                   const RegionSelector& selector);

struct RegionRow {
    RegionSelector selector;
    std::string name;
    double mean_t2_ms = 0.0;
    std::int64_t voxel_count = 0;
    std::int64_t pixel_count = 0; // plate pixels with >= 1 matched layer
};

struct RegionReport {
    std::vector<RegionRow> rows; // 27 rows in report_selectors() order
};

RegionReport build_region_report(const FlattenedPlate& plate, const PlateLabels& labels);

} // namespace cartiq
