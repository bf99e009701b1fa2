#pragma once

#include <utility>
#include <vector>

#include "cartiq/anatomy.hpp"

namespace cartiq {

struct Translation {
    int du = 0; // slice axis
    int dv = 0; // angular axis
};

struct RegistrationOptions {
    int window = 10;             // search [-window, +window] on both axes
    double min_overlap = 0.5;    // fraction of the smaller plate
};

// Integer translation maximizing normalized cross-correlation of the
// layer-averaged T2 over pixels occupied in both plates. Ties prefer the
// smaller |du|+|dv|, then lexicographic (du, dv). Throws NoOverlap when no
// translation in the window covers at least min_overlap of the smaller
// plate.
Translation register_plates(const FlattenedPlate& baseline, const FlattenedPlate& followup,
                            const RegistrationOptions& opts = {});

struct ChangeMap {
    int n_slices = 0;
    int n_bins = 0;
    std::vector<float> delta; // baseline frame; NaN where not overlapping
    std::size_t plate_area = 0;
    double mean_delta = 0.0;
    double sd_delta = 0.0; // sample SD (n-1); 0 when area < 2

    bool occupied(int u, int v) const {
        return !std::isnan(delta[static_cast<std::size_t>(u) * n_bins + v]);
    }
    float at(int u, int v) const { return delta[static_cast<std::size_t>(u) * n_bins + v]; }
};

// Followup minus baseline on pixels occupied in both plates under the
// given translation. Per-layer differences are averaged into one value
// per pixel for cluster analysis.
ChangeMap change_map(const FlattenedPlate& baseline, const FlattenedPlate& followup,
                     Translation translation);

struct Cluster {
    std::vector<std::pair<int, int>> pixels; // (u, v), sorted
    double area_fraction = 0.0;
    double mean_delta = 0.0;
};

enum class Connectivity { four = 4, eight = 8 };

// Connected components of pixels whose change exceeds mean + 1 SD
// (strict), keeping components covering more than min_area_fraction of
// the plate (strict), sorted by area descending. A zero-variance map has
// no super-threshold pixels and yields no clusters.
std::vector<Cluster> find_focal_clusters(const ChangeMap& cm, double min_area_fraction = 0.01,
                                         Connectivity connectivity = Connectivity::eight);

double lesion_area_percentage(const std::vector<Cluster>& clusters, std::size_t plate_area);

struct RegionDelta {
    std::string name;
    double delta_ms = 0.0;
    bool defined = false; // false when either report lacks the region
};

// Elementwise followup - baseline over the 27 report rows.
std::vector<RegionDelta> region_change(const RegionReport& baseline,
                                       const RegionReport& followup);

} // namespace cartiq
