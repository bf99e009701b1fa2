#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "cartiq/anatomy.hpp"
#include "cartiq/volume.hpp"

namespace cartiq {

// Index into the 12 atomic subregions: depth-major, then side, then sector.
inline int region_index(Depth d, Side s, Sector c) {
    return static_cast<int>(d) * 6 + static_cast<int>(s) * 3 + static_cast<int>(c);
}

// Synthetic annulus phantom. Cartilage occupies an annular arc of each
// slice in [slice_lo, slice_hi]; every voxel decays as
// S(te) = S0 * exp(-te / T2(voxel)) + c (+ optional seeded Gaussian noise,
// clamped at zero). T2 is assigned either per atomic subregion, using the
// same side/sector/depth rules the projection applies, or per radial
// shell. In-plane spacing must be isotropic so voxel-space and mm-space
// radial orderings agree.
struct PhantomSpec {
    int nx = 64, ny = 64, nz = 10;
    double cx = 32.5, cy = 32.5; // voxel units; half-integers keep the
                                 // rasterization symmetric about the center
    double r_inner = 12.0, r_outer = 20.0;
    double theta_start_deg = -180.0;
    double theta_span_deg = 360.0;
    int slice_lo = 0, slice_hi = 9;

    std::array<double, 12> t2_regions{}; // ms, indexed by region_index()
    std::vector<double> t2_shells;       // when non-empty, overrides t2_regions

    double s0 = 1000.0;
    double c = 10.0;
    double noise_sigma = 0.0;
    double background_t2_ms = 0.0; // 0: flat background at c

    std::vector<double> te_ms = {10, 20, 30, 40, 50, 60, 70};
    double tr_ms = 2700.0;
    double spacing = 1.0; // dx = dy; dz fixed at 3.5 (slice + gap)
    double bin_width_deg = 1.0;
    Laterality laterality = Laterality::right;
    std::uint64_t seed = 1;

    void set_uniform_t2(double t2_ms) { t2_regions.fill(t2_ms); }
    void validate() const;
};

struct TruthRow {
    std::string name;
    double mean_t2_ms = 0.0;
    std::int64_t voxel_count = 0;
};

struct Phantom {
    MultiEchoVolume volume;
    SegmentationMask mask;
    ProbabilityMap pmap;            // 1 on cartilage, 0 elsewhere
    std::vector<float> true_t2;     // per voxel, NaN off-mask
    std::vector<TruthRow> truth;    // 27 rows matching report_selectors()
};

Phantom generate_phantom(const PhantomSpec& spec);

} // namespace cartiq
