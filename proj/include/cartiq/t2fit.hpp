#pragma once

#include <utility>
#include <vector>

#include "cartiq/volume.hpp"

namespace cartiq {

// One voxel's decay samples with the first acquisition echo already
// excluded (stimulated-echo artifact mitigation happens upstream in
// compute_t2_map).
struct DecayCurve {
    std::vector<double> te_ms;
    std::vector<double> signal;
};

enum class NoiseModel {
    offset,       // S(te) = S0 * exp(-te/T2) + c
    rician_floor, // S(te) = sqrt((S0 * exp(-te/T2))^2 + c^2)
};

struct FitOptions {
    int max_iterations = 200;
    double tolerance = 1e-8;   // relative parameter step
    double t2_lo_ms = 0.1;
    double t2_hi_ms = 1000.0;
    NoiseModel noise_model = NoiseModel::offset;
};

struct FitResult {
    double s0 = 0.0;
    double t2_ms = 0.0;
    double c = 0.0;
    double rss = 0.0;
    bool converged = false;
    int iterations = 0;
};

// Least-squares fit of the noise-corrected monoexponential by damped
// Gauss-Newton (Levenberg-Marquardt) with analytic Jacobian, subject to
// S0 > 0, T2 within bounds, c >= 0. Initialization is the log-linear fit
// of (signal - min signal) with c0 = min signal, clamped into bounds.
// Degenerate (flat) curves come back with converged = false rather than
// throwing; only curves with fewer than 3 points throw InsufficientPoints.
FitResult fit_voxel(const DecayCurve& curve, const FitOptions& opts = {});

// Voxelwise T2 over candidate voxels only; non-candidates are never
// fitted. The first echo is dropped from every curve, so the volume needs
// at least 4 echoes. T2 is present exactly on candidates whose fit
// converged. Data-parallel over voxels with output identical to
// sequential execution; `threads` <= 0 picks the hardware default, capped
// by the CARTIQ_THREADS environment variable.
T2Map compute_t2_map(const MultiEchoVolume& volume, const SegmentationMask& candidates,
                     const FitOptions& opts = {}, int threads = 0);

// Keep voxels with T2 in (lo, hi]; everything else becomes absent.
// Returns the filtered map and the mask of surviving voxels.
std::pair<T2Map, SegmentationMask> filter_physiological(const T2Map& map, double lo_ms = 0.0,
                                                        double hi_ms = 100.0);

// Effective worker count after applying CARTIQ_THREADS.
int resolve_thread_count(int requested);

} // namespace cartiq
