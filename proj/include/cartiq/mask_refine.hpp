#pragma once

#include <utility>
#include <vector>

#include "cartiq/t2fit.hpp"
#include "cartiq/volume.hpp"

namespace cartiq {

// Probability thresholds are held and compared as float so that on-disk
// map values hit the published boundaries exactly (p > .01 strict,
// p >= .501 inclusive).
struct RefinementThresholds {
    float candidate_p = 0.01f;         // exclusive
    float binarize_p = 0.501f;         // inclusive
    int min_voxels_per_slice = 425;

    void validate() const;
};

// Voxels with p strictly above candidate_p.
SegmentationMask candidate_mask(const ProbabilityMap& pm, const RefinementThresholds& thr);

// Voxels that both survived the T2 gate and have p >= binarize_p.
SegmentationMask binarize(const ProbabilityMap& pm, const SegmentationMask& surviving,
                          const RefinementThresholds& thr);

// Clears every slice whose cartilage voxel count is strictly below
// min_voxels_per_slice.
SegmentationMask slice_min_count_filter(const SegmentationMask& mask,
                                        const RefinementThresholds& thr);

struct RefineStats {
    std::size_t candidate_voxels = 0;
    std::size_t fitted = 0;
    std::size_t converged = 0;
    std::size_t physiological = 0;
    std::size_t binarized = 0;
    std::size_t final_voxels = 0;
};

// Full refinement pipeline: candidate_mask -> compute_t2_map ->
// filter_physiological -> binarize -> slice_min_count_filter. The
// returned T2 map is restricted to the final mask.
std::pair<SegmentationMask, T2Map> refine(const ProbabilityMap& pm,
                                          const MultiEchoVolume& volume,
                                          const RefinementThresholds& thr,
                                          const FitOptions& fit_opts = {},
                                          RefineStats* stats = nullptr, int threads = 0);

struct ValidationCase {
    ProbabilityMap pm;
    MultiEchoVolume volume;
    SegmentationMask truth;
};

struct ThresholdGrid {
    std::vector<int> min_voxels_per_slice;
    std::vector<float> binarize_p;
};

// Grid search over (min_voxels_per_slice, binarize_p) maximizing mean
// volumetric Dice against the ground truth across the validation set.
// Ties prefer the smaller slice count, then the smaller probability.
RefinementThresholds tune_thresholds(const std::vector<ValidationCase>& validation,
                                     const ThresholdGrid& grid,
                                     const RefinementThresholds& base = {},
                                     const FitOptions& fit_opts = {}, int threads = 0);

} // namespace cartiq
