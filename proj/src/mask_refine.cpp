#include "cartiq/mask_refine.hpp"

#include <algorithm>

#include "cartiq/metrics.hpp"

namespace cartiq {

void RefinementThresholds::validate() const {
    if (!(candidate_p >= 0.0f && candidate_p < binarize_p && binarize_p <= 1.0f)) {
        throw error(errc::invalid_range, "need 0 <= candidate_p < binarize_p <= 1");
    }
    if (min_voxels_per_slice < 0) {
        throw error(errc::invalid_range, "min_voxels_per_slice must be >= 0");
    }
}

SegmentationMask candidate_mask(const ProbabilityMap& pm, const RefinementThresholds& thr) {
    thr.validate();
    SegmentationMask out(pm.grid());
    const auto& v = pm.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (v[i] > thr.candidate_p) out.set(i, true);
    }
    return out;
}

SegmentationMask binarize(const ProbabilityMap& pm, const SegmentationMask& surviving,
                          const RefinementThresholds& thr) {
    thr.validate();
    check_grid_compatibility(pm.grid(), surviving.grid());
    SegmentationMask out(pm.grid());
    const auto& v = pm.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (surviving.at(i) && v[i] >= thr.binarize_p) out.set(i, true);
    }
    return out;
}

SegmentationMask slice_min_count_filter(const SegmentationMask& mask,
                                        const RefinementThresholds& thr) {
    thr.validate();
    const Grid3& g = mask.grid();
    SegmentationMask out = mask;
    const std::size_t per_slice = static_cast<std::size_t>(g.nx) * g.ny;
    for (int k = 0; k < g.nz; ++k) {
        std::size_t base = per_slice * static_cast<std::size_t>(k);
        long count = 0;
        for (std::size_t i = 0; i < per_slice; ++i) count += mask.at(base + i);
        if (count < thr.min_voxels_per_slice) {
            for (std::size_t i = 0; i < per_slice; ++i) out.set(base + i, false);
        }
    }
    return out;
}

std::pair<SegmentationMask, T2Map> refine(const ProbabilityMap& pm,
                                          const MultiEchoVolume& volume,
                                          const RefinementThresholds& thr,
                                          const FitOptions& fit_opts, RefineStats* stats,
                                          int threads) {
    thr.validate();
    check_grid_compatibility(pm.grid(), volume.grid());

    SegmentationMask candidates = candidate_mask(pm, thr);
    T2Map fitted = compute_t2_map(volume, candidates, fit_opts, threads);
    auto [gated, surviving] = filter_physiological(fitted);
    SegmentationMask binary = binarize(pm, surviving, thr);
    SegmentationMask final_mask = slice_min_count_filter(binary, thr);

    T2Map restricted(volume.grid());
    for (std::size_t i = 0; i < final_mask.grid().voxels(); ++i) {
        if (final_mask.at(i)) restricted.set(i, gated.t2(i), gated.s0(i), gated.c(i));
    }

    if (stats) {
        stats->candidate_voxels = candidates.count();
        stats->fitted = stats->candidate_voxels;
        stats->converged = fitted.count_present();
        stats->physiological = surviving.count();
        stats->binarized = binary.count();
        stats->final_voxels = final_mask.count();
    }
    return {std::move(final_mask), std::move(restricted)};
}

RefinementThresholds tune_thresholds(const std::vector<ValidationCase>& validation,
                                     const ThresholdGrid& grid,
                                     const RefinementThresholds& base,
                                     const FitOptions& fit_opts, int threads) {
    if (validation.empty()) {
        throw error(errc::empty_validation_set, "validation set is empty");
    }
    if (grid.min_voxels_per_slice.empty() || grid.binarize_p.empty()) {
        throw error(errc::empty_validation_set, "threshold grid is empty");
    }

    // the candidate/T2/physiological stages depend only on candidate_p, so
    // run them once per case and sweep only the cheap tail stages
    std::vector<SegmentationMask> survivors;
    survivors.reserve(validation.size());
    for (const auto& vc : validation) {
        check_grid_compatibility(vc.pm.grid(), vc.volume.grid());
        check_grid_compatibility(vc.pm.grid(), vc.truth.grid());
        SegmentationMask candidates = candidate_mask(vc.pm, base);
        T2Map fitted = compute_t2_map(vc.volume, candidates, fit_opts, threads);
        survivors.push_back(filter_physiological(fitted).second);
    }

    std::vector<int> mins = grid.min_voxels_per_slice;
    std::vector<float> probs = grid.binarize_p;
    std::sort(mins.begin(), mins.end());
    std::sort(probs.begin(), probs.end());

    RefinementThresholds best = base;
    double best_dice = -1.0;
    bool found = false;
    for (int m : mins) {
        for (float p : probs) {
            RefinementThresholds thr = base;
            thr.min_voxels_per_slice = m;
            thr.binarize_p = p;
            thr.validate();

            double sum = 0.0;
            for (std::size_t i = 0; i < validation.size(); ++i) {
                SegmentationMask b = binarize(validation[i].pm, survivors[i], thr);
                sum += dice(slice_min_count_filter(b, thr), validation[i].truth);
            }
            double mean = sum / static_cast<double>(validation.size());
            if (!found || mean > best_dice) {
                best_dice = mean;
                best = thr;
                found = true;
            }
            // ties keep the earlier (smaller) grid entries by iteration order
        }
    }
    return best;
}

} // namespace cartiq
