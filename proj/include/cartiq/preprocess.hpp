#pragma once

#include <span>
#include <vector>

#include "cartiq/rng.hpp"
#include "cartiq/volume.hpp"

namespace cartiq {

// Percentile with linear interpolation between order statistics.
// `sorted` must be ascending and non-empty; p in [0, 100].
double percentile_sorted(std::span<const double> sorted, double p);

struct NormalizationParams {
    double trim_lo_pct = 3.0;
    double trim_hi_pct = 97.0;
    // anchor percentiles (25, 50, 75) map to (-1, 0, +1)
};

// Shift/rescale a slice so its median is 0 and its 25th/75th percentiles
// are -1/+1, after winsorizing to the [trim_lo, trim_hi] percentile range.
// The map is monotone piecewise-linear with a single interior knot placed
// at the order statistic bracketing the median from below, so that all
// three anchors hold exactly under the interpolated percentile definition
// even when the median interpolates between two order statistics.
// Throws DegenerateIntensity when the interquartile range is zero.
std::vector<float> normalize_slice(std::span<const float> slice,
                                   const NormalizationParams& params = {});

struct EchoSamplingPolicy {
    // probability per echo index; default: echo 0 -> 20%, echo 1 -> 60%,
    // echo 2 -> 20% (the "first echo" of the acquisition is index 0)
    std::vector<double> probabilities = {0.2, 0.6, 0.2};

    void validate() const;
};

// Draw a training echo index for a volume with `n_echoes` echoes.
// Throws PolicyEchoOutOfRange when the policy puts mass on an echo the
// volume lacks.
int sample_training_echo(const EchoSamplingPolicy& policy, int n_echoes, Rng& rng);

// Retained slice indices, ascending. Every slice containing cartilage is
// kept; each cartilage-free slice is independently dropped with
// probability drop_fraction.
std::vector<int> drop_empty_slices(const SegmentationMask& mask, double drop_fraction,
                                   Rng& rng);

} // namespace cartiq
