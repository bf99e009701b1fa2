#pragma once

#include <utility>
#include <vector>

#include "cartiq/volume.hpp"

namespace cartiq {

// Volumetric overlap scores. Both are defined as 1 when a and b are empty
// (perfect agreement on absence).
double dice(const SegmentationMask& a, const SegmentationMask& b);
double jaccard(const SegmentationMask& a, const SegmentationMask& b);

// Differentiable Dice relaxation over probabilities. The asymmetric
// variant is 2*sum_{i in truth} p_i / (sum_{i in truth} p_i + |truth|):
// false positives are invisible to it and it is undefined for an empty
// truth mask. The symmetric variant is the standard
// 2*sum p_i y_i / (sum p_i + sum y_i) and equals the hard Dice for
// binary inputs.
enum class SoftDiceVariant { asymmetric, symmetric };
double soft_dice(const ProbabilityMap& pm, const SegmentationMask& truth,
                 SoftDiceVariant variant = SoftDiceVariant::symmetric);

// One (value_a, value_b) pair per subject-image or subject-region.
using PairedMeasurements = std::vector<std::pair<double, double>>;

// Pearson correlation of average-tie ranks.
double spearman(const PairedMeasurements& pairs);

double pearson(const PairedMeasurements& pairs);

struct AgreementSummary {
    double spearman_rho = 0.0;
    double pearson_r = 0.0;
    double mae = 0.0;     // mean |a - b|, ms
    double bias = 0.0;    // mean (a - b), ms
    double loa_lo = 0.0;  // bias - 1.96 * SD(d)
    double loa_hi = 0.0;  // bias + 1.96 * SD(d)
    double rms_cv = 0.0;  // percent
    double bias_p_value = 1.0;
};

// Bland-Altman style summary of paired measurements. Differences are
// d_i = a_i - b_i, limits of agreement use the sample SD (n-1), the
// per-pair CV uses the two-value SD |a-b|/sqrt(2) over the pair mean, and
// the bias p-value comes from a two-sided one-sample t-test of d against 0.
AgreementSummary agreement_summary(const PairedMeasurements& pairs);

} // namespace cartiq
