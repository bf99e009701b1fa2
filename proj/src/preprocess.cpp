#include "cartiq/preprocess.hpp"

#include <algorithm>
#include <cmath>

namespace cartiq {

double percentile_sorted(std::span<const double> sorted, double p) {
    std::size_t n = sorted.size();
    if (n == 0) throw error(errc::invalid_range, "percentile of empty data");
    if (n == 1) return sorted[0];
    double g = (p / 100.0) * static_cast<double>(n - 1);
    if (g <= 0.0) return sorted.front();
    if (g >= static_cast<double>(n - 1)) return sorted.back();
    auto lo = static_cast<std::size_t>(g);
    double frac = g - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

std::vector<float> normalize_slice(std::span<const float> slice,
                                   const NormalizationParams& params) {
    if (!(params.trim_lo_pct < 25.0 && 75.0 < params.trim_hi_pct)) {
        throw error(errc::invalid_range, "trim percentiles must satisfy lo < 25 and 75 < hi");
    }
    const std::size_t n = slice.size();
    if (n == 0) throw error(errc::degenerate_intensity, "empty slice");

    std::vector<double> sorted(slice.begin(), slice.end());
    std::sort(sorted.begin(), sorted.end());

    // Trim bounds sit on the bracketing order statistics (ceil below, floor
    // above) rather than on interpolated percentiles. The clamp then leaves
    // a run of exact ties at each end, so re-normalizing an already
    // normalized slice re-derives the same bounds and the second clamp is a
    // no-op.
    const double g_lo = (params.trim_lo_pct / 100.0) * static_cast<double>(n - 1);
    const double g_hi = (params.trim_hi_pct / 100.0) * static_cast<double>(n - 1);
    const double p_lo = sorted[static_cast<std::size_t>(std::ceil(g_lo))];
    const double p_hi = sorted[static_cast<std::size_t>(std::floor(g_hi))];
    for (auto& v : sorted) v = std::clamp(v, p_lo, p_hi);

    const double q25 = percentile_sorted(sorted, 25.0);
    const double q75 = percentile_sorted(sorted, 75.0);
    if (!(q75 > q25)) {
        throw error(errc::degenerate_intensity,
                    "25th and 75th percentiles coincide; scale undefined");
    }

    // median bracket: q50 = x_a + gamma * (x_b - x_a)
    const double g50 = 0.5 * static_cast<double>(n - 1);
    const auto a_idx = static_cast<std::size_t>(g50);
    const double gamma = g50 - static_cast<double>(a_idx);
    const double x_a = sorted[a_idx];
    const double x_b = sorted[std::min(a_idx + 1, n - 1)];
    const double q50 = x_a + gamma * (x_b - x_a);

    // Piecewise-linear map through (q25,-1), (x_a,v), (q75,+1). v is chosen
    // so that the interpolated median of the mapped data is exactly 0:
    //   v + gamma * slope_r * (x_b - x_a) = 0.
    double knot_x, knot_v, slope_l, slope_r;
    if (q25 < x_a && q50 < q75 && q25 < q50) {
        knot_x = x_a;
        knot_v = (gamma > 0.0) ? -gamma * (x_b - x_a) / (q75 - q50) : 0.0;
        slope_l = (knot_v + 1.0) / (x_a - q25);
        slope_r = (1.0 - knot_v) / (q75 - x_a);
    } else {
        // heavy ties around the quartiles: fall back to the affine map
        // anchored at the median with half-IQR scale
        knot_x = q50;
        knot_v = 0.0;
        slope_l = slope_r = 2.0 / (q75 - q25);
    }

    std::vector<float> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        double v = std::clamp(static_cast<double>(slice[i]), p_lo, p_hi);
        double y = (v <= knot_x) ? knot_v + (v - knot_x) * slope_l
                                 : knot_v + (v - knot_x) * slope_r;
        out[i] = static_cast<float>(y);
    }
    return out;
}

void EchoSamplingPolicy::validate() const {
    double sum = 0.0;
    for (double p : probabilities) {
        if (!(p >= 0.0) || !std::isfinite(p)) {
            throw error(errc::invalid_range, "echo probabilities must be non-negative");
        }
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
        throw error(errc::invalid_range, "echo probabilities must sum to 1");
    }
}

int sample_training_echo(const EchoSamplingPolicy& policy, int n_echoes, Rng& rng) {
    policy.validate();
    for (std::size_t e = 0; e < policy.probabilities.size(); ++e) {
        if (policy.probabilities[e] > 0.0 && static_cast<int>(e) >= n_echoes) {
            throw error(errc::policy_echo_out_of_range,
                        "policy assigns probability to echo " + std::to_string(e) +
                            " but volume has " + std::to_string(n_echoes) + " echoes");
        }
    }
    double u = rng.unit();
    double acc = 0.0;
    int last = 0;
    for (std::size_t e = 0; e < policy.probabilities.size(); ++e) {
        if (policy.probabilities[e] <= 0.0) continue;
        acc += policy.probabilities[e];
        last = static_cast<int>(e);
        if (u < acc) return last;
    }
    return last; // u landed in the rounding tail
}

std::vector<int> drop_empty_slices(const SegmentationMask& mask, double drop_fraction,
                                   Rng& rng) {
    if (!(drop_fraction >= 0.0 && drop_fraction <= 1.0)) {
        throw error(errc::invalid_range, "drop_fraction must lie in [0,1]");
    }
    const Grid3& g = mask.grid();
    std::vector<int> retained;
    retained.reserve(g.nz);
    for (int k = 0; k < g.nz; ++k) {
        bool has_cartilage = false;
        for (int j = 0; j < g.ny && !has_cartilage; ++j) {
            for (int i = 0; i < g.nx; ++i) {
                if (mask.at(i, j, k)) {
                    has_cartilage = true;
                    break;
                }
            }
        }
        if (has_cartilage || rng.unit() >= drop_fraction) retained.push_back(k);
    }
    return retained;
}

} // namespace cartiq
