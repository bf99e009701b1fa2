#include "cartiq/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/math/distributions/students_t.hpp>

namespace cartiq {

namespace {

struct OverlapCounts {
    std::size_t na = 0, nb = 0, both = 0;
};

OverlapCounts count_overlap(const SegmentationMask& a, const SegmentationMask& b) {
    check_grid_compatibility(a.grid(), b.grid());
    OverlapCounts oc;
    const auto& va = a.values();
    const auto& vb = b.values();
    for (std::size_t i = 0; i < va.size(); ++i) {
        oc.na += (va[i] != 0);
        oc.nb += (vb[i] != 0);
        oc.both += (va[i] != 0 && vb[i] != 0);
    }
    return oc;
}

// average-tie ("fractional") ranks, 1-based
std::vector<double> tie_ranks(const std::vector<double>& v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
    std::vector<double> ranks(v.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
        double r = 0.5 * static_cast<double>(i + j) + 1.0; // mean of 1-based ranks i+1..j+1
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

double pearson_of(const std::vector<double>& x, const std::vector<double>& y) {
    std::size_t n = x.size();
    double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
    double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double dx = x[i] - mx;
        double dy = y[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (!(sxx > 0.0) || !(syy > 0.0)) {
        throw error(errc::constant_column, "correlation undefined for a constant column");
    }
    return sxy / std::sqrt(sxx * syy);
}

void require_pairs(const PairedMeasurements& pairs, std::size_t min_n) {
    if (pairs.size() < min_n) {
        throw error(errc::invalid_range,
                    "need at least " + std::to_string(min_n) + " pairs, got " +
                        std::to_string(pairs.size()));
    }
    for (const auto& [a, b] : pairs) {
        if (!std::isfinite(a) || !std::isfinite(b)) {
            throw error(errc::invalid_range, "non-finite measurement value");
        }
    }
}

} // namespace

double dice(const SegmentationMask& a, const SegmentationMask& b) {
    OverlapCounts oc = count_overlap(a, b);
    if (oc.na + oc.nb == 0) return 1.0;
    return 2.0 * static_cast<double>(oc.both) / static_cast<double>(oc.na + oc.nb);
}

double jaccard(const SegmentationMask& a, const SegmentationMask& b) {
    OverlapCounts oc = count_overlap(a, b);
    std::size_t uni = oc.na + oc.nb - oc.both;
    if (uni == 0) return 1.0;
    return static_cast<double>(oc.both) / static_cast<double>(uni);
}

double soft_dice(const ProbabilityMap& pm, const SegmentationMask& truth,
                 SoftDiceVariant variant) {
    check_grid_compatibility(pm.grid(), truth.grid());
    const auto& p = pm.values();
    const auto& y = truth.values();
    double p_on_truth = 0.0, p_total = 0.0;
    std::size_t n_truth = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        p_total += p[i];
        if (y[i] != 0) {
            p_on_truth += p[i];
            ++n_truth;
        }
    }
    if (variant == SoftDiceVariant::asymmetric) {
        if (n_truth == 0) {
            throw error(errc::empty_truth,
                        "asymmetric soft-Dice undefined for an empty truth mask");
        }
        return 2.0 * p_on_truth / (p_on_truth + static_cast<double>(n_truth));
    }
    double denom = p_total + static_cast<double>(n_truth);
    if (denom == 0.0) return 1.0;
    return 2.0 * p_on_truth / denom;
}

double spearman(const PairedMeasurements& pairs) {
    require_pairs(pairs, 2);
    std::vector<double> a(pairs.size()), b(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        a[i] = pairs[i].first;
        b[i] = pairs[i].second;
    }
    return pearson_of(tie_ranks(a), tie_ranks(b));
}

double pearson(const PairedMeasurements& pairs) {
    require_pairs(pairs, 2);
    std::vector<double> a(pairs.size()), b(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        a[i] = pairs[i].first;
        b[i] = pairs[i].second;
    }
    return pearson_of(a, b);
}

AgreementSummary agreement_summary(const PairedMeasurements& pairs) {
    require_pairs(pairs, 2);
    const std::size_t n = pairs.size();

    AgreementSummary s;
    double sum_d = 0.0, sum_abs = 0.0;
    for (const auto& [a, b] : pairs) {
        sum_d += a - b;
        sum_abs += std::abs(a - b);
    }
    s.bias = sum_d / static_cast<double>(n);
    s.mae = sum_abs / static_cast<double>(n);

    double ss = 0.0;
    for (const auto& [a, b] : pairs) {
        double d = (a - b) - s.bias;
        ss += d * d;
    }
    double sd = std::sqrt(ss / static_cast<double>(n - 1));
    s.loa_lo = s.bias - 1.96 * sd;
    s.loa_hi = s.bias + 1.96 * sd;

    // RMS-CV with the two-value SD |a-b|/sqrt(2)
    double cv2_sum = 0.0;
    for (const auto& [a, b] : pairs) {
        double mean = 0.5 * (a + b);
        if (mean == 0.0) {
            throw error(errc::zero_mean_pair, "CV undefined when a pair's mean is zero");
        }
        double cv = (std::abs(a - b) / std::sqrt(2.0)) / mean;
        cv2_sum += cv * cv;
    }
    s.rms_cv = 100.0 * std::sqrt(cv2_sum / static_cast<double>(n));

    if (sd == 0.0) {
        s.bias_p_value = (s.bias == 0.0) ? 1.0 : 0.0;
    } else {
        double t = s.bias / (sd / std::sqrt(static_cast<double>(n)));
        boost::math::students_t dist(static_cast<double>(n - 1));
        s.bias_p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
    }

    // correlations can legitimately be undefined (constant column) even when
    // the rest of the summary is fine; surface that as NaN rather than failing
    try {
        s.spearman_rho = spearman(pairs);
    } catch (const error&) {
        s.spearman_rho = std::nan("");
    }
    try {
        s.pearson_r = pearson(pairs);
    } catch (const error&) {
        s.pearson_r = std::nan("");
    }
    return s;
}

} // namespace cartiq
