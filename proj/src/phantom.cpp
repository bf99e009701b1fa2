#include "cartiq/phantom.hpp"

#include <algorithm>
#include <cmath>

#include "cartiq/rng.hpp"

namespace cartiq {

namespace {

constexpr double kPi = 3.14159265358979323846;

// same edge convention as the projection: edges offset by half a width
int angle_bin(double theta_deg, double bin_width, int n_bins) {
    int b = static_cast<int>(std::floor((theta_deg + 180.0 - 0.5 * bin_width) / bin_width));
    if (b < 0) b += n_bins;
    if (b >= n_bins) b -= n_bins;
    return b;
}

bool in_span(double theta_deg, double start_deg, double span_deg) {
    if (span_deg >= 360.0) return true;
    double rel = std::fmod(theta_deg - start_deg + 720.0, 360.0);
    return rel <= span_deg;
}

struct PhantomVoxel {
    int i, j, k;
    double r2;
    int bin;
};

} // namespace

void PhantomSpec::validate() const {
    if (nx <= 0 || ny <= 0 || nz <= 0) {
        throw error(errc::invalid_spec, "nonpositive grid dims");
    }
    if (!(r_inner > 0.0 && r_inner < r_outer)) {
        throw error(errc::invalid_spec, "annulus radii must be positive and increasing");
    }
    if (!(theta_span_deg > 0.0 && theta_span_deg <= 360.0)) {
        throw error(errc::invalid_spec, "angular span must lie in (0, 360]");
    }
    if (slice_lo < 0 || slice_hi >= nz || slice_lo > slice_hi) {
        throw error(errc::invalid_spec, "slice range outside the grid");
    }
    if (t2_shells.empty()) {
        for (double t2 : t2_regions) {
            if (!(t2 > 0.0 && t2 <= 100.0)) {
                throw error(errc::invalid_spec, "region T2 values must lie in (0, 100] ms");
            }
        }
    } else {
        for (double t2 : t2_shells) {
            if (!(t2 > 0.0 && t2 <= 100.0)) {
                throw error(errc::invalid_spec, "shell T2 values must lie in (0, 100] ms");
            }
        }
    }
    if (te_ms.size() < 2) throw error(errc::invalid_spec, "need at least 2 echoes");
    for (std::size_t e = 0; e < te_ms.size(); ++e) {
        if (!(te_ms[e] > 0.0) || (e > 0 && !(te_ms[e] > te_ms[e - 1]))) {
            throw error(errc::invalid_spec, "TE list must be strictly increasing and > 0");
        }
    }
    if (!(s0 > 0.0) || !(c >= 0.0) || !(noise_sigma >= 0.0)) {
        throw error(errc::invalid_spec, "need s0 > 0, c >= 0, sigma >= 0");
    }
    if (!(spacing > 0.0)) throw error(errc::invalid_spec, "spacing must be positive");
    if (!(bin_width_deg > 0.0) ||
        std::abs(360.0 / bin_width_deg - std::round(360.0 / bin_width_deg)) > 1e-9) {
        throw error(errc::invalid_spec, "bin width must divide 360 degrees");
    }
    if (background_t2_ms < 0.0) throw error(errc::invalid_spec, "background T2 must be >= 0");
}

Phantom generate_phantom(const PhantomSpec& spec) {
    spec.validate();
    const Grid3 grid{spec.nx, spec.ny, spec.nz};
    const int n_bins = static_cast<int>(std::round(360.0 / spec.bin_width_deg));
    const std::size_t nvox = grid.voxels();
    const std::size_t n_echo = spec.te_ms.size();

    // rasterize the annular arc
    std::vector<PhantomVoxel> vox;
    SegmentationMask mask(grid);
    const double r2_in = spec.r_inner * spec.r_inner;
    const double r2_out = spec.r_outer * spec.r_outer;
    for (int k = spec.slice_lo; k <= spec.slice_hi; ++k) {
        for (int j = 0; j < spec.ny; ++j) {
            for (int i = 0; i < spec.nx; ++i) {
                double ex = i - spec.cx;
                double ey = j - spec.cy;
                double r2 = ex * ex + ey * ey;
                if (r2 < r2_in || r2 > r2_out) continue;
                double theta = std::atan2(ey, ex) * 180.0 / kPi;
                if (!in_span(theta, spec.theta_start_deg, spec.theta_span_deg)) continue;
                PhantomVoxel pv;
                pv.i = i;
                pv.j = j;
                pv.k = k;
                pv.r2 = r2;
                pv.bin = angle_bin(theta, spec.bin_width_deg, n_bins);
                vox.push_back(pv);
                mask.set(i, j, k, true);
            }
        }
    }
    if (vox.empty()) {
        throw error(errc::invalid_spec, "phantom geometry rasterizes to zero voxels");
    }

    // side per slice: lower-index half of the cartilage slice extent, the
    // same midpoint rule the partition applies
    const int count = spec.slice_hi - spec.slice_lo + 1;
    const int split = spec.slice_lo + (count + 1) / 2;
    const Side low_side =
        (spec.laterality == Laterality::right) ? Side::lateral : Side::medial;
    const Side high_side = (low_side == Side::lateral) ? Side::medial : Side::lateral;
    auto side_of = [&](int k) { return (k < split) ? low_side : high_side; };

    // sector per (side, bin): equal thirds of the side's occupied bins,
    // starting after the largest circular gap
    std::array<std::vector<std::int8_t>, 2> sector_of;
    sector_of[0].assign(n_bins, -1);
    sector_of[1].assign(n_bins, -1);
    for (int side = 0; side < 2; ++side) {
        std::vector<std::uint8_t> occ(n_bins, 0);
        for (const auto& pv : vox) {
            if (static_cast<int>(side_of(pv.k)) == side) occ[pv.bin] = 1;
        }
        std::vector<int> bins;
        for (int b = 0; b < n_bins; ++b) {
            if (occ[b]) bins.push_back(b);
        }
        if (bins.empty()) continue;
        int n = static_cast<int>(bins.size());
        int start = 0;
        if (n < n_bins) {
            int best_gap = -1;
            for (int t = 0; t < n; ++t) {
                int cur = bins[t];
                int prev = bins[(t + n - 1) % n];
                int gap = (cur - prev + n_bins) % n_bins;
                if (gap > best_gap) {
                    best_gap = gap;
                    start = t;
                }
            }
        }
        int n_a = n / 3 + (n % 3 > 0 ? 1 : 0);
        int n_c = n / 3 + (n % 3 > 1 ? 1 : 0);
        for (int t = 0; t < n; ++t) {
            int b = bins[(start + t) % n];
            sector_of[side][b] = static_cast<std::int8_t>(
                (t < n_a) ? Sector::anterior : (t < n_a + n_c) ? Sector::central
                                                               : Sector::posterior);
        }
    }

    // depth: per (slice, bin) column, inner half by count toward the bone;
    // odd counts give the middle voxel to deep; single voxels feed both
    std::vector<float> true_t2(nvox, std::nanf(""));
    std::array<double, 12> region_sum{};
    std::array<std::int64_t, 12> region_cnt{};

    std::vector<std::vector<int>> columns;
    columns.resize(static_cast<std::size_t>(spec.nz) * n_bins);
    for (std::size_t t = 0; t < vox.size(); ++t) {
        columns[static_cast<std::size_t>(vox[t].k) * n_bins + vox[t].bin].push_back(
            static_cast<int>(t));
    }

    const int n_shells = static_cast<int>(spec.t2_shells.size());
    auto shell_t2_of = [&](double r2) {
        double r = std::sqrt(r2);
        double f = (r - spec.r_inner) / (spec.r_outer - spec.r_inner);
        int s = std::clamp(static_cast<int>(f * n_shells), 0, n_shells - 1);
        return spec.t2_shells[s];
    };

    for (auto& col : columns) {
        if (col.empty()) continue;
        std::sort(col.begin(), col.end(), [&](int a, int b) {
            if (vox[a].r2 != vox[b].r2) return vox[a].r2 < vox[b].r2;
            if (vox[a].j != vox[b].j) return vox[a].j < vox[b].j;
            return vox[a].i < vox[b].i;
        });
        const std::size_t cn = col.size();
        const Side side = side_of(vox[col[0]].k);
        const std::int8_t sec = sector_of[static_cast<int>(side)][vox[col[0]].bin];
        const std::size_t deep_end = (cn == 1) ? 1 : (cn + 1) / 2;
        const std::size_t sup_begin = (cn == 1) ? 0 : deep_end;

        for (std::size_t t = 0; t < cn; ++t) {
            const PhantomVoxel& pv = vox[col[t]];
            Depth depth = (t < deep_end) ? Depth::deep : Depth::superficial;
            double t2;
            if (n_shells > 0) {
                t2 = shell_t2_of(pv.r2);
            } else {
                t2 = spec.t2_regions[region_index(depth, side,
                                                  static_cast<Sector>(sec))];
            }
            true_t2[grid.index(pv.i, pv.j, pv.k)] = static_cast<float>(t2);

            int r = region_index(depth, side, static_cast<Sector>(sec));
            region_sum[r] += t2;
            region_cnt[r] += 1;
            if (cn == 1 && t < sup_begin + 1) {
                // the single voxel also contributes to the superficial row
                int r2i = region_index(Depth::superficial, side, static_cast<Sector>(sec));
                region_sum[r2i] += t2;
                region_cnt[r2i] += 1;
            }
        }
    }

    // signal synthesis in fixed voxel order for seed reproducibility
    Rng rng(spec.seed);
    std::vector<float> data(nvox * n_echo, 0.0f);
    for (int k = 0; k < spec.nz; ++k) {
        for (int j = 0; j < spec.ny; ++j) {
            for (int i = 0; i < spec.nx; ++i) {
                std::size_t v = grid.index(i, j, k);
                float t2v = true_t2[v];
                bool in_mask = !std::isnan(t2v);
                double t2 = in_mask ? t2v : spec.background_t2_ms;
                for (std::size_t e = 0; e < n_echo; ++e) {
                    double s;
                    if (t2 > 0.0) {
                        s = spec.s0 * std::exp(-spec.te_ms[e] / t2) + spec.c;
                    } else {
                        s = spec.c;
                    }
                    if (spec.noise_sigma > 0.0 && (in_mask || t2 > 0.0)) {
                        s += spec.noise_sigma * rng.gaussian();
                    }
                    data[e * nvox + v] = static_cast<float>(std::max(s, 0.0));
                }
            }
        }
    }

    Phantom ph{MultiEchoVolume(grid, spec.te_ms, spec.tr_ms,
                               {spec.spacing, spec.spacing, 3.5}, std::move(data)),
               std::move(mask),
               ProbabilityMap(),
               std::move(true_t2),
               {}};

    std::vector<float> pvals(nvox, 0.0f);
    for (std::size_t v = 0; v < nvox; ++v) {
        if (ph.mask.at(v)) pvals[v] = 1.0f;
    }
    ph.pmap = ProbabilityMap(grid, std::move(pvals));

    // 27-row ground truth via count-weighted blends of the atomic sums
    for (const RegionSelector& sel : report_selectors()) {
        double sum = 0.0;
        std::int64_t cnt = 0;
        for (int d = 0; d < 2; ++d) {
            for (int s = 0; s < 2; ++s) {
                for (int c2 = 0; c2 < 3; ++c2) {
                    if (!sel.matches(static_cast<Depth>(d), static_cast<Side>(s),
                                     static_cast<Sector>(c2))) {
                        continue;
                    }
                    int r = region_index(static_cast<Depth>(d), static_cast<Side>(s),
                                         static_cast<Sector>(c2));
                    sum += region_sum[r];
                    cnt += region_cnt[r];
                }
            }
        }
        TruthRow row;
        row.name = sel.name();
        row.voxel_count = cnt;
        row.mean_t2_ms = (cnt > 0) ? sum / static_cast<double>(cnt) : 0.0;
        ph.truth.push_back(std::move(row));
    }
    return ph;
}

} // namespace cartiq
