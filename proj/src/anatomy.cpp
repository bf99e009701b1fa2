#include "cartiq/anatomy.hpp"

#include <algorithm>
#include <cmath>

namespace cartiq {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct SliceVoxel {
    double x, y;   // mm
    double r2;     // squared radius about the slice center, mm^2
    int i, j;
    float t2;      // NaN when unfitted
};

// Least-squares circle (Kasa): minimize sum (x^2+y^2 + D x + E y + F)^2.
// Coordinates are centered on their mean first for conditioning. Returns
// false when the points are collinear.
bool fit_circle(const std::vector<double>& xs, const std::vector<double>& ys, double& cx,
                double& cy) {
    const std::size_t n = xs.size();
    if (n < 3) return false;
    double mx = 0.0, my = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        mx += xs[k];
        my += ys[k];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);

    double suu = 0, suv = 0, svv = 0, suuu = 0, svvv = 0, suvv = 0, svuu = 0;
    for (std::size_t k = 0; k < n; ++k) {
        double u = xs[k] - mx;
        double v = ys[k] - my;
        suu += u * u;
        suv += u * v;
        svv += v * v;
        suuu += u * u * u;
        svvv += v * v * v;
        suvv += u * v * v;
        svuu += v * u * u;
    }
    double det = suu * svv - suv * suv;
    double scale = suu + svv;
    if (!(std::abs(det) > 1e-12 * scale * scale) || scale <= 0.0) return false;
    double b1 = 0.5 * (suuu + suvv);
    double b2 = 0.5 * (svvv + svuu);
    cx = mx + (svv * b1 - suv * b2) / det;
    cy = my + (suu * b2 - suv * b1) / det;
    return true;
}

int angle_bin(double theta_deg, double bin_width, int n_bins) {
    // bin edges are offset by half a width so that the atan2 axes
    // (0/90/180/270 degrees) fall inside bins rather than on edges
    int b = static_cast<int>(std::floor((theta_deg + 180.0 - 0.5 * bin_width) / bin_width));
    if (b < 0) b += n_bins;
    if (b >= n_bins) b -= n_bins;
    return b;
}

} // namespace

bool RegionSelector::matches(Depth d, Side s, Sector c) const {
    if (depth != DepthSel::both &&
        static_cast<int>(d) != (depth == DepthSel::deep ? 0 : 1)) {
        return false;
    }
    if (side != SideSel::both &&
        static_cast<int>(s) != (side == SideSel::lateral ? 0 : 1)) {
        return false;
    }
    if (sector != SectorSel::all && static_cast<int>(c) != static_cast<int>(sector)) {
        return false;
    }
    return true;
}

std::string RegionSelector::name() const {
    std::string n;
    if (depth == DepthSel::deep) n += "deep";
    if (depth == DepthSel::superficial) n += "superficial";
    if (side != SideSel::both) {
        if (!n.empty()) n += "_";
        n += (side == SideSel::lateral) ? "lateral" : "medial";
    }
    if (sector != SectorSel::all) {
        if (!n.empty()) n += "_";
        n += (sector == SectorSel::anterior)  ? "anterior"
             : (sector == SectorSel::central) ? "central"
                                              : "posterior";
    }
    return n.empty() ? "all" : n;
}

const std::vector<RegionSelector>& report_selectors() {
    using D = RegionSelector::DepthSel;
    using S = RegionSelector::SideSel;
    using C = RegionSelector::SectorSel;
    static const std::vector<RegionSelector> sel = [] {
        std::vector<RegionSelector> v;
        v.push_back({D::both, S::both, C::all});
        v.push_back({D::deep, S::both, C::all});
        v.push_back({D::superficial, S::both, C::all});
        v.push_back({D::both, S::lateral, C::all});
        v.push_back({D::both, S::medial, C::all});
        v.push_back({D::deep, S::lateral, C::all});
        v.push_back({D::superficial, S::lateral, C::all});
        v.push_back({D::deep, S::medial, C::all});
        v.push_back({D::superficial, S::medial, C::all});
        for (S s : {S::lateral, S::medial}) {
            for (C c : {C::anterior, C::central, C::posterior}) {
                v.push_back({D::both, s, c});
            }
        }
        for (D d : {D::deep, D::superficial}) {
            for (S s : {S::lateral, S::medial}) {
                for (C c : {C::anterior, C::central, C::posterior}) {
                    v.push_back({d, s, c});
                }
            }
        }
        return v;
    }();
    return sel;
}

FlattenedPlate project_to_plane(const T2Map& t2map, const SegmentationMask& mask,
                                const std::array<double, 3>& spacing_mm,
                                const PlateOptions& opts) {
    check_grid_compatibility(t2map.grid(), mask.grid());
    if (mask.count() == 0) throw error(errc::empty_mask, "cannot project an empty mask");
    if (!(opts.bin_width_deg > 0.0) ||
        std::abs(360.0 / opts.bin_width_deg - std::round(360.0 / opts.bin_width_deg)) > 1e-9) {
        throw error(errc::invalid_range, "bin width must divide 360 degrees");
    }

    const Grid3& g = mask.grid();
    const double dx = spacing_mm[0], dy = spacing_mm[1];
    const double pad = 0.5 * (dx + dy); // one-voxel footprint along the ray

    FlattenedPlate plate;
    plate.n_slices = g.nz;
    plate.n_bins = static_cast<int>(std::round(360.0 / opts.bin_width_deg));
    plate.bin_width_deg = opts.bin_width_deg;
    plate.cells.resize(static_cast<std::size_t>(plate.n_slices) * plate.n_bins);
    plate.mask_voxels = mask.count();

    std::vector<SliceVoxel> vox;
    std::vector<double> xs, ys;
    std::vector<int> bin_of;
    std::vector<std::vector<int>> columns(plate.n_bins);

    for (int k = 0; k < g.nz; ++k) {
        vox.clear();
        for (int j = 0; j < g.ny; ++j) {
            for (int i = 0; i < g.nx; ++i) {
                if (!mask.at(i, j, k)) continue;
                SliceVoxel sv;
                sv.x = i * dx;
                sv.y = j * dy;
                sv.i = i;
                sv.j = j;
                sv.t2 = t2map.present(i, j, k) ? t2map.t2(i, j, k) : std::nanf("");
                vox.push_back(sv);
            }
        }
        if (vox.empty()) continue;
        if (static_cast<int>(vox.size()) < opts.min_slice_voxels) {
            plate.dropped_voxels += vox.size();
            continue;
        }

        xs.clear();
        ys.clear();
        for (const auto& sv : vox) {
            xs.push_back(sv.x);
            ys.push_back(sv.y);
        }
        double cx, cy;
        if (!fit_circle(xs, ys, cx, cy)) {
            plate.dropped_voxels += vox.size();
            continue;
        }

        // refine the center on the inner boundary: the innermost voxel of
        // each provisional angular bin approximates the bone interface
        bin_of.assign(vox.size(), 0);
        std::vector<int> innermost(plate.n_bins, -1);
        for (std::size_t t = 0; t < vox.size(); ++t) {
            double th = std::atan2(vox[t].y - cy, vox[t].x - cx) * 180.0 / kPi;
            int b = angle_bin(th, opts.bin_width_deg, plate.n_bins);
            double r2 = (vox[t].x - cx) * (vox[t].x - cx) + (vox[t].y - cy) * (vox[t].y - cy);
            if (innermost[b] < 0) {
                innermost[b] = static_cast<int>(t);
            } else {
                const auto& cur = vox[innermost[b]];
                double cr2 = (cur.x - cx) * (cur.x - cx) + (cur.y - cy) * (cur.y - cy);
                if (r2 < cr2) innermost[b] = static_cast<int>(t);
            }
        }
        xs.clear();
        ys.clear();
        for (int b = 0; b < plate.n_bins; ++b) {
            if (innermost[b] >= 0) {
                xs.push_back(vox[innermost[b]].x);
                ys.push_back(vox[innermost[b]].y);
            }
        }
        double cx2, cy2;
        if (fit_circle(xs, ys, cx2, cy2)) {
            cx = cx2;
            cy = cy2;
        }

        for (auto& col : columns) col.clear();
        for (std::size_t t = 0; t < vox.size(); ++t) {
            double ex = vox[t].x - cx;
            double ey = vox[t].y - cy;
            vox[t].r2 = ex * ex + ey * ey;
            double th = std::atan2(ey, ex) * 180.0 / kPi;
            columns[angle_bin(th, opts.bin_width_deg, plate.n_bins)].push_back(
                static_cast<int>(t));
        }

        for (int b = 0; b < plate.n_bins; ++b) {
            auto& col = columns[b];
            if (col.empty()) continue;
            std::sort(col.begin(), col.end(), [&](int a, int c) {
                if (vox[a].r2 != vox[c].r2) return vox[a].r2 < vox[c].r2;
                if (vox[a].j != vox[c].j) return vox[a].j < vox[c].j;
                return vox[a].i < vox[c].i;
            });

            PlateCell& cell = plate.at(k, b);
            cell.column_count = static_cast<std::int32_t>(col.size());
            cell.thickness_mm = static_cast<float>(
                std::sqrt(vox[col.back()].r2) - std::sqrt(vox[col.front()].r2) + pad);

            const std::size_t cn = col.size();
            // [0, deep_end) -> deep, [sup_begin, cn) -> superficial;
            // a single voxel lands in both layers
            std::size_t deep_end = (cn == 1) ? 1 : (cn + 1) / 2;
            std::size_t sup_begin = (cn == 1) ? 0 : deep_end;

            double sum[2] = {0.0, 0.0};
            int cnt[2] = {0, 0};
            for (std::size_t t = 0; t < deep_end; ++t) {
                float v = vox[col[t]].t2;
                if (!std::isnan(v)) {
                    sum[0] += v;
                    ++cnt[0];
                }
            }
            for (std::size_t t = sup_begin; t < cn; ++t) {
                float v = vox[col[t]].t2;
                if (!std::isnan(v)) {
                    sum[1] += v;
                    ++cnt[1];
                }
            }
            for (int layer = 0; layer < 2; ++layer) {
                if (cnt[layer] > 0) {
                    cell.t2[layer] = static_cast<float>(sum[layer] / cnt[layer]);
                    cell.weight[layer] = cnt[layer];
                }
            }
        }
    }

    return plate;
}

bool PlateLabels::get(int u, int v, Side& side, Sector& sector) const {
    if (u < 0 || u >= n_slices || v < 0 || v >= n_bins) return false;
    std::int8_t s = side_of_slice[u];
    if (s < 0) return false;
    std::int8_t c = sector_of_bin[s][v];
    if (c < 0) return false;
    side = static_cast<Side>(s);
    sector = static_cast<Sector>(c);
    return true;
}

PlateLabels partition(const FlattenedPlate& plate, Laterality laterality) {
    PlateLabels lab;
    lab.n_slices = plate.n_slices;
    lab.n_bins = plate.n_bins;
    lab.side_of_slice.assign(plate.n_slices, -1);
    lab.sector_of_bin[0].assign(plate.n_bins, -1);
    lab.sector_of_bin[1].assign(plate.n_bins, -1);

    int s_min = -1, s_max = -1;
    for (int u = 0; u < plate.n_slices; ++u) {
        bool occ = false;
        for (int v = 0; v < plate.n_bins && !occ; ++v) occ = plate.occupied(u, v);
        if (occ) {
            if (s_min < 0) s_min = u;
            s_max = u;
        }
    }
    if (s_min < 0) throw error(errc::empty_plate, "plate has no occupied pixels");

    // lower-index half of the occupied extent is lateral for a right knee
    int count = s_max - s_min + 1;
    int first_half = (count + 1) / 2;
    lab.side_split = s_min + first_half;
    Side low_side = (laterality == Laterality::right) ? Side::lateral : Side::medial;
    Side high_side = (low_side == Side::lateral) ? Side::medial : Side::lateral;
    for (int u = s_min; u <= s_max; ++u) {
        lab.side_of_slice[u] =
            static_cast<std::int8_t>(u < lab.side_split ? low_side : high_side);
    }

    for (int side = 0; side < 2; ++side) {
        std::vector<int> occ_bins;
        for (int v = 0; v < plate.n_bins; ++v) {
            bool occ = false;
            for (int u = s_min; u <= s_max && !occ; ++u) {
                if (lab.side_of_slice[u] == side && plate.occupied(u, v)) occ = true;
            }
            if (occ) occ_bins.push_back(v);
        }
        if (occ_bins.empty()) continue;

        // start after the largest circular gap so wrap-around arcs come out
        // contiguous; a fully occupied circle starts at bin 0
        int n = static_cast<int>(occ_bins.size());
        int start = 0;
        if (n < plate.n_bins) {
            int best_gap = -1;
            for (int t = 0; t < n; ++t) {
                int cur = occ_bins[t];
                int prev = occ_bins[(t + n - 1) % n];
                int gap = (cur - prev + plate.n_bins) % plate.n_bins;
                if (gap > best_gap) {
                    best_gap = gap;
                    start = t;
                }
            }
        }

        int n_a = n / 3 + (n % 3 > 0 ? 1 : 0);
        int n_c = n / 3 + (n % 3 > 1 ? 1 : 0);
        for (int t = 0; t < n; ++t) {
            int v = occ_bins[(start + t) % n];
            Sector sec = (t < n_a) ? Sector::anterior
                         : (t < n_a + n_c) ? Sector::central
                                           : Sector::posterior;
            lab.sector_of_bin[side][v] = static_cast<std::int8_t>(sec);
        }
    }
    return lab;
}

double region_mean(const FlattenedPlate& plate, const PlateLabels& labels,
                   const RegionSelector& selector) {
    double sum = 0.0;
    std::int64_t weight = 0;
    for (int u = 0; u < plate.n_slices; ++u) {
        for (int v = 0; v < plate.n_bins; ++v) {
            const PlateCell& cell = plate.at(u, v);
            if (cell.column_count == 0) continue;
            Side side;
            Sector sector;
            if (!labels.get(u, v, side, sector)) continue;
            for (int layer = 0; layer < 2; ++layer) {
                if (cell.weight[layer] <= 0) continue;
                if (!selector.matches(static_cast<Depth>(layer), side, sector)) continue;
                sum += static_cast<double>(cell.t2[layer]) * cell.weight[layer];
                weight += cell.weight[layer];
            }
        }
    }
    if (weight == 0) {
        throw error(errc::empty_region, "selector '" + selector.name() + "' matches no pixels");
    }
    return sum / static_cast<double>(weight);
}

RegionReport build_region_report(const FlattenedPlate& plate, const PlateLabels& labels) {
    RegionReport report;
    for (const RegionSelector& sel : report_selectors()) {
        RegionRow row;
        row.selector = sel;
        row.name = sel.name();

        double sum = 0.0;
        std::int64_t weight = 0, pixels = 0;
        for (int u = 0; u < plate.n_slices; ++u) {
            for (int v = 0; v < plate.n_bins; ++v) {
                const PlateCell& cell = plate.at(u, v);
                if (cell.column_count == 0) continue;
                Side side;
                Sector sector;
                if (!labels.get(u, v, side, sector)) continue;
                bool pixel_hit = false;
                for (int layer = 0; layer < 2; ++layer) {
                    if (cell.weight[layer] <= 0) continue;
                    if (!sel.matches(static_cast<Depth>(layer), side, sector)) continue;
                    sum += static_cast<double>(cell.t2[layer]) * cell.weight[layer];
                    weight += cell.weight[layer];
                    pixel_hit = true;
                }
                pixels += pixel_hit;
            }
        }
        row.voxel_count = weight;
        row.pixel_count = pixels;
        row.mean_t2_ms = (weight > 0) ? sum / static_cast<double>(weight)
                                      : std::nan("");
        report.rows.push_back(std::move(row));
    }
    return report;
}

} // namespace cartiq
