#include "cartiq/longitudinal.hpp"

#include <algorithm>
#include <cmath>

namespace cartiq {

namespace {

// layer-averaged pixel value; NaN when neither layer is present
float pixel_value(const PlateCell& cell) {
    bool d = !std::isnan(cell.t2[0]);
    bool s = !std::isnan(cell.t2[1]);
    if (d && s) return 0.5f * (cell.t2[0] + cell.t2[1]);
    if (d) return cell.t2[0];
    if (s) return cell.t2[1];
    return std::nanf("");
}

std::size_t occupied_pixels(const FlattenedPlate& p) {
    std::size_t n = 0;
    for (const auto& cell : p.cells) n += (cell.column_count > 0);
    return n;
}

} // namespace

Translation register_plates(const FlattenedPlate& baseline, const FlattenedPlate& followup,
                            const RegistrationOptions& opts) {
    std::size_t occ_b = occupied_pixels(baseline);
    std::size_t occ_f = occupied_pixels(followup);
    if (occ_b == 0 || occ_f == 0) {
        throw error(errc::empty_plate, "cannot register an empty plate");
    }
    const double need = opts.min_overlap * static_cast<double>(std::min(occ_b, occ_f));

    Translation best{};
    double best_score = -2.0; // NCC lies in [-1, 1]
    bool has_best = false;

    auto better = [&](double score, const Translation& t) {
        if (!has_best || score > best_score) return true;
        if (score < best_score) return false;
        int cur = std::abs(t.du) + std::abs(t.dv);
        int old = std::abs(best.du) + std::abs(best.dv);
        if (cur != old) return cur < old;
        if (t.du != best.du) return t.du < best.du;
        return t.dv < best.dv;
    };

    for (int du = -opts.window; du <= opts.window; ++du) {
        for (int dv = -opts.window; dv <= opts.window; ++dv) {
            // two-pass centered sums: the textbook one-pass variance
            // cancels catastrophically on near-constant plates
            double sa = 0, sb = 0;
            std::size_t n = 0;
            auto visit = [&](auto&& fn) {
                for (int u = 0; u < baseline.n_slices; ++u) {
                    int uf = u + du;
                    if (uf < 0 || uf >= followup.n_slices) continue;
                    for (int v = 0; v < baseline.n_bins; ++v) {
                        int vf = v + dv;
                        if (vf < 0 || vf >= followup.n_bins) continue;
                        if (!baseline.occupied(u, v) || !followup.occupied(uf, vf)) continue;
                        float a = pixel_value(baseline.at(u, v));
                        float b = pixel_value(followup.at(uf, vf));
                        if (std::isnan(a) || std::isnan(b)) continue;
                        fn(static_cast<double>(a), static_cast<double>(b));
                    }
                }
            };
            visit([&](double a, double b) {
                sa += a;
                sb += b;
                ++n;
            });
            if (static_cast<double>(n) < need || n < 2) continue;
            double ma = sa / static_cast<double>(n);
            double mb = sb / static_cast<double>(n);
            double va = 0, vb = 0, cov = 0;
            visit([&](double a, double b) {
                va += (a - ma) * (a - ma);
                vb += (b - mb) * (b - mb);
                cov += (a - ma) * (b - mb);
            });
            // flat texture has undefined NCC; rank it below any defined
            // correlation so the tie rules decide
            double score = (va > 0.0 && vb > 0.0) ? cov / std::sqrt(va * vb) : -1.5;
            Translation t{du, dv};
            if (better(score, t)) {
                best = t;
                best_score = score;
                has_best = true;
            }
        }
    }
    if (!has_best) {
        throw error(errc::no_overlap,
                    "no translation in the search window overlaps enough of the plates");
    }
    return best;
}

ChangeMap change_map(const FlattenedPlate& baseline, const FlattenedPlate& followup,
                     Translation translation) {
    ChangeMap cm;
    cm.n_slices = baseline.n_slices;
    cm.n_bins = baseline.n_bins;
    cm.delta.assign(static_cast<std::size_t>(cm.n_slices) * cm.n_bins, std::nanf(""));

    double sum = 0.0;
    for (int u = 0; u < baseline.n_slices; ++u) {
        int uf = u + translation.du;
        if (uf < 0 || uf >= followup.n_slices) continue;
        for (int v = 0; v < baseline.n_bins; ++v) {
            int vf = v + translation.dv;
            if (vf < 0 || vf >= followup.n_bins) continue;
            if (!baseline.occupied(u, v) || !followup.occupied(uf, vf)) continue;
            const PlateCell& cb = baseline.at(u, v);
            const PlateCell& cf = followup.at(uf, vf);

            // per-layer difference where both plates carry the layer,
            // averaged across available layers
            double acc = 0.0;
            int layers = 0;
            for (int layer = 0; layer < 2; ++layer) {
                if (!std::isnan(cb.t2[layer]) && !std::isnan(cf.t2[layer])) {
                    acc += static_cast<double>(cf.t2[layer]) - cb.t2[layer];
                    ++layers;
                }
            }
            if (layers == 0) {
                float a = pixel_value(cb);
                float b = pixel_value(cf);
                if (std::isnan(a) || std::isnan(b)) continue;
                acc = static_cast<double>(b) - a;
                layers = 1;
            }
            float d = static_cast<float>(acc / layers);
            cm.delta[static_cast<std::size_t>(u) * cm.n_bins + v] = d;
            sum += d;
            ++cm.plate_area;
        }
    }
    if (cm.plate_area > 0) {
        cm.mean_delta = sum / static_cast<double>(cm.plate_area);
        if (cm.plate_area > 1) {
            double ss = 0.0;
            for (float d : cm.delta) {
                if (!std::isnan(d)) {
                    double e = d - cm.mean_delta;
                    ss += e * e;
                }
            }
            cm.sd_delta = std::sqrt(ss / static_cast<double>(cm.plate_area - 1));
        }
    }
    return cm;
}

std::vector<Cluster> find_focal_clusters(const ChangeMap& cm, double min_area_fraction,
                                         Connectivity connectivity) {
    if (cm.plate_area == 0) {
        throw error(errc::zero_plate_area, "change map has no occupied pixels");
    }
    const double threshold = cm.mean_delta + cm.sd_delta;
    const int W = cm.n_bins, H = cm.n_slices;

    auto hot = [&](int u, int v) {
        if (u < 0 || u >= H || v < 0 || v >= W) return false;
        float d = cm.at(u, v);
        return !std::isnan(d) && static_cast<double>(d) > threshold;
    };

    std::vector<std::uint8_t> seen(static_cast<std::size_t>(W) * H, 0);
    std::vector<Cluster> clusters;
    std::vector<std::pair<int, int>> stack;

    static const int off8[8][2] = {{-1, -1}, {-1, 0}, {-1, 1}, {0, -1},
                                   {0, 1},   {1, -1}, {1, 0},  {1, 1}};
    static const int off4[4][2] = {{-1, 0}, {0, -1}, {0, 1}, {1, 0}};
    const int n_off = (connectivity == Connectivity::eight) ? 8 : 4;
    const int(*off)[2] = (connectivity == Connectivity::eight) ? off8 : off4;

    for (int u = 0; u < H; ++u) {
        for (int v = 0; v < W; ++v) {
            std::size_t id = static_cast<std::size_t>(u) * W + v;
            if (seen[id] || !hot(u, v)) continue;

            Cluster cl;
            double sum = 0.0;
            stack.clear();
            stack.emplace_back(u, v);
            seen[id] = 1;
            while (!stack.empty()) {
                auto [cu, cv] = stack.back();
                stack.pop_back();
                cl.pixels.emplace_back(cu, cv);
                sum += cm.at(cu, cv);
                for (int t = 0; t < n_off; ++t) {
                    int nu = cu + off[t][0];
                    int nv = cv + off[t][1];
                    if (!hot(nu, nv)) continue;
                    std::size_t nid = static_cast<std::size_t>(nu) * W + nv;
                    if (!seen[nid]) {
                        seen[nid] = 1;
                        stack.emplace_back(nu, nv);
                    }
                }
            }
            cl.area_fraction =
                static_cast<double>(cl.pixels.size()) / static_cast<double>(cm.plate_area);
            if (cl.area_fraction > min_area_fraction) {
                cl.mean_delta = sum / static_cast<double>(cl.pixels.size());
                std::sort(cl.pixels.begin(), cl.pixels.end());
                clusters.push_back(std::move(cl));
            }
        }
    }
    std::stable_sort(clusters.begin(), clusters.end(), [](const Cluster& a, const Cluster& b) {
        if (a.pixels.size() != b.pixels.size()) return a.pixels.size() > b.pixels.size();
        return a.pixels.front() < b.pixels.front();
    });
    return clusters;
}

double lesion_area_percentage(const std::vector<Cluster>& clusters, std::size_t plate_area) {
    if (plate_area == 0) {
        throw error(errc::zero_plate_area, "plate area is zero");
    }
    std::size_t covered = 0;
    for (const auto& cl : clusters) covered += cl.pixels.size();
    return 100.0 * static_cast<double>(covered) / static_cast<double>(plate_area);
}

std::vector<RegionDelta> region_change(const RegionReport& baseline,
                                       const RegionReport& followup) {
    if (baseline.rows.size() != followup.rows.size()) {
        throw error(errc::selector_mismatch, "reports cover different region sets");
    }
    std::vector<RegionDelta> out;
    out.reserve(baseline.rows.size());
    for (std::size_t i = 0; i < baseline.rows.size(); ++i) {
        const RegionRow& b = baseline.rows[i];
        const RegionRow& f = followup.rows[i];
        if (b.name != f.name) {
            throw error(errc::selector_mismatch,
                        "region '" + b.name + "' vs '" + f.name + "' at row " +
                            std::to_string(i));
        }
        RegionDelta rd;
        rd.name = b.name;
        if (b.voxel_count > 0 && f.voxel_count > 0) {
            rd.delta_ms = f.mean_t2_ms - b.mean_t2_ms;
            rd.defined = true;
        }
        out.push_back(std::move(rd));
    }
    return out;
}

} // namespace cartiq
