#include "cartiq/t2fit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>

namespace cartiq {

namespace {

struct Params {
    double s0, t2, c;
};

double model_eval(NoiseModel nm, double s0, double t2, double c, double te) {
    double e = std::exp(-te / t2);
    if (nm == NoiseModel::offset) return s0 * e + c;
    double a = s0 * e;
    return std::sqrt(a * a + c * c);
}

double rss_of(const DecayCurve& curve, NoiseModel nm, const Params& p) {
    double rss = 0.0;
    for (std::size_t i = 0; i < curve.te_ms.size(); ++i) {
        double r = curve.signal[i] - model_eval(nm, p.s0, p.t2, p.c, curve.te_ms[i]);
        rss += r * r;
    }
    return rss;
}

// solve A x = b for SPD 3x3 A in-place via Cholesky; false when a pivot
// is not positive
bool solve_spd3(double A[3][3], const double b[3], double x[3]) {
    double L[3][3] = {};
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j <= i; ++j) {
            double s = A[i][j];
            for (int k = 0; k < j; ++k) s -= L[i][k] * L[j][k];
            if (i == j) {
                if (!(s > 0.0)) return false;
                L[i][i] = std::sqrt(s);
            } else {
                L[i][j] = s / L[j][j];
            }
        }
    }
    double y[3];
    for (int i = 0; i < 3; ++i) {
        double s = b[i];
        for (int k = 0; k < i; ++k) s -= L[i][k] * y[k];
        y[i] = s / L[i][i];
    }
    for (int i = 2; i >= 0; --i) {
        double s = y[i];
        for (int k = i + 1; k < 3; ++k) s -= L[k][i] * x[k];
        x[i] = s / L[i][i];
    }
    return true;
}

Params clamp_params(Params p, double s0_floor, const FitOptions& opts) {
    p.s0 = std::max(p.s0, s0_floor);
    p.t2 = std::clamp(p.t2, opts.t2_lo_ms, opts.t2_hi_ms);
    p.c = std::max(p.c, 0.0);
    return p;
}

Params log_linear_guess(const DecayCurve& curve, double y_min, double y_max, double s0_floor,
                        const FitOptions& opts) {
    Params p;
    p.c = y_min;

    // log-linear fit of ln(signal - min) against TE over the echo span
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    int m = 0;
    for (std::size_t i = 0; i < curve.te_ms.size(); ++i) {
        double w = curve.signal[i] - y_min;
        if (w > 0.0) {
            double lx = curve.te_ms[i];
            double ly = std::log(w);
            sx += lx;
            sy += ly;
            sxx += lx * lx;
            sxy += lx * ly;
            ++m;
        }
    }
    double slope = 0.0, icept = 0.0;
    bool usable = false;
    if (m >= 2) {
        double den = m * sxx - sx * sx;
        if (den > 0.0) {
            slope = (m * sxy - sx * sy) / den;
            icept = (sy - slope * sx) / m;
            usable = slope < 0.0;
        }
    }
    if (usable) {
        p.t2 = -1.0 / slope;
        p.s0 = std::exp(icept);
    } else {
        p.t2 = std::sqrt(opts.t2_lo_ms * opts.t2_hi_ms);
        p.s0 = y_max - y_min;
    }
    return clamp_params(p, s0_floor, opts);
}

// Constrained closed-form solve of the linear (s0, c) subproblem of the
// offset model at fixed T2.
Params profile_point(const DecayCurve& curve, double t2, double s0_floor,
                     const FitOptions& opts) {
    const std::size_t n = curve.te_ms.size();
    const double nn = static_cast<double>(n);
    double sy = 0.0;
    for (double s : curve.signal) sy += s;
    double se = 0.0, see = 0.0, sye = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double e = std::exp(-curve.te_ms[i] / t2);
        se += e;
        see += e * e;
        sye += curve.signal[i] * e;
    }
    double det = nn * see - se * se;
    double s0, c;
    if (det > 1e-30 * nn * see) {
        s0 = (nn * sye - se * sy) / det;
        c = (sy - s0 * se) / nn;
    } else {
        s0 = s0_floor;
        c = sy / nn;
    }
    if (c < 0.0) {
        c = 0.0;
        s0 = (see > 0.0) ? sye / see : s0_floor;
    }
    if (s0 < s0_floor) {
        s0 = s0_floor;
        c = std::max((sy - s0 * se) / nn, 0.0);
    }
    return clamp_params({s0, t2, c}, s0_floor, opts);
}

// Variable projection for the offset model: minimize the profiled RSS over
// T2 alone (geometric sweep, then golden-section refinement of the best
// bracket). The multi-dimensional descent can stall against the c >= 0 and
// S0 > 0 bounds on noisy low-decay curves; the 1-D profile cannot.
Params varpro_offset(const DecayCurve& curve, double s0_floor, const FitOptions& opts) {
    constexpr int kSweep = 64;
    const double ratio = std::pow(opts.t2_hi_ms / opts.t2_lo_ms,
                                  1.0 / static_cast<double>(kSweep - 1));

    auto profile_rss = [&](double t2) {
        return rss_of(curve, NoiseModel::offset, profile_point(curve, t2, s0_floor, opts));
    };

    double t2 = opts.t2_lo_ms;
    int best_k = 0;
    double best_rss = std::numeric_limits<double>::infinity();
    double best_t2 = t2;
    for (int k = 0; k < kSweep; ++k, t2 *= ratio) {
        double rss = profile_rss(t2);
        if (rss < best_rss) {
            best_rss = rss;
            best_k = k;
            best_t2 = t2;
        }
    }

    // golden-section on log(T2) over the bracket around the best sweep point
    const double phi = 0.6180339887498949;
    double lo = std::log(opts.t2_lo_ms) +
                std::max(best_k - 1, 0) * std::log(ratio);
    double hi = std::log(opts.t2_lo_ms) +
                std::min(best_k + 1, kSweep - 1) * std::log(ratio);
    double x1 = hi - phi * (hi - lo);
    double x2 = lo + phi * (hi - lo);
    double f1 = profile_rss(std::exp(x1));
    double f2 = profile_rss(std::exp(x2));
    for (int it = 0; it < 80 && (hi - lo) > 1e-12; ++it) {
        if (f1 <= f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = profile_rss(std::exp(x1));
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = profile_rss(std::exp(x2));
        }
    }
    double t2_star = std::exp(0.5 * (lo + hi));
    Params cand = profile_point(curve, t2_star, s0_floor, opts);
    if (rss_of(curve, NoiseModel::offset, cand) <= best_rss) return cand;
    return profile_point(curve, best_t2, s0_floor, opts);
}

Params initial_guess(const DecayCurve& curve, double y_min, double y_max, double s0_floor,
                     const FitOptions& opts) {
    Params ll = log_linear_guess(curve, y_min, y_max, s0_floor, opts);
    if (opts.noise_model != NoiseModel::offset) return ll;
    Params vp = varpro_offset(curve, s0_floor, opts);
    return (rss_of(curve, opts.noise_model, vp) < rss_of(curve, opts.noise_model, ll)) ? vp
                                                                                       : ll;
}

} // namespace

FitResult fit_voxel(const DecayCurve& curve, const FitOptions& opts) {
    const std::size_t n = curve.te_ms.size();
    if (n < 3 || curve.signal.size() != n) {
        throw error(errc::insufficient_points,
                    "need >= 3 decay points for a 3-parameter fit, got " + std::to_string(n));
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (!(curve.te_ms[i] > 0.0) || (i > 0 && !(curve.te_ms[i] > curve.te_ms[i - 1]))) {
            throw error(errc::invalid_geometry, "TE values must be strictly increasing and > 0");
        }
        if (!std::isfinite(curve.signal[i]) || curve.signal[i] < 0.0) {
            throw error(errc::insufficient_points, "signal values must be finite and >= 0");
        }
    }
    if (!(opts.t2_lo_ms > 0.0 && opts.t2_lo_ms < opts.t2_hi_ms)) {
        throw error(errc::invalid_range, "T2 bounds must be positive with lo < hi");
    }

    const double y_max = *std::max_element(curve.signal.begin(), curve.signal.end());
    const double y_min = *std::min_element(curve.signal.begin(), curve.signal.end());

    FitResult res;
    if (!(y_max > y_min)) {
        // flat signal carries no decay information
        res.s0 = 0.0;
        res.t2_ms = opts.t2_hi_ms;
        res.c = y_min;
        res.rss = 0.0;
        res.converged = false;
        return res;
    }

    const double s0_floor = 1e-12 * y_max;
    const double s0_scale = 1e-6 * y_max; // covariant floor for relative-step tests
    const NoiseModel nm = opts.noise_model;

    Params p = initial_guess(curve, y_min, y_max, s0_floor, opts);
    double rss = rss_of(curve, nm, p);
    double lambda = 1e-3;

    bool converged = false;
    int iter = 0;
    while (iter < opts.max_iterations && !converged) {
        ++iter;

        double JtJ[3][3] = {};
        double Jtr[3] = {};
        for (std::size_t i = 0; i < n; ++i) {
            double te = curve.te_ms[i];
            double e = std::exp(-te / p.t2);
            double a = p.s0 * e;
            double f, j0, j1, j2;
            if (nm == NoiseModel::offset) {
                f = a + p.c;
                j0 = e;
                j1 = a * te / (p.t2 * p.t2);
                j2 = 1.0;
            } else {
                f = std::sqrt(a * a + p.c * p.c);
                double fs = (f > 0.0) ? f : 1e-300;
                j0 = a * e / fs;
                j1 = a * a * te / (p.t2 * p.t2 * fs);
                j2 = p.c / fs;
            }
            double r = curve.signal[i] - f;
            double J[3] = {j0, j1, j2};
            for (int u = 0; u < 3; ++u) {
                Jtr[u] += J[u] * r;
                for (int v = 0; v <= u; ++v) JtJ[u][v] += J[u] * J[v];
            }
        }
        for (int u = 0; u < 3; ++u) {
            for (int v = u + 1; v < 3; ++v) JtJ[u][v] = JtJ[v][u];
        }

        bool accepted = false;
        Params p_new = p;
        double rss_new = rss;
        for (int tries = 0; tries < 40 && !accepted; ++tries) {
            double A[3][3];
            for (int u = 0; u < 3; ++u) {
                for (int v = 0; v < 3; ++v) A[u][v] = JtJ[u][v];
                // Marquardt scaling keeps the step equivariant under
                // rescaling of the signal axis
                A[u][u] += lambda * std::max(JtJ[u][u], 1e-300);
            }
            double delta[3];
            if (!solve_spd3(A, Jtr, delta)) {
                lambda *= 10.0;
                continue;
            }
            Params cand = clamp_params({p.s0 + delta[0], p.t2 + delta[1], p.c + delta[2]},
                                       s0_floor, opts);
            double cand_rss = rss_of(curve, nm, cand);
            if (cand_rss <= rss) {
                p_new = cand;
                rss_new = cand_rss;
                accepted = true;
                lambda = std::max(lambda * 0.1, 1e-14);
            } else {
                lambda *= 10.0;
                if (lambda > 1e14) break;
            }
        }

        double step_s0 = std::abs(p_new.s0 - p.s0);
        double step_t2 = std::abs(p_new.t2 - p.t2);
        double step_c = std::abs(p_new.c - p.c);
        bool small = step_s0 <= opts.tolerance * std::max(std::abs(p.s0), s0_scale) &&
                     step_t2 <= opts.tolerance * std::max(std::abs(p.t2), opts.t2_lo_ms) &&
                     step_c <= opts.tolerance * std::max(std::abs(p.c), s0_scale);
        if (accepted) {
            p = p_new;
            rss = rss_new;
            if (small) converged = true;
        } else {
            // no improving step found; if the last attempt was already a
            // tiny move we are at a (possibly bound-constrained) minimum
            converged = small;
            break;
        }
    }

    res.s0 = p.s0;
    res.t2_ms = p.t2;
    res.c = p.c;
    res.rss = rss;
    res.converged = converged;
    res.iterations = iter;
    return res;
}

int resolve_thread_count(int requested) {
    int hw = static_cast<int>(std::thread::hardware_concurrency());
    if (hw <= 0) hw = 1;
    int n = requested > 0 ? requested : hw;
    if (const char* env = std::getenv("CARTIQ_THREADS")) {
        char* end = nullptr;
        long cap = std::strtol(env, &end, 10);
        if (end != env && cap >= 1) n = std::min<long>(n, cap);
    }
    return std::max(1, n);
}

T2Map compute_t2_map(const MultiEchoVolume& volume, const SegmentationMask& candidates,
                     const FitOptions& opts, int threads) {
    check_grid_compatibility(volume.grid(), candidates.grid());
    const int e_total = volume.echoes();
    if (e_total < 4) {
        throw error(errc::too_few_echoes,
                    "need >= 4 echoes (>= 3 after excluding the first), got " +
                        std::to_string(e_total));
    }

    std::vector<std::size_t> idx;
    idx.reserve(candidates.count());
    for (std::size_t i = 0; i < candidates.grid().voxels(); ++i) {
        if (candidates.at(i)) idx.push_back(i);
    }

    T2Map out(volume.grid());
    if (idx.empty()) return out;

    std::vector<double> te(volume.te_ms().begin() + 1, volume.te_ms().end());
    const std::size_t nvox = volume.grid().voxels();
    const float* data = volume.data().data();

    auto fit_range = [&](std::size_t lo, std::size_t hi) {
        DecayCurve curve;
        curve.te_ms = te;
        curve.signal.resize(te.size());
        for (std::size_t w = lo; w < hi; ++w) {
            std::size_t v = idx[w];
            for (std::size_t e = 0; e < te.size(); ++e) {
                curve.signal[e] = data[(e + 1) * nvox + v];
            }
            FitResult fr = fit_voxel(curve, opts);
            if (fr.converged) {
                out.set(v, static_cast<float>(fr.t2_ms), static_cast<float>(fr.s0),
                        static_cast<float>(fr.c));
            }
        }
    };

    int nthreads = std::min<std::size_t>(resolve_thread_count(threads), idx.size());
    if (nthreads <= 1) {
        fit_range(0, idx.size());
        return out;
    }

    std::vector<std::thread> pool;
    std::exception_ptr first_error;
    std::mutex err_mutex;
    std::size_t chunk = (idx.size() + nthreads - 1) / nthreads;
    for (int t = 0; t < nthreads; ++t) {
        std::size_t lo = static_cast<std::size_t>(t) * chunk;
        std::size_t hi = std::min(lo + chunk, idx.size());
        if (lo >= hi) break;
        pool.emplace_back([&, lo, hi] {
            try {
                fit_range(lo, hi);
            } catch (...) {
                std::lock_guard<std::mutex> g(err_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
    return out;
}

std::pair<T2Map, SegmentationMask> filter_physiological(const T2Map& map, double lo_ms,
                                                        double hi_ms) {
    if (!(lo_ms < hi_ms)) {
        throw error(errc::invalid_range, "physiological range needs lo < hi");
    }
    T2Map out(map.grid());
    SegmentationMask surviving(map.grid());
    for (std::size_t i = 0; i < map.grid().voxels(); ++i) {
        if (!map.present(i)) continue;
        double t2 = map.t2(i);
        if (t2 > lo_ms && t2 <= hi_ms) {
            out.set(i, map.t2(i), map.s0(i), map.c(i));
            surviving.set(i, true);
        }
    }
    return {std::move(out), std::move(surviving)};
}

} // namespace cartiq
