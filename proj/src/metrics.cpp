// SPDX-License-Identifier: Apache-2.0
#include "cmseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <tuple>

#include "cmseg/errors.hpp"

namespace cmseg {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_compatible(const RegionMask& a, const RegionMask& b, const char* what, bool check_spacing) {
    if (a.d != b.d || a.h != b.h || a.w != b.w)
        throw ValidationError(std::string(what) + ": mask shapes differ");
    if (check_spacing)
        for (int i = 0; i < 3; ++i)
            if (std::abs(a.spacing[i] - b.spacing[i]) > 1e-9)
                throw ValidationError(std::string(what) + ": mask spacings differ");
}

// Set voxels with an unset 6-neighbor (grid boundary counts as exposed).
std::vector<std::uint8_t> surface_of(const RegionMask& m) {
    std::vector<std::uint8_t> surf(m.mask.size(), 0);
    const Index D = m.d, H = m.h, W = m.w;
    for (Index z = 0; z < D; ++z)
        for (Index y = 0; y < H; ++y)
            for (Index x = 0; x < W; ++x) {
                const std::size_t i = static_cast<std::size_t>((z * H + y) * W + x);
                if (!m.mask[i]) continue;
                const bool exposed = z == 0 || z == D - 1 || y == 0 || y == H - 1 || x == 0 || x == W - 1 ||
                                     !m.mask[i - static_cast<std::size_t>(H * W)] ||
                                     !m.mask[i + static_cast<std::size_t>(H * W)] ||
                                     !m.mask[i - static_cast<std::size_t>(W)] ||
                                     !m.mask[i + static_cast<std::size_t>(W)] || !m.mask[i - 1] || !m.mask[i + 1];
                if (exposed) surf[i] = 1;
            }
    return surf;
}

// Lower envelope of parabolas (squared-distance transform along one axis
// with physical sample positions i * spacing).
void edt_1d(const double* f, double* out, Index n, double spacing, Index* v, double* z) {
    Index k = 0;
    v[0] = 0;
    z[0] = -kInf;
    z[1] = kInf;
    auto xc = [spacing](Index i) { return double(i) * spacing; };
    for (Index q = 1; q < n; ++q) {
        if (f[q] == kInf) continue;
        double s;
        for (;;) {
            const Index p = v[k];
            if (f[p] == kInf) {
                // no finite parabola yet; replace
                if (k == 0) {
                    s = -kInf;
                    break;
                }
                --k;
                continue;
            }
            s = ((f[q] + xc(q) * xc(q)) - (f[p] + xc(p) * xc(p))) / (2 * xc(q) - 2 * xc(p));
            if (s > z[k]) break;
            if (k == 0) {
                s = -kInf;
                break;
            }
            --k;
        }
        if (s == -kInf) {
            k = 0;
            v[0] = q;
            z[0] = -kInf;
            z[1] = kInf;
        } else {
            ++k;
            v[k] = q;
            z[k] = s;
            z[k + 1] = kInf;
        }
    }
    k = 0;
    for (Index q = 0; q < n; ++q) {
        while (z[k + 1] < xc(q)) ++k;
        const Index p = v[k];
        out[q] = (f[p] == kInf) ? kInf : (xc(q) - xc(p)) * (xc(q) - xc(p)) + f[p];
    }
}

// Exact squared Euclidean distance (mm^2) from every voxel to the seed set.
std::vector<double> edt_sq(const std::vector<std::uint8_t>& seeds, Index D, Index H, Index W,
                           const Spacing& sp) {
    std::vector<double> dist(seeds.size());
    for (std::size_t i = 0; i < seeds.size(); ++i) dist[i] = seeds[i] ? 0.0 : kInf;

    const Index n_max = std::max({D, H, W});
    std::vector<double> f(static_cast<std::size_t>(n_max)), g(static_cast<std::size_t>(n_max));
    std::vector<Index> v(static_cast<std::size_t>(n_max));
    std::vector<double> z(static_cast<std::size_t>(n_max + 1));

    // along x
    for (Index zz = 0; zz < D; ++zz)
        for (Index yy = 0; yy < H; ++yy) {
            double* row = dist.data() + (zz * H + yy) * W;
            edt_1d(row, g.data(), W, sp[2], v.data(), z.data());
            std::copy(g.begin(), g.begin() + W, row);
        }
    // along y
    for (Index zz = 0; zz < D; ++zz)
        for (Index xx = 0; xx < W; ++xx) {
            for (Index yy = 0; yy < H; ++yy) f[static_cast<std::size_t>(yy)] = dist[static_cast<std::size_t>((zz * H + yy) * W + xx)];
            edt_1d(f.data(), g.data(), H, sp[1], v.data(), z.data());
            for (Index yy = 0; yy < H; ++yy) dist[static_cast<std::size_t>((zz * H + yy) * W + xx)] = g[static_cast<std::size_t>(yy)];
        }
    // along z
    for (Index yy = 0; yy < H; ++yy)
        for (Index xx = 0; xx < W; ++xx) {
            for (Index zz = 0; zz < D; ++zz) f[static_cast<std::size_t>(zz)] = dist[static_cast<std::size_t>((zz * H + yy) * W + xx)];
            edt_1d(f.data(), g.data(), D, sp[0], v.data(), z.data());
            for (Index zz = 0; zz < D; ++zz) dist[static_cast<std::size_t>((zz * H + yy) * W + xx)] = g[static_cast<std::size_t>(zz)];
        }
    return dist;
}

double percentile_95(std::vector<double>& values) {
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    if (n == 1) return values[0];
    const double pos = 0.95 * double(n - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const double frac = pos - double(lo);
    if (lo + 1 >= n) return values[n - 1];
    return values[lo] + frac * (values[lo + 1] - values[lo]);
}

std::tuple<Index, Index, Index, Index> confusion(const RegionMask& pred, const RegionMask& gt) {
    Index tp = 0, fp = 0, fn = 0, tn = 0;
    for (std::size_t i = 0; i < pred.mask.size(); ++i) {
        const bool p = pred.mask[i] != 0, g = gt.mask[i] != 0;
        if (p && g) ++tp;
        else if (p && !g) ++fp;
        else if (!p && g) ++fn;
        else ++tn;
    }
    return {tp, fp, fn, tn};
}

}  // namespace

double dice_score(const RegionMask& pred, const RegionMask& gt) {
    require_compatible(pred, gt, "dice_score", false);
    auto [tp, fp, fn, tn] = confusion(pred, gt);
    (void)tn;
    const Index denom = 2 * tp + fp + fn;
    if (denom == 0) return 1.0;  // both empty
    return 2.0 * double(tp) / double(denom);
}

double sensitivity(const RegionMask& pred, const RegionMask& gt) {
    require_compatible(pred, gt, "sensitivity", false);
    auto [tp, fp, fn, tn] = confusion(pred, gt);
    (void)fp;
    (void)tn;
    if (tp + fn == 0) return 1.0;
    return double(tp) / double(tp + fn);
}

double specificity(const RegionMask& pred, const RegionMask& gt) {
    require_compatible(pred, gt, "specificity", false);
    auto [tp, fp, fn, tn] = confusion(pred, gt);
    (void)tp;
    (void)fn;
    if (tn + fp == 0) return 1.0;
    return double(tn) / double(tn + fp);
}

double hd95(const RegionMask& pred, const RegionMask& gt) {
    require_compatible(pred, gt, "hd95", true);
    const Index np = pred.count(), ng = gt.count();
    if (np == 0 && ng == 0) return 0.0;
    if (np == 0 || ng == 0) {
        const double dz = double(pred.d) * pred.spacing[0];
        const double dy = double(pred.h) * pred.spacing[1];
        const double dx = double(pred.w) * pred.spacing[2];
        return std::sqrt(dz * dz + dy * dy + dx * dx);
    }

    const auto surf_p = surface_of(pred);
    const auto surf_g = surface_of(gt);
    const auto dist_to_g = edt_sq(surf_g, pred.d, pred.h, pred.w, pred.spacing);
    const auto dist_to_p = edt_sq(surf_p, pred.d, pred.h, pred.w, pred.spacing);

    std::vector<double> d_pg, d_gp;
    for (std::size_t i = 0; i < surf_p.size(); ++i) {
        if (surf_p[i]) d_pg.push_back(std::sqrt(dist_to_g[i]));
        if (surf_g[i]) d_gp.push_back(std::sqrt(dist_to_p[i]));
    }
    return std::max(percentile_95(d_pg), percentile_95(d_gp));
}

std::array<RegionMetrics, 3> evaluate_subject(const LabelVolume& pred, const LabelVolume& gt) {
    if (pred.d != gt.d || pred.h != gt.h || pred.w != gt.w)
        throw ValidationError("evaluate_subject: label grid shapes differ");
    for (int i = 0; i < 3; ++i)
        if (std::abs(pred.spacing[i] - gt.spacing[i]) > 1e-6)
            throw ValidationError("evaluate_subject: label spacings differ");

    const auto [p_wt, p_tc, p_et] = derive_region_masks(pred);
    const auto [g_wt, g_tc, g_et] = derive_region_masks(gt);
    const std::array<const RegionMask*, 3> preds{&p_wt, &p_tc, &p_et};
    const std::array<const RegionMask*, 3> gts{&g_wt, &g_tc, &g_et};

    std::array<RegionMetrics, 3> out;
    for (int i = 0; i < 3; ++i) {
        out[static_cast<std::size_t>(i)] = RegionMetrics{
            static_cast<Region>(i), dice_score(*preds[static_cast<std::size_t>(i)], *gts[static_cast<std::size_t>(i)]),
            sensitivity(*preds[static_cast<std::size_t>(i)], *gts[static_cast<std::size_t>(i)]),
            specificity(*preds[static_cast<std::size_t>(i)], *gts[static_cast<std::size_t>(i)]),
            hd95(*preds[static_cast<std::size_t>(i)], *gts[static_cast<std::size_t>(i)])};
    }
    return out;
}

MetricsReport aggregate(const std::vector<SubjectMetrics>& subjects) {
    if (subjects.empty()) throw ValidationError("aggregate: no subjects to aggregate");
    MetricsReport report;
    report.subjects = subjects;
    for (int r = 0; r < 3; ++r) {
        RegionMetrics m{static_cast<Region>(r), 0, 0, 0, 0};
        for (const auto& s : subjects) {
            const RegionMetrics& sm = s.regions[static_cast<std::size_t>(r)];
            m.dice += sm.dice;
            m.sensitivity += sm.sensitivity;
            m.specificity += sm.specificity;
            m.hd95 += sm.hd95;
        }
        const double n = double(subjects.size());
        m.dice /= n;
        m.sensitivity /= n;
        m.specificity /= n;
        m.hd95 /= n;
        report.region_means[static_cast<std::size_t>(r)] = m;
    }
    RegionMetrics& o = report.overall;
    for (int r = 0; r < 3; ++r) {
        o.dice += report.region_means[static_cast<std::size_t>(r)].dice / 3.0;
        o.sensitivity += report.region_means[static_cast<std::size_t>(r)].sensitivity / 3.0;
        o.specificity += report.region_means[static_cast<std::size_t>(r)].specificity / 3.0;
        o.hd95 += report.region_means[static_cast<std::size_t>(r)].hd95 / 3.0;
    }
    return report;
}

std::string to_csv(const MetricsReport& report) {
    std::string out = "subject,region,dice,sensitivity,specificity,hd95\n";
    char line[256];
    const auto emit = [&](const std::string& subject, const std::string& region, const RegionMetrics& m) {
        std::snprintf(line, sizeof(line), "%s,%s,%.6f,%.6f,%.6f,%.6f\n", subject.c_str(), region.c_str(),
                      m.dice, m.sensitivity, m.specificity, m.hd95);
        out += line;
    };
    for (const auto& s : report.subjects)
        for (const auto& m : s.regions) emit(s.subject_id, to_string(m.region), m);
    for (const auto& m : report.region_means) emit("MEAN", to_string(m.region), m);
    emit("MEAN", "ALL", report.overall);
    return out;
}

}  // namespace cmseg
