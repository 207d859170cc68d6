// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "cmseg/errors.hpp"
#include "cmseg/metrics.hpp"
#include "test_helpers.hpp"

using namespace cmseg;

namespace {

RegionMask make_mask(Index d, Index h, Index w, const std::vector<std::uint8_t>& bits,
                     Spacing sp = kUnitSpacing) {
    RegionMask m{Region::WT, d, h, w, sp, bits};
    REQUIRE(static_cast<Index>(bits.size()) == d * h * w);
    return m;
}

RegionMask random_mask(Index d, Index h, Index w, std::uint64_t seed, double density,
                       Spacing sp = kUnitSpacing) {
    RegionMask m{Region::WT, d, h, w, sp, std::vector<std::uint8_t>(std::size_t(d * h * w), 0)};
    Rng rng(seed);
    for (auto& b : m.mask) b = rng.next_double() < density ? 1 : 0;
    return m;
}

// Independent all-pairs surface-distance oracle.
struct VoxelPos {
    Index z, y, x;
};

std::vector<VoxelPos> oracle_surface(const RegionMask& m) {
    std::vector<VoxelPos> out;
    const auto set_at = [&](Index z, Index y, Index x) {
        if (z < 0 || z >= m.d || y < 0 || y >= m.h || x < 0 || x >= m.w) return false;
        return m.at(z, y, x) != 0;
    };
    for (Index z = 0; z < m.d; ++z)
        for (Index y = 0; y < m.h; ++y)
            for (Index x = 0; x < m.w; ++x) {
                if (!m.at(z, y, x)) continue;
                if (!set_at(z - 1, y, x) || !set_at(z + 1, y, x) || !set_at(z, y - 1, x) ||
                    !set_at(z, y + 1, x) || !set_at(z, y, x - 1) || !set_at(z, y, x + 1))
                    out.push_back({z, y, x});
            }
    return out;
}

double oracle_percentile95(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    if (v.size() == 1) return v[0];
    const double pos = 0.95 * double(v.size() - 1);
    const std::size_t lo = std::size_t(pos);
    const double frac = pos - double(lo);
    return v[lo] + frac * (v[std::min(lo + 1, v.size() - 1)] - v[lo]);
}

double oracle_hd95(const RegionMask& p, const RegionMask& g) {
    const auto sp = oracle_surface(p);
    const auto sg = oracle_surface(g);
    const auto directed = [&](const std::vector<VoxelPos>& from, const std::vector<VoxelPos>& to) {
        std::vector<double> dists;
        for (const auto& a : from) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& b : to) {
                const double dz = double(a.z - b.z) * p.spacing[0];
                const double dy = double(a.y - b.y) * p.spacing[1];
                const double dx = double(a.x - b.x) * p.spacing[2];
                best = std::min(best, dz * dz + dy * dy + dx * dx);
            }
            dists.push_back(std::sqrt(best));
        }
        return oracle_percentile95(std::move(dists));
    };
    return std::max(directed(sp, sg), directed(sg, sp));
}

struct Counts {
    Index tp = 0, fp = 0, fn = 0, tn = 0;
};

Counts count_confusion(const RegionMask& p, const RegionMask& g) {
    Counts c;
    for (std::size_t i = 0; i < p.mask.size(); ++i) {
        if (p.mask[i] && g.mask[i]) c.tp++;
        else if (p.mask[i]) c.fp++;
        else if (g.mask[i]) c.fn++;
        else c.tn++;
    }
    return c;
}

}  // namespace

TEST_CASE("dice on hand-counted cases") {
    const RegionMask a = make_mask(1, 1, 4, {1, 1, 0, 0});
    CHECK(dice_score(a, a) == 1.0);
    const RegionMask b = make_mask(1, 1, 4, {0, 0, 1, 1});
    CHECK(dice_score(a, b) == 0.0);
    // |P| = 2, |G| = 3, intersection 1 -> 2/5
    const RegionMask p = make_mask(1, 1, 5, {1, 1, 0, 0, 0});
    const RegionMask g = make_mask(1, 1, 5, {0, 1, 1, 1, 0});
    CHECK(dice_score(p, g) == doctest::Approx(0.4).epsilon(1e-12));
    CHECK(dice_score(g, p) == doctest::Approx(0.4).epsilon(1e-12));  // symmetry
}

TEST_CASE("sensitivity and specificity on an 8-voxel confusion table") {
    // TP=2 FN=1 TN=4 FP=1
    const RegionMask pred = make_mask(2, 2, 2, {1, 1, 0, 0, 1, 0, 0, 0});
    const RegionMask gt = make_mask(2, 2, 2, {1, 1, 1, 0, 0, 0, 0, 0});
    CHECK(sensitivity(pred, gt) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(specificity(pred, gt) == doctest::Approx(4.0 / 5.0).epsilon(1e-12));
    CHECK(sensitivity(gt, gt) == 1.0);
    CHECK(specificity(gt, gt) == 1.0);
    // complement with both classes present -> both zero
    const RegionMask comp = make_mask(2, 2, 2, {0, 0, 0, 1, 1, 1, 1, 1});
    CHECK(sensitivity(comp, gt) == 0.0);
    CHECK(specificity(comp, gt) == 0.0);
}

TEST_CASE("overlap metrics agree exactly with brute-force counting") {
    for (std::uint64_t seed = 0; seed < 60; ++seed) {
        const RegionMask p = random_mask(8, 8, 8, seed * 2 + 1, 0.05 + 0.9 * (seed % 10) / 10.0);
        const RegionMask g = random_mask(8, 8, 8, seed * 2 + 2, 0.05 + 0.9 * ((seed + 3) % 10) / 10.0);
        const Counts c = count_confusion(p, g);
        const double want_dice = (2 * c.tp + c.fp + c.fn) == 0
                                     ? 1.0
                                     : 2.0 * double(c.tp) / double(2 * c.tp + c.fp + c.fn);
        const double want_sens = (c.tp + c.fn) == 0 ? 1.0 : double(c.tp) / double(c.tp + c.fn);
        const double want_spec = (c.tn + c.fp) == 0 ? 1.0 : double(c.tn) / double(c.tn + c.fp);
        CHECK(std::abs(dice_score(p, g) - want_dice) <= 1e-12);
        CHECK(std::abs(sensitivity(p, g) - want_sens) <= 1e-12);
        CHECK(std::abs(specificity(p, g) - want_spec) <= 1e-12);
    }
}

TEST_CASE("hd95 basics") {
    SUBCASE("identical nonempty masks give zero") {
        const RegionMask m = random_mask(6, 6, 6, 5, 0.3);
        CHECK(hd95(m, m) == 0.0);
    }
    SUBCASE("two single voxels three apart on one axis, 1mm spacing") {
        RegionMask p = make_mask(1, 1, 8, {0, 1, 0, 0, 0, 0, 0, 0});
        RegionMask g = make_mask(1, 1, 8, {0, 0, 0, 0, 1, 0, 0, 0});
        CHECK(hd95(p, g) == doctest::Approx(3.0).epsilon(1e-12));
    }
    SUBCASE("millimetre spacing scales distances") {
        RegionMask p = make_mask(1, 1, 4, {1, 0, 0, 0}, Spacing{1, 1, 2.5});
        RegionMask g = make_mask(1, 1, 4, {0, 0, 1, 0}, Spacing{1, 1, 2.5});
        CHECK(hd95(p, g) == doctest::Approx(5.0).epsilon(1e-12));
    }
    SUBCASE("empty-mask conventions") {
        const RegionMask empty = make_mask(2, 2, 2, {0, 0, 0, 0, 0, 0, 0, 0});
        const RegionMask full = make_mask(2, 2, 2, {1, 1, 1, 1, 1, 1, 1, 1});
        CHECK(hd95(empty, empty) == 0.0);
        const double diag = std::sqrt(4.0 + 4.0 + 4.0);
        CHECK(hd95(empty, full) == doctest::Approx(diag).epsilon(1e-12));
        CHECK(hd95(full, empty) == doctest::Approx(diag).epsilon(1e-12));
        CHECK(dice_score(empty, empty) == 1.0);
        CHECK(dice_score(empty, full) == 0.0);
    }
}

TEST_CASE("hd95 equals the exhaustive all-pairs oracle") {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const Spacing sp = (seed % 3 == 0) ? Spacing{1.0, 1.0, 1.0}
                                           : Spacing{0.5 + 0.1 * double(seed % 5), 1.0, 2.0};
        RegionMask p = random_mask(7, 6, 8, 1000 + seed, 0.15, sp);
        RegionMask g = random_mask(7, 6, 8, 2000 + seed, 0.2, sp);
        if (p.count() == 0 || g.count() == 0) continue;
        CHECK(std::abs(hd95(p, g) - oracle_hd95(p, g)) <= 1e-9);
    }
    SUBCASE("blob-shaped masks too") {
        RegionMask p = random_mask(10, 10, 10, 1, 0.0);
        RegionMask g = random_mask(10, 10, 10, 2, 0.0);
        for (Index z = 2; z < 7; ++z)
            for (Index y = 2; y < 7; ++y)
                for (Index x = 2; x < 7; ++x) p.mask[std::size_t((z * 10 + y) * 10 + x)] = 1;
        for (Index z = 4; z < 9; ++z)
            for (Index y = 3; y < 9; ++y)
                for (Index x = 1; x < 6; ++x) g.mask[std::size_t((z * 10 + y) * 10 + x)] = 1;
        CHECK(std::abs(hd95(p, g) - oracle_hd95(p, g)) <= 1e-9);
    }
}

TEST_CASE("metrics are invariant under a simultaneous axis flip") {
    RegionMask p = random_mask(5, 6, 7, 31, 0.25);
    RegionMask g = random_mask(5, 6, 7, 32, 0.25);
    auto flip_z = [](const RegionMask& m) {
        RegionMask out = m;
        for (Index z = 0; z < m.d; ++z)
            for (Index y = 0; y < m.h; ++y)
                for (Index x = 0; x < m.w; ++x)
                    out.mask[std::size_t((z * m.h + y) * m.w + x)] =
                        m.mask[std::size_t(((m.d - 1 - z) * m.h + y) * m.w + x)];
        return out;
    };
    const RegionMask pf = flip_z(p), gf = flip_z(g);
    CHECK(dice_score(p, g) == dice_score(pf, gf));
    CHECK(sensitivity(p, g) == sensitivity(pf, gf));
    CHECK(specificity(p, g) == specificity(pf, gf));
    CHECK(hd95(p, g) == doctest::Approx(hd95(pf, gf)).epsilon(1e-12));
}

TEST_CASE("evaluate_subject composes region derivation and metrics") {
    SUBCASE("perfect prediction") {
        const LabelVolume l = test::random_labels(6, 6, 6, 40);
        const auto metrics = evaluate_subject(l, l);
        for (const auto& m : metrics) {
            CHECK(m.dice == 1.0);
            CHECK(m.hd95 == 0.0);
        }
    }
    SUBCASE("all-background prediction against a nonempty truth") {
        LabelVolume gt(6, 6, 6);
        for (Index z = 2; z < 4; ++z)
            for (Index y = 2; y < 4; ++y)
                for (Index x = 2; x < 4; ++x) gt.at(z, y, x) = 4;
        const LabelVolume pred(6, 6, 6);
        for (const auto& m : evaluate_subject(pred, gt)) {
            CHECK(m.dice == 0.0);
            CHECK(m.sensitivity == 0.0);
            CHECK(m.specificity == 1.0);
        }
    }
    SUBCASE("dilated prediction equals brute-force recomputation") {
        LabelVolume gt(8, 8, 8);
        for (Index z = 3; z < 6; ++z)
            for (Index y = 3; y < 6; ++y)
                for (Index x = 3; x < 6; ++x) gt.at(z, y, x) = (x == 4 ? 4 : 2);
        // dilate the labeled region by one voxel along +x as the "prediction"
        LabelVolume pred = gt;
        for (Index z = 0; z < 8; ++z)
            for (Index y = 0; y < 8; ++y)
                for (Index x = 1; x < 8; ++x)
                    if (pred.at(z, y, x) == 0 && gt.at(z, y, x - 1) != 0)
                        pred.at(z, y, x) = gt.at(z, y, x - 1);
        const auto metrics = evaluate_subject(pred, gt);
        const auto [p_wt, p_tc, p_et] = derive_region_masks(pred);
        const auto [g_wt, g_tc, g_et] = derive_region_masks(gt);
        const std::array<const RegionMask*, 3> ps{&p_wt, &p_tc, &p_et};
        const std::array<const RegionMask*, 3> gs{&g_wt, &g_tc, &g_et};
        for (int r = 0; r < 3; ++r) {
            const Counts c = count_confusion(*ps[std::size_t(r)], *gs[std::size_t(r)]);
            const double want_dice = 2.0 * double(c.tp) / double(2 * c.tp + c.fp + c.fn);
            CHECK(metrics[std::size_t(r)].dice == doctest::Approx(want_dice).epsilon(1e-12));
            CHECK(metrics[std::size_t(r)].hd95 ==
                  doctest::Approx(oracle_hd95(*ps[std::size_t(r)], *gs[std::size_t(r)])).epsilon(1e-9));
        }
    }
}

TEST_CASE("aggregate means and CSV output") {
    SubjectMetrics s1{"alpha",
                      {RegionMetrics{Region::WT, 0.8, 0.7, 0.9, 2.0},
                       RegionMetrics{Region::TC, 0.6, 0.5, 0.8, 3.0},
                       RegionMetrics{Region::ET, 0.4, 0.3, 0.7, 4.0}}};
    SubjectMetrics s2{"beta",
                      {RegionMetrics{Region::WT, 0.6, 0.5, 0.7, 4.0},
                       RegionMetrics{Region::TC, 0.4, 0.3, 0.6, 5.0},
                       RegionMetrics{Region::ET, 0.2, 0.1, 0.5, 6.0}}};

    SUBCASE("a single subject aggregates to itself") {
        const MetricsReport r = aggregate({s1});
        CHECK(r.region_means[0].dice == doctest::Approx(0.8));
        CHECK(r.overall.dice == doctest::Approx((0.8 + 0.6 + 0.4) / 3.0));
    }
    SUBCASE("two subjects average per region, order-independent") {
        const MetricsReport r12 = aggregate({s1, s2});
        const MetricsReport r21 = aggregate({s2, s1});
        CHECK(r12.region_means[0].dice == doctest::Approx(0.7).epsilon(1e-12));
        CHECK(r12.region_means[1].dice == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(r12.overall.dice == doctest::Approx(r21.overall.dice).epsilon(1e-12));
        CHECK(r12.region_means[2].hd95 == doctest::Approx(r21.region_means[2].hd95).epsilon(1e-12));
    }
    SUBCASE("CSV has a header, one row per subject-region, and flagged aggregates") {
        const MetricsReport r = aggregate({s1, s2});
        const std::string csv = to_csv(r);
        std::istringstream in(csv);
        std::string line;
        std::getline(in, line);
        CHECK(line == "subject,region,dice,sensitivity,specificity,hd95");
        int rows = 0, mean_rows = 0;
        while (std::getline(in, line)) {
            ++rows;
            if (line.rfind("MEAN,", 0) == 0) ++mean_rows;
        }
        CHECK(rows == 2 * 3 + 4);
        CHECK(mean_rows == 4);
        CHECK(csv.find("MEAN,ALL") != std::string::npos);
    }
    SUBCASE("empty aggregation is rejected") { CHECK_THROWS_AS(aggregate({}), ValidationError); }
}
