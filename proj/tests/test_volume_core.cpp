// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "cmseg/errors.hpp"
#include "cmseg/volume.hpp"
#include "test_helpers.hpp"

using namespace cmseg;

namespace {

// Independent mapping table used to cross-check derive_region_masks.
bool in_wt(std::uint8_t v) { return v == 1 || v == 2 || v == 4; }
bool in_tc(std::uint8_t v) { return v == 1 || v == 4; }
bool in_et(std::uint8_t v) { return v == 4; }

}  // namespace

TEST_CASE("derive_region_masks on an all-zero grid gives three empty masks") {
    LabelVolume l(3, 3, 3);
    auto [wt, tc, et] = derive_region_masks(l);
    CHECK(wt.count() == 0);
    CHECK(tc.count() == 0);
    CHECK(et.count() == 0);
}

TEST_CASE("a single enhancing voxel appears in all three masks") {
    LabelVolume l(3, 3, 3);
    l.at(1, 2, 0) = 4;
    auto [wt, tc, et] = derive_region_masks(l);
    CHECK(wt.count() == 1);
    CHECK(tc.count() == 1);
    CHECK(et.count() == 1);
    CHECK(et.at(1, 2, 0) == 1);
}

TEST_CASE("region sizes on a mixed 2x2x2 grid match per-voxel enumeration") {
    LabelVolume l(2, 2, 2);
    l.labels = {1, 2, 4, 0, 0, 0, 0, 0};
    auto [wt, tc, et] = derive_region_masks(l);
    CHECK(wt.count() == 3);
    CHECK(tc.count() == 2);
    CHECK(et.count() == 1);
    for (Index i = 0; i < l.voxels(); ++i) {
        CHECK(wt.mask[std::size_t(i)] == (in_wt(l.labels[std::size_t(i)]) ? 1 : 0));
        CHECK(tc.mask[std::size_t(i)] == (in_tc(l.labels[std::size_t(i)]) ? 1 : 0));
        CHECK(et.mask[std::size_t(i)] == (in_et(l.labels[std::size_t(i)]) ? 1 : 0));
    }
}

TEST_CASE("labels outside the BraTS code set are rejected") {
    LabelVolume l(2, 2, 2);
    l.labels[3] = 3;
    CHECK_THROWS_AS(derive_region_masks(l), ValidationError);
    CHECK_THROWS_AS(one_hot(l), ValidationError);
}

TEST_CASE("nesting ET <= TC <= WT holds for random label grids") {
    for (std::uint64_t seed = 0; seed < 25; ++seed) {
        const LabelVolume l = test::random_labels(5, 4, 6, seed);
        auto [wt, tc, et] = derive_region_masks(l);
        for (std::size_t i = 0; i < l.labels.size(); ++i) {
            CHECK(et.mask[i] <= tc.mask[i]);
            CHECK(tc.mask[i] <= wt.mask[i]);
        }
    }
}

TEST_CASE("one_hot basics") {
    LabelVolume l(2, 2, 2);
    SUBCASE("all-zero grid sets only the background channel") {
        const Volume v = one_hot(l);
        for (Index i = 0; i < l.voxels(); ++i) CHECK(v.data[std::size_t(i)] == 1.0);
        for (std::size_t i = std::size_t(l.voxels()); i < v.data.size(); ++i) CHECK(v.data[i] == 0.0);
    }
    SUBCASE("label 2 sets channel index 2") {
        l.at(0, 1, 1) = 2;
        const Volume v = one_hot(l);
        CHECK(v.at(2, 0, 1, 1) == 1.0);
        CHECK(v.at(0, 0, 1, 1) == 0.0);
    }
    SUBCASE("channel sum is 1 everywhere") {
        l.labels = {0, 1, 2, 4, 4, 2, 1, 0};
        const Volume v = one_hot(l);
        for (Index i = 0; i < l.voxels(); ++i) {
            double s = 0;
            for (Index c = 0; c < 4; ++c) s += v.data[std::size_t(c * l.voxels() + i)];
            CHECK(s == 1.0);
        }
    }
}

TEST_CASE("probs_to_labels inverts one_hot on random grids") {
    for (std::uint64_t seed = 0; seed < 25; ++seed) {
        const LabelVolume l = test::random_labels(4, 5, 3, seed + 100);
        const LabelVolume back = probs_to_labels(one_hot(l));
        CHECK(back.labels == l.labels);
    }
}

TEST_CASE("probs_to_labels tie-break and argmax oracle") {
    SUBCASE("uniform probabilities decode to background") {
        Volume p(4, 1, 1, 1);
        for (auto& x : p.data) x = 0.25;
        CHECK(probs_to_labels(p).labels[0] == 0);
    }
    SUBCASE("random simplex grids agree with a brute-force argmax scan") {
        const Volume p = test::random_simplex(4, 4, 4, 7);
        const LabelVolume got = probs_to_labels(p);
        const Index n = p.voxels();
        for (Index i = 0; i < n; ++i) {
            Index best = 0;
            for (Index c = 1; c < 4; ++c)
                if (p.data[std::size_t(c * n + i)] > p.data[std::size_t(best * n + i)]) best = c;
            CHECK(got.labels[std::size_t(i)] == kLabelCodes[std::size_t(best)]);
        }
    }
    SUBCASE("channel count and simplex preconditions are enforced") {
        CHECK_THROWS_AS(probs_to_labels(Volume(3, 2, 2, 2)), ValidationError);
        Volume bad(4, 1, 1, 1);
        bad.data = {0.5, 0.5, 0.5, 0.5};
        CHECK_THROWS_AS(probs_to_labels(bad), ValidationError);
    }
}

TEST_CASE("volume and pair invariants") {
    CHECK_THROWS_AS(Volume(0, 1, 1, 1), ValidationError);
    CHECK_THROWS_AS(Volume(1, 1, 1, 1, Spacing{1, 0, 1}), ValidationError);
    ModalityPairSpec ok;
    ok.validate();
    ModalityPairSpec overlap{{ModalityId::T1, ModalityId::T2}, {ModalityId::T2, ModalityId::FLAIR}};
    CHECK_THROWS_AS(overlap.validate(), ValidationError);
    ModalityPairSpec uneven{{ModalityId::T1}, {ModalityId::T2, ModalityId::FLAIR}};
    CHECK_THROWS_AS(uneven.validate(), ValidationError);
}
