// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "cmseg/data_io.hpp"
#include "cmseg/errors.hpp"
#include "cmseg/phantom.hpp"
#include "test_helpers.hpp"

using namespace cmseg;
namespace fs = std::filesystem;

namespace {

PhantomConfig small_cfg() {
    PhantomConfig cfg;
    cfg.grid_size = {32, 32, 32};
    cfg.n_subjects = 4;
    cfg.val_count = 1;
    cfg.lesion_count_min = 1;
    cfg.lesion_count_max = 2;
    cfg.noise_sigma = 0.02;
    cfg.seed = 77;
    return cfg;
}

}  // namespace

TEST_CASE("phantom generation is byte-deterministic under a fixed seed") {
    const auto dir_a = test::fresh_dir("phantom_a");
    const auto dir_b = test::fresh_dir("phantom_b");
    const PhantomConfig cfg = small_cfg();
    const auto rec_a = synth_phantom(cfg, dir_a.string());
    const auto rec_b = synth_phantom(cfg, dir_b.string());
    REQUIRE(rec_a.size() == rec_b.size());
    CHECK(test::same_bytes(dir_a / "manifest.json", dir_b / "manifest.json"));
    for (std::size_t i = 0; i < rec_a.size(); ++i) {
        for (ModalityId m : kAllModalities)
            CHECK(test::same_bytes(rec_a[i].modality_paths.at(m), rec_b[i].modality_paths.at(m)));
        CHECK(test::same_bytes(*rec_a[i].label_path, *rec_b[i].label_path));
    }
}

TEST_CASE("zero lesion range produces all-background labels") {
    const auto dir = test::fresh_dir("phantom_nolesion");
    PhantomConfig cfg = small_cfg();
    cfg.n_subjects = 2;
    cfg.val_count = 0;
    cfg.lesion_count_min = 0;
    cfg.lesion_count_max = 0;
    for (const auto& rec : synth_phantom(cfg, dir.string())) {
        const LoadedSubject s = load_subject(rec);
        REQUIRE(s.label.has_value());
        for (const auto v : s.label->labels) CHECK(v == 0);
    }
}

TEST_CASE("phantom labels satisfy region nesting and subjects load cleanly") {
    const auto dir = test::fresh_dir("phantom_nest");
    const PhantomConfig cfg = small_cfg();
    synth_phantom(cfg, dir.string());
    const auto train = scan_dataset(dir.string(), "train");
    const auto val = scan_dataset(dir.string(), "val");
    CHECK(train.size() == 3);
    CHECK(val.size() == 1);
    for (const auto& rec : train) {
        const LoadedSubject s = load_subject(rec);
        auto [wt, tc, et] = derive_region_masks(*s.label);
        CHECK(wt.count() > 0);
        for (std::size_t i = 0; i < wt.mask.size(); ++i) {
            CHECK(et.mask[i] <= tc.mask[i]);
            CHECK(tc.mask[i] <= wt.mask[i]);
        }
        // tumor voxels sit inside the brain (nonzero intensities)
        const Volume& t1 = s.volumes.at(ModalityId::T1);
        for (std::size_t i = 0; i < wt.mask.size(); ++i)
            if (wt.mask[i]) CHECK(t1.data[i] != 0.0);
    }
}

TEST_CASE("pair-B volumes reconstruct from pair-A through the declared transform") {
    const auto dir = test::fresh_dir("phantom_recon");
    const PhantomConfig cfg = small_cfg();
    const auto records = synth_phantom(cfg, dir.string());
    for (const auto& rec : records) {
        const LoadedSubject s = load_subject(rec);  // raw intensities
        const Volume& t1 = s.volumes.at(ModalityId::T1);
        const Volume& t1c = s.volumes.at(ModalityId::T1c);
        const Volume& t2 = s.volumes.at(ModalityId::T2);
        const Volume& flair = s.volumes.at(ModalityId::FLAIR);
        const LabelVolume& label = *s.label;

        Index brain = 0, ok_t2 = 0, ok_flair = 0;
        const double tol = std::max(3.0 * cfg.noise_sigma, 1e-5);
        for (Index i = 0; i < t1.voxels(); ++i) {
            if (t1.data[std::size_t(i)] == 0.0) continue;
            ++brain;
            const std::uint8_t code = label.labels[std::size_t(i)];
            const double want_t2 = phantom_transform(cfg.intensity_map, t1.data[std::size_t(i)]) +
                                   phantom_pair_b_delta(ModalityId::T2, code);
            const double want_fl = phantom_transform(cfg.intensity_map, t1c.data[std::size_t(i)]) +
                                   phantom_pair_b_delta(ModalityId::FLAIR, code);
            if (std::abs(t2.data[std::size_t(i)] - want_t2) <= tol) ++ok_t2;
            if (std::abs(flair.data[std::size_t(i)] - want_fl) <= tol) ++ok_flair;
        }
        REQUIRE(brain > 0);
        CHECK(double(ok_t2) >= 0.99 * double(brain));
        CHECK(double(ok_flair) >= 0.99 * double(brain));
    }
}

TEST_CASE("the declared intensity transforms are strictly monotone") {
    for (const char* id : {"cubic_inv", "linear"}) {
        double prev = phantom_transform(id, 0.0);
        for (double x = 0.01; x <= 1.6; x += 0.01) {
            const double cur = phantom_transform(id, x);
            CHECK(cur < prev);
            prev = cur;
        }
    }
    CHECK_THROWS_AS(phantom_transform("nope", 0.5), ValidationError);
}

TEST_CASE("phantom config validation") {
    PhantomConfig cfg = small_cfg();
    cfg.grid_size = {16, 32, 32};
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg = small_cfg();
    cfg.noise_sigma = -1;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg = small_cfg();
    cfg.lesion_count_max = 0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg = small_cfg();
    cfg.val_count = 10;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
}

TEST_CASE("manifest lists every subject with split membership") {
    const auto dir = test::fresh_dir("phantom_manifest");
    PhantomConfig cfg = small_cfg();
    cfg.n_subjects = 5;
    cfg.val_count = 2;
    synth_phantom(cfg, dir.string());
    const std::string manifest = test::slurp(dir / "manifest.json");
    CHECK(manifest.find("\"n_subjects\": 5") != std::string::npos);
    for (int i = 0; i < 5; ++i)
        CHECK(manifest.find("phantom_00" + std::to_string(i)) != std::string::npos);
    CHECK(manifest.find("\"val\"") != std::string::npos);
    CHECK(manifest.find("\"train\"") != std::string::npos);

    SUBCASE("zero subjects still writes an (empty) manifest") {
        const auto dir0 = test::fresh_dir("phantom_empty");
        cfg.n_subjects = 0;
        cfg.val_count = 0;
        CHECK(synth_phantom(cfg, dir0.string()).empty());
        CHECK(fs::exists(dir0 / "manifest.json"));
    }
}
