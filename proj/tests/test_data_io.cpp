// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "cmseg/data_io.hpp"
#include "cmseg/errors.hpp"
#include "cmseg/nifti.hpp"
#include "test_helpers.hpp"

using namespace cmseg;
namespace fs = std::filesystem;

TEST_CASE("z_normalize maps foreground {2,4} to {-1,+1}") {
    Volume v(1, 1, 1, 4);
    v.data = {0.0, 2.0, 0.0, 4.0};
    const Volume out = z_normalize(v);
    CHECK(out.data[0] == 0.0);
    CHECK(out.data[2] == 0.0);
    CHECK(out.data[1] == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(out.data[3] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("z_normalize is idempotent up to numerics") {
    Volume v = test::random_volume(1, 6, 6, 6, 3, 0.5, 2.0);
    const Volume once = z_normalize(v);
    const Volume twice = z_normalize(once);
    for (std::size_t i = 0; i < once.data.size(); ++i)
        CHECK(twice.data[i] == doctest::Approx(once.data[i]).epsilon(1e-9));
}

TEST_CASE("z_normalize error paths") {
    Volume zeros(1, 2, 2, 2);
    CHECK_THROWS_AS(z_normalize(zeros), ValidationError);
    Volume constant(1, 2, 2, 2, kUnitSpacing, 3.5);
    CHECK_THROWS_AS(z_normalize(constant), ValidationError);
}

TEST_CASE("z_normalize foreground statistics contract on random volumes") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Volume v = test::random_volume(1, 5, 6, 4, seed, 0.2, 3.0);
        // punch some exact zeros (background)
        Rng rng(seed ^ 0xabcdULL);
        for (auto& x : v.data)
            if (rng.next_double() < 0.3) x = 0.0;
        if (std::none_of(v.data.begin(), v.data.end(), [](double x) { return x != 0.0; })) continue;
        const Volume out = z_normalize(v);
        double sum = 0, sq = 0;
        Index n = 0;
        for (std::size_t i = 0; i < v.data.size(); ++i) {
            if (v.data[i] == 0.0) {
                CHECK(out.data[i] == 0.0);
            } else {
                sum += out.data[i];
                sq += out.data[i] * out.data[i];
                ++n;
            }
        }
        const double mean = sum / double(n);
        const double stddev = std::sqrt(std::max(0.0, sq / double(n) - mean * mean));
        CHECK(std::abs(mean) < 1e-5);
        CHECK(std::abs(stddev - 1.0) < 1e-4);
    }
}

TEST_CASE("build_pair_input stacks channels in pair order") {
    ModalityVolumes vols;
    vols.emplace(ModalityId::T1, test::random_volume(1, 3, 3, 3, 1));
    vols.emplace(ModalityId::T1c, test::random_volume(1, 3, 3, 3, 2));

    SUBCASE("singleton pair is a passthrough") {
        const Volume v = build_pair_input(vols, {ModalityId::T1});
        CHECK(v.c == 1);
        CHECK(v.data == vols.at(ModalityId::T1).data);
    }
    SUBCASE("two-modality pair keeps ordering and splits back exactly") {
        const Volume v = build_pair_input(vols, {ModalityId::T1, ModalityId::T1c});
        CHECK(v.c == 2);
        const auto parts = split_channels(v);
        CHECK(parts[0].data == vols.at(ModalityId::T1).data);
        CHECK(parts[1].data == vols.at(ModalityId::T1c).data);
    }
    SUBCASE("missing modality is reported") {
        CHECK_THROWS_WITH_AS(build_pair_input(vols, {ModalityId::T1, ModalityId::FLAIR}),
                             doctest::Contains("FLAIR"), ValidationError);
    }
}

namespace {

ModalityVolumes brainlike_volumes(Index n, std::uint64_t seed) {
    ModalityVolumes vols;
    for (ModalityId m : kAllModalities) {
        Volume v(1, n, n, n);
        Rng rng(seed ^ static_cast<std::uint64_t>(m));
        for (Index z = 0; z < n; ++z)
            for (Index y = 0; y < n; ++y)
                for (Index x = 0; x < n; ++x)
                    v.at(0, z, y, x) = (z > 0 && z < n - 1) ? rng.uniform(0.5, 1.5) : 0.0;
        vols.emplace(m, std::move(v));
    }
    return vols;
}

}  // namespace

TEST_CASE("sample_patch window selection") {
    const Index n = 24;
    ModalityVolumes vols = brainlike_volumes(n, 11);
    LabelVolume label(n, n, n);
    // one small tumor blob
    for (Index z = 9; z < 12; ++z)
        for (Index y = 14; y < 17; ++y)
            for (Index x = 4; x < 7; ++x) label.at(z, y, x) = 2;

    SUBCASE("volume equal to patch size gives the identity window") {
        PatchSpec spec{{n, n, n}, ForegroundRule::BrainOverlap, 5};
        const PatchSample p = sample_patch(vols, label, spec);
        CHECK(p.origin == std::array<Index, 3>{0, 0, 0});
        CHECK(p.volumes.at(ModalityId::T1).data == vols.at(ModalityId::T1).data);
    }
    SUBCASE("identical seeds give identical windows, different seeds move") {
        PatchSpec spec{{16, 16, 16}, ForegroundRule::BrainOverlap, 42};
        const PatchSample p1 = sample_patch(vols, label, spec);
        const PatchSample p2 = sample_patch(vols, label, spec);
        CHECK(p1.origin == p2.origin);
        CHECK(p1.volumes.at(ModalityId::T2).data == p2.volumes.at(ModalityId::T2).data);
        bool moved = false;
        for (std::uint64_t s = 0; s < 20 && !moved; ++s) {
            spec.seed = 100 + s;
            moved = sample_patch(vols, label, spec).origin != p1.origin;
        }
        CHECK(moved);
    }
    SUBCASE("tumor_overlap windows always contain a tumor voxel") {
        PatchSpec spec{{16, 16, 16}, ForegroundRule::TumorOverlap, 0};
        for (std::uint64_t s = 0; s < 1000; ++s) {
            spec.seed = s;
            const PatchSample p = sample_patch(vols, label, spec);
            REQUIRE(p.label.has_value());
            bool has_tumor = false;
            for (const auto v : p.label->labels) has_tumor |= (v != 0);
            CHECK(has_tumor);
        }
    }
    SUBCASE("label window stays aligned with the image window") {
        PatchSpec spec{{16, 16, 16}, ForegroundRule::TumorOverlap, 3};
        const PatchSample p = sample_patch(vols, label, spec);
        for (Index z = 0; z < 16; ++z)
            for (Index y = 0; y < 16; ++y)
                for (Index x = 0; x < 16; ++x)
                    CHECK(p.label->at(z, y, x) ==
                          label.at(p.origin[0] + z, p.origin[1] + y, p.origin[2] + x));
    }
    SUBCASE("an unsatisfiable rule reports the attempt count") {
        LabelVolume empty(n, n, n);
        PatchSpec spec{{16, 16, 16}, ForegroundRule::TumorOverlap, 1};
        CHECK_THROWS_WITH_AS(sample_patch(vols, empty, spec), doctest::Contains("100 attempts"),
                             RuntimeError);
    }
    SUBCASE("patch larger than the volume is rejected") {
        PatchSpec spec{{32, 16, 16}, ForegroundRule::BrainOverlap, 1};
        CHECK_THROWS_AS(sample_patch(vols, label, spec), ValidationError);
    }
}

TEST_CASE("PatchSpec divisibility") {
    PatchSpec spec{{24, 24, 24}, ForegroundRule::BrainOverlap, 0};
    CHECK_NOTHROW(spec.validate(3));  // 24 divisible by 8
    CHECK_THROWS_AS(spec.validate(4), ValidationError);
    spec.size = {8, 8, 8};
    CHECK_THROWS_AS(spec.validate(1), ValidationError);  // below the 16 minimum
}

TEST_CASE("NIfTI volume and label round trips") {
    const auto dir = test::fresh_dir("nifti_roundtrip");

    SUBCASE("float32-representable image data survives exactly") {
        Volume v(1, 5, 6, 7, Spacing{1.5, 1.0, 2.0});
        Rng rng(9);
        for (auto& x : v.data) x = double(float(rng.uniform(-3, 3)));
        for (const char* name : {"img.nii", "img.nii.gz"}) {
            const std::string path = (dir / name).string();
            write_nifti_volume(path, v);
            const Volume back = read_nifti_volume(path);
            CHECK(back.d == v.d);
            CHECK(back.h == v.h);
            CHECK(back.w == v.w);
            CHECK(back.data == v.data);
            for (int i = 0; i < 3; ++i) CHECK(back.spacing[i] == doctest::Approx(v.spacing[i]));
        }
    }
    SUBCASE("labels survive exactly and invalid codes are rejected on read") {
        LabelVolume l = test::random_labels(4, 5, 6, 13);
        const std::string path = (dir / "seg.nii.gz").string();
        write_nifti_labels(path, l);
        const LabelVolume back = read_nifti_labels(path);
        CHECK(back.labels == l.labels);
    }
    SUBCASE("gz writes are byte-stable") {
        Volume v = test::random_volume(1, 4, 4, 4, 21);
        write_nifti_volume((dir / "a.nii.gz").string(), v);
        write_nifti_volume((dir / "b.nii.gz").string(), v);
        CHECK(test::same_bytes(dir / "a.nii.gz", dir / "b.nii.gz"));
    }
}

TEST_CASE("scan_dataset and load_subject error paths") {
    const auto dir = test::fresh_dir("scan_dataset");
    const auto subj = dir / "train" / "case_01";
    fs::create_directories(subj);
    Volume v = test::random_volume(1, 4, 4, 4, 1, 0.1, 1.0);
    write_nifti_volume((subj / "case_01_t1.nii.gz").string(), v);
    write_nifti_volume((subj / "case_01_t1ce.nii.gz").string(), v);
    write_nifti_volume((subj / "case_01_t2.nii.gz").string(), v);

    SUBCASE("a missing modality is named") {
        CHECK_THROWS_WITH_AS(scan_dataset(dir.string(), "train"), doctest::Contains("FLAIR"),
                             ValidationError);
    }
    SUBCASE("well-formed subjects load with equal shapes") {
        write_nifti_volume((subj / "case_01_flair.nii.gz").string(), v);
        LabelVolume l(4, 4, 4);
        l.at(1, 1, 1) = 4;
        write_nifti_labels((subj / "case_01_seg.nii.gz").string(), l);
        const auto records = scan_dataset(dir.string(), "train");
        REQUIRE(records.size() == 1);
        const LoadedSubject s = load_subject(records[0]);
        CHECK(s.volumes.size() == 4);
        REQUIRE(s.label.has_value());
        CHECK(s.label->at(1, 1, 1) == 4);
    }
    SUBCASE("a shape mismatch across modalities is rejected") {
        write_nifti_volume((subj / "case_01_flair.nii.gz").string(),
                           test::random_volume(1, 5, 4, 4, 2, 0.1, 1.0));
        const auto records = scan_dataset(dir.string(), "train");
        CHECK_THROWS_AS(load_subject(records[0]), ValidationError);
    }
}
