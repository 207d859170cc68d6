// SPDX-License-Identifier: Apache-2.0
#include "cmseg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "cmseg/errors.hpp"
#include "cmseg/nifti.hpp"
#include "cmseg/rng.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace cmseg {
namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;
constexpr double kBrainFloor = 0.02;  // keeps brain voxels away from the zero background code

struct Ellipsoid {
    std::array<double, 3> center;
    std::array<double, 3> radii;

    double norm2(double z, double y, double x) const {
        const double dz = (z - center[0]) / radii[0];
        const double dy = (y - center[1]) / radii[1];
        const double dx = (x - center[2]) / radii[2];
        return dz * dz + dy * dy + dx * dx;
    }
};

struct Lesion {
    Ellipsoid wt, tc, et;
};

struct TextureWave {
    std::array<double, 3> k;
    double phase, amp;
};

// Additive shift on the pair-A base intensity per label code.
double pair_a_delta(ModalityId m, std::uint8_t label) {
    const bool contrast = (m == ModalityId::T1c);
    switch (label) {
        case 2: return -0.13;                    // edema: dark on both
        case 1: return -0.26;                    // necrotic core: darkest
        case 4: return contrast ? 0.30 : -0.06;  // enhancing: bright under contrast only
        default: return 0.0;
    }
}

}  // namespace

double phantom_pair_b_delta(ModalityId b_modality, std::uint8_t label) {
    if (b_modality == ModalityId::T2) {
        switch (label) {
            case 2: return 0.25;
            case 1: return 0.05;
            case 4: return 0.12;
            default: return 0.0;
        }
    }
    if (b_modality == ModalityId::FLAIR) {
        switch (label) {
            case 2: return 0.30;
            case 1: return 0.08;
            case 4: return 0.10;
            default: return 0.0;
        }
    }
    throw ValidationError("phantom_pair_b_delta: " + to_string(b_modality) + " is not a pair-B modality");
}

double phantom_transform(const std::string& intensity_map, double x) {
    if (intensity_map == "cubic_inv") {
        // Strictly decreasing cubic: f'(x) = -0.8 - 1.5 (x - 0.55)^2 < 0.
        const double t = x - 0.55;
        return 1.25 - 0.8 * x - 0.5 * t * t * t;
    }
    if (intensity_map == "linear") return 1.3 - 0.9 * x;
    throw ValidationError("unknown intensity_map '" + intensity_map + "' (expected cubic_inv or linear)");
}

void PhantomConfig::validate() const {
    for (Index g : grid_size)
        if (g < 32) throw ValidationError("phantom grid_size components must be >= 32");
    if (n_subjects < 0) throw ValidationError("phantom n_subjects must be >= 0");
    if (lesion_count_min < 0 || lesion_count_max < lesion_count_min)
        throw ValidationError("phantom lesion_count range is invalid");
    if (noise_sigma < 0) throw ValidationError("phantom noise_sigma must be >= 0");
    if (val_count > n_subjects) throw ValidationError("phantom val_count exceeds n_subjects");
    phantom_transform(intensity_map, 0.5);  // rejects unknown ids
}

int PhantomConfig::resolved_val_count() const {
    return val_count >= 0 ? val_count : n_subjects / 4;
}

std::vector<SubjectRecord> synth_phantom(const PhantomConfig& cfg, const std::string& root) {
    cfg.validate();
    const Index D = cfg.grid_size[0], H = cfg.grid_size[1], W = cfg.grid_size[2];
    const int n_val = cfg.resolved_val_count();

    std::error_code ec;
    fs::create_directories(root, ec);
    if (ec) throw RuntimeError("cannot create phantom output directory " + root + ": " + ec.message());

    std::vector<SubjectRecord> records;
    ordered_json manifest_subjects = ordered_json::array();

    for (int si = 0; si < cfg.n_subjects; ++si) {
        const std::uint64_t subject_seed = derive_seed(cfg.seed, "phantom_subject", static_cast<std::uint64_t>(si));
        Rng rng(subject_seed);

        Ellipsoid brain;
        brain.center = {D / 2.0 + rng.uniform(-2, 2), H / 2.0 + rng.uniform(-2, 2), W / 2.0 + rng.uniform(-2, 2)};
        brain.radii = {D * rng.uniform(0.34, 0.42), H * rng.uniform(0.34, 0.42), W * rng.uniform(0.34, 0.42)};

        std::vector<TextureWave> waves(4);
        for (auto& wave : waves) {
            const double wavelength = rng.uniform(double(std::min({D, H, W})) / 5.0, double(std::min({D, H, W})) / 2.5);
            double dir[3] = {rng.normal(), rng.normal(), rng.normal()};
            const double norm = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]) + 1e-12;
            for (int i = 0; i < 3; ++i) wave.k[i] = kTwoPi / wavelength * dir[i] / norm;
            wave.phase = rng.uniform(0, kTwoPi);
            wave.amp = rng.uniform(0.02, 0.05);
        }

        const int n_lesions =
            cfg.lesion_count_min +
            static_cast<int>(rng.next_below(static_cast<std::uint64_t>(cfg.lesion_count_max - cfg.lesion_count_min + 1)));
        std::vector<Lesion> lesions(static_cast<std::size_t>(n_lesions));
        for (auto& les : lesions) {
            double dir[3] = {rng.normal(), rng.normal(), rng.normal()};
            const double norm = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]) + 1e-12;
            const double frac = rng.uniform(0.0, 0.55);
            Ellipsoid wt;
            for (int i = 0; i < 3; ++i) wt.center[i] = brain.center[i] + frac * brain.radii[i] * dir[i] / norm;
            const double base_r = rng.uniform(0.10, 0.16) * double(std::min({D, H, W}));
            for (int i = 0; i < 3; ++i) wt.radii[i] = base_r * rng.uniform(0.75, 1.25);
            Ellipsoid tc = wt, et = wt;
            const double tc_f = rng.uniform(0.55, 0.75);
            const double et_f = tc_f * rng.uniform(0.50, 0.70);
            for (int i = 0; i < 3; ++i) {
                tc.radii[i] = wt.radii[i] * tc_f;
                et.radii[i] = wt.radii[i] * et_f;
            }
            les = Lesion{wt, tc, et};
        }

        LabelVolume label(D, H, W);
        Volume t1(1, D, H, W), t1c(1, D, H, W), t2(1, D, H, W), flair(1, D, H, W);
        Rng noise_rng(derive_seed(subject_seed, "noise"));

        for (Index z = 0; z < D; ++z) {
            for (Index y = 0; y < H; ++y) {
                for (Index x = 0; x < W; ++x) {
                    const double r2 = brain.norm2(double(z), double(y), double(x));
                    if (r2 > 1.0) continue;  // background stays exactly 0

                    double texture = 0.0;
                    for (const auto& wave : waves)
                        texture += wave.amp * std::cos(wave.k[0] * z + wave.k[1] * y + wave.k[2] * x + wave.phase);
                    const double base = 0.55 + 0.18 * (1.0 - r2) + texture;

                    std::uint8_t code = 0;
                    for (const auto& les : lesions) {
                        if (les.et.norm2(double(z), double(y), double(x)) <= 1.0)
                            code = 4;
                        else if (les.tc.norm2(double(z), double(y), double(x)) <= 1.0)
                            code = 1;
                        else if (les.wt.norm2(double(z), double(y), double(x)) <= 1.0)
                            code = 2;
                    }
                    label.at(z, y, x) = code;

                    const double v_t1 = std::max(kBrainFloor, base + pair_a_delta(ModalityId::T1, code));
                    const double v_t1c = std::max(kBrainFloor, base + pair_a_delta(ModalityId::T1c, code));
                    const double v_t2 = std::max(kBrainFloor, phantom_transform(cfg.intensity_map, v_t1) +
                                                                  phantom_pair_b_delta(ModalityId::T2, code) +
                                                                  noise_rng.normal(0.0, cfg.noise_sigma));
                    const double v_flair = std::max(kBrainFloor, phantom_transform(cfg.intensity_map, v_t1c) +
                                                                     phantom_pair_b_delta(ModalityId::FLAIR, code) +
                                                                     noise_rng.normal(0.0, cfg.noise_sigma));
                    t1.at(0, z, y, x) = v_t1;
                    t1c.at(0, z, y, x) = v_t1c;
                    t2.at(0, z, y, x) = v_t2;
                    flair.at(0, z, y, x) = v_flair;
                }
            }
        }

        char idbuf[32];
        std::snprintf(idbuf, sizeof(idbuf), "phantom_%03d", si);
        const std::string id = idbuf;
        const std::string split = (si >= cfg.n_subjects - n_val) ? "val" : "train";
        const std::string grade = (n_lesions >= 2) ? "HGG" : "LGG";

        const fs::path dir = fs::path(root) / split / id;
        fs::create_directories(dir, ec);
        if (ec) throw RuntimeError("cannot create " + dir.string() + ": " + ec.message());

        SubjectRecord rec;
        rec.subject_id = id;
        rec.split = split;
        rec.grade = grade;
        const std::array<std::pair<ModalityId, const Volume*>, 4> images{
            std::pair{ModalityId::T1, &t1}, std::pair{ModalityId::T1c, &t1c},
            std::pair{ModalityId::T2, &t2}, std::pair{ModalityId::FLAIR, &flair}};
        for (const auto& [m, vol] : images) {
            const std::string path = (dir / (id + "_" + modality_file_token(m) + ".nii.gz")).string();
            write_nifti_volume(path, *vol);
            rec.modality_paths[m] = path;
        }
        const std::string seg_path = (dir / (id + "_seg.nii.gz")).string();
        write_nifti_labels(seg_path, label);
        rec.label_path = seg_path;
        records.push_back(rec);

        manifest_subjects.push_back(ordered_json{{"id", id},
                                                 {"split", split},
                                                 {"seed", subject_seed},
                                                 {"grade", grade},
                                                 {"lesions", n_lesions}});
    }

    ordered_json manifest{{"format", "cmseg-phantom-manifest-v1"},
                          {"intensity_map", cfg.intensity_map},
                          {"grid_size", {D, H, W}},
                          {"noise_sigma", cfg.noise_sigma},
                          {"lesion_count_min", cfg.lesion_count_min},
                          {"lesion_count_max", cfg.lesion_count_max},
                          {"seed", cfg.seed},
                          {"n_subjects", cfg.n_subjects},
                          {"val_count", n_val},
                          {"subjects", manifest_subjects}};
    std::ofstream out(fs::path(root) / "manifest.json");
    if (!out) throw RuntimeError("cannot write phantom manifest under " + root);
    out << manifest.dump(2) << "\n";
    if (!out) throw RuntimeError("short write to phantom manifest under " + root);
    return records;
}

}  // namespace cmseg
