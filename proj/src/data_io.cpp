// SPDX-License-Identifier: Apache-2.0
#include "cmseg/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "cmseg/errors.hpp"
#include "cmseg/nifti.hpp"
#include "cmseg/rng.hpp"

namespace fs = std::filesystem;

namespace cmseg {
namespace {

constexpr int kMaxPatchAttempts = 100;

std::optional<std::string> find_modality_file(const fs::path& dir, const std::string& id,
                                              const std::string& token) {
    for (const char* ext : {".nii.gz", ".nii"}) {
        fs::path p = dir / (id + "_" + token + ext);
        if (fs::exists(p)) return p.string();
    }
    return std::nullopt;
}

bool spacing_close(const Spacing& a, const Spacing& b) {
    for (int i = 0; i < 3; ++i)
        if (std::abs(a[i] - b[i]) > 1e-4 * std::max(1.0, std::abs(b[i]))) return false;
    return true;
}

}  // namespace

std::vector<SubjectRecord> scan_dataset(const std::string& root, const std::string& split) {
    const fs::path split_dir = fs::path(root) / split;
    if (!fs::is_directory(split_dir))
        throw ValidationError("dataset split directory not found: " + split_dir.string());

    std::vector<SubjectRecord> records;
    for (const auto& entry : fs::directory_iterator(split_dir)) {
        if (!entry.is_directory()) continue;
        const std::string id = entry.path().filename().string();
        SubjectRecord rec;
        rec.subject_id = id;
        rec.split = split;
        for (ModalityId m : kAllModalities) {
            auto p = find_modality_file(entry.path(), id, modality_file_token(m));
            if (!p)
                throw ValidationError("subject " + id + " is missing the " + to_string(m) +
                                      " modality file (" + id + "_" + modality_file_token(m) + ".nii[.gz])");
            rec.modality_paths[m] = *p;
        }
        rec.label_path = find_modality_file(entry.path(), id, "seg");
        records.push_back(std::move(rec));
    }
    std::sort(records.begin(), records.end(),
              [](const SubjectRecord& a, const SubjectRecord& b) { return a.subject_id < b.subject_id; });
    return records;
}

LoadedSubject load_subject(const SubjectRecord& record) {
    LoadedSubject out;
    const Volume* ref = nullptr;
    for (ModalityId m : kAllModalities) {
        auto it = record.modality_paths.find(m);
        if (it == record.modality_paths.end())
            throw ValidationError("subject " + record.subject_id + " record lacks the " + to_string(m) +
                                  " modality path");
        Volume v = read_nifti_volume(it->second);
        if (ref) {
            if (!v.same_grid(*ref))
                throw ValidationError("subject " + record.subject_id + ": modality grid shapes differ (" +
                                      to_string(m) + ")");
            if (!spacing_close(v.spacing, ref->spacing))
                throw ValidationError("subject " + record.subject_id + ": modality spacings differ (" +
                                      to_string(m) + ")");
        }
        auto [pos, inserted] = out.volumes.emplace(m, std::move(v));
        (void)inserted;
        if (!ref) ref = &pos->second;
    }
    if (record.label_path) {
        LabelVolume l = read_nifti_labels(*record.label_path);
        if (l.d != ref->d || l.h != ref->h || l.w != ref->w)
            throw ValidationError("subject " + record.subject_id + ": label grid shape differs from modalities");
        out.label = std::move(l);
    }
    return out;
}

Volume z_normalize(const Volume& v) {
    if (v.c != 1) throw ValidationError("z_normalize: expected a single-channel volume");
    double sum = 0.0, sum_sq = 0.0;
    Index n = 0;
    for (const Scalar x : v.data) {
        if (x != 0.0) {
            sum += x;
            sum_sq += x * x;
            ++n;
        }
    }
    if (n == 0) throw ValidationError("z_normalize: volume has no nonzero voxels");
    const double mean = sum / double(n);
    const double var = std::max(0.0, sum_sq / double(n) - mean * mean);
    if (var < 1e-24) throw ValidationError("z_normalize: zero variance over the nonzero voxel set");
    const double inv_std = 1.0 / std::sqrt(var);

    Volume out = v;
    for (Scalar& x : out.data)
        if (x != 0.0) x = (x - mean) * inv_std;
    out.require_finite("z_normalize");
    return out;
}

std::string to_string(ForegroundRule r) {
    return r == ForegroundRule::BrainOverlap ? "brain_overlap" : "tumor_overlap";
}

ForegroundRule foreground_rule_from_string(const std::string& s) {
    if (s == "brain_overlap") return ForegroundRule::BrainOverlap;
    if (s == "tumor_overlap") return ForegroundRule::TumorOverlap;
    throw ValidationError("unknown foreground_rule '" + s + "' (expected brain_overlap or tumor_overlap)");
}

void PatchSpec::validate(int net_depth) const {
    const Index div = Index(1) << net_depth;
    for (int i = 0; i < 3; ++i) {
        if (size[i] < 16)
            throw ValidationError("patch size component " + std::to_string(size[i]) + " is below the minimum of 16");
        if (size[i] % div != 0)
            throw ValidationError("patch size component " + std::to_string(size[i]) +
                                  " is not divisible by 2^depth = " + std::to_string(div));
    }
}

namespace {

bool window_has_brain(const ModalityVolumes& vols, const std::array<Index, 3>& o, const std::array<Index, 3>& sz) {
    for (const auto& [m, v] : vols) {
        (void)m;
        for (Index z = o[0]; z < o[0] + sz[0]; ++z)
            for (Index y = o[1]; y < o[1] + sz[1]; ++y)
                for (Index x = o[2]; x < o[2] + sz[2]; ++x)
                    if (v.at(0, z, y, x) != 0.0) return true;
    }
    return false;
}

bool window_has_tumor(const LabelVolume& label, const std::array<Index, 3>& o, const std::array<Index, 3>& sz) {
    for (Index z = o[0]; z < o[0] + sz[0]; ++z)
        for (Index y = o[1]; y < o[1] + sz[1]; ++y)
            for (Index x = o[2]; x < o[2] + sz[2]; ++x)
                if (label.at(z, y, x) != 0) return true;
    return false;
}

}  // namespace

PatchSample sample_patch(const ModalityVolumes& vols, const std::optional<LabelVolume>& label,
                         const PatchSpec& spec) {
    if (vols.empty()) throw ValidationError("sample_patch: no modality volumes supplied");
    const Volume& ref = vols.begin()->second;
    for (const auto& [m, v] : vols) {
        (void)m;
        if (!v.same_grid(ref)) throw ValidationError("sample_patch: modality grids differ in shape");
        if (v.c != 1) throw ValidationError("sample_patch: modality volumes must be single-channel");
    }
    if (label && (label->d != ref.d || label->h != ref.h || label->w != ref.w))
        throw ValidationError("sample_patch: label grid shape differs from modalities");
    if (spec.foreground_rule == ForegroundRule::TumorOverlap && !label)
        throw ValidationError("sample_patch: tumor_overlap requires a label volume");

    const std::array<Index, 3> dims{ref.d, ref.h, ref.w};
    for (int i = 0; i < 3; ++i)
        if (spec.size[i] > dims[i])
            throw ValidationError("sample_patch: patch size exceeds volume size on axis " + std::to_string(i));

    Rng rng(derive_seed(spec.seed, "patch_window"));
    std::array<Index, 3> origin{};
    bool found = false;
    int attempts = 0;
    for (; attempts < kMaxPatchAttempts; ++attempts) {
        for (int i = 0; i < 3; ++i)
            origin[i] = static_cast<Index>(rng.next_below(static_cast<std::uint64_t>(dims[i] - spec.size[i] + 1)));
        const bool ok = spec.foreground_rule == ForegroundRule::BrainOverlap
                            ? window_has_brain(vols, origin, spec.size)
                            : window_has_tumor(*label, origin, spec.size);
        if (ok) {
            found = true;
            ++attempts;
            break;
        }
    }
    if (!found)
        throw RuntimeError("sample_patch: no window satisfying " + to_string(spec.foreground_rule) + " found in " +
                           std::to_string(attempts) + " attempts");

    PatchSample out;
    out.origin = origin;
    for (const auto& [m, v] : vols) {
        Volume p(1, spec.size[0], spec.size[1], spec.size[2], v.spacing);
        for (Index z = 0; z < spec.size[0]; ++z)
            for (Index y = 0; y < spec.size[1]; ++y)
                for (Index x = 0; x < spec.size[2]; ++x)
                    p.at(0, z, y, x) = v.at(0, origin[0] + z, origin[1] + y, origin[2] + x);
        out.volumes.emplace(m, std::move(p));
    }
    if (label) {
        LabelVolume p(spec.size[0], spec.size[1], spec.size[2], label->spacing);
        for (Index z = 0; z < spec.size[0]; ++z)
            for (Index y = 0; y < spec.size[1]; ++y)
                for (Index x = 0; x < spec.size[2]; ++x)
                    p.at(z, y, x) = label->at(origin[0] + z, origin[1] + y, origin[2] + x);
        out.label = std::move(p);
    }
    return out;
}

Volume build_pair_input(const ModalityVolumes& vols, const std::vector<ModalityId>& pair) {
    if (pair.empty()) throw ValidationError("build_pair_input: empty modality list");
    const Volume* ref = nullptr;
    for (ModalityId m : pair) {
        auto it = vols.find(m);
        if (it == vols.end()) throw ValidationError("build_pair_input: missing modality " + to_string(m));
        if (it->second.c != 1) throw ValidationError("build_pair_input: modalities must be single-channel");
        if (ref && !it->second.same_grid(*ref))
            throw ValidationError("build_pair_input: modality grids differ in shape");
        if (!ref) ref = &it->second;
    }
    Volume out(static_cast<Index>(pair.size()), ref->d, ref->h, ref->w, ref->spacing);
    const Index n = ref->voxels();
    for (std::size_t i = 0; i < pair.size(); ++i) {
        const Volume& src = vols.at(pair[i]);
        std::copy(src.data.begin(), src.data.end(), out.data.begin() + static_cast<Index>(i) * n);
    }
    return out;
}

std::vector<Volume> split_channels(const Volume& v) {
    std::vector<Volume> out;
    out.reserve(static_cast<std::size_t>(v.c));
    const Index n = v.voxels();
    for (Index ci = 0; ci < v.c; ++ci) {
        Volume s(1, v.d, v.h, v.w, v.spacing);
        std::copy(v.data.begin() + ci * n, v.data.begin() + (ci + 1) * n, s.data.begin());
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace cmseg
