// SPDX-License-Identifier: Apache-2.0
#include "cmseg/subject_bank.hpp"

#include "cmseg/errors.hpp"
#include "cmseg/rng.hpp"

namespace cmseg {

SubjectBank::SubjectBank(std::vector<SubjectRecord> records)
    : records_(std::move(records)), cache_(records_.size()) {}

const LoadedSubject& SubjectBank::get(std::size_t i) const {
    auto& slot = cache_.at(i);
    if (!slot) {
        LoadedSubject raw = load_subject(records_[i]);
        auto normalized = std::make_unique<LoadedSubject>();
        for (const auto& [m, v] : raw.volumes) normalized->volumes.emplace(m, z_normalize(v));
        normalized->label = std::move(raw.label);
        slot = std::move(normalized);
    }
    return *slot;
}

bool SubjectBank::all_labeled() const {
    for (const auto& r : records_)
        if (!r.label_path) return false;
    return true;
}

std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = i;
    Rng rng(seed);
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.next_below(i));
        std::swap(p[i - 1], p[j]);
    }
    return p;
}

}  // namespace cmseg
