// SPDX-License-Identifier: Apache-2.0
#ifndef CMSEG_SUBJECT_BANK_HPP
#define CMSEG_SUBJECT_BANK_HPP

#include <cstdint>
#include <memory>
#include <vector>

#include "cmseg/data_io.hpp"

namespace cmseg {

// Loads subjects on first use and keeps them resident, z-normalized per
// modality. Everything downstream sees normalized intensities.
class SubjectBank {
public:
    explicit SubjectBank(std::vector<SubjectRecord> records);

    std::size_t size() const { return records_.size(); }
    const SubjectRecord& record(std::size_t i) const { return records_.at(i); }
    const LoadedSubject& get(std::size_t i) const;
    bool all_labeled() const;

private:
    std::vector<SubjectRecord> records_;
    mutable std::vector<std::unique_ptr<LoadedSubject>> cache_;
};

// Deterministic Fisher-Yates permutation of 0..n-1.
std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed);

}  // namespace cmseg

#endif
