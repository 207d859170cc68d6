// SPDX-License-Identifier: Apache-2.0
#ifndef CMSEG_METRICS_HPP
#define CMSEG_METRICS_HPP

#include <array>
#include <string>
#include <vector>

#include "cmseg/volume.hpp"

namespace cmseg {

struct RegionMetrics {
    Region region = Region::WT;
    double dice = 0;
    double sensitivity = 0;
    double specificity = 0;
    double hd95 = 0;  // millimetres
};

struct SubjectMetrics {
    std::string subject_id;
    std::array<RegionMetrics, 3> regions;  // WT, TC, ET
};

struct MetricsReport {
    std::vector<SubjectMetrics> subjects;
    std::array<RegionMetrics, 3> region_means;  // per-region arithmetic means
    RegionMetrics overall;                      // cross-region average of the means
};

// 2|P n G| / (|P| + |G|); both masks empty gives 1 by convention.
double dice_score(const RegionMask& pred, const RegionMask& gt);

// TP/(TP+FN) and TN/(TN+FP); an empty denominator gives 1 by convention.
double sensitivity(const RegionMask& pred, const RegionMask& gt);
double specificity(const RegionMask& pred, const RegionMask& gt);

// Max of the two directed 95th-percentile surface distances in millimetres.
// A voxel is surface if set and 6-exposed (an unset neighbor or the grid
// boundary). Both masks empty gives 0; exactly one empty gives the diagonal
// of the volume's physical extent. Percentiles interpolate linearly between
// order statistics.
double hd95(const RegionMask& pred, const RegionMask& gt);

// Derives WT/TC/ET from both label grids and computes all four metrics.
std::array<RegionMetrics, 3> evaluate_subject(const LabelVolume& pred, const LabelVolume& gt);

MetricsReport aggregate(const std::vector<SubjectMetrics>& subjects);

// CSV with header subject,region,dice,sensitivity,specificity,hd95; one row
// per subject-region, then aggregate rows flagged with subject "MEAN"
// (regions WT/TC/ET plus the cross-region row "ALL").
std::string to_csv(const MetricsReport& report);

}  // namespace cmseg

#endif
