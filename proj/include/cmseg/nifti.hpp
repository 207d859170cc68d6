// SPDX-License-Identifier: Apache-2.0
#ifndef CMSEG_NIFTI_HPP
#define CMSEG_NIFTI_HPP

#include <string>

#include "cmseg/volume.hpp"

namespace cmseg {

// Minimal NIfTI-1 single-file (.nii / .nii.gz) support, enough for the
// BraTS layout: 3-D grids, scalar dtypes, pixdim spacing. Gzip streams are
// written with a zeroed timestamp so identical content gives identical bytes.

// Reads a 3-D scalar image as a single-channel Volume.
Volume read_nifti_volume(const std::string& path);

// Reads a 3-D integer image as a LabelVolume; values are validated against
// the BraTS code set.
LabelVolume read_nifti_labels(const std::string& path);

// Writes float32 image data (values converted from the Scalar grid).
void write_nifti_volume(const std::string& path, const Volume& v);

// Writes uint8 label data.
void write_nifti_labels(const std::string& path, const LabelVolume& l);

}  // namespace cmseg

#endif
