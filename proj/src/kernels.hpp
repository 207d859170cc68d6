// SPDX-License-Identifier: Apache-2.0
//
// Internal low-level kernels shared by the network layers. Convolutions go
// through a gather/scatter (im2col-style) buffer and a GEMM; the buffer is
// chunked along the depth axis to bound working memory.
#ifndef CMSEG_SRC_KERNELS_HPP
#define CMSEG_SRC_KERNELS_HPP

#include <array>

#include "cmseg/nets.hpp"
#include "cmseg/volume.hpp"

namespace cmseg::kern {

inline Index conv_out_size(Index n, Index k, Index stride, Index pad) {
    return (n + 2 * pad - k) / stride + 1;
}

inline Index tconv_out_size(Index n, Index k, Index stride, Index pad) {
    return (n - 1) * stride + k - 2 * pad;
}

// x:[Cin,...] w:[Cout,Cin,kd,kh,kw] b:[Cout] -> y:[Cout,out...]
void conv3d_forward(const Volume& x, const Tensor& w, const Tensor& b, Volume& y,
                    const std::array<Index, 3>& k, Index stride, Index pad);

// dx (same shape as x) is assigned; dw/db accumulate.
void conv3d_backward(const Volume& x, const Tensor& w, const Volume& dy,
                     const std::array<Index, 3>& k, Index stride, Index pad, Volume& dx,
                     Tensor& dw, Tensor& db);

// x:[Cin,...] w:[Cin,Cout,kd,kh,kw] b:[Cout] -> y:[Cout,out...]
void tconv3d_forward(const Volume& x, const Tensor& w, const Tensor& b, Volume& y,
                     const std::array<Index, 3>& k, Index stride, Index pad);

void tconv3d_backward(const Volume& x, const Tensor& w, const Volume& dy,
                      const std::array<Index, 3>& k, Index stride, Index pad, Volume& dx,
                      Tensor& dw, Tensor& db);

// Per-channel normalization over the spatial voxels of the single instance.
void instance_norm_forward(const Volume& x, Volume& y, double eps);
void instance_norm_backward(const Volume& x, const Volume& dy, Volume& dx, double eps);

void leaky_relu_forward(const Volume& x, Volume& y, double slope);
void leaky_relu_backward(const Volume& x, const Volume& dy, Volume& dx, double slope);

// Softmax across channels at each voxel; backward takes the forward output.
void softmax_channels_forward(const Volume& x, Volume& y);
void softmax_channels_backward(const Volume& y, const Volume& dy, Volume& dx);

// m = max(1 - ma[0], 1 - mb[0]); y = x .* (1 + m). The gradient w.r.t. the
// attention map routes to whichever mask attains the max (branch A on ties).
void mask_guide_forward(const Volume& x, const Volume& ma, const Volume& mb, Volume& y);
void mask_guide_backward(const Volume& x, const Volume& ma, const Volume& mb, const Volume& dy,
                         Volume& dx, Volume& dma, Volume& dmb);

}  // namespace cmseg::kern

#endif
