// SPDX-License-Identifier: Apache-2.0
#include "kernels.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <vector>

namespace cmseg::kern {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRow = Eigen::Map<RowMat, Eigen::Unaligned, Eigen::OuterStride<>>;
using MapRowC = Eigen::Map<const RowMat, Eigen::Unaligned, Eigen::OuterStride<>>;

// Working-set cap for the gather/scatter buffer (doubles).
constexpr Index kColBudget = Index(6) << 20;

// Tap mapping between a `dest` grid (enumerated by buffer columns) and a
// `src` grid (read or written through kernel taps):
//   src_pos = dest_pos * stride - pad + kernel_offset.
// Used four ways: conv forward/weight-grad gathers from the input, conv
// data-grad scatters into it; transposed conv swaps the roles.
struct TapGeom {
    Index src_d, src_h, src_w;
    Index dest_d, dest_h, dest_w;
    std::array<Index, 3> k;
    Index stride, pad;
};

Index slab_rows(const TapGeom& g, Index channels) { return channels * g.k[0] * g.k[1] * g.k[2]; }

Index pick_slab(const TapGeom& g, Index rows) {
    const Index per_z = g.dest_h * g.dest_w;
    Index slab = kColBudget / std::max<Index>(1, rows * per_z);
    return std::clamp<Index>(slab, 1, g.dest_d);
}

// col[r, j] = src(c, taps of dest position j) for dest z in [z0, z1).
void gather_taps(const Volume& src, const TapGeom& g, Index z0, Index z1, double* col) {
    const Index ncols = (z1 - z0) * g.dest_h * g.dest_w;
    const Index rows = slab_rows(g, src.c);
#pragma omp parallel for schedule(static)
    for (Index r = 0; r < rows; ++r) {
        const Index kx = r % g.k[2];
        const Index ky = (r / g.k[2]) % g.k[1];
        const Index kz = (r / (g.k[2] * g.k[1])) % g.k[0];
        const Index c = r / (g.k[2] * g.k[1] * g.k[0]);
        const double* sc = src.data.data() + c * g.src_d * g.src_h * g.src_w;
        double* out = col + r * ncols;
        for (Index dz = z0; dz < z1; ++dz) {
            const Index sz = dz * g.stride - g.pad + kz;
            double* row = out + (dz - z0) * g.dest_h * g.dest_w;
            if (sz < 0 || sz >= g.src_d) {
                std::fill(row, row + g.dest_h * g.dest_w, 0.0);
                continue;
            }
            for (Index dy = 0; dy < g.dest_h; ++dy) {
                const Index sy = dy * g.stride - g.pad + ky;
                double* cell = row + dy * g.dest_w;
                if (sy < 0 || sy >= g.src_h) {
                    std::fill(cell, cell + g.dest_w, 0.0);
                    continue;
                }
                const double* line = sc + (sz * g.src_h + sy) * g.src_w;
                for (Index dx = 0; dx < g.dest_w; ++dx) {
                    const Index sx = dx * g.stride - g.pad + kx;
                    cell[dx] = (sx >= 0 && sx < g.src_w) ? line[sx] : 0.0;
                }
            }
        }
    }
}

// src(c, taps of dest position j) += col[r, j]; inverse of gather_taps.
void scatter_taps(const double* col, const TapGeom& g, Index z0, Index z1, Volume& src) {
    const Index ncols = (z1 - z0) * g.dest_h * g.dest_w;
    const Index ktaps = g.k[0] * g.k[1] * g.k[2];
#pragma omp parallel for schedule(static)
    for (Index c = 0; c < src.c; ++c) {
        double* sc = src.data.data() + c * g.src_d * g.src_h * g.src_w;
        for (Index kt = 0; kt < ktaps; ++kt) {
            const Index kx = kt % g.k[2];
            const Index ky = (kt / g.k[2]) % g.k[1];
            const Index kz = kt / (g.k[2] * g.k[1]);
            const double* in = col + (c * ktaps + kt) * ncols;
            for (Index dz = z0; dz < z1; ++dz) {
                const Index sz = dz * g.stride - g.pad + kz;
                if (sz < 0 || sz >= g.src_d) continue;
                const double* row = in + (dz - z0) * g.dest_h * g.dest_w;
                for (Index dy = 0; dy < g.dest_h; ++dy) {
                    const Index sy = dy * g.stride - g.pad + ky;
                    if (sy < 0 || sy >= g.src_h) continue;
                    double* line = sc + (sz * g.src_h + sy) * g.src_w;
                    const double* cell = row + dy * g.dest_w;
                    for (Index dx = 0; dx < g.dest_w; ++dx) {
                        const Index sx = dx * g.stride - g.pad + kx;
                        if (sx >= 0 && sx < g.src_w) line[sx] += cell[dx];
                    }
                }
            }
        }
    }
}

}  // namespace

void conv3d_forward(const Volume& x, const Tensor& w, const Tensor& b, Volume& y,
                    const std::array<Index, 3>& k, Index stride, Index pad) {
    const Index cout = w.dims[0];
    const TapGeom g{x.d, x.h, x.w, y.d, y.h, y.w, k, stride, pad};
    const Index rows = slab_rows(g, x.c);
    const Index slab = pick_slab(g, rows);
    std::vector<double> col(static_cast<std::size_t>(rows * slab * g.dest_h * g.dest_w));
    Eigen::Map<const RowMat> wm(w.v.data(), cout, rows);

    for (Index z0 = 0; z0 < g.dest_d; z0 += slab) {
        const Index z1 = std::min(g.dest_d, z0 + slab);
        const Index ncols = (z1 - z0) * g.dest_h * g.dest_w;
        gather_taps(x, g, z0, z1, col.data());
        Eigen::Map<const RowMat> cm(col.data(), rows, ncols);
        MapRow ym(y.data.data() + z0 * g.dest_h * g.dest_w, cout, ncols, Eigen::OuterStride<>(y.voxels()));
        ym.noalias() = wm * cm;
        for (Index c = 0; c < cout; ++c) ym.row(c).array() += b.v[static_cast<std::size_t>(c)];
    }
}

void conv3d_backward(const Volume& x, const Tensor& w, const Volume& dy,
                     const std::array<Index, 3>& k, Index stride, Index pad, Volume& dx,
                     Tensor& dw, Tensor& db) {
    const Index cout = w.dims[0];
    const TapGeom g{x.d, x.h, x.w, dy.d, dy.h, dy.w, k, stride, pad};
    const Index rows = slab_rows(g, x.c);
    const Index slab = pick_slab(g, rows);
    std::vector<double> col(static_cast<std::size_t>(rows * slab * g.dest_h * g.dest_w));
    std::vector<double> dcol(col.size());
    Eigen::Map<const RowMat> wm(w.v.data(), cout, rows);
    Eigen::Map<RowMat> dwm(dw.v.data(), cout, rows);

    std::fill(dx.data.begin(), dx.data.end(), 0.0);
    for (Index z0 = 0; z0 < g.dest_d; z0 += slab) {
        const Index z1 = std::min(g.dest_d, z0 + slab);
        const Index ncols = (z1 - z0) * g.dest_h * g.dest_w;
        MapRowC dym(dy.data.data() + z0 * g.dest_h * g.dest_w, cout, ncols, Eigen::OuterStride<>(dy.voxels()));

        gather_taps(x, g, z0, z1, col.data());
        Eigen::Map<const RowMat> cm(col.data(), rows, ncols);
        dwm.noalias() += dym * cm.transpose();
        for (Index c = 0; c < cout; ++c) db.v[static_cast<std::size_t>(c)] += dym.row(c).sum();

        Eigen::Map<RowMat> dcm(dcol.data(), rows, ncols);
        dcm.noalias() = wm.transpose() * dym;
        scatter_taps(dcol.data(), g, z0, z1, dx);
    }
}

void tconv3d_forward(const Volume& x, const Tensor& w, const Tensor& b, Volume& y,
                     const std::array<Index, 3>& k, Index stride, Index pad) {
    const Index cin = w.dims[0], cout = w.dims[1];
    // Columns enumerate input positions; taps land on the (larger) output.
    const TapGeom g{y.d, y.h, y.w, x.d, x.h, x.w, k, stride, pad};
    const Index rows = slab_rows(g, cout);
    const Index slab = pick_slab(g, rows);
    std::vector<double> col(static_cast<std::size_t>(rows * slab * g.dest_h * g.dest_w));
    Eigen::Map<const RowMat> wm(w.v.data(), cin, rows);

    for (Index c = 0; c < cout; ++c) {
        double* yc = y.data.data() + c * y.voxels();
        std::fill(yc, yc + y.voxels(), b.v[static_cast<std::size_t>(c)]);
    }
    for (Index z0 = 0; z0 < g.dest_d; z0 += slab) {
        const Index z1 = std::min(g.dest_d, z0 + slab);
        const Index ncols = (z1 - z0) * g.dest_h * g.dest_w;
        MapRowC xm(x.data.data() + z0 * g.dest_h * g.dest_w, cin, ncols, Eigen::OuterStride<>(x.voxels()));
        Eigen::Map<RowMat> cm(col.data(), rows, ncols);
        cm.noalias() = wm.transpose() * xm;
        scatter_taps(col.data(), g, z0, z1, y);
    }
}

void tconv3d_backward(const Volume& x, const Tensor& w, const Volume& dy,
                      const std::array<Index, 3>& k, Index stride, Index pad, Volume& dx,
                      Tensor& dw, Tensor& db) {
    const Index cin = w.dims[0], cout = w.dims[1];
    const TapGeom g{dy.d, dy.h, dy.w, x.d, x.h, x.w, k, stride, pad};
    const Index rows = slab_rows(g, cout);
    const Index slab = pick_slab(g, rows);
    std::vector<double> col(static_cast<std::size_t>(rows * slab * g.dest_h * g.dest_w));
    Eigen::Map<const RowMat> wm(w.v.data(), cin, rows);
    Eigen::Map<RowMat> dwm(dw.v.data(), cin, rows);

    for (Index c = 0; c < cout; ++c) {
        const double* dyc = dy.data.data() + c * dy.voxels();
        double s = 0;
        for (Index i = 0; i < dy.voxels(); ++i) s += dyc[i];
        db.v[static_cast<std::size_t>(c)] += s;
    }
    for (Index z0 = 0; z0 < g.dest_d; z0 += slab) {
        const Index z1 = std::min(g.dest_d, z0 + slab);
        const Index ncols = (z1 - z0) * g.dest_h * g.dest_w;
        gather_taps(dy, g, z0, z1, col.data());
        Eigen::Map<const RowMat> cm(col.data(), rows, ncols);

        MapRowC xm(x.data.data() + z0 * g.dest_h * g.dest_w, cin, ncols, Eigen::OuterStride<>(x.voxels()));
        dwm.noalias() += xm * cm.transpose();

        MapRow dxm(dx.data.data() + z0 * g.dest_h * g.dest_w, cin, ncols, Eigen::OuterStride<>(dx.voxels()));
        dxm.noalias() = wm * cm;
    }
}

void instance_norm_forward(const Volume& x, Volume& y, double eps) {
    const Index n = x.voxels();
    for (Index c = 0; c < x.c; ++c) {
        const double* xc = x.data.data() + c * n;
        double* yc = y.data.data() + c * n;
        double sum = 0, sq = 0;
        for (Index i = 0; i < n; ++i) {
            sum += xc[i];
            sq += xc[i] * xc[i];
        }
        const double mean = sum / double(n);
        const double var = std::max(0.0, sq / double(n) - mean * mean);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (Index i = 0; i < n; ++i) yc[i] = (xc[i] - mean) * inv;
    }
}

void instance_norm_backward(const Volume& x, const Volume& dy, Volume& dx, double eps) {
    const Index n = x.voxels();
    for (Index c = 0; c < x.c; ++c) {
        const double* xc = x.data.data() + c * n;
        const double* gc = dy.data.data() + c * n;
        double* oc = dx.data.data() + c * n;
        double sum = 0, sq = 0;
        for (Index i = 0; i < n; ++i) {
            sum += xc[i];
            sq += xc[i] * xc[i];
        }
        const double mean = sum / double(n);
        const double var = std::max(0.0, sq / double(n) - mean * mean);
        const double inv = 1.0 / std::sqrt(var + eps);
        double g_sum = 0, gy_sum = 0;
        for (Index i = 0; i < n; ++i) {
            const double yh = (xc[i] - mean) * inv;
            g_sum += gc[i];
            gy_sum += gc[i] * yh;
        }
        const double g_mean = g_sum / double(n);
        const double gy_mean = gy_sum / double(n);
        for (Index i = 0; i < n; ++i) {
            const double yh = (xc[i] - mean) * inv;
            oc[i] = inv * (gc[i] - g_mean - yh * gy_mean);
        }
    }
}

void leaky_relu_forward(const Volume& x, Volume& y, double slope) {
    for (std::size_t i = 0; i < x.data.size(); ++i)
        y.data[i] = x.data[i] > 0 ? x.data[i] : slope * x.data[i];
}

void leaky_relu_backward(const Volume& x, const Volume& dy, Volume& dx, double slope) {
    for (std::size_t i = 0; i < x.data.size(); ++i)
        dx.data[i] = x.data[i] > 0 ? dy.data[i] : slope * dy.data[i];
}

void softmax_channels_forward(const Volume& x, Volume& y) {
    const Index n = x.voxels();
    const Index C = x.c;
    for (Index i = 0; i < n; ++i) {
        double mx = x.data[static_cast<std::size_t>(i)];
        for (Index c = 1; c < C; ++c) mx = std::max(mx, x.data[static_cast<std::size_t>(c * n + i)]);
        double sum = 0;
        for (Index c = 0; c < C; ++c) {
            const double e = std::exp(x.data[static_cast<std::size_t>(c * n + i)] - mx);
            y.data[static_cast<std::size_t>(c * n + i)] = e;
            sum += e;
        }
        const double inv = 1.0 / sum;
        for (Index c = 0; c < C; ++c) y.data[static_cast<std::size_t>(c * n + i)] *= inv;
    }
}

void softmax_channels_backward(const Volume& y, const Volume& dy, Volume& dx) {
    const Index n = y.voxels();
    const Index C = y.c;
    for (Index i = 0; i < n; ++i) {
        double dot = 0;
        for (Index c = 0; c < C; ++c)
            dot += y.data[static_cast<std::size_t>(c * n + i)] * dy.data[static_cast<std::size_t>(c * n + i)];
        for (Index c = 0; c < C; ++c) {
            const std::size_t j = static_cast<std::size_t>(c * n + i);
            dx.data[j] = y.data[j] * (dy.data[j] - dot);
        }
    }
}

void mask_guide_forward(const Volume& x, const Volume& ma, const Volume& mb, Volume& y) {
    const Index n = x.voxels();
    for (Index i = 0; i < n; ++i) {
        const double m = 1.0 - std::min(ma.data[static_cast<std::size_t>(i)], mb.data[static_cast<std::size_t>(i)]);
        for (Index c = 0; c < x.c; ++c) {
            const std::size_t j = static_cast<std::size_t>(c * n + i);
            y.data[j] = x.data[j] * (1.0 + m);
        }
    }
}

void mask_guide_backward(const Volume& x, const Volume& ma, const Volume& mb, const Volume& dy,
                         Volume& dx, Volume& dma, Volume& dmb) {
    const Index n = x.voxels();
    for (Index i = 0; i < n; ++i) {
        const std::size_t bi = static_cast<std::size_t>(i);
        const double a0 = ma.data[bi], b0 = mb.data[bi];
        const double m = 1.0 - std::min(a0, b0);
        double dm = 0;
        for (Index c = 0; c < x.c; ++c) {
            const std::size_t j = static_cast<std::size_t>(c * n + i);
            dx.data[j] = dy.data[j] * (1.0 + m);
            dm += dy.data[j] * x.data[j];
        }
        // d m / d(min channel) = -1; ties go to branch A.
        if (a0 <= b0)
            dma.data[bi] -= dm;
        else
            dmb.data[bi] -= dm;
    }
}

}  // namespace cmseg::kern
