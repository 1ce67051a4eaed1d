#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <cstring>
#include <vector>

#include "bldg/common.hpp"
#include "bldg/tensor.hpp"

// Dense layer primitives on planar CHW buffers (one contiguous h*w plane
// per channel). 3x3 convolutions run as im2col + GEMM with the unfolded
// matrix stored column-major: each column is one shifted image plane, so
// filling and scattering work on contiguous row spans. Kernel tensors are
// {3, 3, c, oc} flattened row-major; column k of the unfolded matrix
// corresponds to kernel entry (ky, kx, c) with k = (ky*3 + kx)*c_total + c,
// matching that layout.

namespace bldg::nn {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatCM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;
template <typename T>
using MapRM = Eigen::Map<MatRM<T>>;
template <typename T>
using MapCM = Eigen::Map<MatCM<T>>;
template <typename T>
using ConstMapRM = Eigen::Map<const MatRM<T>>;
template <typename T>
using ConstMapCM = Eigen::Map<const MatCM<T>>;

// col holds (h*w) x (9*c) values, column-major.
template <typename T>
void im2col3x3(const T* src, int h, int w, int c, T* col) {
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    T* dst = col;
    for (int ky = -1; ky <= 1; ++ky) {
        for (int kx = -1; kx <= 1; ++kx) {
            const int x0 = std::max(0, -kx);          // valid output columns
            const int x1 = w - std::max(0, kx);
            for (int ch = 0; ch < c; ++ch) {
                const T* plane_src = src + static_cast<std::size_t>(ch) * plane;
                for (int y = 0; y < h; ++y) {
                    T* row = dst + static_cast<std::size_t>(y) * w;
                    const int sy = y + ky;
                    if (sy < 0 || sy >= h || x0 >= x1) {
                        std::memset(row, 0, sizeof(T) * w);
                        continue;
                    }
                    if (x0 > 0) std::memset(row, 0, sizeof(T) * x0);
                    if (x1 < w) std::memset(row + x1, 0, sizeof(T) * (w - x1));
                    std::memcpy(row + x0, plane_src + static_cast<std::size_t>(sy) * w + x0 + kx,
                                sizeof(T) * (x1 - x0));
                }
                dst += plane;
            }
        }
    }
}

// Scatter-add transpose of im2col3x3: dst (c x h x w planes) += columns.
template <typename T>
void col2im3x3_add(const T* col, int h, int w, int c, T* dst) {
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const T* src = col;
    for (int ky = -1; ky <= 1; ++ky) {
        for (int kx = -1; kx <= 1; ++kx) {
            const int x0 = std::max(0, -kx);
            const int x1 = w - std::max(0, kx);
            for (int ch = 0; ch < c; ++ch) {
                T* plane_dst = dst + static_cast<std::size_t>(ch) * plane;
                for (int y = 0; y < h; ++y) {
                    const int sy = y + ky;
                    if (sy < 0 || sy >= h || x0 >= x1) continue;
                    const T* row = src + static_cast<std::size_t>(y) * w;
                    T* out = plane_dst + static_cast<std::size_t>(sy) * w + kx;
                    for (int x = x0; x < x1; ++x) out[x] += row[x];
                }
                src += plane;
            }
        }
    }
}

// out = conv3x3(src, kernel) + bias; stride 1, zero padding 1. src and out
// are planar; col is scratch of (h*w) x (9*c).
template <typename T>
void conv3x3_forward(const T* src, int h, int w, int c, const T* kernel, const T* bias, int oc,
                     T* col, T* out) {
    im2col3x3(src, h, w, c, col);
    const int pixels = h * w;
    ConstMapCM<T> colm(col, pixels, 9 * c);
    ConstMapRM<T> km(kernel, 9 * c, oc);
    MapCM<T> outm(out, pixels, oc);  // column-major == planar output
    outm.noalias() = colm * km;
    if (bias) {
        Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bm(bias, oc);
        outm.rowwise() += bm.transpose();
    }
}

// Given d_out (planar, h x w x oc), accumulates kernel/bias grads and
// optionally writes d_src (zero-initialized by this call).
template <typename T>
void conv3x3_backward(const T* src, int h, int w, int c, const T* kernel, int oc, const T* d_out,
                      T* col, T* dcol, T* d_kernel, T* d_bias, T* d_src) {
    const int pixels = h * w;
    im2col3x3(src, h, w, c, col);
    ConstMapCM<T> colm(col, pixels, 9 * c);
    ConstMapCM<T> dom(d_out, pixels, oc);
    MapRM<T> dkm(d_kernel, 9 * c, oc);
    dkm.noalias() += colm.transpose() * dom;
    if (d_bias) {
        Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> dbm(d_bias, oc);
        dbm.noalias() += dom.colwise().sum().transpose();
    }
    if (d_src) {
        ConstMapRM<T> km(kernel, 9 * c, oc);
        MapCM<T> dcolm(dcol, pixels, 9 * c);
        dcolm.noalias() = dom * km.transpose();
        std::memset(d_src, 0, sizeof(T) * static_cast<std::size_t>(pixels) * c);
        col2im3x3_add(dcol, h, w, c, d_src);
    }
}

template <typename T>
void relu_inplace(T* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
        if (x[i] < T(0)) x[i] = T(0);
}

// d_pre = d_post where activation > 0, else 0 (in place on d).
template <typename T>
void relu_backward_inplace(const T* activation, T* d, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
        if (activation[i] <= T(0)) d[i] = T(0);
}

// 2x2 max pool, stride 2, per plane. idx records the winning corner (0..3).
template <typename T>
void maxpool2x2_forward(const T* src, int h, int w, int c, T* out, std::uint8_t* idx) {
    const int oh = h / 2, ow = w / 2;
    const std::size_t in_plane = static_cast<std::size_t>(h) * w;
    const std::size_t out_plane = static_cast<std::size_t>(oh) * ow;
    for (int ch = 0; ch < c; ++ch) {
        const T* p = src + ch * in_plane;
        T* o = out + ch * out_plane;
        std::uint8_t* oi = idx + ch * out_plane;
        for (int y = 0; y < oh; ++y) {
            const T* r0 = p + (2 * static_cast<std::size_t>(y)) * w;
            const T* r1 = r0 + w;
            for (int x = 0; x < ow; ++x) {
                const T v00 = r0[2 * x], v01 = r0[2 * x + 1];
                const T v10 = r1[2 * x], v11 = r1[2 * x + 1];
                T best = v00;
                std::uint8_t which = 0;
                if (v01 > best) { best = v01; which = 1; }
                if (v10 > best) { best = v10; which = 2; }
                if (v11 > best) { best = v11; which = 3; }
                o[static_cast<std::size_t>(y) * ow + x] = best;
                oi[static_cast<std::size_t>(y) * ow + x] = which;
            }
        }
    }
}

// Routes d_out back to the argmax corners; d_src is zero-filled first.
template <typename T>
void maxpool2x2_backward(const T* d_out, const std::uint8_t* idx, int h, int w, int c, T* d_src) {
    const int oh = h / 2, ow = w / 2;
    const std::size_t in_plane = static_cast<std::size_t>(h) * w;
    const std::size_t out_plane = static_cast<std::size_t>(oh) * ow;
    std::memset(d_src, 0, sizeof(T) * in_plane * c);
    for (int ch = 0; ch < c; ++ch) {
        const T* d = d_out + ch * out_plane;
        const std::uint8_t* oi = idx + ch * out_plane;
        T* p = d_src + ch * in_plane;
        for (int y = 0; y < oh; ++y) {
            T* r0 = p + (2 * static_cast<std::size_t>(y)) * w;
            T* r1 = r0 + w;
            for (int x = 0; x < ow; ++x) {
                const std::size_t at = static_cast<std::size_t>(y) * ow + x;
                switch (oi[at]) {
                    case 0: r0[2 * x] += d[at]; break;
                    case 1: r0[2 * x + 1] += d[at]; break;
                    case 2: r1[2 * x] += d[at]; break;
                    default: r1[2 * x + 1] += d[at]; break;
                }
            }
        }
    }
}

// Global average pool over each plane: out[c] = mean of plane c.
template <typename T>
void gap_forward(const T* src, int h, int w, int c, T* out) {
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const T inv = T(1) / static_cast<T>(plane);
    for (int ch = 0; ch < c; ++ch) {
        T acc = T(0);
        const T* p = src + ch * plane;
        for (std::size_t i = 0; i < plane; ++i) acc += p[i];
        out[ch] = acc * inv;
    }
}

template <typename T>
void gap_backward(const T* d_out, int h, int w, int c, T* d_src) {
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const T inv = T(1) / static_cast<T>(plane);
    for (int ch = 0; ch < c; ++ch) {
        const T v = d_out[ch] * inv;
        T* p = d_src + ch * plane;
        for (std::size_t i = 0; i < plane; ++i) p[i] = v;
    }
}

// Interleaved HWC (the crop storage layout) to planar CHW.
template <typename SrcT, typename T>
void hwc_to_chw(const SrcT* src, int h, int w, int c, T* dst) {
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (std::size_t i = 0; i < plane; ++i)
        for (int ch = 0; ch < c; ++ch)
            dst[ch * plane + i] = static_cast<T>(src[i * c + ch]);
}

// Row-wise softmax with the usual max-shift.
template <typename T>
void softmax_rows(T* x, int rows, int cols) {
    for (int r = 0; r < rows; ++r) {
        T* row = x + static_cast<std::size_t>(r) * cols;
        T mx = row[0];
        for (int k = 1; k < cols; ++k) mx = std::max(mx, row[k]);
        T sum = T(0);
        for (int k = 0; k < cols; ++k) {
            row[k] = std::exp(row[k] - mx);
            sum += row[k];
        }
        const T inv = T(1) / sum;
        for (int k = 0; k < cols; ++k) row[k] *= inv;
    }
}

}  // namespace bldg::nn
