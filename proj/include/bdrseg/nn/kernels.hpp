#pragma once

// Low-level dense kernels shared by the convolution layers. Row-major,
// accumulate-into-C semantics. Loop orders keep the innermost loop contiguous
// so the compiler can vectorize without reassociating reductions, which keeps
// results bit-reproducible for a given binary.

#include <cstddef>
#include <span>
#include <vector>

namespace bdrseg::nn::kernels {

/// C[M x N] += A[M x K] * B[K x N]
template <typename Real>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const Real* a, const Real* b, Real* c)
{
    for (std::size_t i = 0; i < m; ++i) {
        Real* crow = c + i * n;
        const Real* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const Real av = arow[p];
            const Real* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j)
                crow[j] += av * brow[j];
        }
    }
}

/// C[M x N] += A^T * B, with A stored as [K x M] and B as [K x N].
template <typename Real>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const Real* a, const Real* b, Real* c)
{
    for (std::size_t p = 0; p < k; ++p) {
        const Real* arow = a + p * m;
        const Real* brow = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const Real av = arow[i];
            Real* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j)
                crow[j] += av * brow[j];
        }
    }
}

/// C[M x N] += A * B^T, with A stored as [M x K] and B as [N x K].
/// `scratch` is resized to hold B^T.
template <typename Real>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const Real* a, const Real* b, Real* c,
             std::vector<Real>& scratch)
{
    scratch.resize(k * n);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t p = 0; p < k; ++p)
            scratch[p * n + j] = b[j * k + p];
    gemm_nn(m, n, k, a, scratch.data(), c);
}

/// Sampling geometry of a (possibly strided / dilated) convolution over one
/// image: `channels x in_h x in_w` read by a `kernel_h x kernel_w` window.
struct PatchGeometry {
    int channels = 0;
    int in_h = 0;
    int in_w = 0;
    int kernel_h = 1;
    int kernel_w = 1;
    int stride = 1;
    int padding = 0;
    int dilation = 1;
    int out_h = 0;
    int out_w = 0;

    std::size_t rows() const noexcept
    {
        return static_cast<std::size_t>(channels) * static_cast<std::size_t>(kernel_h) *
               static_cast<std::size_t>(kernel_w);
    }
    std::size_t cols() const noexcept { return static_cast<std::size_t>(out_h) * static_cast<std::size_t>(out_w); }
};

/// Unfolds patches of `image` into `col` ([rows x cols]); out-of-frame taps are zero.
template <typename Real>
void im2col(const PatchGeometry& g, const Real* image, Real* col)
{
    const std::size_t ncols = g.cols();
    for (int c = 0; c < g.channels; ++c) {
        const Real* plane = image + static_cast<std::size_t>(c) * g.in_h * g.in_w;
        for (int ki = 0; ki < g.kernel_h; ++ki) {
            for (int kj = 0; kj < g.kernel_w; ++kj) {
                Real* row = col + ((static_cast<std::size_t>(c) * g.kernel_h + ki) * g.kernel_w + kj) * ncols;
                for (int oy = 0; oy < g.out_h; ++oy) {
                    const int iy = oy * g.stride - g.padding + ki * g.dilation;
                    Real* dst = row + static_cast<std::size_t>(oy) * g.out_w;
                    if (iy < 0 || iy >= g.in_h) {
                        for (int ox = 0; ox < g.out_w; ++ox)
                            dst[ox] = Real(0);
                        continue;
                    }
                    const Real* src = plane + static_cast<std::size_t>(iy) * g.in_w;
                    const int x0 = kj * g.dilation - g.padding;
                    for (int ox = 0; ox < g.out_w; ++ox) {
                        const int ix = ox * g.stride + x0;
                        dst[ox] = (ix >= 0 && ix < g.in_w) ? src[ix] : Real(0);
                    }
                }
            }
        }
    }
}

/// Adjoint of im2col: scatter-adds `col` back onto `image`.
template <typename Real>
void col2im(const PatchGeometry& g, const Real* col, Real* image)
{
    const std::size_t ncols = g.cols();
    for (int c = 0; c < g.channels; ++c) {
        Real* plane = image + static_cast<std::size_t>(c) * g.in_h * g.in_w;
        for (int ki = 0; ki < g.kernel_h; ++ki) {
            for (int kj = 0; kj < g.kernel_w; ++kj) {
                const Real* row = col + ((static_cast<std::size_t>(c) * g.kernel_h + ki) * g.kernel_w + kj) * ncols;
                for (int oy = 0; oy < g.out_h; ++oy) {
                    const int iy = oy * g.stride - g.padding + ki * g.dilation;
                    if (iy < 0 || iy >= g.in_h)
                        continue;
                    const Real* src = row + static_cast<std::size_t>(oy) * g.out_w;
                    Real* dst = plane + static_cast<std::size_t>(iy) * g.in_w;
                    const int x0 = kj * g.dilation - g.padding;
                    for (int ox = 0; ox < g.out_w; ++ox) {
                        const int ix = ox * g.stride + x0;
                        if (ix >= 0 && ix < g.in_w)
                            dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

} // namespace bdrseg::nn::kernels
