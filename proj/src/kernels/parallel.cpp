#include <algorithm>
#include <cstring>
#include <vector>

#include "lfcx/kernels.hpp"

namespace lfcx::kernels::parallel {

namespace {

constexpr std::size_t kRowBlock = 4;
constexpr std::size_t kDepthBlock = 64;
constexpr std::size_t kColBlock = 256;

void transpose(const double* src, std::size_t rows, std::size_t cols, double* dst) {
#pragma omp parallel for schedule(static)
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
}

// C[m x n] (+)= A[m x k] * B[k x n]
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  const long blocks = static_cast<long>((m + kRowBlock - 1) / kRowBlock);
#pragma omp parallel for schedule(static)
  for (long blk = 0; blk < blocks; ++blk) {
    const std::size_t i0 = static_cast<std::size_t>(blk) * kRowBlock;
    const std::size_t rows = std::min(kRowBlock, m - i0);
    if (!accumulate) std::memset(c + i0 * n, 0, rows * n * sizeof(double));
    for (std::size_t p0 = 0; p0 < k; p0 += kDepthBlock) {
      const std::size_t p1 = std::min(k, p0 + kDepthBlock);
      for (std::size_t j0 = 0; j0 < n; j0 += kColBlock) {
        const std::size_t j1 = std::min(n, j0 + kColBlock);
        if (rows == kRowBlock) {
          double* c0 = c + (i0 + 0) * n;
          double* c1 = c + (i0 + 1) * n;
          double* c2 = c + (i0 + 2) * n;
          double* c3 = c + (i0 + 3) * n;
          for (std::size_t p = p0; p < p1; ++p) {
            const double a0 = a[(i0 + 0) * k + p];
            const double a1 = a[(i0 + 1) * k + p];
            const double a2 = a[(i0 + 2) * k + p];
            const double a3 = a[(i0 + 3) * k + p];
            const double* brow = b + p * n;
#pragma omp simd
            for (std::size_t j = j0; j < j1; ++j) {
              const double bv = brow[j];
              c0[j] += a0 * bv;
              c1[j] += a1 * bv;
              c2[j] += a2 * bv;
              c3[j] += a3 * bv;
            }
          }
        } else {
          for (std::size_t r = 0; r < rows; ++r) {
            double* crow = c + (i0 + r) * n;
            for (std::size_t p = p0; p < p1; ++p) {
              const double av = a[(i0 + r) * k + p];
              const double* brow = b + p * n;
#pragma omp simd
              for (std::size_t j = j0; j < j1; ++j) crow[j] += av * brow[j];
            }
          }
        }
      }
    }
  }
}

void im2col(const ConvGeom& g, const double* x, std::size_t channels, double* col) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  const long rows = static_cast<long>(channels * g.k * g.k);
#pragma omp parallel for schedule(static)
  for (long r = 0; r < rows; ++r) {
    const std::size_t c = static_cast<std::size_t>(r) / (g.k * g.k);
    const std::size_t ky = (static_cast<std::size_t>(r) / g.k) % g.k;
    const std::size_t kx = static_cast<std::size_t>(r) % g.k;
    double* dst = col + static_cast<std::size_t>(r) * oh * ow;
    const double* src = x + c * g.in_h * g.in_w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
      double* drow = dst + oy * ow;
      if (iy < 0 || iy >= static_cast<long>(g.in_h)) {
        std::fill(drow, drow + ow, 0.0);
        continue;
      }
      const double* srow = src + iy * g.in_w;
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
        drow[ox] = (ix < 0 || ix >= static_cast<long>(g.in_w)) ? 0.0 : srow[ix];
      }
    }
  }
}

// Scatter-add; rows sharing a channel touch the same dx plane so parallelism
// is over channels.
void col2im(const ConvGeom& g, const double* col, std::size_t channels, double* dx) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
#pragma omp parallel for schedule(static)
  for (long cl = 0; cl < static_cast<long>(channels); ++cl) {
    const std::size_t c = static_cast<std::size_t>(cl);
    double* dst = dx + c * g.in_h * g.in_w;
    for (std::size_t ky = 0; ky < g.k; ++ky)
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const double* src = col + ((c * g.k + ky) * g.k + kx) * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.in_h)) continue;
          double* drow = dst + iy * g.in_w;
          const double* srow = src + oy * ow;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix >= 0 && ix < static_cast<long>(g.in_w)) drow[ix] += srow[ox];
          }
        }
      }
  }
}

bool is_depthwise(const ConvGeom& g) {
  return g.groups > 1 && g.groups == g.in_c && g.groups == g.out_c;
}

bool is_pointwise(const ConvGeom& g) { return g.k == 1 && g.stride == 1 && g.pad == 0; }

template <typename Fn>
void for_each_tap(const ConvGeom& g, Fn&& fn) {
  // fn(ky, kx, oy, ox_begin, ox_end, iy, ix_of_ox_begin)
  const std::size_t oh = g.out_h(), ow = g.out_w();
  for (std::size_t ky = 0; ky < g.k; ++ky)
    for (std::size_t kx = 0; kx < g.k; ++kx)
      for (std::size_t oy = 0; oy < oh; ++oy) {
        const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
        if (iy < 0 || iy >= static_cast<long>(g.in_h)) continue;
        // valid ox: 0 <= ox*stride + kx - pad < in_w
        long lo = 0;
        const long off = static_cast<long>(kx) - static_cast<long>(g.pad);
        const long st = static_cast<long>(g.stride);
        if (off < 0) lo = (-off + st - 1) / st;
        long hi = (static_cast<long>(g.in_w) - 1 - off) / st + 1;
        hi = std::min<long>(hi, static_cast<long>(ow));
        if (static_cast<long>(g.in_w) - 1 - off < 0) hi = 0;
        if (lo >= hi) continue;
        fn(ky, kx, oy, static_cast<std::size_t>(lo), static_cast<std::size_t>(hi),
           static_cast<std::size_t>(iy), lo * st + off);
      }
}

void depthwise_forward(const ConvGeom& g, const double* x, const double* w, const double* bias,
                       double* y) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  const long planes = static_cast<long>(g.batch * g.in_c);
#pragma omp parallel for schedule(static)
  for (long pl = 0; pl < planes; ++pl) {
    const std::size_t c = static_cast<std::size_t>(pl) % g.in_c;
    const double* xp = x + static_cast<std::size_t>(pl) * g.in_h * g.in_w;
    double* yp = y + static_cast<std::size_t>(pl) * oh * ow;
    std::fill(yp, yp + oh * ow, bias ? bias[c] : 0.0);
    const double* wc = w + c * g.k * g.k;
    for_each_tap(g, [&](std::size_t ky, std::size_t kx, std::size_t oy, std::size_t ox0,
                        std::size_t ox1, std::size_t iy, long ix0) {
      const double wv = wc[ky * g.k + kx];
      const double* srow = xp + iy * g.in_w + ix0;
      double* drow = yp + oy * ow;
      for (std::size_t ox = ox0; ox < ox1; ++ox) drow[ox] += wv * srow[(ox - ox0) * g.stride];
    });
  }
}

void depthwise_backward_input(const ConvGeom& g, const double* dy, const double* w, double* dx) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  const long planes = static_cast<long>(g.batch * g.in_c);
#pragma omp parallel for schedule(static)
  for (long pl = 0; pl < planes; ++pl) {
    const std::size_t c = static_cast<std::size_t>(pl) % g.in_c;
    const double* dyp = dy + static_cast<std::size_t>(pl) * oh * ow;
    double* dxp = dx + static_cast<std::size_t>(pl) * g.in_h * g.in_w;
    const double* wc = w + c * g.k * g.k;
    for_each_tap(g, [&](std::size_t ky, std::size_t kx, std::size_t oy, std::size_t ox0,
                        std::size_t ox1, std::size_t iy, long ix0) {
      const double wv = wc[ky * g.k + kx];
      double* drow = dxp + iy * g.in_w + ix0;
      const double* srow = dyp + oy * ow;
      for (std::size_t ox = ox0; ox < ox1; ++ox) drow[(ox - ox0) * g.stride] += wv * srow[ox];
    });
  }
}

void depthwise_backward_params(const ConvGeom& g, const double* x, const double* dy, double* dw,
                               double* dbias) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
#pragma omp parallel for schedule(static)
  for (long cl = 0; cl < static_cast<long>(g.in_c); ++cl) {
    const std::size_t c = static_cast<std::size_t>(cl);
    for (std::size_t n = 0; n < g.batch; ++n) {
      const std::size_t pl = n * g.in_c + c;
      const double* dyp = dy + pl * oh * ow;
      if (dbias) {
        double s = 0.0;
        for (std::size_t i = 0; i < oh * ow; ++i) s += dyp[i];
        dbias[c] += s;
      }
      if (!dw) continue;
      const double* xp = x + pl * g.in_h * g.in_w;
      double* wc = dw + c * g.k * g.k;
      for_each_tap(g, [&](std::size_t ky, std::size_t kx, std::size_t oy, std::size_t ox0,
                          std::size_t ox1, std::size_t iy, long ix0) {
        const double* srow = xp + iy * g.in_w + ix0;
        const double* drow = dyp + oy * ow;
        double s = 0.0;
        for (std::size_t ox = ox0; ox < ox1; ++ox) s += drow[ox] * srow[(ox - ox0) * g.stride];
        wc[ky * g.k + kx] += s;
      });
    }
  }
}

}  // namespace

void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double* c, bool accumulate) {
  std::vector<double> at, bt;
  if (ta == Trans::kYes) {
    at.resize(m * k);
    transpose(a, k, m, at.data());
    a = at.data();
  }
  if (tb == Trans::kYes) {
    bt.resize(k * n);
    transpose(b, n, k, bt.data());
    b = bt.data();
  }
  gemm_nn(m, n, k, a, b, c, accumulate);
}

void conv2d_forward(const ConvGeom& g, const double* x, const double* w, const double* bias,
                    double* y) {
  if (is_depthwise(g)) return depthwise_forward(g, x, w, bias, y);
  const std::size_t oh = g.out_h(), ow = g.out_w(), spatial = oh * ow;
  const std::size_t cig = g.in_per_group(), cog = g.out_per_group();
  const std::size_t kdim = cig * g.k * g.k;
  std::vector<double> col;
  if (!is_pointwise(g)) col.resize(kdim * spatial);
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t grp = 0; grp < g.groups; ++grp) {
      const double* xg = x + (n * g.in_c + grp * cig) * g.in_h * g.in_w;
      const double* src = xg;
      if (!is_pointwise(g)) {
        im2col(g, xg, cig, col.data());
        src = col.data();
      }
      double* yg = y + (n * g.out_c + grp * cog) * spatial;
      gemm_nn(cog, spatial, kdim, w + grp * cog * kdim, src, yg, false);
      if (bias)
        for (std::size_t o = 0; o < cog; ++o) {
          const double bv = bias[grp * cog + o];
          double* row = yg + o * spatial;
          for (std::size_t s = 0; s < spatial; ++s) row[s] += bv;
        }
    }
}

void conv2d_backward_input(const ConvGeom& g, const double* dy, const double* w, double* dx) {
  if (is_depthwise(g)) return depthwise_backward_input(g, dy, w, dx);
  const std::size_t spatial = g.out_h() * g.out_w();
  const std::size_t cig = g.in_per_group(), cog = g.out_per_group();
  const std::size_t kdim = cig * g.k * g.k;
  std::vector<double> wt(kdim * cog), col(kdim * spatial);
  for (std::size_t grp = 0; grp < g.groups; ++grp) {
    transpose(w + grp * cog * kdim, cog, kdim, wt.data());
    for (std::size_t n = 0; n < g.batch; ++n) {
      const double* dyg = dy + (n * g.out_c + grp * cog) * spatial;
      double* dxg = dx + (n * g.in_c + grp * cig) * g.in_h * g.in_w;
      if (is_pointwise(g)) {
        gemm_nn(kdim, spatial, cog, wt.data(), dyg, dxg, true);
      } else {
        gemm_nn(kdim, spatial, cog, wt.data(), dyg, col.data(), false);
        col2im(g, col.data(), cig, dxg);
      }
    }
  }
}

void conv2d_backward_params(const ConvGeom& g, const double* x, const double* dy, double* dw,
                            double* dbias) {
  if (is_depthwise(g)) return depthwise_backward_params(g, x, dy, dw, dbias);
  const std::size_t spatial = g.out_h() * g.out_w();
  const std::size_t cig = g.in_per_group(), cog = g.out_per_group();
  const std::size_t kdim = cig * g.k * g.k;
  std::vector<double> col(kdim * spatial), colt(spatial * kdim);
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t grp = 0; grp < g.groups; ++grp) {
      const double* dyg = dy + (n * g.out_c + grp * cog) * spatial;
      if (dbias)
        for (std::size_t o = 0; o < cog; ++o) {
          double s = 0.0;
          const double* row = dyg + o * spatial;
          for (std::size_t i = 0; i < spatial; ++i) s += row[i];
          dbias[grp * cog + o] += s;
        }
      if (!dw) continue;
      const double* xg = x + (n * g.in_c + grp * cig) * g.in_h * g.in_w;
      const double* src = xg;
      if (!is_pointwise(g)) {
        im2col(g, xg, cig, col.data());
        src = col.data();
      }
      // dW[cog x kdim] += dY[cog x spatial] * col^T[spatial x kdim]
      transpose(src, kdim, spatial, colt.data());
      gemm_nn(cog, kdim, spatial, dyg, colt.data(), dw + grp * cog * kdim, true);
    }
}

}  // namespace lfcx::kernels::parallel
