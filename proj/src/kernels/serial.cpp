#include "lfcx/kernels.hpp"

#include <cstddef>

namespace lfcx::kernels::serial {

void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = ta == Trans::kNo ? a[i * k + p] : a[p * m + i];
        const double bv = tb == Trans::kNo ? b[p * n + j] : b[j * k + p];
        s += av * bv;
      }
      c[i * n + j] = accumulate ? c[i * n + j] + s : s;
    }
  }
}

void conv2d_forward(const ConvGeom& g, const double* x, const double* w, const double* bias,
                    double* y) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  const std::size_t cig = g.in_per_group(), cog = g.out_per_group();
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t o = 0; o < g.out_c; ++o) {
      const std::size_t grp = o / cog;
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          double s = bias ? bias[o] : 0.0;
          for (std::size_t ci = 0; ci < cig; ++ci) {
            const std::size_t c = grp * cig + ci;
            for (std::size_t ky = 0; ky < g.k; ++ky)
              for (std::size_t kx = 0; kx < g.k; ++kx) {
                const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
                const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.in_h) ||
                    ix >= static_cast<long>(g.in_w))
                  continue;
                s += x[((n * g.in_c + c) * g.in_h + iy) * g.in_w + ix] *
                     w[((o * cig + ci) * g.k + ky) * g.k + kx];
              }
          }
          y[((n * g.out_c + o) * oh + oy) * ow + ox] = s;
        }
    }
}

void conv2d_backward_input(const ConvGeom& g, const double* dy, const double* w, double* dx) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  const std::size_t cig = g.in_per_group(), cog = g.out_per_group();
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t o = 0; o < g.out_c; ++o) {
      const std::size_t grp = o / cog;
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const double d = dy[((n * g.out_c + o) * oh + oy) * ow + ox];
          for (std::size_t ci = 0; ci < cig; ++ci) {
            const std::size_t c = grp * cig + ci;
            for (std::size_t ky = 0; ky < g.k; ++ky)
              for (std::size_t kx = 0; kx < g.k; ++kx) {
                const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
                const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.in_h) ||
                    ix >= static_cast<long>(g.in_w))
                  continue;
                dx[((n * g.in_c + c) * g.in_h + iy) * g.in_w + ix] +=
                    d * w[((o * cig + ci) * g.k + ky) * g.k + kx];
              }
          }
        }
    }
}

void conv2d_backward_params(const ConvGeom& g, const double* x, const double* dy, double* dw,
                            double* dbias) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  const std::size_t cig = g.in_per_group(), cog = g.out_per_group();
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t o = 0; o < g.out_c; ++o) {
      const std::size_t grp = o / cog;
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const double d = dy[((n * g.out_c + o) * oh + oy) * ow + ox];
          if (dbias) dbias[o] += d;
          if (!dw) continue;
          for (std::size_t ci = 0; ci < cig; ++ci) {
            const std::size_t c = grp * cig + ci;
            for (std::size_t ky = 0; ky < g.k; ++ky)
              for (std::size_t kx = 0; kx < g.k; ++kx) {
                const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
                const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.in_h) ||
                    ix >= static_cast<long>(g.in_w))
                  continue;
                dw[((o * cig + ci) * g.k + ky) * g.k + kx] +=
                    d * x[((n * g.in_c + c) * g.in_h + iy) * g.in_w + ix];
              }
          }
        }
    }
}

}  // namespace lfcx::kernels::serial
