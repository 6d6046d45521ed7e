#pragma once

// Compute kernels behind the autodiff operators. Two implementations share one
// interface: `serial` is a direct transcription of each definition and is kept
// as the reference the tests compare against; `parallel` is the OpenMP
// im2col/GEMM path used by the engine.

#include <cstddef>

namespace lfcx::kernels {

struct ConvGeom {
  std::size_t batch = 1;
  std::size_t in_c = 1, in_h = 1, in_w = 1;
  std::size_t out_c = 1;
  std::size_t k = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;
  std::size_t groups = 1;

  std::size_t out_h() const { return (in_h + 2 * pad - k) / stride + 1; }
  std::size_t out_w() const { return (in_w + 2 * pad - k) / stride + 1; }
  std::size_t in_per_group() const { return in_c / groups; }
  std::size_t out_per_group() const { return out_c / groups; }
  std::size_t macs() const { return batch * out_c * out_h() * out_w() * in_per_group() * k * k; }
};

enum class Trans { kNo, kYes };

namespace serial {
// C[m x n] (+)= op(A)[m x k] * op(B)[k x n], all row-major and contiguous.
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double* c, bool accumulate);
// y is overwritten; bias may be null.
void conv2d_forward(const ConvGeom& g, const double* x, const double* w, const double* bias,
                    double* y);
// The backward kernels accumulate into their outputs; null outputs are skipped.
void conv2d_backward_input(const ConvGeom& g, const double* dy, const double* w, double* dx);
void conv2d_backward_params(const ConvGeom& g, const double* x, const double* dy, double* dw,
                            double* dbias);
}  // namespace serial

namespace parallel {
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double* c, bool accumulate);
void conv2d_forward(const ConvGeom& g, const double* x, const double* w, const double* bias,
                    double* y);
void conv2d_backward_input(const ConvGeom& g, const double* dy, const double* w, double* dx);
void conv2d_backward_params(const ConvGeom& g, const double* x, const double* dy, double* dw,
                            double* dbias);
}  // namespace parallel

}  // namespace lfcx::kernels
