#pragma once

#include <cstdint>

namespace auxmtl::kernels {

// Runtime switch for the OpenMP paths. The parallel kernels assign each
// output element to exactly one thread, so results are bit-identical to the
// serial reference for any thread count; disabling is only useful when a
// caller already parallelizes at a coarser level.
void set_parallel(bool enabled);
bool parallel_enabled();

// Activations are NHWC, conv weights are (KH, KW, Cin, Cout).
struct Conv2dDims {
    std::int64_t n, h, w, cin;
    std::int64_t kh, kw, cout;
    std::int64_t stride, pad, dil;
    std::int64_t ho, wo;

    // Validates and computes the output extent (zero padding, floor division).
    static Conv2dDims make(std::int64_t n, std::int64_t h, std::int64_t w, std::int64_t cin,
                           std::int64_t kh, std::int64_t kw, std::int64_t cout,
                           std::int64_t stride, std::int64_t pad, std::int64_t dil);
};

// Pooling clips windows at the border (ceil semantics), so any input with
// h, w >= 1 yields at least a 1x1 output.
struct Pool2dDims {
    std::int64_t n, h, w, c;
    std::int64_t window, stride;
    std::int64_t ho, wo;

    static Pool2dDims make(std::int64_t n, std::int64_t h, std::int64_t w, std::int64_t c,
                           std::int64_t window, std::int64_t stride);
};

struct UpsampleDims {
    std::int64_t n, h, w, c;
    std::int64_t factor;
    std::int64_t ho, wo;

    static UpsampleDims make(std::int64_t n, std::int64_t h, std::int64_t w, std::int64_t c,
                             std::int64_t factor);
};

void conv2d_forward(const double* x, const double* w, const double* b, double* y,
                    const Conv2dDims& d);
void conv2d_backward_input(const double* w, const double* gy, double* gx, const Conv2dDims& d);
void conv2d_backward_weight(const double* x, const double* gy, double* gw, const Conv2dDims& d);
void conv2d_backward_bias(const double* gy, double* gb, const Conv2dDims& d);

// argmax records, per output element, the flat NHWC index of the first
// maximal input in row-major window order (the deterministic tie-break).
void maxpool_forward(const double* x, double* y, std::int64_t* argmax, const Pool2dDims& d);
void maxpool_backward(const std::int64_t* argmax, const double* gy, double* gx,
                      const Pool2dDims& d);

// Integer-factor bilinear interpolation, align-corners convention. The
// blend is written in lerp form so constant regions reproduce exactly and
// factor 1 is an identity.
void bilinear_forward(const double* x, double* y, const UpsampleDims& d);
void bilinear_backward(const double* gy, double* gx, const UpsampleDims& d);

void fc_forward(const double* x, const double* w, const double* b, double* y,
                std::int64_t bsz, std::int64_t fin, std::int64_t fout);
void fc_backward_input(const double* w, const double* gy, double* gx,
                       std::int64_t bsz, std::int64_t fin, std::int64_t fout);
void fc_backward_weight(const double* x, const double* gy, double* gw,
                        std::int64_t bsz, std::int64_t fin, std::int64_t fout);
void fc_backward_bias(const double* gy, double* gb, std::int64_t bsz, std::int64_t fout);

// Serial reference implementations, kept for equivalence tests and as the
// baseline in the kernel benchmarks.
namespace serial {

void conv2d_forward(const double* x, const double* w, const double* b, double* y,
                    const Conv2dDims& d);
void conv2d_backward_input(const double* w, const double* gy, double* gx, const Conv2dDims& d);
void conv2d_backward_weight(const double* x, const double* gy, double* gw, const Conv2dDims& d);
void conv2d_backward_bias(const double* gy, double* gb, const Conv2dDims& d);

void maxpool_forward(const double* x, double* y, std::int64_t* argmax, const Pool2dDims& d);
void maxpool_backward(const std::int64_t* argmax, const double* gy, double* gx,
                      const Pool2dDims& d);

void bilinear_forward(const double* x, double* y, const UpsampleDims& d);
void bilinear_backward(const double* gy, double* gx, const UpsampleDims& d);

void fc_forward(const double* x, const double* w, const double* b, double* y,
                std::int64_t bsz, std::int64_t fin, std::int64_t fout);
void fc_backward_input(const double* w, const double* gy, double* gx,
                       std::int64_t bsz, std::int64_t fin, std::int64_t fout);
void fc_backward_weight(const double* x, const double* gy, double* gw,
                        std::int64_t bsz, std::int64_t fin, std::int64_t fout);
void fc_backward_bias(const double* gy, double* gb, std::int64_t bsz, std::int64_t fout);

}  // namespace serial

}  // namespace auxmtl::kernels
