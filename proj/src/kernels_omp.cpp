#include "auxmtl/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace auxmtl::kernels {

namespace {
std::atomic<bool> g_parallel{true};
}

void set_parallel(bool enabled) { g_parallel.store(enabled, std::memory_order_relaxed); }

bool parallel_enabled() {
#ifdef _OPENMP
    return g_parallel.load(std::memory_order_relaxed);
#else
    return false;
#endif
}

// Each parallel loop below partitions whole output elements (or disjoint
// per-(n,c) slices for the scatter passes), so the accumulation order inside
// every element is the same as in the serial reference and the results are
// bit-identical for any thread count.

void conv2d_forward(const double* x, const double* w, const double* b, double* y,
                    const Conv2dDims& d) {
    if (!parallel_enabled()) return serial::conv2d_forward(x, w, b, y, d);
#pragma omp parallel
    {
        std::vector<double> acc(static_cast<std::size_t>(d.cout));
#pragma omp for collapse(2) schedule(static)
        for (std::int64_t n = 0; n < d.n; ++n) {
            for (std::int64_t ho = 0; ho < d.ho; ++ho) {
                for (std::int64_t wo = 0; wo < d.wo; ++wo) {
                    for (std::int64_t co = 0; co < d.cout; ++co) acc[co] = b ? b[co] : 0.0;
                    for (std::int64_t kh = 0; kh < d.kh; ++kh) {
                        const std::int64_t hi = ho * d.stride - d.pad + kh * d.dil;
                        if (hi < 0 || hi >= d.h) continue;
                        for (std::int64_t kw = 0; kw < d.kw; ++kw) {
                            const std::int64_t wi = wo * d.stride - d.pad + kw * d.dil;
                            if (wi < 0 || wi >= d.w) continue;
                            const double* xp = x + ((n * d.h + hi) * d.w + wi) * d.cin;
                            const double* wp = w + ((kh * d.kw + kw) * d.cin) * d.cout;
                            for (std::int64_t ci = 0; ci < d.cin; ++ci) {
                                const double xv = xp[ci];
                                const double* wrow = wp + ci * d.cout;
                                for (std::int64_t co = 0; co < d.cout; ++co) acc[co] += xv * wrow[co];
                            }
                        }
                    }
                    double* yp = y + ((n * d.ho + ho) * d.wo + wo) * d.cout;
                    for (std::int64_t co = 0; co < d.cout; ++co) yp[co] = acc[co];
                }
            }
        }
    }
}

void conv2d_backward_input(const double* w, const double* gy, double* gx, const Conv2dDims& d) {
    if (!parallel_enabled()) return serial::conv2d_backward_input(w, gy, gx, d);
#pragma omp parallel
    {
        std::vector<double> acc(static_cast<std::size_t>(d.cin));
#pragma omp for collapse(2) schedule(static)
        for (std::int64_t n = 0; n < d.n; ++n) {
            for (std::int64_t hi = 0; hi < d.h; ++hi) {
                for (std::int64_t wi = 0; wi < d.w; ++wi) {
                    std::fill(acc.begin(), acc.end(), 0.0);
                    for (std::int64_t kh = 0; kh < d.kh; ++kh) {
                        const std::int64_t th = hi + d.pad - kh * d.dil;
                        if (th < 0 || th % d.stride != 0) continue;
                        const std::int64_t ho = th / d.stride;
                        if (ho >= d.ho) continue;
                        for (std::int64_t kw = 0; kw < d.kw; ++kw) {
                            const std::int64_t tw = wi + d.pad - kw * d.dil;
                            if (tw < 0 || tw % d.stride != 0) continue;
                            const std::int64_t wo = tw / d.stride;
                            if (wo >= d.wo) continue;
                            const double* gp = gy + ((n * d.ho + ho) * d.wo + wo) * d.cout;
                            const double* wp = w + ((kh * d.kw + kw) * d.cin) * d.cout;
                            for (std::int64_t ci = 0; ci < d.cin; ++ci) {
                                const double* wrow = wp + ci * d.cout;
                                double s = 0.0;
                                for (std::int64_t co = 0; co < d.cout; ++co) s += wrow[co] * gp[co];
                                acc[ci] += s;
                            }
                        }
                    }
                    double* gxp = gx + ((n * d.h + hi) * d.w + wi) * d.cin;
                    for (std::int64_t ci = 0; ci < d.cin; ++ci) gxp[ci] = acc[ci];
                }
            }
        }
    }
}

void conv2d_backward_weight(const double* x, const double* gy, double* gw, const Conv2dDims& d) {
    if (!parallel_enabled()) return serial::conv2d_backward_weight(x, gy, gw, d);
#pragma omp parallel
    {
        std::vector<double> acc(static_cast<std::size_t>(d.cout));
#pragma omp for collapse(3) schedule(static)
        for (std::int64_t kh = 0; kh < d.kh; ++kh) {
            for (std::int64_t kw = 0; kw < d.kw; ++kw) {
                for (std::int64_t ci = 0; ci < d.cin; ++ci) {
                    std::fill(acc.begin(), acc.end(), 0.0);
                    for (std::int64_t n = 0; n < d.n; ++n) {
                        for (std::int64_t ho = 0; ho < d.ho; ++ho) {
                            const std::int64_t hi = ho * d.stride - d.pad + kh * d.dil;
                            if (hi < 0 || hi >= d.h) continue;
                            for (std::int64_t wo = 0; wo < d.wo; ++wo) {
                                const std::int64_t wi = wo * d.stride - d.pad + kw * d.dil;
                                if (wi < 0 || wi >= d.w) continue;
                                const double xv = x[((n * d.h + hi) * d.w + wi) * d.cin + ci];
                                const double* gp = gy + ((n * d.ho + ho) * d.wo + wo) * d.cout;
                                for (std::int64_t co = 0; co < d.cout; ++co) acc[co] += xv * gp[co];
                            }
                        }
                    }
                    double* gwp = gw + ((kh * d.kw + kw) * d.cin + ci) * d.cout;
                    for (std::int64_t co = 0; co < d.cout; ++co) gwp[co] = acc[co];
                }
            }
        }
    }
}

void conv2d_backward_bias(const double* gy, double* gb, const Conv2dDims& d) {
    // Cheap single pass; not worth a parallel region.
    serial::conv2d_backward_bias(gy, gb, d);
}

void maxpool_forward(const double* x, double* y, std::int64_t* argmax, const Pool2dDims& d) {
    if (!parallel_enabled()) return serial::maxpool_forward(x, y, argmax, d);
#pragma omp parallel for collapse(2) schedule(static)
    for (std::int64_t n = 0; n < d.n; ++n) {
        for (std::int64_t c = 0; c < d.c; ++c) {
            for (std::int64_t ho = 0; ho < d.ho; ++ho) {
                const std::int64_t h0 = ho * d.stride;
                const std::int64_t h1 = std::min(h0 + d.window, d.h);
                for (std::int64_t wo = 0; wo < d.wo; ++wo) {
                    const std::int64_t w0 = wo * d.stride;
                    const std::int64_t w1 = std::min(w0 + d.window, d.w);
                    double best = -1.0;
                    std::int64_t best_idx = -1;
                    for (std::int64_t hi = h0; hi < h1; ++hi) {
                        for (std::int64_t wi = w0; wi < w1; ++wi) {
                            const std::int64_t idx = ((n * d.h + hi) * d.w + wi) * d.c + c;
                            const double v = x[idx];
                            if (best_idx < 0 || v > best) {
                                best = v;
                                best_idx = idx;
                            }
                        }
                    }
                    const std::int64_t oidx = ((n * d.ho + ho) * d.wo + wo) * d.c + c;
                    y[oidx] = best;
                    argmax[oidx] = best_idx;
                }
            }
        }
    }
}

void maxpool_backward(const std::int64_t* argmax, const double* gy, double* gx,
                      const Pool2dDims& d) {
    if (!parallel_enabled()) return serial::maxpool_backward(argmax, gy, gx, d);
    std::fill(gx, gx + d.n * d.h * d.w * d.c, 0.0);
    // Scatter; windows of one (n, c) slice never touch another slice.
#pragma omp parallel for collapse(2) schedule(static)
    for (std::int64_t n = 0; n < d.n; ++n) {
        for (std::int64_t c = 0; c < d.c; ++c) {
            for (std::int64_t ho = 0; ho < d.ho; ++ho) {
                for (std::int64_t wo = 0; wo < d.wo; ++wo) {
                    const std::int64_t oidx = ((n * d.ho + ho) * d.wo + wo) * d.c + c;
                    gx[argmax[oidx]] += gy[oidx];
                }
            }
        }
    }
}

void bilinear_forward(const double* x, double* y, const UpsampleDims& d) {
    if (!parallel_enabled()) return serial::bilinear_forward(x, y, d);
    const UpsampleDims one{1, d.h, d.w, d.c, d.factor, d.ho, d.wo};
#pragma omp parallel for schedule(static)
    for (std::int64_t n = 0; n < d.n; ++n) {
        serial::bilinear_forward(x + n * d.h * d.w * d.c, y + n * d.ho * d.wo * d.c, one);
    }
}

void bilinear_backward(const double* gy, double* gx, const UpsampleDims& d) {
    if (!parallel_enabled()) return serial::bilinear_backward(gy, gx, d);
    const UpsampleDims one{1, d.h, d.w, d.c, d.factor, d.ho, d.wo};
#pragma omp parallel for schedule(static)
    for (std::int64_t n = 0; n < d.n; ++n) {
        serial::bilinear_backward(gy + n * d.ho * d.wo * d.c, gx + n * d.h * d.w * d.c, one);
    }
}

void fc_forward(const double* x, const double* w, const double* b, double* y,
                std::int64_t bsz, std::int64_t fin, std::int64_t fout) {
    if (!parallel_enabled()) return serial::fc_forward(x, w, b, y, bsz, fin, fout);
#pragma omp parallel for schedule(static)
    for (std::int64_t n = 0; n < bsz; ++n) {
        serial::fc_forward(x + n * fin, w, b, y + n * fout, 1, fin, fout);
    }
}

void fc_backward_input(const double* w, const double* gy, double* gx,
                       std::int64_t bsz, std::int64_t fin, std::int64_t fout) {
    if (!parallel_enabled()) return serial::fc_backward_input(w, gy, gx, bsz, fin, fout);
#pragma omp parallel for schedule(static)
    for (std::int64_t n = 0; n < bsz; ++n) {
        serial::fc_backward_input(w, gy + n * fout, gx + n * fin, 1, fin, fout);
    }
}

void fc_backward_weight(const double* x, const double* gy, double* gw,
                        std::int64_t bsz, std::int64_t fin, std::int64_t fout) {
    if (!parallel_enabled()) return serial::fc_backward_weight(x, gy, gw, bsz, fin, fout);
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < fin; ++i) {
        double* gwp = gw + i * fout;
        for (std::int64_t o = 0; o < fout; ++o) gwp[o] = 0.0;
        for (std::int64_t n = 0; n < bsz; ++n) {
            const double xv = x[n * fin + i];
            const double* gp = gy + n * fout;
            for (std::int64_t o = 0; o < fout; ++o) gwp[o] += xv * gp[o];
        }
    }
}

void fc_backward_bias(const double* gy, double* gb, std::int64_t bsz, std::int64_t fout) {
    serial::fc_backward_bias(gy, gb, bsz, fout);
}

}  // namespace auxmtl::kernels
