#include "auxmtl/kernels.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>
#include <vector>

namespace auxmtl::kernels {

Conv2dDims Conv2dDims::make(std::int64_t n, std::int64_t h, std::int64_t w, std::int64_t cin,
                            std::int64_t kh, std::int64_t kw, std::int64_t cout,
                            std::int64_t stride, std::int64_t pad, std::int64_t dil) {
    if (stride < 1 || pad < 0 || dil < 1) {
        throw std::invalid_argument("conv2d: stride/padding/dilation out of range (stride=" +
                                    std::to_string(stride) + " pad=" + std::to_string(pad) +
                                    " dil=" + std::to_string(dil) + ")");
    }
    const std::int64_t eff_kh = (kh - 1) * dil + 1;
    const std::int64_t eff_kw = (kw - 1) * dil + 1;
    const std::int64_t ho = (h + 2 * pad - eff_kh) / stride + 1;
    const std::int64_t wo = (w + 2 * pad - eff_kw) / stride + 1;
    if (h + 2 * pad < eff_kh || w + 2 * pad < eff_kw || ho < 1 || wo < 1) {
        throw std::invalid_argument("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                                    " (dilation " + std::to_string(dil) + ") does not fit input " +
                                    std::to_string(h) + "x" + std::to_string(w) + " with padding " +
                                    std::to_string(pad));
    }
    return Conv2dDims{n, h, w, cin, kh, kw, cout, stride, pad, dil, ho, wo};
}

Pool2dDims Pool2dDims::make(std::int64_t n, std::int64_t h, std::int64_t w, std::int64_t c,
                            std::int64_t window, std::int64_t stride) {
    if (window < 1 || stride < 1) {
        throw std::invalid_argument("maxpool: window and stride must be >= 1");
    }
    if (h < 1 || w < 1) {
        throw std::invalid_argument("maxpool: empty spatial input " + std::to_string(h) + "x" +
                                    std::to_string(w));
    }
    auto out_extent = [&](std::int64_t in) {
        if (in <= window) return std::int64_t{1};
        std::int64_t o = (in - window + stride - 1) / stride + 1;
        if ((o - 1) * stride >= in) --o;
        return o;
    };
    return Pool2dDims{n, h, w, c, window, stride, out_extent(h), out_extent(w)};
}

UpsampleDims UpsampleDims::make(std::int64_t n, std::int64_t h, std::int64_t w, std::int64_t c,
                                std::int64_t factor) {
    if (factor < 1) throw std::invalid_argument("bilinear upsample: factor must be >= 1");
    return UpsampleDims{n, h, w, c, factor, h * factor, w * factor};
}

namespace serial {

void conv2d_forward(const double* x, const double* w, const double* b, double* y,
                    const Conv2dDims& d) {
    std::vector<double> acc(static_cast<std::size_t>(d.cout));
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

void conv2d_backward_input(const double* w, const double* gy, double* gx, const Conv2dDims& d) {
    std::vector<double> acc(static_cast<std::size_t>(d.cin));
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

void conv2d_backward_weight(const double* x, const double* gy, double* gw, const Conv2dDims& d) {
    std::vector<double> acc(static_cast<std::size_t>(d.cout));
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

void conv2d_backward_bias(const double* gy, double* gb, const Conv2dDims& d) {
    std::fill(gb, gb + d.cout, 0.0);
    const std::int64_t rows = d.n * d.ho * d.wo;
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* gp = gy + r * d.cout;
        for (std::int64_t co = 0; co < d.cout; ++co) gb[co] += gp[co];
    }
}

void maxpool_forward(const double* x, double* y, std::int64_t* argmax, const Pool2dDims& d) {
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
    std::fill(gx, gx + d.n * d.h * d.w * d.c, 0.0);
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

namespace {

inline void src_coord(std::int64_t dst, std::int64_t in, std::int64_t out,
                      std::int64_t& i0, std::int64_t& i1, double& frac) {
    if (in == 1 || out == 1) {
        i0 = i1 = 0;
        frac = 0.0;
        return;
    }
    // Align-corners mapping via integer division, so grid hits are exact.
    const std::int64_t num = dst * (in - 1);
    i0 = num / (out - 1);
    const std::int64_t rem = num % (out - 1);
    frac = static_cast<double>(rem) / static_cast<double>(out - 1);
    i1 = (rem == 0) ? i0 : i0 + 1;
}

}  // namespace

void bilinear_forward(const double* x, double* y, const UpsampleDims& d) {
    for (std::int64_t n = 0; n < d.n; ++n) {
        for (std::int64_t ho = 0; ho < d.ho; ++ho) {
            std::int64_t h0, h1;
            double ay;
            src_coord(ho, d.h, d.ho, h0, h1, ay);
            for (std::int64_t wo = 0; wo < d.wo; ++wo) {
                std::int64_t w0, w1;
                double ax;
                src_coord(wo, d.w, d.wo, w0, w1, ax);
                const double* r0 = x + ((n * d.h + h0) * d.w) * d.c;
                const double* r1 = x + ((n * d.h + h1) * d.w) * d.c;
                double* yp = y + ((n * d.ho + ho) * d.wo + wo) * d.c;
                for (std::int64_t c = 0; c < d.c; ++c) {
                    const double v00 = r0[w0 * d.c + c];
                    const double v01 = r0[w1 * d.c + c];
                    const double v10 = r1[w0 * d.c + c];
                    const double v11 = r1[w1 * d.c + c];
                    const double top = v00 + ax * (v01 - v00);
                    const double bot = v10 + ax * (v11 - v10);
                    yp[c] = top + ay * (bot - top);
                }
            }
        }
    }
}

void bilinear_backward(const double* gy, double* gx, const UpsampleDims& d) {
    std::fill(gx, gx + d.n * d.h * d.w * d.c, 0.0);
    for (std::int64_t n = 0; n < d.n; ++n) {
        for (std::int64_t ho = 0; ho < d.ho; ++ho) {
            std::int64_t h0, h1;
            double ay;
            src_coord(ho, d.h, d.ho, h0, h1, ay);
            for (std::int64_t wo = 0; wo < d.wo; ++wo) {
                std::int64_t w0, w1;
                double ax;
                src_coord(wo, d.w, d.wo, w0, w1, ax);
                const double* gp = gy + ((n * d.ho + ho) * d.wo + wo) * d.c;
                double* r0 = gx + ((n * d.h + h0) * d.w) * d.c;
                double* r1 = gx + ((n * d.h + h1) * d.w) * d.c;
                for (std::int64_t c = 0; c < d.c; ++c) {
                    const double g = gp[c];
                    r0[w0 * d.c + c] += (1.0 - ay) * (1.0 - ax) * g;
                    if (w1 != w0) r0[w1 * d.c + c] += (1.0 - ay) * ax * g;
                    if (h1 != h0) {
                        r1[w0 * d.c + c] += ay * (1.0 - ax) * g;
                        if (w1 != w0) r1[w1 * d.c + c] += ay * ax * g;
                    }
                }
            }
        }
    }
}

void fc_forward(const double* x, const double* w, const double* b, double* y,
                std::int64_t bsz, std::int64_t fin, std::int64_t fout) {
    for (std::int64_t n = 0; n < bsz; ++n) {
        double* yp = y + n * fout;
        for (std::int64_t o = 0; o < fout; ++o) yp[o] = b ? b[o] : 0.0;
        const double* xp = x + n * fin;
        for (std::int64_t i = 0; i < fin; ++i) {
            const double xv = xp[i];
            const double* wrow = w + i * fout;
            for (std::int64_t o = 0; o < fout; ++o) yp[o] += xv * wrow[o];
        }
    }
}

void fc_backward_input(const double* w, const double* gy, double* gx,
                       std::int64_t bsz, std::int64_t fin, std::int64_t fout) {
    for (std::int64_t n = 0; n < bsz; ++n) {
        const double* gp = gy + n * fout;
        double* gxp = gx + n * fin;
        for (std::int64_t i = 0; i < fin; ++i) {
            const double* wrow = w + i * fout;
            double s = 0.0;
            for (std::int64_t o = 0; o < fout; ++o) s += wrow[o] * gp[o];
            gxp[i] = s;
        }
    }
}

void fc_backward_weight(const double* x, const double* gy, double* gw,
                        std::int64_t bsz, std::int64_t fin, std::int64_t fout) {
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
    std::fill(gb, gb + fout, 0.0);
    for (std::int64_t n = 0; n < bsz; ++n) {
        const double* gp = gy + n * fout;
        for (std::int64_t o = 0; o < fout; ++o) gb[o] += gp[o];
    }
}

}  // namespace serial

}  // namespace auxmtl::kernels
