#include "kdi/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "kdi/errors.hpp"

namespace kdi {
namespace {

// Fixed-association dot product: 16 independent partials so the loop
// vectorizes without reassociation flags, then a deterministic scalar tail.
float dot_f32(const float* a, const float* b, int n) {
    float acc[16] = {};
    int i = 0;
    for (; i + 16 <= n; i += 16)
        for (int j = 0; j < 16; ++j) acc[j] += a[i + j] * b[i + j];
    double s = 0.0;
    for (int j = 0; j < 16; ++j) s += acc[j];
    for (; i < n; ++i) s += double(a[i]) * double(b[i]);
    return float(s);
}

void axpy_f32(float w, const float* x, float* y, int n) {
    for (int i = 0; i < n; ++i) y[i] += w * x[i];
}

struct ConvDims {
    int N, Cin, H, W, Cout, K, Ho, Wo;
};

ConvDims conv_dims(const Tensor& x, const Tensor& k, const Tensor& bias, int stride, int padding) {
    expect_rank(x, 4, "conv2d input");
    expect_rank(k, 4, "conv2d kernel");
    expect_rank(bias, 1, "conv2d bias");
    if (stride < 1) throw ParamError("conv2d: stride must be >= 1, got " + std::to_string(stride));
    if (padding < 0)
        throw ParamError("conv2d: padding must be >= 0, got " + std::to_string(padding));
    ConvDims d;
    d.N = x.dim(0);
    d.Cin = x.dim(1);
    d.H = x.dim(2);
    d.W = x.dim(3);
    d.Cout = k.dim(0);
    d.K = k.dim(2);
    if (k.dim(2) != k.dim(3))
        throw ShapeError("conv2d: kernel must be square, got " + std::to_string(k.dim(2)) + "x" +
                         std::to_string(k.dim(3)));
    if (k.dim(1) != d.Cin)
        throw ShapeError("conv2d: kernel in-channels " + std::to_string(k.dim(1)) +
                         " do not match input channels " + std::to_string(d.Cin));
    if (bias.dim(0) != d.Cout)
        throw ShapeError("conv2d: bias length " + std::to_string(bias.dim(0)) +
                         " does not match out-channels " + std::to_string(d.Cout));
    if (d.H + 2 * padding < d.K || d.W + 2 * padding < d.K)
        throw ShapeError("conv2d: kernel " + std::to_string(d.K) + " exceeds padded input " +
                         std::to_string(d.H + 2 * padding) + "x" +
                         std::to_string(d.W + 2 * padding));
    d.Ho = (d.H + 2 * padding - d.K) / stride + 1;
    d.Wo = (d.W + 2 * padding - d.K) / stride + 1;
    return d;
}

// Output index range [lo, hi) along one axis for a given kernel offset kx:
// require 0 <= o*stride - padding + kx < extent.
void out_range(int extent, int out_extent, int stride, int padding, int kx, int& lo, int& hi) {
    int a = padding - kx;
    lo = a <= 0 ? 0 : (a + stride - 1) / stride;
    int b = extent - 1 - kx + padding;
    hi = b < 0 ? 0 : std::min(out_extent, b / stride + 1);
}

void check_rows_stochastic(const Tensor& t, const char* name) {
    expect_rank(t, 2, name);
    const int n = t.dim(0), k = t.dim(1);
    for (int r = 0; r < n; ++r) {
        double s = 0.0;
        for (int c = 0; c < k; ++c) s += t.data[std::size_t(r) * k + c];
        if (std::abs(s - 1.0) > 1e-4)
            throw ParamError(std::string(name) + ": row " + std::to_string(r) + " sums to " +
                             std::to_string(s) + ", expected 1 within 1e-4");
    }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& k, const Tensor& bias, int stride, int padding) {
    const ConvDims d = conv_dims(x, k, bias, stride, padding);
    Tensor y = Tensor::zeros({d.N, d.Cout, d.Ho, d.Wo});
    const std::size_t x_chw = std::size_t(d.Cin) * d.H * d.W;
    const std::size_t y_chw = std::size_t(d.Cout) * d.Ho * d.Wo;
    for (int n = 0; n < d.N; ++n) {
        for (int co = 0; co < d.Cout; ++co) {
            float* yc = y.data.data() + n * y_chw + std::size_t(co) * d.Ho * d.Wo;
            const float b = bias.data[co];
            for (std::size_t i = 0; i < std::size_t(d.Ho) * d.Wo; ++i) yc[i] = b;
            for (int ci = 0; ci < d.Cin; ++ci) {
                const float* xc = x.data.data() + n * x_chw + std::size_t(ci) * d.H * d.W;
                const float* kc =
                    k.data.data() + (std::size_t(co) * d.Cin + ci) * d.K * d.K;
                for (int ky = 0; ky < d.K; ++ky) {
                    int oy_lo, oy_hi;
                    out_range(d.H, d.Ho, stride, padding, ky, oy_lo, oy_hi);
                    for (int kx = 0; kx < d.K; ++kx) {
                        const float w = kc[ky * d.K + kx];
                        if (w == 0.0f) continue;
                        int ox_lo, ox_hi;
                        out_range(d.W, d.Wo, stride, padding, kx, ox_lo, ox_hi);
                        if (ox_hi <= ox_lo) continue;
                        for (int oy = oy_lo; oy < oy_hi; ++oy) {
                            const int iy = oy * stride - padding + ky;
                            float* yrow = yc + std::size_t(oy) * d.Wo + ox_lo;
                            if (stride == 1) {
                                const float* xrow =
                                    xc + std::size_t(iy) * d.W + (ox_lo - padding + kx);
                                axpy_f32(w, xrow, yrow, ox_hi - ox_lo);
                            } else {
                                for (int ox = ox_lo; ox < ox_hi; ++ox)
                                    yc[std::size_t(oy) * d.Wo + ox] +=
                                        w * xc[std::size_t(iy) * d.W + ox * stride - padding + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    return y;
}

void conv2d_backward(const Tensor& x, const Tensor& k, int stride, int padding, const Tensor& gy,
                     Tensor& gx, Tensor& gk, Tensor& gb) {
    Tensor bias = Tensor::zeros({k.dim(0)});
    const ConvDims d = conv_dims(x, k, bias, stride, padding);
    expect_rank(gy, 4, "conv2d grad");
    if (gy.dim(0) != d.N || gy.dim(1) != d.Cout || gy.dim(2) != d.Ho || gy.dim(3) != d.Wo)
        throw ShapeError("conv2d_backward: grad shape " + shape_str(gy.shape) +
                         " does not match output " +
                         shape_str({d.N, d.Cout, d.Ho, d.Wo}));
    gx = Tensor::zeros(x.shape);
    gk = Tensor::zeros(k.shape);
    gb = Tensor::zeros({d.Cout});
    const std::size_t x_chw = std::size_t(d.Cin) * d.H * d.W;
    const std::size_t y_chw = std::size_t(d.Cout) * d.Ho * d.Wo;

    for (int co = 0; co < d.Cout; ++co) {
        double acc = 0.0;
        for (int n = 0; n < d.N; ++n) {
            const float* gc = gy.data.data() + n * y_chw + std::size_t(co) * d.Ho * d.Wo;
            for (std::size_t i = 0; i < std::size_t(d.Ho) * d.Wo; ++i) acc += gc[i];
        }
        gb.data[co] = float(acc);
    }

    for (int n = 0; n < d.N; ++n) {
        for (int co = 0; co < d.Cout; ++co) {
            const float* gc = gy.data.data() + n * y_chw + std::size_t(co) * d.Ho * d.Wo;
            for (int ci = 0; ci < d.Cin; ++ci) {
                const float* xc = x.data.data() + n * x_chw + std::size_t(ci) * d.H * d.W;
                float* gxc = gx.data.data() + n * x_chw + std::size_t(ci) * d.H * d.W;
                const float* kc = k.data.data() + (std::size_t(co) * d.Cin + ci) * d.K * d.K;
                float* gkc = gk.data.data() + (std::size_t(co) * d.Cin + ci) * d.K * d.K;
                for (int ky = 0; ky < d.K; ++ky) {
                    int oy_lo, oy_hi;
                    out_range(d.H, d.Ho, stride, padding, ky, oy_lo, oy_hi);
                    for (int kx = 0; kx < d.K; ++kx) {
                        int ox_lo, ox_hi;
                        out_range(d.W, d.Wo, stride, padding, kx, ox_lo, ox_hi);
                        if (ox_hi <= ox_lo || oy_hi <= oy_lo) continue;
                        const float w = kc[ky * d.K + kx];
                        double kacc = 0.0;
                        for (int oy = oy_lo; oy < oy_hi; ++oy) {
                            const int iy = oy * stride - padding + ky;
                            const float* grow = gc + std::size_t(oy) * d.Wo + ox_lo;
                            if (stride == 1) {
                                const std::size_t off = std::size_t(iy) * d.W + (ox_lo - padding + kx);
                                axpy_f32(w, grow, gxc + off, ox_hi - ox_lo);
                                kacc += dot_f32(grow, xc + off, ox_hi - ox_lo);
                            } else {
                                for (int ox = ox_lo; ox < ox_hi; ++ox) {
                                    const std::size_t xi =
                                        std::size_t(iy) * d.W + ox * stride - padding + kx;
                                    const float g = gc[std::size_t(oy) * d.Wo + ox];
                                    gxc[xi] += w * g;
                                    kacc += double(g) * double(xc[xi]);
                                }
                            }
                        }
                        gkc[ky * d.K + kx] += float(kacc);
                    }
                }
            }
        }
    }
}

Tensor relu(const Tensor& x) {
    Tensor y = x;
    for (auto& v : y.data) v = v > 0.0f ? v : 0.0f;
    return y;
}

Tensor relu_backward(const Tensor& x, const Tensor& gy) {
    expect_same_shape(x, gy, "relu_backward");
    Tensor gx = Tensor::zeros(x.shape);
    for (std::size_t i = 0; i < x.data.size(); ++i)
        gx.data[i] = x.data[i] > 0.0f ? gy.data[i] : 0.0f;
    return gx;
}

Tensor maxpool2x2(const Tensor& x) {
    expect_rank(x, 4, "maxpool2x2 input");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H % 2 != 0 || W % 2 != 0)
        throw ShapeError("maxpool2x2: spatial extents must be even, got " + std::to_string(H) +
                         "x" + std::to_string(W));
    Tensor y = Tensor::zeros({N, C, H / 2, W / 2});
    const int Ho = H / 2, Wo = W / 2;
    for (int nc = 0; nc < N * C; ++nc) {
        const float* xc = x.data.data() + std::size_t(nc) * H * W;
        float* yc = y.data.data() + std::size_t(nc) * Ho * Wo;
        for (int oy = 0; oy < Ho; ++oy)
            for (int ox = 0; ox < Wo; ++ox) {
                const float* p = xc + std::size_t(2 * oy) * W + 2 * ox;
                float m = p[0];
                if (p[1] > m) m = p[1];
                if (p[W] > m) m = p[W];
                if (p[W + 1] > m) m = p[W + 1];
                yc[std::size_t(oy) * Wo + ox] = m;
            }
    }
    return y;
}

Tensor maxpool2x2_backward(const Tensor& x, const Tensor& gy) {
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Ho = H / 2, Wo = W / 2;
    Tensor gx = Tensor::zeros(x.shape);
    for (int nc = 0; nc < N * C; ++nc) {
        const float* xc = x.data.data() + std::size_t(nc) * H * W;
        float* gc = gx.data.data() + std::size_t(nc) * H * W;
        const float* go = gy.data.data() + std::size_t(nc) * Ho * Wo;
        for (int oy = 0; oy < Ho; ++oy)
            for (int ox = 0; ox < Wo; ++ox) {
                const std::size_t base = std::size_t(2 * oy) * W + 2 * ox;
                // Row-major scan with strict > keeps the first maximum.
                const std::size_t offs[4] = {base, base + 1, base + W, base + W + 1};
                std::size_t best = offs[0];
                for (int i = 1; i < 4; ++i)
                    if (xc[offs[i]] > xc[best]) best = offs[i];
                gc[best] += go[std::size_t(oy) * Wo + ox];
            }
    }
    return gx;
}

Tensor global_avg_pool(const Tensor& x) {
    expect_rank(x, 4, "global_avg_pool input");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor y = Tensor::zeros({N, C});
    const double inv = 1.0 / (double(H) * W);
    for (int nc = 0; nc < N * C; ++nc) {
        const float* xc = x.data.data() + std::size_t(nc) * H * W;
        double s = 0.0;
        for (int i = 0; i < H * W; ++i) s += xc[i];
        y.data[nc] = float(s * inv);
    }
    return y;
}

Tensor global_avg_pool_backward(const Tensor& x, const Tensor& gy) {
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor gx = Tensor::zeros(x.shape);
    const float inv = 1.0f / float(H * W);
    for (int nc = 0; nc < N * C; ++nc) {
        const float g = gy.data[nc] * inv;
        float* gc = gx.data.data() + std::size_t(nc) * H * W;
        for (int i = 0; i < H * W; ++i) gc[i] = g;
    }
    return gx;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    expect_rank(x, 2, "linear input");
    expect_rank(w, 2, "linear weight");
    expect_rank(b, 1, "linear bias");
    const int N = x.dim(0), Din = x.dim(1), Dout = w.dim(0);
    if (w.dim(1) != Din)
        throw ShapeError("linear: weight in-features " + std::to_string(w.dim(1)) +
                         " do not match input features " + std::to_string(Din));
    if (b.dim(0) != Dout)
        throw ShapeError("linear: bias length " + std::to_string(b.dim(0)) +
                         " does not match out-features " + std::to_string(Dout));
    Tensor y = Tensor::zeros({N, Dout});
    for (int n = 0; n < N; ++n) {
        const float* xr = x.data.data() + std::size_t(n) * Din;
        for (int o = 0; o < Dout; ++o)
            y.data[std::size_t(n) * Dout + o] =
                b.data[o] + dot_f32(xr, w.data.data() + std::size_t(o) * Din, Din);
    }
    return y;
}

void linear_backward(const Tensor& x, const Tensor& w, const Tensor& gy, Tensor& gx, Tensor& gw,
                     Tensor& gb) {
    const int N = x.dim(0), Din = x.dim(1), Dout = w.dim(0);
    gx = Tensor::zeros(x.shape);
    gw = Tensor::zeros(w.shape);
    gb = Tensor::zeros({Dout});
    for (int o = 0; o < Dout; ++o) {
        double s = 0.0;
        for (int n = 0; n < N; ++n) s += gy.data[std::size_t(n) * Dout + o];
        gb.data[o] = float(s);
    }
    for (int n = 0; n < N; ++n) {
        const float* gr = gy.data.data() + std::size_t(n) * Dout;
        const float* xr = x.data.data() + std::size_t(n) * Din;
        float* gxr = gx.data.data() + std::size_t(n) * Din;
        for (int o = 0; o < Dout; ++o) {
            const float g = gr[o];
            if (g == 0.0f) continue;
            axpy_f32(g, w.data.data() + std::size_t(o) * Din, gxr, Din);
            axpy_f32(g, xr, gw.data.data() + std::size_t(o) * Din, Din);
        }
    }
}

Tensor softmax_t(const Tensor& logits, float temperature) {
    expect_rank(logits, 2, "softmax input");
    if (!(temperature > 0.0f))
        throw ParamError("softmax: temperature must be > 0, got " + std::to_string(temperature));
    const int N = logits.dim(0), K = logits.dim(1);
    if (K < 2)
        throw ShapeError("softmax: need at least 2 classes, got " + std::to_string(K));
    Tensor y = Tensor::zeros({N, K});
    for (int n = 0; n < N; ++n) {
        const float* z = logits.data.data() + std::size_t(n) * K;
        float* p = y.data.data() + std::size_t(n) * K;
        float m = z[0];
        for (int j = 1; j < K; ++j) m = std::max(m, z[j]);
        double s = 0.0;
        for (int j = 0; j < K; ++j) {
            const double e = std::exp(double(z[j] - m) / temperature);
            p[j] = float(e);
            s += e;
        }
        const double inv = 1.0 / s;
        for (int j = 0; j < K; ++j) p[j] = float(p[j] * inv);
    }
    return y;
}

Tensor softmax_t_backward(const Tensor& y, float temperature, const Tensor& gy) {
    const int N = y.dim(0), K = y.dim(1);
    Tensor gz = Tensor::zeros(y.shape);
    const double invT = 1.0 / temperature;
    for (int n = 0; n < N; ++n) {
        const float* p = y.data.data() + std::size_t(n) * K;
        const float* g = gy.data.data() + std::size_t(n) * K;
        double dot = 0.0;
        for (int j = 0; j < K; ++j) dot += double(g[j]) * p[j];
        for (int j = 0; j < K; ++j)
            gz.data[std::size_t(n) * K + j] = float(invT * p[j] * (double(g[j]) - dot));
    }
    return gz;
}

Tensor cross_entropy_soft(const Tensor& pred, const Tensor& target) {
    check_rows_stochastic(pred, "cross_entropy pred");
    check_rows_stochastic(target, "cross_entropy target");
    expect_same_shape(pred, target, "cross_entropy");
    const int N = pred.dim(0), K = pred.dim(1);
    double total = 0.0;
    for (int n = 0; n < N; ++n) {
        double row = 0.0;
        for (int j = 0; j < K; ++j) {
            const std::size_t i = std::size_t(n) * K + j;
            row -= double(target.data[i]) *
                   std::log(std::max(double(pred.data[i]), double(kLogClampFloor)));
        }
        total += row;
    }
    return Tensor::scalar(float(total / N));
}

void cross_entropy_soft_backward(const Tensor& pred, const Tensor& target, float gy_scalar,
                                 Tensor& gpred, Tensor& gtarget) {
    const int N = pred.dim(0), K = pred.dim(1);
    gpred = Tensor::zeros(pred.shape);
    gtarget = Tensor::zeros(target.shape);
    const double gn = double(gy_scalar) / N;
    for (int n = 0; n < N; ++n)
        for (int j = 0; j < K; ++j) {
            const std::size_t i = std::size_t(n) * K + j;
            const double p = std::max(double(pred.data[i]), double(kLogClampFloor));
            if (double(pred.data[i]) > double(kLogClampFloor))
                gpred.data[i] = float(-gn * double(target.data[i]) / p);
            gtarget.data[i] = float(-gn * std::log(p));
        }
}

Tensor add(const Tensor& a, const Tensor& b) {
    expect_same_shape(a, b, "add");
    Tensor y = a;
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += b.data[i];
    return y;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    expect_same_shape(a, b, "sub");
    Tensor y = a;
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] -= b.data[i];
    return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    expect_same_shape(a, b, "mul");
    Tensor y = a;
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] *= b.data[i];
    return y;
}

Tensor scale(const Tensor& a, float c) {
    Tensor y = a;
    for (auto& v : y.data) v *= c;
    return y;
}

Tensor sum_all(const Tensor& a) {
    double s = 0.0;
    for (float v : a.data) s += v;
    return Tensor::scalar(float(s));
}

Tensor mean_all(const Tensor& a) {
    double s = 0.0;
    for (float v : a.data) s += v;
    return Tensor::scalar(float(s / double(a.data.size())));
}

Tensor pick(const Tensor& a, std::int64_t flat_index) {
    if (flat_index < 0 || std::size_t(flat_index) >= a.data.size())
        throw ParamError("pick: index " + std::to_string(flat_index) + " out of range for " +
                         std::to_string(a.data.size()) + " elements");
    return Tensor::scalar(a.data[std::size_t(flat_index)]);
}

Tensor channel_sumsq(const Tensor& x) {
    expect_rank(x, 4, "channel_sumsq input");
    const int N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    Tensor y = Tensor::zeros({N, HW});
    for (int n = 0; n < N; ++n) {
        float* yr = y.data.data() + std::size_t(n) * HW;
        for (int c = 0; c < C; ++c) {
            const float* xc = x.data.data() + (std::size_t(n) * C + c) * HW;
            for (int i = 0; i < HW; ++i) yr[i] += xc[i] * xc[i];
        }
    }
    return y;
}

Tensor channel_sumsq_backward(const Tensor& x, const Tensor& gy) {
    const int N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    Tensor gx = Tensor::zeros(x.shape);
    for (int n = 0; n < N; ++n) {
        const float* gr = gy.data.data() + std::size_t(n) * HW;
        for (int c = 0; c < C; ++c) {
            const std::size_t off = (std::size_t(n) * C + c) * HW;
            for (int i = 0; i < HW; ++i) gx.data[off + i] = 2.0f * x.data[off + i] * gr[i];
        }
    }
    return gx;
}

Tensor l2_normalize_rows(const Tensor& x) {
    expect_rank(x, 2, "l2_normalize input");
    const int N = x.dim(0), D = x.dim(1);
    Tensor y = Tensor::zeros(x.shape);
    for (int n = 0; n < N; ++n) {
        const float* xr = x.data.data() + std::size_t(n) * D;
        double ss = 0.0;
        for (int i = 0; i < D; ++i) ss += double(xr[i]) * xr[i];
        if (ss == 0.0) continue;
        const float inv = float(1.0 / std::sqrt(ss));
        float* yr = y.data.data() + std::size_t(n) * D;
        for (int i = 0; i < D; ++i) yr[i] = xr[i] * inv;
    }
    return y;
}

Tensor l2_normalize_rows_backward(const Tensor& x, const Tensor& gy) {
    const int N = x.dim(0), D = x.dim(1);
    Tensor gx = Tensor::zeros(x.shape);
    for (int n = 0; n < N; ++n) {
        const float* xr = x.data.data() + std::size_t(n) * D;
        const float* gr = gy.data.data() + std::size_t(n) * D;
        double ss = 0.0, dot = 0.0;
        for (int i = 0; i < D; ++i) {
            ss += double(xr[i]) * xr[i];
            dot += double(xr[i]) * gr[i];
        }
        if (ss == 0.0) continue;
        const double norm = std::sqrt(ss);
        const double inv = 1.0 / norm, inv3 = dot / (norm * norm * norm);
        float* gxr = gx.data.data() + std::size_t(n) * D;
        for (int i = 0; i < D; ++i) gxr[i] = float(gr[i] * inv - xr[i] * inv3);
    }
    return gx;
}

}  // namespace kdi
