#pragma once

// Minimal neural-network kit with explicit forward/backward passes: dense and
// convolutional layers (im2col + GEMM), group normalization, gather ops and
// Adam. Everything is seeded and single-threaded per model instance, so
// training runs are bit-reproducible.

#include <Eigen/Dense>

#include "svho/core.hpp"

namespace svho::nn {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

struct Param {
    std::string name;
    std::vector<int> shape;
    std::vector<float> value;
    std::vector<float> grad;
    std::vector<float> adam_m;
    std::vector<float> adam_v;

    Param() = default;
    Param(std::string n, std::vector<int> s) : name(std::move(n)), shape(std::move(s)) {
        std::size_t total = 1;
        for (int d : shape) total *= static_cast<std::size_t>(d);
        value.assign(total, 0.0f);
        grad.assign(total, 0.0f);
        adam_m.assign(total, 0.0f);
        adam_v.assign(total, 0.0f);
    }

    std::size_t size() const { return value.size(); }
    void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0f); }
};

inline void he_normal_init(Param& p, int fan_in, Rng& rng) {
    float std_dev = std::sqrt(2.0f / static_cast<float>(fan_in));
    for (auto& v : p.value) v = static_cast<float>(rng.normal()) * std_dev;
}

// ---------------------------------------------------------------------------

struct Adam {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long step_count = 0;

    void step(std::vector<Param*>& params) {
        ++step_count;
        double bc1 = 1.0 - std::pow(beta1, step_count);
        double bc2 = 1.0 - std::pow(beta2, step_count);
        for (Param* p : params) {
            for (std::size_t i = 0; i < p->size(); ++i) {
                double g = p->grad[i];
                double m = beta1 * p->adam_m[i] + (1.0 - beta1) * g;
                double v = beta2 * p->adam_v[i] + (1.0 - beta2) * g * g;
                p->adam_m[i] = static_cast<float>(m);
                p->adam_v[i] = static_cast<float>(v);
                double update = (m / bc1) / (std::sqrt(v / bc2) + eps);
                p->value[i] -= static_cast<float>(lr * update);
            }
        }
    }
};

// ---------------------------------------------------------------------------
// Linear: x [N, in] -> y [N, out], weight [out, in].

struct Linear {
    Param weight, bias;
    int in_dim = 0, out_dim = 0;

    Linear() = default;
    Linear(const std::string& name, int in, int out, Rng& rng)
        : weight(name + ".weight", {out, in}), bias(name + ".bias", {out}),
          in_dim(in), out_dim(out) {
        he_normal_init(weight, in, rng);
    }

    void collect(std::vector<Param*>& out) {
        out.push_back(&weight);
        out.push_back(&bias);
    }

    std::vector<float> forward(const std::vector<float>& x, int n) const {
        std::vector<float> y(static_cast<std::size_t>(n) * out_dim);
        ConstMapMat X(x.data(), n, in_dim);
        ConstMapMat W(weight.value.data(), out_dim, in_dim);
        MapMat Y(y.data(), n, out_dim);
        Y.noalias() = X * W.transpose();
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < out_dim; ++j) y[static_cast<std::size_t>(i) * out_dim + j] += bias.value[j];
        return y;
    }

    // Accumulates parameter gradients, returns dx.
    std::vector<float> backward(const std::vector<float>& x, const std::vector<float>& dy,
                                int n) {
        std::vector<float> dx(static_cast<std::size_t>(n) * in_dim);
        ConstMapMat X(x.data(), n, in_dim);
        ConstMapMat dY(dy.data(), n, out_dim);
        ConstMapMat W(weight.value.data(), out_dim, in_dim);
        MapMat dX(dx.data(), n, in_dim);
        MapMat dW(weight.grad.data(), out_dim, in_dim);
        dX.noalias() = dY * W;
        dW.noalias() += dY.transpose() * X;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < out_dim; ++j) bias.grad[j] += dy[static_cast<std::size_t>(i) * out_dim + j];
        return dx;
    }
};

// ---------------------------------------------------------------------------

inline void relu_inplace(std::vector<float>& x) {
    for (auto& v : x) v = v > 0.0f ? v : 0.0f;
}

// dx = dy where the forward output was positive.
inline std::vector<float> relu_backward(const std::vector<float>& y, const std::vector<float>& dy) {
    std::vector<float> dx(dy.size());
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = y[i] > 0.0f ? dy[i] : 0.0f;
    return dx;
}

// ---------------------------------------------------------------------------
// Conv3d over a single sample stored channel-major: x[((c*D+d)*H+h)*W+w].

struct Conv3d {
    Param weight, bias;  // weight [out_ch, in_ch * k^3]
    int in_ch = 0, out_ch = 0, kernel = 3, stride = 1, pad = 1;
    // Replicate padding clamps out-of-range taps to the border instead of
    // zero-filling; constant inputs then stay constant through the layer.
    bool replicate_pad = false;

    Conv3d() = default;
    Conv3d(const std::string& name, int in_c, int out_c, int k, int s, int p, Rng& rng,
           bool zero_init = false, bool replicate = false)
        : weight(name + ".weight", {out_c, in_c * k * k * k}), bias(name + ".bias", {out_c}),
          in_ch(in_c), out_ch(out_c), kernel(k), stride(s), pad(p), replicate_pad(replicate) {
        if (!zero_init) he_normal_init(weight, in_c * k * k * k, rng);
    }

    void collect(std::vector<Param*>& out) {
        out.push_back(&weight);
        out.push_back(&bias);
    }

    int out_size(int in_size) const { return (in_size + 2 * pad - kernel) / stride + 1; }

    // im2col matrix: [in_ch * k^3, out_units], out units ordered (d,h,w) w fastest.
    std::vector<float> im2col(const std::vector<float>& x, int D, int H, int W) const {
        int oD = out_size(D), oH = out_size(H), oW = out_size(W);
        std::size_t rows = static_cast<std::size_t>(in_ch) * kernel * kernel * kernel;
        std::size_t cols = static_cast<std::size_t>(oD) * oH * oW;
        std::vector<float> m(rows * cols, 0.0f);
        std::size_t r = 0;
        for (int c = 0; c < in_ch; ++c)
            for (int kd = 0; kd < kernel; ++kd)
                for (int kh = 0; kh < kernel; ++kh)
                    for (int kw = 0; kw < kernel; ++kw, ++r) {
                        float* row = &m[r * cols];
                        std::size_t q = 0;
                        for (int od = 0; od < oD; ++od) {
                            int d = od * stride - pad + kd;
                            for (int oh = 0; oh < oH; ++oh) {
                                int h = oh * stride - pad + kh;
                                for (int ow = 0; ow < oW; ++ow, ++q) {
                                    int w = ow * stride - pad + kw;
                                    if (replicate_pad) {
                                        int dc = std::clamp(d, 0, D - 1);
                                        int hc = std::clamp(h, 0, H - 1);
                                        int wc = std::clamp(w, 0, W - 1);
                                        row[q] = x[((static_cast<std::size_t>(c) * D + dc) * H + hc) * W + wc];
                                    } else if (d >= 0 && d < D && h >= 0 && h < H && w >= 0 &&
                                               w < W) {
                                        row[q] = x[((static_cast<std::size_t>(c) * D + d) * H + h) * W + w];
                                    }
                                }
                            }
                        }
                    }
        return m;
    }

    void col2im_add(const std::vector<float>& cols_grad, int D, int H, int W,
                    std::vector<float>& dx) const {
        int oD = out_size(D), oH = out_size(H), oW = out_size(W);
        std::size_t ncols = static_cast<std::size_t>(oD) * oH * oW;
        std::size_t r = 0;
        for (int c = 0; c < in_ch; ++c)
            for (int kd = 0; kd < kernel; ++kd)
                for (int kh = 0; kh < kernel; ++kh)
                    for (int kw = 0; kw < kernel; ++kw, ++r) {
                        const float* row = &cols_grad[r * ncols];
                        std::size_t q = 0;
                        for (int od = 0; od < oD; ++od) {
                            int d = od * stride - pad + kd;
                            for (int oh = 0; oh < oH; ++oh) {
                                int h = oh * stride - pad + kh;
                                for (int ow = 0; ow < oW; ++ow, ++q) {
                                    int w = ow * stride - pad + kw;
                                    if (replicate_pad) {
                                        int dc = std::clamp(d, 0, D - 1);
                                        int hc = std::clamp(h, 0, H - 1);
                                        int wc = std::clamp(w, 0, W - 1);
                                        dx[((static_cast<std::size_t>(c) * D + dc) * H + hc) * W + wc] += row[q];
                                    } else if (d >= 0 && d < D && h >= 0 && h < H && w >= 0 &&
                                               w < W) {
                                        dx[((static_cast<std::size_t>(c) * D + d) * H + h) * W + w] += row[q];
                                    }
                                }
                            }
                        }
                    }
    }

    std::vector<float> forward(const std::vector<float>& x, int D, int H, int W,
                               std::vector<float>* cols_cache = nullptr) const {
        int oD = out_size(D), oH = out_size(H), oW = out_size(W);
        std::size_t rows = static_cast<std::size_t>(in_ch) * kernel * kernel * kernel;
        std::size_t ncols = static_cast<std::size_t>(oD) * oH * oW;
        std::vector<float> cols = im2col(x, D, H, W);
        std::vector<float> y(static_cast<std::size_t>(out_ch) * ncols);
        ConstMapMat W_(weight.value.data(), out_ch, static_cast<int>(rows));
        ConstMapMat C(cols.data(), static_cast<int>(rows), static_cast<int>(ncols));
        MapMat Y(y.data(), out_ch, static_cast<int>(ncols));
        Y.noalias() = W_ * C;
        for (int c = 0; c < out_ch; ++c)
            for (std::size_t q = 0; q < ncols; ++q) y[c * ncols + q] += bias.value[c];
        if (cols_cache) *cols_cache = std::move(cols);
        return y;
    }

    std::vector<float> backward(const std::vector<float>& cols, const std::vector<float>& dy,
                                int D, int H, int W) {
        int oD = out_size(D), oH = out_size(H), oW = out_size(W);
        std::size_t rows = static_cast<std::size_t>(in_ch) * kernel * kernel * kernel;
        std::size_t ncols = static_cast<std::size_t>(oD) * oH * oW;

        ConstMapMat dY(dy.data(), out_ch, static_cast<int>(ncols));
        ConstMapMat C(cols.data(), static_cast<int>(rows), static_cast<int>(ncols));
        MapMat dW(weight.grad.data(), out_ch, static_cast<int>(rows));
        dW.noalias() += dY * C.transpose();
        for (int c = 0; c < out_ch; ++c)
            for (std::size_t q = 0; q < ncols; ++q) bias.grad[c] += dy[c * ncols + q];

        std::vector<float> dcols(rows * ncols);
        ConstMapMat W_(weight.value.data(), out_ch, static_cast<int>(rows));
        MapMat dC(dcols.data(), static_cast<int>(rows), static_cast<int>(ncols));
        dC.noalias() = W_.transpose() * dY;

        std::vector<float> dx(static_cast<std::size_t>(in_ch) * D * H * W, 0.0f);
        col2im_add(dcols, D, H, W, dx);
        return dx;
    }
};

// ---------------------------------------------------------------------------
// Conv2d over a single sample stored channel-major: x[(c*H+h)*W+w].

struct Conv2d {
    Param weight, bias;  // weight [out_ch, in_ch * k^2]
    int in_ch = 0, out_ch = 0, kernel = 3, stride = 1, pad = 1;

    Conv2d() = default;
    Conv2d(const std::string& name, int in_c, int out_c, int k, int s, int p, Rng& rng,
           bool zero_init = false)
        : weight(name + ".weight", {out_c, in_c * k * k}), bias(name + ".bias", {out_c}),
          in_ch(in_c), out_ch(out_c), kernel(k), stride(s), pad(p) {
        if (!zero_init) he_normal_init(weight, in_c * k * k, rng);
    }

    void collect(std::vector<Param*>& out) {
        out.push_back(&weight);
        out.push_back(&bias);
    }

    int out_size(int in_size) const { return (in_size + 2 * pad - kernel) / stride + 1; }

    std::vector<float> im2col(const std::vector<float>& x, int H, int W) const {
        int oH = out_size(H), oW = out_size(W);
        std::size_t rows = static_cast<std::size_t>(in_ch) * kernel * kernel;
        std::size_t cols = static_cast<std::size_t>(oH) * oW;
        std::vector<float> m(rows * cols, 0.0f);
        std::size_t r = 0;
        for (int c = 0; c < in_ch; ++c)
            for (int kh = 0; kh < kernel; ++kh)
                for (int kw = 0; kw < kernel; ++kw, ++r) {
                    float* row = &m[r * cols];
                    std::size_t q = 0;
                    for (int oh = 0; oh < oH; ++oh) {
                        int h = oh * stride - pad + kh;
                        for (int ow = 0; ow < oW; ++ow, ++q) {
                            int w = ow * stride - pad + kw;
                            if (h >= 0 && h < H && w >= 0 && w < W)
                                row[q] = x[(static_cast<std::size_t>(c) * H + h) * W + w];
                        }
                    }
                }
        return m;
    }

    void col2im_add(const std::vector<float>& cols_grad, int H, int W,
                    std::vector<float>& dx) const {
        int oH = out_size(H), oW = out_size(W);
        std::size_t ncols = static_cast<std::size_t>(oH) * oW;
        std::size_t r = 0;
        for (int c = 0; c < in_ch; ++c)
            for (int kh = 0; kh < kernel; ++kh)
                for (int kw = 0; kw < kernel; ++kw, ++r) {
                    const float* row = &cols_grad[r * ncols];
                    std::size_t q = 0;
                    for (int oh = 0; oh < oH; ++oh) {
                        int h = oh * stride - pad + kh;
                        for (int ow = 0; ow < oW; ++ow, ++q) {
                            int w = ow * stride - pad + kw;
                            if (h >= 0 && h < H && w >= 0 && w < W)
                                dx[(static_cast<std::size_t>(c) * H + h) * W + w] += row[q];
                        }
                    }
                }
    }

    std::vector<float> forward(const std::vector<float>& x, int H, int W,
                               std::vector<float>* cols_cache = nullptr) const {
        int oH = out_size(H), oW = out_size(W);
        std::size_t rows = static_cast<std::size_t>(in_ch) * kernel * kernel;
        std::size_t ncols = static_cast<std::size_t>(oH) * oW;
        std::vector<float> cols = im2col(x, H, W);
        std::vector<float> y(static_cast<std::size_t>(out_ch) * ncols);
        ConstMapMat W_(weight.value.data(), out_ch, static_cast<int>(rows));
        ConstMapMat C(cols.data(), static_cast<int>(rows), static_cast<int>(ncols));
        MapMat Y(y.data(), out_ch, static_cast<int>(ncols));
        Y.noalias() = W_ * C;
        for (int c = 0; c < out_ch; ++c)
            for (std::size_t q = 0; q < ncols; ++q) y[c * ncols + q] += bias.value[c];
        if (cols_cache) *cols_cache = std::move(cols);
        return y;
    }

    std::vector<float> backward(const std::vector<float>& cols, const std::vector<float>& dy,
                                int H, int W) {
        int oH = out_size(H), oW = out_size(W);
        std::size_t rows = static_cast<std::size_t>(in_ch) * kernel * kernel;
        std::size_t ncols = static_cast<std::size_t>(oH) * oW;

        ConstMapMat dY(dy.data(), out_ch, static_cast<int>(ncols));
        ConstMapMat C(cols.data(), static_cast<int>(rows), static_cast<int>(ncols));
        MapMat dW(weight.grad.data(), out_ch, static_cast<int>(rows));
        dW.noalias() += dY * C.transpose();
        for (int c = 0; c < out_ch; ++c)
            for (std::size_t q = 0; q < ncols; ++q) bias.grad[c] += dy[c * ncols + q];

        std::vector<float> dcols(rows * ncols);
        ConstMapMat W_(weight.value.data(), out_ch, static_cast<int>(rows));
        MapMat dC(dcols.data(), static_cast<int>(rows), static_cast<int>(ncols));
        dC.noalias() = W_.transpose() * dY;

        std::vector<float> dx(static_cast<std::size_t>(in_ch) * H * W, 0.0f);
        col2im_add(dcols, H, W, dx);
        return dx;
    }
};

// ---------------------------------------------------------------------------
// GroupNorm over [C, U] (U = flattened spatial units), per-sample statistics.

struct GroupNorm {
    Param gamma, beta;
    int channels = 0, groups = 1;
    double eps = 1e-5;

    struct Ctx {
        std::vector<float> x_hat;
        std::vector<double> inv_std;  // per group
        int units = 0;
    };

    GroupNorm() = default;
    GroupNorm(const std::string& name, int c, int g)
        : gamma(name + ".gamma", {c}), beta(name + ".beta", {c}), channels(c), groups(g) {
        if (c % g != 0) throw std::runtime_error("channels not divisible by groups");
        std::fill(gamma.value.begin(), gamma.value.end(), 1.0f);
    }

    void collect(std::vector<Param*>& out) {
        out.push_back(&gamma);
        out.push_back(&beta);
    }

    std::vector<float> forward(const std::vector<float>& x, int units, Ctx* ctx = nullptr) const {
        int cg = channels / groups;
        std::vector<float> y(x.size());
        std::vector<float> x_hat(x.size());
        std::vector<double> inv_stds(groups);
        for (int g = 0; g < groups; ++g) {
            std::size_t base = static_cast<std::size_t>(g) * cg * units;
            std::size_t m = static_cast<std::size_t>(cg) * units;
            double mean = 0.0;
            for (std::size_t i = 0; i < m; ++i) mean += x[base + i];
            mean /= static_cast<double>(m);
            double var = 0.0;
            for (std::size_t i = 0; i < m; ++i) {
                double d = x[base + i] - mean;
                var += d * d;
            }
            var /= static_cast<double>(m);
            double inv_std = 1.0 / std::sqrt(var + eps);
            inv_stds[g] = inv_std;
            for (int c = 0; c < cg; ++c) {
                int ch = g * cg + c;
                for (int u = 0; u < units; ++u) {
                    std::size_t i = base + static_cast<std::size_t>(c) * units + u;
                    float xh = static_cast<float>((x[i] - mean) * inv_std);
                    x_hat[i] = xh;
                    y[i] = gamma.value[ch] * xh + beta.value[ch];
                }
            }
        }
        if (ctx) {
            ctx->x_hat = std::move(x_hat);
            ctx->inv_std = std::move(inv_stds);
            ctx->units = units;
        }
        return y;
    }

    std::vector<float> backward(const Ctx& ctx, const std::vector<float>& dy) {
        int units = ctx.units;
        int cg = channels / groups;
        std::vector<float> dx(dy.size());
        for (int g = 0; g < groups; ++g) {
            std::size_t base = static_cast<std::size_t>(g) * cg * units;
            std::size_t m = static_cast<std::size_t>(cg) * units;
            double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
            for (int c = 0; c < cg; ++c) {
                int ch = g * cg + c;
                for (int u = 0; u < units; ++u) {
                    std::size_t i = base + static_cast<std::size_t>(c) * units + u;
                    double dxh = static_cast<double>(dy[i]) * gamma.value[ch];
                    sum_dxhat += dxh;
                    sum_dxhat_xhat += dxh * ctx.x_hat[i];
                    gamma.grad[ch] += dy[i] * ctx.x_hat[i];
                    beta.grad[ch] += dy[i];
                }
            }
            double inv_m = 1.0 / static_cast<double>(m);
            for (int c = 0; c < cg; ++c) {
                int ch = g * cg + c;
                for (int u = 0; u < units; ++u) {
                    std::size_t i = base + static_cast<std::size_t>(c) * units + u;
                    double dxh = static_cast<double>(dy[i]) * gamma.value[ch];
                    double v = dxh - inv_m * sum_dxhat - inv_m * sum_dxhat_xhat * ctx.x_hat[i];
                    dx[i] = static_cast<float>(v * ctx.inv_std[g]);
                }
            }
        }
        return dx;
    }
};

// ---------------------------------------------------------------------------
// Trilinear gather of a [V, S, S, S] cell cube at continuous cell-space
// coordinates; border clamp. Points use the convention where cell (i,j,k)'s
// center sits at coordinate (i+0.5, j+0.5, k+0.5).

struct TrilinearGather {
    struct Tap {
        int idx[8];
        float w[8];
    };

    // points: n x 3 cell coordinates.
    static std::vector<float> forward(const std::vector<float>& cube, int channels, int s,
                                      const std::vector<double>& points, int n,
                                      std::vector<Tap>* taps_cache = nullptr) {
        std::vector<float> out(static_cast<std::size_t>(n) * channels, 0.0f);
        std::vector<Tap> taps(n);
        std::size_t plane = static_cast<std::size_t>(s) * s;
        for (int q = 0; q < n; ++q) {
            double fx = points[q * 3 + 0] - 0.5;
            double fy = points[q * 3 + 1] - 0.5;
            double fz = points[q * 3 + 2] - 0.5;
            int x0 = static_cast<int>(std::floor(fx));
            int y0 = static_cast<int>(std::floor(fy));
            int z0 = static_cast<int>(std::floor(fz));
            double wx = fx - x0, wy = fy - y0, wz = fz - z0;
            auto ci = [s](int v) { return std::clamp(v, 0, s - 1); };
            Tap& t = taps[q];
            int corner = 0;
            for (int dx = 0; dx < 2; ++dx)
                for (int dy = 0; dy < 2; ++dy)
                    for (int dz = 0; dz < 2; ++dz, ++corner) {
                        t.idx[corner] = static_cast<int>((static_cast<std::size_t>(ci(x0 + dx)) * s + ci(y0 + dy)) * s +
                                                          ci(z0 + dz));
                        t.w[corner] = static_cast<float>((dx ? wx : 1 - wx) * (dy ? wy : 1 - wy) *
                                                         (dz ? wz : 1 - wz));
                    }
            float* dst = &out[static_cast<std::size_t>(q) * channels];
            for (int c = 0; c < channels; ++c) {
                const float* src = &cube[static_cast<std::size_t>(c) * plane * s];
                double acc = 0.0;
                for (int k = 0; k < 8; ++k) acc += src[t.idx[k]] * static_cast<double>(t.w[k]);
                dst[c] = static_cast<float>(acc);
            }
        }
        if (taps_cache) *taps_cache = std::move(taps);
        return out;
    }

    static void backward_into(const std::vector<Tap>& taps, const std::vector<float>& dout,
                              int channels, int s, std::vector<float>& dcube) {
        std::size_t cells = static_cast<std::size_t>(s) * s * s;
        for (std::size_t q = 0; q < taps.size(); ++q) {
            const Tap& t = taps[q];
            const float* g = &dout[q * channels];
            for (int c = 0; c < channels; ++c) {
                float* dst = &dcube[static_cast<std::size_t>(c) * cells];
                for (int k = 0; k < 8; ++k) dst[t.idx[k]] += g[c] * t.w[k];
            }
        }
    }
};

// ---------------------------------------------------------------------------
// Softmax + cross-entropy over rows of logits [n, k].

inline std::vector<float> softmax_rows(const std::vector<float>& logits, int n, int k) {
    std::vector<float> probs(logits.size());
    for (int i = 0; i < n; ++i) {
        const float* row = &logits[static_cast<std::size_t>(i) * k];
        float* out = &probs[static_cast<std::size_t>(i) * k];
        float mx = row[0];
        for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int j = 0; j < k; ++j) sum += std::exp(static_cast<double>(row[j] - mx));
        double log_sum = std::log(sum) + mx;
        for (int j = 0; j < k; ++j)
            out[j] = static_cast<float>(std::exp(static_cast<double>(row[j]) - log_sum));
    }
    return probs;
}

}  // namespace svho::nn
