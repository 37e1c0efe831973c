// Copyright 2026 the mnlab authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Forward/backward kernels for the layer kinds the graphs use. All loops
// are single-threaded with a fixed summation order, so results are
// bitwise reproducible for a given build.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "mnlab/tensor.hpp"

namespace mnlab::ops {

// ---------------------------------------------------------------------------
// Grouped 2-D convolution. x: [N, Cin, H, W], w: [Cout, Cin/g, K, K],
// b: [Cout] or empty. Padding is implicit "same" for odd K at stride 1.
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> conv2d_forward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b, int stride,
                          int pad, int groups) {
    const int N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Cout = w.dim(0), icpg = w.dim(1), K = w.dim(2);
    if (w.dim(3) != K) fail(ErrorCode::Shape, "conv2d: non-square kernel");
    if (groups < 1 || Cin % groups != 0 || Cout % groups != 0 || Cin / groups != icpg)
        fail(ErrorCode::Shape, "conv2d: channel/group mismatch (Cin=" + std::to_string(Cin) +
                                   ", Cout=" + std::to_string(Cout) + ", g=" + std::to_string(groups) + ")");
    const bool has_bias = !b.v.empty();
    if (has_bias && b.dim(0) != Cout) fail(ErrorCode::Shape, "conv2d: bias length mismatch");

    const int Ho = (H + 2 * pad - K) / stride + 1;
    const int Wo = (W + 2 * pad - K) / stride + 1;
    if (Ho < 1 || Wo < 1) fail(ErrorCode::Shape, "conv2d: output dims collapse");
    const int ocpg = Cout / groups;

    TensorT<T> y({N, Cout, Ho, Wo});
    for (int n = 0; n < N; ++n)
        for (int oc = 0; oc < Cout; ++oc) {
            const int ic0 = (oc / ocpg) * icpg;
            if (has_bias) {
                T* yrow = &y.at(n, oc, 0, 0);
                const T bias = b.v[static_cast<std::size_t>(oc)];
                for (int i = 0; i < Ho * Wo; ++i) yrow[i] = bias;
            }
            for (int icr = 0; icr < icpg; ++icr) {
                const int ic = ic0 + icr;
                for (int ky = 0; ky < K; ++ky)
                    for (int oy = 0; oy < Ho; ++oy) {
                        const int iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= H) continue;
                        const T* xrow = &x.at(n, ic, iy, 0);
                        T* yrow = &y.at(n, oc, oy, 0);
                        for (int kx = 0; kx < K; ++kx) {
                            const T wv = w.at(oc, icr, ky, kx);
                            const int lo = std::max(0, (pad - kx + stride - 1) / stride);
                            const int hi = std::min(Wo - 1, (W - 1 + pad - kx) / stride);
                            for (int ox = lo; ox <= hi; ++ox)
                                yrow[ox] += wv * xrow[ox * stride + kx - pad];
                        }
                    }
            }
        }
    return y;
}

template <typename T>
struct ConvGrads {
    TensorT<T> gx, gw, gb;
};

template <typename T>
ConvGrads<T> conv2d_backward(const TensorT<T>& x, const TensorT<T>& w, bool has_bias,
                             const TensorT<T>& gy, int stride, int pad, int groups) {
    const int N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Cout = w.dim(0), icpg = w.dim(1), K = w.dim(2);
    const int Ho = gy.dim(2), Wo = gy.dim(3);
    const int ocpg = Cout / groups;

    ConvGrads<T> g{TensorT<T>(x.shape), TensorT<T>(w.shape),
                   has_bias ? TensorT<T>({Cout}) : TensorT<T>()};
    for (int n = 0; n < N; ++n)
        for (int oc = 0; oc < Cout; ++oc) {
            const int ic0 = (oc / ocpg) * icpg;
            if (has_bias) {
                T acc = 0;
                const T* gyp = &gy.at(n, oc, 0, 0);
                for (int i = 0; i < Ho * Wo; ++i) acc += gyp[i];
                g.gb.v[static_cast<std::size_t>(oc)] += acc;
            }
            for (int icr = 0; icr < icpg; ++icr) {
                const int ic = ic0 + icr;
                for (int ky = 0; ky < K; ++ky)
                    for (int oy = 0; oy < Ho; ++oy) {
                        const int iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= H) continue;
                        const T* xrow = &x.at(n, ic, iy, 0);
                        T* gxrow = &g.gx.at(n, ic, iy, 0);
                        const T* gyrow = &gy.at(n, oc, oy, 0);
                        for (int kx = 0; kx < K; ++kx) {
                            const T wv = w.at(oc, icr, ky, kx);
                            const int lo = std::max(0, (pad - kx + stride - 1) / stride);
                            const int hi = std::min(Wo - 1, (W - 1 + pad - kx) / stride);
                            T acc = 0;
                            for (int ox = lo; ox <= hi; ++ox) {
                                const int ix = ox * stride + kx - pad;
                                gxrow[ix] += wv * gyrow[ox];
                                acc += xrow[ix] * gyrow[ox];
                            }
                            g.gw.at(oc, icr, ky, kx) += acc;
                        }
                    }
            }
        }
    return g;
}

// ---------------------------------------------------------------------------
// Grouped dense layer. x: [N, I], w: [O, I/g], block-diagonal coupling.
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> dense_forward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b, int groups) {
    const int N = x.dim(0), I = x.dim(1);
    const int O = w.dim(0), ipg = w.dim(1);
    if (groups < 1 || I % groups != 0 || O % groups != 0 || I / groups != ipg)
        fail(ErrorCode::Shape, "dense: feature/group mismatch");
    const bool has_bias = !b.v.empty();
    const int opg = O / groups;

    TensorT<T> y({N, O});
    for (int n = 0; n < N; ++n)
        for (int o = 0; o < O; ++o) {
            const int i0 = (o / opg) * ipg;
            T acc = has_bias ? b.v[static_cast<std::size_t>(o)] : T(0);
            const T* xp = &x.at(n, i0);
            const T* wp = &w.at(o, 0);
            for (int i = 0; i < ipg; ++i) acc += xp[i] * wp[i];
            y.at(n, o) = acc;
        }
    return y;
}

template <typename T>
ConvGrads<T> dense_backward(const TensorT<T>& x, const TensorT<T>& w, bool has_bias,
                            const TensorT<T>& gy, int groups) {
    const int N = x.dim(0), I = x.dim(1);
    const int O = w.dim(0), ipg = w.dim(1);
    const int opg = O / groups;
    (void)I;

    ConvGrads<T> g{TensorT<T>(x.shape), TensorT<T>(w.shape), has_bias ? TensorT<T>({O}) : TensorT<T>()};
    for (int n = 0; n < N; ++n)
        for (int o = 0; o < O; ++o) {
            const int i0 = (o / opg) * ipg;
            const T gyv = gy.at(n, o);
            if (has_bias) g.gb.v[static_cast<std::size_t>(o)] += gyv;
            const T* xp = &x.at(n, i0);
            const T* wp = &w.at(o, 0);
            T* gxp = &g.gx.at(n, i0);
            T* gwp = &g.gw.at(o, 0);
            for (int i = 0; i < ipg; ++i) {
                gwp[i] += gyv * xp[i];
                gxp[i] += gyv * wp[i];
            }
        }
    return g;
}

// ---------------------------------------------------------------------------
// Group-statistics normalization with per-channel affine. Statistics are
// computed per group over (batch, channels-in-group, H, W); with
// groups == C this is standard batch normalization. Train mode uses batch
// statistics and updates running buffers; Eval mode reads running buffers.
// ---------------------------------------------------------------------------

template <typename T>
struct NormSaved {
    TensorT<T> xhat;
    std::vector<T> invstd; // per group
};

template <typename T>
TensorT<T> norm_forward(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                        int groups, T eps, bool train, TensorT<T>& running_mean,
                        TensorT<T>& running_var, T momentum, NormSaved<T>* saved) {
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (C % groups != 0) fail(ErrorCode::Shape, "norm: channels not divisible by groups");
    if (gamma.dim(0) != C || beta.dim(0) != C) fail(ErrorCode::Shape, "norm: affine length mismatch");
    if (running_mean.dim(0) != groups || running_var.dim(0) != groups)
        fail(ErrorCode::Shape, "norm: running-stat length mismatch");
    const int cpg = C / groups;
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    const std::size_t m = static_cast<std::size_t>(N) * cpg * plane;

    TensorT<T> y(x.shape);
    if (saved) {
        saved->xhat = TensorT<T>(x.shape);
        saved->invstd.assign(static_cast<std::size_t>(groups), T(0));
    }

    for (int g = 0; g < groups; ++g) {
        T mean, var;
        if (train) {
            T sum = 0;
            for (int n = 0; n < N; ++n)
                for (int c = g * cpg; c < (g + 1) * cpg; ++c) {
                    const T* xp = &x.at(n, c, 0, 0);
                    for (std::size_t i = 0; i < plane; ++i) sum += xp[i];
                }
            mean = sum / static_cast<T>(m);
            T sq = 0;
            for (int n = 0; n < N; ++n)
                for (int c = g * cpg; c < (g + 1) * cpg; ++c) {
                    const T* xp = &x.at(n, c, 0, 0);
                    for (std::size_t i = 0; i < plane; ++i) {
                        const T d = xp[i] - mean;
                        sq += d * d;
                    }
                }
            var = sq / static_cast<T>(m); // biased, used for normalization
            const T var_unbiased = m > 1 ? sq / static_cast<T>(m - 1) : var;
            running_mean.v[static_cast<std::size_t>(g)] =
                (T(1) - momentum) * running_mean.v[static_cast<std::size_t>(g)] + momentum * mean;
            running_var.v[static_cast<std::size_t>(g)] =
                (T(1) - momentum) * running_var.v[static_cast<std::size_t>(g)] + momentum * var_unbiased;
        } else {
            mean = running_mean.v[static_cast<std::size_t>(g)];
            var = running_var.v[static_cast<std::size_t>(g)];
        }
        const T invstd = T(1) / std::sqrt(var + eps);
        if (saved) saved->invstd[static_cast<std::size_t>(g)] = invstd;

        for (int n = 0; n < N; ++n)
            for (int c = g * cpg; c < (g + 1) * cpg; ++c) {
                const T ga = gamma.v[static_cast<std::size_t>(c)];
                const T be = beta.v[static_cast<std::size_t>(c)];
                const T* xp = &x.at(n, c, 0, 0);
                T* yp = &y.at(n, c, 0, 0);
                T* hp = saved ? &saved->xhat.at(n, c, 0, 0) : nullptr;
                for (std::size_t i = 0; i < plane; ++i) {
                    const T xh = (xp[i] - mean) * invstd;
                    if (hp) hp[i] = xh;
                    yp[i] = ga * xh + be;
                }
            }
    }
    return y;
}

template <typename T>
struct NormGrads {
    TensorT<T> gx, ggamma, gbeta;
};

/// Backward through train-mode normalization (batch statistics are part
/// of the differentiated computation).
template <typename T>
NormGrads<T> norm_backward(const NormSaved<T>& saved, const TensorT<T>& gamma, const TensorT<T>& gy,
                           int groups) {
    const TensorT<T>& xhat = saved.xhat;
    const int N = xhat.dim(0), C = xhat.dim(1), H = xhat.dim(2), W = xhat.dim(3);
    const int cpg = C / groups;
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    const T m = static_cast<T>(static_cast<std::size_t>(N) * cpg * plane);

    NormGrads<T> g{TensorT<T>(xhat.shape), TensorT<T>({C}), TensorT<T>({C})};
    for (int grp = 0; grp < groups; ++grp) {
        // Per-channel affine grads and the two per-group reductions.
        T s1 = 0, s2 = 0;
        for (int n = 0; n < N; ++n)
            for (int c = grp * cpg; c < (grp + 1) * cpg; ++c) {
                const T ga = gamma.v[static_cast<std::size_t>(c)];
                const T* gyp = &gy.at(n, c, 0, 0);
                const T* hp = &xhat.at(n, c, 0, 0);
                T dg = 0, db = 0;
                for (std::size_t i = 0; i < plane; ++i) {
                    dg += gyp[i] * hp[i];
                    db += gyp[i];
                    const T dxh = gyp[i] * ga;
                    s1 += dxh;
                    s2 += dxh * hp[i];
                }
                g.ggamma.v[static_cast<std::size_t>(c)] += dg;
                g.gbeta.v[static_cast<std::size_t>(c)] += db;
            }
        const T invstd = saved.invstd[static_cast<std::size_t>(grp)];
        for (int n = 0; n < N; ++n)
            for (int c = grp * cpg; c < (grp + 1) * cpg; ++c) {
                const T ga = gamma.v[static_cast<std::size_t>(c)];
                const T* gyp = &gy.at(n, c, 0, 0);
                const T* hp = &xhat.at(n, c, 0, 0);
                T* gxp = &g.gx.at(n, c, 0, 0);
                for (std::size_t i = 0; i < plane; ++i) {
                    const T dxh = gyp[i] * ga;
                    gxp[i] = (invstd / m) * (m * dxh - s1 - hp[i] * s2);
                }
            }
    }
    return g;
}

/// Backward through eval-mode normalization (running stats are constants).
template <typename T>
NormGrads<T> norm_backward_eval(const NormSaved<T>& saved, const TensorT<T>& gamma,
                                const TensorT<T>& gy, int groups) {
    const TensorT<T>& xhat = saved.xhat;
    const int N = xhat.dim(0), C = xhat.dim(1), H = xhat.dim(2), W = xhat.dim(3);
    const int cpg = C / groups;
    const std::size_t plane = static_cast<std::size_t>(H) * W;

    NormGrads<T> g{TensorT<T>(xhat.shape), TensorT<T>({C}), TensorT<T>({C})};
    for (int grp = 0; grp < groups; ++grp) {
        const T invstd = saved.invstd[static_cast<std::size_t>(grp)];
        for (int n = 0; n < N; ++n)
            for (int c = grp * cpg; c < (grp + 1) * cpg; ++c) {
                const T ga = gamma.v[static_cast<std::size_t>(c)];
                const T* gyp = &gy.at(n, c, 0, 0);
                const T* hp = &xhat.at(n, c, 0, 0);
                T* gxp = &g.gx.at(n, c, 0, 0);
                T dg = 0, db = 0;
                for (std::size_t i = 0; i < plane; ++i) {
                    dg += gyp[i] * hp[i];
                    db += gyp[i];
                    gxp[i] = gyp[i] * ga * invstd;
                }
                g.ggamma.v[static_cast<std::size_t>(c)] += dg;
                g.gbeta.v[static_cast<std::size_t>(c)] += db;
            }
    }
    return g;
}

// ---------------------------------------------------------------------------
// Pointwise / pooling / aggregation.
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> relu_forward(const TensorT<T>& x) {
    TensorT<T> y;
    y.shape = x.shape;
    y.v.resize(x.v.size());
    for (std::size_t i = 0; i < x.v.size(); ++i) y.v[i] = x.v[i] > T(0) ? x.v[i] : T(0);
    return y;
}

template <typename T>
TensorT<T> relu_backward(const TensorT<T>& x, const TensorT<T>& gy) {
    TensorT<T> gx;
    gx.shape = x.shape;
    gx.v.resize(x.v.size());
    for (std::size_t i = 0; i < x.v.size(); ++i) gx.v[i] = x.v[i] > T(0) ? gy.v[i] : T(0);
    return gx;
}

template <typename T>
TensorT<T> avgpool2_forward(const TensorT<T>& x) {
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H < 2 || W < 2) fail(ErrorCode::Shape, "avgpool2: input too small");
    const int Ho = H / 2, Wo = W / 2;
    TensorT<T> y({N, C, Ho, Wo});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int oy = 0; oy < Ho; ++oy)
                for (int ox = 0; ox < Wo; ++ox)
                    y.at(n, c, oy, ox) = (x.at(n, c, 2 * oy, 2 * ox) + x.at(n, c, 2 * oy, 2 * ox + 1) +
                                          x.at(n, c, 2 * oy + 1, 2 * ox) + x.at(n, c, 2 * oy + 1, 2 * ox + 1)) /
                                         T(4);
    return y;
}

template <typename T>
TensorT<T> avgpool2_backward(const TensorT<T>& x, const TensorT<T>& gy) {
    const int N = x.dim(0), C = x.dim(1);
    const int Ho = gy.dim(2), Wo = gy.dim(3);
    TensorT<T> gx(x.shape);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int oy = 0; oy < Ho; ++oy)
                for (int ox = 0; ox < Wo; ++ox) {
                    const T gv = gy.at(n, c, oy, ox) / T(4);
                    gx.at(n, c, 2 * oy, 2 * ox) += gv;
                    gx.at(n, c, 2 * oy, 2 * ox + 1) += gv;
                    gx.at(n, c, 2 * oy + 1, 2 * ox) += gv;
                    gx.at(n, c, 2 * oy + 1, 2 * ox + 1) += gv;
                }
    return gx;
}

template <typename T>
TensorT<T> global_avgpool_forward(const TensorT<T>& x) {
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    TensorT<T> y({N, C});
    const T inv = T(1) / static_cast<T>(H * W);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T* xp = &x.at(n, c, 0, 0);
            T acc = 0;
            for (int i = 0; i < H * W; ++i) acc += xp[i];
            y.at(n, c) = acc * inv;
        }
    return y;
}

template <typename T>
TensorT<T> global_avgpool_backward(const TensorT<T>& x, const TensorT<T>& gy) {
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    TensorT<T> gx(x.shape);
    const T inv = T(1) / static_cast<T>(H * W);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T gv = gy.at(n, c) * inv;
            T* gxp = &gx.at(n, c, 0, 0);
            for (int i = 0; i < H * W; ++i) gxp[i] = gv;
        }
    return gx;
}

template <typename T>
TensorT<T> add_forward(const TensorT<T>& a, const TensorT<T>& b) {
    if (!a.same_shape(b))
        fail(ErrorCode::Shape, "add: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    TensorT<T> y;
    y.shape = a.shape;
    y.v.resize(a.v.size());
    for (std::size_t i = 0; i < a.v.size(); ++i) y.v[i] = a.v[i] + b.v[i];
    return y;
}

/// Mean over M contiguous class blocks: [N, M*C] -> [N, C]. Paths are
/// summed in ascending index order (the declared deterministic order).
template <typename T>
TensorT<T> aggregate_forward(const TensorT<T>& x, int paths) {
    const int N = x.dim(0), MC = x.dim(1);
    if (paths < 1 || MC % paths != 0) fail(ErrorCode::Shape, "aggregate: width not divisible by paths");
    const int C = MC / paths;
    TensorT<T> y({N, C});
    const T inv = T(1) / static_cast<T>(paths);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            T acc = 0;
            for (int m = 0; m < paths; ++m) acc += x.at(n, m * C + c);
            y.at(n, c) = acc * inv;
        }
    return y;
}

template <typename T>
TensorT<T> aggregate_backward(int paths, int n_in, const TensorT<T>& gy) {
    const int N = gy.dim(0), C = gy.dim(1);
    if (n_in != paths * C) fail(ErrorCode::Shape, "aggregate backward: width mismatch");
    TensorT<T> gx({N, n_in});
    const T inv = T(1) / static_cast<T>(paths);
    for (int n = 0; n < N; ++n)
        for (int m = 0; m < paths; ++m)
            for (int c = 0; c < C; ++c) gx.at(n, m * C + c) = gy.at(n, c) * inv;
    return gx;
}

// ---------------------------------------------------------------------------
// Softmax and losses.
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> softmax_forward(const TensorT<T>& z) {
    const int N = z.dim(0), C = z.dim(1);
    TensorT<T> p({N, C});
    for (int n = 0; n < N; ++n) {
        T mx = z.at(n, 0);
        for (int c = 1; c < C; ++c) mx = std::max(mx, z.at(n, c));
        T sum = 0;
        for (int c = 0; c < C; ++c) {
            const T e = std::exp(z.at(n, c) - mx);
            p.at(n, c) = e;
            sum += e;
        }
        for (int c = 0; c < C; ++c) p.at(n, c) /= sum;
    }
    return p;
}

template <typename T>
TensorT<T> softmax_backward(const TensorT<T>& p, const TensorT<T>& gp) {
    const int N = p.dim(0), C = p.dim(1);
    TensorT<T> gz({N, C});
    for (int n = 0; n < N; ++n) {
        T dot = 0;
        for (int c = 0; c < C; ++c) dot += gp.at(n, c) * p.at(n, c);
        for (int c = 0; c < C; ++c) gz.at(n, c) = p.at(n, c) * (gp.at(n, c) - dot);
    }
    return gz;
}

template <typename T>
struct LossResult {
    T loss = 0;
    TensorT<T> grad; // d loss / d logits
};

/// Mean softmax cross-entropy over the batch, max-subtraction stabilized.
template <typename T>
LossResult<T> softmax_xent(const TensorT<T>& logits, const std::vector<int>& labels) {
    const int N = logits.dim(0), C = logits.dim(1);
    if (static_cast<int>(labels.size()) != N) fail(ErrorCode::Shape, "softmax_xent: label count mismatch");
    for (int n = 0; n < N; ++n)
        if (labels[static_cast<std::size_t>(n)] < 0 || labels[static_cast<std::size_t>(n)] >= C)
            fail(ErrorCode::InvalidArgument,
                 "softmax_xent: label " + std::to_string(labels[static_cast<std::size_t>(n)]) +
                     " out of range [0," + std::to_string(C) + ")");

    LossResult<T> r;
    r.grad = TensorT<T>({N, C});
    T total = 0;
    const T invn = T(1) / static_cast<T>(N);
    for (int n = 0; n < N; ++n) {
        const int y = labels[static_cast<std::size_t>(n)];
        T mx = logits.at(n, 0);
        for (int c = 1; c < C; ++c) mx = std::max(mx, logits.at(n, c));
        T sum = 0;
        for (int c = 0; c < C; ++c) sum += std::exp(logits.at(n, c) - mx);
        total += std::log(sum) - (logits.at(n, y) - mx);
        for (int c = 0; c < C; ++c) {
            const T p = std::exp(logits.at(n, c) - mx) / sum;
            r.grad.at(n, c) = (p - (c == y ? T(1) : T(0))) * invn;
        }
    }
    r.loss = total * invn;
    return r;
}

/// Probability-averaging loss: -mean_n log( (1/M) sum_m softmax(z_m)[y] ).
/// Gradient is analytic; used when aggregation mode is "probs".
template <typename T>
LossResult<T> prob_aggregate_xent(const TensorT<T>& path_logits, int paths,
                                  const std::vector<int>& labels) {
    const int N = path_logits.dim(0), MC = path_logits.dim(1);
    if (paths < 1 || MC % paths != 0) fail(ErrorCode::Shape, "prob_aggregate_xent: width mismatch");
    const int C = MC / paths;
    if (static_cast<int>(labels.size()) != N)
        fail(ErrorCode::Shape, "prob_aggregate_xent: label count mismatch");

    LossResult<T> r;
    r.grad = TensorT<T>({N, MC});
    T total = 0;
    const T invn = T(1) / static_cast<T>(N);
    std::vector<T> probs(static_cast<std::size_t>(MC));
    for (int n = 0; n < N; ++n) {
        const int y = labels[static_cast<std::size_t>(n)];
        if (y < 0 || y >= C)
            fail(ErrorCode::InvalidArgument, "prob_aggregate_xent: label out of range");
        T pbar_y = 0;
        for (int m = 0; m < paths; ++m) {
            const int base = m * C;
            T mx = path_logits.at(n, base);
            for (int c = 1; c < C; ++c) mx = std::max(mx, path_logits.at(n, base + c));
            T sum = 0;
            for (int c = 0; c < C; ++c) sum += std::exp(path_logits.at(n, base + c) - mx);
            for (int c = 0; c < C; ++c)
                probs[static_cast<std::size_t>(base + c)] = std::exp(path_logits.at(n, base + c) - mx) / sum;
            pbar_y += probs[static_cast<std::size_t>(base + y)];
        }
        pbar_y /= static_cast<T>(paths);
        total -= std::log(std::max(pbar_y, std::numeric_limits<T>::min()));
        const T scale = invn / (static_cast<T>(paths) * pbar_y);
        for (int m = 0; m < paths; ++m) {
            const int base = m * C;
            const T py = probs[static_cast<std::size_t>(base + y)];
            for (int c = 0; c < C; ++c) {
                const T pc = probs[static_cast<std::size_t>(base + c)];
                r.grad.at(n, base + c) = scale * pc * (py - (c == y ? T(1) : T(0)));
            }
        }
    }
    r.loss = total * invn;
    return r;
}

} // namespace mnlab::ops
