// Numeric kernels behind the graph primitives and the layer-level tensor
// functions. Everything is templated on the scalar type so the float training
// path and the double verification path share one implementation.
//
// Batched buffers are record-major: X[b][...record dims...], flat.
// Backward kernels accumulate into the destination gradients.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <vector>

#include "thama/rng.hpp"

namespace thama::kernels {

template <typename S>
inline void axpy(std::size_t n, S a, const S* x, S* y) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

template <typename S>
inline S dot(std::size_t n, const S* x, const S* y) {
    S acc = 0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

// ---------------------------------------------------------------------------
// Linear maps. W is row-major [in x out]; Y[b] = X[b] . W is the column view
// y = W^T x. The transposed variant takes W as [out x in].
// ---------------------------------------------------------------------------

template <typename S>
void linear_fwd(std::size_t B, std::size_t in, std::size_t out,
                const S* X, const S* W, S* Y) {
    std::fill(Y, Y + B * out, S(0));
    for (std::size_t b = 0; b < B; ++b) {
        const S* x = X + b * in;
        S* y = Y + b * out;
        for (std::size_t i = 0; i < in; ++i) axpy(out, x[i], W + i * out, y);
    }
}

template <typename S>
void linear_bwd(std::size_t B, std::size_t in, std::size_t out,
                const S* X, const S* W, const S* dY, S* dX, S* dW) {
    for (std::size_t b = 0; b < B; ++b) {
        const S* x = X + b * in;
        const S* gy = dY + b * out;
        S* gx = dX + b * in;
        for (std::size_t i = 0; i < in; ++i) {
            gx[i] += dot(out, gy, W + i * out);
            axpy(out, x[i], gy, dW + i * out);
        }
    }
}

template <typename S>
void linear_t_fwd(std::size_t B, std::size_t in, std::size_t out,
                  const S* X, const S* W, S* Y) {
    for (std::size_t b = 0; b < B; ++b) {
        const S* x = X + b * in;
        S* y = Y + b * out;
        for (std::size_t o = 0; o < out; ++o) y[o] = dot(in, x, W + o * in);
    }
}

template <typename S>
void linear_t_bwd(std::size_t B, std::size_t in, std::size_t out,
                  const S* X, const S* W, const S* dY, S* dX, S* dW) {
    for (std::size_t b = 0; b < B; ++b) {
        const S* x = X + b * in;
        const S* gy = dY + b * out;
        S* gx = dX + b * in;
        for (std::size_t o = 0; o < out; ++o) {
            axpy(in, gy[o], W + o * in, gx);
            axpy(in, gy[o], x, dW + o * in);
        }
    }
}

// ---------------------------------------------------------------------------
// 1-D convolution as cross-correlation with zero same-padding (odd width).
// Lowered to one [Co x Ci*kw] by [Ci*kw x B*L] product per call; the patch
// matrix lives in caller-provided scratch so repeated calls do not allocate.
// ---------------------------------------------------------------------------

// Fills the patch matrix: row r = ci*kw + dk, column c = b*L + l,
// entry = X[b][ci][l + dk - kw/2] with zeros outside [0, L).
template <typename S>
void im2col(std::size_t B, std::size_t Ci, std::size_t L, std::size_t kw,
            const S* X, std::vector<S>& bcol) {
    const std::size_t cols = B * L;
    bcol.assign(Ci * kw * cols, S(0));
    const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(kw / 2);
    for (std::size_t ci = 0; ci < Ci; ++ci) {
        for (std::size_t dk = 0; dk < kw; ++dk) {
            S* row = bcol.data() + (ci * kw + dk) * cols;
            const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(dk) - off;
            const std::size_t lo = shift < 0 ? static_cast<std::size_t>(-shift) : 0;
            const std::size_t hi = shift > 0 ? L - static_cast<std::size_t>(shift) : L;
            for (std::size_t b = 0; b < B; ++b) {
                const S* src = X + (b * Ci + ci) * L;
                std::memcpy(row + b * L + lo, src + lo + shift, (hi - lo) * sizeof(S));
            }
        }
    }
}

template <typename S>
void conv1d_fwd(std::size_t B, std::size_t Ci, std::size_t L,
                std::size_t Co, std::size_t kw,
                const S* X, const S* K, const S* bias, S* Y,
                std::vector<S>& bcol, std::vector<S>& out2) {
    const std::size_t cols = B * L;
    const std::size_t ck = Ci * kw;
    im2col(B, Ci, L, kw, X, bcol);
    out2.assign(Co * cols, S(0));
    // Four patch rows per pass: quadruples the arithmetic between the
    // load/store pair on the accumulator row.
    for (std::size_t co = 0; co < Co; ++co) {
        S* orow = out2.data() + co * cols;
        const S* krow = K + co * ck;
        std::size_t r = 0;
        for (; r + 4 <= ck; r += 4) {
            const S k0 = krow[r], k1 = krow[r + 1], k2 = krow[r + 2], k3 = krow[r + 3];
            const S* b0 = bcol.data() + r * cols;
            const S* b1 = b0 + cols;
            const S* b2 = b1 + cols;
            const S* b3 = b2 + cols;
            for (std::size_t i = 0; i < cols; ++i)
                orow[i] += k0 * b0[i] + k1 * b1[i] + k2 * b2[i] + k3 * b3[i];
        }
        for (; r < ck; ++r) axpy(cols, krow[r], bcol.data() + r * cols, orow);
    }
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t co = 0; co < Co; ++co) {
            const S* orow = out2.data() + co * cols + b * L;
            S* y = Y + (b * Co + co) * L;
            const S bv = bias[co];
            for (std::size_t l = 0; l < L; ++l) y[l] = orow[l] + bv;
        }
    }
}

template <typename S>
void conv1d_bwd(std::size_t B, std::size_t Ci, std::size_t L,
                std::size_t Co, std::size_t kw,
                const S* X, const S* K, const S* dY,
                S* dX, S* dK, S* dBias,
                std::vector<S>& bcol, std::vector<S>& g2, std::vector<S>& dbcol) {
    const std::size_t cols = B * L;
    const std::size_t ck = Ci * kw;
    im2col(B, Ci, L, kw, X, bcol);

    g2.resize(Co * cols);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t co = 0; co < Co; ++co)
            std::memcpy(g2.data() + co * cols + b * L, dY + (b * Co + co) * L, L * sizeof(S));

    for (std::size_t co = 0; co < Co; ++co) {
        const S* grow = g2.data() + co * cols;
        S acc = 0;
        for (std::size_t c = 0; c < cols; ++c) acc += grow[c];
        dBias[co] += acc;
    }

    // Kernel and patch gradients together: per patch row, four output
    // channels share one sweep, producing four dot products and the patch
    // gradient row in the same pass.
    dbcol.assign(ck * cols, S(0));
    for (std::size_t r = 0; r < ck; ++r) {
        const S* brow = bcol.data() + r * cols;
        S* dbrow = dbcol.data() + r * cols;
        std::size_t co = 0;
        for (; co + 4 <= Co; co += 4) {
            const S* g0 = g2.data() + (co + 0) * cols;
            const S* g1 = g2.data() + (co + 1) * cols;
            const S* ga = g2.data() + (co + 2) * cols;
            const S* gb = g2.data() + (co + 3) * cols;
            const S k0 = K[(co + 0) * ck + r], k1 = K[(co + 1) * ck + r];
            const S k2 = K[(co + 2) * ck + r], k3 = K[(co + 3) * ck + r];
            S a0 = 0, a1 = 0, a2 = 0, a3 = 0;
            for (std::size_t i = 0; i < cols; ++i) {
                const S bv = brow[i];
                a0 += g0[i] * bv;
                a1 += g1[i] * bv;
                a2 += ga[i] * bv;
                a3 += gb[i] * bv;
                dbrow[i] += k0 * g0[i] + k1 * g1[i] + k2 * ga[i] + k3 * gb[i];
            }
            dK[(co + 0) * ck + r] += a0;
            dK[(co + 1) * ck + r] += a1;
            dK[(co + 2) * ck + r] += a2;
            dK[(co + 3) * ck + r] += a3;
        }
        for (; co < Co; ++co) {
            const S* grow = g2.data() + co * cols;
            dK[co * ck + r] += dot(cols, grow, brow);
            axpy(cols, K[co * ck + r], grow, dbrow);
        }
    }

    // col2im: accumulate patch gradients back onto the input.
    const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(kw / 2);
    for (std::size_t ci = 0; ci < Ci; ++ci) {
        for (std::size_t dk = 0; dk < kw; ++dk) {
            const S* row = dbcol.data() + (ci * kw + dk) * cols;
            const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(dk) - off;
            const std::size_t lo = shift < 0 ? static_cast<std::size_t>(-shift) : 0;
            const std::size_t hi = shift > 0 ? L - static_cast<std::size_t>(shift) : L;
            for (std::size_t b = 0; b < B; ++b) {
                S* dst = dX + (b * Ci + ci) * L;
                const S* src = row + b * L;
                for (std::size_t l = lo; l < hi; ++l) dst[l + shift] += src[l];
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Max pooling, non-overlapping windows, trailing remainder dropped. Ties go
// to the first index; argmax holds the absolute source position.
// ---------------------------------------------------------------------------

template <typename S>
void maxpool1d_fwd(std::size_t B, std::size_t C, std::size_t L, std::size_t pool,
                   const S* X, S* Y, std::uint32_t* argmax) {
    const std::size_t Lp = L / pool;
    for (std::size_t bc = 0; bc < B * C; ++bc) {
        const S* x = X + bc * L;
        S* y = Y + bc * Lp;
        std::uint32_t* am = argmax + bc * Lp;
        for (std::size_t w = 0; w < Lp; ++w) {
            std::size_t best = w * pool;
            for (std::size_t k = 1; k < pool; ++k)
                if (x[w * pool + k] > x[best]) best = w * pool + k;
            y[w] = x[best];
            am[w] = static_cast<std::uint32_t>(best);
        }
    }
}

template <typename S>
void maxpool1d_bwd(std::size_t B, std::size_t C, std::size_t L, std::size_t pool,
                   const std::uint32_t* argmax, const S* dY, S* dX) {
    const std::size_t Lp = L / pool;
    for (std::size_t bc = 0; bc < B * C; ++bc) {
        const std::uint32_t* am = argmax + bc * Lp;
        const S* gy = dY + bc * Lp;
        S* gx = dX + bc * L;
        for (std::size_t w = 0; w < Lp; ++w) gx[am[w]] += gy[w];
    }
}

// ---------------------------------------------------------------------------
// Activations. Backward passes read the stored outputs.
// ---------------------------------------------------------------------------

template <typename S>
inline void relu_fwd(std::size_t n, const S* x, S* y) {
    for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > S(0) ? x[i] : S(0);
}

template <typename S>
inline void relu_bwd(std::size_t n, const S* y, const S* dy, S* dx) {
    for (std::size_t i = 0; i < n; ++i) dx[i] += y[i] > S(0) ? dy[i] : S(0);
}

template <typename S>
inline S sigmoid_one(S x) {
    if (x >= S(0)) return S(1) / (S(1) + std::exp(-x));
    const S e = std::exp(x);
    return e / (S(1) + e);
}

template <typename S>
inline void sigmoid_fwd(std::size_t n, const S* x, S* y) {
    for (std::size_t i = 0; i < n; ++i) y[i] = sigmoid_one(x[i]);
}

template <typename S>
inline void sigmoid_bwd(std::size_t n, const S* y, const S* dy, S* dx) {
    for (std::size_t i = 0; i < n; ++i) dx[i] += dy[i] * y[i] * (S(1) - y[i]);
}

// ---------------------------------------------------------------------------
// Inverted dropout: survivors scale by 1/(1-rate) so inference is identity.
// ---------------------------------------------------------------------------

template <typename S>
void dropout_sample(std::size_t n, double rate, const S* x, S* y,
                    std::uint8_t* mask, Rng& rng) {
    const S scale = static_cast<S>(1.0 / (1.0 - rate));
    for (std::size_t i = 0; i < n; ++i) {
        const bool keep = rng.uniform() >= rate;
        mask[i] = keep ? 1 : 0;
        y[i] = keep ? x[i] * scale : S(0);
    }
}

template <typename S>
void dropout_replay(std::size_t n, double rate, const S* x, S* y,
                    const std::uint8_t* mask) {
    const S scale = static_cast<S>(1.0 / (1.0 - rate));
    for (std::size_t i = 0; i < n; ++i) y[i] = mask[i] ? x[i] * scale : S(0);
}

template <typename S>
void dropout_bwd(std::size_t n, double rate, const std::uint8_t* mask,
                 const S* dy, S* dx) {
    const S scale = static_cast<S>(1.0 / (1.0 - rate));
    for (std::size_t i = 0; i < n; ++i)
        if (mask[i]) dx[i] += dy[i] * scale;
}

// ---------------------------------------------------------------------------
// Bilinear contraction of a 3-way core with two vectors over its first two
// modes: Z[k] = sum_ij T[i][j][k] f1[i] f2[j]. T is row-major [r1][r2][r3].
// ---------------------------------------------------------------------------

template <typename S>
void bilinear_fwd(std::size_t B, std::size_t r1, std::size_t r2, std::size_t r3,
                  const S* F1, const S* F2, const S* T, S* Z) {
    std::fill(Z, Z + B * r3, S(0));
    for (std::size_t b = 0; b < B; ++b) {
        const S* f1 = F1 + b * r1;
        const S* f2 = F2 + b * r2;
        S* z = Z + b * r3;
        for (std::size_t i = 0; i < r1; ++i) {
            const S v1 = f1[i];
            if (v1 == S(0)) continue;
            for (std::size_t j = 0; j < r2; ++j)
                axpy(r3, v1 * f2[j], T + (i * r2 + j) * r3, z);
        }
    }
}

template <typename S>
void bilinear_bwd(std::size_t B, std::size_t r1, std::size_t r2, std::size_t r3,
                  const S* F1, const S* F2, const S* T, const S* dZ,
                  S* dF1, S* dF2, S* dT) {
    for (std::size_t b = 0; b < B; ++b) {
        const S* f1 = F1 + b * r1;
        const S* f2 = F2 + b * r2;
        const S* gz = dZ + b * r3;
        S* g1 = dF1 + b * r1;
        S* g2 = dF2 + b * r2;
        for (std::size_t i = 0; i < r1; ++i) {
            S acc1 = 0;
            for (std::size_t j = 0; j < r2; ++j) {
                const S* trow = T + (i * r2 + j) * r3;
                const S d = dot(r3, trow, gz); // sum_k T[i][j][k] gz[k]
                acc1 += d * f2[j];
                g2[j] += d * f1[i];
                axpy(r3, f1[i] * f2[j], gz, dT + (i * r2 + j) * r3);
            }
            g1[i] += acc1;
        }
    }
}

// ---------------------------------------------------------------------------
// Binary cross-entropy over probabilities, clamped to keep the logs finite.
// ---------------------------------------------------------------------------

inline constexpr double kBceClamp = 1e-7;

template <typename S>
S bce_fwd(std::size_t n, const S* p, const S* y) {
    const S lo = static_cast<S>(kBceClamp);
    const S hi = static_cast<S>(1.0 - kBceClamp);
    S acc = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const S pc = std::clamp(p[i], lo, hi);
        acc += -(y[i] * std::log(pc) + (S(1) - y[i]) * std::log(S(1) - pc));
    }
    return acc / static_cast<S>(n);
}

template <typename S>
void bce_bwd(std::size_t n, const S* p, const S* y, S upstream, S* dp) {
    const S lo = static_cast<S>(kBceClamp);
    const S hi = static_cast<S>(1.0 - kBceClamp);
    const S inv_n = upstream / static_cast<S>(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (p[i] <= lo || p[i] >= hi) continue; // clamped region is locally flat
        dp[i] += inv_n * (p[i] - y[i]) / (p[i] * (S(1) - p[i]));
    }
}

// BCE taken directly on logits: mean(softplus(z) - y z). Exact and finite for
// any logit, and the gradient sigmoid(z) - y never vanishes on confidently
// wrong records, unlike the clamped probability form.
template <typename S>
inline S softplus_one(S z) {
    const S az = z < S(0) ? -z : z;
    return std::log1p(std::exp(-az)) + (z > S(0) ? z : S(0));
}

template <typename S>
S bce_logits_fwd(std::size_t n, const S* z, const S* y) {
    S acc = 0;
    for (std::size_t i = 0; i < n; ++i) acc += softplus_one(z[i]) - y[i] * z[i];
    return acc / static_cast<S>(n);
}

template <typename S>
void bce_logits_bwd(std::size_t n, const S* z, const S* y, S upstream, S* dz) {
    const S inv_n = upstream / static_cast<S>(n);
    for (std::size_t i = 0; i < n; ++i) dz[i] += inv_n * (sigmoid_one(z[i]) - y[i]);
}

} // namespace thama::kernels
