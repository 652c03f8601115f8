// Two-view fusion math: shared-space projection, bilinear fusion through a
// trainable 3-way core (full or Tucker-factored), element-wise squaring of the
// fused vector, and the concatenation baseline.
#pragma once

#include <array>
#include <vector>

#include "thama/kernels.hpp"
#include "thama/tensor.hpp"

namespace thama::fusion {

template <typename S>
struct SharedProjectionT {
    TensorT<S> w1; // [d1' x d_f]
    TensorT<S> w2; // [d2' x d_f]
};
using SharedProjection = SharedProjectionT<float>;

template <typename S>
struct TuckerCoreFullT {
    TensorT<S> t; // [d_f x d_f x d_f]
};
using TuckerCoreFull = TuckerCoreFullT<float>;

// T = G x1 A x2 B x3 C with core G [r1 x r2 x r3] and factors mapping each
// rank back to d_f.
template <typename S>
struct TuckerCoreFactoredT {
    TensorT<S> g; // [r1 x r2 x r3]
    TensorT<S> a; // [d_f x r1]
    TensorT<S> b; // [d_f x r2]
    TensorT<S> c; // [d_f x r3]
};
using TuckerCoreFactored = TuckerCoreFactoredT<float>;

template <typename S>
struct FusedVectorT {
    TensorT<S> z; // bilinear fusion output
    TensorT<S> h; // element-wise square of z
};

template <typename S>
void validate_factored(const TuckerCoreFactoredT<S>& core) {
    if (core.g.rank() != 3 || core.a.rank() != 2 || core.b.rank() != 2 ||
        core.c.rank() != 2)
        throw ShapeError("tucker core: malformed factor ranks");
    const std::size_t d_f = core.a.extent(0);
    if (core.b.extent(0) != d_f || core.c.extent(0) != d_f)
        throw ShapeError("tucker core: factors disagree on d_f");
    const std::array<std::size_t, 3> r{core.g.extent(0), core.g.extent(1),
                                       core.g.extent(2)};
    if (core.a.extent(1) != r[0] || core.b.extent(1) != r[1] || core.c.extent(1) != r[2])
        throw ShapeError("tucker core: factor columns disagree with core extents");
    for (std::size_t ri : r)
        if (ri < 1 || ri > d_f)
            throw ShapeError("tucker core: ranks must lie in [1, d_f]");
}

// F = W^T x with W stored [d' x d_f]; no bias term.
template <typename S>
TensorT<S> project(const TensorT<S>& x_flat, const TensorT<S>& w) {
    if (x_flat.rank() != 1 || w.rank() != 2)
        throw ShapeError("project: expects a vector and a rank-2 matrix");
    if (x_flat.extent(0) != w.extent(0))
        throw ShapeError("project: input dim " + std::to_string(x_flat.extent(0)) +
                         " vs projection rows " + std::to_string(w.extent(0)));
    TensorT<S> out({w.extent(1)});
    kernels::linear_fwd(std::size_t{1}, x_flat.extent(0), out.extent(0), x_flat.data(),
                        w.data(), out.data());
    return out;
}

// Z[k] = sum_ij T[i][j][k] F1[i] F2[j].
template <typename S>
TensorT<S> tucker_fuse_full(const TensorT<S>& f1, const TensorT<S>& f2,
                            const TuckerCoreFullT<S>& core) {
    if (f1.rank() != 1 || f2.rank() != 1 || core.t.rank() != 3)
        throw ShapeError("tucker_fuse_full: expects two vectors and a rank-3 core");
    if (core.t.extent(0) != f1.extent(0) || core.t.extent(1) != f2.extent(0))
        throw ShapeError("tucker_fuse_full: core " + shape_str(core.t.shape()) +
                         " incompatible with inputs");
    TensorT<S> z({core.t.extent(2)});
    kernels::bilinear_fwd(std::size_t{1}, core.t.extent(0), core.t.extent(1),
                          core.t.extent(2), f1.data(), f2.data(), core.t.data(),
                          z.data());
    return z;
}

// Z = C (G x1 A^T F1 x2 B^T F2): project each input onto its rank space,
// contract with the small core, then map the result back through C.
template <typename S>
TensorT<S> tucker_fuse_factored(const TensorT<S>& f1, const TensorT<S>& f2,
                                const TuckerCoreFactoredT<S>& core) {
    validate_factored(core);
    const std::size_t d_f = core.a.extent(0);
    if (f1.shape() != Shape{d_f} || f2.shape() != Shape{d_f})
        throw ShapeError("tucker_fuse_factored: inputs must have dim " +
                         std::to_string(d_f));
    const std::size_t r1 = core.g.extent(0), r2 = core.g.extent(1),
                      r3 = core.g.extent(2);
    TensorT<S> p1({r1}), p2({r2});
    kernels::linear_fwd(std::size_t{1}, d_f, r1, f1.data(), core.a.data(), p1.data());
    kernels::linear_fwd(std::size_t{1}, d_f, r2, f2.data(), core.b.data(), p2.data());
    TensorT<S> mid({r3});
    kernels::bilinear_fwd(std::size_t{1}, r1, r2, r3, p1.data(), p2.data(),
                          core.g.data(), mid.data());
    TensorT<S> z({d_f});
    kernels::linear_t_fwd(std::size_t{1}, r3, d_f, mid.data(), core.c.data(), z.data());
    return z;
}

// T[i][j][k] = sum_abc G[a][b][c] A[i][a] B[j][b] C[k][c], staged one mode at
// a time.
template <typename S>
TuckerCoreFullT<S> reconstruct_core(const TuckerCoreFactoredT<S>& core) {
    validate_factored(core);
    const std::size_t d_f = core.a.extent(0);
    const std::size_t r1 = core.g.extent(0), r2 = core.g.extent(1),
                      r3 = core.g.extent(2);
    // stage 1: s1[a][b][k] = sum_c G[a][b][c] C[k][c]
    std::vector<S> s1(r1 * r2 * d_f, S(0));
    for (std::size_t a = 0; a < r1; ++a)
        for (std::size_t b = 0; b < r2; ++b)
            for (std::size_t k = 0; k < d_f; ++k)
                s1[(a * r2 + b) * d_f + k] =
                    kernels::dot(r3, &core.g.at(a, b, 0), &core.c.at(k, 0));
    // stage 2: s2[a][j][k] = sum_b B[j][b] s1[a][b][k]
    std::vector<S> s2(r1 * d_f * d_f, S(0));
    for (std::size_t a = 0; a < r1; ++a)
        for (std::size_t j = 0; j < d_f; ++j)
            for (std::size_t b = 0; b < r2; ++b)
                kernels::axpy(d_f, core.b.at(j, b), &s1[(a * r2 + b) * d_f],
                              &s2[(a * d_f + j) * d_f]);
    // stage 3: T[i][j][k] = sum_a A[i][a] s2[a][j][k]
    TuckerCoreFullT<S> full{TensorT<S>({d_f, d_f, d_f})};
    for (std::size_t i = 0; i < d_f; ++i)
        for (std::size_t a = 0; a < r1; ++a)
            kernels::axpy(d_f * d_f, core.a.at(i, a), &s2[a * d_f * d_f],
                          &full.t.at(i, 0, 0));
    return full;
}

// H = Z (.) Z, element-wise.
template <typename S>
TensorT<S> hadamard_square(const TensorT<S>& z) {
    TensorT<S> h(z.shape());
    for (std::size_t i = 0; i < z.numel(); ++i) h[i] = z[i] * z[i];
    return h;
}

template <typename S>
FusedVectorT<S> fuse(const TensorT<S>& f1, const TensorT<S>& f2,
                     const TuckerCoreFullT<S>& core) {
    FusedVectorT<S> out;
    out.z = tucker_fuse_full(f1, f2, core);
    out.h = hadamard_square(out.z);
    return out;
}

// Baseline fusion: plain concatenation, view 1 leading.
template <typename S>
TensorT<S> concat_fuse(const TensorT<S>& x1_flat, const TensorT<S>& x2_flat) {
    if (x1_flat.rank() != 1 || x2_flat.rank() != 1 || x1_flat.numel() == 0 ||
        x2_flat.numel() == 0)
        throw ShapeError("concat_fuse: both views must be non-empty vectors");
    TensorT<S> out({x1_flat.numel() + x2_flat.numel()});
    std::copy(x1_flat.data(), x1_flat.data() + x1_flat.numel(), out.data());
    std::copy(x2_flat.data(), x2_flat.data() + x2_flat.numel(),
              out.data() + x1_flat.numel());
    return out;
}

} // namespace thama::fusion
