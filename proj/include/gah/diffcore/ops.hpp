#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "gah/diffcore/array.hpp"

namespace gah {

namespace detail {

inline Array make_result(Shape shape, std::vector<double> value, std::initializer_list<Array> inputs,
                         std::function<void(Node&)> backward)
{
    Array out(std::move(shape), std::move(value));
    bool needs_grad = false;
    for (const Array& in : inputs) {
        needs_grad = needs_grad || in.requires_grad();
    }
    if (needs_grad) {
        Node& n = *out.node();
        n.requires_grad = true;
        for (const Array& in : inputs) {
            n.parents.push_back(in.node());
        }
        n.backward = std::move(backward);
    }
    return out;
}

inline Array make_result(Shape shape, std::vector<double> value, const std::vector<Array>& inputs,
                         std::function<void(Node&)> backward)
{
    Array out(std::move(shape), std::move(value));
    bool needs_grad = false;
    for (const Array& in : inputs) {
        needs_grad = needs_grad || in.requires_grad();
    }
    if (needs_grad) {
        Node& n = *out.node();
        n.requires_grad = true;
        for (const Array& in : inputs) {
            n.parents.push_back(in.node());
        }
        n.backward = std::move(backward);
    }
    return out;
}

/// Gradient buffer of `a`, or nullptr when `a` is not on the tape.
inline double* grad_ptr(const Array& a)
{
    return a.requires_grad() ? a.node()->grad.data() : nullptr;
}

/// Splits a shape around `axis` into (outer, length, inner) extents.
struct AxisSplit {
    std::size_t outer = 1;
    std::size_t length = 1;
    std::size_t inner = 1;
};

inline AxisSplit split_axis(const Shape& shape, std::size_t axis)
{
    AxisSplit s;
    for (std::size_t i = 0; i < axis; ++i) {
        s.outer *= shape[i];
    }
    s.length = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) {
        s.inner *= shape[i];
    }
    return s;
}

inline Shape broadcast_shape(const Shape& a, const Shape& b)
{
    const std::size_t r = std::max(a.size(), b.size());
    Shape out(r, 1);
    for (std::size_t i = 0; i < r; ++i) {
        const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (da != db && da != 1 && db != 1) {
            throw ShapeError("cannot broadcast shapes " + to_string(a) + " and " + to_string(b));
        }
        out[i] = std::max(da, db);
    }
    return out;
}

/// For every flat index of `out`, the flat index into `in` under broadcasting.
inline std::vector<std::size_t> broadcast_index(const Shape& out, const Shape& in)
{
    const std::size_t r = out.size();
    std::vector<std::size_t> stride(r, 0);
    std::size_t s = 1;
    for (std::size_t i = in.size(); i-- > 0;) {
        const std::size_t oi = i + (r - in.size());
        stride[oi] = in[i] == 1 ? 0 : s;
        s *= in[i];
    }
    const std::size_t n = numel(out);
    std::vector<std::size_t> idx(n);
    std::vector<std::size_t> counter(r, 0);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < n; ++k) {
        idx[k] = offset;
        for (std::size_t d = r; d-- > 0;) {
            ++counter[d];
            offset += stride[d];
            if (counter[d] < out[d]) {
                break;
            }
            offset -= stride[d] * counter[d];
            counter[d] = 0;
        }
    }
    return idx;
}

template <class Fwd, class DA, class DB>
Array binary(const Array& a, const Array& b, Fwd fwd, DA da, DB db)
{
    if (a.shape() == b.shape()) {
        const std::size_t n = a.size();
        std::vector<double> v(n);
        const auto x = a.data();
        const auto y = b.data();
        for (std::size_t i = 0; i < n; ++i) {
            v[i] = fwd(x[i], y[i]);
        }
        return make_result(a.shape(), std::move(v), {a, b}, [a, b, da, db](Node& self) {
            const auto x = a.data();
            const auto y = b.data();
            double* ga = grad_ptr(a);
            double* gb = grad_ptr(b);
            for (std::size_t i = 0; i < self.value.size(); ++i) {
                const double g = self.grad[i];
                if (ga) {
                    ga[i] += g * da(x[i], y[i], self.value[i]);
                }
                if (gb) {
                    gb[i] += g * db(x[i], y[i], self.value[i]);
                }
            }
        });
    }
    Shape out = broadcast_shape(a.shape(), b.shape());
    auto ia = broadcast_index(out, a.shape());
    auto ib = broadcast_index(out, b.shape());
    std::vector<double> v(ia.size());
    const auto x = a.data();
    const auto y = b.data();
    for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = fwd(x[ia[i]], y[ib[i]]);
    }
    return make_result(std::move(out), std::move(v), {a, b},
                       [a, b, da, db, ia = std::move(ia), ib = std::move(ib)](Node& self) {
                           const auto x = a.data();
                           const auto y = b.data();
                           double* ga = grad_ptr(a);
                           double* gb = grad_ptr(b);
                           for (std::size_t i = 0; i < self.value.size(); ++i) {
                               const double g = self.grad[i];
                               const double xi = x[ia[i]];
                               const double yi = y[ib[i]];
                               if (ga) {
                                   ga[ia[i]] += g * da(xi, yi, self.value[i]);
                               }
                               if (gb) {
                                   gb[ib[i]] += g * db(xi, yi, self.value[i]);
                               }
                           }
                       });
}

template <class Fwd, class D>
Array unary(const Array& a, Fwd fwd, D deriv)
{
    const auto x = a.data();
    std::vector<double> v(x.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = fwd(x[i]);
    }
    return make_result(a.shape(), std::move(v), {a}, [a, deriv](Node& self) {
        const auto x = a.data();
        double* ga = grad_ptr(a);
        for (std::size_t i = 0; i < self.value.size(); ++i) {
            ga[i] += self.grad[i] * deriv(x[i], self.value[i]);
        }
    });
}

/// C[m,n] += A[m,k] * B[k,n], all row-major.
inline void gemm_acc(const double* A, const double* B, double* C, std::size_t m, std::size_t k, std::size_t n)
{
    for (std::size_t i = 0; i < m; ++i) {
        double* c = C + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double a = A[i * k + p];
            const double* b = B + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                c[j] += a * b[j];
            }
        }
    }
}

/// dA[m,k] += dC[m,n] * B[k,n]^T
inline void gemm_acc_bt(const double* dC, const double* B, double* dA, std::size_t m, std::size_t k, std::size_t n)
{
    // Transposing B turns the inner dot products into vectorizable row updates.
    std::vector<double> bt(k * n);
    for (std::size_t p = 0; p < k; ++p) {
        for (std::size_t j = 0; j < n; ++j) {
            bt[j * k + p] = B[p * n + j];
        }
    }
    gemm_acc(dC, bt.data(), dA, m, n, k);
}

/// dB[k,n] += A[m,k]^T * dC[m,n]
inline void gemm_acc_at(const double* A, const double* dC, double* dB, std::size_t m, std::size_t k, std::size_t n)
{
    for (std::size_t i = 0; i < m; ++i) {
        const double* g = dC + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double a = A[i * k + p];
            double* b = dB + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                b[j] += a * g[j];
            }
        }
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Array add(const Array& a, const Array& b)
{
    return detail::binary(
        a, b, [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
        [](double, double, double) { return 1.0; });
}

inline Array sub(const Array& a, const Array& b)
{
    return detail::binary(
        a, b, [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
        [](double, double, double) { return -1.0; });
}

inline Array mul(const Array& a, const Array& b)
{
    return detail::binary(
        a, b, [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
        [](double x, double, double) { return x; });
}

inline Array div(const Array& a, const Array& b)
{
    return detail::binary(
        a, b, [](double x, double y) { return x / y; }, [](double, double y, double) { return 1.0 / y; },
        [](double, double y, double z) { return -z / y; });
}

inline Array operator+(const Array& a, const Array& b) { return add(a, b); }
inline Array operator-(const Array& a, const Array& b) { return sub(a, b); }
inline Array operator*(const Array& a, const Array& b) { return mul(a, b); }
inline Array operator/(const Array& a, const Array& b) { return div(a, b); }

inline Array scale(const Array& a, double s)
{
    return detail::unary(
        a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

inline Array add_scalar(const Array& a, double s)
{
    return detail::unary(
        a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

inline Array neg(const Array& a) { return scale(a, -1.0); }
inline Array operator-(const Array& a) { return neg(a); }

inline Array exp(const Array& a)
{
    return detail::unary(
        a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Array log(const Array& a)
{
    return detail::unary(
        a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Array sqrt(const Array& a)
{
    return detail::unary(
        a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

inline Array square(const Array& a)
{
    return detail::unary(
        a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

inline Array tanh(const Array& a)
{
    return detail::unary(
        a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Array relu(const Array& a)
{
    return detail::unary(
        a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

/// |x|, with subgradient 0 at the kink.
inline Array abs(const Array& a)
{
    return detail::unary(
        a, [](double x) { return std::fabs(x); },
        [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

/// Copy of `a` cut from the tape.
inline Array detach(const Array& a) { return Array(a.shape(), a.to_vector()); }

/// Elementwise sign with sign(0) = +1; not differentiable, returns a constant.
inline Array sign(const Array& a)
{
    std::vector<double> v(a.size());
    const auto x = a.data();
    for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = x[i] >= 0.0 ? 1.0 : -1.0;
    }
    return Array(a.shape(), std::move(v));
}

// ---------------------------------------------------------------------------
// Reductions

inline Array sum(const Array& a, int axis, bool keepdims = false)
{
    const std::size_t ax = a.normalize_axis(axis);
    const auto s = detail::split_axis(a.shape(), ax);
    std::vector<double> v(s.outer * s.inner, 0.0);
    const auto x = a.data();
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t l = 0; l < s.length; ++l) {
            const double* src = x.data() + (o * s.length + l) * s.inner;
            double* dst = v.data() + o * s.inner;
            for (std::size_t i = 0; i < s.inner; ++i) {
                dst[i] += src[i];
            }
        }
    }
    Shape out = a.shape();
    if (keepdims) {
        out[ax] = 1;
    } else {
        out.erase(out.begin() + static_cast<std::ptrdiff_t>(ax));
        if (out.empty()) {
            out.push_back(1);
        }
    }
    return detail::make_result(std::move(out), std::move(v), {a}, [a, s](detail::Node& self) {
        double* ga = detail::grad_ptr(a);
        for (std::size_t o = 0; o < s.outer; ++o) {
            for (std::size_t l = 0; l < s.length; ++l) {
                double* dst = ga + (o * s.length + l) * s.inner;
                const double* g = self.grad.data() + o * s.inner;
                for (std::size_t i = 0; i < s.inner; ++i) {
                    dst[i] += g[i];
                }
            }
        }
    });
}

inline Array mean(const Array& a, int axis, bool keepdims = false)
{
    const double n = static_cast<double>(a.dim(axis));
    return scale(sum(a, axis, keepdims), 1.0 / n);
}

inline Array sum_all(const Array& a)
{
    double total = 0.0;
    for (double x : a.data()) {
        total += x;
    }
    return detail::make_result({1}, {total}, {a}, [a](detail::Node& self) {
        double* ga = detail::grad_ptr(a);
        const double g = self.grad[0];
        for (std::size_t i = 0; i < a.size(); ++i) {
            ga[i] += g;
        }
    });
}

inline Array mean_all(const Array& a) { return scale(sum_all(a), 1.0 / static_cast<double>(a.size())); }

// ---------------------------------------------------------------------------
// Shape manipulation

inline Array reshape(const Array& a, Shape shape)
{
    if (numel(shape) != a.size()) {
        throw ShapeError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
    }
    return detail::make_result(std::move(shape), a.to_vector(), {a}, [a](detail::Node& self) {
        double* ga = detail::grad_ptr(a);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            ga[i] += self.grad[i];
        }
    });
}

inline Array permute(const Array& a, const std::vector<std::size_t>& perm)
{
    const std::size_t r = a.rank();
    if (perm.size() != r) {
        throw ShapeError("permute: " + std::to_string(perm.size()) + " axes given for shape " + to_string(a.shape()));
    }
    std::vector<bool> used(r, false);
    Shape out(r);
    for (std::size_t i = 0; i < r; ++i) {
        if (perm[i] >= r || used[perm[i]]) {
            throw ShapeError("permute: invalid axis order for shape " + to_string(a.shape()));
        }
        used[perm[i]] = true;
        out[i] = a.shape()[perm[i]];
    }
    std::vector<std::size_t> in_stride(r);
    std::size_t s = 1;
    for (std::size_t i = r; i-- > 0;) {
        in_stride[i] = s;
        s *= a.shape()[i];
    }
    // Source offset for each destination element.
    std::vector<std::size_t> src(a.size());
    std::vector<std::size_t> counter(r, 0);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < src.size(); ++k) {
        src[k] = offset;
        for (std::size_t d = r; d-- > 0;) {
            ++counter[d];
            offset += in_stride[perm[d]];
            if (counter[d] < out[d]) {
                break;
            }
            offset -= in_stride[perm[d]] * counter[d];
            counter[d] = 0;
        }
    }
    std::vector<double> v(a.size());
    const auto x = a.data();
    for (std::size_t k = 0; k < v.size(); ++k) {
        v[k] = x[src[k]];
    }
    return detail::make_result(std::move(out), std::move(v), {a}, [a, src = std::move(src)](detail::Node& self) {
        double* ga = detail::grad_ptr(a);
        for (std::size_t k = 0; k < src.size(); ++k) {
            ga[src[k]] += self.grad[k];
        }
    });
}

/// Swaps the last two axes.
inline Array transpose(const Array& a)
{
    if (a.rank() < 2) {
        throw ShapeError("transpose needs rank >= 2, got " + to_string(a.shape()));
    }
    std::vector<std::size_t> perm(a.rank());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::swap(perm[a.rank() - 1], perm[a.rank() - 2]);
    return permute(a, perm);
}

inline Array concat(const std::vector<Array>& parts, int axis)
{
    if (parts.empty()) {
        throw ShapeError("concat of zero arrays");
    }
    const std::size_t ax = parts.front().normalize_axis(axis);
    Shape out = parts.front().shape();
    out[ax] = 0;
    for (const Array& p : parts) {
        if (p.rank() != out.size()) {
            throw ShapeError("concat: rank mismatch " + to_string(parts.front().shape()) + " vs " + to_string(p.shape()));
        }
        for (std::size_t i = 0; i < out.size(); ++i) {
            if (i != ax && p.shape()[i] != parts.front().shape()[i]) {
                throw ShapeError("concat: shape mismatch " + to_string(parts.front().shape()) + " vs " +
                                 to_string(p.shape()));
            }
        }
        out[ax] += p.shape()[ax];
    }
    const auto s = detail::split_axis(out, ax);
    std::vector<double> v(numel(out));
    std::size_t start = 0;
    for (const Array& p : parts) {
        const std::size_t len = p.shape()[ax];
        const auto x = p.data();
        for (std::size_t o = 0; o < s.outer; ++o) {
            std::copy_n(x.data() + o * len * s.inner, len * s.inner, v.data() + (o * s.length + start) * s.inner);
        }
        start += len;
    }
    return detail::make_result(std::move(out), std::move(v), parts, [parts, s, ax](detail::Node& self) {
        std::size_t start = 0;
        for (const Array& p : parts) {
            const std::size_t len = p.shape()[ax];
            if (double* gp = detail::grad_ptr(p)) {
                for (std::size_t o = 0; o < s.outer; ++o) {
                    const double* g = self.grad.data() + (o * s.length + start) * s.inner;
                    double* dst = gp + o * len * s.inner;
                    for (std::size_t i = 0; i < len * s.inner; ++i) {
                        dst[i] += g[i];
                    }
                }
            }
            start += len;
        }
    });
}

/// Half-open range [begin, end) along `axis`.
inline Array slice(const Array& a, int axis, std::size_t begin, std::size_t end)
{
    const std::size_t ax = a.normalize_axis(axis);
    if (begin >= end || end > a.shape()[ax]) {
        throw ShapeError("slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of range for " +
                         to_string(a.shape()));
    }
    const auto s = detail::split_axis(a.shape(), ax);
    const std::size_t len = end - begin;
    Shape out = a.shape();
    out[ax] = len;
    std::vector<double> v(numel(out));
    const auto x = a.data();
    for (std::size_t o = 0; o < s.outer; ++o) {
        std::copy_n(x.data() + (o * s.length + begin) * s.inner, len * s.inner, v.data() + o * len * s.inner);
    }
    return detail::make_result(std::move(out), std::move(v), {a}, [a, s, begin, len](detail::Node& self) {
        double* ga = detail::grad_ptr(a);
        for (std::size_t o = 0; o < s.outer; ++o) {
            const double* g = self.grad.data() + o * len * s.inner;
            double* dst = ga + (o * s.length + begin) * s.inner;
            for (std::size_t i = 0; i < len * s.inner; ++i) {
                dst[i] += g[i];
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Linear algebra

/**
 * Batched matrix product over the last two axes. Leading (batch) axes
 * broadcast; a rank-2 right operand is shared by every batch entry.
 */
inline Array matmul(const Array& a, const Array& b)
{
    if (a.rank() < 2 || b.rank() < 2) {
        throw ShapeError("matmul needs rank >= 2 operands, got " + to_string(a.shape()) + " and " + to_string(b.shape()));
    }
    const std::size_t m = a.dim(-2);
    const std::size_t k = a.dim(-1);
    const std::size_t n = b.dim(-1);
    if (b.dim(-2) != k) {
        throw ShapeError("matmul: inner dimensions differ for " + to_string(a.shape()) + " x " + to_string(b.shape()));
    }
    Shape batch_a(a.shape().begin(), a.shape().end() - 2);
    Shape batch_b(b.shape().begin(), b.shape().end() - 2);

    // Fold a's batch into its rows when b is a single matrix.
    if (batch_b.empty()) {
        const std::size_t rows = a.size() / k;
        std::vector<double> v(rows * n, 0.0);
        detail::gemm_acc(a.data().data(), b.data().data(), v.data(), rows, k, n);
        Shape out = a.shape();
        out.back() = n;
        return detail::make_result(std::move(out), std::move(v), {a, b}, [a, b, rows, k, n](detail::Node& self) {
            if (double* ga = detail::grad_ptr(a)) {
                detail::gemm_acc_bt(self.grad.data(), b.data().data(), ga, rows, k, n);
            }
            if (double* gb = detail::grad_ptr(b)) {
                detail::gemm_acc_at(a.data().data(), self.grad.data(), gb, rows, k, n);
            }
        });
    }

    Shape batch;
    try {
        batch = detail::broadcast_shape(batch_a.empty() ? Shape{1} : batch_a, batch_b);
    } catch (const ShapeError&) {
        throw ShapeError("matmul: batch dimensions of " + to_string(a.shape()) + " and " + to_string(b.shape()) +
                         " do not broadcast");
    }
    auto ia = detail::broadcast_index(batch, batch_a.empty() ? Shape{1} : batch_a);
    auto ib = detail::broadcast_index(batch, batch_b);
    std::vector<double> v(ia.size() * m * n, 0.0);
    for (std::size_t t = 0; t < ia.size(); ++t) {
        detail::gemm_acc(a.data().data() + ia[t] * m * k, b.data().data() + ib[t] * k * n, v.data() + t * m * n, m, k, n);
    }
    Shape out = batch;
    out.push_back(m);
    out.push_back(n);
    return detail::make_result(std::move(out), std::move(v), {a, b},
                               [a, b, m, k, n, ia = std::move(ia), ib = std::move(ib)](detail::Node& self) {
                                   double* ga = detail::grad_ptr(a);
                                   double* gb = detail::grad_ptr(b);
                                   for (std::size_t t = 0; t < ia.size(); ++t) {
                                       const double* g = self.grad.data() + t * m * n;
                                       if (ga) {
                                           detail::gemm_acc_bt(g, b.data().data() + ib[t] * k * n, ga + ia[t] * m * k, m,
                                                               k, n);
                                       }
                                       if (gb) {
                                           detail::gemm_acc_at(a.data().data() + ia[t] * m * k, g, gb + ib[t] * k * n, m,
                                                               k, n);
                                       }
                                   }
                               });
}

// ---------------------------------------------------------------------------
// Normalizations

/// Max-shifted softmax along `axis`.
inline Array softmax(const Array& a, int axis)
{
    const std::size_t ax = a.normalize_axis(axis);
    const auto s = detail::split_axis(a.shape(), ax);
    const auto x = a.data();
    std::vector<double> v(a.size());
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.inner; ++i) {
            const std::size_t base = o * s.length * s.inner + i;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t l = 0; l < s.length; ++l) {
                mx = std::max(mx, x[base + l * s.inner]);
            }
            double total = 0.0;
            for (std::size_t l = 0; l < s.length; ++l) {
                const double e = std::exp(x[base + l * s.inner] - mx);
                v[base + l * s.inner] = e;
                total += e;
            }
            for (std::size_t l = 0; l < s.length; ++l) {
                v[base + l * s.inner] /= total;
            }
        }
    }
    return detail::make_result(a.shape(), std::move(v), {a}, [a, s](detail::Node& self) {
        double* ga = detail::grad_ptr(a);
        const auto& y = self.value;
        const auto& g = self.grad;
        for (std::size_t o = 0; o < s.outer; ++o) {
            for (std::size_t i = 0; i < s.inner; ++i) {
                const std::size_t base = o * s.length * s.inner + i;
                double dot = 0.0;
                for (std::size_t l = 0; l < s.length; ++l) {
                    dot += g[base + l * s.inner] * y[base + l * s.inner];
                }
                for (std::size_t l = 0; l < s.length; ++l) {
                    const std::size_t j = base + l * s.inner;
                    ga[j] += y[j] * (g[j] - dot);
                }
            }
        }
    });
}

inline Array log_softmax(const Array& a, int axis)
{
    const std::size_t ax = a.normalize_axis(axis);
    const auto s = detail::split_axis(a.shape(), ax);
    const auto x = a.data();
    std::vector<double> v(a.size());
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.inner; ++i) {
            const std::size_t base = o * s.length * s.inner + i;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t l = 0; l < s.length; ++l) {
                mx = std::max(mx, x[base + l * s.inner]);
            }
            double total = 0.0;
            for (std::size_t l = 0; l < s.length; ++l) {
                total += std::exp(x[base + l * s.inner] - mx);
            }
            const double lse = mx + std::log(total);
            for (std::size_t l = 0; l < s.length; ++l) {
                v[base + l * s.inner] = x[base + l * s.inner] - lse;
            }
        }
    }
    return detail::make_result(a.shape(), std::move(v), {a}, [a, s](detail::Node& self) {
        double* ga = detail::grad_ptr(a);
        const auto& y = self.value;
        const auto& g = self.grad;
        for (std::size_t o = 0; o < s.outer; ++o) {
            for (std::size_t i = 0; i < s.inner; ++i) {
                const std::size_t base = o * s.length * s.inner + i;
                double gsum = 0.0;
                for (std::size_t l = 0; l < s.length; ++l) {
                    gsum += g[base + l * s.inner];
                }
                for (std::size_t l = 0; l < s.length; ++l) {
                    const std::size_t j = base + l * s.inner;
                    ga[j] += g[j] - std::exp(y[j]) * gsum;
                }
            }
        }
    });
}

inline constexpr double kLayerNormEps = 1e-5;

/**
 * Layer normalization along `axis` with population variance:
 * y = gain * (x - mean) / sqrt(var + eps) + bias. gain and bias have the
 * extent of `axis` and broadcast over every other axis.
 */
inline Array layer_norm(const Array& x, int axis, const Array& gain, const Array& bias, double eps = kLayerNormEps)
{
    const std::size_t ax = x.normalize_axis(axis);
    const auto s = detail::split_axis(x.shape(), ax);
    if (gain.size() != s.length || bias.size() != s.length) {
        throw ShapeError("layer_norm: gain/bias of size " + std::to_string(gain.size()) + "/" +
                         std::to_string(bias.size()) + " for axis extent " + std::to_string(s.length));
    }
    const auto xv = x.data();
    const auto gv = gain.data();
    const auto bv = bias.data();
    std::vector<double> y(x.size());
    std::vector<double> xhat(x.size());
    std::vector<double> inv_std(s.outer * s.inner);
    const double n = static_cast<double>(s.length);
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.inner; ++i) {
            const std::size_t base = o * s.length * s.inner + i;
            double mu = 0.0;
            for (std::size_t l = 0; l < s.length; ++l) {
                mu += xv[base + l * s.inner];
            }
            mu /= n;
            double var = 0.0;
            for (std::size_t l = 0; l < s.length; ++l) {
                const double dlt = xv[base + l * s.inner] - mu;
                var += dlt * dlt;
            }
            var /= n;
            const double is = 1.0 / std::sqrt(var + eps);
            inv_std[o * s.inner + i] = is;
            for (std::size_t l = 0; l < s.length; ++l) {
                const std::size_t j = base + l * s.inner;
                xhat[j] = (xv[j] - mu) * is;
                y[j] = gv[l] * xhat[j] + bv[l];
            }
        }
    }
    return detail::make_result(
        x.shape(), std::move(y), {x, gain, bias},
        [x, gain, bias, s, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& self) {
            double* gx = detail::grad_ptr(x);
            double* gg = detail::grad_ptr(gain);
            double* gb = detail::grad_ptr(bias);
            const auto gv = gain.data();
            const auto& g = self.grad;
            for (std::size_t o = 0; o < s.outer; ++o) {
                for (std::size_t i = 0; i < s.inner; ++i) {
                    const std::size_t base = o * s.length * s.inner + i;
                    double sum_d = 0.0;
                    double sum_dx = 0.0;
                    for (std::size_t l = 0; l < s.length; ++l) {
                        const std::size_t j = base + l * s.inner;
                        const double d = g[j] * gv[l];
                        sum_d += d;
                        sum_dx += d * xhat[j];
                        if (gg) {
                            gg[l] += g[j] * xhat[j];
                        }
                        if (gb) {
                            gb[l] += g[j];
                        }
                    }
                    if (gx) {
                        const double is = inv_std[o * s.inner + i];
                        for (std::size_t l = 0; l < s.length; ++l) {
                            const std::size_t j = base + l * s.inner;
                            const double d = g[j] * gv[l];
                            gx[j] += is * (d - sum_d / n - xhat[j] * sum_dx / n);
                        }
                    }
                }
            }
        });
}

inline Array layer_norm(const Array& x, int axis, const Parameter& gain, const Parameter& bias,
                        double eps = kLayerNormEps)
{
    return layer_norm(x, axis, gain.value(), bias.value(), eps);
}

} // namespace gah
