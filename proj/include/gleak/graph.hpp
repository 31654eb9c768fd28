#ifndef GLEAK_GRAPH_HPP
#define GLEAK_GRAPH_HPP

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

#include "gleak/errors.hpp"
#include "gleak/kernels.hpp"
#include "gleak/tensor.hpp"

// Reverse-mode autodiff on a dynamically built graph. The one property the
// whole project leans on: every vjp closure below is expressed with the same
// node ops, so the cotangents produced by backward() form a differentiable
// graph themselves and backward() can be applied to a function of them. That
// is what makes gradient-matching losses (a scalar of a first-order gradient)
// differentiable here without any symbolic work.
//
// Conventions:
//  - values are computed eagerly at construction (define-by-run),
//  - a node with requires_grad=false records no parents, so sampling code
//    that wraps weights as constants pays nothing for the graph,
//  - backward() walks nodes in descending creation id, which is a valid
//    topological order and makes the accumulation order deterministic.

namespace gleak::ag {

template <class T>
struct Node;

template <class T>
using NodePtr = std::shared_ptr<Node<T>>;

template <class T>
struct Parent {
    NodePtr<T> node;
    std::function<NodePtr<T>(const NodePtr<T>&)> vjp;
};

inline std::uint64_t next_node_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1, std::memory_order_relaxed);
}

template <class T>
struct Node {
    Tensor<T> value;
    bool requires_grad = false;
    std::uint64_t id = 0;
    std::vector<Parent<T>> parents;
};

template <class T>
NodePtr<T> constant(Tensor<T> v) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(v);
    n->requires_grad = false;
    n->id = next_node_id();
    return n;
}

template <class T>
NodePtr<T> param(Tensor<T> v) {
    auto n = constant<T>(std::move(v));
    n->requires_grad = true;
    return n;
}

template <class T>
NodePtr<T> scalar_const(double v) {
    return constant<T>(Tensor<T>::scalar(T(v)));
}

// Node factory: attaches only the vjps whose parent actually needs a
// gradient; with no such parent the result degenerates to a constant.
template <class T>
NodePtr<T> make_op(Tensor<T> value, std::vector<Parent<T>> parents) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->id = next_node_id();
    for (auto& p : parents) {
        if (p.node->requires_grad) {
            n->parents.push_back(std::move(p));
            n->requires_grad = true;
        }
    }
    return n;
}

// forward declarations for ops referenced inside vjp closures before their
// definitions appear
template <class T> NodePtr<T> neg(const NodePtr<T>&);
template <class T> NodePtr<T> mul(const NodePtr<T>&, const NodePtr<T>&);
template <class T> NodePtr<T> div(const NodePtr<T>&, const NodePtr<T>&);
template <class T> NodePtr<T> add_const(const NodePtr<T>&, double);
template <class T> NodePtr<T> mul_const(const NodePtr<T>&, double);
template <class T> NodePtr<T> scale(const NodePtr<T>&, const NodePtr<T>&);
template <class T> NodePtr<T> fill_like(const NodePtr<T>&, const NodePtr<T>&);
template <class T> NodePtr<T> sum_all(const NodePtr<T>&);
template <class T> NodePtr<T> dot(const NodePtr<T>&, const NodePtr<T>&);
template <class T> NodePtr<T> select1(const NodePtr<T>&, std::size_t);
template <class T> NodePtr<T> scatter1(const NodePtr<T>&, std::size_t, std::size_t);
template <class T> NodePtr<T> slice1(const NodePtr<T>&, std::size_t, std::size_t);
template <class T> NodePtr<T> pad1(const NodePtr<T>&, std::size_t, std::size_t);
template <class T> NodePtr<T> matvec(const NodePtr<T>&, const NodePtr<T>&);
template <class T> NodePtr<T> matvec_t(const NodePtr<T>&, const NodePtr<T>&);
template <class T> NodePtr<T> outer_(const NodePtr<T>&, const NodePtr<T>&);
template <class T> NodePtr<T> spatial_sum(const NodePtr<T>&);
template <class T> NodePtr<T> broadcast_chw(const NodePtr<T>&, std::size_t, std::size_t);
template <class T> NodePtr<T> sum_pool(const NodePtr<T>&, std::size_t);
template <class T> NodePtr<T> upsample(const NodePtr<T>&, std::size_t);
template <class T> NodePtr<T> slice_ch(const NodePtr<T>&, std::size_t, std::size_t);
template <class T> NodePtr<T> pad_ch(const NodePtr<T>&, std::size_t, std::size_t);

// ---- elementwise -----------------------------------------------------------

template <class T>
NodePtr<T> add(const NodePtr<T>& a, const NodePtr<T>& b) {
    if (!a->value.same_shape(b->value)) throw ShapeError("add: shape mismatch");
    Tensor<T> v = a->value;
    for (std::size_t i = 0; i < v.numel(); ++i) v[i] += b->value[i];
    return make_op<T>(std::move(v),
                      {{a, [](const NodePtr<T>& c) { return c; }},
                       {b, [](const NodePtr<T>& c) { return c; }}});
}

template <class T>
NodePtr<T> neg(const NodePtr<T>& a) {
    Tensor<T> v = a->value;
    for (auto& x : v.data) x = -x;
    return make_op<T>(std::move(v), {{a, [](const NodePtr<T>& c) { return neg(c); }}});
}

template <class T>
NodePtr<T> sub(const NodePtr<T>& a, const NodePtr<T>& b) {
    if (!a->value.same_shape(b->value)) throw ShapeError("sub: shape mismatch");
    Tensor<T> v = a->value;
    for (std::size_t i = 0; i < v.numel(); ++i) v[i] -= b->value[i];
    return make_op<T>(std::move(v),
                      {{a, [](const NodePtr<T>& c) { return c; }},
                       {b, [](const NodePtr<T>& c) { return neg(c); }}});
}

template <class T>
NodePtr<T> mul(const NodePtr<T>& a, const NodePtr<T>& b) {
    if (!a->value.same_shape(b->value)) throw ShapeError("mul: shape mismatch");
    Tensor<T> v = a->value;
    for (std::size_t i = 0; i < v.numel(); ++i) v[i] *= b->value[i];
    return make_op<T>(std::move(v),
                      {{a, [b](const NodePtr<T>& c) { return mul(c, b); }},
                       {b, [a](const NodePtr<T>& c) { return mul(c, a); }}});
}

template <class T>
NodePtr<T> div(const NodePtr<T>& a, const NodePtr<T>& b) {
    if (!a->value.same_shape(b->value)) throw ShapeError("div: shape mismatch");
    Tensor<T> v = a->value;
    for (std::size_t i = 0; i < v.numel(); ++i) v[i] /= b->value[i];
    auto out = make_op<T>(std::move(v), {});
    std::weak_ptr<Node<T>> wout = out;
    if (a->requires_grad) {
        out->parents.push_back({a, [b](const NodePtr<T>& c) { return div(c, b); }});
        out->requires_grad = true;
    }
    if (b->requires_grad) {
        out->parents.push_back({b, [b, wout](const NodePtr<T>& c) {
                                    auto o = wout.lock();
                                    return neg(div(mul(c, o), b));
                                }});
        out->requires_grad = true;
    }
    return out;
}

template <class T>
NodePtr<T> add_const(const NodePtr<T>& a, double s) {
    Tensor<T> v = a->value;
    for (auto& x : v.data) x += T(s);
    return make_op<T>(std::move(v), {{a, [](const NodePtr<T>& c) { return c; }}});
}

template <class T>
NodePtr<T> mul_const(const NodePtr<T>& a, double s) {
    Tensor<T> v = a->value;
    for (auto& x : v.data) x *= T(s);
    return make_op<T>(std::move(v), {{a, [s](const NodePtr<T>& c) { return mul_const(c, s); }}});
}

template <class T>
NodePtr<T> exp_(const NodePtr<T>& a) {
    Tensor<T> v = a->value;
    for (auto& x : v.data) x = std::exp(x);
    auto out = make_op<T>(std::move(v), {});
    if (a->requires_grad) {
        std::weak_ptr<Node<T>> wout = out;
        out->parents.push_back({a, [wout](const NodePtr<T>& c) { return mul(c, wout.lock()); }});
        out->requires_grad = true;
    }
    return out;
}

template <class T>
NodePtr<T> log_(const NodePtr<T>& a) {
    Tensor<T> v = a->value;
    for (auto& x : v.data) x = std::log(x);
    return make_op<T>(std::move(v), {{a, [a](const NodePtr<T>& c) { return div(c, a); }}});
}

template <class T>
NodePtr<T> sqrt_(const NodePtr<T>& a) {
    Tensor<T> v = a->value;
    for (auto& x : v.data) x = std::sqrt(x);
    auto out = make_op<T>(std::move(v), {});
    if (a->requires_grad) {
        std::weak_ptr<Node<T>> wout = out;
        out->parents.push_back({a, [wout](const NodePtr<T>& c) {
                                    return div(mul_const(c, 0.5), wout.lock());
                                }});
        out->requires_grad = true;
    }
    return out;
}

template <class T>
NodePtr<T> sigmoid(const NodePtr<T>& a) {
    Tensor<T> v = a->value;
    for (auto& x : v.data) {
        // evaluate in both tails without overflow
        if (x >= T(0)) {
            T e = std::exp(-x);
            x = T(1) / (T(1) + e);
        } else {
            T e = std::exp(x);
            x = e / (T(1) + e);
        }
    }
    auto out = make_op<T>(std::move(v), {});
    if (a->requires_grad) {
        std::weak_ptr<Node<T>> wout = out;
        out->parents.push_back({a, [wout](const NodePtr<T>& c) {
                                    auto o = wout.lock();
                                    return mul(c, mul(o, add_const(neg(o), 1.0)));
                                }});
        out->requires_grad = true;
    }
    return out;
}

template <class T>
NodePtr<T> silu(const NodePtr<T>& a) {
    return mul(a, sigmoid(a));
}

// ---- scalar broadcast ------------------------------------------------------

// a * s where s has shape {1}
template <class T>
NodePtr<T> scale(const NodePtr<T>& a, const NodePtr<T>& s) {
    if (s->value.numel() != 1) throw ShapeError("scale: scalar operand must have 1 element");
    Tensor<T> v = a->value;
    const T sv = s->value[0];
    for (auto& x : v.data) x *= sv;
    return make_op<T>(std::move(v),
                      {{a, [s](const NodePtr<T>& c) { return scale(c, s); }},
                       {s, [a](const NodePtr<T>& c) { return dot(c, a); }}});
}

// tensor of a's shape filled with scalar node s
template <class T>
NodePtr<T> fill_like(const NodePtr<T>& a, const NodePtr<T>& s) {
    if (s->value.numel() != 1) throw ShapeError("fill_like: scalar operand must have 1 element");
    Tensor<T> v(a->value.shape, s->value[0]);
    return make_op<T>(std::move(v), {{s, [](const NodePtr<T>& c) { return sum_all(c); }}});
}

// ---- reductions ------------------------------------------------------------

template <class T>
NodePtr<T> sum_all(const NodePtr<T>& a) {
    T s = kern::sum(a->value.data.data(), a->value.numel(), false);
    return make_op<T>(Tensor<T>::scalar(s),
                      {{a, [a](const NodePtr<T>& c) { return fill_like(a, c); }}});
}

template <class T>
NodePtr<T> dot(const NodePtr<T>& a, const NodePtr<T>& b) {
    if (a->value.numel() != b->value.numel()) throw ShapeError("dot: length mismatch");
    T s = kern::dot(a->value.data.data(), b->value.data.data(), a->value.numel(),
                    kern::use_omp(a->value.numel()));
    return make_op<T>(Tensor<T>::scalar(s),
                      {{a, [b](const NodePtr<T>& c) { return scale(b, c); }},
                       {b, [a](const NodePtr<T>& c) { return scale(a, c); }}});
}

// ---- indexing / layout -----------------------------------------------------

template <class T>
NodePtr<T> reshape(const NodePtr<T>& a, std::vector<std::size_t> shape) {
    if (Tensor<T>::count(shape) != a->value.numel()) throw ShapeError("reshape: element count mismatch");
    Tensor<T> v = a->value;
    auto old_shape = a->value.shape;
    v.shape = shape;
    return make_op<T>(std::move(v), {{a, [old_shape](const NodePtr<T>& c) {
                                          return reshape(c, old_shape);
                                      }}});
}

template <class T>
NodePtr<T> select1(const NodePtr<T>& a, std::size_t idx) {
    if (idx >= a->value.numel()) throw ShapeError("select1: index out of range");
    std::size_t n = a->value.numel();
    return make_op<T>(Tensor<T>::scalar(a->value[idx]),
                      {{a, [idx, n](const NodePtr<T>& c) { return scatter1(c, idx, n); }}});
}

template <class T>
NodePtr<T> scatter1(const NodePtr<T>& s, std::size_t idx, std::size_t n) {
    if (s->value.numel() != 1) throw ShapeError("scatter1: scalar operand must have 1 element");
    if (idx >= n) throw ShapeError("scatter1: index out of range");
    Tensor<T> v({n});
    v[idx] = s->value[0];
    return make_op<T>(std::move(v), {{s, [idx](const NodePtr<T>& c) { return select1(c, idx); }}});
}

template <class T>
NodePtr<T> slice1(const NodePtr<T>& a, std::size_t off, std::size_t len) {
    if (off + len > a->value.numel()) throw ShapeError("slice1: range out of bounds");
    std::size_t total = a->value.numel();
    Tensor<T> v({len});
    for (std::size_t i = 0; i < len; ++i) v[i] = a->value[off + i];
    return make_op<T>(std::move(v), {{a, [off, total](const NodePtr<T>& c) {
                                          return pad1(c, off, total);
                                      }}});
}

template <class T>
NodePtr<T> pad1(const NodePtr<T>& a, std::size_t off, std::size_t total) {
    std::size_t len = a->value.numel();
    if (off + len > total) throw ShapeError("pad1: range out of bounds");
    Tensor<T> v({total});
    for (std::size_t i = 0; i < len; ++i) v[off + i] = a->value[i];
    return make_op<T>(std::move(v), {{a, [off, len](const NodePtr<T>& c) {
                                          return slice1(c, off, len);
                                      }}});
}

template <class T>
NodePtr<T> concat1(const std::vector<NodePtr<T>>& parts) {
    std::size_t total = 0;
    for (auto& p : parts) total += p->value.numel();
    Tensor<T> v({total});
    std::vector<Parent<T>> parents;
    std::size_t off = 0;
    for (auto& p : parts) {
        std::size_t len = p->value.numel();
        for (std::size_t i = 0; i < len; ++i) v[off + i] = p->value[i];
        std::size_t o = off;
        parents.push_back({p, [o, len](const NodePtr<T>& c) { return slice1(c, o, len); }});
        off += len;
    }
    return make_op<T>(std::move(v), std::move(parents));
}

// ---- image ops, layout {C,H,W} --------------------------------------------

template <class T>
NodePtr<T> conv2d(const NodePtr<T>& x, const NodePtr<T>& w, std::size_t stride, std::size_t pad);
template <class T>
NodePtr<T> conv2d_igrad(const NodePtr<T>& u, const NodePtr<T>& w, const kern::ConvDims& d);
template <class T>
NodePtr<T> conv2d_kgrad(const NodePtr<T>& u, const NodePtr<T>& x, const kern::ConvDims& d);

template <class T>
kern::ConvDims conv_dims(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride, std::size_t pad) {
    if (x.ndim() != 3 || w.ndim() != 4) throw ShapeError("conv2d: expects x {C,H,W}, w {Co,Ci,Kh,Kw}");
    if (x.shape[0] != w.shape[1]) throw ShapeError("conv2d: input channels disagree with filters");
    kern::ConvDims d{x.shape[0], x.shape[1], x.shape[2], w.shape[0], w.shape[2], w.shape[3], stride, pad};
    if (d.h + 2 * pad < d.kh || d.w + 2 * pad < d.kw) throw ShapeError("conv2d: kernel larger than padded input");
    return d;
}

template <class T>
NodePtr<T> conv2d(const NodePtr<T>& x, const NodePtr<T>& w, std::size_t stride, std::size_t pad) {
    kern::ConvDims d = conv_dims(x->value, w->value, stride, pad);
    Tensor<T> y({d.co, d.oh(), d.ow()});
    kern::conv2d(x->value.data.data(), w->value.data.data(), y.data.data(), d);
    return make_op<T>(std::move(y),
                      {{x, [w, d](const NodePtr<T>& c) { return conv2d_igrad(c, w, d); }},
                       {w, [x, d](const NodePtr<T>& c) { return conv2d_kgrad(c, x, d); }}});
}

template <class T>
NodePtr<T> conv2d_igrad(const NodePtr<T>& u, const NodePtr<T>& w, const kern::ConvDims& d) {
    require_shape(u->value, {d.co, d.oh(), d.ow()}, "conv2d_igrad: u");
    require_shape(w->value, {d.co, d.ci, d.kh, d.kw}, "conv2d_igrad: w");
    Tensor<T> gx({d.ci, d.h, d.w});
    kern::conv2d_igrad(u->value.data.data(), w->value.data.data(), gx.data.data(), d);
    return make_op<T>(std::move(gx),
                      {{u, [w, d](const NodePtr<T>& c) { return conv2d(c, w, d.stride, d.pad); }},
                       {w, [u, d](const NodePtr<T>& c) { return conv2d_kgrad(u, c, d); }}});
}

template <class T>
NodePtr<T> conv2d_kgrad(const NodePtr<T>& u, const NodePtr<T>& x, const kern::ConvDims& d) {
    require_shape(u->value, {d.co, d.oh(), d.ow()}, "conv2d_kgrad: u");
    require_shape(x->value, {d.ci, d.h, d.w}, "conv2d_kgrad: x");
    Tensor<T> gw({d.co, d.ci, d.kh, d.kw});
    kern::conv2d_kgrad(u->value.data.data(), x->value.data.data(), gw.data.data(), d);
    return make_op<T>(std::move(gw),
                      {{u, [x, d](const NodePtr<T>& c) { return conv2d(x, c, d.stride, d.pad); }},
                       {x, [u, d](const NodePtr<T>& c) { return conv2d_igrad(u, c, d); }}});
}

// ---- dense ops -------------------------------------------------------------

template <class T>
NodePtr<T> matvec(const NodePtr<T>& m, const NodePtr<T>& v) {
    if (m->value.ndim() != 2 || v->value.numel() != m->value.shape[1])
        throw ShapeError("matvec: need {r,c} and {c}");
    std::size_t r = m->value.shape[0], c = m->value.shape[1];
    Tensor<T> y({r});
    kern::matvec(m->value.data.data(), v->value.data.data(), y.data.data(), r, c);
    return make_op<T>(std::move(y),
                      {{m, [v](const NodePtr<T>& ct) { return outer_(ct, v); }},
                       {v, [m](const NodePtr<T>& ct) { return matvec_t(m, ct); }}});
}

template <class T>
NodePtr<T> matvec_t(const NodePtr<T>& m, const NodePtr<T>& u) {
    if (m->value.ndim() != 2 || u->value.numel() != m->value.shape[0])
        throw ShapeError("matvec_t: need {r,c} and {r}");
    std::size_t r = m->value.shape[0], c = m->value.shape[1];
    Tensor<T> y({c});
    kern::matvec_t(m->value.data.data(), u->value.data.data(), y.data.data(), r, c);
    return make_op<T>(std::move(y),
                      {{m, [u](const NodePtr<T>& ct) { return outer_(u, ct); }},
                       {u, [m](const NodePtr<T>& ct) { return matvec(m, ct); }}});
}

template <class T>
NodePtr<T> outer_(const NodePtr<T>& u, const NodePtr<T>& v) {
    if (u->value.ndim() != 1 || v->value.ndim() != 1) throw ShapeError("outer: need two vectors");
    std::size_t r = u->value.numel(), c = v->value.numel();
    Tensor<T> m({r, c});
    kern::outer(u->value.data.data(), v->value.data.data(), m.data.data(), r, c);
    return make_op<T>(std::move(m),
                      {{u, [v](const NodePtr<T>& ct) { return matvec(ct, v); }},
                       {v, [u](const NodePtr<T>& ct) { return matvec_t(ct, u); }}});
}

// ---- channel bias / pooling ------------------------------------------------

template <class T>
NodePtr<T> bias_add(const NodePtr<T>& x, const NodePtr<T>& b) {
    if (x->value.ndim() != 3 || b->value.numel() != x->value.shape[0])
        throw ShapeError("bias_add: need {C,H,W} and {C}");
    Tensor<T> v = x->value;
    const std::size_t hw = v.shape[1] * v.shape[2];
    for (std::size_t c = 0; c < v.shape[0]; ++c)
        for (std::size_t i = 0; i < hw; ++i) v[c * hw + i] += b->value[c];
    return make_op<T>(std::move(v),
                      {{x, [](const NodePtr<T>& ct) { return ct; }},
                       {b, [](const NodePtr<T>& ct) { return spatial_sum(ct); }}});
}

template <class T>
NodePtr<T> spatial_sum(const NodePtr<T>& x) {
    if (x->value.ndim() != 3) throw ShapeError("spatial_sum: need {C,H,W}");
    const std::size_t C = x->value.shape[0], H = x->value.shape[1], W = x->value.shape[2];
    Tensor<T> v({C});
    for (std::size_t c = 0; c < C; ++c)
        v[c] = kern::sum(x->value.data.data() + c * H * W, H * W, false);
    return make_op<T>(std::move(v), {{x, [H, W](const NodePtr<T>& ct) {
                                          return broadcast_chw(ct, H, W);
                                      }}});
}

template <class T>
NodePtr<T> broadcast_chw(const NodePtr<T>& b, std::size_t h, std::size_t w) {
    if (b->value.ndim() != 1) throw ShapeError("broadcast_chw: need {C}");
    const std::size_t C = b->value.numel();
    Tensor<T> v({C, h, w});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < h * w; ++i) v[c * h * w + i] = b->value[c];
    return make_op<T>(std::move(v), {{b, [](const NodePtr<T>& ct) { return spatial_sum(ct); }}});
}

template <class T>
NodePtr<T> sum_pool(const NodePtr<T>& x, std::size_t f) {
    if (x->value.ndim() != 3) throw ShapeError("sum_pool: need {C,H,W}");
    const std::size_t C = x->value.shape[0], H = x->value.shape[1], W = x->value.shape[2];
    if (f == 0 || H % f || W % f) throw ShapeError("sum_pool: size not divisible by factor");
    Tensor<T> v({C, H / f, W / f});
    kern::sum_pool(x->value.data.data(), v.data.data(), C, H, W, f);
    return make_op<T>(std::move(v), {{x, [f](const NodePtr<T>& ct) { return upsample(ct, f); }}});
}

template <class T>
NodePtr<T> upsample(const NodePtr<T>& x, std::size_t f) {
    if (x->value.ndim() != 3) throw ShapeError("upsample: need {C,H,W}");
    const std::size_t C = x->value.shape[0], H = x->value.shape[1], W = x->value.shape[2];
    Tensor<T> v({C, H * f, W * f});
    kern::upsample_nearest(x->value.data.data(), v.data.data(), C, H, W, f);
    return make_op<T>(std::move(v), {{x, [f](const NodePtr<T>& ct) { return sum_pool(ct, f); }}});
}

template <class T>
NodePtr<T> avg_pool(const NodePtr<T>& x, std::size_t f) {
    return mul_const(sum_pool(x, f), 1.0 / double(f * f));
}

template <class T>
NodePtr<T> concat_ch(const NodePtr<T>& a, const NodePtr<T>& b) {
    if (a->value.ndim() != 3 || b->value.ndim() != 3 || a->value.shape[1] != b->value.shape[1] ||
        a->value.shape[2] != b->value.shape[2])
        throw ShapeError("concat_ch: spatial dims must agree");
    const std::size_t Ca = a->value.shape[0], Cb = b->value.shape[0];
    const std::size_t H = a->value.shape[1], W = a->value.shape[2];
    Tensor<T> v({Ca + Cb, H, W});
    std::copy(a->value.data.begin(), a->value.data.end(), v.data.begin());
    std::copy(b->value.data.begin(), b->value.data.end(), v.data.begin() + Ca * H * W);
    return make_op<T>(std::move(v),
                      {{a, [Ca](const NodePtr<T>& ct) { return slice_ch(ct, 0, Ca); }},
                       {b, [Ca, Cb](const NodePtr<T>& ct) { return slice_ch(ct, Ca, Cb); }}});
}

template <class T>
NodePtr<T> slice_ch(const NodePtr<T>& a, std::size_t c0, std::size_t len) {
    if (a->value.ndim() != 3 || c0 + len > a->value.shape[0]) throw ShapeError("slice_ch: range out of bounds");
    const std::size_t C = a->value.shape[0], H = a->value.shape[1], W = a->value.shape[2];
    Tensor<T> v({len, H, W});
    std::copy(a->value.data.begin() + c0 * H * W, a->value.data.begin() + (c0 + len) * H * W,
              v.data.begin());
    return make_op<T>(std::move(v), {{a, [c0, C](const NodePtr<T>& ct) { return pad_ch(ct, c0, C); }}});
}

template <class T>
NodePtr<T> pad_ch(const NodePtr<T>& a, std::size_t c0, std::size_t total) {
    if (a->value.ndim() != 3) throw ShapeError("pad_ch: need {C,H,W}");
    const std::size_t len = a->value.shape[0], H = a->value.shape[1], W = a->value.shape[2];
    if (c0 + len > total) throw ShapeError("pad_ch: range out of bounds");
    Tensor<T> v({total, H, W});
    std::copy(a->value.data.begin(), a->value.data.end(), v.data.begin() + c0 * H * W);
    return make_op<T>(std::move(v), {{a, [c0, len](const NodePtr<T>& ct) {
                                          return slice_ch(ct, c0, len);
                                      }}});
}

// ---- composite losses ------------------------------------------------------

// Cross-entropy of softmax(logits) against a hard label. The max shift is a
// detached constant; the shifted expression is the same function of the
// logits, so every derivative is unaffected.
template <class T>
NodePtr<T> softmax_cross_entropy(const NodePtr<T>& logits, std::size_t label) {
    if (logits->value.ndim() != 1) throw ShapeError("softmax_cross_entropy: logits must be a vector");
    if (label >= logits->value.numel()) throw LabelError("softmax_cross_entropy: label out of range");
    T m = logits->value[0];
    for (std::size_t i = 1; i < logits->value.numel(); ++i) m = std::max(m, logits->value[i]);
    auto z = add_const(logits, -double(m));
    auto lse = log_(sum_all(exp_(z)));
    return sub(lse, select1(z, label));
}

// squared L2 distance between two same-length vectors as a graph node
template <class T>
NodePtr<T> squared_distance(const NodePtr<T>& a, const NodePtr<T>& b) {
    auto d = sub(a, b);
    return dot(d, d);
}

// ---- backward --------------------------------------------------------------

template <class T>
using GradMap = std::unordered_map<const Node<T>*, NodePtr<T>>;

// Reverse sweep from a scalar root. Returns cotangent nodes for the nodes
// reachable through differentiable edges; the cotangents are themselves graph
// nodes and can be differentiated again. When `wanted` is given, the sweep is
// pruned to ancestors of the wanted nodes, which skips whole cotangent
// subgraphs the caller will never read (the pruning changes no returned
// value, only avoids building dead branches).
template <class T>
GradMap<T> backward(const NodePtr<T>& root, const std::vector<NodePtr<T>>* wanted = nullptr) {
    if (root->value.numel() != 1) throw ShapeError("backward: root must be scalar");
    GradMap<T> cot;
    if (!root->requires_grad) return cot;

    // collect reachable differentiable nodes
    std::vector<const Node<T>*> order;
    std::unordered_map<const Node<T>*, NodePtr<T>> keep;
    std::vector<NodePtr<T>> stack{root};
    keep[root.get()] = root;
    while (!stack.empty()) {
        NodePtr<T> n = stack.back();
        stack.pop_back();
        order.push_back(n.get());
        for (auto& p : n->parents) {
            if (keep.emplace(p.node.get(), p.node).second) stack.push_back(p.node);
        }
    }
    std::sort(order.begin(), order.end(),
              [](const Node<T>* a, const Node<T>* b) { return a->id > b->id; });

    // relevance: can a wanted node be reached from here via parent edges?
    // Parents always carry smaller creation ids, so one ascending pass
    // settles the recursion.
    std::unordered_map<const Node<T>*, bool> relevant;
    if (wanted) {
        std::unordered_map<const Node<T>*, bool> is_wanted;
        for (const auto& w : *wanted) is_wanted[w.get()] = true;
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            const Node<T>* n = *it;
            bool r = is_wanted.count(n) > 0;
            if (!r)
                for (auto& p : n->parents)
                    if (relevant[p.node.get()]) {
                        r = true;
                        break;
                    }
            relevant[n] = r;
        }
        if (!relevant[root.get()]) return cot;
    }

    cot[root.get()] = constant<T>(Tensor<T>::scalar(T(1)));
    for (const Node<T>* n : order) {
        auto it = cot.find(n);
        if (it == cot.end()) continue;
        NodePtr<T> c = it->second;
        for (auto& p : n->parents) {
            if (wanted && !relevant[p.node.get()]) continue;
            NodePtr<T> contrib = p.vjp(c);
            if (!contrib->value.same_shape(p.node->value))
                throw ShapeError("backward: vjp shape mismatch");
            auto slot = cot.find(p.node.get());
            if (slot == cot.end())
                cot.emplace(p.node.get(), contrib);
            else
                slot->second = add(slot->second, contrib);
        }
    }
    cot.erase(root.get());
    return cot;
}

template <class T>
NodePtr<T> grad_of(const GradMap<T>& g, const NodePtr<T>& node) {
    auto it = g.find(node.get());
    if (it != g.end()) return it->second;
    return constant<T>(Tensor<T>::zeros(node->value.shape));
}

} // namespace gleak::ag

#endif
