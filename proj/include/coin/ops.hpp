#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

#include <Eigen/Core>

#include "coin/autograd.hpp"

namespace coin::nn {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace detail {

inline void require(bool ok, const std::string& msg) {
    if (!ok) throw ShapeError(msg);
}

/// Output columns [lo, hi) whose input column ox*stride - pad + kx lies inside [0, w).
inline void valid_range(int w, int wo, int kx, int stride, int pad, int& lo, int& hi) {
    // smallest ox with ox*stride >= pad - kx
    const int a = pad - kx;
    lo = a <= 0 ? 0 : (a + stride - 1) / stride;
    // largest ox with ox*stride <= w - 1 + pad - kx
    const int b = w - 1 + pad - kx;
    hi = b < 0 ? 0 : std::min(wo, b / stride + 1);
    lo = std::min(lo, hi);
}

template <typename T>
void im2col(const T* img, int c, int h, int w, int k, int stride, int pad, int ho, int wo,
            T* cols) {
    const int plane = ho * wo;
    for (int ci = 0; ci < c; ++ci) {
        const T* src = img + static_cast<std::size_t>(ci) * h * w;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                T* row = cols + static_cast<std::size_t>((ci * k + ky) * k + kx) * plane;
                int lo, hi;
                valid_range(w, wo, kx, stride, pad, lo, hi);
                const int off = kx - pad;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    T* dst = row + oy * wo;
                    if (iy < 0 || iy >= h) {
                        std::fill(dst, dst + wo, T(0));
                        continue;
                    }
                    const T* srow = src + static_cast<std::size_t>(iy) * w + off;
                    std::fill(dst, dst + lo, T(0));
                    if (stride == 1) {
                        std::copy(srow + lo, srow + hi, dst + lo);
                    } else {
                        for (int ox = lo; ox < hi; ++ox) dst[ox] = srow[ox * stride];
                    }
                    std::fill(dst + hi, dst + wo, T(0));
                }
            }
        }
    }
}

template <typename T>
void col2im(const T* cols, int c, int h, int w, int k, int stride, int pad, int ho, int wo,
            T* img) {
    const int plane = ho * wo;
    for (int ci = 0; ci < c; ++ci) {
        T* dst = img + static_cast<std::size_t>(ci) * h * w;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const T* row = cols + static_cast<std::size_t>((ci * k + ky) * k + kx) * plane;
                int lo, hi;
                valid_range(w, wo, kx, stride, pad, lo, hi);
                const int off = kx - pad;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    T* drow = dst + static_cast<std::size_t>(iy) * w + off;
                    const T* srow = row + oy * wo;
                    if (stride == 1) {
                        for (int ox = lo; ox < hi; ++ox) drow[ox] += srow[ox];
                    } else {
                        for (int ox = lo; ox < hi; ++ox) drow[ox * stride] += srow[ox];
                    }
                }
            }
        }
    }
}

/// Elementwise map. `fwd(v)` gives the value; `deriv(x, y)` the local
/// derivative from input x and output y, evaluated during the backward sweep.
template <typename T, typename F, typename D>
Var<T> unary(const Var<T>& x, F fwd, D deriv) {
    const auto& xv = x->value;
    Tensor<T> out(xv.shape());
    const T* src = xv.data();
    T* dst = out.data();
    const std::size_t n = xv.size();
    for (std::size_t i = 0; i < n; ++i) dst[i] = fwd(src[i]);
    auto node = make_result<T>(std::move(out), {x}, {});
    if (node->requires_grad) {
        // capture the output by raw pointer: the closure lives inside *node
        Node<T>* self = node.get();
        node->backward_fn = [x, self, deriv](const Tensor<T>& g) {
            T* gx = x->grad_buffer().data();
            const T* xi = x->value.data();
            const T* yo = self->value.data();
            const T* gp = g.data();
            const std::size_t n = g.size();
            for (std::size_t i = 0; i < n; ++i) gx[i] += gp[i] * deriv(xi[i], yo[i]);
        };
    }
    return node;
}

}  // namespace detail

/// 2-D convolution, square kernel. `weight` is (O, C, K, K); `bias` is (1, O, 1, 1) or null.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride, int pad) {
    const Shape xs = x->value.shape();
    const Shape ws = weight->value.shape();
    detail::require(ws.c == xs.c && ws.h == ws.w,
                    "conv2d: weight " + ws.str() + " incompatible with input " + xs.str());
    const int k = ws.h;
    const int o = ws.n;
    const int ho = (xs.h + 2 * pad - k) / stride + 1;
    const int wo = (xs.w + 2 * pad - k) / stride + 1;
    detail::require(ho > 0 && wo > 0, "conv2d: empty output for input " + xs.str());
    const int ckk = xs.c * k * k;
    const int plane = ho * wo;

    Tensor<T> out(Shape{xs.n, o, ho, wo});
    std::vector<T> cols(static_cast<std::size_t>(ckk) * plane);
    Eigen::Map<const RowMat<T>> wm(weight->value.data(), o, ckk);
    for (int n = 0; n < xs.n; ++n) {
        detail::im2col(x->value.sample_ptr(n), xs.c, xs.h, xs.w, k, stride, pad, ho, wo,
                       cols.data());
        Eigen::Map<const RowMat<T>> cm(cols.data(), ckk, plane);
        Eigen::Map<RowMat<T>> om(out.sample_ptr(n), o, plane);
        om.noalias() = wm * cm;
        if (bias) {
            for (int oc = 0; oc < o; ++oc) om.row(oc).array() += bias->value[oc];
        }
    }

    std::vector<Var<T>> parents{x, weight};
    if (bias) parents.push_back(bias);
    return make_result<T>(
        std::move(out), std::move(parents),
        [x, weight, bias, stride, pad, k, o, ho, wo, ckk, plane](const Tensor<T>& g) {
            const Shape xs = x->value.shape();
            std::vector<T> cols(static_cast<std::size_t>(ckk) * plane);
            Eigen::Map<const RowMat<T>> wm(weight->value.data(), o, ckk);
            const bool need_w = weight->requires_grad;
            const bool need_x = x->requires_grad;
            T* gw = need_w ? weight->grad_buffer().data() : nullptr;
            T* gx = need_x ? x->grad_buffer().data() : nullptr;
            if (bias && bias->requires_grad) {
                auto& gb = bias->grad_buffer();
                for (int n = 0; n < xs.n; ++n) {
                    const T* gp = g.sample_ptr(n);
                    for (int oc = 0; oc < o; ++oc) {
                        T s = 0;
                        for (int i = 0; i < plane; ++i) s += gp[oc * plane + i];
                        gb[oc] += s;
                    }
                }
            }
            for (int n = 0; n < xs.n; ++n) {
                Eigen::Map<const RowMat<T>> gm(g.sample_ptr(n), o, plane);
                if (need_w) {
                    detail::im2col(x->value.sample_ptr(n), xs.c, xs.h, xs.w, k, stride, pad, ho,
                                   wo, cols.data());
                    Eigen::Map<const RowMat<T>> cm(cols.data(), ckk, plane);
                    Eigen::Map<RowMat<T>> gwm(gw, o, ckk);
                    gwm.noalias() += gm * cm.transpose();
                }
                if (need_x) {
                    Eigen::Map<RowMat<T>> cm(cols.data(), ckk, plane);
                    cm.noalias() = wm.transpose() * gm;
                    detail::col2im(cols.data(), xs.c, xs.h, xs.w, k, stride, pad, ho, wo,
                                   gx + static_cast<std::size_t>(n) * xs.sample());
                }
            }
        });
}

/// Dense layer on (N, F, 1, 1) inputs; `weight` is (O, F, 1, 1), `bias` (1, O, 1, 1) or null.
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
    const Shape xs = x->value.shape();
    const Shape ws = weight->value.shape();
    const int f = static_cast<int>(xs.sample());
    detail::require(ws.c == f && ws.h == 1 && ws.w == 1,
                    "linear: weight " + ws.str() + " incompatible with input " + xs.str());
    const int o = ws.n;
    Tensor<T> out(Shape{xs.n, o, 1, 1});
    Eigen::Map<const RowMat<T>> xm(x->value.data(), xs.n, f);
    Eigen::Map<const RowMat<T>> wm(weight->value.data(), o, f);
    Eigen::Map<RowMat<T>> om(out.data(), xs.n, o);
    om.noalias() = xm * wm.transpose();
    if (bias) {
        for (int n = 0; n < xs.n; ++n)
            for (int j = 0; j < o; ++j) om(n, j) += bias->value[j];
    }
    std::vector<Var<T>> parents{x, weight};
    if (bias) parents.push_back(bias);
    return make_result<T>(std::move(out), std::move(parents),
                          [x, weight, bias, f, o](const Tensor<T>& g) {
                              const int n = x->value.shape().n;
                              Eigen::Map<const RowMat<T>> gm(g.data(), n, o);
                              if (weight->requires_grad) {
                                  Eigen::Map<const RowMat<T>> xm(x->value.data(), n, f);
                                  Eigen::Map<RowMat<T>> gw(weight->grad_buffer().data(), o, f);
                                  gw.noalias() += gm.transpose() * xm;
                              }
                              if (x->requires_grad) {
                                  Eigen::Map<const RowMat<T>> wm(weight->value.data(), o, f);
                                  Eigen::Map<RowMat<T>> gx(x->grad_buffer().data(), n, f);
                                  gx.noalias() += gm * wm;
                              }
                              if (bias && bias->requires_grad) {
                                  auto& gb = bias->grad_buffer();
                                  for (int i = 0; i < n; ++i)
                                      for (int j = 0; j < o; ++j) gb[j] += gm(i, j);
                              }
                          });
}

template <typename T>
Var<T> upsample2x(const Var<T>& x) {
    const Shape s = x->value.shape();
    Tensor<T> out(Shape{s.n, s.c, s.h * 2, s.w * 2});
    const int planes = s.n * s.c;
    for (int p = 0; p < planes; ++p) {
        const T* src = x->value.data() + static_cast<std::size_t>(p) * s.plane();
        T* dst = out.data() + static_cast<std::size_t>(p) * s.plane() * 4;
        for (int y = 0; y < s.h * 2; ++y)
            for (int xx = 0; xx < s.w * 2; ++xx) dst[y * s.w * 2 + xx] = src[(y / 2) * s.w + xx / 2];
    }
    return make_result<T>(std::move(out), {x}, [x, s, planes](const Tensor<T>& g) {
        T* gx = x->grad_buffer().data();
        for (int p = 0; p < planes; ++p) {
            const T* src = g.data() + static_cast<std::size_t>(p) * s.plane() * 4;
            T* dst = gx + static_cast<std::size_t>(p) * s.plane();
            for (int y = 0; y < s.h * 2; ++y)
                for (int xx = 0; xx < s.w * 2; ++xx)
                    dst[(y / 2) * s.w + xx / 2] += src[y * s.w * 2 + xx];
        }
    });
}

/// (N, C, H, W) -> (N, C, 1, 1)
template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
    const Shape s = x->value.shape();
    Tensor<T> out(Shape{s.n, s.c, 1, 1});
    const std::size_t plane = s.plane();
    for (int p = 0; p < s.n * s.c; ++p) {
        const T* src = x->value.data() + p * plane;
        T acc = 0;
        for (std::size_t i = 0; i < plane; ++i) acc += src[i];
        out[p] = acc / static_cast<T>(plane);
    }
    return make_result<T>(std::move(out), {x}, [x, s, plane](const Tensor<T>& g) {
        T* gx = x->grad_buffer().data();
        for (int p = 0; p < s.n * s.c; ++p) {
            const T v = g[p] / static_cast<T>(plane);
            for (std::size_t i = 0; i < plane; ++i) gx[p * plane + i] += v;
        }
    });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
    return detail::unary(
        x, [](T v) { return v > T(0) ? v : T(0); },
        [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
    return detail::unary(
        x, [slope](T v) { return v > T(0) ? v : slope * v; },
        [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

template <typename T>
Var<T> tanh(const Var<T>& x) {
    return detail::unary(
        x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
    return detail::unary(
        x, [](T v) { return T(1) / (T(1) + std::exp(-v)); }, [](T, T y) { return y * (T(1) - y); });
}

/// Elementwise |x|; subgradient 0 at the origin.
template <typename T>
Var<T> abs(const Var<T>& x) {
    return detail::unary(
        x, [](T v) { return std::abs(v); },
        [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

/// Clamp with zero gradient outside [lo, hi].
template <typename T>
Var<T> clamp(const Var<T>& x, T lo, T hi) {
    return detail::unary(
        x, [lo, hi](T v) { return std::min(std::max(v, lo), hi); },
        [lo, hi](T v, T) { return (v < lo || v > hi) ? T(0) : T(1); });
}

/// scale * x + shift
template <typename T>
Var<T> affine(const Var<T>& x, T scale, T shift) {
    Tensor<T> out(x->value.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = scale * x->value[i] + shift;
    return make_result<T>(std::move(out), {x}, [x, scale](const Tensor<T>& g) {
        auto& gx = x->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += scale * g[i];
    });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    a->value.require_same(b->value, "add");
    Tensor<T> out = a->value;
    out += b->value;
    return make_result<T>(std::move(out), {a, b}, [a, b](const Tensor<T>& g) {
        if (a->requires_grad) a->grad_buffer() += g;
        if (b->requires_grad) b->grad_buffer() += g;
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    a->value.require_same(b->value, "sub");
    Tensor<T> out = a->value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b->value[i];
    return make_result<T>(std::move(out), {a, b}, [a, b](const Tensor<T>& g) {
        if (a->requires_grad) a->grad_buffer() += g;
        if (b->requires_grad) {
            auto& gb = b->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    a->value.require_same(b->value, "mul");
    Tensor<T> out(a->value.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] * b->value[i];
    return make_result<T>(std::move(out), {a, b}, [a, b](const Tensor<T>& g) {
        if (a->requires_grad) {
            auto& ga = a->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b->value[i];
        }
        if (b->requires_grad) {
            auto& gb = b->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a->value[i];
        }
    });
}

/// Channel-wise concatenation of two tensors with equal N, H, W.
template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
    const Shape sa = a->value.shape();
    const Shape sb = b->value.shape();
    detail::require(sa.n == sb.n && sa.h == sb.h && sa.w == sb.w,
                    "concat_channels: " + sa.str() + " vs " + sb.str());
    Tensor<T> out(Shape{sa.n, sa.c + sb.c, sa.h, sa.w});
    for (int n = 0; n < sa.n; ++n) {
        std::copy_n(a->value.sample_ptr(n), sa.sample(), out.sample_ptr(n));
        std::copy_n(b->value.sample_ptr(n), sb.sample(), out.sample_ptr(n) + sa.sample());
    }
    return make_result<T>(std::move(out), {a, b}, [a, b, sa, sb](const Tensor<T>& g) {
        for (int n = 0; n < sa.n; ++n) {
            const T* gp = g.sample_ptr(n);
            if (a->requires_grad) {
                T* d = a->grad_buffer().sample_ptr(n);
                for (std::size_t i = 0; i < sa.sample(); ++i) d[i] += gp[i];
            }
            if (b->requires_grad) {
                T* d = b->grad_buffer().sample_ptr(n);
                for (std::size_t i = 0; i < sb.sample(); ++i) d[i] += gp[sa.sample() + i];
            }
        }
    });
}

/// Sum over channels: (N, C, H, W) -> (N, 1, H, W).
template <typename T>
Var<T> sum_channels(const Var<T>& x) {
    const Shape s = x->value.shape();
    Tensor<T> out(Shape{s.n, 1, s.h, s.w});
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            const T* src = x->value.sample_ptr(n) + c * s.plane();
            T* dst = out.sample_ptr(n);
            for (std::size_t i = 0; i < s.plane(); ++i) dst[i] += src[i];
        }
    return make_result<T>(std::move(out), {x}, [x, s](const Tensor<T>& g) {
        auto& gx = x->grad_buffer();
        for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < s.c; ++c) {
                T* dst = gx.sample_ptr(n) + c * s.plane();
                const T* src = g.sample_ptr(n);
                for (std::size_t i = 0; i < s.plane(); ++i) dst[i] += src[i];
            }
    });
}

template <typename T>
Var<T> mean_all(const Var<T>& x) {
    const T count = static_cast<T>(x->value.size());
    Tensor<T> out = Tensor<T>::scalar(x->value.sum() / count);
    return make_result<T>(std::move(out), {x}, [x, count](const Tensor<T>& g) {
        auto& gx = x->grad_buffer();
        const T v = g[0] / count;
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += v;
    });
}

/// Weighted sum of scalar nodes; zero weights are dropped from the graph.
template <typename T>
Var<T> weighted_sum(const std::vector<Var<T>>& terms, const std::vector<T>& weights) {
    detail::require(terms.size() == weights.size(), "weighted_sum: arity mismatch");
    T total = 0;
    std::vector<Var<T>> parents;
    std::vector<T> kept;
    for (std::size_t i = 0; i < terms.size(); ++i) {
        detail::require(terms[i]->value.size() == 1, "weighted_sum: non-scalar term");
        if (weights[i] == T(0)) continue;
        total += weights[i] * terms[i]->value[0];
        parents.push_back(terms[i]);
        kept.push_back(weights[i]);
    }
    auto captured = parents;
    return make_result<T>(Tensor<T>::scalar(total), std::move(parents),
                          [captured, kept](const Tensor<T>& g) {
                              for (std::size_t i = 0; i < captured.size(); ++i) {
                                  if (captured[i]->requires_grad)
                                      captured[i]->grad_buffer()[0] += kept[i] * g[0];
                              }
                          });
}

/// Per-sample embedding c * e1 + (1 - c) * e0 for a scalar condition c.
/// `e0`, `e1` are (1, F, 1, 1); result is (N, F, 1, 1).
template <typename T>
Var<T> condition_embedding(const Var<T>& e0, const Var<T>& e1, const std::vector<T>& cond) {
    const int f = e0->value.shape().c;
    const int n = static_cast<int>(cond.size());
    Tensor<T> out(Shape{n, f, 1, 1});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < f; ++j)
            out.at(i, j, 0, 0) = cond[i] * e1->value[j] + (T(1) - cond[i]) * e0->value[j];
    return make_result<T>(std::move(out), {e0, e1}, [e0, e1, cond, f, n](const Tensor<T>& g) {
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < f; ++j) {
                const T gv = g[static_cast<std::size_t>(i) * f + j];
                if (e1->requires_grad) e1->grad_buffer()[j] += cond[i] * gv;
                if (e0->requires_grad) e0->grad_buffer()[j] += (T(1) - cond[i]) * gv;
            }
    });
}

/// Broadcasts one scalar per sample into a (N, 1, H, W) constant plane.
template <typename T>
Var<T> condition_plane(const std::vector<T>& cond, int h, int w) {
    Tensor<T> out(Shape{static_cast<int>(cond.size()), 1, h, w});
    for (std::size_t i = 0; i < cond.size(); ++i)
        std::fill_n(out.sample_ptr(static_cast<int>(i)), static_cast<std::size_t>(h) * w, cond[i]);
    return constant(std::move(out));
}

}  // namespace coin::nn
