#pragma once

#include <Eigen/Core>

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <vector>

#include "dda/tensor.hpp"

namespace dda::autodiff {

/// One value in the computation graph. Gradients are accumulated into `grad`
/// during the reverse sweep; `back` pulls from this node's grad and pushes
/// into its parents'.
template <typename T>
struct Node {
    Tensor3<T> val;
    Tensor3<T> grad;
    bool needs_grad = false;
    std::function<void()> back;
};

template <typename T>
using NodeP = std::shared_ptr<Node<T>>;

/// Records nodes in creation order; backward replays the tape in reverse,
/// which is a valid topological order by construction. One tape per forward
/// pass; parameters enter as leaves.
template <typename T>
class Tape {
  public:
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
    using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

    NodeP<T> leaf(Tensor3<T> value, bool needs_grad) {
        auto n = std::make_shared<Node<T>>();
        n->val = std::move(value);
        n->needs_grad = needs_grad;
        if (needs_grad) n->grad = Tensor3<T>(n->val.c, n->val.h, n->val.w, T(0));
        order_.push_back(n);
        return n;
    }

    NodeP<T> constant(Tensor3<T> value) { return leaf(std::move(value), false); }

    /// Value copy that blocks gradient flow.
    NodeP<T> detach(const NodeP<T>& a) { return constant(a->val); }

    NodeP<T> add(const NodeP<T>& a, const NodeP<T>& b) {
        require_same(a, b, "add");
        Tensor3<T> out = a->val;
        for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += b->val.v[i];
        auto n = make(std::move(out), {a, b});
        if (n->needs_grad) {
            Node<T>* self = n.get();
            n->back = [self, a, b]() {
                if (a->needs_grad)
                    for (size_t i = 0; i < a->grad.v.size(); ++i) a->grad.v[i] += self->grad.v[i];
                if (b->needs_grad)
                    for (size_t i = 0; i < b->grad.v.size(); ++i) b->grad.v[i] += self->grad.v[i];
            };
        }
        return n;
    }

    NodeP<T> sub(const NodeP<T>& a, const NodeP<T>& b) {
        require_same(a, b, "sub");
        Tensor3<T> out = a->val;
        for (size_t i = 0; i < out.v.size(); ++i) out.v[i] -= b->val.v[i];
        auto n = make(std::move(out), {a, b});
        if (n->needs_grad) {
            Node<T>* self = n.get();
            n->back = [self, a, b]() {
                if (a->needs_grad)
                    for (size_t i = 0; i < a->grad.v.size(); ++i) a->grad.v[i] += self->grad.v[i];
                if (b->needs_grad)
                    for (size_t i = 0; i < b->grad.v.size(); ++i) b->grad.v[i] -= self->grad.v[i];
            };
        }
        return n;
    }

    NodeP<T> scale(const NodeP<T>& a, double s) {
        Tensor3<T> out = a->val;
        for (T& x : out.v) x = static_cast<T>(x * s);
        auto n = make(std::move(out), {a});
        if (n->needs_grad) {
            Node<T>* self = n.get();
            n->back = [self, a, s]() {
                for (size_t i = 0; i < a->grad.v.size(); ++i)
                    a->grad.v[i] += static_cast<T>(self->grad.v[i] * s);
            };
        }
        return n;
    }

    NodeP<T> silu(const NodeP<T>& a) {
        Tensor3<T> out = a->val;
        for (T& x : out.v) {
            double s = 1.0 / (1.0 + std::exp(-static_cast<double>(x)));
            x = static_cast<T>(x * s);
        }
        auto n = make(std::move(out), {a});
        if (n->needs_grad) {
            Node<T>* self = n.get();
            n->back = [self, a]() {
                for (size_t i = 0; i < a->grad.v.size(); ++i) {
                    double x = a->val.v[i];
                    double s = 1.0 / (1.0 + std::exp(-x));
                    a->grad.v[i] += static_cast<T>(self->grad.v[i] * (s * (1.0 + x * (1.0 - s))));
                }
            };
        }
        return n;
    }

    NodeP<T> leaky_relu(const NodeP<T>& a, double slope = 0.1) {
        Tensor3<T> out = a->val;
        for (T& x : out.v)
            if (x < T(0)) x = static_cast<T>(x * slope);
        auto n = make(std::move(out), {a});
        if (n->needs_grad) {
            Node<T>* self = n.get();
            n->back = [self, a, slope]() {
                for (size_t i = 0; i < a->grad.v.size(); ++i) {
                    double d = a->val.v[i] >= T(0) ? 1.0 : slope;
                    a->grad.v[i] += static_cast<T>(self->grad.v[i] * d);
                }
            };
        }
        return n;
    }

    NodeP<T> tanh_op(const NodeP<T>& a) {
        Tensor3<T> out = a->val;
        for (T& x : out.v) x = static_cast<T>(std::tanh(static_cast<double>(x)));
        auto n = make(std::move(out), {a});
        if (n->needs_grad) {
            Node<T>* self = n.get();
            n->back = [self, a]() {
                for (size_t i = 0; i < a->grad.v.size(); ++i) {
                    double y = self->val.v[i];
                    a->grad.v[i] += static_cast<T>(self->grad.v[i] * (1.0 - y * y));
                }
            };
        }
        return n;
    }

    NodeP<T> concat(const std::vector<NodeP<T>>& parts) {
        if (parts.empty()) throw std::invalid_argument("concat: no inputs");
        int h = parts[0]->val.h, w = parts[0]->val.w, c = 0;
        for (auto& p : parts) {
            if (p->val.h != h || p->val.w != w) throw std::invalid_argument("concat: spatial mismatch");
            c += p->val.c;
        }
        Tensor3<T> out(c, h, w);
        size_t off = 0;
        for (auto& p : parts) {
            std::copy(p->val.v.begin(), p->val.v.end(), out.v.begin() + off);
            off += p->val.v.size();
        }
        auto n = make(std::move(out), parts);
        if (n->needs_grad) {
            Node<T>* self = n.get();
            auto ps = parts;
            n->back = [self, ps]() {
                size_t off = 0;
                for (auto& p : ps) {
                    if (p->needs_grad)
                        for (size_t i = 0; i < p->grad.v.size(); ++i) p->grad.v[i] += self->grad.v[off + i];
                    off += p->val.v.size();
                }
            };
        }
        return n;
    }

    /// Convolution with odd kernel, "same" padding at stride 1, halving at stride 2.
    /// Weights are packed (Cout, Cin, K*K); bias is (Cout, 1, 1).
    NodeP<T> conv2d(const NodeP<T>& x, const NodeP<T>& wgt, const NodeP<T>& bias, int stride = 1) {
        const int cin = x->val.c, hin = x->val.h, win = x->val.w;
        const int cout = wgt->val.c;
        const int k = static_cast<int>(std::lround(std::sqrt(static_cast<double>(wgt->val.w))));
        if (k * k != wgt->val.w || k % 2 == 0) throw std::invalid_argument("conv2d: kernel must be odd square");
        if (wgt->val.h != cin) throw std::invalid_argument("conv2d: weight Cin mismatch");
        if (bias->val.c != cout || bias->val.h != 1 || bias->val.w != 1)
            throw std::invalid_argument("conv2d: bias shape mismatch");
        const int pad = k / 2;
        const int hout = (hin + 2 * pad - k) / stride + 1;
        const int wout = (win + 2 * pad - k) / stride + 1;
        const int ckk = cin * k * k;
        const int hw = hout * wout;

        auto col = std::make_shared<Mat>(ckk, hw);
        col->setZero();
        for (int ci = 0; ci < cin; ++ci) {
            const T* plane = x->val.plane(ci);
            for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                    int row = (ci * k + ky) * k + kx;
                    for (int oy = 0; oy < hout; ++oy) {
                        int iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= hin) continue;
                        for (int ox = 0; ox < wout; ++ox) {
                            int ix = ox * stride + kx - pad;
                            if (ix < 0 || ix >= win) continue;
                            (*col)(row, oy * wout + ox) = plane[static_cast<size_t>(iy) * win + ix];
                        }
                    }
                }
        }

        Tensor3<T> out(cout, hout, wout);
        {
            Eigen::Map<const RowMat> wm(wgt->val.v.data(), cout, ckk);
            Eigen::Map<RowMat> om(out.v.data(), cout, hw);
            om.noalias() = wm * (*col);
            for (int co = 0; co < cout; ++co) om.row(co).array() += bias->val.v[co];
        }

        auto n = make(std::move(out), {x, wgt, bias});
        if (n->needs_grad) {
            Node<T>* self = n.get();
            n->back = [self, x, wgt, bias, col, cin, hin, win, cout, k, pad, stride, hout, wout, ckk, hw]() {
                Eigen::Map<const RowMat> gom(self->grad.v.data(), cout, hw);
                if (wgt->needs_grad) {
                    Eigen::Map<RowMat> gw(wgt->grad.v.data(), cout, ckk);
                    gw.noalias() += gom * col->transpose();
                }
                if (bias->needs_grad)
                    for (int co = 0; co < cout; ++co) bias->grad.v[co] += gom.row(co).sum();
                if (x->needs_grad) {
                    Eigen::Map<const RowMat> wm(wgt->val.v.data(), cout, ckk);
                    Mat gcol = wm.transpose() * gom;
                    for (int ci = 0; ci < cin; ++ci) {
                        T* gplane = x->grad.plane(ci);
                        for (int ky = 0; ky < k; ++ky)
                            for (int kx = 0; kx < k; ++kx) {
                                int row = (ci * k + ky) * k + kx;
                                for (int oy = 0; oy < hout; ++oy) {
                                    int iy = oy * stride + ky - pad;
                                    if (iy < 0 || iy >= hin) continue;
                                    for (int ox = 0; ox < wout; ++ox) {
                                        int ix = ox * stride + kx - pad;
                                        if (ix < 0 || ix >= win) continue;
                                        gplane[static_cast<size_t>(iy) * win + ix] += gcol(row, oy * wout + ox);
                                    }
                                }
                            }
                    }
                }
            };
        }
        return n;
    }

    /// GroupNorm over (C/groups, H, W) per group; gamma/beta are (C, 1, 1).
    NodeP<T> group_norm(const NodeP<T>& x, const NodeP<T>& gamma, const NodeP<T>& beta, int groups,
                        double eps = 1e-5) {
        const int c = x->val.c, h = x->val.h, w = x->val.w;
        if (groups < 1 || c % groups != 0) throw std::invalid_argument("group_norm: groups must divide channels");
        if (gamma->val.c != c || beta->val.c != c) throw std::invalid_argument("group_norm: affine shape mismatch");
        const int cg = c / groups;
        const size_t m = static_cast<size_t>(cg) * h * w;

        auto xhat = std::make_shared<Tensor3<T>>(c, h, w);
        auto invstd = std::make_shared<std::vector<double>>(groups);
        Tensor3<T> out(c, h, w);
        for (int g = 0; g < groups; ++g) {
            const T* xs = x->val.plane(g * cg);
            double mean = 0.0;
            for (size_t i = 0; i < m; ++i) mean += xs[i];
            mean /= static_cast<double>(m);
            double var = 0.0;
            for (size_t i = 0; i < m; ++i) {
                double d = xs[i] - mean;
                var += d * d;
            }
            var /= static_cast<double>(m);
            double is = 1.0 / std::sqrt(var + eps);
            (*invstd)[g] = is;
            T* xh = xhat->plane(g * cg);
            for (size_t i = 0; i < m; ++i) xh[i] = static_cast<T>((xs[i] - mean) * is);
        }
        for (int ci = 0; ci < c; ++ci) {
            double ga = gamma->val.v[ci], be = beta->val.v[ci];
            const T* xh = xhat->plane(ci);
            T* o = out.plane(ci);
            for (size_t i = 0; i < static_cast<size_t>(h) * w; ++i)
                o[i] = static_cast<T>(ga * xh[i] + be);
        }

        auto n = make(std::move(out), {x, gamma, beta});
        if (n->needs_grad) {
            Node<T>* self = n.get();
            n->back = [self, x, gamma, beta, xhat, invstd, groups, cg, h, w, m]() {
                const size_t hw = static_cast<size_t>(h) * w;
                if (gamma->needs_grad || beta->needs_grad) {
                    for (int ci = 0; ci < x->val.c; ++ci) {
                        const T* go = self->grad.plane(ci);
                        const T* xh = xhat->plane(ci);
                        double dg = 0.0, db = 0.0;
                        for (size_t i = 0; i < hw; ++i) {
                            dg += static_cast<double>(go[i]) * xh[i];
                            db += go[i];
                        }
                        if (gamma->needs_grad) gamma->grad.v[ci] += static_cast<T>(dg);
                        if (beta->needs_grad) beta->grad.v[ci] += static_cast<T>(db);
                    }
                }
                if (!x->needs_grad) return;
                for (int g = 0; g < groups; ++g) {
                    // dxhat = gout * gamma; dx = invstd/m * (m*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat))
                    double sum_dxh = 0.0, sum_dxh_xh = 0.0;
                    for (int j = 0; j < cg; ++j) {
                        int ci = g * cg + j;
                        double ga = gamma->val.v[ci];
                        const T* go = self->grad.plane(ci);
                        const T* xh = xhat->plane(ci);
                        for (size_t i = 0; i < hw; ++i) {
                            double dxh = static_cast<double>(go[i]) * ga;
                            sum_dxh += dxh;
                            sum_dxh_xh += dxh * xh[i];
                        }
                    }
                    double is = (*invstd)[g];
                    double inv_m = 1.0 / static_cast<double>(m);
                    for (int j = 0; j < cg; ++j) {
                        int ci = g * cg + j;
                        double ga = gamma->val.v[ci];
                        const T* go = self->grad.plane(ci);
                        const T* xh = xhat->plane(ci);
                        T* gx = x->grad.plane(ci);
                        for (size_t i = 0; i < hw; ++i) {
                            double dxh = static_cast<double>(go[i]) * ga;
                            gx[i] += static_cast<T>(is * (dxh - inv_m * sum_dxh - xh[i] * inv_m * sum_dxh_xh));
                        }
                    }
                }
            };
        }
        return n;
    }

    /// Nearest-neighbor 2x upsampling.
    NodeP<T> upsample2(const NodeP<T>& x) {
        const int c = x->val.c, h = x->val.h, w = x->val.w;
        Tensor3<T> out(c, 2 * h, 2 * w);
        for (int ci = 0; ci < c; ++ci)
            for (int y = 0; y < 2 * h; ++y)
                for (int xx = 0; xx < 2 * w; ++xx) out(ci, y, xx) = x->val(ci, y / 2, xx / 2);
        auto n = make(std::move(out), {x});
        if (n->needs_grad) {
            Node<T>* self = n.get();
            n->back = [self, x, c, h, w]() {
                for (int ci = 0; ci < c; ++ci)
                    for (int y = 0; y < 2 * h; ++y)
                        for (int xx = 0; xx < 2 * w; ++xx)
                            x->grad(ci, y / 2, xx / 2) += self->grad(ci, y, xx);
            };
        }
        return n;
    }

    /// Feature-wise affine modulation: y_c = x_c * (1 + s_c) + b_c, with the
    /// per-channel (s, b) stacked in a (2C, 1, 1) tensor.
    NodeP<T> film(const NodeP<T>& x, const NodeP<T>& scale_shift) {
        const int c = x->val.c, h = x->val.h, w = x->val.w;
        if (scale_shift->val.c != 2 * c || scale_shift->val.h != 1 || scale_shift->val.w != 1)
            throw std::invalid_argument("film: expected (2C,1,1) modulation");
        const size_t hw = static_cast<size_t>(h) * w;
        Tensor3<T> out(c, h, w);
        for (int ci = 0; ci < c; ++ci) {
            double s = 1.0 + static_cast<double>(scale_shift->val.v[ci]);
            double b = scale_shift->val.v[c + ci];
            const T* xs = x->val.plane(ci);
            T* o = out.plane(ci);
            for (size_t i = 0; i < hw; ++i) o[i] = static_cast<T>(xs[i] * s + b);
        }
        auto n = make(std::move(out), {x, scale_shift});
        if (n->needs_grad) {
            Node<T>* self = n.get();
            n->back = [self, x, scale_shift, c, hw]() {
                for (int ci = 0; ci < c; ++ci) {
                    double s = 1.0 + static_cast<double>(scale_shift->val.v[ci]);
                    const T* go = self->grad.plane(ci);
                    const T* xs = x->val.plane(ci);
                    if (x->needs_grad) {
                        T* gx = x->grad.plane(ci);
                        for (size_t i = 0; i < hw; ++i) gx[i] += static_cast<T>(go[i] * s);
                    }
                    if (scale_shift->needs_grad) {
                        double ds = 0.0, db = 0.0;
                        for (size_t i = 0; i < hw; ++i) {
                            ds += static_cast<double>(go[i]) * xs[i];
                            db += go[i];
                        }
                        scale_shift->grad.v[ci] += static_cast<T>(ds);
                        scale_shift->grad.v[c + ci] += static_cast<T>(db);
                    }
                }
            };
        }
        return n;
    }

    /// Backward bilinear warp, differentiable in src and flow (2, H, W) pixels.
    /// Sample positions clamp to the border; the clamp zeroes the flow gradient
    /// outside the frame.
    NodeP<T> warp(const NodeP<T>& src, const NodeP<T>& flow) {
        const int c = src->val.c, h = src->val.h, w = src->val.w;
        if (flow->val.c != 2 || flow->val.h != h || flow->val.w != w)
            throw std::invalid_argument("warp: flow must be (2,H,W) matching src");
        Tensor3<T> out(c, h, w);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double sx = x + static_cast<double>(flow->val(0, y, x));
                double sy = y + static_cast<double>(flow->val(1, y, x));
                double xc = std::clamp(sx, 0.0, w - 1.0);
                double yc = std::clamp(sy, 0.0, h - 1.0);
                int x0 = static_cast<int>(std::floor(xc)), y0 = static_cast<int>(std::floor(yc));
                int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
                double fx = xc - x0, fy = yc - y0;
                for (int ci = 0; ci < c; ++ci) {
                    double v00 = src->val(ci, y0, x0), v01 = src->val(ci, y0, x1);
                    double v10 = src->val(ci, y1, x0), v11 = src->val(ci, y1, x1);
                    out(ci, y, x) = static_cast<T>((1 - fy) * ((1 - fx) * v00 + fx * v01) +
                                                  fy * ((1 - fx) * v10 + fx * v11));
                }
            }
        auto n = make(std::move(out), {src, flow});
        if (n->needs_grad) {
            Node<T>* self = n.get();
            n->back = [self, src, flow, c, h, w]() {
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x) {
                        double sx = x + static_cast<double>(flow->val(0, y, x));
                        double sy = y + static_cast<double>(flow->val(1, y, x));
                        bool in_x = sx > 0.0 && sx < w - 1.0;
                        bool in_y = sy > 0.0 && sy < h - 1.0;
                        double xc = std::clamp(sx, 0.0, w - 1.0);
                        double yc = std::clamp(sy, 0.0, h - 1.0);
                        int x0 = static_cast<int>(std::floor(xc)), y0 = static_cast<int>(std::floor(yc));
                        int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
                        double fx = xc - x0, fy = yc - y0;
                        double gx_acc = 0.0, gy_acc = 0.0;
                        for (int ci = 0; ci < c; ++ci) {
                            double g = self->grad(ci, y, x);
                            double v00 = src->val(ci, y0, x0), v01 = src->val(ci, y0, x1);
                            double v10 = src->val(ci, y1, x0), v11 = src->val(ci, y1, x1);
                            if (src->needs_grad) {
                                src->grad(ci, y0, x0) += static_cast<T>(g * (1 - fy) * (1 - fx));
                                src->grad(ci, y0, x1) += static_cast<T>(g * (1 - fy) * fx);
                                src->grad(ci, y1, x0) += static_cast<T>(g * fy * (1 - fx));
                                src->grad(ci, y1, x1) += static_cast<T>(g * fy * fx);
                            }
                            gx_acc += g * ((1 - fy) * (v01 - v00) + fy * (v11 - v10));
                            gy_acc += g * ((1 - fx) * (v10 - v00) + fx * (v11 - v01));
                        }
                        if (flow->needs_grad) {
                            if (in_x) flow->grad(0, y, x) += static_cast<T>(gx_acc);
                            if (in_y) flow->grad(1, y, x) += static_cast<T>(gy_acc);
                        }
                    }
            };
        }
        return n;
    }

    /// Fixed-weight linear reduction to a (1,1,1) scalar: sum(a * w).
    NodeP<T> weighted_sum(const NodeP<T>& a, const Tensor3<T>& w) {
        if (!a->val.same_shape(w)) throw std::invalid_argument("weighted_sum: shape mismatch");
        double s = 0.0;
        for (size_t i = 0; i < w.v.size(); ++i) s += static_cast<double>(a->val.v[i]) * w.v[i];
        Tensor3<T> out(1, 1, 1);
        out.v[0] = static_cast<T>(s);
        auto n = make(std::move(out), {a});
        if (n->needs_grad) {
            Node<T>* self = n.get();
            auto weights = std::make_shared<Tensor3<T>>(w);
            n->back = [self, a, weights]() {
                T g = self->grad.v[0];
                for (size_t i = 0; i < a->grad.v.size(); ++i) a->grad.v[i] += g * weights->v[i];
            };
        }
        return n;
    }

    /// Mean absolute difference, reduced to a (1,1,1) scalar node.
    NodeP<T> l1(const NodeP<T>& a, const NodeP<T>& b) {
        require_same(a, b, "l1");
        double sum = 0.0;
        for (size_t i = 0; i < a->val.v.size(); ++i)
            sum += std::abs(static_cast<double>(a->val.v[i]) - static_cast<double>(b->val.v[i]));
        const double inv_n = 1.0 / static_cast<double>(a->val.v.size());
        Tensor3<T> out(1, 1, 1);
        out.v[0] = static_cast<T>(sum * inv_n);
        auto n = make(std::move(out), {a, b});
        if (n->needs_grad) {
            Node<T>* self = n.get();
            n->back = [self, a, b, inv_n]() {
                double g = self->grad.v[0] * inv_n;
                for (size_t i = 0; i < a->val.v.size(); ++i) {
                    double d = static_cast<double>(a->val.v[i]) - static_cast<double>(b->val.v[i]);
                    double s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
                    if (a->needs_grad) a->grad.v[i] += static_cast<T>(g * s);
                    if (b->needs_grad) b->grad.v[i] -= static_cast<T>(g * s);
                }
            };
        }
        return n;
    }

    /// Reverse sweep from a scalar root.
    void backward(const NodeP<T>& root) {
        if (root->val.size() != 1) throw std::invalid_argument("backward: root must be scalar");
        if (!root->needs_grad) throw std::invalid_argument("backward: root does not require grad");
        root->grad.v[0] = T(1);
        for (auto it = order_.rbegin(); it != order_.rend(); ++it)
            if ((*it)->needs_grad && (*it)->back) (*it)->back();
    }

    size_t node_count() const { return order_.size(); }

  private:
    void require_same(const NodeP<T>& a, const NodeP<T>& b, const char* who) {
        if (!a->val.same_shape(b->val)) throw std::invalid_argument(std::string(who) + ": shape mismatch");
    }

    NodeP<T> make(Tensor3<T> val, const std::vector<NodeP<T>>& parents) {
        auto n = std::make_shared<Node<T>>();
        n->val = std::move(val);
        for (auto& p : parents)
            if (p->needs_grad) n->needs_grad = true;
        if (n->needs_grad) n->grad = Tensor3<T>(n->val.c, n->val.h, n->val.w, T(0));
        order_.push_back(n);
        return n;
    }

    std::vector<NodeP<T>> order_;
};

}  // namespace dda::autodiff
