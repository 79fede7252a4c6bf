#include <cmath>
#include <cstring>

#include "mvc/errors.hpp"
#include "mvc/tensor.hpp"

namespace mvc {

// Shared access point into Tensor/Tape internals for the op implementations.
struct OpCtx {
    static std::shared_ptr<detail::Storage> storage(const Tensor& t) { return t.s_; }

    static Tape* active_tape(std::initializer_list<const Tensor*> ins) {
        Tape* tp = nullptr;
        for (const Tensor* t : ins) {
            if (!t->tracked()) continue;
            Tape* tt = t->tape();
            if (!tt || !tt->recording()) continue;
            if (tp && tp != tt)
                throw StateError("operands belong to different gradient tapes");
            tp = tt;
        }
        return tp;
    }

    static Tensor make_out(Tape* tp, Shape shape, std::vector<double> v) {
        Tensor t = Tensor::constant(std::move(shape), std::move(v));
        if (tp) {
            t.s_->tracked = true;
            t.s_->tape = tp;
            t.s_->node_id = static_cast<int64_t>(tp->num_records());
        }
        return t;
    }

    static void record(Tape* tp, const char* op, std::function<void()> fn) {
        tp->add_record(op, std::move(fn));
    }
};

namespace {

using detail::Storage;
using Ptr = std::shared_ptr<Storage>;

void ensure_grad(const Ptr& s) {
    if (s->g.empty()) s->g.assign(s->v.size(), 0.0);
}

// Gradient of the output, or nullptr when nothing flowed into it.
const std::vector<double>* out_grad(const Ptr& out) {
    return out->g.empty() ? nullptr : &out->g;
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
}

int normalize_axis(const char* op, int axis, int rank) {
    const int a = axis < 0 ? axis + rank : axis;
    if (a < 0 || a >= rank)
        throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                             " out of range for rank " + std::to_string(rank));
    return a;
}

// Collapse a shape around `axis` into (outer, len, inner) extents.
struct AxisSplit {
    int64_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, int axis) {
    AxisSplit sp;
    for (int i = 0; i < axis; ++i) sp.outer *= s[i];
    sp.len = s[axis];
    for (size_t i = axis + 1; i < s.size(); ++i) sp.inner *= s[i];
    return sp;
}

// C[m,n] += A[m,k] * B[k,n]
void mm_accum(const double* A, const double* B, double* C, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const double* a = A + i * k;
        double* c = C + i * n;
        for (int64_t p = 0; p < k; ++p) {
            const double av = a[p];
            if (av == 0.0) continue;
            const double* b = B + p * n;
            for (int64_t j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

// Elementwise op with value and derivative functions computed together.
template <class Fwd, class Bwd>
Tensor unary_op(const char* name, const Tensor& x, Fwd fwd, Bwd dfdx) {
    const auto& xv = x.data();
    std::vector<double> out(xv.size());
    for (size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i], i);

    Tape* tp = OpCtx::active_tape({&x});
    Tensor y = OpCtx::make_out(tp, x.shape(), std::move(out));
    if (tp) {
        Ptr xs = OpCtx::storage(x), ys = OpCtx::storage(y);
        OpCtx::record(tp, name, [xs, ys, dfdx]() {
            const auto* og = out_grad(ys);
            if (!og) return;
            ensure_grad(xs);
            for (size_t i = 0; i < xs->v.size(); ++i)
                xs->g[i] += (*og)[i] * dfdx(xs->v[i], ys->v[i]);
        });
    }
    return y;
}

} // namespace

// ---- arithmetic ----

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape("add", a, b);
    const auto &av = a.data(), &bv = b.data();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
    Tape* tp = OpCtx::active_tape({&a, &b});
    Tensor y = OpCtx::make_out(tp, a.shape(), std::move(out));
    if (tp) {
        Ptr as = OpCtx::storage(a), bs = OpCtx::storage(b), ys = OpCtx::storage(y);
        const bool ta = a.tracked(), tb = b.tracked();
        OpCtx::record(tp, "add", [as, bs, ys, ta, tb]() {
            const auto* og = out_grad(ys);
            if (!og) return;
            if (ta) {
                ensure_grad(as);
                for (size_t i = 0; i < og->size(); ++i) as->g[i] += (*og)[i];
            }
            if (tb) {
                ensure_grad(bs);
                for (size_t i = 0; i < og->size(); ++i) bs->g[i] += (*og)[i];
            }
        });
    }
    return y;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape("sub", a, b);
    const auto &av = a.data(), &bv = b.data();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
    Tape* tp = OpCtx::active_tape({&a, &b});
    Tensor y = OpCtx::make_out(tp, a.shape(), std::move(out));
    if (tp) {
        Ptr as = OpCtx::storage(a), bs = OpCtx::storage(b), ys = OpCtx::storage(y);
        const bool ta = a.tracked(), tb = b.tracked();
        OpCtx::record(tp, "sub", [as, bs, ys, ta, tb]() {
            const auto* og = out_grad(ys);
            if (!og) return;
            if (ta) {
                ensure_grad(as);
                for (size_t i = 0; i < og->size(); ++i) as->g[i] += (*og)[i];
            }
            if (tb) {
                ensure_grad(bs);
                for (size_t i = 0; i < og->size(); ++i) bs->g[i] -= (*og)[i];
            }
        });
    }
    return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape("mul", a, b);
    const auto &av = a.data(), &bv = b.data();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
    Tape* tp = OpCtx::active_tape({&a, &b});
    Tensor y = OpCtx::make_out(tp, a.shape(), std::move(out));
    if (tp) {
        Ptr as = OpCtx::storage(a), bs = OpCtx::storage(b), ys = OpCtx::storage(y);
        const bool ta = a.tracked(), tb = b.tracked();
        OpCtx::record(tp, "mul", [as, bs, ys, ta, tb]() {
            const auto* og = out_grad(ys);
            if (!og) return;
            if (ta) {
                ensure_grad(as);
                for (size_t i = 0; i < og->size(); ++i) as->g[i] += (*og)[i] * bs->v[i];
            }
            if (tb) {
                ensure_grad(bs);
                for (size_t i = 0; i < og->size(); ++i) bs->g[i] += (*og)[i] * as->v[i];
            }
        });
    }
    return y;
}

Tensor scale(const Tensor& x, double c) {
    return unary_op(
        "scale", x, [c](double v, size_t) { return c * v; },
        [c](double, double) { return c; });
}

Tensor add_const(const Tensor& x, double c) {
    return unary_op(
        "add_const", x, [c](double v, size_t) { return v + c; },
        [](double, double) { return 1.0; });
}

Tensor pow_const(const Tensor& x, double p) {
    const bool integral = p >= 0.0 && p == std::floor(p);
    if (!integral) {
        const auto& xv = x.data();
        for (size_t i = 0; i < xv.size(); ++i)
            if (xv[i] <= 0.0)
                throw DomainError("pow_const: base " + std::to_string(xv[i]) +
                                  " at flat index " + std::to_string(i) +
                                  " requires a non-negative integer exponent");
    }
    return unary_op(
        "pow_const", x, [p](double v, size_t) { return std::pow(v, p); },
        [p](double v, double) { return p == 0.0 ? 0.0 : p * std::pow(v, p - 1.0); });
}

Tensor sigmoid(const Tensor& x) {
    return unary_op(
        "sigmoid", x,
        [](double v, size_t) {
            if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
            const double e = std::exp(v);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor log(const Tensor& x) {
    const auto& xv = x.data();
    for (size_t i = 0; i < xv.size(); ++i)
        if (xv[i] <= 0.0)
            throw DomainError("log: non-positive value " + std::to_string(xv[i]) +
                              " at flat index " + std::to_string(i));
    return unary_op(
        "log", x, [](double v, size_t) { return std::log(v); },
        [](double v, double) { return 1.0 / v; });
}

Tensor square(const Tensor& x) {
    return unary_op(
        "square", x, [](double v, size_t) { return v * v; },
        [](double v, double) { return 2.0 * v; });
}

Tensor gelu(const Tensor& x) {
    constexpr double kC0 = 0.7978845608028654; // sqrt(2/pi)
    constexpr double kC1 = 0.044715;
    return unary_op(
        "gelu", x,
        [](double v, size_t) {
            const double u = kC0 * (v + kC1 * v * v * v);
            return 0.5 * v * (1.0 + std::tanh(u));
        },
        [](double v, double) {
            const double u = kC0 * (v + kC1 * v * v * v);
            const double t = std::tanh(u);
            const double du = kC0 * (1.0 + 3.0 * kC1 * v * v);
            return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
        });
}

// ---- matmul ----

Tensor matmul(const Tensor& a, const Tensor& b) {
    const Shape &sa = a.shape(), &sb = b.shape();
    if (sa.size() < 2 || sb.size() < 2)
        throw DimensionError("matmul: operands must have rank >= 2, got " + shape_str(sa) +
                             " and " + shape_str(sb));
    const int64_t m = sa[sa.size() - 2], k = sa[sa.size() - 1];
    const int64_t k2 = sb[sb.size() - 2], n = sb[sb.size() - 1];
    if (k != k2)
        throw DimensionError("matmul: inner dimensions disagree: " + shape_str(sa) + " vs " +
                             shape_str(sb));

    const Shape batch_a(sa.begin(), sa.end() - 2);
    const Shape batch_b(sb.begin(), sb.end() - 2);
    Shape batch;
    if (batch_a == batch_b)
        batch = batch_a;
    else if (batch_a.empty())
        batch = batch_b;
    else if (batch_b.empty())
        batch = batch_a;
    else
        throw DimensionError("matmul: batch dimensions disagree: " + shape_str(sa) + " vs " +
                             shape_str(sb));

    const int64_t nb = numel(batch);
    const bool a_shared = batch_a.empty() && !batch.empty();
    const bool b_shared = batch_b.empty() && !batch.empty();

    Shape out_shape = batch;
    out_shape.push_back(m);
    out_shape.push_back(n);
    std::vector<double> out(static_cast<size_t>(nb * m * n), 0.0);

    const double* av = a.data().data();
    const double* bv = b.data().data();
    for (int64_t bi = 0; bi < nb; ++bi) {
        const double* A = av + (a_shared ? 0 : bi * m * k);
        const double* B = bv + (b_shared ? 0 : bi * k * n);
        mm_accum(A, B, out.data() + bi * m * n, m, k, n);
    }

    Tape* tp = OpCtx::active_tape({&a, &b});
    Tensor y = OpCtx::make_out(tp, std::move(out_shape), std::move(out));
    if (tp) {
        Ptr as = OpCtx::storage(a), bs = OpCtx::storage(b), ys = OpCtx::storage(y);
        const bool ta = a.tracked(), tb = b.tracked();
        OpCtx::record(tp, "matmul", [as, bs, ys, ta, tb, nb, m, k, n, a_shared, b_shared]() {
            const auto* og = out_grad(ys);
            if (!og) return;
            if (ta) ensure_grad(as);
            if (tb) ensure_grad(bs);
            for (int64_t bi = 0; bi < nb; ++bi) {
                const double* G = og->data() + bi * m * n;
                const double* A = as->v.data() + (a_shared ? 0 : bi * m * k);
                const double* B = bs->v.data() + (b_shared ? 0 : bi * k * n);
                if (ta) {
                    double* gA = as->g.data() + (a_shared ? 0 : bi * m * k);
                    // dA[i,p] += sum_j G[i,j] * B[p,j]
                    for (int64_t i = 0; i < m; ++i) {
                        const double* gi = G + i * n;
                        double* gai = gA + i * k;
                        for (int64_t p = 0; p < k; ++p) {
                            const double* bp = B + p * n;
                            double acc = 0.0;
                            for (int64_t j = 0; j < n; ++j) acc += gi[j] * bp[j];
                            gai[p] += acc;
                        }
                    }
                }
                if (tb) {
                    double* gB = bs->g.data() + (b_shared ? 0 : bi * k * n);
                    // dB[p,j] += sum_i A[i,p] * G[i,j]
                    for (int64_t i = 0; i < m; ++i) {
                        const double* ai = A + i * k;
                        const double* gi = G + i * n;
                        for (int64_t p = 0; p < k; ++p) {
                            const double av2 = ai[p];
                            if (av2 == 0.0) continue;
                            double* gbp = gB + p * n;
                            for (int64_t j = 0; j < n; ++j) gbp[j] += av2 * gi[j];
                        }
                    }
                }
            }
        });
    }
    return y;
}

// ---- softmax ----

Tensor softmax(const Tensor& x, int axis) {
    const int ax = normalize_axis("softmax", axis, x.rank());
    const AxisSplit sp = split_axis(x.shape(), ax);
    const auto& xv = x.data();
    std::vector<double> out(xv.size());
    for (int64_t o = 0; o < sp.outer; ++o) {
        for (int64_t in = 0; in < sp.inner; ++in) {
            const int64_t base = o * sp.len * sp.inner + in;
            double mx = -INFINITY;
            for (int64_t l = 0; l < sp.len; ++l)
                mx = std::max(mx, xv[base + l * sp.inner]);
            double sum = 0.0;
            for (int64_t l = 0; l < sp.len; ++l) {
                const double e = std::exp(xv[base + l * sp.inner] - mx);
                out[base + l * sp.inner] = e;
                sum += e;
            }
            const double inv = 1.0 / sum;
            for (int64_t l = 0; l < sp.len; ++l) out[base + l * sp.inner] *= inv;
        }
    }

    Tape* tp = OpCtx::active_tape({&x});
    Tensor y = OpCtx::make_out(tp, x.shape(), std::move(out));
    if (tp) {
        Ptr xs = OpCtx::storage(x), ys = OpCtx::storage(y);
        OpCtx::record(tp, "softmax", [xs, ys, sp]() {
            const auto* og = out_grad(ys);
            if (!og) return;
            ensure_grad(xs);
            for (int64_t o = 0; o < sp.outer; ++o) {
                for (int64_t in = 0; in < sp.inner; ++in) {
                    const int64_t base = o * sp.len * sp.inner + in;
                    double dot = 0.0;
                    for (int64_t l = 0; l < sp.len; ++l) {
                        const int64_t idx = base + l * sp.inner;
                        dot += (*og)[idx] * ys->v[idx];
                    }
                    for (int64_t l = 0; l < sp.len; ++l) {
                        const int64_t idx = base + l * sp.inner;
                        xs->g[idx] += ys->v[idx] * ((*og)[idx] - dot);
                    }
                }
            }
        });
    }
    return y;
}

// ---- layer norm ----

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    if (x.rank() < 1) throw DimensionError("layer_norm: input must have rank >= 1");
    const int64_t d = x.shape().back();
    if (gain.shape() != Shape{d} || bias.shape() != Shape{d})
        throw DimensionError("layer_norm: gain/bias must have shape [" + std::to_string(d) +
                             "], got " + shape_str(gain.shape()) + " and " +
                             shape_str(bias.shape()));
    const int64_t rows = x.size() / d;
    const auto& xv = x.data();
    const auto& gv = gain.data();
    const auto& bv = bias.data();
    std::vector<double> out(xv.size());
    std::vector<double> xhat(xv.size());
    std::vector<double> inv_std(rows);
    for (int64_t r = 0; r < rows; ++r) {
        const double* row = xv.data() + r * d;
        double mean = 0.0;
        for (int64_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (int64_t j = 0; j < d; ++j) {
            const double c = row[j] - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[r] = is;
        for (int64_t j = 0; j < d; ++j) {
            const double xh = (row[j] - mean) * is;
            xhat[r * d + j] = xh;
            out[r * d + j] = gv[j] * xh + bv[j];
        }
    }

    Tape* tp = OpCtx::active_tape({&x, &gain, &bias});
    Tensor y = OpCtx::make_out(tp, x.shape(), std::move(out));
    if (tp) {
        Ptr xs = OpCtx::storage(x), gs = OpCtx::storage(gain), bs = OpCtx::storage(bias),
            ys = OpCtx::storage(y);
        const bool tx = x.tracked(), tg = gain.tracked(), tb = bias.tracked();
        OpCtx::record(tp, "layer_norm",
                      [xs, gs, bs, ys, xhat = std::move(xhat), inv_std = std::move(inv_std), rows,
                       d, tx, tg, tb]() {
            const auto* og = out_grad(ys);
            if (!og) return;
            if (tx) ensure_grad(xs);
            if (tg) ensure_grad(gs);
            if (tb) ensure_grad(bs);
            for (int64_t r = 0; r < rows; ++r) {
                const double* g = og->data() + r * d;
                const double* xh = xhat.data() + r * d;
                if (tg || tb) {
                    for (int64_t j = 0; j < d; ++j) {
                        if (tg) gs->g[j] += g[j] * xh[j];
                        if (tb) bs->g[j] += g[j];
                    }
                }
                if (tx) {
                    double mean_dg = 0.0, mean_dgx = 0.0;
                    for (int64_t j = 0; j < d; ++j) {
                        const double dg = g[j] * gs->v[j];
                        mean_dg += dg;
                        mean_dgx += dg * xh[j];
                    }
                    mean_dg /= static_cast<double>(d);
                    mean_dgx /= static_cast<double>(d);
                    double* gx = xs->g.data() + r * d;
                    for (int64_t j = 0; j < d; ++j) {
                        const double dg = g[j] * gs->v[j];
                        gx[j] += inv_std[r] * (dg - mean_dg - xh[j] * mean_dgx);
                    }
                }
            }
        });
    }
    return y;
}

// ---- structural ops ----

Tensor reshape(const Tensor& x, Shape new_shape) {
    if (numel(new_shape) != x.size())
        throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                             shape_str(new_shape));
    Tape* tp = OpCtx::active_tape({&x});
    Tensor y = OpCtx::make_out(tp, std::move(new_shape), x.data());
    if (tp) {
        Ptr xs = OpCtx::storage(x), ys = OpCtx::storage(y);
        OpCtx::record(tp, "reshape", [xs, ys]() {
            const auto* og = out_grad(ys);
            if (!og) return;
            ensure_grad(xs);
            for (size_t i = 0; i < og->size(); ++i) xs->g[i] += (*og)[i];
        });
    }
    return y;
}

namespace {

// Flat index mapping for a permutation of axes, reused by forward and
// backward of transpose.
std::vector<int64_t> permute_map(const Shape& in_shape, const std::vector<int>& perm) {
    const int r = static_cast<int>(in_shape.size());
    Shape out_shape(r);
    for (int i = 0; i < r; ++i) out_shape[i] = in_shape[perm[i]];
    const auto out_st = row_major_strides(out_shape);
    // out_flat(in_index) = sum_i in_index[perm[i]] * out_st[i]
    std::vector<int64_t> contrib(r); // contribution of in axis j per unit step
    for (int i = 0; i < r; ++i) contrib[perm[i]] = out_st[i];

    const int64_t n = numel(in_shape);
    std::vector<int64_t> map(n);
    std::vector<int64_t> idx(r, 0);
    int64_t out_flat = 0;
    for (int64_t f = 0; f < n; ++f) {
        map[f] = out_flat;
        // odometer increment over the input index
        for (int ax = r - 1; ax >= 0; --ax) {
            idx[ax]++;
            out_flat += contrib[ax];
            if (idx[ax] < in_shape[ax]) break;
            out_flat -= contrib[ax] * in_shape[ax];
            idx[ax] = 0;
        }
    }
    return map;
}

} // namespace

Tensor transpose(const Tensor& x, const std::vector<int>& perm) {
    const int r = x.rank();
    if (static_cast<int>(perm.size()) != r)
        throw DimensionError("transpose: permutation size " + std::to_string(perm.size()) +
                             " vs rank " + std::to_string(r));
    std::vector<bool> seen(r, false);
    for (int p : perm) {
        if (p < 0 || p >= r || seen[p])
            throw DimensionError("transpose: invalid permutation");
        seen[p] = true;
    }
    Shape out_shape(r);
    for (int i = 0; i < r; ++i) out_shape[i] = x.shape()[perm[i]];

    auto map = permute_map(x.shape(), perm);
    const auto& xv = x.data();
    std::vector<double> out(xv.size());
    for (size_t f = 0; f < xv.size(); ++f) out[map[f]] = xv[f];

    Tape* tp = OpCtx::active_tape({&x});
    Tensor y = OpCtx::make_out(tp, std::move(out_shape), std::move(out));
    if (tp) {
        Ptr xs = OpCtx::storage(x), ys = OpCtx::storage(y);
        OpCtx::record(tp, "transpose", [xs, ys, map = std::move(map)]() {
            const auto* og = out_grad(ys);
            if (!og) return;
            ensure_grad(xs);
            for (size_t f = 0; f < map.size(); ++f) xs->g[f] += (*og)[map[f]];
        });
    }
    return y;
}

Tensor slice(const Tensor& x, int axis, int64_t start, int64_t len) {
    const int ax = normalize_axis("slice", axis, x.rank());
    const int64_t extent = x.shape()[ax];
    if (start < 0 || len < 0 || start + len > extent)
        throw DimensionError("slice: range [" + std::to_string(start) + ", " +
                             std::to_string(start + len) + ") out of bounds for axis extent " +
                             std::to_string(extent));
    const AxisSplit sp = split_axis(x.shape(), ax);
    Shape out_shape = x.shape();
    out_shape[ax] = len;
    const auto& xv = x.data();
    std::vector<double> out(static_cast<size_t>(sp.outer * len * sp.inner));
    for (int64_t o = 0; o < sp.outer; ++o)
        for (int64_t l = 0; l < len; ++l)
            std::memcpy(out.data() + (o * len + l) * sp.inner,
                        xv.data() + (o * sp.len + start + l) * sp.inner,
                        sizeof(double) * static_cast<size_t>(sp.inner));

    Tape* tp = OpCtx::active_tape({&x});
    Tensor y = OpCtx::make_out(tp, std::move(out_shape), std::move(out));
    if (tp) {
        Ptr xs = OpCtx::storage(x), ys = OpCtx::storage(y);
        OpCtx::record(tp, "slice", [xs, ys, sp, start, len]() {
            const auto* og = out_grad(ys);
            if (!og) return;
            ensure_grad(xs);
            for (int64_t o = 0; o < sp.outer; ++o)
                for (int64_t l = 0; l < len; ++l) {
                    const double* g = og->data() + (o * len + l) * sp.inner;
                    double* gx = xs->g.data() + (o * sp.len + start + l) * sp.inner;
                    for (int64_t in = 0; in < sp.inner; ++in) gx[in] += g[in];
                }
        });
    }
    return y;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw DimensionError("concat: no inputs");
    const int ax = normalize_axis("concat", axis, parts[0].rank());
    Shape out_shape = parts[0].shape();
    int64_t total = 0;
    for (const Tensor& t : parts) {
        Shape s = t.shape();
        if (s.size() != out_shape.size())
            throw DimensionError("concat: rank mismatch between inputs");
        for (size_t i = 0; i < s.size(); ++i)
            if (static_cast<int>(i) != ax && s[i] != out_shape[i])
                throw DimensionError("concat: incompatible shapes " + shape_str(out_shape) +
                                     " vs " + shape_str(s));
        total += s[ax];
    }
    out_shape[ax] = total;
    const AxisSplit sp = split_axis(out_shape, ax);

    std::vector<double> out(static_cast<size_t>(numel(out_shape)));
    int64_t offset = 0;
    for (const Tensor& t : parts) {
        const int64_t len = t.shape()[ax];
        const auto& tv = t.data();
        for (int64_t o = 0; o < sp.outer; ++o)
            for (int64_t l = 0; l < len; ++l)
                std::memcpy(out.data() + (o * sp.len + offset + l) * sp.inner,
                            tv.data() + (o * len + l) * sp.inner,
                            sizeof(double) * static_cast<size_t>(sp.inner));
        offset += len;
    }

    std::vector<const Tensor*> refs;
    refs.reserve(parts.size());
    for (const Tensor& t : parts) refs.push_back(&t);
    Tape* tp = nullptr;
    for (const Tensor* t : refs) {
        Tape* one = OpCtx::active_tape({t});
        if (one) {
            if (tp && tp != one) throw StateError("concat: inputs from different tapes");
            tp = one;
        }
    }

    Tensor y = OpCtx::make_out(tp, std::move(out_shape), std::move(out));
    if (tp) {
        std::vector<Ptr> srcs;
        std::vector<int64_t> lens;
        std::vector<bool> tracked;
        for (const Tensor& t : parts) {
            srcs.push_back(OpCtx::storage(t));
            lens.push_back(t.shape()[ax]);
            tracked.push_back(t.tracked());
        }
        Ptr ys = OpCtx::storage(y);
        OpCtx::record(tp, "concat", [srcs, lens, tracked, ys, sp]() {
            const auto* og = out_grad(ys);
            if (!og) return;
            int64_t offset = 0;
            for (size_t pi = 0; pi < srcs.size(); ++pi) {
                const int64_t len = lens[pi];
                if (tracked[pi]) {
                    ensure_grad(srcs[pi]);
                    for (int64_t o = 0; o < sp.outer; ++o)
                        for (int64_t l = 0; l < len; ++l) {
                            const double* g = og->data() + (o * sp.len + offset + l) * sp.inner;
                            double* gx = srcs[pi]->g.data() + (o * len + l) * sp.inner;
                            for (int64_t in = 0; in < sp.inner; ++in) gx[in] += g[in];
                        }
                }
                offset += len;
            }
        });
    }
    return y;
}

// ---- reductions and broadcasts ----

Tensor sum_all(const Tensor& x) {
    const auto& xv = x.data();
    double s = 0.0;
    for (double v : xv) s += v;
    Tape* tp = OpCtx::active_tape({&x});
    Tensor y = OpCtx::make_out(tp, {}, {s});
    if (tp) {
        Ptr xs = OpCtx::storage(x), ys = OpCtx::storage(y);
        OpCtx::record(tp, "sum_all", [xs, ys]() {
            const auto* og = out_grad(ys);
            if (!og) return;
            ensure_grad(xs);
            const double g = (*og)[0];
            for (double& gx : xs->g) gx += g;
        });
    }
    return y;
}

Tensor sum_axis(const Tensor& x, int axis) {
    const int ax = normalize_axis("sum_axis", axis, x.rank());
    const AxisSplit sp = split_axis(x.shape(), ax);
    Shape out_shape;
    for (int i = 0; i < x.rank(); ++i)
        if (i != ax) out_shape.push_back(x.shape()[i]);
    const auto& xv = x.data();
    std::vector<double> out(static_cast<size_t>(sp.outer * sp.inner), 0.0);
    for (int64_t o = 0; o < sp.outer; ++o)
        for (int64_t l = 0; l < sp.len; ++l) {
            const double* src = xv.data() + (o * sp.len + l) * sp.inner;
            double* dst = out.data() + o * sp.inner;
            for (int64_t in = 0; in < sp.inner; ++in) dst[in] += src[in];
        }

    Tape* tp = OpCtx::active_tape({&x});
    Tensor y = OpCtx::make_out(tp, std::move(out_shape), std::move(out));
    if (tp) {
        Ptr xs = OpCtx::storage(x), ys = OpCtx::storage(y);
        OpCtx::record(tp, "sum_axis", [xs, ys, sp]() {
            const auto* og = out_grad(ys);
            if (!og) return;
            ensure_grad(xs);
            for (int64_t o = 0; o < sp.outer; ++o)
                for (int64_t l = 0; l < sp.len; ++l) {
                    const double* g = og->data() + o * sp.inner;
                    double* gx = xs->g.data() + (o * sp.len + l) * sp.inner;
                    for (int64_t in = 0; in < sp.inner; ++in) gx[in] += g[in];
                }
        });
    }
    return y;
}

Tensor expand_last(const Tensor& x, int64_t n) {
    if (n <= 0) throw DimensionError("expand_last: repeat count must be positive");
    Shape out_shape = x.shape();
    out_shape.push_back(n);
    const auto& xv = x.data();
    std::vector<double> out(xv.size() * static_cast<size_t>(n));
    for (size_t i = 0; i < xv.size(); ++i)
        for (int64_t j = 0; j < n; ++j) out[i * n + j] = xv[i];

    Tape* tp = OpCtx::active_tape({&x});
    Tensor y = OpCtx::make_out(tp, std::move(out_shape), std::move(out));
    if (tp) {
        Ptr xs = OpCtx::storage(x), ys = OpCtx::storage(y);
        OpCtx::record(tp, "expand_last", [xs, ys, n]() {
            const auto* og = out_grad(ys);
            if (!og) return;
            ensure_grad(xs);
            for (size_t i = 0; i < xs->v.size(); ++i) {
                double acc = 0.0;
                for (int64_t j = 0; j < n; ++j) acc += (*og)[i * n + j];
                xs->g[i] += acc;
            }
        });
    }
    return y;
}

Tensor add_rowvec(const Tensor& x, const Tensor& b) {
    if (x.rank() < 1 || b.shape() != Shape{x.shape().back()})
        throw DimensionError("add_rowvec: bias shape " + shape_str(b.shape()) +
                             " does not match last axis of " + shape_str(x.shape()));
    const int64_t d = x.shape().back();
    const int64_t rows = x.size() / d;
    const auto &xv = x.data(), &bv = b.data();
    std::vector<double> out(xv.size());
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < d; ++j) out[r * d + j] = xv[r * d + j] + bv[j];

    Tape* tp = OpCtx::active_tape({&x, &b});
    Tensor y = OpCtx::make_out(tp, x.shape(), std::move(out));
    if (tp) {
        Ptr xs = OpCtx::storage(x), bs = OpCtx::storage(b), ys = OpCtx::storage(y);
        const bool tx = x.tracked(), tb = b.tracked();
        OpCtx::record(tp, "add_rowvec", [xs, bs, ys, rows, d, tx, tb]() {
            const auto* og = out_grad(ys);
            if (!og) return;
            if (tx) {
                ensure_grad(xs);
                for (size_t i = 0; i < og->size(); ++i) xs->g[i] += (*og)[i];
            }
            if (tb) {
                ensure_grad(bs);
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t j = 0; j < d; ++j) bs->g[j] += (*og)[r * d + j];
            }
        });
    }
    return y;
}

// ---- rotary embedding ----

Tensor rope_rotate(const Tensor& x, const std::vector<std::array<int, 2>>& coords, double base) {
    if (x.rank() < 2)
        throw DimensionError("rope_rotate: input must have rank >= 2, got " +
                             shape_str(x.shape()));
    const int64_t hd = x.shape().back();
    const int64_t T = x.shape()[x.rank() - 2];
    if (hd % 4 != 0)
        throw DimensionError("rope_rotate: head dim " + std::to_string(hd) +
                             " must be divisible by 4");
    if (static_cast<int64_t>(coords.size()) != T)
        throw DimensionError("rope_rotate: " + std::to_string(coords.size()) +
                             " coords for " + std::to_string(T) + " tokens");
    if (base <= 0.0) throw DomainError("rope_rotate: base must be positive");

    const int64_t half = hd / 2;
    const int64_t pairs = half / 2;
    // cos/sin per (token, half, pair)
    std::vector<double> cs(static_cast<size_t>(T * 2 * pairs)), sn(cs.size());
    for (int64_t t = 0; t < T; ++t) {
        for (int h = 0; h < 2; ++h) {
            const double coord = static_cast<double>(coords[t][h]);
            for (int64_t i = 0; i < pairs; ++i) {
                const double freq =
                    std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(half));
                const double ang = coord * freq;
                const size_t idx = static_cast<size_t>((t * 2 + h) * pairs + i);
                cs[idx] = std::cos(ang);
                sn[idx] = std::sin(ang);
            }
        }
    }

    const int64_t nb = x.size() / (T * hd);
    const auto& xv = x.data();
    std::vector<double> out(xv.size());
    auto rotate = [&](const double* src, double* dst, bool inverse) {
        for (int64_t t = 0; t < T; ++t) {
            for (int h = 0; h < 2; ++h) {
                for (int64_t i = 0; i < pairs; ++i) {
                    const size_t ci = static_cast<size_t>((t * 2 + h) * pairs + i);
                    const double c = cs[ci];
                    const double s = inverse ? -sn[ci] : sn[ci];
                    const int64_t off = t * hd + h * half + 2 * i;
                    const double a = src[off], b = src[off + 1];
                    dst[off] = a * c - b * s;
                    dst[off + 1] = a * s + b * c;
                }
            }
        }
    };
    for (int64_t bi = 0; bi < nb; ++bi)
        rotate(xv.data() + bi * T * hd, out.data() + bi * T * hd, false);

    Tape* tp = OpCtx::active_tape({&x});
    Tensor y = OpCtx::make_out(tp, x.shape(), std::move(out));
    if (tp) {
        Ptr xs = OpCtx::storage(x), ys = OpCtx::storage(y);
        OpCtx::record(tp, "rope_rotate",
                      [xs, ys, cs = std::move(cs), sn = std::move(sn), T, hd, half, pairs, nb]() {
            const auto* og = out_grad(ys);
            if (!og) return;
            ensure_grad(xs);
            // The rotation is orthogonal, so the backward pass rotates the
            // incoming gradient by the negated angles.
            for (int64_t bi = 0; bi < nb; ++bi) {
                const double* g = og->data() + bi * T * hd;
                double* gx = xs->g.data() + bi * T * hd;
                for (int64_t t = 0; t < T; ++t)
                    for (int h = 0; h < 2; ++h)
                        for (int64_t i = 0; i < pairs; ++i) {
                            const size_t ci = static_cast<size_t>((t * 2 + h) * pairs + i);
                            const double c = cs[ci], s = sn[ci];
                            const int64_t off = t * hd + h * half + 2 * i;
                            const double ga = g[off], gb = g[off + 1];
                            gx[off] += ga * c + gb * s;
                            gx[off + 1] += -ga * s + gb * c;
                        }
            }
        });
    }
    return y;
}

// ---- mask token substitution ----

Tensor apply_mask_tokens(const Tensor& tokens, const std::vector<uint8_t>& masked,
                         const Tensor& mask_token) {
    if (tokens.rank() != 3)
        throw DimensionError("apply_mask_tokens: tokens must be [V,N,d], got " +
                             shape_str(tokens.shape()));
    const int64_t V = tokens.shape()[0], N = tokens.shape()[1], d = tokens.shape()[2];
    if (mask_token.shape() != Shape{d})
        throw DimensionError("apply_mask_tokens: mask token shape " +
                             shape_str(mask_token.shape()) + " does not match token dim " +
                             std::to_string(d));
    if (static_cast<int64_t>(masked.size()) != V * N)
        throw DimensionError("apply_mask_tokens: mask has " + std::to_string(masked.size()) +
                             " entries for " + std::to_string(V * N) + " tokens");

    const auto& tv = tokens.data();
    const auto& mv = mask_token.data();
    std::vector<double> out(tv.size());
    for (int64_t p = 0; p < V * N; ++p) {
        if (masked[p])
            std::memcpy(out.data() + p * d, mv.data(), sizeof(double) * static_cast<size_t>(d));
        else
            std::memcpy(out.data() + p * d, tv.data() + p * d,
                        sizeof(double) * static_cast<size_t>(d));
    }

    Tape* tp = OpCtx::active_tape({&tokens, &mask_token});
    Tensor y = OpCtx::make_out(tp, tokens.shape(), std::move(out));
    if (tp) {
        Ptr ts = OpCtx::storage(tokens), ms = OpCtx::storage(mask_token), ys = OpCtx::storage(y);
        const bool tt = tokens.tracked(), tm = mask_token.tracked();
        OpCtx::record(tp, "apply_mask_tokens", [ts, ms, ys, masked, d, V, N, tt, tm]() {
            const auto* og = out_grad(ys);
            if (!og) return;
            if (tt) ensure_grad(ts);
            if (tm) ensure_grad(ms);
            for (int64_t p = 0; p < V * N; ++p) {
                const double* g = og->data() + p * d;
                if (masked[p]) {
                    if (tm)
                        for (int64_t j = 0; j < d; ++j) ms->g[j] += g[j];
                } else {
                    if (tt) {
                        double* gt = ts->g.data() + p * d;
                        for (int64_t j = 0; j < d; ++j) gt[j] += g[j];
                    }
                }
            }
        });
    }
    return y;
}

} // namespace mvc
