#include "ad.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

namespace gradal::ad {

int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << ")";
    return os.str();
}

namespace {

thread_local Tape* g_active_tape = nullptr;

void check_shape(const Shape& shape, const char* op) {
    for (int d : shape) {
        if (d <= 0) fail(Status::InvalidArgument, std::string(op) + ": non-positive dimension in shape " + shape_str(shape));
    }
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
    fail(Status::InvalidArgument,
         std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

// Lazily allocates and returns the gradient accumulator of a (possibly
// const-captured) tensor handle.
double* grad_accum(const Tensor& t) {
    TensorImpl* impl = t.impl();
    if (impl->grad.empty()) impl->grad.assign(impl->val.size(), 0.0);
    return impl->grad.data();
}

bool should_record(std::initializer_list<const Tensor*> inputs) {
    if (!g_active_tape) return false;
    for (const Tensor* t : inputs)
        if ((*t).requires_grad()) return true;
    return false;
}

Tensor make_output(Shape shape, std::vector<double> values, bool requires_grad) {
    Tensor out = Tensor::from(std::move(shape), std::move(values), requires_grad);
    if (requires_grad) out.impl()->producer = g_active_tape;
    return out;
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    check_shape(shape, "zeros");
    auto n = static_cast<size_t>(shape_numel(shape));
    return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double fill, bool requires_grad) {
    check_shape(shape, "full");
    auto n = static_cast<size_t>(shape_numel(shape));
    return from(std::move(shape), std::vector<double>(n, fill), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    check_shape(shape, "from");
    if (static_cast<int64_t>(values.size()) != shape_numel(shape))
        fail(Status::InvalidArgument, "tensor: " + std::to_string(values.size()) +
                                          " values do not fill shape " + shape_str(shape));
    Tensor t;
    t.p_ = std::make_shared<TensorImpl>();
    t.p_->shape = std::move(shape);
    t.p_->val = std::move(values);
    t.p_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::scalar(double v) { return from({1}, {v}); }

double Tensor::item() const {
    if (numel() != 1) fail(Status::InvalidArgument, "item: tensor has shape " + shape_str(shape()));
    return p_->val[0];
}

std::span<double> Tensor::grad() {
    if (p_->grad.empty()) fail(Status::RuntimeError, "grad: missing gradient (no backward pass)");
    return p_->grad;
}

std::span<const double> Tensor::grad() const {
    if (p_->grad.empty()) fail(Status::RuntimeError, "grad: missing gradient (no backward pass)");
    return p_->grad;
}

void Tensor::ensure_grad() {
    if (p_->grad.empty()) p_->grad.assign(p_->val.size(), 0.0);
}

void Tensor::zero_grad() { p_->grad.assign(p_->val.size(), 0.0); }

Tensor Tensor::clone() const {
    Tensor t = from(p_->shape, p_->val, p_->requires_grad);
    t.p_->grad = p_->grad;
    return t;
}

void Tape::backward(const Tensor& out) {
    if (!out.defined() || out.numel() != 1)
        fail(Status::InvalidArgument, "backward: output must be a scalar");
    if (out.impl()->producer != this)
        fail(Status::InvalidArgument, "backward: output was not produced by this recorded forward pass");
    if (consumed_)
        fail(Status::RuntimeError, "backward: tape already consumed; reset before reusing");
    consumed_ = true;
    out.impl()->grad.assign(1, 0.0);
    out.impl()->grad[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

TapeScope::TapeScope(Tape& tape) : prev_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = prev_; }

Tape* active_tape() { return g_active_tape; }

// ---- elementwise ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) shape_error("add", a.shape(), b.shape());
    auto av = a.values();
    auto bv = b.values();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
    bool rec = should_record({&a, &b});
    Tensor c = make_output(a.shape(), std::move(out), rec);
    if (rec) {
        g_active_tape->record([a, b, c]() mutable {
            if (!c.has_grad()) return;
            auto gc = c.grad();
            if (a.requires_grad()) {
                double* ga = grad_accum(a);
                for (size_t i = 0; i < gc.size(); ++i) ga[i] += gc[i];
            }
            if (b.requires_grad()) {
                auto gb = grad_accum(b);
                for (size_t i = 0; i < gc.size(); ++i) gb[i] += gc[i];
            }
        });
    }
    return c;
}

Tensor add_rowvec(const Tensor& a, const Tensor& row) {
    if (a.ndim() != 2 || row.ndim() != 1 || a.dim(1) != row.dim(0))
        shape_error("add_rowvec", a.shape(), row.shape());
    size_t rows = static_cast<size_t>(a.dim(0)), cols = static_cast<size_t>(a.dim(1));
    auto av = a.values();
    auto rv = row.values();
    std::vector<double> out(av.size());
    for (size_t r = 0; r < rows; ++r)
        for (size_t j = 0; j < cols; ++j) out[r * cols + j] = av[r * cols + j] + rv[j];
    bool rec = should_record({&a, &row});
    Tensor c = make_output(a.shape(), std::move(out), rec);
    if (rec) {
        g_active_tape->record([a, row, c, rows, cols]() mutable {
            if (!c.has_grad()) return;
            auto gc = c.grad();
            if (a.requires_grad()) {
                double* ga = grad_accum(a);
                for (size_t i = 0; i < gc.size(); ++i) ga[i] += gc[i];
            }
            if (row.requires_grad()) {
                auto gr = row.impl()->grad.data();
                for (size_t r = 0; r < rows; ++r)
                    for (size_t j = 0; j < cols; ++j) gr[j] += gc[r * cols + j];
            }
        });
    }
    return c;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) shape_error("sub", a.shape(), b.shape());
    auto av = a.values();
    auto bv = b.values();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
    bool rec = should_record({&a, &b});
    Tensor c = make_output(a.shape(), std::move(out), rec);
    if (rec) {
        g_active_tape->record([a, b, c]() mutable {
            if (!c.has_grad()) return;
            auto gc = c.grad();
            if (a.requires_grad()) {
                double* ga = grad_accum(a);
                for (size_t i = 0; i < gc.size(); ++i) ga[i] += gc[i];
            }
            if (b.requires_grad()) {
                auto gb = grad_accum(b);
                for (size_t i = 0; i < gc.size(); ++i) gb[i] -= gc[i];
            }
        });
    }
    return c;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) shape_error("mul", a.shape(), b.shape());
    auto av = a.values();
    auto bv = b.values();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
    bool rec = should_record({&a, &b});
    Tensor c = make_output(a.shape(), std::move(out), rec);
    if (rec) {
        g_active_tape->record([a, b, c]() mutable {
            if (!c.has_grad()) return;
            auto gc = c.grad();
            auto av2 = a.values();
            auto bv2 = b.values();
            if (a.requires_grad()) {
                double* ga = grad_accum(a);
                for (size_t i = 0; i < gc.size(); ++i) ga[i] += gc[i] * bv2[i];
            }
            if (b.requires_grad()) {
                auto gb = grad_accum(b);
                for (size_t i = 0; i < gc.size(); ++i) gb[i] += gc[i] * av2[i];
            }
        });
    }
    return c;
}

Tensor scale(const Tensor& a, double s) {
    auto av = a.values();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] * s;
    bool rec = should_record({&a});
    Tensor c = make_output(a.shape(), std::move(out), rec);
    if (rec) {
        g_active_tape->record([a, c, s]() mutable {
            if (!c.has_grad()) return;
            auto gc = c.grad();
            double* ga = grad_accum(a);
            for (size_t i = 0; i < gc.size(); ++i) ga[i] += gc[i] * s;
        });
    }
    return c;
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor relu(const Tensor& a) {
    auto av = a.values();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
    bool rec = should_record({&a});
    Tensor c = make_output(a.shape(), std::move(out), rec);
    if (rec) {
        g_active_tape->record([a, c]() mutable {
            if (!c.has_grad()) return;
            auto gc = c.grad();
            auto av2 = a.values();
            double* ga = grad_accum(a);
            // subgradient 0 at the kink
            for (size_t i = 0; i < gc.size(); ++i)
                if (av2[i] > 0.0) ga[i] += gc[i];
        });
    }
    return c;
}

Tensor log_op(const Tensor& a) {
    auto av = a.values();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = std::log(av[i]);
    bool rec = should_record({&a});
    Tensor c = make_output(a.shape(), std::move(out), rec);
    if (rec) {
        g_active_tape->record([a, c]() mutable {
            if (!c.has_grad()) return;
            auto gc = c.grad();
            auto av2 = a.values();
            double* ga = grad_accum(a);
            for (size_t i = 0; i < gc.size(); ++i) ga[i] += gc[i] / av2[i];
        });
    }
    return c;
}

Tensor exp_op(const Tensor& a) {
    auto av = a.values();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = std::exp(av[i]);
    bool rec = should_record({&a});
    Tensor c = make_output(a.shape(), std::move(out), rec);
    if (rec) {
        g_active_tape->record([a, c]() mutable {
            if (!c.has_grad()) return;
            auto gc = c.grad();
            auto cv = c.values();
            double* ga = grad_accum(a);
            for (size_t i = 0; i < gc.size(); ++i) ga[i] += gc[i] * cv[i];
        });
    }
    return c;
}

// ---- matmul ----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
        shape_error("matmul", a.shape(), b.shape());
    size_t m = static_cast<size_t>(a.dim(0));
    size_t k = static_cast<size_t>(a.dim(1));
    size_t n = static_cast<size_t>(b.dim(1));
    auto av = a.values();
    auto bv = b.values();
    std::vector<double> out(m * n, 0.0);
    for (size_t i = 0; i < m; ++i) {
        const double* arow = av.data() + i * k;
        double* orow = out.data() + i * n;
        for (size_t p = 0; p < k; ++p) {
            double aik = arow[p];
            if (aik == 0.0) continue;
            const double* brow = bv.data() + p * n;
            for (size_t j = 0; j < n; ++j) orow[j] += aik * brow[j];
        }
    }
    bool rec = should_record({&a, &b});
    Tensor c = make_output({static_cast<int>(m), static_cast<int>(n)}, std::move(out), rec);
    if (rec) {
        g_active_tape->record([a, b, c, m, k, n]() mutable {
            if (!c.has_grad()) return;
            auto gc = c.grad();
            auto av2 = a.values();
            auto bv2 = b.values();
            if (a.requires_grad()) {
                double* ga = grad_accum(a);
                // gA[i,p] += sum_j gC[i,j] * B[p,j]
                for (size_t i = 0; i < m; ++i) {
                    const double* gcrow = gc.data() + i * n;
                    double* garow = ga + i * k;
                    for (size_t p = 0; p < k; ++p) {
                        const double* brow = bv2.data() + p * n;
                        double acc = 0.0;
                        for (size_t j = 0; j < n; ++j) acc += gcrow[j] * brow[j];
                        garow[p] += acc;
                    }
                }
            }
            if (b.requires_grad()) {
                auto gb = grad_accum(b);
                // gB[p,j] += sum_i A[i,p] * gC[i,j]
                for (size_t i = 0; i < m; ++i) {
                    const double* arow = av2.data() + i * k;
                    const double* gcrow = gc.data() + i * n;
                    for (size_t p = 0; p < k; ++p) {
                        double aip = arow[p];
                        if (aip == 0.0) continue;
                        double* gbrow = gb + p * n;
                        for (size_t j = 0; j < n; ++j) gbrow[j] += aip * gcrow[j];
                    }
                }
            }
        });
    }
    return c;
}

// ---- reductions --------------------------------------------------------------

Tensor sum(const Tensor& a) {
    auto av = a.values();
    double s = 0.0;
    for (double v : av) s += v;
    bool rec = should_record({&a});
    Tensor c = make_output({1}, {s}, rec);
    if (rec) {
        g_active_tape->record([a, c]() mutable {
            if (!c.has_grad()) return;
            double g = c.grad()[0];
            double* ga = grad_accum(a);
            for (size_t i = 0; i < a.values().size(); ++i) ga[i] += g;
        });
    }
    return c;
}

Tensor mean(const Tensor& a) {
    auto av = a.values();
    double s = 0.0;
    for (double v : av) s += v;
    double inv = 1.0 / static_cast<double>(av.size());
    bool rec = should_record({&a});
    Tensor c = make_output({1}, {s * inv}, rec);
    if (rec) {
        g_active_tape->record([a, c, inv]() mutable {
            if (!c.has_grad()) return;
            double g = c.grad()[0] * inv;
            double* ga = grad_accum(a);
            for (size_t i = 0; i < a.values().size(); ++i) ga[i] += g;
        });
    }
    return c;
}

// ---- softmax family ----------------------------------------------------------

Tensor softmax_rows(const Tensor& a) {
    if (a.ndim() != 2) fail(Status::InvalidArgument, "softmax: expected 2-d input, got " + shape_str(a.shape()));
    size_t rows = static_cast<size_t>(a.dim(0)), cols = static_cast<size_t>(a.dim(1));
    auto av = a.values();
    std::vector<double> out(av.size());
    for (size_t r = 0; r < rows; ++r) {
        const double* in = av.data() + r * cols;
        double* o = out.data() + r * cols;
        double mx = in[0];
        for (size_t j = 1; j < cols; ++j) mx = std::max(mx, in[j]);
        double z = 0.0;
        for (size_t j = 0; j < cols; ++j) {
            o[j] = std::exp(in[j] - mx);
            z += o[j];
        }
        double inv = 1.0 / z;
        for (size_t j = 0; j < cols; ++j) o[j] *= inv;
    }
    bool rec = should_record({&a});
    Tensor c = make_output(a.shape(), std::move(out), rec);
    if (rec) {
        g_active_tape->record([a, c, rows, cols]() mutable {
            if (!c.has_grad()) return;
            auto gc = c.grad();
            auto cv = c.values();
            double* ga = grad_accum(a);
            for (size_t r = 0; r < rows; ++r) {
                const double* y = cv.data() + r * cols;
                const double* gy = gc.data() + r * cols;
                double dot = 0.0;
                for (size_t j = 0; j < cols; ++j) dot += gy[j] * y[j];
                double* g = ga + r * cols;
                for (size_t j = 0; j < cols; ++j) g[j] += y[j] * (gy[j] - dot);
            }
        });
    }
    return c;
}

Tensor log_softmax_rows(const Tensor& a) {
    if (a.ndim() != 2) fail(Status::InvalidArgument, "log_softmax: expected 2-d input, got " + shape_str(a.shape()));
    size_t rows = static_cast<size_t>(a.dim(0)), cols = static_cast<size_t>(a.dim(1));
    auto av = a.values();
    std::vector<double> out(av.size());
    for (size_t r = 0; r < rows; ++r) {
        const double* in = av.data() + r * cols;
        double* o = out.data() + r * cols;
        double mx = in[0];
        for (size_t j = 1; j < cols; ++j) mx = std::max(mx, in[j]);
        double z = 0.0;
        for (size_t j = 0; j < cols; ++j) z += std::exp(in[j] - mx);
        double lse = mx + std::log(z);
        for (size_t j = 0; j < cols; ++j) o[j] = in[j] - lse;
    }
    bool rec = should_record({&a});
    Tensor c = make_output(a.shape(), std::move(out), rec);
    if (rec) {
        g_active_tape->record([a, c, rows, cols]() mutable {
            if (!c.has_grad()) return;
            auto gc = c.grad();
            auto cv = c.values();
            double* ga = grad_accum(a);
            for (size_t r = 0; r < rows; ++r) {
                const double* lsm = cv.data() + r * cols;
                const double* gy = gc.data() + r * cols;
                double gsum = 0.0;
                for (size_t j = 0; j < cols; ++j) gsum += gy[j];
                double* g = ga + r * cols;
                for (size_t j = 0; j < cols; ++j) g[j] += gy[j] - std::exp(lsm[j]) * gsum;
            }
        });
    }
    return c;
}

Tensor pick_rows(const Tensor& a, std::span<const int> cols) {
    if (a.ndim() != 2 || static_cast<size_t>(a.dim(0)) != cols.size())
        fail(Status::InvalidArgument, "pick_rows: shape " + shape_str(a.shape()) + " with " +
                                          std::to_string(cols.size()) + " indices");
    size_t rows = cols.size();
    size_t n = static_cast<size_t>(a.dim(1));
    auto av = a.values();
    std::vector<double> out(rows);
    std::vector<int> idx(cols.begin(), cols.end());
    for (size_t r = 0; r < rows; ++r) {
        int j = idx[r];
        if (j < 0 || static_cast<size_t>(j) >= n)
            fail(Status::InvalidArgument, "pick_rows: index " + std::to_string(j) +
                                              " out of range for " + std::to_string(n) + " columns");
        out[r] = av[r * n + static_cast<size_t>(j)];
    }
    bool rec = should_record({&a});
    Tensor c = make_output({static_cast<int>(rows)}, std::move(out), rec);
    if (rec) {
        g_active_tape->record([a, c, idx = std::move(idx), n]() mutable {
            if (!c.has_grad()) return;
            auto gc = c.grad();
            double* ga = grad_accum(a);
            for (size_t r = 0; r < gc.size(); ++r) ga[r * n + static_cast<size_t>(idx[r])] += gc[r];
        });
    }
    return c;
}

Tensor reshape(const Tensor& a, Shape shape) {
    check_shape(shape, "reshape");
    if (shape_numel(shape) != a.numel()) shape_error("reshape", a.shape(), shape);
    auto av = a.values();
    bool rec = should_record({&a});
    Tensor c = make_output(std::move(shape), std::vector<double>(av.begin(), av.end()), rec);
    if (rec) {
        g_active_tape->record([a, c]() mutable {
            if (!c.has_grad()) return;
            auto gc = c.grad();
            double* ga = grad_accum(a);
            for (size_t i = 0; i < gc.size(); ++i) ga[i] += gc[i];
        });
    }
    return c;
}

Tensor detach(const Tensor& a) {
    auto av = a.values();
    return Tensor::from(a.shape(), std::vector<double>(av.begin(), av.end()), false);
}

// ---- conv / pool --------------------------------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.ndim() != 4 || w.ndim() != 4 || x.dim(1) != w.dim(1)) shape_error("conv2d", x.shape(), w.shape());
    int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    int F = w.dim(0), KH = w.dim(2), KW = w.dim(3);
    if (b.ndim() != 1 || b.dim(0) != F) shape_error("conv2d bias", w.shape(), b.shape());
    if (KH > H || KW > W)
        fail(Status::InvalidArgument, "conv2d: kernel " + shape_str(w.shape()) +
                                          " larger than input " + shape_str(x.shape()));
    int OH = H - KH + 1, OW = W - KW + 1;
    auto xv = x.values();
    auto wv = w.values();
    auto bv = b.values();
    std::vector<double> out(static_cast<size_t>(B) * F * OH * OW);
    auto xat = [&](int bb, int c, int i, int j) {
        return xv[((static_cast<size_t>(bb) * C + c) * H + i) * W + j];
    };
    auto wat = [&](int f, int c, int p, int q) {
        return wv[((static_cast<size_t>(f) * C + c) * KH + p) * KW + q];
    };
    for (int bb = 0; bb < B; ++bb)
        for (int f = 0; f < F; ++f)
            for (int i = 0; i < OH; ++i)
                for (int j = 0; j < OW; ++j) {
                    double acc = bv[static_cast<size_t>(f)];
                    for (int c = 0; c < C; ++c)
                        for (int p = 0; p < KH; ++p)
                            for (int q = 0; q < KW; ++q) acc += xat(bb, c, i + p, j + q) * wat(f, c, p, q);
                    out[((static_cast<size_t>(bb) * F + f) * OH + i) * OW + j] = acc;
                }
    bool rec = should_record({&x, &w, &b});
    Tensor c = make_output({B, F, OH, OW}, std::move(out), rec);
    if (rec) {
        g_active_tape->record([x, w, b, c, B, C, H, W, F, KH, KW, OH, OW]() mutable {
            if (!c.has_grad()) return;
            auto gc = c.grad();
            auto xv2 = x.values();
            auto wv2 = w.values();
            double* gx = nullptr;
            double* gw = nullptr;
            double* gb = nullptr;
            if (x.requires_grad()) gx = grad_accum(x);
            if (w.requires_grad()) gw = grad_accum(w);
            if (b.requires_grad()) gb = grad_accum(b);
            for (int bb = 0; bb < B; ++bb)
                for (int f = 0; f < F; ++f)
                    for (int i = 0; i < OH; ++i)
                        for (int j = 0; j < OW; ++j) {
                            double g = gc[((static_cast<size_t>(bb) * F + f) * OH + i) * OW + j];
                            if (g == 0.0) continue;
                            if (gb) gb[f] += g;
                            for (int c2 = 0; c2 < C; ++c2)
                                for (int p = 0; p < KH; ++p)
                                    for (int q = 0; q < KW; ++q) {
                                        size_t xi = ((static_cast<size_t>(bb) * C + c2) * H + (i + p)) * W + (j + q);
                                        size_t wi = ((static_cast<size_t>(f) * C + c2) * KH + p) * KW + q;
                                        if (gx) gx[xi] += g * wv2[wi];
                                        if (gw) gw[wi] += g * xv2[xi];
                                    }
                        }
        });
    }
    return c;
}

Tensor maxpool2(const Tensor& x) {
    if (x.ndim() != 4 || x.dim(2) % 2 != 0 || x.dim(3) % 2 != 0)
        fail(Status::InvalidArgument, "maxpool2: expected 4-d input with even spatial dims, got " + shape_str(x.shape()));
    int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    int OH = H / 2, OW = W / 2;
    auto xv = x.values();
    std::vector<double> out(static_cast<size_t>(B) * C * OH * OW);
    std::vector<int64_t> arg(out.size());
    for (int bb = 0; bb < B; ++bb)
        for (int c = 0; c < C; ++c)
            for (int i = 0; i < OH; ++i)
                for (int j = 0; j < OW; ++j) {
                    double best = -std::numeric_limits<double>::infinity();
                    int64_t bidx = 0;
                    for (int p = 0; p < 2; ++p)
                        for (int q = 0; q < 2; ++q) {
                            size_t xi = ((static_cast<size_t>(bb) * C + c) * H + (2 * i + p)) * W + (2 * j + q);
                            if (xv[xi] > best) {
                                best = xv[xi];
                                bidx = static_cast<int64_t>(xi);
                            }
                        }
                    size_t oi = ((static_cast<size_t>(bb) * C + c) * OH + i) * OW + j;
                    out[oi] = best;
                    arg[oi] = bidx;
                }
    bool rec = should_record({&x});
    Tensor c = make_output({B, C, OH, OW}, std::move(out), rec);
    if (rec) {
        g_active_tape->record([x, c, arg = std::move(arg)]() mutable {
            if (!c.has_grad()) return;
            auto gc = c.grad();
            double* gx = grad_accum(x);
            for (size_t i = 0; i < gc.size(); ++i) gx[arg[i]] += gc[i];
        });
    }
    return c;
}

// ---- checks --------------------------------------------------------------------

double grad_norm(std::span<const Tensor> params) {
    double acc = 0.0;
    for (const Tensor& p : params) {
        auto g = p.grad();  // throws on missing grads
        for (double v : g) acc += v * v;
    }
    return std::sqrt(acc);
}

double finite_difference_max_rel_error(
    const std::function<double(std::span<const double>)>& eval,
    std::span<const double> theta, std::span<const double> ad_grad, double h,
    std::span<const size_t> coords) {
    if (h <= 0.0) fail(Status::InvalidArgument, "finite_difference: step must be positive");
    if (theta.size() != ad_grad.size())
        fail(Status::InvalidArgument, "finite_difference: gradient size mismatch");
    if (theta.empty()) return 0.0;  // vacuous for zero-parameter models
    std::vector<double> work(theta.begin(), theta.end());
    std::vector<size_t> all;
    if (coords.empty()) {
        all.resize(theta.size());
        for (size_t i = 0; i < all.size(); ++i) all[i] = i;
        coords = all;
    }
    double worst = 0.0;
    for (size_t k : coords) {
        double orig = work[k];
        work[k] = orig + h;
        double up = eval(work);
        work[k] = orig - h;
        double down = eval(work);
        work[k] = orig;
        double fd = (up - down) / (2.0 * h);
        double adv = ad_grad[k];
        double scale = std::max(std::abs(fd), std::abs(adv));
        if (scale < 1e-10) continue;
        worst = std::max(worst, std::abs(fd - adv) / scale);
    }
    return worst;
}

}  // namespace gradal::ad
