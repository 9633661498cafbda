#include "tve/ops.hpp"

#include <cmath>
#include <cstring>

namespace tve {
namespace {

using detail::NodePtr;
using detail::TensorNode;

Tensor make_result(Shape dims, std::vector<float> data,
                   std::initializer_list<Tensor> parents,
                   std::function<void(TensorNode&)> backward_fn,
                   const char* op) {
    check_finite(data, op);
    auto node = std::make_shared<TensorNode>();
    node->dims = std::move(dims);
    node->data = std::move(data);
    bool rg = false;
    for (const Tensor& p : parents) rg = rg || p.requires_grad();
    node->requires_grad = rg;
    if (rg) {
        for (const Tensor& p : parents) node->parents.push_back(p.node_ptr());
        node->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(node));
}

// Rows/cols view: last dim is the column count, all leading dims fold into rows.
void as_rows(const Shape& dims, int64_t& rows, int64_t& cols) {
    if (dims.empty()) throw ValidationError("empty shape");
    cols = dims.back();
    rows = 1;
    for (size_t i = 0; i + 1 < dims.size(); ++i) rows *= dims[i];
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.dims() != b.dims())
        throw ValidationError(std::string(op) + ": shape mismatch " + shape_str(a.dims()) +
                              " vs " + shape_str(b.dims()));
}

} // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.dims().size() != 2 || b.dims().size() != 2 || a.dims()[1] != b.dims()[0])
        throw ValidationError("matmul: incompatible shapes " + shape_str(a.dims()) + " x " +
                              shape_str(b.dims()));
    const int64_t n = a.dims()[0], k = a.dims()[1], m = b.dims()[1];
    std::vector<float> out(static_cast<size_t>(n * m), 0.0f);
    const float* A = a.data().data();
    const float* B = b.data().data();
    std::vector<double> acc(static_cast<size_t>(m));
    for (int64_t i = 0; i < n; ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        const float* arow = A + i * k;
        for (int64_t kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            const float* brow = B + kk * m;
            for (int64_t j = 0; j < m; ++j) acc[size_t(j)] += av * double(brow[j]);
        }
        float* orow = out.data() + i * m;
        for (int64_t j = 0; j < m; ++j) orow[j] = float(acc[size_t(j)]);
    }

    TensorNode* an = a.node();
    TensorNode* bn = b.node();
    return make_result(
        {n, m}, std::move(out), {a, b},
        [an, bn, n, k, m](TensorNode& self) {
            const float* G = self.grad.data();
            if (an->requires_grad) {
                auto& ga = an->ensure_grad();
                const float* B = bn->data.data();
                for (int64_t i = 0; i < n; ++i) {
                    for (int64_t kk = 0; kk < k; ++kk) {
                        double s = 0.0;
                        const float* grow = G + i * m;
                        const float* brow = B + kk * m;
                        for (int64_t j = 0; j < m; ++j) s += double(grow[j]) * double(brow[j]);
                        ga[size_t(i * k + kk)] += float(s);
                    }
                }
            }
            if (bn->requires_grad) {
                auto& gb = bn->ensure_grad();
                const float* A = an->data.data();
                for (int64_t kk = 0; kk < k; ++kk) {
                    for (int64_t i = 0; i < n; ++i) {
                        const double av = A[i * k + kk];
                        const float* grow = G + i * m;
                        float* gbrow = gb.data() + kk * m;
                        for (int64_t j = 0; j < m; ++j) gbrow[j] += float(av * double(grow[j]));
                    }
                }
            }
        },
        "matmul");
}

Tensor add(const Tensor& a, const Tensor& b) {
    const bool bias_cast = a.dims() != b.dims();
    if (bias_cast) {
        if (b.dims().size() != 1 || a.dims().empty() || a.dims().back() != b.dims()[0])
            throw ValidationError("add: shape mismatch " + shape_str(a.dims()) + " vs " +
                                  shape_str(b.dims()));
    }
    int64_t rows, cols;
    as_rows(a.dims(), rows, cols);
    std::vector<float> out(a.data());
    if (bias_cast) {
        const float* bias = b.data().data();
        for (int64_t i = 0; i < rows; ++i) {
            float* orow = out.data() + i * cols;
            for (int64_t j = 0; j < cols; ++j) orow[j] += bias[j];
        }
    } else {
        const float* bd = b.data().data();
        for (size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
    }

    TensorNode* an = a.node();
    TensorNode* bn = b.node();
    return make_result(
        a.dims(), std::move(out), {a, b},
        [an, bn, bias_cast, rows, cols](TensorNode& self) {
            const float* G = self.grad.data();
            if (an->requires_grad) {
                auto& ga = an->ensure_grad();
                for (size_t i = 0; i < ga.size(); ++i) ga[i] += G[i];
            }
            if (bn->requires_grad) {
                auto& gb = bn->ensure_grad();
                if (bias_cast) {
                    for (int64_t j = 0; j < cols; ++j) {
                        double s = 0.0;
                        for (int64_t i = 0; i < rows; ++i) s += G[i * cols + j];
                        gb[size_t(j)] += float(s);
                    }
                } else {
                    for (size_t i = 0; i < gb.size(); ++i) gb[i] += G[i];
                }
            }
        },
        "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    std::vector<float> out(a.data());
    const float* bd = b.data().data();
    for (size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];

    TensorNode* an = a.node();
    TensorNode* bn = b.node();
    return make_result(
        a.dims(), std::move(out), {a, b},
        [an, bn](TensorNode& self) {
            const float* G = self.grad.data();
            if (an->requires_grad) {
                auto& ga = an->ensure_grad();
                for (size_t i = 0; i < ga.size(); ++i) ga[i] += G[i];
            }
            if (bn->requires_grad) {
                auto& gb = bn->ensure_grad();
                for (size_t i = 0; i < gb.size(); ++i) gb[i] -= G[i];
            }
        },
        "sub");
}

Tensor scale(const Tensor& a, float c) {
    std::vector<float> out(a.data());
    for (float& x : out) x *= c;
    TensorNode* an = a.node();
    return make_result(
        a.dims(), std::move(out), {a},
        [an, c](TensorNode& self) {
            auto& ga = an->ensure_grad();
            const float* G = self.grad.data();
            for (size_t i = 0; i < ga.size(); ++i) ga[i] += c * G[i];
        },
        "scale");
}

Tensor relu(const Tensor& a) {
    std::vector<float> out(a.data());
    for (float& x : out) x = x > 0.0f ? x : 0.0f;
    TensorNode* an = a.node();
    return make_result(
        a.dims(), std::move(out), {a},
        [an](TensorNode& self) {
            auto& ga = an->ensure_grad();
            const float* G = self.grad.data();
            const float* X = an->data.data();
            for (size_t i = 0; i < ga.size(); ++i) ga[i] += X[i] > 0.0f ? G[i] : 0.0f;
        },
        "relu");
}

namespace {
constexpr double kGeluC = 0.7978845608028654; // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
} // namespace

Tensor gelu(const Tensor& a) {
    std::vector<float> out(a.data().size());
    const float* X = a.data().data();
    for (size_t i = 0; i < out.size(); ++i) {
        const double x = X[i];
        const double u = kGeluC * (x + kGeluA * x * x * x);
        out[i] = float(0.5 * x * (1.0 + std::tanh(u)));
    }
    TensorNode* an = a.node();
    return make_result(
        a.dims(), std::move(out), {a},
        [an](TensorNode& self) {
            auto& ga = an->ensure_grad();
            const float* G = self.grad.data();
            const float* X = an->data.data();
            for (size_t i = 0; i < ga.size(); ++i) {
                const double x = X[i];
                const double u = kGeluC * (x + kGeluA * x * x * x);
                const double t = std::tanh(u);
                const double du = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
                const double d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
                ga[i] += float(d * double(G[i]));
            }
        },
        "gelu");
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps) {
    int64_t rows, cols;
    as_rows(x.dims(), rows, cols);
    if (gain.dims() != Shape{cols} || bias.dims() != Shape{cols})
        throw ValidationError("layer_norm: gain/bias " + shape_str(gain.dims()) + "/" +
                              shape_str(bias.dims()) + " do not match last dim of " +
                              shape_str(x.dims()));

    std::vector<float> out(x.data().size());
    std::vector<float> xhat(x.data().size()); // kept for backward
    std::vector<float> inv_sigma(static_cast<size_t>(rows));
    const float* X = x.data().data();
    const float* Gn = gain.data().data();
    const float* Bs = bias.data().data();
    for (int64_t i = 0; i < rows; ++i) {
        const float* xr = X + i * cols;
        double mu = 0.0;
        for (int64_t j = 0; j < cols; ++j) mu += xr[j];
        mu /= double(cols);
        double var = 0.0;
        for (int64_t j = 0; j < cols; ++j) {
            const double d = xr[j] - mu;
            var += d * d;
        }
        var /= double(cols);
        const double is = 1.0 / std::sqrt(var + double(eps));
        inv_sigma[size_t(i)] = float(is);
        for (int64_t j = 0; j < cols; ++j) {
            const float xh = float((xr[j] - mu) * is);
            xhat[size_t(i * cols + j)] = xh;
            out[size_t(i * cols + j)] = Gn[j] * xh + Bs[j];
        }
    }

    TensorNode* xn = x.node();
    TensorNode* gn = gain.node();
    TensorNode* bn = bias.node();
    return make_result(
        x.dims(), std::move(out), {x, gain, bias},
        [xn, gn, bn, rows, cols, xhat = std::move(xhat),
         inv_sigma = std::move(inv_sigma)](TensorNode& self) {
            const float* G = self.grad.data();
            if (gn->requires_grad) {
                auto& gg = gn->ensure_grad();
                for (int64_t j = 0; j < cols; ++j) {
                    double s = 0.0;
                    for (int64_t i = 0; i < rows; ++i)
                        s += double(G[i * cols + j]) * double(xhat[size_t(i * cols + j)]);
                    gg[size_t(j)] += float(s);
                }
            }
            if (bn->requires_grad) {
                auto& gb = bn->ensure_grad();
                for (int64_t j = 0; j < cols; ++j) {
                    double s = 0.0;
                    for (int64_t i = 0; i < rows; ++i) s += G[i * cols + j];
                    gb[size_t(j)] += float(s);
                }
            }
            if (xn->requires_grad) {
                auto& gx = xn->ensure_grad();
                const float* Gain = gn->data.data();
                for (int64_t i = 0; i < rows; ++i) {
                    double mean_dy = 0.0, mean_dy_xhat = 0.0;
                    for (int64_t j = 0; j < cols; ++j) {
                        const double dy = double(G[i * cols + j]) * double(Gain[j]);
                        mean_dy += dy;
                        mean_dy_xhat += dy * double(xhat[size_t(i * cols + j)]);
                    }
                    mean_dy /= double(cols);
                    mean_dy_xhat /= double(cols);
                    const double is = inv_sigma[size_t(i)];
                    for (int64_t j = 0; j < cols; ++j) {
                        const double dy = double(G[i * cols + j]) * double(Gain[j]);
                        const double xh = xhat[size_t(i * cols + j)];
                        gx[size_t(i * cols + j)] += float(is * (dy - mean_dy - xh * mean_dy_xhat));
                    }
                }
            }
        },
        "layer_norm");
}

Tensor softmax(const Tensor& x) {
    int64_t rows, cols;
    as_rows(x.dims(), rows, cols);
    std::vector<float> out(x.data().size());
    const float* X = x.data().data();
    for (int64_t i = 0; i < rows; ++i) {
        const float* xr = X + i * cols;
        float mx = xr[0];
        for (int64_t j = 1; j < cols; ++j) mx = std::max(mx, xr[j]);
        double z = 0.0;
        for (int64_t j = 0; j < cols; ++j) {
            const double e = std::exp(double(xr[j]) - double(mx));
            out[size_t(i * cols + j)] = float(e);
            z += e;
        }
        const double inv = 1.0 / z;
        for (int64_t j = 0; j < cols; ++j) out[size_t(i * cols + j)] = float(out[size_t(i * cols + j)] * inv);
    }

    TensorNode* xn = x.node();
    const std::vector<float> y = out; // softmax output needed in backward
    return make_result(
        x.dims(), std::move(out), {x},
        [xn, rows, cols, y = std::move(y)](TensorNode& self) {
            auto& gx = xn->ensure_grad();
            const float* G = self.grad.data();
            for (int64_t i = 0; i < rows; ++i) {
                double dot = 0.0;
                for (int64_t j = 0; j < cols; ++j)
                    dot += double(G[i * cols + j]) * double(y[size_t(i * cols + j)]);
                for (int64_t j = 0; j < cols; ++j) {
                    const double yj = y[size_t(i * cols + j)];
                    gx[size_t(i * cols + j)] += float(yj * (double(G[i * cols + j]) - dot));
                }
            }
        },
        "softmax");
}

Tensor log(const Tensor& x) {
    std::vector<float> out(x.data().size());
    const float* X = x.data().data();
    for (size_t i = 0; i < out.size(); ++i) {
        if (!(X[i] > 0.0f))
            throw ValidationError("log: non-positive input " + std::to_string(X[i]) +
                                  "; clamp before taking logs");
        out[i] = std::log(X[i]);
    }
    TensorNode* xn = x.node();
    return make_result(
        x.dims(), std::move(out), {x},
        [xn](TensorNode& self) {
            auto& gx = xn->ensure_grad();
            const float* G = self.grad.data();
            const float* X = xn->data.data();
            for (size_t i = 0; i < gx.size(); ++i) gx[i] += G[i] / X[i];
        },
        "log");
}

Tensor clamp_min(const Tensor& x, float c) {
    std::vector<float> out(x.data());
    for (float& v : out) v = v < c ? c : v;
    TensorNode* xn = x.node();
    return make_result(
        x.dims(), std::move(out), {x},
        [xn, c](TensorNode& self) {
            auto& gx = xn->ensure_grad();
            const float* G = self.grad.data();
            const float* X = xn->data.data();
            for (size_t i = 0; i < gx.size(); ++i) gx[i] += X[i] > c ? G[i] : 0.0f;
        },
        "clamp_min");
}

Tensor mse(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mse");
    const float* A = a.data().data();
    const float* B = b.data().data();
    double s = 0.0;
    for (size_t i = 0; i < a.data().size(); ++i) {
        const double d = double(A[i]) - double(B[i]);
        s += d * d;
    }
    const int64_t n = a.numel();
    const float val = float(s / double(n));

    TensorNode* an = a.node();
    TensorNode* bn = b.node();
    return make_result(
        {1}, {val}, {a, b},
        [an, bn, n](TensorNode& self) {
            const double g = self.grad[0];
            const double k = 2.0 * g / double(n);
            const float* A = an->data.data();
            const float* B = bn->data.data();
            if (an->requires_grad) {
                auto& ga = an->ensure_grad();
                for (size_t i = 0; i < ga.size(); ++i)
                    ga[i] += float(k * (double(A[i]) - double(B[i])));
            }
            if (bn->requires_grad) {
                auto& gb = bn->ensure_grad();
                for (size_t i = 0; i < gb.size(); ++i)
                    gb[i] -= float(k * (double(A[i]) - double(B[i])));
            }
        },
        "mse");
}

Tensor sum_all(const Tensor& a) {
    double s = 0.0;
    for (float v : a.data()) s += v;
    TensorNode* an = a.node();
    return make_result(
        {1}, {float(s)}, {a},
        [an](TensorNode& self) {
            auto& ga = an->ensure_grad();
            const float g = self.grad[0];
            for (float& v : ga) v += g;
        },
        "sum_all");
}

Tensor mean_all(const Tensor& a) {
    double s = 0.0;
    for (float v : a.data()) s += v;
    const int64_t n = a.numel();
    TensorNode* an = a.node();
    return make_result(
        {1}, {float(s / double(n))}, {a},
        [an, n](TensorNode& self) {
            auto& ga = an->ensure_grad();
            const float g = self.grad[0] / float(n);
            for (float& v : ga) v += g;
        },
        "mean_all");
}

Tensor mean_pool_groups(const Tensor& x, int64_t group) {
    if (x.dims().size() != 2)
        throw ValidationError("mean_pool_groups: expected rank-2, got " + shape_str(x.dims()));
    const int64_t rows = x.dims()[0], cols = x.dims()[1];
    if (group <= 0 || rows % group != 0)
        throw ValidationError("mean_pool_groups: rows " + std::to_string(rows) +
                              " not divisible by group " + std::to_string(group));
    const int64_t n = rows / group;
    std::vector<float> out(static_cast<size_t>(n * cols));
    const float* X = x.data().data();
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < cols; ++j) {
            double s = 0.0;
            for (int64_t g = 0; g < group; ++g) s += X[(i * group + g) * cols + j];
            out[size_t(i * cols + j)] = float(s / double(group));
        }
    }
    TensorNode* xn = x.node();
    return make_result(
        {n, cols}, std::move(out), {x},
        [xn, n, cols, group](TensorNode& self) {
            auto& gx = xn->ensure_grad();
            const float* G = self.grad.data();
            const float inv = 1.0f / float(group);
            for (int64_t i = 0; i < n; ++i)
                for (int64_t g = 0; g < group; ++g)
                    for (int64_t j = 0; j < cols; ++j)
                        gx[size_t((i * group + g) * cols + j)] += G[i * cols + j] * inv;
        },
        "mean_pool_groups");
}

Tensor repeat_interleave_rows(const Tensor& x, int64_t times) {
    if (x.dims().size() != 2)
        throw ValidationError("repeat_interleave_rows: expected rank-2, got " + shape_str(x.dims()));
    if (times <= 0) throw ValidationError("repeat_interleave_rows: times must be positive");
    const int64_t rows = x.dims()[0], cols = x.dims()[1];
    std::vector<float> out(static_cast<size_t>(rows * times * cols));
    const float* X = x.data().data();
    for (int64_t i = 0; i < rows; ++i)
        for (int64_t t = 0; t < times; ++t)
            std::memcpy(out.data() + (i * times + t) * cols, X + i * cols, size_t(cols) * sizeof(float));
    TensorNode* xn = x.node();
    return make_result(
        {rows * times, cols}, std::move(out), {x},
        [xn, rows, cols, times](TensorNode& self) {
            auto& gx = xn->ensure_grad();
            const float* G = self.grad.data();
            for (int64_t i = 0; i < rows; ++i)
                for (int64_t j = 0; j < cols; ++j) {
                    double s = 0.0;
                    for (int64_t t = 0; t < times; ++t) s += G[(i * times + t) * cols + j];
                    gx[size_t(i * cols + j)] += float(s);
                }
        },
        "repeat_interleave_rows");
}

Tensor select_rows(const Tensor& x, const std::vector<int64_t>& idx) {
    if (x.dims().size() != 2)
        throw ValidationError("select_rows: expected rank-2, got " + shape_str(x.dims()));
    const int64_t rows = x.dims()[0], cols = x.dims()[1];
    for (int64_t r : idx)
        if (r < 0 || r >= rows)
            throw ValidationError("select_rows: index " + std::to_string(r) + " out of " +
                                  std::to_string(rows) + " rows");
    const int64_t k = int64_t(idx.size());
    if (k == 0) throw ValidationError("select_rows: empty index list");
    std::vector<float> out(static_cast<size_t>(k * cols));
    const float* X = x.data().data();
    for (int64_t r = 0; r < k; ++r)
        std::memcpy(out.data() + r * cols, X + idx[size_t(r)] * cols, size_t(cols) * sizeof(float));
    TensorNode* xn = x.node();
    return make_result(
        {k, cols}, std::move(out), {x},
        [xn, cols, idx](TensorNode& self) {
            auto& gx = xn->ensure_grad();
            const float* G = self.grad.data();
            for (size_t r = 0; r < idx.size(); ++r)
                for (int64_t j = 0; j < cols; ++j)
                    gx[size_t(idx[r] * cols + j)] += G[int64_t(r) * cols + j];
        },
        "select_rows");
}

Tensor gather_per_row(const Tensor& x, const std::vector<int64_t>& idx) {
    if (x.dims().size() != 2)
        throw ValidationError("gather_per_row: expected rank-2, got " + shape_str(x.dims()));
    const int64_t rows = x.dims()[0], cols = x.dims()[1];
    if (int64_t(idx.size()) != rows)
        throw ValidationError("gather_per_row: " + std::to_string(idx.size()) +
                              " indices for " + std::to_string(rows) + " rows");
    for (int64_t c : idx)
        if (c < 0 || c >= cols)
            throw ValidationError("gather_per_row: column " + std::to_string(c) + " out of " +
                                  std::to_string(cols));
    std::vector<float> out(static_cast<size_t>(rows));
    const float* X = x.data().data();
    for (int64_t i = 0; i < rows; ++i) out[size_t(i)] = X[i * cols + idx[size_t(i)]];
    TensorNode* xn = x.node();
    return make_result(
        {rows}, std::move(out), {x},
        [xn, cols, idx](TensorNode& self) {
            auto& gx = xn->ensure_grad();
            const float* G = self.grad.data();
            for (size_t i = 0; i < idx.size(); ++i)
                gx[size_t(int64_t(i) * cols + idx[i])] += G[i];
        },
        "gather_per_row");
}

Tensor slice_cols(const Tensor& x, int64_t begin, int64_t end) {
    if (x.dims().size() != 2)
        throw ValidationError("slice_cols: expected rank-2, got " + shape_str(x.dims()));
    const int64_t rows = x.dims()[0], cols = x.dims()[1];
    if (begin < 0 || end > cols || begin >= end)
        throw ValidationError("slice_cols: range [" + std::to_string(begin) + ", " +
                              std::to_string(end) + ") out of " + std::to_string(cols) + " columns");
    const int64_t w = end - begin;
    std::vector<float> out(static_cast<size_t>(rows * w));
    const float* X = x.data().data();
    for (int64_t i = 0; i < rows; ++i)
        std::memcpy(out.data() + i * w, X + i * cols + begin, size_t(w) * sizeof(float));
    TensorNode* xn = x.node();
    return make_result(
        {rows, w}, std::move(out), {x},
        [xn, rows, cols, begin, w](TensorNode& self) {
            auto& gx = xn->ensure_grad();
            const float* G = self.grad.data();
            for (int64_t i = 0; i < rows; ++i)
                for (int64_t j = 0; j < w; ++j) gx[size_t(i * cols + begin + j)] += G[i * w + j];
        },
        "slice_cols");
}

Tensor per_position_embed(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    if (x.dims().size() != 2 || weight.dims().size() != 3 || bias.dims().size() != 2)
        throw ValidationError("per_position_embed: expected x[BP,f] w[P,f,d] b[P,d], got " +
                              shape_str(x.dims()) + " " + shape_str(weight.dims()) + " " +
                              shape_str(bias.dims()));
    const int64_t P = weight.dims()[0], f = weight.dims()[1], d = weight.dims()[2];
    const int64_t rows = x.dims()[0];
    if (x.dims()[1] != f || bias.dims()[0] != P || bias.dims()[1] != d || rows % P != 0)
        throw ValidationError("per_position_embed: incompatible shapes " + shape_str(x.dims()) +
                              " " + shape_str(weight.dims()) + " " + shape_str(bias.dims()));
    const int64_t batch = rows / P;
    std::vector<float> out(static_cast<size_t>(rows * d));
    const float* X = x.data().data();
    const float* W = weight.data().data();
    const float* B = bias.data().data();
    std::vector<double> acc(static_cast<size_t>(d));
    for (int64_t b = 0; b < batch; ++b) {
        for (int64_t p = 0; p < P; ++p) {
            const float* xr = X + (b * P + p) * f;
            const float* wp = W + p * f * d;
            const float* bp = B + p * d;
            for (int64_t j = 0; j < d; ++j) acc[size_t(j)] = bp[j];
            for (int64_t i = 0; i < f; ++i) {
                const double xv = xr[i];
                const float* wrow = wp + i * d;
                for (int64_t j = 0; j < d; ++j) acc[size_t(j)] += xv * double(wrow[j]);
            }
            float* orow = out.data() + (b * P + p) * d;
            for (int64_t j = 0; j < d; ++j) orow[j] = float(acc[size_t(j)]);
        }
    }
    TensorNode* xn = x.node();
    TensorNode* wn = weight.node();
    TensorNode* bn = bias.node();
    return make_result(
        {rows, d}, std::move(out), {x, weight, bias},
        [xn, wn, bn, batch, P, f, d](TensorNode& self) {
            const float* G = self.grad.data();
            if (wn->requires_grad) {
                auto& gw = wn->ensure_grad();
                const float* X = xn->data.data();
                for (int64_t p = 0; p < P; ++p) {
                    float* gwp = gw.data() + p * f * d;
                    for (int64_t b = 0; b < batch; ++b) {
                        const float* xr = X + (b * P + p) * f;
                        const float* gr = G + (b * P + p) * d;
                        for (int64_t i = 0; i < f; ++i) {
                            const float xv = xr[i];
                            float* grow = gwp + i * d;
                            for (int64_t j = 0; j < d; ++j) grow[j] += xv * gr[j];
                        }
                    }
                }
            }
            if (bn->requires_grad) {
                auto& gb = bn->ensure_grad();
                for (int64_t p = 0; p < P; ++p) {
                    float* gbp = gb.data() + p * d;
                    for (int64_t b = 0; b < batch; ++b) {
                        const float* gr = G + (b * P + p) * d;
                        for (int64_t j = 0; j < d; ++j) gbp[j] += gr[j];
                    }
                }
            }
            if (xn->requires_grad) {
                auto& gx = xn->ensure_grad();
                const float* W = wn->data.data();
                for (int64_t b = 0; b < batch; ++b) {
                    for (int64_t p = 0; p < P; ++p) {
                        const float* gr = G + (b * P + p) * d;
                        const float* wp = W + p * f * d;
                        float* gxr = gx.data() + (b * P + p) * f;
                        for (int64_t i = 0; i < f; ++i) {
                            double s = 0.0;
                            const float* wrow = wp + i * d;
                            for (int64_t j = 0; j < d; ++j) s += double(wrow[j]) * double(gr[j]);
                            gxr[i] += float(s);
                        }
                    }
                }
            }
        },
        "per_position_embed");
}

} // namespace tve
