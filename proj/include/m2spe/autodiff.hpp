// Reverse-mode automatic differentiation over dense matrices.
//
// A Tape owns the nodes of one computation graph. Nodes are created in
// topological order (operands before results), so the backward pass is a
// single reverse scan over the tape. Node values are immutable once
// created; gradient buffers are re-zeroed at the start of every backward
// call so repeated backward passes never accumulate silently.
#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "matrix.hpp"

namespace m2spe::ad {

struct Tape;

struct Node {
    Matrix value;
    Matrix grad;  // sized lazily by Tape::backward
    std::vector<Node*> parents;
    std::function<void(Node&)> backprop;  // adds into parents' grads
    Tape* tape = nullptr;
};

struct Tape {
    std::deque<Node> nodes;  // deque: stable addresses under push_back

    Node* make(Matrix value, std::vector<Node*> parents, std::function<void(Node&)> backprop) {
        nodes.emplace_back();
        Node& n = nodes.back();
        n.value = std::move(value);
        n.parents = std::move(parents);
        n.backprop = std::move(backprop);
        n.tape = this;
        return &n;
    }

    Node* leaf(Matrix value) { return make(std::move(value), {}, nullptr); }

    // Reverse-mode sweep from a scalar root. Every node's grad is reset to
    // zeros first; leaves that do not feed the root therefore report exact
    // zero gradients.
    void backward(Node* root) {
        if (root == nullptr || root->tape != this) throw std::invalid_argument("backward: root not on this tape");
        if (root->value.rows != 1 || root->value.cols != 1)
            throw std::invalid_argument("backward: root must be a scalar");
        for (Node& n : nodes) n.grad = Matrix::zeros(n.value.rows, n.value.cols);
        root->grad(0, 0) = 1.0;
        for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
            if (it->backprop) it->backprop(*it);
        }
    }

    size_t size() const { return nodes.size(); }
};

inline Tape& tape_of(Node* a) { return *a->tape; }

inline void check_same_tape(Node* a, Node* b) {
    if (a->tape != b->tape) throw std::invalid_argument("operands live on different tapes");
}

// ---- elementwise / linear ops ------------------------------------------

inline Node* add(Node* a, Node* b) {
    check_same_tape(a, b);
    check_same_shape(a->value, b->value, "add");
    Matrix v = a->value;
    add_in_place(v, b->value);
    return tape_of(a).make(std::move(v), {a, b}, [a, b](Node& self) {
        add_in_place(a->grad, self.grad);
        add_in_place(b->grad, self.grad);
    });
}

inline Node* sub(Node* a, Node* b) {
    check_same_tape(a, b);
    check_same_shape(a->value, b->value, "sub");
    Matrix v = a->value;
    add_scaled(v, -1.0, b->value);
    return tape_of(a).make(std::move(v), {a, b}, [a, b](Node& self) {
        add_in_place(a->grad, self.grad);
        add_scaled(b->grad, -1.0, self.grad);
    });
}

inline Node* scale(Node* a, double alpha) {
    Matrix v = a->value;
    scale_in_place(v, alpha);
    return tape_of(a).make(std::move(v), {a}, [a, alpha](Node& self) { add_scaled(a->grad, alpha, self.grad); });
}

inline Node* mul(Node* a, Node* b) {
    check_same_tape(a, b);
    return tape_of(a).make(hadamard(a->value, b->value), {a, b}, [a, b](Node& self) {
        for (size_t i = 0; i < self.grad.size(); ++i) {
            a->grad.data[i] += self.grad.data[i] * b->value.data[i];
            b->grad.data[i] += self.grad.data[i] * a->value.data[i];
        }
    });
}

inline Node* matmul(Node* a, Node* b) {
    check_same_tape(a, b);
    if (a->value.cols != b->value.rows) throw std::invalid_argument("matmul: inner dimensions disagree");
    return tape_of(a).make(mm(a->value, b->value), {a, b}, [a, b](Node& self) {
        add_mm_nt(a->grad, self.grad, b->value);  // dA += G B^T
        add_mm_tn(b->grad, a->value, self.grad);  // dB += A^T G
    });
}

// C = A * B^T
inline Node* matmul_nt(Node* a, Node* b) {
    check_same_tape(a, b);
    if (a->value.cols != b->value.cols) throw std::invalid_argument("matmul_nt: inner dimensions disagree");
    return tape_of(a).make(mm_nt(a->value, b->value), {a, b}, [a, b](Node& self) {
        add_mm(a->grad, self.grad, b->value);     // dA += G B
        add_mm_tn(b->grad, self.grad, a->value);  // dB += G^T A
    });
}

// M + b broadcast over rows; b is 1 x cols.
inline Node* add_row_broadcast(Node* m, Node* b) {
    check_same_tape(m, b);
    if (b->value.rows != 1 || b->value.cols != m->value.cols)
        throw std::invalid_argument("add_row_broadcast: bias must be 1 x cols");
    Matrix v = m->value;
    for (int i = 0; i < v.rows; ++i) {
        double* row = v.row_ptr(i);
        for (int j = 0; j < v.cols; ++j) row[j] += b->value.data[j];
    }
    return tape_of(m).make(std::move(v), {m, b}, [m, b](Node& self) {
        add_in_place(m->grad, self.grad);
        for (int i = 0; i < self.grad.rows; ++i) {
            const double* row = self.grad.row_ptr(i);
            for (int j = 0; j < self.grad.cols; ++j) b->grad.data[j] += row[j];
        }
    });
}

// ---- structural ops ------------------------------------------------------

inline Node* gather_rows(Node* table, std::vector<int> ids) {
    const Matrix& t = table->value;
    for (int id : ids)
        if (id < 0 || id >= t.rows) throw std::invalid_argument("gather_rows: index out of range");
    Matrix v(static_cast<int>(ids.size()), t.cols);
    for (size_t i = 0; i < ids.size(); ++i)
        for (int j = 0; j < t.cols; ++j) v(static_cast<int>(i), j) = t(ids[i], j);
    return tape_of(table).make(std::move(v), {table}, [table, ids = std::move(ids)](Node& self) {
        for (size_t i = 0; i < ids.size(); ++i) {
            double* dst = table->grad.row_ptr(ids[i]);
            const double* src = self.grad.row_ptr(static_cast<int>(i));
            for (int j = 0; j < self.grad.cols; ++j) dst[j] += src[j];
        }
    });
}

inline Node* slice_rows(Node* m, int row0, int nrows) {
    if (row0 < 0 || nrows < 0 || row0 + nrows > m->value.rows)
        throw std::invalid_argument("slice_rows: range out of bounds");
    Matrix v(nrows, m->value.cols);
    for (int i = 0; i < nrows; ++i)
        for (int j = 0; j < v.cols; ++j) v(i, j) = m->value(row0 + i, j);
    return tape_of(m).make(std::move(v), {m}, [m, row0](Node& self) {
        for (int i = 0; i < self.grad.rows; ++i)
            for (int j = 0; j < self.grad.cols; ++j) m->grad(row0 + i, j) += self.grad(i, j);
    });
}

inline Node* slice_cols(Node* m, int col0, int ncols) {
    if (col0 < 0 || ncols < 0 || col0 + ncols > m->value.cols)
        throw std::invalid_argument("slice_cols: range out of bounds");
    Matrix v(m->value.rows, ncols);
    for (int i = 0; i < v.rows; ++i)
        for (int j = 0; j < ncols; ++j) v(i, j) = m->value(i, col0 + j);
    return tape_of(m).make(std::move(v), {m}, [m, col0](Node& self) {
        for (int i = 0; i < self.grad.rows; ++i)
            for (int j = 0; j < self.grad.cols; ++j) m->grad(i, col0 + j) += self.grad(i, j);
    });
}

inline Node* concat_rows(const std::vector<Node*>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
    int rows = 0;
    const int cols = parts[0]->value.cols;
    for (Node* p : parts) {
        check_same_tape(parts[0], p);
        if (p->value.cols != cols) throw std::invalid_argument("concat_rows: column mismatch");
        rows += p->value.rows;
    }
    Matrix v(rows, cols);
    int r = 0;
    for (Node* p : parts) {
        for (int i = 0; i < p->value.rows; ++i)
            for (int j = 0; j < cols; ++j) v(r + i, j) = p->value(i, j);
        r += p->value.rows;
    }
    return tape_of(parts[0])
        .make(std::move(v), parts, [parts](Node& self) {
            int r = 0;
            for (Node* p : parts) {
                for (int i = 0; i < p->value.rows; ++i)
                    for (int j = 0; j < self.grad.cols; ++j) p->grad(i, j) += self.grad(r + i, j);
                r += p->value.rows;
            }
        });
}

inline Node* concat_cols(const std::vector<Node*>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
    const int rows = parts[0]->value.rows;
    int cols = 0;
    for (Node* p : parts) {
        check_same_tape(parts[0], p);
        if (p->value.rows != rows) throw std::invalid_argument("concat_cols: row mismatch");
        cols += p->value.cols;
    }
    Matrix v(rows, cols);
    int c = 0;
    for (Node* p : parts) {
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < p->value.cols; ++j) v(i, c + j) = p->value(i, j);
        c += p->value.cols;
    }
    return tape_of(parts[0])
        .make(std::move(v), parts, [parts](Node& self) {
            int c = 0;
            for (Node* p : parts) {
                for (int i = 0; i < self.grad.rows; ++i)
                    for (int j = 0; j < p->value.cols; ++j) p->grad(i, j) += self.grad(i, c + j);
                c += p->value.cols;
            }
        });
}

// ---- nonlinearities ------------------------------------------------------

// Row-stable softmax: per-row max subtraction, rows sum to 1.
inline Node* softmax_rows(Node* m) {
    Matrix v(m->value.rows, m->value.cols);
    for (int i = 0; i < v.rows; ++i) {
        const double* x = m->value.row_ptr(i);
        double mx = x[0];
        for (int j = 1; j < v.cols; ++j) mx = std::max(mx, x[j]);
        double sum = 0.0;
        double* y = v.row_ptr(i);
        for (int j = 0; j < v.cols; ++j) {
            y[j] = std::exp(x[j] - mx);
            sum += y[j];
        }
        const double inv = 1.0 / sum;
        for (int j = 0; j < v.cols; ++j) y[j] *= inv;
    }
    return tape_of(m).make(std::move(v), {m}, [m](Node& self) {
        // dX = P o (G - rowdot(G, P))
        for (int i = 0; i < self.grad.rows; ++i) {
            const double* p = self.value.row_ptr(i);
            const double* g = self.grad.row_ptr(i);
            double gp = 0.0;
            for (int j = 0; j < self.grad.cols; ++j) gp += g[j] * p[j];
            double* dx = m->grad.row_ptr(i);
            for (int j = 0; j < self.grad.cols; ++j) dx[j] += p[j] * (g[j] - gp);
        }
    });
}

// Per-row layer norm with population variance: out = gain o (x-mu)/sqrt(var+eps) + bias.
inline Node* layer_norm_rows(Node* m, Node* gain, Node* bias, double eps) {
    check_same_tape(m, gain);
    check_same_tape(m, bias);
    const int cols = m->value.cols;
    if (gain->value.rows != 1 || gain->value.cols != cols || bias->value.rows != 1 || bias->value.cols != cols)
        throw std::invalid_argument("layer_norm_rows: gain/bias must be 1 x cols");
    if (!(eps > 0.0)) throw std::invalid_argument("layer_norm_rows: eps must be positive");

    Matrix normalized(m->value.rows, cols);
    std::vector<double> inv_std(static_cast<size_t>(m->value.rows));
    Matrix v(m->value.rows, cols);
    for (int i = 0; i < v.rows; ++i) {
        const double* x = m->value.row_ptr(i);
        double mean = 0.0;
        for (int j = 0; j < cols; ++j) mean += x[j];
        mean /= cols;
        double var = 0.0;
        for (int j = 0; j < cols; ++j) {
            const double d = x[j] - mean;
            var += d * d;
        }
        var /= cols;
        const double inv = 1.0 / std::sqrt(var + eps);
        inv_std[static_cast<size_t>(i)] = inv;
        double* y = normalized.row_ptr(i);
        double* out = v.row_ptr(i);
        for (int j = 0; j < cols; ++j) {
            y[j] = (x[j] - mean) * inv;
            out[j] = gain->value.data[j] * y[j] + bias->value.data[j];
        }
    }
    return tape_of(m).make(
        std::move(v), {m, gain, bias},
        [m, gain, bias, normalized = std::move(normalized), inv_std = std::move(inv_std)](Node& self) {
            const int cols = self.grad.cols;
            for (int i = 0; i < self.grad.rows; ++i) {
                const double* g = self.grad.row_ptr(i);
                const double* y = normalized.row_ptr(i);
                double m1 = 0.0, m2 = 0.0;
                for (int j = 0; j < cols; ++j) {
                    const double gg = gain->value.data[j] * g[j];
                    m1 += gg;
                    m2 += gg * y[j];
                }
                m1 /= cols;
                m2 /= cols;
                const double inv = inv_std[static_cast<size_t>(i)];
                double* dx = m->grad.row_ptr(i);
                for (int j = 0; j < cols; ++j) {
                    const double gg = gain->value.data[j] * g[j];
                    dx[j] += inv * (gg - m1 - y[j] * m2);
                    gain->grad.data[j] += g[j] * y[j];
                    bias->grad.data[j] += g[j];
                }
            }
        });
}

inline double gelu_scalar(double x) {
    return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2));
}

inline double gelu_derivative_scalar(double x) {
    const double phi_cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
    const double phi_pdf = std::exp(-0.5 * x * x) * 0.3989422804014326779;  // 1/sqrt(2 pi)
    return phi_cdf + x * phi_pdf;
}

// Exact-erf GELU, elementwise: x * Phi(x). Phi is saved for the backward
// pass, which then only needs the Gaussian density.
inline Node* gelu(Node* m) {
    std::vector<double> cdf(m->value.size());
    Matrix v(m->value.rows, m->value.cols);
    for (size_t i = 0; i < v.size(); ++i) {
        cdf[i] = 0.5 * (1.0 + std::erf(m->value.data[i] * M_SQRT1_2));
        v.data[i] = m->value.data[i] * cdf[i];
    }
    return tape_of(m).make(std::move(v), {m}, [m, cdf = std::move(cdf)](Node& self) {
        for (size_t i = 0; i < self.grad.size(); ++i) {
            const double x = m->value.data[i];
            const double pdf = std::exp(-0.5 * x * x) * 0.3989422804014326779;
            m->grad.data[i] += self.grad.data[i] * (cdf[i] + x * pdf);
        }
    });
}

// ---- reductions ----------------------------------------------------------

inline Node* sum_all(Node* m) {
    double acc = 0.0;
    for (double x : m->value.data) acc += x;
    Matrix v(1, 1);
    v(0, 0) = acc;
    return tape_of(m).make(std::move(v), {m}, [m](Node& self) {
        const double g = self.grad(0, 0);
        for (double& d : m->grad.data) d += g;
    });
}

// Column-wise sum over rows -> 1 x cols.
inline Node* sum_rows(Node* m) {
    Matrix v(1, m->value.cols);
    for (int i = 0; i < m->value.rows; ++i) {
        const double* row = m->value.row_ptr(i);
        for (int j = 0; j < m->value.cols; ++j) v.data[j] += row[j];
    }
    return tape_of(m).make(std::move(v), {m}, [m](Node& self) {
        for (int i = 0; i < m->grad.rows; ++i) {
            double* row = m->grad.row_ptr(i);
            for (int j = 0; j < m->grad.cols; ++j) row[j] += self.grad.data[j];
        }
    });
}

// Flattened inner product of two same-shape matrices -> scalar.
inline Node* dot(Node* a, Node* b) {
    check_same_tape(a, b);
    check_same_shape(a->value, b->value, "dot");
    Matrix v(1, 1);
    v(0, 0) = dot_flat(a->value, b->value);
    return tape_of(a).make(std::move(v), {a, b}, [a, b](Node& self) {
        const double g = self.grad(0, 0);
        add_scaled(a->grad, g, b->value);
        add_scaled(b->grad, g, a->value);
    });
}

// Maximum over a list of scalar nodes. The subgradient flows only to the
// first maximum in list order; callers choose the tie convention by
// ordering the list. argmax_out, when given, receives that index.
inline Node* max_of(const std::vector<Node*>& xs, int* argmax_out = nullptr) {
    if (xs.empty()) throw std::invalid_argument("max_of: empty");
    int am = 0;
    for (size_t i = 0; i < xs.size(); ++i) {
        if (xs[i]->value.rows != 1 || xs[i]->value.cols != 1) throw std::invalid_argument("max_of: non-scalar");
        if (xs[i]->value(0, 0) > xs[am]->value(0, 0)) am = static_cast<int>(i);
    }
    if (argmax_out) *argmax_out = am;
    Matrix v = xs[static_cast<size_t>(am)]->value;
    Node* winner = xs[static_cast<size_t>(am)];
    return tape_of(xs[0]).make(std::move(v), xs, [winner](Node& self) { winner->grad(0, 0) += self.grad(0, 0); });
}

// log(sum_i exp(x_i)) over scalar nodes, max-shifted for stability.
inline Node* logsumexp(const std::vector<Node*>& xs) {
    if (xs.empty()) throw std::invalid_argument("logsumexp: empty");
    double mx = xs[0]->value(0, 0);
    for (Node* x : xs) {
        if (x->value.rows != 1 || x->value.cols != 1) throw std::invalid_argument("logsumexp: non-scalar");
        mx = std::max(mx, x->value(0, 0));
    }
    std::vector<double> w(xs.size());
    double sum = 0.0;
    for (size_t i = 0; i < xs.size(); ++i) {
        w[i] = std::exp(xs[i]->value(0, 0) - mx);
        sum += w[i];
    }
    for (double& x : w) x /= sum;
    Matrix v(1, 1);
    v(0, 0) = mx + std::log(sum);
    return tape_of(xs[0]).make(std::move(v), xs, [xs, w = std::move(w)](Node& self) {
        const double g = self.grad(0, 0);
        for (size_t i = 0; i < xs.size(); ++i) xs[i]->grad(0, 0) += g * w[i];
    });
}

}  // namespace m2spe::ad
