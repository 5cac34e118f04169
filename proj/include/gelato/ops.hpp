#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "gelato/tape.hpp"

namespace gelato {

inline constexpr double kNormFloor = 1e-12;
inline constexpr double kLayerNormEps = 1e-6;

namespace detail {

inline void require_matrix(const Tensor& t, const char* what) {
    if (t.rank() < 2) throw DimensionError(std::string(what) + " needs rank >= 2, got " + shape_str(t.shape()));
}

inline Shape with_last(const Shape& s, std::size_t last) {
    Shape out = s;
    out.back() = last;
    return out;
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(what) + ": shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()) + " differ");
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and structural ops

inline Var add(Tape& t, Var a, Var b) {
    const Tensor& x = t.value(a);
    const Tensor& y = t.value(b);
    detail::require_same_shape(x, y, "add");
    Tensor out = x;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += y[i];
    return t.record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
        for (Var v : {a, b}) {
            if (!t.requires_grad(v)) continue;
            auto& gv = t.grad(v);
            for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
        }
    });
}

inline Var mul(Tape& t, Var a, Var b) {
    const Tensor& x = t.value(a);
    const Tensor& y = t.value(b);
    detail::require_same_shape(x, y, "mul");
    Tensor out = x;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= y[i];
    return t.record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
        const Tensor& x = t.value(a);
        const Tensor& y = t.value(b);
        if (t.requires_grad(a)) {
            auto& ga = t.grad(a);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
        }
        if (t.requires_grad(b)) {
            auto& gb = t.grad(b);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
        }
    });
}

inline Var scale(Tape& t, Var a, double c) {
    Tensor out = t.value(a);
    for (auto& v : out.data()) v *= c;
    return t.record(std::move(out), {a}, [a, c](Tape& t, const Tensor& g) {
        auto& ga = t.grad(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
    });
}

inline Var sum(Tape& t, Var a) {
    double s = 0.0;
    for (double v : t.value(a).data()) s += v;
    return t.record(Tensor::scalar(s), {a}, [a](Tape& t, const Tensor& g) {
        auto& ga = t.grad(a);
        for (auto& v : ga.data()) v += g[0];
    });
}

inline Var sum_squares(Tape& t, Var a) { return sum(t, mul(t, a, a)); }

inline Var reshape(Tape& t, Var a, Shape shape) {
    Tensor out = t.value(a).reshaped(std::move(shape));
    return t.record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
        auto& ga = t.grad(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
}

inline Var transpose(Tape& t, Var a) {
    const Tensor& x = t.value(a);
    if (x.rank() != 2) throw DimensionError("transpose needs a matrix, got " + shape_str(x.shape()));
    const std::size_t n = x.rows(), m = x.cols();
    Tensor out({m, n});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) out.at(j, i) = x.at(i, j);
    return t.record(std::move(out), {a}, [a, n, m](Tape& t, const Tensor& g) {
        auto& ga = t.grad(a);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) ga.at(i, j) += g.at(j, i);
    });
}

// Columns [begin, end) of every row.
inline Var slice_cols(Tape& t, Var a, std::size_t begin, std::size_t end) {
    const Tensor& x = t.value(a);
    if (begin >= end || end > x.cols()) {
        throw DimensionError("column slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                             ") out of range for shape " + shape_str(x.shape()));
    }
    const std::size_t n = x.rows(), w = end - begin;
    Tensor out(detail::with_last(x.shape(), w));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < w; ++j) out[i * w + j] = x.at(i, begin + j);
    return t.record(std::move(out), {a}, [a, begin, n, w](Tape& t, const Tensor& g) {
        auto& ga = t.grad(a);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < w; ++j) ga.at(i, begin + j) += g[i * w + j];
    });
}

// Rows [begin, begin + count) of a matrix.
inline Var slice_rows(Tape& t, Var a, std::size_t begin, std::size_t count) {
    const Tensor& x = t.value(a);
    if (count == 0 || begin + count > x.rows()) {
        throw DimensionError("row slice out of range for shape " + shape_str(x.shape()));
    }
    const std::size_t d = x.cols();
    std::vector<double> vals(x.values().begin() + begin * d, x.values().begin() + (begin + count) * d);
    return t.record(Tensor({count, d}, std::move(vals)), {a}, [a, begin, d](Tape& t, const Tensor& g) {
        auto& ga = t.grad(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[begin * d + i] += g[i];
    });
}

// Row gather: out[i] = x[indices[i]]. Repeated indices accumulate gradients.
inline Var gather_rows(Tape& t, Var a, std::vector<std::size_t> indices) {
    const Tensor& x = t.value(a);
    if (indices.empty()) throw EmptyInputError("gather_rows with no indices");
    const std::size_t d = x.cols();
    Tensor out({indices.size(), d});
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= x.rows()) {
            throw DimensionError("row index " + std::to_string(indices[i]) + " out of range for shape " +
                                 shape_str(x.shape()));
        }
        for (std::size_t j = 0; j < d; ++j) out.at(i, j) = x.at(indices[i], j);
    }
    return t.record(std::move(out), {a}, [a, indices = std::move(indices), d](Tape& t, const Tensor& g) {
        auto& ga = t.grad(a);
        for (std::size_t i = 0; i < indices.size(); ++i)
            for (std::size_t j = 0; j < d; ++j) ga.at(indices[i], j) += g.at(i, j);
    });
}

// Stacks inputs along rows; every input is viewed as rows x d.
inline Var concat_rows(Tape& t, const std::vector<Var>& parts) {
    if (parts.empty()) throw EmptyInputError("concat_rows with no inputs");
    const std::size_t d = t.value(parts[0]).cols();
    std::size_t n = 0;
    for (Var p : parts) {
        if (t.value(p).cols() != d) {
            throw DimensionError("concat_rows: width " + std::to_string(t.value(p).cols()) + " vs " +
                                 std::to_string(d));
        }
        n += t.value(p).rows();
    }
    std::vector<double> vals;
    vals.reserve(n * d);
    for (Var p : parts) vals.insert(vals.end(), t.value(p).values().begin(), t.value(p).values().end());
    return t.record(Tensor({n, d}, std::move(vals)), parts, [parts](Tape& t, const Tensor& g) {
        std::size_t off = 0;
        for (Var p : parts) {
            const std::size_t sz = t.value(p).size();
            if (t.requires_grad(p)) {
                auto& gp = t.grad(p);
                for (std::size_t i = 0; i < sz; ++i) gp[i] += g[off + i];
            }
            off += sz;
        }
    });
}

inline Var concat_cols(Tape& t, const std::vector<Var>& parts) {
    if (parts.empty()) throw EmptyInputError("concat_cols with no inputs");
    const std::size_t n = t.value(parts[0]).rows();
    std::size_t d = 0;
    std::vector<std::size_t> widths;
    for (Var p : parts) {
        if (t.value(p).rows() != n) throw DimensionError("concat_cols: row counts differ");
        widths.push_back(t.value(p).cols());
        d += widths.back();
    }
    Tensor out({n, d});
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const Tensor& x = t.value(parts[k]);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < widths[k]; ++j) out.at(i, off + j) = x.at(i, j);
        off += widths[k];
    }
    return t.record(std::move(out), parts, [parts, widths, n](Tape& t, const Tensor& g) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < parts.size(); ++k) {
            if (t.requires_grad(parts[k])) {
                auto& gp = t.grad(parts[k]);
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < widths[k]; ++j) gp.at(i, j) += g.at(i, off + j);
            }
            off += widths[k];
        }
    });
}

// ---------------------------------------------------------------------------
// Linear algebra

// a[n,k] * b[m,k]^T -> [n,m]
inline Var matmul_nt(Tape& t, Var a, Var b) {
    const Tensor& x = t.value(a);
    const Tensor& y = t.value(b);
    if (x.cols() != y.cols()) {
        throw DimensionError("matmul_nt: inner dims of " + shape_str(x.shape()) + " and " + shape_str(y.shape()) +
                             " disagree");
    }
    const std::size_t n = x.rows(), m = y.rows(), k = x.cols();
    Tensor out({n, m});
    for (std::size_t i = 0; i < n; ++i) {
        const double* xi = &x.values()[i * k];
        for (std::size_t j = 0; j < m; ++j) {
            const double* yj = &y.values()[j * k];
            double s = 0.0;
            for (std::size_t c = 0; c < k; ++c) s += xi[c] * yj[c];
            out.at(i, j) = s;
        }
    }
    return t.record(std::move(out), {a, b}, [a, b, n, m, k](Tape& t, const Tensor& g) {
        const Tensor& x = t.value(a);
        const Tensor& y = t.value(b);
        if (t.requires_grad(a)) {
            auto& ga = t.grad(a);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j) {
                    const double gij = g.at(i, j);
                    if (gij == 0.0) continue;
                    for (std::size_t c = 0; c < k; ++c) ga[i * k + c] += gij * y[j * k + c];
                }
        }
        if (t.requires_grad(b)) {
            auto& gb = t.grad(b);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j) {
                    const double gij = g.at(i, j);
                    if (gij == 0.0) continue;
                    for (std::size_t c = 0; c < k; ++c) gb[j * k + c] += gij * x[i * k + c];
                }
        }
    });
}

// a[n,k] * b[k,m] -> [n,m]
inline Var matmul_nn(Tape& t, Var a, Var b) {
    const Tensor& x = t.value(a);
    const Tensor& y = t.value(b);
    if (x.cols() != y.rows() || y.rank() != 2) {
        throw DimensionError("matmul_nn: inner dims of " + shape_str(x.shape()) + " and " + shape_str(y.shape()) +
                             " disagree");
    }
    const std::size_t n = x.rows(), k = x.cols(), m = y.cols();
    Tensor out({n, m});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < k; ++c) {
            const double xic = x[i * k + c];
            for (std::size_t j = 0; j < m; ++j) out[i * m + j] += xic * y[c * m + j];
        }
    return t.record(std::move(out), {a, b}, [a, b, n, m, k](Tape& t, const Tensor& g) {
        const Tensor& x = t.value(a);
        const Tensor& y = t.value(b);
        if (t.requires_grad(a)) {
            auto& ga = t.grad(a);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t c = 0; c < k; ++c) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < m; ++j) s += g[i * m + j] * y[c * m + j];
                    ga[i * k + c] += s;
                }
        }
        if (t.requires_grad(b)) {
            auto& gb = t.grad(b);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t c = 0; c < k; ++c) {
                    const double xic = x[i * k + c];
                    for (std::size_t j = 0; j < m; ++j) gb[c * m + j] += xic * g[i * m + j];
                }
        }
    });
}

// Row-wise y = W x + b with W [d_out, d_in] and b [d_out].
inline Var affine(Tape& t, Var x, Var w, Var b) {
    const Tensor& xv = t.value(x);
    const Tensor& wv = t.value(w);
    const Tensor& bv = t.value(b);
    if (wv.rank() != 2 || wv.cols() != xv.cols() || bv.size() != wv.rows()) {
        throw DimensionError("affine: input " + shape_str(xv.shape()) + " incompatible with weight " +
                             shape_str(wv.shape()) + " and bias " + shape_str(bv.shape()));
    }
    const std::size_t n = xv.rows(), din = wv.cols(), dout = wv.rows();
    Tensor out(detail::with_last(xv.shape(), dout));
    for (std::size_t i = 0; i < n; ++i) {
        const double* xi = &xv.values()[i * din];
        for (std::size_t o = 0; o < dout; ++o) {
            const double* wo = &wv.values()[o * din];
            double s = bv[o];
            for (std::size_t c = 0; c < din; ++c) s += wo[c] * xi[c];
            out[i * dout + o] = s;
        }
    }
    return t.record(std::move(out), {x, w, b}, [x, w, b, n, din, dout](Tape& t, const Tensor& g) {
        const Tensor& xv = t.value(x);
        const Tensor& wv = t.value(w);
        if (t.requires_grad(x)) {
            auto& gx = t.grad(x);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t o = 0; o < dout; ++o) {
                    const double gio = g[i * dout + o];
                    for (std::size_t c = 0; c < din; ++c) gx[i * din + c] += gio * wv[o * din + c];
                }
        }
        if (t.requires_grad(w)) {
            auto& gw = t.grad(w);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t o = 0; o < dout; ++o) {
                    const double gio = g[i * dout + o];
                    for (std::size_t c = 0; c < din; ++c) gw[o * din + c] += gio * xv[i * din + c];
                }
        }
        if (t.requires_grad(b)) {
            auto& gb = t.grad(b);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t o = 0; o < dout; ++o) gb[o] += g[i * dout + o];
        }
    });
}

// Row-wise x W^T without bias.
inline Var linear(Tape& t, Var x, Var w) { return matmul_nt(t, x, w); }

// ---------------------------------------------------------------------------
// Normalization and activations

inline Var layer_norm(Tape& t, Var x, Var gamma, Var beta, double eps = kLayerNormEps) {
    const Tensor& xv = t.value(x);
    const std::size_t d = xv.cols();
    if (d < 2) throw DegenerateInputError("layer_norm needs at least 2 features, got " + std::to_string(d));
    if (!(eps > 0.0)) throw DegenerateInputError("layer_norm eps must be positive");
    const Tensor& gv = t.value(gamma);
    const Tensor& bv = t.value(beta);
    if (gv.size() != d || bv.size() != d) {
        throw DimensionError("layer_norm: gamma " + shape_str(gv.shape()) + " / beta " + shape_str(bv.shape()) +
                             " vs width " + std::to_string(d));
    }
    const std::size_t n = xv.rows();
    Tensor xhat(xv.shape());
    std::vector<double> inv_std(n);
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < n; ++i) {
        auto r = xv.row(i);
        double mean = 0.0;
        for (double v : r) mean += v;
        mean /= double(d);
        double var = 0.0;
        for (double v : r) var += (v - mean) * (v - mean);
        var /= double(d);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) {
            xhat.at(i, j) = (r[j] - mean) * inv_std[i];
            out.at(i, j) = gv[j] * xhat.at(i, j) + bv[j];
        }
    }
    return t.record(std::move(out), {x, gamma, beta},
                    [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), n, d](Tape& t,
                                                                                                const Tensor& g) {
                        const Tensor& gv = t.value(gamma);
                        if (t.requires_grad(gamma)) {
                            auto& gg = t.grad(gamma);
                            for (std::size_t i = 0; i < n; ++i)
                                for (std::size_t j = 0; j < d; ++j) gg[j] += g.at(i, j) * xhat.at(i, j);
                        }
                        if (t.requires_grad(beta)) {
                            auto& gb = t.grad(beta);
                            for (std::size_t i = 0; i < n; ++i)
                                for (std::size_t j = 0; j < d; ++j) gb[j] += g.at(i, j);
                        }
                        if (t.requires_grad(x)) {
                            auto& gx = t.grad(x);
                            std::vector<double> gh(d);
                            for (std::size_t i = 0; i < n; ++i) {
                                double mean_gh = 0.0, mean_ghx = 0.0;
                                for (std::size_t j = 0; j < d; ++j) {
                                    gh[j] = g.at(i, j) * gv[j];
                                    mean_gh += gh[j];
                                    mean_ghx += gh[j] * xhat.at(i, j);
                                }
                                mean_gh /= double(d);
                                mean_ghx /= double(d);
                                for (std::size_t j = 0; j < d; ++j) {
                                    gx.at(i, j) += inv_std[i] * (gh[j] - mean_gh - xhat.at(i, j) * mean_ghx);
                                }
                            }
                        }
                    });
}

inline double gaussian_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }
inline double gaussian_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

// Exact GELU, x * Phi(x).
inline Var gelu(Tape& t, Var x) {
    Tensor out = t.value(x);
    for (auto& v : out.data()) v = v * gaussian_cdf(v);
    return t.record(std::move(out), {x}, [x](Tape& t, const Tensor& g) {
        const Tensor& xv = t.value(x);
        auto& gx = t.grad(x);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double v = xv[i];
            gx[i] += g[i] * (gaussian_cdf(v) + v * gaussian_pdf(v));
        }
    });
}

// Each row divided by its L2 norm; rows at or below kNormFloor are an error.
inline Var l2_normalize(Tape& t, Var x) {
    const Tensor& xv = t.value(x);
    const std::size_t n = xv.rows(), d = xv.cols();
    Tensor out(xv.shape());
    std::vector<double> norms(n);
    for (std::size_t i = 0; i < n; ++i) {
        norms[i] = std::sqrt(squared_norm(xv.row(i)));
        if (!(norms[i] > kNormFloor)) {
            throw ZeroNormError("row " + std::to_string(i) + " has norm " + std::to_string(norms[i]) +
                                " at or below the floor");
        }
        for (std::size_t j = 0; j < d; ++j) out.at(i, j) = xv.at(i, j) / norms[i];
    }
    Tensor y = out;
    return t.record(std::move(out), {x}, [x, y = std::move(y), norms = std::move(norms), n, d](Tape& t,
                                                                                              const Tensor& g) {
        auto& gx = t.grad(x);
        for (std::size_t i = 0; i < n; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < d; ++j) dot += y.at(i, j) * g.at(i, j);
            for (std::size_t j = 0; j < d; ++j) gx.at(i, j) += (g.at(i, j) - y.at(i, j) * dot) / norms[i];
        }
    });
}

// Cosine similarity of two equal-shape vectors, as a scalar.
inline Var cosine(Tape& t, Var u, Var v) {
    const Tensor& uv = t.value(u);
    const Tensor& vv = t.value(v);
    detail::require_same_shape(uv, vv, "cosine");
    const Shape flat{1, uv.size()};
    Var un = l2_normalize(t, reshape(t, u, flat));
    Var vn = l2_normalize(t, reshape(t, v, flat));
    return sum(t, mul(t, un, vn));
}

// Row-wise softmax; with `causal`, entries above the diagonal get zero mass.
inline Var softmax_rows(Tape& t, Var x, bool causal = false) {
    const Tensor& xv = t.value(x);
    detail::require_matrix(xv, "softmax_rows");
    const std::size_t n = xv.rows(), m = xv.cols();
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t lim = causal ? std::min(m, i + 1) : m;
        double mx = xv.at(i, 0);
        for (std::size_t j = 1; j < lim; ++j) mx = std::max(mx, xv.at(i, j));
        double z = 0.0;
        for (std::size_t j = 0; j < lim; ++j) {
            out.at(i, j) = std::exp(xv.at(i, j) - mx);
            z += out.at(i, j);
        }
        for (std::size_t j = 0; j < lim; ++j) out.at(i, j) /= z;
    }
    Tensor p = out;
    return t.record(std::move(out), {x}, [x, p = std::move(p), n, m](Tape& t, const Tensor& g) {
        auto& gx = t.grad(x);
        for (std::size_t i = 0; i < n; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < m; ++j) dot += g.at(i, j) * p.at(i, j);
            for (std::size_t j = 0; j < m; ++j) gx.at(i, j) += p.at(i, j) * (g.at(i, j) - dot);
        }
    });
}

// Row-wise log-softmax via a max-shifted log-sum-exp.
inline Var log_softmax_rows(Tape& t, Var x) {
    const Tensor& xv = t.value(x);
    detail::require_matrix(xv, "log_softmax_rows");
    const std::size_t n = xv.rows(), m = xv.cols();
    Tensor out(xv.shape());
    Tensor p(xv.shape());
    for (std::size_t i = 0; i < n; ++i) {
        double mx = xv.at(i, 0);
        for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, xv.at(i, j));
        double z = 0.0;
        for (std::size_t j = 0; j < m; ++j) z += std::exp(xv.at(i, j) - mx);
        const double lse = mx + std::log(z);
        for (std::size_t j = 0; j < m; ++j) {
            out.at(i, j) = xv.at(i, j) - lse;
            p.at(i, j) = std::exp(out.at(i, j));
        }
    }
    return t.record(std::move(out), {x}, [x, p = std::move(p), n, m](Tape& t, const Tensor& g) {
        auto& gx = t.grad(x);
        for (std::size_t i = 0; i < n; ++i) {
            double gs = 0.0;
            for (std::size_t j = 0; j < m; ++j) gs += g.at(i, j);
            for (std::size_t j = 0; j < m; ++j) gx.at(i, j) += g.at(i, j) - p.at(i, j) * gs;
        }
    });
}

// Sum of the diagonal of a square matrix.
inline Var trace(Tape& t, Var x) {
    const Tensor& xv = t.value(x);
    if (xv.rank() != 2 || xv.rows() != xv.cols()) throw DimensionError("trace needs a square matrix");
    const std::size_t n = xv.rows();
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += xv.at(i, i);
    return t.record(Tensor::scalar(s), {x}, [x, n](Tape& t, const Tensor& g) {
        auto& gx = t.grad(x);
        for (std::size_t i = 0; i < n; ++i) gx.at(i, i) += g[0];
    });
}

// Rotary position encoding on rows of x [T, d] (d even): row t, pair (2i, 2i+1)
// is rotated by t * base^(-2i/d).
inline Var rope(Tape& t, Var x, double base = 10000.0) {
    const Tensor& xv = t.value(x);
    const std::size_t n = xv.rows(), d = xv.cols();
    if (d % 2 != 0) throw DimensionError("rope needs an even width, got " + std::to_string(d));
    auto angle = [base, d](std::size_t pos, std::size_t pair) {
        return double(pos) * std::pow(base, -2.0 * double(pair) / double(d));
    };
    Tensor out(xv.shape());
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t i = 0; i < d / 2; ++i) {
            const double a = angle(r, i), c = std::cos(a), s = std::sin(a);
            const double x0 = xv.at(r, 2 * i), x1 = xv.at(r, 2 * i + 1);
            out.at(r, 2 * i) = x0 * c - x1 * s;
            out.at(r, 2 * i + 1) = x0 * s + x1 * c;
        }
    return t.record(std::move(out), {x}, [x, n, d, angle](Tape& t, const Tensor& g) {
        auto& gx = t.grad(x);
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t i = 0; i < d / 2; ++i) {
                const double a = angle(r, i), c = std::cos(a), s = std::sin(a);
                const double g0 = g.at(r, 2 * i), g1 = g.at(r, 2 * i + 1);
                gx.at(r, 2 * i) += g0 * c + g1 * s;
                gx.at(r, 2 * i + 1) += -g0 * s + g1 * c;
            }
    });
}

// ---------------------------------------------------------------------------
// Value-level conveniences for callers that do not need gradients.

inline Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
    Tape t;
    return t.value(affine(t, t.constant(x), t.constant(w), t.constant(b)));
}

inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = kLayerNormEps) {
    Tape t;
    return t.value(layer_norm(t, t.constant(x), t.constant(gamma), t.constant(beta), eps));
}

inline Tensor gelu(const Tensor& x) {
    Tape t;
    return t.value(gelu(t, t.constant(x)));
}

inline Tensor l2_normalize(const Tensor& v) {
    Tape t;
    return t.value(l2_normalize(t, t.constant(v)));
}

inline double cosine(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size()) {
        throw DimensionError("cosine: lengths " + std::to_string(u.size()) + " and " + std::to_string(v.size()));
    }
    const double nu = std::sqrt(squared_norm(u)), nv = std::sqrt(squared_norm(v));
    if (!(nu > kNormFloor) || !(nv > kNormFloor)) throw ZeroNormError("cosine of a vector with zero norm");
    double dot = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) dot += (u[i] / nu) * (v[i] / nv);
    return dot;
}

inline double cosine(const Tensor& u, const Tensor& v) { return cosine(u.data(), v.data()); }

} // namespace gelato
