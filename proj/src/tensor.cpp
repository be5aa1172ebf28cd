#include "fedhpl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace fedhpl::ad {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

[[noreturn]] void shape_error(const std::string& primitive, const std::string& detail) {
    throw std::invalid_argument(primitive + ": " + detail);
}

void require_rank(const std::string& primitive, const Tensor& t, std::size_t rank) {
    if (t.shape().size() != rank) {
        shape_error(primitive, "expected rank-" + std::to_string(rank) + " tensor, got shape " +
                                   shape_str(t.shape()));
    }
}

// Row count when the tensor is viewed as (rows, last-axis) groups.
std::size_t group_rows(const Tensor& t) {
    return t.shape().size() <= 1 ? 1 : shape_numel(t.shape()) / t.shape().back();
}

std::size_t last_axis(const Tensor& t) {
    return t.shape().empty() ? 1 : t.shape().back();
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream out;
    out << "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << ",";
        out << shape[i];
    }
    out << ")";
    return out.str();
}

Tensor Tensor::leaf(Shape shape, std::vector<double> values, bool requires_grad) {
    if (shape_numel(shape) != values.size()) {
        shape_error("leaf", "shape " + shape_str(shape) + " does not hold " +
                                std::to_string(values.size()) + " values");
    }
    for (std::size_t d : shape) {
        if (d == 0) shape_error("leaf", "zero extent in shape " + shape_str(shape));
    }
    Tensor t;
    t.node_->shape = std::move(shape);
    t.node_->values = std::move(values);
    t.node_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    std::vector<double> values(shape_numel(shape), value);
    return leaf(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::scalar(double value) { return leaf({1}, {value}); }

std::size_t Tensor::cols() const {
    if (node_->shape.size() < 2) return node_->shape.empty() ? 1 : node_->shape[0];
    return node_->shape[1];
}

double Tensor::item() const {
    if (size() != 1) {
        shape_error("item", "tensor of shape " + shape_str(shape()) + " is not scalar");
    }
    return node_->values[0];
}

std::vector<double> Tensor::grad() const {
    if (node_->grad.empty()) return std::vector<double>(node_->values.size(), 0.0);
    return node_->grad;
}

void Tensor::accumulate_grad(const std::vector<double>& delta) const {
    if (node_->grad.empty()) node_->grad.assign(node_->values.size(), 0.0);
    for (std::size_t i = 0; i < delta.size(); ++i) node_->grad[i] += delta[i];
}

void Tape::backward(const Tensor& loss) {
    if (loss.size() != 1) {
        throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                    shape_str(loss.shape()));
    }
    if (entries_.empty()) {
        throw std::invalid_argument("backward: tape is empty");
    }
    loss.node()->grad.assign(1, 1.0);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
}

namespace {

// Records the op on the tape and stamps the output's tape position. The
// backward closure is responsible for guarding per-input requires_grad and
// for doing nothing when the output never received a gradient.
Tensor finish(Tape& tape, Tensor out, bool requires_grad, std::function<void()> backward) {
    out.node()->requires_grad = requires_grad;
    out.node()->node_id = tape.assign_id();
    tape.record(std::move(backward));
    return out;
}

}  // namespace

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
    require_rank("matmul", a, 2);
    require_rank("matmul", b, 2);
    const std::size_t n = a.shape()[0], k = a.shape()[1], m = b.shape()[1];
    if (b.shape()[0] != k) {
        shape_error("matmul", "lhs " + shape_str(a.shape()) + " rhs " + shape_str(b.shape()));
    }
    Tensor out = Tensor::zeros({n, m});
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = av[i * k + p];
            if (aip == 0.0) continue;
            for (std::size_t j = 0; j < m; ++j) ov[i * m + j] += aip * bv[p * m + j];
        }
    }
    return finish(tape, out, a.requires_grad() || b.requires_grad(), [a, b, out, n, k, m]() {
        if (!out.has_grad()) return;
        const auto& g = out.node()->grad;
        if (a.requires_grad()) {
            std::vector<double> da(n * k, 0.0);
            const auto& bv = b.values();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j) {
                    const double gij = g[i * m + j];
                    if (gij == 0.0) continue;
                    for (std::size_t p = 0; p < k; ++p) da[i * k + p] += gij * bv[p * m + j];
                }
            a.accumulate_grad(da);
        }
        if (b.requires_grad()) {
            std::vector<double> db(k * m, 0.0);
            const auto& av = a.values();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const double aip = av[i * k + p];
                    if (aip == 0.0) continue;
                    for (std::size_t j = 0; j < m; ++j) db[p * m + j] += aip * g[i * m + j];
                }
            b.accumulate_grad(db);
        }
    });
}

namespace {

Tensor elementwise_pair(Tape& tape, const char* name, const Tensor& a, const Tensor& b,
                        double sign_b) {
    if (a.shape() != b.shape()) {
        shape_error(name, "lhs " + shape_str(a.shape()) + " rhs " + shape_str(b.shape()));
    }
    Tensor out = Tensor::zeros(a.shape());
    auto& ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = a.values()[i] + sign_b * b.values()[i];
    return finish(tape, out, a.requires_grad() || b.requires_grad(), [a, b, out, sign_b]() {
        if (!out.has_grad()) return;
        const auto& g = out.node()->grad;
        if (a.requires_grad()) a.accumulate_grad(g);
        if (b.requires_grad()) {
            if (sign_b == 1.0) {
                b.accumulate_grad(g);
            } else {
                std::vector<double> db(g.size());
                for (std::size_t i = 0; i < g.size(); ++i) db[i] = sign_b * g[i];
                b.accumulate_grad(db);
            }
        }
    });
}

}  // namespace

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
    return elementwise_pair(tape, "add", a, b, 1.0);
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
    return elementwise_pair(tape, "sub", a, b, -1.0);
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        shape_error("mul", "lhs " + shape_str(a.shape()) + " rhs " + shape_str(b.shape()));
    }
    Tensor out = Tensor::zeros(a.shape());
    auto& ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = a.values()[i] * b.values()[i];
    return finish(tape, out, a.requires_grad() || b.requires_grad(), [a, b, out]() {
        if (!out.has_grad()) return;
        const auto& g = out.node()->grad;
        if (a.requires_grad()) {
            std::vector<double> da(g.size());
            for (std::size_t i = 0; i < g.size(); ++i) da[i] = g[i] * b.values()[i];
            a.accumulate_grad(da);
        }
        if (b.requires_grad()) {
            std::vector<double> db(g.size());
            for (std::size_t i = 0; i < g.size(); ++i) db[i] = g[i] * a.values()[i];
            b.accumulate_grad(db);
        }
    });
}

Tensor scale(Tape& tape, const Tensor& a, double c) {
    Tensor out = Tensor::zeros(a.shape());
    auto& ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = c * a.values()[i];
    return finish(tape, out, a.requires_grad(), [a, out, c]() {
        if (!out.has_grad() || !a.requires_grad()) return;
        const auto& g = out.node()->grad;
        std::vector<double> da(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) da[i] = c * g[i];
        a.accumulate_grad(da);
    });
}

Tensor add_rowvec(Tape& tape, const Tensor& a, const Tensor& v) {
    require_rank("add_rowvec", a, 2);
    require_rank("add_rowvec", v, 1);
    const std::size_t r = a.shape()[0], c = a.shape()[1];
    if (v.shape()[0] != c) {
        shape_error("add_rowvec", "matrix " + shape_str(a.shape()) + " vector " +
                                      shape_str(v.shape()));
    }
    Tensor out = Tensor::zeros(a.shape());
    auto& ov = out.values();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) ov[i * c + j] = a.values()[i * c + j] + v.values()[j];
    return finish(tape, out, a.requires_grad() || v.requires_grad(), [a, v, out, r, c]() {
        if (!out.has_grad()) return;
        const auto& g = out.node()->grad;
        if (a.requires_grad()) a.accumulate_grad(g);
        if (v.requires_grad()) {
            std::vector<double> dv(c, 0.0);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) dv[j] += g[i * c + j];
            v.accumulate_grad(dv);
        }
    });
}

Tensor concat(Tape& tape, const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) shape_error("concat", "no inputs");
    const std::size_t rank = parts[0].shape().size();
    if (rank == 0 || rank > 2 || axis >= rank) {
        shape_error("concat", "axis " + std::to_string(axis) + " invalid for shape " +
                                  shape_str(parts[0].shape()));
    }
    bool needs_grad = false;
    Shape out_shape = parts[0].shape();
    out_shape[axis] = 0;
    for (const auto& p : parts) {
        if (p.shape().size() != rank) {
            shape_error("concat", "rank mismatch: " + shape_str(parts[0].shape()) + " vs " +
                                      shape_str(p.shape()));
        }
        for (std::size_t d = 0; d < rank; ++d) {
            if (d != axis && p.shape()[d] != parts[0].shape()[d]) {
                shape_error("concat", "extent mismatch off axis: " +
                                          shape_str(parts[0].shape()) + " vs " +
                                          shape_str(p.shape()));
            }
        }
        out_shape[axis] += p.shape()[axis];
        needs_grad = needs_grad || p.requires_grad();
    }
    Tensor out = Tensor::zeros(out_shape);
    auto& ov = out.values();
    if (rank == 1 || axis == 0) {
        std::size_t offset = 0;
        for (const auto& p : parts) {
            std::copy(p.values().begin(), p.values().end(), ov.begin() + offset);
            offset += p.size();
        }
    } else {  // rank 2, axis 1
        const std::size_t rows = out_shape[0], out_cols = out_shape[1];
        std::size_t col_offset = 0;
        for (const auto& p : parts) {
            const std::size_t pc = p.shape()[1];
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < pc; ++j)
                    ov[i * out_cols + col_offset + j] = p.values()[i * pc + j];
            col_offset += pc;
        }
    }
    return finish(tape, out, needs_grad, [parts, out, rank, axis, out_shape]() {
        if (!out.has_grad()) return;
        const auto& g = out.node()->grad;
        if (rank == 1 || axis == 0) {
            std::size_t offset = 0;
            for (const auto& p : parts) {
                if (p.requires_grad()) {
                    std::vector<double> dp(g.begin() + offset, g.begin() + offset + p.size());
                    p.accumulate_grad(dp);
                }
                offset += p.size();
            }
        } else {
            const std::size_t rows = out_shape[0], out_cols = out_shape[1];
            std::size_t col_offset = 0;
            for (const auto& p : parts) {
                const std::size_t pc = p.shape()[1];
                if (p.requires_grad()) {
                    std::vector<double> dp(rows * pc);
                    for (std::size_t i = 0; i < rows; ++i)
                        for (std::size_t j = 0; j < pc; ++j)
                            dp[i * pc + j] = g[i * out_cols + col_offset + j];
                    p.accumulate_grad(dp);
                }
                col_offset += pc;
            }
        }
    });
}

Tensor slice(Tape& tape, const Tensor& a, std::size_t axis, std::size_t start, std::size_t len) {
    const std::size_t rank = a.shape().size();
    if (rank == 0 || rank > 2 || axis >= rank) {
        shape_error("slice", "axis " + std::to_string(axis) + " invalid for shape " +
                                 shape_str(a.shape()));
    }
    if (len == 0 || start + len > a.shape()[axis]) {
        shape_error("slice", "range [" + std::to_string(start) + "," +
                                 std::to_string(start + len) + ") outside shape " +
                                 shape_str(a.shape()));
    }
    Shape out_shape = a.shape();
    out_shape[axis] = len;
    Tensor out = Tensor::zeros(out_shape);
    auto& ov = out.values();
    const std::size_t in_cols = rank == 2 ? a.shape()[1] : 1;
    if (rank == 1) {
        std::copy(a.values().begin() + start, a.values().begin() + start + len, ov.begin());
    } else if (axis == 0) {
        std::copy(a.values().begin() + start * in_cols,
                  a.values().begin() + (start + len) * in_cols, ov.begin());
    } else {
        const std::size_t rows = a.shape()[0];
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < len; ++j) ov[i * len + j] = a.values()[i * in_cols + start + j];
    }
    return finish(tape, out, a.requires_grad(), [a, out, rank, axis, start, len, in_cols]() {
        if (!out.has_grad() || !a.requires_grad()) return;
        const auto& g = out.node()->grad;
        std::vector<double> da(a.size(), 0.0);
        if (rank == 1) {
            for (std::size_t i = 0; i < len; ++i) da[start + i] = g[i];
        } else if (axis == 0) {
            std::copy(g.begin(), g.end(), da.begin() + start * in_cols);
        } else {
            const std::size_t rows = a.shape()[0];
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < len; ++j) da[i * in_cols + start + j] = g[i * len + j];
        }
        a.accumulate_grad(da);
    });
}

Tensor transpose(Tape& tape, const Tensor& a) {
    require_rank("transpose", a, 2);
    const std::size_t r = a.shape()[0], c = a.shape()[1];
    Tensor out = Tensor::zeros({c, r});
    auto& ov = out.values();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) ov[j * r + i] = a.values()[i * c + j];
    return finish(tape, out, a.requires_grad(), [a, out, r, c]() {
        if (!out.has_grad() || !a.requires_grad()) return;
        const auto& g = out.node()->grad;
        std::vector<double> da(r * c);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) da[i * c + j] = g[j * r + i];
        a.accumulate_grad(da);
    });
}

Tensor reshape(Tape& tape, const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.size()) {
        shape_error("reshape", "cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    }
    Tensor out = Tensor::leaf(std::move(shape), a.values());
    return finish(tape, out, a.requires_grad(), [a, out]() {
        if (!out.has_grad() || !a.requires_grad()) return;
        a.accumulate_grad(out.node()->grad);
    });
}

Tensor softmax(Tape& tape, const Tensor& a) {
    const std::size_t rows = group_rows(a), c = last_axis(a);
    Tensor out = Tensor::zeros(a.shape());
    auto& ov = out.values();
    for (std::size_t i = 0; i < rows; ++i) {
        const double* x = a.values().data() + i * c;
        double m = x[0];
        for (std::size_t j = 1; j < c; ++j) m = std::max(m, x[j]);
        double total = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            ov[i * c + j] = std::exp(x[j] - m);
            total += ov[i * c + j];
        }
        for (std::size_t j = 0; j < c; ++j) ov[i * c + j] /= total;
    }
    return finish(tape, out, a.requires_grad(), [a, out, rows, c]() {
        if (!out.has_grad() || !a.requires_grad()) return;
        const auto& g = out.node()->grad;
        const auto& y = out.values();
        std::vector<double> da(a.size());
        for (std::size_t i = 0; i < rows; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * y[i * c + j];
            for (std::size_t j = 0; j < c; ++j)
                da[i * c + j] = y[i * c + j] * (g[i * c + j] - dot);
        }
        a.accumulate_grad(da);
    });
}

Tensor log_softmax(Tape& tape, const Tensor& a) {
    const std::size_t rows = group_rows(a), c = last_axis(a);
    Tensor out = Tensor::zeros(a.shape());
    auto& ov = out.values();
    for (std::size_t i = 0; i < rows; ++i) {
        const double* x = a.values().data() + i * c;
        double m = x[0];
        for (std::size_t j = 1; j < c; ++j) m = std::max(m, x[j]);
        double total = 0.0;
        for (std::size_t j = 0; j < c; ++j) total += std::exp(x[j] - m);
        const double lse = m + std::log(total);
        for (std::size_t j = 0; j < c; ++j) ov[i * c + j] = x[j] - lse;
    }
    return finish(tape, out, a.requires_grad(), [a, out, rows, c]() {
        if (!out.has_grad() || !a.requires_grad()) return;
        const auto& g = out.node()->grad;
        const auto& y = out.values();
        std::vector<double> da(a.size());
        for (std::size_t i = 0; i < rows; ++i) {
            double gsum = 0.0;
            for (std::size_t j = 0; j < c; ++j) gsum += g[i * c + j];
            for (std::size_t j = 0; j < c; ++j)
                da[i * c + j] = g[i * c + j] - std::exp(y[i * c + j]) * gsum;
        }
        a.accumulate_grad(da);
    });
}

Tensor layer_norm(Tape& tape, const Tensor& a, const Tensor& gain, const Tensor& bias,
                  double eps) {
    const std::size_t rows = group_rows(a), c = last_axis(a);
    require_rank("layer_norm", gain, 1);
    require_rank("layer_norm", bias, 1);
    if (gain.shape()[0] != c || bias.shape()[0] != c) {
        shape_error("layer_norm", "input " + shape_str(a.shape()) + " gain " +
                                      shape_str(gain.shape()) + " bias " +
                                      shape_str(bias.shape()));
    }
    Tensor out = Tensor::zeros(a.shape());
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    auto xhat = std::make_shared<std::vector<double>>(a.size());
    auto& ov = out.values();
    for (std::size_t i = 0; i < rows; ++i) {
        const double* x = a.values().data() + i * c;
        double mu = 0.0;
        for (std::size_t j = 0; j < c; ++j) mu += x[j];
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) var += (x[j] - mu) * (x[j] - mu);
        var /= static_cast<double>(c);
        const double inv = 1.0 / std::sqrt(var + eps);
        (*inv_std)[i] = inv;
        for (std::size_t j = 0; j < c; ++j) {
            const double h = (x[j] - mu) * inv;
            (*xhat)[i * c + j] = h;
            ov[i * c + j] = h * gain.values()[j] + bias.values()[j];
        }
    }
    const bool needs_grad = a.requires_grad() || gain.requires_grad() || bias.requires_grad();
    return finish(tape, out, needs_grad, [a, gain, bias, out, rows, c, inv_std, xhat]() {
        if (!out.has_grad()) return;
        const auto& g = out.node()->grad;
        if (gain.requires_grad()) {
            std::vector<double> dg(c, 0.0);
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < c; ++j) dg[j] += g[i * c + j] * (*xhat)[i * c + j];
            gain.accumulate_grad(dg);
        }
        if (bias.requires_grad()) {
            std::vector<double> db(c, 0.0);
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < c; ++j) db[j] += g[i * c + j];
            bias.accumulate_grad(db);
        }
        if (a.requires_grad()) {
            std::vector<double> da(a.size());
            for (std::size_t i = 0; i < rows; ++i) {
                double mean_dh = 0.0, mean_dh_xhat = 0.0;
                for (std::size_t j = 0; j < c; ++j) {
                    const double dh = g[i * c + j] * gain.values()[j];
                    mean_dh += dh;
                    mean_dh_xhat += dh * (*xhat)[i * c + j];
                }
                mean_dh /= static_cast<double>(c);
                mean_dh_xhat /= static_cast<double>(c);
                for (std::size_t j = 0; j < c; ++j) {
                    const double dh = g[i * c + j] * gain.values()[j];
                    da[i * c + j] =
                        (*inv_std)[i] * (dh - mean_dh - (*xhat)[i * c + j] * mean_dh_xhat);
                }
            }
            a.accumulate_grad(da);
        }
    });
}

Tensor gelu(Tape& tape, const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape());
    auto& ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) {
        const double x = a.values()[i];
        ov[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
    }
    return finish(tape, out, a.requires_grad(), [a, out]() {
        if (!out.has_grad() || !a.requires_grad()) return;
        const auto& g = out.node()->grad;
        std::vector<double> da(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double x = a.values()[i];
            const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
            da[i] = g[i] * (cdf + x * pdf);
        }
        a.accumulate_grad(da);
    });
}

namespace {

Tensor reduce(Tape& tape, const Tensor& a, bool take_mean) {
    double total = 0.0;
    for (double v : a.values()) total += v;
    const double denom = take_mean ? static_cast<double>(a.size()) : 1.0;
    Tensor out = Tensor::scalar(total / denom);
    return finish(tape, out, a.requires_grad(), [a, out, denom]() {
        if (!out.has_grad() || !a.requires_grad()) return;
        const double g = out.node()->grad[0] / denom;
        std::vector<double> da(a.size(), g);
        a.accumulate_grad(da);
    });
}

}  // namespace

Tensor sum(Tape& tape, const Tensor& a) { return reduce(tape, a, false); }

Tensor mean(Tape& tape, const Tensor& a) { return reduce(tape, a, true); }

Tensor detach(const Tensor& a) { return Tensor::leaf(a.shape(), a.values(), false); }

Tensor forward_eval(Tape& tape, const std::function<Tensor(Tape&)>& builder) {
    return builder(tape);
}

void backward_grad(Tape& tape, const Tensor& loss) { tape.backward(loss); }

double finite_diff_check(const std::function<Tensor(Tape&, const Tensor&)>& f, const Tensor& x,
                         double h) {
    if (h <= 0.0) throw std::invalid_argument("finite_diff_check: h must be positive");
    Tensor probe = Tensor::leaf(x.shape(), x.values(), true);
    Tape tape;
    Tensor loss = f(tape, probe);
    tape.backward(loss);
    const std::vector<double> analytic = probe.grad();

    auto eval = [&](const std::vector<double>& values) {
        Tape t;
        Tensor arg = Tensor::leaf(x.shape(), values, false);
        return f(t, arg).item();
    };

    double max_err = 0.0;
    std::vector<double> perturbed = x.values();
    for (std::size_t i = 0; i < perturbed.size(); ++i) {
        const double original = perturbed[i];
        perturbed[i] = original + h;
        const double up = eval(perturbed);
        perturbed[i] = original - h;
        const double down = eval(perturbed);
        perturbed[i] = original;
        const double fd = (up - down) / (2.0 * h);
        const double err = std::abs(analytic[i] - fd) / (std::abs(analytic[i]) + 1e-12);
        max_err = std::max(max_err, err);
    }
    return max_err;
}

}  // namespace fedhpl::ad
