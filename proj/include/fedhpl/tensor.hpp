#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace fedhpl::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorNode {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;  // empty until a gradient is accumulated
    bool requires_grad = false;
    int node_id = -1;
};

// Dense 64-bit float tensor. Copies share the underlying node, so a Tensor
// behaves as a handle into the computation graph.
class Tensor {
public:
    Tensor() : node_(std::make_shared<TensorNode>()) {}

    static Tensor leaf(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor scalar(double value);

    const Shape& shape() const { return node_->shape; }
    std::size_t size() const { return node_->values.size(); }
    std::size_t rows() const { return node_->shape.empty() ? 1 : node_->shape[0]; }
    std::size_t cols() const;

    std::vector<double>& values() { return node_->values; }
    const std::vector<double>& values() const { return node_->values; }
    double item() const;

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool requires_grad) { node_->requires_grad = requires_grad; }
    int node_id() const { return node_->node_id; }

    bool has_grad() const { return !node_->grad.empty(); }
    // Gradient buffer; zeros when backward never reached this tensor.
    std::vector<double> grad() const;
    void zero_grad() const { node_->grad.assign(node_->grad.size(), 0.0); }
    void drop_grad() const { node_->grad.clear(); }

    // Mutates the shared node, not the handle.
    void accumulate_grad(const std::vector<double>& delta) const;
    TensorNode* node() const { return node_.get(); }

private:
    std::shared_ptr<TensorNode> node_;
};

// Define-by-run tape. Every primitive appends one entry; entries are in
// topological order by construction, and backward replays them exactly once
// in reverse.
class Tape {
public:
    void record(std::function<void()> backward) { entries_.push_back(std::move(backward)); }
    int assign_id() { return next_id_++; }
    std::size_t size() const { return entries_.size(); }
    void clear() {
        entries_.clear();
        next_id_ = 0;
    }

    // Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. Rejects a
    // non-scalar loss or an empty tape.
    void backward(const Tensor& loss);

private:
    std::vector<std::function<void()>> entries_;
    int next_id_ = 0;
};

// ---- primitives -----------------------------------------------------------

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& a, double c);
// (r, c) + (c): adds v to every row of a.
Tensor add_rowvec(Tape& tape, const Tensor& a, const Tensor& v);
Tensor concat(Tape& tape, const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(Tape& tape, const Tensor& a, std::size_t axis, std::size_t start, std::size_t len);
Tensor transpose(Tape& tape, const Tensor& a);
Tensor reshape(Tape& tape, const Tensor& a, Shape shape);
// Softmax / log-softmax along the last axis, max-subtracted for stability.
Tensor softmax(Tape& tape, const Tensor& a);
Tensor log_softmax(Tape& tape, const Tensor& a);
// Normalizes each row of a, then applies elementwise gain and bias (both (c)).
Tensor layer_norm(Tape& tape, const Tensor& a, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);
Tensor gelu(Tape& tape, const Tensor& a);
Tensor sum(Tape& tape, const Tensor& a);
Tensor mean(Tape& tape, const Tensor& a);

// Copy of values detached from any gradient path.
Tensor detach(const Tensor& a);

// Runs a graph-building closure against the tape and returns its output.
Tensor forward_eval(Tape& tape, const std::function<Tensor(Tape&)>& builder);

// Backpropagates from a scalar loss through the tape that produced it.
void backward_grad(Tape& tape, const Tensor& loss);

// Central-difference gradient check: evaluates f at x +- h*e per coordinate
// and compares with the analytic gradient obtained from a fresh tape.
// Returns max over coordinates of |analytic - fd| / (|analytic| + 1e-12).
double finite_diff_check(const std::function<Tensor(Tape&, const Tensor&)>& f, const Tensor& x,
                         double h);

}  // namespace fedhpl::ad
