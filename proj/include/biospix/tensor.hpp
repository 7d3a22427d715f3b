#pragma once

#include <Eigen/Core>
#include <functional>
#include <initializer_list>
#include <memory>
#include <utility>
#include <vector>

#include "biospix/common.hpp"

namespace biospix {

template <typename Scalar>
using ArrayX = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
struct TensorData {
    std::vector<int> shape;
    ArrayX<Scalar> values;
    ArrayX<Scalar> grad;  // size 0 until backward needs it
    bool requires_grad = false;
    std::uint64_t tape_id = 0;  // 0 = not recorded on any tape
};

// Dense row-major n-d float tensor. Value-semantic handle over shared storage:
// copies alias the same buffer, which is what the tape needs to accumulate
// gradients into the tensors the caller still holds.
template <typename Scalar>
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape) {
        Tensor t;
        t.d_ = std::make_shared<TensorData<Scalar>>();
        t.d_->shape = std::move(shape);
        t.d_->values = ArrayX<Scalar>::Zero(numel(t.d_->shape));
        return t;
    }

    static Tensor full(std::vector<int> shape, Scalar v) {
        Tensor t = zeros(std::move(shape));
        t.d_->values.setConstant(v);
        return t;
    }

    static Tensor from(std::vector<int> shape, std::vector<Scalar> data) {
        if (static_cast<std::int64_t>(data.size()) != numel(shape))
            throw ShapeError("Tensor::from: data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        Tensor t;
        t.d_ = std::make_shared<TensorData<Scalar>>();
        t.d_->shape = std::move(shape);
        t.d_->values = Eigen::Map<const ArrayX<Scalar>>(data.data(), static_cast<Eigen::Index>(data.size()));
        return t;
    }

    static Tensor scalar(Scalar v) { return full({1}, v); }

    bool defined() const { return static_cast<bool>(d_); }
    const std::vector<int>& shape() const { return d_->shape; }
    int dim(int i) const { return d_->shape[static_cast<std::size_t>(i)]; }
    int ndim() const { return static_cast<int>(d_->shape.size()); }
    std::int64_t size() const { return d_->values.size(); }

    ArrayX<Scalar>& array() { return d_->values; }
    const ArrayX<Scalar>& array() const { return d_->values; }
    Scalar* data() { return d_->values.data(); }
    const Scalar* data() const { return d_->values.data(); }
    Scalar& operator[](std::int64_t i) { return d_->values[static_cast<Eigen::Index>(i)]; }
    Scalar operator[](std::int64_t i) const { return d_->values[static_cast<Eigen::Index>(i)]; }

    Scalar item() const {
        if (size() != 1) throw UsageError("item(): tensor is not scalar, shape " + shape_str(shape()));
        return d_->values[0];
    }

    // NCHW addressing
    std::int64_t index4(int n, int c, int y, int x) const {
        const auto& s = d_->shape;
        return ((static_cast<std::int64_t>(n) * s[1] + c) * s[2] + y) * s[3] + x;
    }
    Scalar& at4(int n, int c, int y, int x) { return d_->values[index4(n, c, y, x)]; }
    Scalar at4(int n, int c, int y, int x) const { return d_->values[index4(n, c, y, x)]; }

    bool requires_grad() const { return d_->requires_grad; }
    Tensor& set_requires_grad(bool b = true) {
        d_->requires_grad = b;
        return *this;
    }

    bool has_grad() const { return d_->grad.size() == size(); }
    ArrayX<Scalar>& grad() {
        ensure_grad();
        return d_->grad;
    }
    const ArrayX<Scalar>& grad() const {
        if (!has_grad()) throw UsageError("grad(): no gradient populated");
        return d_->grad;
    }
    void ensure_grad() {
        if (!has_grad()) d_->grad = ArrayX<Scalar>::Zero(size());
    }
    void zero_grad() {
        if (has_grad()) d_->grad.setZero();
    }

    // Deep copy; the clone is detached from any tape.
    Tensor clone() const {
        Tensor t = zeros(d_->shape);
        t.d_->values = d_->values;
        return t;
    }

    bool same_shape(const Tensor& o) const { return d_->shape == o.d_->shape; }

    std::shared_ptr<TensorData<Scalar>> node() const { return d_; }

private:
    std::shared_ptr<TensorData<Scalar>> d_;
};

// Reverse-mode tape: a Wengert list of backward closures in record order.
// Constructing a Tape makes it the current recording target for this thread;
// destruction restores the previous one, so independent tapes on separate
// threads never interact.
template <typename Scalar>
class Tape {
public:
    Tape() : id_(next_id()++), prev_(current_ptr()) { current_ptr() = this; }
    ~Tape() { current_ptr() = prev_; }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* current() { return current_ptr(); }

    std::uint64_t id() const { return id_; }
    std::size_t num_ops() const { return nodes_.size(); }

    // Called by op implementations after computing the output values.
    void record(Tensor<Scalar> output, std::function<void()> backward) {
        output.node()->tape_id = id_;
        output.node()->requires_grad = true;
        nodes_.push_back(std::move(backward));
    }

    bool owns(const Tensor<Scalar>& t) const { return t.node()->tape_id == id_; }

    // Seeds d(loss)/d(loss) = 1 and sweeps the list in reverse record order.
    // A tape can only be consumed once; re-running without re-recording the
    // graph would double-accumulate gradients.
    void backward(Tensor<Scalar>& loss) {
        if (consumed_) throw UsageError("backward: tape already consumed; re-record the graph first");
        if (loss.size() != 1) throw UsageError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
        if (!owns(loss)) throw UsageError("backward: loss was not recorded on this tape");
        consumed_ = true;
        loss.grad()[0] = Scalar(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    }

    bool consumed() const { return consumed_; }

private:
    static Tape*& current_ptr() {
        thread_local Tape* cur = nullptr;
        return cur;
    }
    static std::uint64_t& next_id() {
        static std::uint64_t id = 1;
        return id;
    }

    std::vector<std::function<void()>> nodes_;
    std::uint64_t id_;
    Tape* prev_;
    bool consumed_ = false;
};

// True when the op executing now should record onto a tape. Undefined
// tensors (e.g. an omitted bias) are ignored.
template <typename Scalar>
bool recording(std::initializer_list<const Tensor<Scalar>*> inputs) {
    if (Tape<Scalar>::current() == nullptr) return false;
    for (const auto* t : inputs)
        if (t->defined() && t->requires_grad()) return true;
    return false;
}

}  // namespace biospix
