#ifndef ELF_TENSOR_HPP
#define ELF_TENSOR_HPP

// NCHW tensor with a dynamic reverse-mode tape.
//
// A Tensor is a cheap handle onto shared storage. Forward primitives record a
// node on the calling thread's tape whenever one of their inputs requires a
// gradient; backward() replays the tape in reverse append order.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace elf {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

template <class T>
struct TensorImpl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until a gradient reaches this tensor
    bool requires_grad = false;
    std::int64_t node = -1;  // tape index of the producing node, -1 for leaves
    std::uint64_t tape_epoch = 0;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
};

template <class T>
class Tape;

template <class T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0)) : impl_(std::make_shared<TensorImpl<T>>()) {
        impl_->data.assign(numel(shape), fill);
        impl_->shape = std::move(shape);
    }

    Tensor(Shape shape, std::vector<T> data) : impl_(std::make_shared<TensorImpl<T>>()) {
        if (numel(shape) != data.size())
            throw Error("tensor: shape " + to_string(shape) + " does not match " +
                        std::to_string(data.size()) + " values");
        impl_->shape = std::move(shape);
        impl_->data = std::move(data);
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, T v) { return Tensor(std::move(shape), v); }
    static Tensor scalar(T v) { return Tensor(Shape{1}, v); }

    bool defined() const { return static_cast<bool>(impl_); }
    const Shape& shape() const { return impl_->shape; }
    std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t size() const { return impl_->data.size(); }

    const std::vector<T>& data() const { return impl_->data; }
    // Only for leaves (parameters, inputs) outside of a recorded forward pass.
    std::vector<T>& mutable_data() { return impl_->data; }
    T item() const {
        if (size() != 1) throw Error("item() on tensor of shape " + to_string(shape()));
        return impl_->data[0];
    }
    T operator[](std::size_t i) const { return impl_->data[i]; }

    bool has_grad() const { return impl_->grad.size() == impl_->data.size(); }
    const std::vector<T>& grad() const { return impl_->grad; }
    std::vector<T>& mutable_grad() {
        impl_->ensure_grad();
        return impl_->grad;
    }
    void zero_grad() { impl_->grad.clear(); }

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool on = true) {
        impl_->requires_grad = on;
        return *this;
    }

    // Fresh leaf holding a copy of the values.
    Tensor detach() const { return Tensor(shape(), data()); }

    std::shared_ptr<TensorImpl<T>> impl() const { return impl_; }
    explicit Tensor(std::shared_ptr<TensorImpl<T>> impl) : impl_(std::move(impl)) {}

private:
    std::shared_ptr<TensorImpl<T>> impl_;
};

template <class T>
struct TapeNode {
    std::shared_ptr<TensorImpl<T>> output;
    std::function<void(const std::vector<T>& grad_out)> backward;
};

template <class T>
class Tape {
public:
    static Tape& current() {
        thread_local Tape tape;
        return tape;
    }

    bool recording() const { return enabled_; }
    void set_recording(bool on) { enabled_ = on; }
    std::size_t size() const { return nodes_.size(); }
    std::uint64_t epoch() const { return epoch_; }

    void clear() {
        nodes_.clear();
        ++epoch_;
    }

    void record(const Tensor<T>& out, std::function<void(const std::vector<T>&)> bw) {
        auto impl = out.impl();
        impl->requires_grad = true;
        impl->node = static_cast<std::int64_t>(nodes_.size());
        impl->tape_epoch = epoch_;
        nodes_.push_back(TapeNode<T>{impl, std::move(bw)});
    }

    void backward(const Tensor<T>& root) {
        auto impl = root.impl();
        if (impl->data.size() != 1)
            throw Error("backward: root must be a scalar, got shape " + to_string(impl->shape));
        if (impl->node < 0 || impl->tape_epoch != epoch_ ||
            static_cast<std::size_t>(impl->node) >= nodes_.size() || nodes_[impl->node].output != impl)
            throw Error("backward: root is not recorded on the active tape");
        impl->ensure_grad();
        impl->grad[0] += T(1);
        for (std::int64_t i = impl->node; i >= 0; --i) {
            auto& n = nodes_[static_cast<std::size_t>(i)];
            if (n.output->grad.size() != n.output->data.size()) continue;  // unreachable
            n.backward(n.output->grad);
        }
    }

private:
    std::vector<TapeNode<T>> nodes_;
    std::uint64_t epoch_ = 1;
    bool enabled_ = true;
};

template <class T>
void backward(const Tensor<T>& root) {
    Tape<T>::current().backward(root);
}

// Disables recording for the lifetime of the guard.
template <class T>
class NoGradGuard {
public:
    NoGradGuard() : prev_(Tape<T>::current().recording()) { Tape<T>::current().set_recording(false); }
    ~NoGradGuard() { Tape<T>::current().set_recording(prev_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

namespace detail {

template <class T>
bool needs_grad(std::initializer_list<const Tensor<T>*> ins) {
    if (!Tape<T>::current().recording()) return false;
    for (auto* t : ins)
        if (t && t->defined() && t->requires_grad()) return true;
    return false;
}

template <class T>
void check_finite(const Tensor<T>& t, const char* op) {
    for (T v : t.data())
        if (!std::isfinite(v)) throw Error(std::string(op) + ": produced a non-finite value");
}

// Accumulates into an input's gradient buffer only if that input takes part in
// differentiation.
template <class T>
std::vector<T>* grad_sink(const std::shared_ptr<TensorImpl<T>>& impl) {
    if (!impl || !impl->requires_grad) return nullptr;
    impl->ensure_grad();
    return &impl->grad;
}

}  // namespace detail

// Escape hatch for primitives defined outside this library (also used by the
// gradient-check negative control). `bw` receives the output gradient and must
// accumulate into the inputs' gradient buffers.
template <class T>
Tensor<T> make_op(Tensor<T> out, std::initializer_list<const Tensor<T>*> inputs,
                  std::function<void(const std::vector<T>&)> bw) {
    detail::check_finite(out, "custom op");
    if (detail::needs_grad<T>(inputs)) Tape<T>::current().record(out, std::move(bw));
    return out;
}

}  // namespace elf

#endif  // ELF_TENSOR_HPP
