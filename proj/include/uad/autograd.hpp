#pragma once

// Reverse-mode differentiation.
//
// A Var is a handle to a node produced by an op. When the op runs against a
// recording Tape and at least one input needs a gradient, the node (with a
// closure computing input gradients) is appended to the tape. Tape::backward
// replays the record in reverse, visiting each op once and accumulating
// gradients additively into every consumer's inputs.
//
// Parameters live outside the tape. Tape::watch snapshots a parameter's
// version; mutating the parameter before backward makes the replay an error.

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "uad/tensor.hpp"

namespace uad {

template <class T>
class Tape;

template <class T>
class Parameter {
public:
    Parameter(std::string name, TensorT<T> value) : name_(std::move(name)), value_(std::move(value)) {}

    const std::string& name() const { return name_; }
    const TensorT<T>& value() const { return value_; }
    /// Mutable access; bumps the version so stale tapes refuse to replay.
    TensorT<T>& mutable_value() {
        ++version_;
        return value_;
    }
    std::uint64_t version() const { return version_; }

private:
    std::string name_;
    TensorT<T> value_;
    std::uint64_t version_ = 0;
};

/// Ordered, named parameter collection with stable element addresses.
template <class T>
class ParameterStore {
public:
    ParameterStore() = default;
    ParameterStore(const ParameterStore&) = delete;
    ParameterStore& operator=(const ParameterStore&) = delete;

    Parameter<T>& add(std::string name, TensorT<T> value);
    Parameter<T>* find(const std::string& name);
    const Parameter<T>* find(const std::string& name) const;
    Parameter<T>& at(const std::string& name);

    std::size_t size() const { return params_.size(); }
    /// Total number of scalar parameters.
    std::int64_t scalar_count() const;

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }
    Parameter<T>& operator[](std::size_t i) { return params_[i]; }
    const Parameter<T>& operator[](std::size_t i) const { return params_[i]; }

private:
    std::deque<Parameter<T>> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

template <class T>
struct Node {
    TensorT<T> value;
    TensorT<T> grad;
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;
};

/// Adds `g` into `node.grad` when the node participates in differentiation.
template <class T>
void accumulate_grad(Node<T>& node, const TensorT<T>& g);
template <class T>
void accumulate_grad(Node<T>& node, TensorT<T>&& g);

template <class T>
class Var {
public:
    Var() = default;
    Var(std::shared_ptr<Node<T>> node, Tape<T>* tape) : node_(std::move(node)), tape_(tape) {}

    const TensorT<T>& value() const { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    std::int64_t dim(int axis) const { return node_->value.dim(axis); }
    int rank() const { return node_->value.rank(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    Tape<T>* tape() const { return tape_; }
    bool defined() const { return static_cast<bool>(node_); }

    const std::shared_ptr<Node<T>>& node() const { return node_; }

private:
    std::shared_ptr<Node<T>> node_;
    Tape<T>* tape_ = nullptr;
};

/// A value with no tape and no gradient.
template <class T>
Var<T> constant(TensorT<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    return Var<T>(std::move(n), nullptr);
}

/// Gradients keyed by parameter; parameters the loss never reached map to zeros.
template <class T>
class Gradients {
public:
    const TensorT<T>* find(const Parameter<T>& p) const;
    TensorT<T> of(const Parameter<T>& p) const;
    void set(const Parameter<T>& p, TensorT<T> g) { grads_[&p] = std::move(g); }
    std::size_t size() const { return grads_.size(); }

private:
    std::unordered_map<const Parameter<T>*, TensorT<T>> grads_;
};

template <class T>
class Tape {
public:
    /// A non-recording tape evaluates ops without keeping the graph.
    explicit Tape(bool record = true) : record_(record) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool recording() const { return record_; }

    /// Leaf for a parameter. Watching the same parameter twice returns the same node.
    Var<T> watch(const Parameter<T>& p);
    /// Leaf for an arbitrary tensor; `requires_grad` makes its gradient available via grad().
    Var<T> leaf(TensorT<T> value, bool requires_grad = false);

    /// Records `value` as the output of `op`. The node keeps its inputs and
    /// backward closure only when recording and some input needs a gradient.
    Var<T> make(const char* op, TensorT<T> value, std::vector<Var<T>> inputs, std::function<void(Node<T>&)> backward);

    /// Reverse sweep from a scalar loss. A tape replays at most once.
    Gradients<T> backward(const Var<T>& loss);
    /// Gradient of a leaf after backward (zeros when unreached).
    TensorT<T> grad(const Var<T>& v) const;

    std::size_t recorded_ops() const { return ops_.size(); }
    std::size_t last_visits() const { return visits_; }

private:
    struct Watched {
        const Parameter<T>* param;
        std::uint64_t version;
        std::shared_ptr<Node<T>> node;
    };

    bool record_;
    bool replayed_ = false;
    std::size_t visits_ = 0;
    std::vector<std::shared_ptr<Node<T>>> ops_;
    std::vector<Watched> watched_;
    std::unordered_map<const Parameter<T>*, std::size_t> watch_index_;
    std::vector<std::shared_ptr<Node<T>>> leaves_;
};

/// Builds the output Var for an op whose inputs may belong to a tape.
template <class T>
Var<T> make_var(const char* op, TensorT<T> value, std::vector<Var<T>> inputs, std::function<void(Node<T>&)> backward);

extern template class ParameterStore<float>;
extern template class ParameterStore<double>;
extern template class Gradients<float>;
extern template class Gradients<double>;
extern template class Tape<float>;
extern template class Tape<double>;

} // namespace uad
