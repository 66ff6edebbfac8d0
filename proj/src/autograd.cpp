#include "uad/autograd.hpp"

#include <algorithm>

namespace uad {

template <class T>
Parameter<T>& ParameterStore<T>::add(std::string name, TensorT<T> value) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
    index_.emplace(name, params_.size());
    params_.emplace_back(std::move(name), std::move(value));
    return params_.back();
}

template <class T>
Parameter<T>* ParameterStore<T>::find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &params_[it->second];
}

template <class T>
const Parameter<T>* ParameterStore<T>::find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &params_[it->second];
}

template <class T>
Parameter<T>& ParameterStore<T>::at(const std::string& name) {
    auto* p = find(name);
    if (!p) throw ConfigError("no parameter named '" + name + "'");
    return *p;
}

template <class T>
std::int64_t ParameterStore<T>::scalar_count() const {
    std::int64_t n = 0;
    for (const auto& p : params_) n += p.value().size();
    return n;
}

template <class T>
void accumulate_grad(Node<T>& node, const TensorT<T>& g) {
    if (!node.requires_grad) return;
    if (g.shape() != node.value.shape())
        throw ShapeError(std::string("gradient shape ") + to_string(g.shape()) + " does not match value shape " +
                         to_string(node.value.shape()) + " in op " + node.op);
    if (node.grad.empty()) {
        node.grad = g;
        return;
    }
    auto dst = node.grad.data();
    auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <class T>
void accumulate_grad(Node<T>& node, TensorT<T>&& g) {
    if (!node.requires_grad) return;
    if (node.grad.empty() && g.shape() == node.value.shape()) {
        node.grad = std::move(g);
        return;
    }
    accumulate_grad(node, static_cast<const TensorT<T>&>(g));
}

template <class T>
const TensorT<T>* Gradients<T>::find(const Parameter<T>& p) const {
    auto it = grads_.find(&p);
    return it == grads_.end() ? nullptr : &it->second;
}

template <class T>
TensorT<T> Gradients<T>::of(const Parameter<T>& p) const {
    if (auto* g = find(p)) return *g;
    return TensorT<T>::zeros(p.value().shape());
}

template <class T>
Var<T> Tape<T>::watch(const Parameter<T>& p) {
    if (auto it = watch_index_.find(&p); it != watch_index_.end()) return Var<T>(watched_[it->second].node, this);
    auto n = std::make_shared<Node<T>>();
    n->value = p.value();
    n->requires_grad = record_;
    n->op = "parameter";
    if (record_) {
        watch_index_.emplace(&p, watched_.size());
        watched_.push_back({&p, p.version(), n});
    }
    return Var<T>(std::move(n), this);
}

template <class T>
Var<T> Tape<T>::leaf(TensorT<T> value, bool requires_grad) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = record_ && requires_grad;
    if (n->requires_grad) leaves_.push_back(n);
    return Var<T>(std::move(n), this);
}

template <class T>
Var<T> Tape<T>::make(const char* op, TensorT<T> value, std::vector<Var<T>> inputs,
                     std::function<void(Node<T>&)> backward) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->op = op;
    const bool needs = record_ && std::any_of(inputs.begin(), inputs.end(),
                                               [](const Var<T>& v) { return v.requires_grad(); });
    if (needs) {
        if (replayed_) throw TapeError("cannot record onto a tape that has already been replayed");
        n->requires_grad = true;
        n->inputs.reserve(inputs.size());
        for (auto& v : inputs) n->inputs.push_back(v.node());
        n->backward = std::move(backward);
        ops_.push_back(n);
    }
    return Var<T>(std::move(n), this);
}

template <class T>
Gradients<T> Tape<T>::backward(const Var<T>& loss) {
    if (!record_) throw TapeError("backward on a non-recording tape");
    if (replayed_) throw TapeError("tape has already been replayed");
    if (!loss.defined() || loss.value().size() != 1)
        throw TapeError("backward needs a scalar loss, got shape " +
                        (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
    if (loss.tape() != this) throw TapeError("loss was not produced on this tape");
    for (const auto& w : watched_)
        if (w.param->version() != w.version)
            throw TapeError("parameter '" + w.param->name() + "' was modified after it was recorded");

    replayed_ = true;
    visits_ = 0;
    Gradients<T> out;
    auto& root = *loss.node();
    if (root.requires_grad) {
        root.grad = TensorT<T>(root.value.shape(), T(1));
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
            Node<T>& n = **it;
            ++visits_;
            if (n.grad.empty()) continue;
            n.backward(n);
        }
    }
    for (const auto& w : watched_) {
        if (!w.node->grad.empty()) out.set(*w.param, w.node->grad);
    }
    // Release the graph; leaf gradients stay readable through grad().
    for (auto& n : ops_) {
        n->inputs.clear();
        n->backward = nullptr;
    }
    return out;
}

template <class T>
TensorT<T> Tape<T>::grad(const Var<T>& v) const {
    if (!v.defined()) throw TapeError("grad of an undefined value");
    if (v.node()->grad.empty()) return TensorT<T>::zeros(v.shape());
    return v.node()->grad;
}

template <class T>
Var<T> make_var(const char* op, TensorT<T> value, std::vector<Var<T>> inputs, std::function<void(Node<T>&)> backward) {
    Tape<T>* tape = nullptr;
    for (const auto& v : inputs) {
        if (!v.tape()) continue;
        if (tape && tape != v.tape()) throw TapeError(std::string("inputs of ") + op + " come from different tapes");
        tape = v.tape();
    }
    if (!tape) return constant(std::move(value));
    return tape->make(op, std::move(value), std::move(inputs), std::move(backward));
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template class Gradients<float>;
template class Gradients<double>;
template class Tape<float>;
template class Tape<double>;
template void accumulate_grad(Node<float>&, const TensorT<float>&);
template void accumulate_grad(Node<double>&, const TensorT<double>&);
template void accumulate_grad(Node<float>&, TensorT<float>&&);
template void accumulate_grad(Node<double>&, TensorT<double>&&);
template Var<float> make_var(const char*, TensorT<float>, std::vector<Var<float>>, std::function<void(Node<float>&)>);
template Var<double> make_var(const char*, TensorT<double>, std::vector<Var<double>>,
                              std::function<void(Node<double>&)>);

} // namespace uad
