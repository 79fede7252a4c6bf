#include "mvc/tensor.hpp"

#include <sstream>

#include "mvc/errors.hpp"

namespace mvc {

int64_t numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) {
        if (d < 0) throw DimensionError("negative dimension in shape " + shape_str(s));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ']';
    return os.str();
}

std::vector<int64_t> row_major_strides(const Shape& s) {
    std::vector<int64_t> st(s.size());
    int64_t acc = 1;
    for (size_t i = s.size(); i-- > 0;) {
        st[i] = acc;
        acc *= s[i];
    }
    return st;
}

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
    const int64_t n = numel(shape);
    if (static_cast<int64_t>(values.size()) != n)
        throw DimensionError("constant: " + std::to_string(values.size()) +
                             " values for shape " + shape_str(shape));
    auto s = std::make_shared<detail::Storage>();
    s->shape = std::move(shape);
    s->v = std::move(values);
    return Tensor(std::move(s));
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
    const int64_t n = numel(shape);
    auto s = std::make_shared<detail::Storage>();
    s->shape = std::move(shape);
    s->v.assign(static_cast<size_t>(n), value);
    return Tensor(std::move(s));
}

Tensor Tensor::scalar(double value) { return constant({}, {value}); }

const Shape& Tensor::shape() const {
    if (!s_) throw StateError("use of an undefined tensor");
    return s_->shape;
}

int64_t Tensor::size() const { return static_cast<int64_t>(data().size()); }
int Tensor::rank() const { return static_cast<int>(shape().size()); }

bool Tensor::tracked() const { return s_ && s_->tracked; }
Tape* Tensor::tape() const { return s_ ? s_->tape : nullptr; }
int64_t Tensor::node_id() const { return s_ ? s_->node_id : -1; }

const std::vector<double>& Tensor::data() const {
    if (!s_) throw StateError("use of an undefined tensor");
    return s_->v;
}

std::vector<double>& Tensor::data_mut() {
    if (!s_) throw StateError("use of an undefined tensor");
    return s_->v;
}

bool Tensor::has_grad() const { return s_ && !s_->g.empty(); }

const std::vector<double>& Tensor::grad() const {
    if (!s_) throw StateError("use of an undefined tensor");
    if (s_->g.empty())
        throw StateError("tensor has no gradient (not tracked, or backward not run)");
    return s_->g;
}

double Tensor::item() const {
    const auto& d = data();
    if (d.size() != 1)
        throw DimensionError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
    return d[0];
}

double Tensor::at(const std::vector<int64_t>& index) const {
    const auto& sh = shape();
    if (index.size() != sh.size())
        throw DimensionError("at: index rank " + std::to_string(index.size()) +
                             " vs tensor rank " + std::to_string(sh.size()));
    int64_t flat = 0;
    const auto st = row_major_strides(sh);
    for (size_t i = 0; i < sh.size(); ++i) {
        if (index[i] < 0 || index[i] >= sh[i])
            throw DimensionError("at: index out of bounds in axis " + std::to_string(i));
        flat += index[i] * st[i];
    }
    return data()[static_cast<size_t>(flat)];
}

Tensor Tape::leaf(Shape shape, std::vector<double> values) {
    Tensor t = Tensor::constant(std::move(shape), std::move(values));
    t.s_->tracked = true;
    t.s_->tape = this;
    leaves_.push_back(t.s_);
    return t;
}

Tensor Tape::leaf_full(Shape shape, double value) {
    const int64_t n = numel(shape);
    return leaf(std::move(shape), std::vector<double>(static_cast<size_t>(n), value));
}

void Tape::add_record(const char* op, std::function<void()> fn) {
    records_.push_back(Record{op, std::move(fn)});
}

void Tape::backward(const Tensor& output) {
    if (spent_)
        throw StateError("backward called twice on the same tape; call reset() first");
    if (!output.tracked() || output.tape() != this)
        throw StateError("backward: output is not tracked by this tape");
    if (output.size() != 1)
        throw DimensionError("backward: output must be scalar, got shape " +
                             shape_str(output.shape()));
    spent_ = true;
    output.s_->g.assign(1, 1.0);
    for (size_t i = records_.size(); i-- > 0;) {
        records_[i].backprop();
    }
}

void Tape::reset() {
    records_.clear();
    spent_ = false;
}

void Tape::zero_grad() {
    for (auto& w : leaves_) {
        if (auto s = w.lock()) s->g.clear();
    }
    // Compact leaves that no longer exist.
    std::vector<std::weak_ptr<detail::Storage>> alive;
    alive.reserve(leaves_.size());
    for (auto& w : leaves_)
        if (!w.expired()) alive.push_back(w);
    leaves_.swap(alive);
}

} // namespace mvc
