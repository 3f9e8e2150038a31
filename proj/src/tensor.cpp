#include "raunet/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>

namespace raunet {

namespace {
std::atomic<bool> g_finite_checks{false};
}

void set_finite_checks(bool enabled) { g_finite_checks.store(enabled); }
bool finite_checks_enabled() { return g_finite_checks.load(); }

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {

void validate_shape(const Shape& shape) {
    for (std::size_t d : shape) {
        if (d == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
    }
}

template <class T>
void finite_check(const Tensor<T>& t, const char* op) {
    if (!finite_checks_enabled()) return;
    for (const T& v : t.data) {
        if (!std::isfinite(static_cast<double>(v))) {
            throw NumericError(std::string("non-finite value in output of ") + op);
        }
    }
}

}  // namespace

// ---- Tensor ----------------------------------------------------------------

template <class T>
TensorPtr<T> Tensor<T>::create(Shape shape, bool requires_grad) {
    validate_shape(shape);
    auto t = std::make_shared<Tensor<T>>();
    t->data.assign(shape_numel(shape), T(0));
    t->shape = std::move(shape);
    t->requires_grad = requires_grad;
    return t;
}

template <class T>
TensorPtr<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
    auto t = create(std::move(shape), requires_grad);
    for (T& v : t->data) v = value;
    return t;
}

template <class T>
TensorPtr<T> Tensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
    validate_shape(shape);
    if (shape_numel(shape) != values.size()) {
        throw ShapeError("value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
    }
    auto t = std::make_shared<Tensor<T>>();
    t->shape = std::move(shape);
    t->data = std::move(values);
    t->requires_grad = requires_grad;
    return t;
}

template <class T>
void Tensor<T>::ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
}

template <class T>
void Tensor<T>::zero_grad() {
    for (T& g : grad) g = T(0);
}

// ---- Tape ------------------------------------------------------------------

template <class T>
std::size_t Tape<T>::track(const TensorPtr<T>& t) {
    auto it = index_.find(t.get());
    if (it != index_.end()) return it->second;
    std::size_t id = tracked_.size();
    tracked_.push_back(t);
    index_.emplace(t.get(), id);
    return id;
}

template <class T>
bool Tape<T>::contains(const TensorPtr<T>& t) const {
    return index_.count(t.get()) != 0;
}

template <class T>
void Tape<T>::record(std::string_view op, std::initializer_list<TensorPtr<T>> inputs,
                     const TensorPtr<T>& output, std::function<void()> backward) {
    Node node;
    node.op = std::string(op);
    for (const auto& in : inputs) node.inputs.push_back(track(in));
    node.output = track(output);
    node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
}

template <class T>
void Tape<T>::backward(const TensorPtr<T>& loss) {
    if (loss->numel() != 1) {
        throw ShapeError("backward requires a scalar loss, got " + shape_str(loss->shape));
    }
    if (!contains(loss)) {
        throw ShapeError("backward: loss tensor is not on this tape");
    }
    loss->ensure_grad();
    loss->grad[0] = T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        it->backward();
    }
    clear();
}

template <class T>
void Tape<T>::clear() {
    tracked_.clear();
    index_.clear();
    nodes_.clear();
}

// ---- Rng -------------------------------------------------------------------

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

std::uint64_t rotl64(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

Rng::Rng(std::uint64_t seed) {
    std::uint64_t s = seed;
    for (auto& w : state_) w = splitmix64(s);
}

std::uint64_t Rng::next_u64() {
    const std::uint64_t result = rotl64(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl64(state_[3], 45);
    return result;
}

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
    // Box-Muller; consumes two draws, returns one value.
    double u1 = 1.0 - uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

std::uint64_t Rng::below(std::uint64_t n) {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
}

std::uint64_t Rng::mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t x = a ^ (b + 0x9E3779B97F4A7C15ULL + (a << 6) + (a >> 2));
    return splitmix64(x);
}

std::uint64_t Rng::hash_str(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

// ---- elementwise -----------------------------------------------------------

namespace {

enum class Bcast { same, chan, item };

// b against a: identical shape, [C] against [N,C,H,W], or [N,C,1,1] against
// [N,C,H,W].
Bcast bcast_kind(const Shape& a, const Shape& b) {
    if (a == b) return Bcast::same;
    if (a.size() == 4 && b.size() == 1 && b[0] == a[1]) return Bcast::chan;
    if (a.size() == 4 && b.size() == 4 && b[0] == a[0] && b[1] == a[1] && b[2] == 1 && b[3] == 1) {
        return Bcast::item;
    }
    throw ShapeError("shapes not broadcastable: " + shape_str(a) + " vs " + shape_str(b));
}

template <class T, class Fwd, class BwdA, class BwdB>
TensorPtr<T> elementwise_op(Tape<T>* tape, const char* name, const TensorPtr<T>& a,
                            const TensorPtr<T>& b, Fwd fwd, BwdA bwd_a, BwdB bwd_b) {
    const Bcast kind = bcast_kind(a->shape, b->shape);
    auto out = Tensor<T>::create(a->shape);

    const std::size_t n = a->numel();
    if (kind == Bcast::same) {
        for (std::size_t i = 0; i < n; ++i) out->data[i] = fwd(a->data[i], b->data[i]);
    } else {
        const std::size_t batch = a->shape[0], chans = a->shape[1];
        const std::size_t plane = a->shape[2] * a->shape[3];
        for (std::size_t nn = 0; nn < batch; ++nn) {
            for (std::size_t c = 0; c < chans; ++c) {
                const T bv = (kind == Bcast::chan) ? b->data[c] : b->data[nn * chans + c];
                const std::size_t base = (nn * chans + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    out->data[base + i] = fwd(a->data[base + i], bv);
                }
            }
        }
    }
    finite_check(*out, name);

    if (tape && (a->requires_grad || b->requires_grad)) {
        out->requires_grad = true;
        tape->record(name, {a, b}, out, [a, b, out, kind, bwd_a, bwd_b] {
            if (out->grad.empty()) return;
            const std::size_t n = a->numel();
            if (a->requires_grad) {
                a->ensure_grad();
                if (kind == Bcast::same) {
                    for (std::size_t i = 0; i < n; ++i) {
                        a->grad[i] += bwd_a(out->grad[i], a->data[i], b->data[i]);
                    }
                } else {
                    const std::size_t batch = a->shape[0], chans = a->shape[1];
                    const std::size_t plane = a->shape[2] * a->shape[3];
                    for (std::size_t nn = 0; nn < batch; ++nn) {
                        for (std::size_t c = 0; c < chans; ++c) {
                            const T bv = (kind == Bcast::chan) ? b->data[c] : b->data[nn * chans + c];
                            const std::size_t base = (nn * chans + c) * plane;
                            for (std::size_t i = 0; i < plane; ++i) {
                                a->grad[base + i] += bwd_a(out->grad[base + i], a->data[base + i], bv);
                            }
                        }
                    }
                }
            }
            if (b->requires_grad) {
                b->ensure_grad();
                if (kind == Bcast::same) {
                    for (std::size_t i = 0; i < n; ++i) {
                        b->grad[i] += bwd_b(out->grad[i], a->data[i], b->data[i]);
                    }
                } else {
                    // Broadcast input: sum the full-shape gradient over the
                    // broadcast axes.
                    const std::size_t batch = a->shape[0], chans = a->shape[1];
                    const std::size_t plane = a->shape[2] * a->shape[3];
                    for (std::size_t nn = 0; nn < batch; ++nn) {
                        for (std::size_t c = 0; c < chans; ++c) {
                            const T bv = (kind == Bcast::chan) ? b->data[c] : b->data[nn * chans + c];
                            const std::size_t base = (nn * chans + c) * plane;
                            T acc = T(0);
                            for (std::size_t i = 0; i < plane; ++i) {
                                acc += bwd_b(out->grad[base + i], a->data[base + i], bv);
                            }
                            b->grad[kind == Bcast::chan ? c : nn * chans + c] += acc;
                        }
                    }
                }
            }
        });
    }
    return out;
}

}  // namespace

template <class T>
TensorPtr<T> add(Tape<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b) {
    return elementwise_op(
        tape, "add", a, b, [](T x, T y) { return x + y; },
        [](T g, T, T) { return g; }, [](T g, T, T) { return g; });
}

template <class T>
TensorPtr<T> sub(Tape<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b) {
    return elementwise_op(
        tape, "sub", a, b, [](T x, T y) { return x - y; },
        [](T g, T, T) { return g; }, [](T g, T, T) { return -g; });
}

template <class T>
TensorPtr<T> mul(Tape<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b) {
    return elementwise_op(
        tape, "mul", a, b, [](T x, T y) { return x * y; },
        [](T g, T, T y) { return g * y; }, [](T g, T x, T) { return g * x; });
}

template <class T>
TensorPtr<T> scale(Tape<T>* tape, const TensorPtr<T>& a, T factor) {
    auto out = Tensor<T>::create(a->shape);
    for (std::size_t i = 0; i < a->numel(); ++i) out->data[i] = a->data[i] * factor;
    finite_check(*out, "scale");
    if (tape && a->requires_grad) {
        out->requires_grad = true;
        tape->record("scale", {a}, out, [a, out, factor] {
            if (out->grad.empty()) return;
            a->ensure_grad();
            for (std::size_t i = 0; i < a->numel(); ++i) a->grad[i] += out->grad[i] * factor;
        });
    }
    return out;
}

template <class T>
TensorPtr<T> log_elem(Tape<T>* tape, const TensorPtr<T>& a) {
    auto out = Tensor<T>::create(a->shape);
    for (std::size_t i = 0; i < a->numel(); ++i) {
        if (!(a->data[i] > T(0))) {
            throw NumericError("log of non-positive value");
        }
        out->data[i] = std::log(a->data[i]);
    }
    finite_check(*out, "log");
    if (tape && a->requires_grad) {
        out->requires_grad = true;
        tape->record("log", {a}, out, [a, out] {
            if (out->grad.empty()) return;
            a->ensure_grad();
            for (std::size_t i = 0; i < a->numel(); ++i) a->grad[i] += out->grad[i] / a->data[i];
        });
    }
    return out;
}

// ---- reduce ----------------------------------------------------------------

namespace {

template <class T>
TensorPtr<T> reduce_impl(Tape<T>* tape, const TensorPtr<T>& a,
                         const std::vector<std::size_t>& axes, bool mean) {
    if (axes.empty()) throw ShapeError("reduce: empty axis set");
    std::vector<bool> reduced(a->rank(), false);
    for (std::size_t ax : axes) {
        if (ax >= a->rank()) {
            throw ShapeError("reduce: axis " + std::to_string(ax) + " out of range for " +
                             shape_str(a->shape));
        }
        reduced[ax] = true;
    }

    Shape out_shape;
    std::size_t count = 1;
    for (std::size_t i = 0; i < a->rank(); ++i) {
        if (reduced[i]) {
            count *= a->shape[i];
        } else {
            out_shape.push_back(a->shape[i]);
        }
    }
    if (out_shape.empty()) out_shape = {1};

    // Map each source element to its output slot by dropping reduced coords.
    const std::size_t rank = a->rank();
    std::vector<std::size_t> strides(rank, 1);
    for (std::size_t i = rank; i-- > 1;) strides[i - 1] = strides[i] * a->shape[i];

    std::vector<std::size_t> out_strides;
    {
        std::size_t s = 1;
        std::vector<std::size_t> tmp;
        for (std::size_t i = rank; i-- > 0;) {
            if (!reduced[i]) {
                tmp.push_back(s);
                s *= a->shape[i];
            } else {
                tmp.push_back(0);
            }
        }
        out_strides.assign(tmp.rbegin(), tmp.rend());
    }

    auto out_index = [strides, out_strides, shape = a->shape](std::size_t lin) {
        std::size_t idx = 0;
        for (std::size_t i = 0; i < shape.size(); ++i) {
            const std::size_t coord = (lin / strides[i]) % shape[i];
            idx += coord * out_strides[i];
        }
        return idx;
    };

    auto out = Tensor<T>::create(out_shape);
    for (std::size_t i = 0; i < a->numel(); ++i) out->data[out_index(i)] += a->data[i];
    const T inv = mean ? T(1) / static_cast<T>(count) : T(1);
    if (mean) {
        for (T& v : out->data) v *= inv;
    }
    finite_check(*out, mean ? "reduce_mean" : "reduce_sum");

    if (tape && a->requires_grad) {
        out->requires_grad = true;
        tape->record(mean ? "reduce_mean" : "reduce_sum", {a}, out, [a, out, out_index, inv] {
            if (out->grad.empty()) return;
            a->ensure_grad();
            for (std::size_t i = 0; i < a->numel(); ++i) {
                a->grad[i] += out->grad[out_index(i)] * inv;
            }
        });
    }
    return out;
}

}  // namespace

template <class T>
TensorPtr<T> reduce_sum(Tape<T>* tape, const TensorPtr<T>& a, const std::vector<std::size_t>& axes) {
    return reduce_impl(tape, a, axes, false);
}

template <class T>
TensorPtr<T> reduce_mean(Tape<T>* tape, const TensorPtr<T>& a, const std::vector<std::size_t>& axes) {
    return reduce_impl(tape, a, axes, true);
}

template <class T>
TensorPtr<T> reshape(Tape<T>* tape, const TensorPtr<T>& a, Shape new_shape) {
    validate_shape(new_shape);
    if (shape_numel(new_shape) != a->numel()) {
        throw ShapeError("reshape: " + shape_str(a->shape) + " -> " + shape_str(new_shape) +
                         " changes element count");
    }
    auto out = Tensor<T>::create(new_shape);
    out->data = a->data;
    if (tape && a->requires_grad) {
        out->requires_grad = true;
        tape->record("reshape", {a}, out, [a, out] {
            if (out->grad.empty()) return;
            a->ensure_grad();
            for (std::size_t i = 0; i < a->numel(); ++i) a->grad[i] += out->grad[i];
        });
    }
    return out;
}

// ---- instantiations --------------------------------------------------------

template struct Tensor<float>;
template struct Tensor<double>;
template class Tape<float>;
template class Tape<double>;

#define RAUNET_INSTANTIATE(T)                                                                  \
    template TensorPtr<T> add<T>(Tape<T>*, const TensorPtr<T>&, const TensorPtr<T>&);         \
    template TensorPtr<T> sub<T>(Tape<T>*, const TensorPtr<T>&, const TensorPtr<T>&);         \
    template TensorPtr<T> mul<T>(Tape<T>*, const TensorPtr<T>&, const TensorPtr<T>&);         \
    template TensorPtr<T> scale<T>(Tape<T>*, const TensorPtr<T>&, T);                         \
    template TensorPtr<T> log_elem<T>(Tape<T>*, const TensorPtr<T>&);                         \
    template TensorPtr<T> reduce_sum<T>(Tape<T>*, const TensorPtr<T>&,                        \
                                        const std::vector<std::size_t>&);                     \
    template TensorPtr<T> reduce_mean<T>(Tape<T>*, const TensorPtr<T>&,                       \
                                         const std::vector<std::size_t>&);                    \
    template TensorPtr<T> reshape<T>(Tape<T>*, const TensorPtr<T>&, Shape);

RAUNET_INSTANTIATE(float)
RAUNET_INSTANTIATE(double)
#undef RAUNET_INSTANTIATE

}  // namespace raunet
