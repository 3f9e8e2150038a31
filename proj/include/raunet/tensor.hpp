#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace raunet {

// Error taxonomy shared across the library. The CLI maps these onto exit
// codes, so new failure modes should reuse one of them.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

enum class Precision { f32, f64 };

// When enabled, every op scans its output for NaN/Inf and throws
// NumericError. Off by default; training checks the loss scalar instead.
void set_finite_checks(bool enabled);
bool finite_checks_enabled();

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major N-d array. Identity (for gradient accumulation) is the
// shared_ptr; the tape and all ops pass TensorPtr around.
template <class T>
struct Tensor {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until touched by backward
    bool requires_grad = false;

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }

    static std::shared_ptr<Tensor<T>> create(Shape shape, bool requires_grad = false);
    static std::shared_ptr<Tensor<T>> full(Shape shape, T value, bool requires_grad = false);
    static std::shared_ptr<Tensor<T>> from(Shape shape, std::vector<T> values,
                                           bool requires_grad = false);

    void ensure_grad();  // allocate zero-filled grad buffer if absent
    void zero_grad();

    // Offset helpers for the common 4-d [N,C,H,W] layout.
    std::size_t offset4(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        return ((n * shape[1] + c) * shape[2] + h) * shape[3] + w;
    }
};

template <class T>
using TensorPtr = std::shared_ptr<Tensor<T>>;

// Define-by-run tape. Ops append one node per recorded operation; backward
// replays them in reverse order exactly once, then the tape resets.
template <class T>
class Tape {
   public:
    struct Node {
        std::string op;
        std::vector<std::size_t> inputs;
        std::size_t output;
        std::function<void()> backward;
    };

    // Registers a tensor (idempotent) and returns its tape id.
    std::size_t track(const TensorPtr<T>& t);
    bool contains(const TensorPtr<T>& t) const;

    void record(std::string_view op, std::initializer_list<TensorPtr<T>> inputs,
                const TensorPtr<T>& output, std::function<void()> backward);

    // Seeds d(loss)/d(loss)=1 and propagates through all nodes in reverse
    // recorded order. The tape is cleared afterwards and can be reused.
    void backward(const TensorPtr<T>& loss);

    void clear();
    std::size_t num_nodes() const { return nodes_.size(); }

   private:
    std::vector<TensorPtr<T>> tracked_;
    std::unordered_map<const Tensor<T>*, std::size_t> index_;
    std::vector<Node> nodes_;
};

// Deterministic RNG (xoshiro256**) with explicit distributions so streams
// are reproducible independent of the standard library.
class Rng {
   public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();
    double uniform();                     // [0,1)
    double uniform(double lo, double hi);
    double normal();                      // Box-Muller, one value per call
    std::uint64_t below(std::uint64_t n); // [0,n), n > 0

    template <class Vec>
    void shuffle(Vec& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Stream derivation: mix(seed, tag) gives an independent child seed.
    static std::uint64_t mix(std::uint64_t a, std::uint64_t b);
    static std::uint64_t hash_str(std::string_view s);

   private:
    std::uint64_t state_[4];
};

// ---- recorded ops ----------------------------------------------------------
// All ops compute the forward result eagerly. When tape != nullptr and an
// input requires grad, a backward node is recorded. tape == nullptr means
// plain evaluation.

// Elementwise with limited broadcasting: b may have the same shape as a,
// or be [C] / [N,C,1,1] against a 4-d a=[N,C,H,W]. Gradients of a broadcast
// b are sum-reduced over the broadcast axes.
template <class T>
TensorPtr<T> add(Tape<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b);
template <class T>
TensorPtr<T> sub(Tape<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b);
template <class T>
TensorPtr<T> mul(Tape<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b);

template <class T>
TensorPtr<T> scale(Tape<T>* tape, const TensorPtr<T>& a, T factor);

// Natural log, elementwise. Inputs must be positive.
template <class T>
TensorPtr<T> log_elem(Tape<T>* tape, const TensorPtr<T>& a);

template <class T>
TensorPtr<T> reduce_sum(Tape<T>* tape, const TensorPtr<T>& a, const std::vector<std::size_t>& axes);
template <class T>
TensorPtr<T> reduce_mean(Tape<T>* tape, const TensorPtr<T>& a, const std::vector<std::size_t>& axes);

// Same data, new shape (numel preserved).
template <class T>
TensorPtr<T> reshape(Tape<T>* tape, const TensorPtr<T>& a, Shape new_shape);

}  // namespace raunet
