#pragma once

// Dense row-major tensors with reverse-mode automatic differentiation.
//
// The engine is deliberately small: values are flat arrays, every operation
// is a free function that records one node on the innermost live Tape, and
// backward() walks the tape in reverse creation order accumulating gradients
// additively. One tape per forward pass; parameters are leaf tensors that
// outlive tapes. Scalar type is a template parameter (float for training,
// double for gradient checking).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace obitonet {

// ---------------------------------------------------------------------------
// Errors

struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Shapes

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    out += ")";
    return out;
}

inline std::vector<int64_t> row_strides(const Shape& s) {
    std::vector<int64_t> st(s.size(), 1);
    for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i)
        st[i] = st[i + 1] * s[i + 1];
    return st;
}

// Prints a scalar with enough digits to round-trip through text.
template <typename T>
std::string fmt_scalar(T v) {
    std::ostringstream os;
    os.precision(std::numeric_limits<T>::max_digits10);
    os << v;
    return os.str();
}

// ---------------------------------------------------------------------------
// Deterministic RNG
//
// std::mt19937_64 with hand-rolled uniform/normal draws so that streams do
// not depend on the standard library's distribution implementations.

class Rng {
  public:
    explicit Rng(uint64_t seed = 0) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // [0,1)
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller; draws two uniforms per call.
    double normal(double mean = 0.0, double stddev = 1.0) {
        double u1 = static_cast<double>((gen_() >> 11) + 1) * 0x1.0p-53;  // (0,1]
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        return mean + stddev * r * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    // [0,n)
    int64_t below(int64_t n) { return static_cast<int64_t>(gen_() % static_cast<uint64_t>(n)); }

    template <typename V>
    void shuffle(V& v) {
        for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
            int64_t j = below(i + 1);
            std::swap(v[i], v[j]);
        }
    }

    std::string save_state() const {
        std::ostringstream os;
        os << gen_;
        return os.str();
    }

    void load_state(const std::string& s) {
        std::istringstream is(s);
        is >> gen_;
        if (is.fail()) throw ParseError("rng: malformed state string");
    }

  private:
    std::mt19937_64 gen_;
};

inline uint64_t fnv1a64(const std::string& s) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline uint64_t mix_seed(uint64_t a, uint64_t b) {
    uint64_t x = a + 0x9e3779b97f4a7c15ull + (b << 6) + (b >> 2);
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ull;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebull;
    x ^= x >> 31;
    return x;
}

// ---------------------------------------------------------------------------
// Debug switches

namespace debug {
// Throw NumericError as soon as an op produces a non-finite value.
inline bool check_finite = false;
// Fault injection for the selftest harness: flips the sign of the relu
// backward rule so gradient checks must fail.
inline bool flip_relu_backward = false;
}  // namespace debug

// ---------------------------------------------------------------------------
// Tape / nodes / tensors

template <typename T>
class Tape;

template <typename T>
struct TensorNode {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // allocated lazily, same length as value
    bool requires_grad = false;
    const char* op = "leaf";
    Tape<T>* tape = nullptr;
    std::vector<std::shared_ptr<TensorNode<T>>> parents;
    std::function<void(TensorNode<T>&)> backward;

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    }
    bool has_grad() const { return grad.size() == value.size(); }
};

template <typename T>
class Tape {
  public:
    Tape() : prev_(current_slot()) { current_slot() = this; }
    ~Tape() { current_slot() = prev_; }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* current() { return current_slot(); }

    static Tape* swap_current(Tape* t) {
        Tape* old = current_slot();
        current_slot() = t;
        return old;
    }

    void record(std::shared_ptr<TensorNode<T>> n) { nodes_.push_back(std::move(n)); }

    size_t size() const { return nodes_.size(); }

    // Seeds d(loss)/d(loss) = 1 and walks nodes in reverse creation order.
    // Creation order is topological by construction, so every node is
    // visited exactly once and all gradient contributions are summed.
    void backward(std::shared_ptr<TensorNode<T>> loss) {
        if (!loss) throw ContractError("backward: undefined loss tensor");
        if (loss->value.size() != 1)
            throw ContractError("backward: loss must be scalar, got shape " +
                                shape_str(loss->shape));
        if (loss->tape != this)
            throw ContractError("backward: loss was not recorded on this tape");
        loss->ensure_grad();
        loss->grad[0] = T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            TensorNode<T>& n = **it;
            if (n.requires_grad && n.backward && n.has_grad()) n.backward(n);
        }
    }

    // First node (forward order) holding a non-finite value, for diagnostics.
    // Returns empty string when everything is finite.
    std::string first_nonfinite() const {
        for (const auto& n : nodes_) {
            for (T v : n->value) {
                if (!std::isfinite(static_cast<double>(v)))
                    return std::string(n->op) + " " + shape_str(n->shape);
            }
        }
        return {};
    }

  private:
    static Tape*& current_slot() {
        thread_local Tape* cur = nullptr;
        return cur;
    }
    std::vector<std::shared_ptr<TensorNode<T>>> nodes_;
    Tape* prev_;
};

// Suspends recording for the lifetime of the guard (value-only evaluation).
template <typename T>
class TapePause {
  public:
    TapePause() : saved_(Tape<T>::swap_current(nullptr)) {}
    ~TapePause() { Tape<T>::swap_current(saved_); }
    TapePause(const TapePause&) = delete;
    TapePause& operator=(const TapePause&) = delete;

  private:
    Tape<T>* saved_;
};

template <typename T>
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return filled(std::move(shape), T(0), requires_grad);
    }

    static Tensor filled(Shape shape, T v, bool requires_grad = false) {
        auto n = std::make_shared<TensorNode<T>>();
        n->shape = std::move(shape);
        n->value.assign(static_cast<size_t>(shape_numel(n->shape)), v);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor from(Shape shape, std::vector<T> data, bool requires_grad = false) {
        if (shape_numel(shape) != static_cast<int64_t>(data.size()))
            throw DimensionError("tensor: shape " + shape_str(shape) + " does not match " +
                                 std::to_string(data.size()) + " values");
        auto n = std::make_shared<TensorNode<T>>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor scalar(T v) { return from({1}, {v}); }

    bool defined() const { return static_cast<bool>(n_); }
    const Shape& shape() const { return n_->shape; }
    int rank() const { return static_cast<int>(n_->shape.size()); }
    int64_t dim(int i) const { return n_->shape[static_cast<size_t>(i)]; }
    int64_t size() const { return static_cast<int64_t>(n_->value.size()); }
    bool requires_grad() const { return n_->requires_grad; }
    void set_requires_grad(bool rg) { n_->requires_grad = rg; }
    const char* op() const { return n_->op; }

    const std::vector<T>& data() const { return n_->value; }

    // In-place access for parameter updates and test setup. Must not be used
    // on intermediates recorded on a live tape.
    std::vector<T>& mutable_data() { return n_->value; }

    const std::vector<T>& grad() const {
        n_->ensure_grad();
        return n_->grad;
    }

    void zero_grad() {
        n_->ensure_grad();
        std::fill(n_->grad.begin(), n_->grad.end(), T(0));
    }

    T item() const {
        if (size() != 1)
            throw ContractError("item: tensor is not scalar, shape " + shape_str(shape()));
        return n_->value[0];
    }

    T at(std::initializer_list<int64_t> idx) const {
        auto st = row_strides(n_->shape);
        int64_t flat = 0;
        size_t i = 0;
        for (int64_t v : idx) flat += v * st[i++];
        return n_->value[static_cast<size_t>(flat)];
    }

    std::shared_ptr<TensorNode<T>> node() const { return n_; }

    explicit Tensor(std::shared_ptr<TensorNode<T>> n) : n_(std::move(n)) {}

  private:
    std::shared_ptr<TensorNode<T>> n_;
};

namespace detail {

// Allocates the result node for an op. The node is recorded on the current
// tape whenever one is live (so NaN scans see every forward value); parents
// and a backward rule are attached only when a parent requires gradient.
template <typename T>
std::shared_ptr<TensorNode<T>> new_node(Shape shape, const char* op,
                                        std::vector<std::shared_ptr<TensorNode<T>>> parents) {
    auto n = std::make_shared<TensorNode<T>>();
    n->shape = std::move(shape);
    n->value.assign(static_cast<size_t>(shape_numel(n->shape)), T(0));
    n->op = op;
    Tape<T>* tape = Tape<T>::current();
    if (tape) {
        bool rg = false;
        for (const auto& p : parents)
            if (p->requires_grad) rg = true;
        if (rg) {
            n->requires_grad = true;
            n->parents = std::move(parents);
            n->tape = tape;
        }
        tape->record(n);
    }
    return n;
}

template <typename T>
void finite_check(const TensorNode<T>& n) {
    if (!debug::check_finite) return;
    for (T v : n.value) {
        if (!std::isfinite(static_cast<double>(v)))
            throw NumericError(std::string("non-finite value produced by op '") + n.op + "' " +
                               shape_str(n.shape));
    }
}

// C[m,n] += A[m,k] * B[k,n]; deterministic k-ascending accumulation.
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t kk = 0; kk < k; ++kk) {
            T aik = a[i * k + kk];
            const T* brow = b + kk * n;
            T* crow = c + i * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
        }
    }
}

// C[m,k] += A[m,n] * B[k,n]^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, int64_t m, int64_t n, int64_t k) {
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t kk = 0; kk < k; ++kk) {
            T acc = T(0);
            const T* arow = a + i * n;
            const T* brow = b + kk * n;
            for (int64_t j = 0; j < n; ++j) acc += arow[j] * brow[j];
            c[i * k + kk] += acc;
        }
    }
}

// C[k,n] += A[m,k]^T * B[m,n]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t kk = 0; kk < k; ++kk) {
            T aik = a[i * k + kk];
            const T* brow = b + i * n;
            T* crow = c + kk * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
        }
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops. Binary ops require equal shapes or a scalar on one side.

namespace detail {

enum class BinKind { EqualShape, ScalarLhs, ScalarRhs };

template <typename T>
BinKind binary_kind(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() == b.shape()) return BinKind::EqualShape;
    if (a.size() == 1) return BinKind::ScalarLhs;
    if (b.size() == 1) return BinKind::ScalarRhs;
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " are neither equal nor scalar-broadcastable");
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    auto kind = detail::binary_kind(a, b, "add");
    const Shape& out_shape = (kind == detail::BinKind::ScalarLhs) ? b.shape() : a.shape();
    auto n = detail::new_node<T>(out_shape, "add", {a.node(), b.node()});
    const auto& av = a.data();
    const auto& bv = b.data();
    for (size_t i = 0; i < n->value.size(); ++i) {
        T x = (kind == detail::BinKind::ScalarLhs) ? av[0] : av[i];
        T y = (kind == detail::BinKind::ScalarRhs) ? bv[0] : bv[i];
        n->value[i] = x + y;
    }
    if (n->requires_grad) {
        n->backward = [kind](TensorNode<T>& self) {
            auto& pa = *self.parents[0];
            auto& pb = *self.parents[1];
            if (pa.requires_grad) {
                pa.ensure_grad();
                if (kind == detail::BinKind::ScalarLhs) {
                    for (T g : self.grad) pa.grad[0] += g;
                } else {
                    for (size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
                }
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                if (kind == detail::BinKind::ScalarRhs) {
                    for (T g : self.grad) pb.grad[0] += g;
                } else {
                    for (size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] += self.grad[i];
                }
            }
        };
    }
    detail::finite_check(*n);
    return Tensor<T>(n);
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    auto kind = detail::binary_kind(a, b, "sub");
    const Shape& out_shape = (kind == detail::BinKind::ScalarLhs) ? b.shape() : a.shape();
    auto n = detail::new_node<T>(out_shape, "sub", {a.node(), b.node()});
    const auto& av = a.data();
    const auto& bv = b.data();
    for (size_t i = 0; i < n->value.size(); ++i) {
        T x = (kind == detail::BinKind::ScalarLhs) ? av[0] : av[i];
        T y = (kind == detail::BinKind::ScalarRhs) ? bv[0] : bv[i];
        n->value[i] = x - y;
    }
    if (n->requires_grad) {
        n->backward = [kind](TensorNode<T>& self) {
            auto& pa = *self.parents[0];
            auto& pb = *self.parents[1];
            if (pa.requires_grad) {
                pa.ensure_grad();
                if (kind == detail::BinKind::ScalarLhs) {
                    for (T g : self.grad) pa.grad[0] += g;
                } else {
                    for (size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
                }
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                if (kind == detail::BinKind::ScalarRhs) {
                    for (T g : self.grad) pb.grad[0] -= g;
                } else {
                    for (size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] -= self.grad[i];
                }
            }
        };
    }
    detail::finite_check(*n);
    return Tensor<T>(n);
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    auto kind = detail::binary_kind(a, b, "mul");
    const Shape& out_shape = (kind == detail::BinKind::ScalarLhs) ? b.shape() : a.shape();
    auto n = detail::new_node<T>(out_shape, "mul", {a.node(), b.node()});
    const auto& av = a.data();
    const auto& bv = b.data();
    for (size_t i = 0; i < n->value.size(); ++i) {
        T x = (kind == detail::BinKind::ScalarLhs) ? av[0] : av[i];
        T y = (kind == detail::BinKind::ScalarRhs) ? bv[0] : bv[i];
        n->value[i] = x * y;
    }
    if (n->requires_grad) {
        n->backward = [kind](TensorNode<T>& self) {
            auto& pa = *self.parents[0];
            auto& pb = *self.parents[1];
            const auto& av2 = pa.value;
            const auto& bv2 = pb.value;
            if (pa.requires_grad) {
                pa.ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) {
                    T y = (kind == detail::BinKind::ScalarRhs) ? bv2[0] : bv2[i];
                    size_t ai = (kind == detail::BinKind::ScalarLhs) ? 0 : i;
                    pa.grad[ai] += self.grad[i] * y;
                }
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) {
                    T x = (kind == detail::BinKind::ScalarLhs) ? av2[0] : av2[i];
                    size_t bi = (kind == detail::BinKind::ScalarRhs) ? 0 : i;
                    pb.grad[bi] += self.grad[i] * x;
                }
            }
        };
    }
    detail::finite_check(*n);
    return Tensor<T>(n);
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, double c) {
    auto n = detail::new_node<T>(a.shape(), "scale", {a.node()});
    const T tc = static_cast<T>(c);
    const auto& av = a.data();
    for (size_t i = 0; i < n->value.size(); ++i) n->value[i] = av[i] * tc;
    if (n->requires_grad) {
        n->backward = [tc](TensorNode<T>& self) {
            auto& pa = *self.parents[0];
            if (!pa.requires_grad) return;
            pa.ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i] * tc;
        };
    }
    detail::finite_check(*n);
    return Tensor<T>(n);
}

// x[..., C] + b[C], broadcast over all leading dims.
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& b) {
    if (b.rank() != 1 || x.rank() < 1 || x.dim(x.rank() - 1) != b.dim(0))
        throw DimensionError("add_bias: x " + shape_str(x.shape()) + " vs bias " +
                             shape_str(b.shape()));
    auto n = detail::new_node<T>(x.shape(), "add_bias", {x.node(), b.node()});
    const int64_t c = b.dim(0);
    const auto& xv = x.data();
    const auto& bv = b.data();
    for (size_t i = 0; i < n->value.size(); ++i)
        n->value[i] = xv[i] + bv[i % static_cast<size_t>(c)];
    if (n->requires_grad) {
        n->backward = [c](TensorNode<T>& self) {
            auto& px = *self.parents[0];
            auto& pb = *self.parents[1];
            if (px.requires_grad) {
                px.ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) px.grad[i] += self.grad[i];
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i)
                    pb.grad[i % static_cast<size_t>(c)] += self.grad[i];
            }
        };
    }
    detail::finite_check(*n);
    return Tensor<T>(n);
}

// x[B, G, C] + t[G, C], broadcast over the batch axis.
template <typename T>
Tensor<T> add_table(const Tensor<T>& x, const Tensor<T>& t) {
    if (x.rank() != 3 || t.rank() != 2 || x.dim(1) != t.dim(0) || x.dim(2) != t.dim(1))
        throw DimensionError("add_table: x " + shape_str(x.shape()) + " vs table " +
                             shape_str(t.shape()));
    auto n = detail::new_node<T>(x.shape(), "add_table", {x.node(), t.node()});
    const size_t tn = t.data().size();
    const auto& xv = x.data();
    const auto& tv = t.data();
    for (size_t i = 0; i < n->value.size(); ++i) n->value[i] = xv[i] + tv[i % tn];
    if (n->requires_grad) {
        n->backward = [tn](TensorNode<T>& self) {
            auto& px = *self.parents[0];
            auto& pt = *self.parents[1];
            if (px.requires_grad) {
                px.ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) px.grad[i] += self.grad[i];
            }
            if (pt.requires_grad) {
                pt.ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) pt.grad[i % tn] += self.grad[i];
            }
        };
    }
    detail::finite_check(*n);
    return Tensor<T>(n);
}

// v[C] -> [B, G, C]
template <typename T>
Tensor<T> expand_vec(const Tensor<T>& v, int64_t b, int64_t g) {
    if (v.rank() != 1) throw DimensionError("expand_vec: expected rank-1, got " + shape_str(v.shape()));
    const int64_t c = v.dim(0);
    auto n = detail::new_node<T>({b, g, c}, "expand_vec", {v.node()});
    const auto& vv = v.data();
    for (size_t i = 0; i < n->value.size(); ++i) n->value[i] = vv[i % static_cast<size_t>(c)];
    if (n->requires_grad) {
        n->backward = [c](TensorNode<T>& self) {
            auto& pv = *self.parents[0];
            if (!pv.requires_grad) return;
            pv.ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i)
                pv.grad[i % static_cast<size_t>(c)] += self.grad[i];
        };
    }
    detail::finite_check(*n);
    return Tensor<T>(n);
}

// ---------------------------------------------------------------------------
// matmul with leading-batch broadcasting: [batch..., m, k] x [batch..., k, n],
// where one side may omit its batch dims entirely.

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() < 2 || b.rank() < 2)
        throw DimensionError("matmul: both operands need rank >= 2, got " + shape_str(a.shape()) +
                             " and " + shape_str(b.shape()));
    const int64_t m = a.dim(a.rank() - 2), ka = a.dim(a.rank() - 1);
    const int64_t kb = b.dim(b.rank() - 2), nn = b.dim(b.rank() - 1);
    if (ka != kb)
        throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                             " x " + shape_str(b.shape()));
    Shape abatch(a.shape().begin(), a.shape().end() - 2);
    Shape bbatch(b.shape().begin(), b.shape().end() - 2);
    bool bc_a = false, bc_b = false;
    Shape batch;
    if (abatch == bbatch) {
        batch = abatch;
    } else if (abatch.empty()) {
        batch = bbatch;
        bc_a = true;
    } else if (bbatch.empty()) {
        batch = abatch;
        bc_b = true;
    } else {
        throw DimensionError("matmul: batch dimensions disagree, " + shape_str(a.shape()) +
                             " x " + shape_str(b.shape()));
    }
    Shape out_shape = batch;
    out_shape.push_back(m);
    out_shape.push_back(nn);
    auto n = detail::new_node<T>(out_shape, "matmul", {a.node(), b.node()});
    const int64_t nbatch = shape_numel(batch);
    const T* pa = a.data().data();
    const T* pb = b.data().data();
    T* pc = n->value.data();
    for (int64_t bi = 0; bi < nbatch; ++bi) {
        detail::gemm_nn(pa + (bc_a ? 0 : bi * m * ka), pb + (bc_b ? 0 : bi * ka * nn),
                        pc + bi * m * nn, m, ka, nn);
    }
    if (n->requires_grad) {
        n->backward = [m, ka, nn, nbatch, bc_a, bc_b](TensorNode<T>& self) {
            auto& na = *self.parents[0];
            auto& nb = *self.parents[1];
            const T* g = self.grad.data();
            if (na.requires_grad) {
                na.ensure_grad();
                for (int64_t bi = 0; bi < nbatch; ++bi)
                    detail::gemm_nt(g + bi * m * nn, nb.value.data() + (bc_b ? 0 : bi * ka * nn),
                                    na.grad.data() + (bc_a ? 0 : bi * m * ka), m, nn, ka);
            }
            if (nb.requires_grad) {
                nb.ensure_grad();
                for (int64_t bi = 0; bi < nbatch; ++bi)
                    detail::gemm_tn(na.value.data() + (bc_a ? 0 : bi * m * ka), g + bi * m * nn,
                                    nb.grad.data() + (bc_b ? 0 : bi * ka * nn), m, ka, nn);
            }
        };
    }
    detail::finite_check(*n);
    return Tensor<T>(n);
}

// ---------------------------------------------------------------------------
// Layout ops

template <typename T>
Tensor<T> transpose(const Tensor<T>& x, int d0, int d1) {
    const int r = x.rank();
    if (d0 < 0) d0 += r;
    if (d1 < 0) d1 += r;
    if (d0 < 0 || d0 >= r || d1 < 0 || d1 >= r)
        throw DimensionError("transpose: axes out of range for " + shape_str(x.shape()));
    Shape out_shape = x.shape();
    std::swap(out_shape[static_cast<size_t>(d0)], out_shape[static_cast<size_t>(d1)]);
    auto n = detail::new_node<T>(out_shape, "transpose", {x.node()});
    auto in_st = row_strides(x.shape());
    auto out_st = row_strides(out_shape);
    std::swap(in_st[static_cast<size_t>(d0)], in_st[static_cast<size_t>(d1)]);  // in-index per out-coord
    const int64_t total = shape_numel(out_shape);
    const auto& xv = x.data();
    std::vector<int64_t> src(static_cast<size_t>(total));
    for (int64_t o = 0; o < total; ++o) {
        int64_t rem = o, s = 0;
        for (int i = 0; i < r; ++i) {
            int64_t coord = rem / out_st[static_cast<size_t>(i)];
            rem %= out_st[static_cast<size_t>(i)];
            s += coord * in_st[static_cast<size_t>(i)];
        }
        src[static_cast<size_t>(o)] = s;
        n->value[static_cast<size_t>(o)] = xv[static_cast<size_t>(s)];
    }
    if (n->requires_grad) {
        n->backward = [src = std::move(src)](TensorNode<T>& self) {
            auto& px = *self.parents[0];
            if (!px.requires_grad) return;
            px.ensure_grad();
            for (size_t o = 0; o < self.grad.size(); ++o)
                px.grad[static_cast<size_t>(src[o])] += self.grad[o];
        };
    }
    detail::finite_check(*n);
    return Tensor<T>(n);
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape out_shape) {
    if (shape_numel(out_shape) != x.size())
        throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                             shape_str(out_shape));
    auto n = detail::new_node<T>(std::move(out_shape), "reshape", {x.node()});
    n->value = x.data();
    if (n->requires_grad) {
        n->backward = [](TensorNode<T>& self) {
            auto& px = *self.parents[0];
            if (!px.requires_grad) return;
            px.ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) px.grad[i] += self.grad[i];
        };
    }
    return Tensor<T>(n);
}

// [B, Ga, C] ++ [B, Gb, C] along axis 1.
template <typename T>
Tensor<T> concat_rows(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2))
        throw DimensionError("concat_rows: shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    const int64_t bb = a.dim(0), ga = a.dim(1), gb = b.dim(1), c = a.dim(2);
    auto n = detail::new_node<T>({bb, ga + gb, c}, "concat_rows", {a.node(), b.node()});
    const auto& av = a.data();
    const auto& bv = b.data();
    for (int64_t i = 0; i < bb; ++i) {
        std::copy(av.begin() + i * ga * c, av.begin() + (i + 1) * ga * c,
                  n->value.begin() + i * (ga + gb) * c);
        std::copy(bv.begin() + i * gb * c, bv.begin() + (i + 1) * gb * c,
                  n->value.begin() + i * (ga + gb) * c + ga * c);
    }
    if (n->requires_grad) {
        n->backward = [bb, ga, gb, c](TensorNode<T>& self) {
            auto& pa = *self.parents[0];
            auto& pb = *self.parents[1];
            if (pa.requires_grad) {
                pa.ensure_grad();
                for (int64_t i = 0; i < bb; ++i)
                    for (int64_t j = 0; j < ga * c; ++j)
                        pa.grad[static_cast<size_t>(i * ga * c + j)] +=
                            self.grad[static_cast<size_t>(i * (ga + gb) * c + j)];
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                for (int64_t i = 0; i < bb; ++i)
                    for (int64_t j = 0; j < gb * c; ++j)
                        pb.grad[static_cast<size_t>(i * gb * c + j)] +=
                            self.grad[static_cast<size_t>(i * (ga + gb) * c + ga * c + j)];
            }
        };
    }
    detail::finite_check(*n);
    return Tensor<T>(n);
}

// out[b, i, :] = x[b, rows[b][i], :]; per-item row selection/permutation.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<std::vector<int64_t>>& rows) {
    if (x.rank() != 3) throw DimensionError("gather_rows: expected rank-3, got " + shape_str(x.shape()));
    const int64_t bb = x.dim(0), g = x.dim(1), c = x.dim(2);
    if (static_cast<int64_t>(rows.size()) != bb)
        throw DimensionError("gather_rows: need one index list per batch item");
    const int64_t k = static_cast<int64_t>(rows[0].size());
    for (const auto& r : rows) {
        if (static_cast<int64_t>(r.size()) != k)
            throw DimensionError("gather_rows: ragged index lists");
        for (int64_t v : r)
            if (v < 0 || v >= g) throw DimensionError("gather_rows: row index out of range");
    }
    auto n = detail::new_node<T>({bb, k, c}, "gather_rows", {x.node()});
    const auto& xv = x.data();
    for (int64_t i = 0; i < bb; ++i)
        for (int64_t j = 0; j < k; ++j)
            std::copy(xv.begin() + (i * g + rows[static_cast<size_t>(i)][static_cast<size_t>(j)]) * c,
                      xv.begin() + (i * g + rows[static_cast<size_t>(i)][static_cast<size_t>(j)] + 1) * c,
                      n->value.begin() + (i * k + j) * c);
    if (n->requires_grad) {
        n->backward = [rows, g, k, c](TensorNode<T>& self) {
            auto& px = *self.parents[0];
            if (!px.requires_grad) return;
            px.ensure_grad();
            const int64_t bb2 = self.shape[0];
            for (int64_t i = 0; i < bb2; ++i)
                for (int64_t j = 0; j < k; ++j) {
                    int64_t srow = rows[static_cast<size_t>(i)][static_cast<size_t>(j)];
                    for (int64_t cc = 0; cc < c; ++cc)
                        px.grad[static_cast<size_t>((i * g + srow) * c + cc)] +=
                            self.grad[static_cast<size_t>((i * k + j) * c + cc)];
                }
        };
    }
    detail::finite_check(*n);
    return Tensor<T>(n);
}

// ---------------------------------------------------------------------------
// Nonlinearities and normalization

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    auto n = detail::new_node<T>(x.shape(), "relu", {x.node()});
    const auto& xv = x.data();
    for (size_t i = 0; i < n->value.size(); ++i) n->value[i] = xv[i] > T(0) ? xv[i] : T(0);
    if (n->requires_grad) {
        n->backward = [](TensorNode<T>& self) {
            auto& px = *self.parents[0];
            if (!px.requires_grad) return;
            px.ensure_grad();
            const T sign = debug::flip_relu_backward ? T(-1) : T(1);
            for (size_t i = 0; i < self.grad.size(); ++i)
                if (px.value[i] > T(0)) px.grad[i] += sign * self.grad[i];
        };
    }
    detail::finite_check(*n);
    return Tensor<T>(n);
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
    auto n = detail::new_node<T>(x.shape(), "gelu", {x.node()});
    const auto& xv = x.data();
    for (size_t i = 0; i < n->value.size(); ++i) {
        double v = static_cast<double>(xv[i]);
        n->value[i] = static_cast<T>(v * 0.5 * (1.0 + std::erf(v / 1.4142135623730951)));
    }
    if (n->requires_grad) {
        n->backward = [](TensorNode<T>& self) {
            auto& px = *self.parents[0];
            if (!px.requires_grad) return;
            px.ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) {
                double v = static_cast<double>(px.value[i]);
                double phi = 0.5 * (1.0 + std::erf(v / 1.4142135623730951));
                double pdf = std::exp(-0.5 * v * v) / 2.5066282746310002;  // sqrt(2*pi)
                px.grad[i] += self.grad[i] * static_cast<T>(phi + v * pdf);
            }
        };
    }
    detail::finite_check(*n);
    return Tensor<T>(n);
}

// Stabilized softmax along `axis`; rows sum to 1 along the reduced axis.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
    const int r = x.rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r)
        throw DimensionError("softmax: axis out of range for " + shape_str(x.shape()));
    auto n = detail::new_node<T>(x.shape(), "softmax", {x.node()});
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= x.dim(i);
    const int64_t len = x.dim(axis);
    for (int i = axis + 1; i < r; ++i) inner *= x.dim(i);
    const auto& xv = x.data();
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t in = 0; in < inner; ++in) {
            const int64_t base = o * len * inner + in;
            T mx = xv[static_cast<size_t>(base)];
            for (int64_t l = 1; l < len; ++l)
                mx = std::max(mx, xv[static_cast<size_t>(base + l * inner)]);
            T sum = T(0);
            for (int64_t l = 0; l < len; ++l) {
                T e = std::exp(xv[static_cast<size_t>(base + l * inner)] - mx);
                n->value[static_cast<size_t>(base + l * inner)] = e;
                sum += e;
            }
            for (int64_t l = 0; l < len; ++l) n->value[static_cast<size_t>(base + l * inner)] /= sum;
        }
    }
    if (n->requires_grad) {
        n->backward = [outer, len, inner](TensorNode<T>& self) {
            auto& px = *self.parents[0];
            if (!px.requires_grad) return;
            px.ensure_grad();
            for (int64_t o = 0; o < outer; ++o) {
                for (int64_t in = 0; in < inner; ++in) {
                    const int64_t base = o * len * inner + in;
                    T dot = T(0);
                    for (int64_t l = 0; l < len; ++l) {
                        size_t idx = static_cast<size_t>(base + l * inner);
                        dot += self.grad[idx] * self.value[idx];
                    }
                    for (int64_t l = 0; l < len; ++l) {
                        size_t idx = static_cast<size_t>(base + l * inner);
                        px.grad[idx] += self.value[idx] * (self.grad[idx] - dot);
                    }
                }
            }
        };
    }
    detail::finite_check(*n);
    return Tensor<T>(n);
}

// Per-row normalization over the last dimension, then affine (gamma, beta).
template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                    double eps = 1e-5) {
    const int r = x.rank();
    const int64_t c = x.dim(r - 1);
    if (gamma.rank() != 1 || beta.rank() != 1 || gamma.dim(0) != c || beta.dim(0) != c)
        throw DimensionError("layernorm: x " + shape_str(x.shape()) + " vs gamma " +
                             shape_str(gamma.shape()) + " / beta " + shape_str(beta.shape()));
    auto n = detail::new_node<T>(x.shape(), "layernorm", {x.node(), gamma.node(), beta.node()});
    const int64_t rows = x.size() / c;
    const auto& xv = x.data();
    const auto& gv = gamma.data();
    const auto& bv = beta.data();
    std::vector<T> xhat(static_cast<size_t>(x.size()));
    std::vector<T> inv_sigma(static_cast<size_t>(rows));
    for (int64_t row = 0; row < rows; ++row) {
        const T* xp = xv.data() + row * c;
        T mean = T(0);
        for (int64_t i = 0; i < c; ++i) mean += xp[i];
        mean /= static_cast<T>(c);
        T var = T(0);
        for (int64_t i = 0; i < c; ++i) {
            T d = xp[i] - mean;
            var += d * d;
        }
        var /= static_cast<T>(c);
        T inv = T(1) / std::sqrt(var + static_cast<T>(eps));
        inv_sigma[static_cast<size_t>(row)] = inv;
        for (int64_t i = 0; i < c; ++i) {
            T xh = (xp[i] - mean) * inv;
            xhat[static_cast<size_t>(row * c + i)] = xh;
            n->value[static_cast<size_t>(row * c + i)] = gv[static_cast<size_t>(i)] * xh +
                                                         bv[static_cast<size_t>(i)];
        }
    }
    if (n->requires_grad) {
        n->backward = [rows, c, xhat = std::move(xhat),
                       inv_sigma = std::move(inv_sigma)](TensorNode<T>& self) {
            auto& px = *self.parents[0];
            auto& pg = *self.parents[1];
            auto& pb = *self.parents[2];
            const auto& gv2 = pg.value;
            if (pg.requires_grad) pg.ensure_grad();
            if (pb.requires_grad) pb.ensure_grad();
            if (px.requires_grad) px.ensure_grad();
            for (int64_t row = 0; row < rows; ++row) {
                const T* gy = self.grad.data() + row * c;
                const T* xh = xhat.data() + row * c;
                if (pg.requires_grad)
                    for (int64_t i = 0; i < c; ++i) pg.grad[static_cast<size_t>(i)] += gy[i] * xh[i];
                if (pb.requires_grad)
                    for (int64_t i = 0; i < c; ++i) pb.grad[static_cast<size_t>(i)] += gy[i];
                if (px.requires_grad) {
                    T mean_g = T(0), mean_gx = T(0);
                    for (int64_t i = 0; i < c; ++i) {
                        T gg = gy[i] * gv2[static_cast<size_t>(i)];
                        mean_g += gg;
                        mean_gx += gg * xh[i];
                    }
                    mean_g /= static_cast<T>(c);
                    mean_gx /= static_cast<T>(c);
                    const T inv = inv_sigma[static_cast<size_t>(row)];
                    for (int64_t i = 0; i < c; ++i) {
                        T gg = gy[i] * gv2[static_cast<size_t>(i)];
                        px.grad[static_cast<size_t>(row * c + i)] +=
                            inv * (gg - mean_g - xh[i] * mean_gx);
                    }
                }
            }
        };
    }
    detail::finite_check(*n);
    return Tensor<T>(n);
}

// Max-reduction over one axis (axis removed from the shape). Ties resolve to
// the lowest index so backward routing is deterministic.
template <typename T>
Tensor<T> max_axis(const Tensor<T>& x, int axis) {
    const int r = x.rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r)
        throw DimensionError("max_axis: axis out of range for " + shape_str(x.shape()));
    Shape out_shape;
    for (int i = 0; i < r; ++i)
        if (i != axis) out_shape.push_back(x.dim(i));
    if (out_shape.empty()) out_shape.push_back(1);
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= x.dim(i);
    const int64_t len = x.dim(axis);
    for (int i = axis + 1; i < r; ++i) inner *= x.dim(i);
    auto n = detail::new_node<T>(out_shape, "max_axis", {x.node()});
    const auto& xv = x.data();
    std::vector<int64_t> arg(static_cast<size_t>(outer * inner));
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t in = 0; in < inner; ++in) {
            int64_t best = o * len * inner + in;
            T bv = xv[static_cast<size_t>(best)];
            for (int64_t l = 1; l < len; ++l) {
                int64_t idx = o * len * inner + l * inner + in;
                if (xv[static_cast<size_t>(idx)] > bv) {
                    bv = xv[static_cast<size_t>(idx)];
                    best = idx;
                }
            }
            n->value[static_cast<size_t>(o * inner + in)] = bv;
            arg[static_cast<size_t>(o * inner + in)] = best;
        }
    }
    if (n->requires_grad) {
        n->backward = [arg = std::move(arg)](TensorNode<T>& self) {
            auto& px = *self.parents[0];
            if (!px.requires_grad) return;
            px.ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i)
                px.grad[static_cast<size_t>(arg[i])] += self.grad[i];
        };
    }
    detail::finite_check(*n);
    return Tensor<T>(n);
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
    auto n = detail::new_node<T>({1}, "sum_all", {x.node()});
    T acc = T(0);
    for (T v : x.data()) acc += v;
    n->value[0] = acc;
    if (n->requires_grad) {
        n->backward = [](TensorNode<T>& self) {
            auto& px = *self.parents[0];
            if (!px.requires_grad) return;
            px.ensure_grad();
            for (size_t i = 0; i < px.grad.size(); ++i) px.grad[i] += self.grad[0];
        };
    }
    detail::finite_check(*n);
    return Tensor<T>(n);
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
    return scale(sum_all(x), 1.0 / static_cast<double>(x.size()));
}

// ---------------------------------------------------------------------------
// Parameter registry: named tensors in a stable registration order, which
// fixes initialization draws, optimizer iteration, and checkpoint layout.

template <typename T>
class ParamStore {
  public:
    Tensor<T>& create(const std::string& name, Shape shape) {
        if (index_.count(name)) throw ContractError("param '" + name + "' already registered");
        index_[name] = items_.size();
        items_.emplace_back(name, Tensor<T>::zeros(std::move(shape), /*requires_grad=*/true));
        return items_.back().second;
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    Tensor<T>& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ContractError("unknown param '" + name + "'");
        return items_[it->second].second;
    }
    const Tensor<T>& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ContractError("unknown param '" + name + "'");
        return items_[it->second].second;
    }

    size_t count() const { return items_.size(); }
    const std::string& name(size_t i) const { return items_[i].first; }
    Tensor<T>& tensor(size_t i) { return items_[i].second; }
    const Tensor<T>& tensor(size_t i) const { return items_[i].second; }

    void zero_grads() {
        for (auto& [name, t] : items_) t.zero_grad();
    }

    int64_t total_scalars() const {
        int64_t n = 0;
        for (const auto& [name, t] : items_) n += t.size();
        return n;
    }

  private:
    std::vector<std::pair<std::string, Tensor<T>>> items_;
    std::unordered_map<std::string, size_t> index_;
};

// ---------------------------------------------------------------------------
// Adam

template <typename T>
struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int64_t step = 0;
    std::vector<std::vector<T>> m, v;  // parallel to ParamStore order

    void init_like(const ParamStore<T>& ps) {
        m.assign(ps.count(), {});
        v.assign(ps.count(), {});
        for (size_t i = 0; i < ps.count(); ++i) {
            m[i].assign(static_cast<size_t>(ps.tensor(i).size()), T(0));
            v[i].assign(static_cast<size_t>(ps.tensor(i).size()), T(0));
        }
        step = 0;
    }
};

// Standard Adam update with bias correction, applied to the trainable subset.
// Parameters outside the subset (and their moments) are untouched.
template <typename T>
void adam_step(ParamStore<T>& params, AdamState<T>& state, const std::vector<bool>& trainable) {
    if (state.m.size() != params.count() || trainable.size() != params.count())
        throw DimensionError("adam_step: state/mask sized for " + std::to_string(state.m.size()) +
                             "/" + std::to_string(trainable.size()) + " params, store has " +
                             std::to_string(params.count()));
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (size_t i = 0; i < params.count(); ++i) {
        if (!trainable[i]) continue;
        Tensor<T>& p = params.tensor(i);
        if (state.m[i].size() != p.data().size())
            throw DimensionError("adam_step: moment shape mismatch for '" + params.name(i) + "'");
        const auto& g = p.grad();
        auto& pm = state.m[i];
        auto& pv = state.v[i];
        auto& pd = p.mutable_data();
        const T b1 = static_cast<T>(state.beta1), b2 = static_cast<T>(state.beta2);
        for (size_t j = 0; j < pd.size(); ++j) {
            pm[j] = b1 * pm[j] + (T(1) - b1) * g[j];
            pv[j] = b2 * pv[j] + (T(1) - b2) * g[j] * g[j];
            const double mhat = static_cast<double>(pm[j]) / bc1;
            const double vhat = static_cast<double>(pv[j]) / bc2;
            pd[j] -= static_cast<T>(state.lr * mhat / (std::sqrt(vhat) + state.eps));
        }
    }
}

template <typename T>
void adam_step(ParamStore<T>& params, AdamState<T>& state) {
    adam_step(params, state, std::vector<bool>(params.count(), true));
}

// ---------------------------------------------------------------------------
// Gradient checking against central finite differences.

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    int64_t worst_index = -1;
    double analytic = 0.0;
    double numeric = 0.0;
    int64_t checked = 0;
    double tol = 0.0;
    bool pass = true;

    std::string summary() const {
        std::ostringstream os;
        os << "max rel err " << max_rel_err << " (tol " << tol << ") over " << checked
           << " coordinates";
        if (worst_index >= 0)
            os << "; worst at " << worst_param << "[" << worst_index << "] analytic=" << analytic
               << " numeric=" << numeric;
        return os.str();
    }
};

// f() must rebuild the scalar loss from the current parameter values. The
// analytic pass runs f under a fresh tape; numeric evaluations run with
// recording suspended. coords_per_tensor == 0 checks every coordinate.
template <typename T, typename LossFn>
GradCheckReport finite_diff_check(LossFn&& f, std::vector<std::pair<std::string, Tensor<T>>> params,
                                  double h, double tol, int64_t coords_per_tensor = 0,
                                  uint64_t sample_seed = 12345) {
    GradCheckReport rep;
    rep.tol = tol;
    std::vector<std::vector<T>> analytic;
    {
        for (auto& [name, p] : params) p.zero_grad();
        Tape<T> tape;
        Tensor<T> loss = f();
        tape.backward(loss.node());
        for (auto& [name, p] : params) analytic.push_back(p.grad());
    }
    Rng rng(sample_seed);
    TapePause<T> pause;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        auto& [name, p] = params[pi];
        std::vector<int64_t> coords;
        if (coords_per_tensor <= 0 || coords_per_tensor >= p.size()) {
            coords.resize(static_cast<size_t>(p.size()));
            for (int64_t i = 0; i < p.size(); ++i) coords[static_cast<size_t>(i)] = i;
        } else {
            for (int64_t i = 0; i < coords_per_tensor; ++i) coords.push_back(rng.below(p.size()));
        }
        for (int64_t ci : coords) {
            auto& data = p.mutable_data();
            const T old = data[static_cast<size_t>(ci)];
            data[static_cast<size_t>(ci)] = old + static_cast<T>(h);
            const double fp = static_cast<double>(f().item());
            data[static_cast<size_t>(ci)] = old - static_cast<T>(h);
            const double fm = static_cast<double>(f().item());
            data[static_cast<size_t>(ci)] = old;
            const double num = (fp - fm) / (2.0 * h);
            const double ana = static_cast<double>(analytic[pi][static_cast<size_t>(ci)]);
            const double rel =
                std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), 1e-8});
            rep.checked += 1;
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst_param = name;
                rep.worst_index = ci;
                rep.analytic = ana;
                rep.numeric = num;
            }
        }
    }
    rep.pass = rep.max_rel_err <= tol;
    return rep;
}

}  // namespace obitonet
