#pragma once

// Reverse-mode differentiation over rank <= 2 real arrays.
//
// Graphs are define-by-run: every primitive computes its forward value when
// the node is created, so each node is evaluated exactly once and
// `evaluate()` just reads the cached value. Nodes are stored in creation
// order, which is a topological order; the backward pass walks it in reverse.

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace ldm::grad {

class Tensor {
public:
    Tensor() = default;
    Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Tensor(std::size_t rows, std::size_t cols, std::vector<double> row_major);

    static Tensor scalar(double v) { return Tensor(1, 1, v); }
    static Tensor column(std::span<const double> v);
    static Tensor identity(std::size_t n);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }
    bool same_shape(const Tensor& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double item() const;

    std::span<const double> data() const noexcept { return data_; }
    std::span<double> data() noexcept { return data_; }
    std::vector<double> column_values(std::size_t c) const;

    bool all_finite() const noexcept;
    bool operator==(const Tensor&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

enum class Op : std::uint8_t {
    leaf,
    constant,
    add,
    multiply,
    scale,
    matmul,
    exp,
    log,
    tanh,
    reciprocal,
    sum,
    square,
    concatenate,
    slice,
    broadcast,
    reshape,
    clamp,
};

const char* op_name(Op op) noexcept;

enum class SumAxis : std::uint8_t {
    all,          // -> 1x1
    across_cols,  // row sums -> rows x 1
    across_rows,  // column sums -> 1 x cols
};

class Graph;

// Lightweight handle to a node owned by a Graph.
struct Var {
    Graph* graph = nullptr;
    std::uint32_t id = 0;

    const Tensor& value() const;
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
};

using GradientMap = std::map<std::string, Tensor>;

// Op-specific data: slice offsets, sum axis, scale factor, clamp range,
// concatenation inputs.
struct NodeAux {
    std::size_t i0 = 0, i1 = 0;
    double s0 = 0.0, s1 = 0.0;
    std::vector<std::uint32_t> inputs;
};

class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    // Named leaf whose gradient can be requested.
    Var param(const std::string& id, Tensor value);
    Var constant(Tensor value);
    Var constant(double v) { return constant(Tensor::scalar(v)); }

    const Tensor& value(Var v) const { return nodes_[v.id].value; }
    Op op(Var v) const { return nodes_[v.id].op; }
    std::size_t size() const noexcept { return nodes_.size(); }

    // Throws ContractViolation unless `root` is 1x1. Parameters that the root
    // does not depend on get zero gradients. Unknown ids throw InvalidArgument.
    GradientMap gradient(Var root, std::span<const std::string> params) const;
    GradientMap gradient(Var root, std::initializer_list<std::string> params) const {
        return gradient(root, std::span<const std::string>(params.begin(), params.size()));
    }
    // Gradients for every named leaf.
    GradientMap gradient_all(Var root) const;

    static constexpr std::uint32_t kNone = 0xffffffffu;

    using Aux = NodeAux;

    // Primitive construction; prefer the free functions below. Throws
    // NonFiniteError naming `op` if the forward value is not finite.
    Var push(Op op, Tensor value, std::uint32_t a = kNone, std::uint32_t b = kNone, Aux aux = {});

private:
    struct Node {
        Op op = Op::constant;
        std::uint32_t a = kNone;
        std::uint32_t b = kNone;
        Tensor value;
        Aux aux;
    };

    std::vector<Tensor> backward(Var root) const;

    std::vector<Node> nodes_;
    std::unordered_map<std::string, std::uint32_t> params_;
};

const Tensor& evaluate(Var root);

Var add(Var a, Var b);
Var multiply(Var a, Var b);
Var scale(Var a, double s);
Var matmul(Var a, Var b);
Var exp(Var a);
Var log(Var a);
Var tanh(Var a);
Var reciprocal(Var a);
Var sum(Var a, SumAxis axis = SumAxis::all);
Var square(Var a);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice(Var a, std::size_t row0, std::size_t nrows, std::size_t col0, std::size_t ncols);
Var broadcast(Var a, std::size_t rows, std::size_t cols);
Var reshape(Var a, std::size_t rows, std::size_t cols);
// Elementwise clamp; gradient passes through where lo <= a <= hi.
Var clamp(Var a, double lo, double hi);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a) { return scale(a, -1.0); }
inline Var operator-(Var a, Var b) { return add(a, scale(b, -1.0)); }
inline Var operator*(Var a, Var b) { return multiply(a, b); }
inline Var operator*(double s, Var a) { return scale(a, s); }

// Convenience compositions.
Var col(Var a, std::size_t c);
Var rows_range(Var a, std::size_t row0, std::size_t nrows);
Var mean_across_cols(Var a);
// Per-row unbiased sample variance over the columns of `a` (needs >= 2 cols).
Var sample_variance_across_cols(Var a);

// exp(a * s) for square `a`, composed from matmul/scale/add: scaling and
// squaring around a 12-term Horner-form Taylor series. The number of
// squarings is picked from the forward value and held fixed for the
// backward pass.
Var expm(Var a, double s);

}  // namespace ldm::grad
