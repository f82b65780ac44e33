#include "ldm/grad.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ldm/errors.hpp"

namespace ldm::grad {

namespace {

Graph& graph_of(Var a) {
    if (a.graph == nullptr) throw InvalidArgument("grad: Var is not attached to a graph");
    return *a.graph;
}

Graph& graph_of(Var a, Var b) {
    if (a.graph != b.graph) throw InvalidArgument("grad: operands belong to different graphs");
    return graph_of(a);
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
    std::ostringstream msg;
    msg << op << ": incompatible shapes " << a.rows() << "x" << a.cols() << " and " << b.rows()
        << "x" << b.cols();
    throw InvalidArgument(msg.str());
}

template <class F>
Tensor map(const Tensor& a, F f) {
    Tensor out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
    return out;
}

void accumulate(Tensor& dst, const Tensor& src) {
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

Tensor matmul_values(const Tensor& a, const Tensor& b) {
    Tensor out(a.rows(), b.cols());
    for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double ark = a(r, k);
            if (ark == 0.0) continue;
            for (std::size_t c = 0; c < b.cols(); ++c) out(r, c) += ark * b(k, c);
        }
    return out;
}

}  // namespace

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> row_major)
    : rows_(rows), cols_(cols), data_(std::move(row_major)) {
    if (data_.size() != rows_ * cols_) throw InvalidArgument("Tensor: data size does not match shape");
}

Tensor Tensor::column(std::span<const double> v) {
    return Tensor(v.size(), 1, std::vector<double>(v.begin(), v.end()));
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t(n, n);
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
}

double Tensor::item() const {
    if (data_.size() != 1) throw ContractViolation("Tensor::item: tensor is not a scalar");
    return data_[0];
}

std::vector<double> Tensor::column_values(std::size_t c) const {
    std::vector<double> out(rows_);
    for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
    return out;
}

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

const char* op_name(Op op) noexcept {
    switch (op) {
        case Op::leaf: return "leaf";
        case Op::constant: return "constant";
        case Op::add: return "add";
        case Op::multiply: return "multiply";
        case Op::scale: return "scale";
        case Op::matmul: return "matmul";
        case Op::exp: return "exp";
        case Op::log: return "log";
        case Op::tanh: return "tanh";
        case Op::reciprocal: return "reciprocal";
        case Op::sum: return "sum";
        case Op::square: return "square";
        case Op::concatenate: return "concatenate";
        case Op::slice: return "slice";
        case Op::broadcast: return "broadcast";
        case Op::reshape: return "reshape";
        case Op::clamp: return "clamp";
    }
    return "unknown";
}

const Tensor& Var::value() const { return graph_of(*this).value(*this); }

Var Graph::push(Op op, Tensor value, std::uint32_t a, std::uint32_t b, Aux aux) {
    if (!value.all_finite()) {
        std::ostringstream msg;
        msg << "non-finite value produced by primitive '" << op_name(op) << "'";
        throw NonFiniteError(op_name(op), msg.str());
    }
    nodes_.push_back(Node{op, a, b, std::move(value), std::move(aux)});
    return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Graph::param(const std::string& id, Tensor value) {
    if (params_.count(id) != 0) throw InvalidArgument("grad: duplicate parameter id '" + id + "'");
    Var v = push(Op::leaf, std::move(value));
    params_.emplace(id, v.id);
    return v;
}

Var Graph::constant(Tensor value) { return push(Op::constant, std::move(value)); }

std::vector<Tensor> Graph::backward(Var root) const {
    if (root.graph != this) throw InvalidArgument("grad: root belongs to a different graph");
    const Tensor& rv = nodes_[root.id].value;
    if (rv.rows() != 1 || rv.cols() != 1)
        throw ContractViolation("gradient: root must be scalar-valued");

    std::vector<Tensor> adj(root.id + 1);
    auto adj_of = [&](std::uint32_t i) -> Tensor& {
        if (adj[i].empty() && !nodes_[i].value.empty())
            adj[i] = Tensor(nodes_[i].value.rows(), nodes_[i].value.cols());
        return adj[i];
    };
    adj_of(root.id)[0] = 1.0;

    for (std::uint32_t i = root.id + 1; i-- > 0;) {
        if (adj[i].empty()) continue;
        const Node& n = nodes_[i];
        const Tensor& g = adj[i];
        switch (n.op) {
            case Op::leaf:
            case Op::constant: break;
            case Op::add:
                accumulate(adj_of(n.a), g);
                accumulate(adj_of(n.b), g);
                break;
            case Op::multiply: {
                const Tensor& va = nodes_[n.a].value;
                const Tensor& vb = nodes_[n.b].value;
                Tensor& ga = adj_of(n.a);
                for (std::size_t k = 0; k < g.size(); ++k) ga[k] += g[k] * vb[k];
                Tensor& gb = adj_of(n.b);
                for (std::size_t k = 0; k < g.size(); ++k) gb[k] += g[k] * va[k];
                break;
            }
            case Op::scale: {
                Tensor& ga = adj_of(n.a);
                for (std::size_t k = 0; k < g.size(); ++k) ga[k] += n.aux.s0 * g[k];
                break;
            }
            case Op::matmul: {
                const Tensor& va = nodes_[n.a].value;
                const Tensor& vb = nodes_[n.b].value;
                Tensor& ga = adj_of(n.a);  // g * b^T
                for (std::size_t r = 0; r < va.rows(); ++r)
                    for (std::size_t k = 0; k < va.cols(); ++k) {
                        double s = 0.0;
                        for (std::size_t c = 0; c < vb.cols(); ++c) s += g(r, c) * vb(k, c);
                        ga(r, k) += s;
                    }
                Tensor& gb = adj_of(n.b);  // a^T * g
                for (std::size_t k = 0; k < va.cols(); ++k)
                    for (std::size_t r = 0; r < va.rows(); ++r) {
                        const double ark = va(r, k);
                        if (ark == 0.0) continue;
                        for (std::size_t c = 0; c < vb.cols(); ++c) gb(k, c) += ark * g(r, c);
                    }
                break;
            }
            case Op::exp: {
                Tensor& ga = adj_of(n.a);
                for (std::size_t k = 0; k < g.size(); ++k) ga[k] += g[k] * n.value[k];
                break;
            }
            case Op::log: {
                const Tensor& va = nodes_[n.a].value;
                Tensor& ga = adj_of(n.a);
                for (std::size_t k = 0; k < g.size(); ++k) ga[k] += g[k] / va[k];
                break;
            }
            case Op::tanh: {
                Tensor& ga = adj_of(n.a);
                for (std::size_t k = 0; k < g.size(); ++k)
                    ga[k] += g[k] * (1.0 - n.value[k] * n.value[k]);
                break;
            }
            case Op::reciprocal: {
                Tensor& ga = adj_of(n.a);
                for (std::size_t k = 0; k < g.size(); ++k) ga[k] -= g[k] * n.value[k] * n.value[k];
                break;
            }
            case Op::square: {
                const Tensor& va = nodes_[n.a].value;
                Tensor& ga = adj_of(n.a);
                for (std::size_t k = 0; k < g.size(); ++k) ga[k] += 2.0 * g[k] * va[k];
                break;
            }
            case Op::sum: {
                Tensor& ga = adj_of(n.a);
                const auto axis = static_cast<SumAxis>(n.aux.i0);
                for (std::size_t r = 0; r < ga.rows(); ++r)
                    for (std::size_t c = 0; c < ga.cols(); ++c) {
                        switch (axis) {
                            case SumAxis::all: ga(r, c) += g[0]; break;
                            case SumAxis::across_cols: ga(r, c) += g[r]; break;
                            case SumAxis::across_rows: ga(r, c) += g[c]; break;
                        }
                    }
                break;
            }
            case Op::concatenate: {
                const bool along_rows = n.aux.i0 == 0;
                std::size_t offset = 0;
                for (std::uint32_t in : n.aux.inputs) {
                    Tensor& gi = adj_of(in);
                    for (std::size_t r = 0; r < gi.rows(); ++r)
                        for (std::size_t c = 0; c < gi.cols(); ++c)
                            gi(r, c) += along_rows ? g(offset + r, c) : g(r, offset + c);
                    offset += along_rows ? gi.rows() : gi.cols();
                }
                break;
            }
            case Op::slice: {
                Tensor& ga = adj_of(n.a);
                for (std::size_t r = 0; r < g.rows(); ++r)
                    for (std::size_t c = 0; c < g.cols(); ++c) ga(n.aux.i0 + r, n.aux.i1 + c) += g(r, c);
                break;
            }
            case Op::broadcast: {
                Tensor& ga = adj_of(n.a);
                for (std::size_t r = 0; r < g.rows(); ++r)
                    for (std::size_t c = 0; c < g.cols(); ++c)
                        ga(ga.rows() == 1 ? 0 : r, ga.cols() == 1 ? 0 : c) += g(r, c);
                break;
            }
            case Op::reshape: accumulate(adj_of(n.a), g); break;
            case Op::clamp: {
                const Tensor& va = nodes_[n.a].value;
                Tensor& ga = adj_of(n.a);
                for (std::size_t k = 0; k < g.size(); ++k)
                    if (va[k] >= n.aux.s0 && va[k] <= n.aux.s1) ga[k] += g[k];
                break;
            }
        }
    }
    return adj;
}

GradientMap Graph::gradient(Var root, std::span<const std::string> params) const {
    std::vector<std::uint32_t> ids;
    ids.reserve(params.size());
    for (const auto& name : params) {
        auto it = params_.find(name);
        if (it == params_.end()) throw InvalidArgument("gradient: unknown parameter '" + name + "'");
        ids.push_back(it->second);
    }
    const auto adj = backward(root);
    GradientMap out;
    for (std::size_t k = 0; k < params.size(); ++k) {
        const std::uint32_t id = ids[k];
        const Tensor& v = nodes_[id].value;
        Tensor g = (id < adj.size() && !adj[id].empty()) ? adj[id] : Tensor(v.rows(), v.cols());
        out.insert_or_assign(params[k], std::move(g));
    }
    return out;
}

GradientMap Graph::gradient_all(Var root) const {
    std::vector<std::string> names;
    names.reserve(params_.size());
    for (const auto& [name, id] : params_) names.push_back(name);
    return gradient(root, names);
}

const Tensor& evaluate(Var root) { return root.value(); }

Var add(Var a, Var b) {
    Graph& g = graph_of(a, b);
    const Tensor& va = a.value();
    const Tensor& vb = b.value();
    if (!va.same_shape(vb)) shape_error("add", va, vb);
    Tensor out = va;
    accumulate(out, vb);
    return g.push(Op::add, std::move(out), a.id, b.id);
}

Var multiply(Var a, Var b) {
    Graph& g = graph_of(a, b);
    const Tensor& va = a.value();
    const Tensor& vb = b.value();
    if (!va.same_shape(vb)) shape_error("multiply", va, vb);
    Tensor out = va;
    for (std::size_t k = 0; k < out.size(); ++k) out[k] *= vb[k];
    return g.push(Op::multiply, std::move(out), a.id, b.id);
}

Var scale(Var a, double s) {
    Graph& g = graph_of(a);
    Tensor out = map(a.value(), [s](double x) { return s * x; });
    Graph::Aux aux;
    aux.s0 = s;
    return g.push(Op::scale, std::move(out), a.id, Graph::kNone, std::move(aux));
}

Var matmul(Var a, Var b) {
    Graph& g = graph_of(a, b);
    const Tensor& va = a.value();
    const Tensor& vb = b.value();
    if (va.cols() != vb.rows()) shape_error("matmul", va, vb);
    return g.push(Op::matmul, matmul_values(va, vb), a.id, b.id);
}

Var exp(Var a) {
    return graph_of(a).push(Op::exp, map(a.value(), [](double x) { return std::exp(x); }), a.id);
}

Var log(Var a) {
    return graph_of(a).push(Op::log, map(a.value(), [](double x) { return std::log(x); }), a.id);
}

Var tanh(Var a) {
    return graph_of(a).push(Op::tanh, map(a.value(), [](double x) { return std::tanh(x); }), a.id);
}

Var reciprocal(Var a) {
    return graph_of(a).push(Op::reciprocal, map(a.value(), [](double x) { return 1.0 / x; }), a.id);
}

Var square(Var a) {
    return graph_of(a).push(Op::square, map(a.value(), [](double x) { return x * x; }), a.id);
}

Var sum(Var a, SumAxis axis) {
    Graph& g = graph_of(a);
    const Tensor& va = a.value();
    Tensor out;
    switch (axis) {
        case SumAxis::all: {
            double s = 0.0;
            for (double x : va.data()) s += x;
            out = Tensor::scalar(s);
            break;
        }
        case SumAxis::across_cols:
            out = Tensor(va.rows(), 1);
            for (std::size_t r = 0; r < va.rows(); ++r)
                for (std::size_t c = 0; c < va.cols(); ++c) out[r] += va(r, c);
            break;
        case SumAxis::across_rows:
            out = Tensor(1, va.cols());
            for (std::size_t r = 0; r < va.rows(); ++r)
                for (std::size_t c = 0; c < va.cols(); ++c) out[c] += va(r, c);
            break;
    }
    Graph::Aux aux;
    aux.i0 = static_cast<std::size_t>(axis);
    return g.push(Op::sum, std::move(out), a.id, Graph::kNone, std::move(aux));
}

namespace {

Var concat(std::span<const Var> parts, bool along_rows) {
    if (parts.empty()) throw InvalidArgument("concatenate: no inputs");
    Graph& g = graph_of(parts[0]);
    std::size_t rows = 0, cols = 0;
    for (Var p : parts) {
        graph_of(parts[0], p);
        const Tensor& v = p.value();
        if (along_rows) {
            if (rows != 0 && v.cols() != cols) shape_error("concatenate", parts[0].value(), v);
            cols = v.cols();
            rows += v.rows();
        } else {
            if (cols != 0 && v.rows() != rows) shape_error("concatenate", parts[0].value(), v);
            rows = v.rows();
            cols += v.cols();
        }
    }
    Tensor out(rows, cols);
    Graph::Aux aux;
    aux.i0 = along_rows ? 0 : 1;
    std::size_t offset = 0;
    for (Var p : parts) {
        const Tensor& v = p.value();
        for (std::size_t r = 0; r < v.rows(); ++r)
            for (std::size_t c = 0; c < v.cols(); ++c)
                (along_rows ? out(offset + r, c) : out(r, offset + c)) = v(r, c);
        offset += along_rows ? v.rows() : v.cols();
        aux.inputs.push_back(p.id);
    }
    return g.push(Op::concatenate, std::move(out), Graph::kNone, Graph::kNone, std::move(aux));
}

}  // namespace

Var concat_rows(std::span<const Var> parts) { return concat(parts, true); }
Var concat_cols(std::span<const Var> parts) { return concat(parts, false); }

Var slice(Var a, std::size_t row0, std::size_t nrows, std::size_t col0, std::size_t ncols) {
    Graph& g = graph_of(a);
    const Tensor& va = a.value();
    if (row0 + nrows > va.rows() || col0 + ncols > va.cols())
        throw InvalidArgument("slice: range exceeds tensor shape");
    Tensor out(nrows, ncols);
    for (std::size_t r = 0; r < nrows; ++r)
        for (std::size_t c = 0; c < ncols; ++c) out(r, c) = va(row0 + r, col0 + c);
    Graph::Aux aux;
    aux.i0 = row0;
    aux.i1 = col0;
    return g.push(Op::slice, std::move(out), a.id, Graph::kNone, std::move(aux));
}

Var broadcast(Var a, std::size_t rows, std::size_t cols) {
    Graph& g = graph_of(a);
    const Tensor& va = a.value();
    const bool ok_rows = va.rows() == rows || va.rows() == 1;
    const bool ok_cols = va.cols() == cols || va.cols() == 1;
    if (!ok_rows || !ok_cols) shape_error("broadcast", va, Tensor(rows, cols));
    Tensor out(rows, cols);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c)
            out(r, c) = va(va.rows() == 1 ? 0 : r, va.cols() == 1 ? 0 : c);
    return g.push(Op::broadcast, std::move(out), a.id);
}

Var reshape(Var a, std::size_t rows, std::size_t cols) {
    Graph& g = graph_of(a);
    const Tensor& va = a.value();
    if (rows * cols != va.size()) shape_error("reshape", va, Tensor(rows, cols));
    std::vector<double> data(va.data().begin(), va.data().end());
    return g.push(Op::reshape, Tensor(rows, cols, std::move(data)), a.id);
}

Var clamp(Var a, double lo, double hi) {
    Graph& g = graph_of(a);
    Tensor out = map(a.value(), [lo, hi](double x) { return std::clamp(x, lo, hi); });
    Graph::Aux aux;
    aux.s0 = lo;
    aux.s1 = hi;
    return g.push(Op::clamp, std::move(out), a.id, Graph::kNone, std::move(aux));
}

Var col(Var a, std::size_t c) { return slice(a, 0, a.rows(), c, 1); }

Var rows_range(Var a, std::size_t row0, std::size_t nrows) { return slice(a, row0, nrows, 0, a.cols()); }

Var mean_across_cols(Var a) { return scale(sum(a, SumAxis::across_cols), 1.0 / static_cast<double>(a.cols())); }

Var sample_variance_across_cols(Var a) {
    const std::size_t n = a.cols();
    if (n < 2) throw InvalidArgument("sample variance needs at least two columns");
    Var centered = a - broadcast(mean_across_cols(a), a.rows(), n);
    return scale(sum(square(centered), SumAxis::across_cols), 1.0 / static_cast<double>(n - 1));
}

Var expm(Var a, double s) {
    Graph& g = graph_of(a);
    const Tensor& va = a.value();
    if (va.rows() != va.cols()) throw InvalidArgument("expm: matrix must be square");
    const std::size_t n = va.rows();
    double norm = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        double row = 0.0;
        for (std::size_t c = 0; c < n; ++c) row += std::abs(va(r, c));
        norm = std::max(norm, row);
    }
    norm *= std::abs(s);
    int squarings = 0;
    if (norm > 0.5) squarings = static_cast<int>(std::ceil(std::log2(norm / 0.5)));
    Var x = scale(a, std::ldexp(s, -squarings));
    constexpr int kTerms = 12;
    Var eye = g.constant(Tensor::identity(n));
    Var p = eye + scale(x, 1.0 / kTerms);
    for (int k = kTerms - 1; k >= 1; --k) p = eye + scale(matmul(x, p), 1.0 / k);
    for (int i = 0; i < squarings; ++i) p = matmul(p, p);
    return p;
}

}  // namespace ldm::grad
