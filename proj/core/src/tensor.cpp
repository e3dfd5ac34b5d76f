#include "smetod/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace smetod {

std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

namespace {

using detail::Storage;

[[noreturn]] void shape_error(const std::string& op, const Shape& a, const Shape& b) {
    throw std::invalid_argument(op + ": incompatible shapes " + shape_to_string(a) + " and " +
                                shape_to_string(b));
}

void require_rank(const std::string& op, const Tensor& t, int rank) {
    if (t.rank() != rank)
        throw std::invalid_argument(op + ": expected rank " + std::to_string(rank) + ", got " +
                                    shape_to_string(t.shape()));
}

std::shared_ptr<Storage> make_storage(Shape shape, bool requires_grad) {
    auto s = std::make_shared<Storage>();
    s->value.assign(static_cast<std::size_t>(shape_numel(shape)), 0.0);
    s->shape = std::move(shape);
    s->requires_grad = requires_grad;
    return s;
}

thread_local Tape* g_active_tape = nullptr;

bool any_requires_grad(std::initializer_list<const Tensor*> ts) {
    for (const Tensor* t : ts)
        if (t->requires_grad()) return true;
    return false;
}

double* grad_ptr(const std::shared_ptr<Storage>& s) {
    s->ensure_grad();
    return s->grad.data();
}

} // namespace

// Record `backward` if a tape is active and some input carries grad. The
// output is marked requires_grad in that case so downstream ops keep the
// chain alive.
void record_op(std::initializer_list<const Tensor*> inputs, Tensor& out,
               std::function<void()> backward) {
    if (!any_requires_grad(inputs)) return;
    out.set_requires_grad(true);
    Tape* tape = Tape::active();
    if (!tape) return;
    std::vector<std::shared_ptr<Storage>> ins;
    ins.reserve(inputs.size());
    for (const Tensor* t : inputs) ins.push_back(t->impl());
    tape->record(std::move(ins), out.impl(), std::move(backward));
}

// ---- Tensor ----------------------------------------------------------------

Tensor wrap_storage(std::shared_ptr<detail::Storage> s) { return Tensor(std::move(s)); }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return wrap_storage(make_storage(std::move(shape), requires_grad));
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
    auto s = make_storage(std::move(shape), requires_grad);
    std::fill(s->value.begin(), s->value.end(), v);
    return wrap_storage(std::move(s));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
        throw std::invalid_argument("Tensor::from_data: shape " + shape_to_string(shape) +
                                    " wants " + std::to_string(shape_numel(shape)) +
                                    " values, got " + std::to_string(data.size()));
    auto s = std::make_shared<Storage>();
    s->shape = std::move(shape);
    s->value = std::move(data);
    s->requires_grad = requires_grad;
    return wrap_storage(std::move(s));
}

Tensor Tensor::scalar(double v) { return from_data({}, {v}); }

Tensor Tensor::row(std::vector<double> data) {
    auto n = static_cast<std::int64_t>(data.size());
    return from_data({n}, std::move(data));
}

Tensor Tensor::matrix(std::int64_t rows, std::int64_t cols, std::vector<double> data) {
    return from_data({rows, cols}, std::move(data));
}

double Tensor::item() const {
    if (numel() != 1)
        throw std::invalid_argument("Tensor::item: tensor " + shape_to_string(shape()) +
                                    " is not a scalar");
    return s_->value[0];
}

double Tensor::at(std::int64_t i) const {
    if (rank() != 1 || i < 0 || i >= dim(0))
        throw std::out_of_range("Tensor::at(i): index " + std::to_string(i) + " in " +
                                shape_to_string(shape()));
    return s_->value[static_cast<std::size_t>(i)];
}

double Tensor::at(std::int64_t i, std::int64_t j) const {
    if (rank() != 2 || i < 0 || i >= dim(0) || j < 0 || j >= dim(1))
        throw std::out_of_range("Tensor::at(i,j): index (" + std::to_string(i) + "," +
                                std::to_string(j) + ") in " + shape_to_string(shape()));
    return s_->value[static_cast<std::size_t>(i * dim(1) + j)];
}

double& Tensor::ref(std::int64_t i, std::int64_t j) {
    if (rank() != 2 || i < 0 || i >= dim(0) || j < 0 || j >= dim(1))
        throw std::out_of_range("Tensor::ref: index (" + std::to_string(i) + "," +
                                std::to_string(j) + ") in " + shape_to_string(shape()));
    return s_->value[static_cast<std::size_t>(i * dim(1) + j)];
}

std::span<const double> Tensor::grad() const {
    if (!has_grad())
        throw std::logic_error("Tensor::grad: no gradient has been accumulated");
    return s_->grad;
}

Tensor Tensor::clone() const {
    auto s = std::make_shared<Storage>();
    s->shape = s_->shape;
    s->value = s_->value;
    s->requires_grad = s_->requires_grad;
    return wrap_storage(std::move(s));
}

// ---- Tape ------------------------------------------------------------------

Tape::Tape() {
    prev_ = g_active_tape;
    g_active_tape = this;
}

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() noexcept { return g_active_tape; }

void Tape::record(std::vector<std::shared_ptr<Storage>> inputs, std::shared_ptr<Storage> output,
                  std::function<void()> backward) {
    nodes_.push_back(Node{std::move(inputs), std::move(output), std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
    if (!loss.is_scalar())
        throw std::invalid_argument("Tape::backward: loss must be a scalar, got " +
                                    shape_to_string(loss.shape()));
    const auto& target = loss.impl();
    bool on_tape = false;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (it->output == target) {
            on_tape = true;
            break;
        }
    }
    if (!on_tape)
        throw std::logic_error("Tape::backward: loss was not produced on this tape");

    // reset everything this tape touches, then seed d(loss)/d(loss) = 1
    for (auto& node : nodes_) {
        node.output->grad.assign(node.output->value.size(), 0.0);
        for (auto& in : node.inputs)
            if (in->requires_grad) in->grad.assign(in->value.size(), 0.0);
    }
    target->ensure_grad();
    target->grad[0] = 1.0;

    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (it->output->grad.empty()) continue;
        it->backward();
    }
}

// ---- ops -------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank("matmul", a, 2);
    require_rank("matmul", b, 2);
    if (a.dim(1) != b.dim(0)) shape_error("matmul", a.shape(), b.shape());
    const std::int64_t l = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out = Tensor::zeros({l, n});
    {
        const double* pa = a.values().data();
        const double* pb = b.values().data();
        double* pc = out.mutable_values().data();
        for (std::int64_t i = 0; i < l; ++i)
            for (std::int64_t t = 0; t < k; ++t) {
                const double av = pa[i * k + t];
                const double* brow = pb + t * n;
                double* crow = pc + i * n;
                for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
    }
    auto sa = a.impl(), sb = b.impl(), sc = out.impl();
    record_op({&a, &b}, out, [sa, sb, sc, l, k, n] {
        const double* dc = sc->grad.data();
        if (sa->requires_grad) {
            double* da = grad_ptr(sa);
            const double* pb = sb->value.data();
            // dA = dC · Bᵀ
            for (std::int64_t i = 0; i < l; ++i)
                for (std::int64_t t = 0; t < k; ++t) {
                    const double* brow = pb + t * n;
                    const double* dcrow = dc + i * n;
                    double acc = 0.0;
                    for (std::int64_t j = 0; j < n; ++j) acc += dcrow[j] * brow[j];
                    da[i * k + t] += acc;
                }
        }
        if (sb->requires_grad) {
            double* db = grad_ptr(sb);
            const double* pa = sa->value.data();
            // dB = Aᵀ · dC
            for (std::int64_t i = 0; i < l; ++i)
                for (std::int64_t t = 0; t < k; ++t) {
                    const double av = pa[i * k + t];
                    const double* dcrow = dc + i * n;
                    double* dbrow = db + t * n;
                    for (std::int64_t j = 0; j < n; ++j) dbrow[j] += av * dcrow[j];
                }
        }
    });
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) shape_error("add", a.shape(), b.shape());
    Tensor out = Tensor::zeros(a.shape());
    const auto n = static_cast<std::size_t>(a.numel());
    for (std::size_t i = 0; i < n; ++i) out.mutable_values()[i] = a.values()[i] + b.values()[i];
    auto sa = a.impl(), sb = b.impl(), sc = out.impl();
    record_op({&a, &b}, out, [sa, sb, sc, n] {
        for (auto& s : {sa, sb}) {
            if (!s->requires_grad) continue;
            double* d = grad_ptr(s);
            for (std::size_t i = 0; i < n; ++i) d[i] += sc->grad[i];
        }
    });
    return out;
}

Tensor add_rowwise(const Tensor& m, const Tensor& row) {
    require_rank("add_rowwise", m, 2);
    require_rank("add_rowwise", row, 1);
    if (m.dim(1) != row.dim(0)) shape_error("add_rowwise", m.shape(), row.shape());
    const std::int64_t l = m.dim(0), d = m.dim(1);
    Tensor out = Tensor::zeros(m.shape());
    for (std::int64_t i = 0; i < l; ++i)
        for (std::int64_t j = 0; j < d; ++j)
            out.mutable_values()[i * d + j] = m.values()[i * d + j] + row.values()[j];
    auto sm = m.impl(), sr = row.impl(), sc = out.impl();
    record_op({&m, &row}, out, [sm, sr, sc, l, d] {
        if (sm->requires_grad) {
            double* dm = grad_ptr(sm);
            for (std::int64_t i = 0; i < l * d; ++i) dm[i] += sc->grad[static_cast<std::size_t>(i)];
        }
        if (sr->requires_grad) {
            double* dr = grad_ptr(sr);
            for (std::int64_t i = 0; i < l; ++i)
                for (std::int64_t j = 0; j < d; ++j) dr[j] += sc->grad[static_cast<std::size_t>(i * d + j)];
        }
    });
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) shape_error("mul", a.shape(), b.shape());
    Tensor out = Tensor::zeros(a.shape());
    const auto n = static_cast<std::size_t>(a.numel());
    for (std::size_t i = 0; i < n; ++i) out.mutable_values()[i] = a.values()[i] * b.values()[i];
    auto sa = a.impl(), sb = b.impl(), sc = out.impl();
    record_op({&a, &b}, out, [sa, sb, sc, n] {
        if (sa->requires_grad) {
            double* d = grad_ptr(sa);
            for (std::size_t i = 0; i < n; ++i) d[i] += sc->grad[i] * sb->value[i];
        }
        if (sb->requires_grad) {
            double* d = grad_ptr(sb);
            for (std::size_t i = 0; i < n; ++i) d[i] += sc->grad[i] * sa->value[i];
        }
    });
    return out;
}

Tensor scale(const Tensor& a, double c) {
    Tensor out = Tensor::zeros(a.shape());
    const auto n = static_cast<std::size_t>(a.numel());
    for (std::size_t i = 0; i < n; ++i) out.mutable_values()[i] = a.values()[i] * c;
    auto sa = a.impl(), sc = out.impl();
    record_op({&a}, out, [sa, sc, c, n] {
        double* d = grad_ptr(sa);
        for (std::size_t i = 0; i < n; ++i) d[i] += sc->grad[i] * c;
    });
    return out;
}

namespace {
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;
} // namespace

Tensor gelu(const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape());
    const auto n = static_cast<std::size_t>(a.numel());
    for (std::size_t i = 0; i < n; ++i) {
        const double x = a.values()[i];
        out.mutable_values()[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
    }
    auto sa = a.impl(), sc = out.impl();
    record_op({&a}, out, [sa, sc, n] {
        double* d = grad_ptr(sa);
        for (std::size_t i = 0; i < n; ++i) {
            const double x = sa->value[i];
            const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
            d[i] += sc->grad[i] * (cdf + x * pdf);
        }
    });
    return out;
}

Tensor softmax(const Tensor& x, int axis, const Tensor* mask) {
    if (axis < 0 || axis >= x.rank())
        throw std::invalid_argument("softmax: axis " + std::to_string(axis) +
                                    " out of range for " + shape_to_string(x.shape()));
    if (mask && mask->shape() != x.shape())
        shape_error("softmax mask", x.shape(), mask->shape());

    const auto& shape = x.shape();
    const std::int64_t n = shape[static_cast<std::size_t>(axis)];
    std::int64_t inner = 1, outer = 1;
    for (int i = axis + 1; i < x.rank(); ++i) inner *= shape[static_cast<std::size_t>(i)];
    for (int i = 0; i < axis; ++i) outer *= shape[static_cast<std::size_t>(i)];

    Tensor out = Tensor::zeros(shape);
    const double* px = x.values().data();
    const double* pm = mask ? mask->values().data() : nullptr;
    double* po = out.mutable_values().data();

    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t in = 0; in < inner; ++in) {
            const auto idx = [&](std::int64_t i) { return (o * n + i) * inner + in; };
            double mx = -std::numeric_limits<double>::infinity();
            std::int64_t live = 0;
            for (std::int64_t i = 0; i < n; ++i) {
                if (pm && pm[idx(i)] == 0.0) continue;
                ++live;
                mx = std::max(mx, px[idx(i)]);
            }
            if (live == 0)
                throw std::domain_error("softmax: fully masked slice (axis " +
                                        std::to_string(axis) + ", shape " +
                                        shape_to_string(shape) + ")");
            double denom = 0.0;
            for (std::int64_t i = 0; i < n; ++i) {
                if (pm && pm[idx(i)] == 0.0) {
                    po[idx(i)] = 0.0;
                    continue;
                }
                const double e = std::exp(px[idx(i)] - mx);
                po[idx(i)] = e;
                denom += e;
            }
            for (std::int64_t i = 0; i < n; ++i) {
                if (pm && pm[idx(i)] == 0.0) continue;
                po[idx(i)] /= denom;
            }
        }

    auto sx = x.impl(), so = out.impl();
    auto sm = mask ? mask->impl() : nullptr;
    record_op({&x}, out, [sx, so, sm, outer, inner, n] {
        double* dx = grad_ptr(sx);
        const double* dy = so->grad.data();
        const double* s = so->value.data();
        const double* pmk = sm ? sm->value.data() : nullptr;
        for (std::int64_t o = 0; o < outer; ++o)
            for (std::int64_t in = 0; in < inner; ++in) {
                const auto idx = [&](std::int64_t i) { return (o * n + i) * inner + in; };
                double dot = 0.0;
                for (std::int64_t i = 0; i < n; ++i) {
                    if (pmk && pmk[idx(i)] == 0.0) continue;
                    dot += dy[idx(i)] * s[idx(i)];
                }
                for (std::int64_t i = 0; i < n; ++i) {
                    if (pmk && pmk[idx(i)] == 0.0) continue;
                    dx[idx(i)] += s[idx(i)] * (dy[idx(i)] - dot);
                }
            }
    });
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    require_rank("layer_norm", x, 2);
    require_rank("layer_norm", gain, 1);
    require_rank("layer_norm", bias, 1);
    if (gain.dim(0) != x.dim(1)) shape_error("layer_norm gain", x.shape(), gain.shape());
    if (bias.dim(0) != x.dim(1)) shape_error("layer_norm bias", x.shape(), bias.shape());
    if (eps < 0.0) throw std::invalid_argument("layer_norm: eps must be >= 0");

    const std::int64_t l = x.dim(0), d = x.dim(1);
    Tensor out = Tensor::zeros(x.shape());
    // normalized rows are stashed for the backward pass
    auto xhat = std::make_shared<std::vector<double>>(static_cast<std::size_t>(l * d));
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(l));

    for (std::int64_t i = 0; i < l; ++i) {
        const double* xi = x.values().data() + i * d;
        double mean = 0.0;
        for (std::int64_t j = 0; j < d; ++j) mean += xi[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::int64_t j = 0; j < d; ++j) {
            const double c = xi[j] - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[static_cast<std::size_t>(i)] = is;
        for (std::int64_t j = 0; j < d; ++j) {
            const double h = (xi[j] - mean) * is;
            (*xhat)[static_cast<std::size_t>(i * d + j)] = h;
            out.mutable_values()[i * d + j] = h * gain.values()[j] + bias.values()[j];
        }
    }

    auto sx = x.impl(), sg = gain.impl(), sb = bias.impl(), so = out.impl();
    record_op({&x, &gain, &bias}, out, [sx, sg, sb, so, xhat, inv_std, l, d] {
        const double* dy = so->grad.data();
        if (sb->requires_grad) {
            double* db = grad_ptr(sb);
            for (std::int64_t i = 0; i < l; ++i)
                for (std::int64_t j = 0; j < d; ++j) db[j] += dy[i * d + j];
        }
        if (sg->requires_grad) {
            double* dg = grad_ptr(sg);
            for (std::int64_t i = 0; i < l; ++i)
                for (std::int64_t j = 0; j < d; ++j)
                    dg[j] += dy[i * d + j] * (*xhat)[static_cast<std::size_t>(i * d + j)];
        }
        if (sx->requires_grad) {
            double* dx = grad_ptr(sx);
            for (std::int64_t i = 0; i < l; ++i) {
                double mean_dh = 0.0, mean_dh_h = 0.0;
                for (std::int64_t j = 0; j < d; ++j) {
                    const double dh = dy[i * d + j] * sg->value[static_cast<std::size_t>(j)];
                    const double h = (*xhat)[static_cast<std::size_t>(i * d + j)];
                    mean_dh += dh;
                    mean_dh_h += dh * h;
                }
                mean_dh /= static_cast<double>(d);
                mean_dh_h /= static_cast<double>(d);
                const double is = (*inv_std)[static_cast<std::size_t>(i)];
                for (std::int64_t j = 0; j < d; ++j) {
                    const double dh = dy[i * d + j] * sg->value[static_cast<std::size_t>(j)];
                    const double h = (*xhat)[static_cast<std::size_t>(i * d + j)];
                    dx[i * d + j] += is * (dh - mean_dh - h * mean_dh_h);
                }
            }
        }
    });
    return out;
}

Tensor embedding_rows(const Tensor& table, std::span<const int> ids) {
    require_rank("embedding_rows", table, 2);
    const std::int64_t v = table.dim(0), d = table.dim(1);
    for (int id : ids)
        if (id < 0 || id >= v)
            throw std::out_of_range("embedding_rows: id " + std::to_string(id) +
                                    " outside table " + shape_to_string(table.shape()));
    const auto l = static_cast<std::int64_t>(ids.size());
    Tensor out = Tensor::zeros({l, d});
    for (std::int64_t i = 0; i < l; ++i)
        std::copy_n(table.values().data() + static_cast<std::int64_t>(ids[static_cast<std::size_t>(i)]) * d,
                    d, out.mutable_values().data() + i * d);
    auto st = table.impl(), so = out.impl();
    std::vector<int> ids_copy(ids.begin(), ids.end());
    record_op({&table}, out, [st, so, ids_copy, d] {
        double* dt = grad_ptr(st);
        for (std::size_t i = 0; i < ids_copy.size(); ++i) {
            const double* dyrow = so->grad.data() + static_cast<std::int64_t>(i) * d;
            double* drow = dt + static_cast<std::int64_t>(ids_copy[i]) * d;
            for (std::int64_t j = 0; j < d; ++j) drow[j] += dyrow[j];
        }
    });
    return out;
}

Tensor transpose(const Tensor& x) {
    require_rank("transpose", x, 2);
    const std::int64_t r = x.dim(0), c = x.dim(1);
    Tensor out = Tensor::zeros({c, r});
    for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t j = 0; j < c; ++j)
            out.mutable_values()[j * r + i] = x.values()[i * c + j];
    auto sx = x.impl(), so = out.impl();
    record_op({&x}, out, [sx, so, r, c] {
        double* dx = grad_ptr(sx);
        for (std::int64_t i = 0; i < r; ++i)
            for (std::int64_t j = 0; j < c; ++j) dx[i * c + j] += so->grad[static_cast<std::size_t>(j * r + i)];
    });
    return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) shape_error("reshape", x.shape(), shape);
    Tensor out = Tensor::from_data(std::move(shape),
                                   std::vector<double>(x.values().begin(), x.values().end()));
    auto sx = x.impl(), so = out.impl();
    record_op({&x}, out, [sx, so] {
        double* dx = grad_ptr(sx);
        for (std::size_t i = 0; i < so->grad.size(); ++i) dx[i] += so->grad[i];
    });
    return out;
}

Tensor concat(std::span<const Tensor> parts, int axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no tensors given");
    if (axis != 0 && axis != 1) throw std::invalid_argument("concat: axis must be 0 or 1");
    for (const auto& p : parts) require_rank("concat", p, 2);
    const int other = 1 - axis;
    for (const auto& p : parts)
        if (p.dim(other) != parts[0].dim(other)) shape_error("concat", parts[0].shape(), p.shape());

    std::int64_t total = 0;
    for (const auto& p : parts) total += p.dim(axis);
    Shape out_shape = parts[0].shape();
    out_shape[static_cast<std::size_t>(axis)] = total;
    Tensor out = Tensor::zeros(out_shape);

    const std::int64_t rows = out_shape[0], cols = out_shape[1];
    std::int64_t off = 0;
    std::vector<std::int64_t> offsets;
    for (const auto& p : parts) {
        offsets.push_back(off);
        if (axis == 0) {
            std::copy(p.values().begin(), p.values().end(),
                      out.mutable_values().begin() + off * cols);
        } else {
            for (std::int64_t i = 0; i < rows; ++i)
                std::copy_n(p.values().data() + i * p.dim(1), p.dim(1),
                            out.mutable_values().data() + i * cols + off);
        }
        off += p.dim(axis);
    }

    std::vector<std::shared_ptr<Storage>> ins;
    bool needs_grad = false;
    for (const auto& p : parts) {
        ins.push_back(p.impl());
        needs_grad = needs_grad || p.requires_grad();
    }
    if (needs_grad) {
        out.set_requires_grad(true);
        if (Tape* tape = Tape::active()) {
            auto so = out.impl();
            auto ins_copy = ins;
            tape->record(std::move(ins), so, [ins_copy, so, offsets, axis, rows, cols] {
                for (std::size_t k = 0; k < ins_copy.size(); ++k) {
                    const auto& s = ins_copy[k];
                    if (!s->requires_grad) continue;
                    double* d = grad_ptr(s);
                    const std::int64_t width =
                        axis == 1 ? static_cast<std::int64_t>(s->value.size()) / rows : cols;
                    const std::int64_t nrows =
                        axis == 0 ? static_cast<std::int64_t>(s->value.size()) / cols : rows;
                    for (std::int64_t i = 0; i < nrows; ++i)
                        for (std::int64_t j = 0; j < width; ++j) {
                            const std::int64_t src = axis == 0 ? (offsets[k] + i) * cols + j
                                                               : i * cols + offsets[k] + j;
                            d[i * width + j] += so->grad[static_cast<std::size_t>(src)];
                        }
                }
            });
        }
    }
    return out;
}

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.values()) acc += v;
    Tensor out = Tensor::scalar(acc);
    auto sx = x.impl(), so = out.impl();
    record_op({&x}, out, [sx, so] {
        double* dx = grad_ptr(sx);
        const double g = so->grad[0];
        for (std::size_t i = 0; i < sx->value.size(); ++i) dx[i] += g;
    });
    return out;
}

Tensor cross_entropy_mean(const Tensor& logits, std::span<const int> targets, int ignore_id) {
    require_rank("cross_entropy_mean", logits, 2);
    if (static_cast<std::int64_t>(targets.size()) != logits.dim(0))
        throw std::invalid_argument("cross_entropy_mean: " + std::to_string(targets.size()) +
                                    " targets for logits " + shape_to_string(logits.shape()));
    const std::int64_t t_len = logits.dim(0), v = logits.dim(1);

    std::int64_t live = 0;
    for (int t : targets)
        if (t != ignore_id) ++live;
    if (live == 0) throw std::domain_error("cross_entropy_mean: every target position is ignored");
    for (int t : targets)
        if (t != ignore_id && (t < 0 || t >= v))
            throw std::out_of_range("cross_entropy_mean: target id " + std::to_string(t) +
                                    " outside vocab " + std::to_string(v));

    // row-wise log-softmax probabilities, kept for the backward pass
    auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(t_len * v));
    double loss = 0.0;
    for (std::int64_t i = 0; i < t_len; ++i) {
        const double* row = logits.values().data() + i * v;
        double mx = row[0];
        for (std::int64_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (std::int64_t j = 0; j < v; ++j) {
            const double e = std::exp(row[j] - mx);
            (*probs)[static_cast<std::size_t>(i * v + j)] = e;
            denom += e;
        }
        for (std::int64_t j = 0; j < v; ++j) (*probs)[static_cast<std::size_t>(i * v + j)] /= denom;
        const int target = targets[static_cast<std::size_t>(i)];
        if (target == ignore_id) continue;
        loss -= std::log((*probs)[static_cast<std::size_t>(i * v + target)]);
    }
    loss /= static_cast<double>(live);

    Tensor out = Tensor::scalar(loss);
    auto sl = logits.impl(), so = out.impl();
    std::vector<int> targets_copy(targets.begin(), targets.end());
    record_op({&logits}, out, [sl, so, probs, targets_copy, ignore_id, v, live] {
        double* dl = grad_ptr(sl);
        const double g = so->grad[0] / static_cast<double>(live);
        for (std::size_t i = 0; i < targets_copy.size(); ++i) {
            const int target = targets_copy[i];
            if (target == ignore_id) continue;
            const double* prow = probs->data() + static_cast<std::int64_t>(i) * v;
            double* drow = dl + static_cast<std::int64_t>(i) * v;
            for (std::int64_t j = 0; j < v; ++j) drow[j] += g * prow[j];
            drow[target] -= g;
        }
    });
    return out;
}

// ---- grad_check ------------------------------------------------------------

GradCheckReport grad_check(const std::function<Tensor()>& f,
                           std::span<const std::pair<std::string, Tensor>> params, double eps) {
    if (eps < 1e-7 || eps > 1e-3)
        throw std::invalid_argument("grad_check: eps " + std::to_string(eps) +
                                    " outside [1e-7, 1e-3]");

    const auto eval = [&f]() {
        Tensor loss = f();
        if (!loss.is_scalar())
            throw std::invalid_argument("grad_check: f must return a scalar, got " +
                                        shape_to_string(loss.shape()));
        return loss.item();
    };

    const double base_a = eval();
    const double base_b = eval();
    if (std::memcmp(&base_a, &base_b, sizeof(double)) != 0)
        throw std::runtime_error("grad_check: f is not deterministic (" + std::to_string(base_a) +
                                 " vs " + std::to_string(base_b) + ")");

    // analytic pass
    std::vector<std::vector<double>> analytic;
    {
        Tape tape;
        Tensor loss = f();
        tape.backward(loss);
        for (const auto& [name, p] : params) {
            if (p.has_grad())
                analytic.emplace_back(p.grad().begin(), p.grad().end());
            else
                analytic.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
        }
    }

    GradCheckReport report;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        const auto& name = params[pi].first;
        Tensor p = params[pi].second;
        auto vals = p.mutable_values();
        double worst = 0.0;
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double saved = vals[i];
            vals[i] = saved + eps;
            const double up = eval();
            vals[i] = saved - eps;
            const double down = eval();
            vals[i] = saved;
            const double numeric = (up - down) / (2.0 * eps);
            const double a = analytic[pi][i];
            const double rel = std::abs(a - numeric) /
                               std::max({1.0, std::abs(a), std::abs(numeric)});
            worst = std::max(worst, rel);
        }
        report.entries.push_back({name, worst});
        report.max_rel_err = std::max(report.max_rel_err, worst);
    }
    return report;
}

} // namespace smetod
