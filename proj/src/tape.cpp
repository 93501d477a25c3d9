#include "crfd/tape.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>

namespace crfd {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Shape of a broadcast binary result under the trailing-dimension rule, or
// throws when the operands are incompatible.
Shape broadcast_shape(const Shape& a, const Shape& b) {
  size_t ra = a.size(), rb = b.size();
  size_t r = std::max(ra, rb);
  Shape out(r, 1);
  for (size_t i = 0; i < r; ++i) {
    int da = i < ra ? a[ra - 1 - i] : 1;
    int db = i < rb ? b[rb - 1 - i] : 1;
    if (da != db && da != 1 && db != 1)
      throw std::invalid_argument("shapes " + shape_str(a) + " and " + shape_str(b) +
                                  " are not broadcastable");
    out[r - 1 - i] = std::max(da, db);
  }
  return out;
}

// Row-major strides of `s` aligned to a broadcast target of rank r; broadcast
// dims get stride 0.
std::vector<std::int64_t> broadcast_strides(const Shape& s, const Shape& out) {
  size_t r = out.size();
  std::vector<std::int64_t> st(r, 0);
  std::int64_t acc = 1;
  for (size_t i = 0; i < s.size(); ++i) {
    size_t si = s.size() - 1 - i;
    size_t oi = r - 1 - i;
    st[oi] = (s[si] == 1 && out[oi] != 1) ? 0 : acc;
    acc *= s[si];
  }
  return st;
}

// Odometer over the broadcast result; yields (a_off, b_off) per element.
template <typename F>
void for_each_broadcast(const Shape& out, const Shape& sa, const Shape& sb, F&& f) {
  std::int64_t n = shape_numel(out);
  size_t r = out.size();
  if (r == 0) {
    f(0, 0, 0);
    return;
  }
  auto sta = broadcast_strides(sa, out);
  auto stb = broadcast_strides(sb, out);
  std::vector<int> idx(r, 0);
  std::int64_t ao = 0, bo = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    f(i, ao, bo);
    for (size_t d = r; d-- > 0;) {
      ++idx[d];
      ao += sta[d];
      bo += stb[d];
      if (idx[d] < out[d]) break;
      ao -= static_cast<std::int64_t>(idx[d]) * sta[d];
      bo -= static_cast<std::int64_t>(idx[d]) * stb[d];
      idx[d] = 0;
    }
  }
}

std::vector<int> normalize_axes(const std::vector<int>& axes, int rank) {
  std::vector<int> out;
  if (axes.empty()) {
    out.resize(static_cast<size_t>(rank));
    for (int i = 0; i < rank; ++i) out[static_cast<size_t>(i)] = i;
    return out;
  }
  for (int a : axes) {
    int ax = a < 0 ? a + rank : a;
    if (ax < 0 || ax >= rank)
      throw std::invalid_argument("reduce axis " + std::to_string(a) + " out of range for rank " +
                                  std::to_string(rank));
    out.push_back(ax);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace

Tensor Tape::make_out(Shape shape, std::vector<double> values,
                      const std::initializer_list<const Tensor*>& inputs) {
  bool needs = false;
  for (const Tensor* t : inputs) needs = needs || t->needs_grad();
  auto d = std::make_shared<TensorData>();
  d->shape = std::move(shape);
  d->values = std::move(values);
  d->needs_grad = needs;
  return Tensor(std::move(d));
}

void Tape::record(std::string op, const Tensor& out, std::function<void(Tape&)> fn) {
  if (!recording_ || !out.needs_grad()) return;  // forward-only subgraph
  nodes_.push_back(Node{std::move(op), out, std::move(fn)});
}

std::vector<double>* Tape::grad_ptr(const Tensor& t) {
  auto it = grads_.find(t.id());
  return it == grads_.end() ? nullptr : &it->second;
}

std::vector<double>& Tape::grad_buf(const Tensor& t) {
  auto it = grads_.find(t.id());
  if (it == grads_.end())
    it = grads_.emplace(t.id(), std::vector<double>(static_cast<size_t>(t.size()), 0.0)).first;
  return it->second;
}

bool Tape::has_grad(const Tensor& t) const { return grads_.count(t.id()) > 0; }

Tensor Tape::grad(const Tensor& t) const {
  auto it = grads_.find(t.id());
  if (it == grads_.end()) return Tensor::zeros(t.shape());
  return Tensor::from(t.shape(), it->second);
}

void Tape::backward(const Tensor& root) {
  if (root.size() != 1)
    throw std::invalid_argument("backward() requires a scalar root, shape is " + shape_str(root.shape()));
  grads_.clear();
  grads_[root.id()] = {1.0};
  for (size_t i = nodes_.size(); i-- > 0;) nodes_[i].backward(*this);
}

std::string Tape::first_nan_node() const {
  for (size_t i = 0; i < nodes_.size(); ++i)
    if (nodes_[i].out.has_nan()) return nodes_[i].op + "#" + std::to_string(i);
  return {};
}

// ---------------------------------------------------------------------------
// Elementwise binary ops

namespace {
enum class BinOp { Add, Sub, Mul, Div };
}

static Tensor binary_op(Tape& tape, const Tensor& a, const Tensor& b, BinOp op, const char* name);

Tensor Tape::add(const Tensor& a, const Tensor& b) { return binary_op(*this, a, b, BinOp::Add, "add"); }
Tensor Tape::sub(const Tensor& a, const Tensor& b) { return binary_op(*this, a, b, BinOp::Sub, "sub"); }
Tensor Tape::mul(const Tensor& a, const Tensor& b) { return binary_op(*this, a, b, BinOp::Mul, "mul"); }
Tensor Tape::div(const Tensor& a, const Tensor& b) { return binary_op(*this, a, b, BinOp::Div, "div"); }

struct TapeOps {
  static Tensor make(Tape& t, Shape s, std::vector<double> v,
                     std::initializer_list<const Tensor*> in) {
    return t.make_out(std::move(s), std::move(v), in);
  }
  static void rec(Tape& t, std::string op, const Tensor& out, std::function<void(Tape&)> fn) {
    t.record(std::move(op), out, std::move(fn));
  }
  static std::vector<double>* gp(Tape& t, const Tensor& x) { return t.grad_ptr(x); }
  static std::vector<double>* acc(Tape& t, const Tensor& x) {
    return x.needs_grad() ? &t.grad_buf(x) : nullptr;
  }
};

static Tensor binary_op(Tape& tape, const Tensor& a, const Tensor& b, BinOp op, const char* name) {
  Shape os = broadcast_shape(a.shape(), b.shape());
  std::vector<double> v(static_cast<size_t>(shape_numel(os)));
  const double* pa = a.data();
  const double* pb = b.data();
  if (a.shape() == b.shape()) {
    size_t n = v.size();
    switch (op) {
      case BinOp::Add: for (size_t i = 0; i < n; ++i) v[i] = pa[i] + pb[i]; break;
      case BinOp::Sub: for (size_t i = 0; i < n; ++i) v[i] = pa[i] - pb[i]; break;
      case BinOp::Mul: for (size_t i = 0; i < n; ++i) v[i] = pa[i] * pb[i]; break;
      case BinOp::Div: for (size_t i = 0; i < n; ++i) v[i] = pa[i] / pb[i]; break;
    }
  } else {
    for_each_broadcast(os, a.shape(), b.shape(), [&](std::int64_t i, std::int64_t ao, std::int64_t bo) {
      switch (op) {
        case BinOp::Add: v[static_cast<size_t>(i)] = pa[ao] + pb[bo]; break;
        case BinOp::Sub: v[static_cast<size_t>(i)] = pa[ao] - pb[bo]; break;
        case BinOp::Mul: v[static_cast<size_t>(i)] = pa[ao] * pb[bo]; break;
        case BinOp::Div: v[static_cast<size_t>(i)] = pa[ao] / pb[bo]; break;
      }
    });
  }
  Tensor out = TapeOps::make(tape, os, std::move(v), {&a, &b});
  TapeOps::rec(tape, name, out, [a, b, out, op](Tape& t) {
    auto* g = TapeOps::gp(t, out);
    if (!g) return;
    auto* ga = TapeOps::acc(t, a);
    auto* gb = TapeOps::acc(t, b);
    const double* pa = a.data();
    const double* pb = b.data();
    const double* pg = g->data();
    for_each_broadcast(out.shape(), a.shape(), b.shape(),
                       [&](std::int64_t i, std::int64_t ao, std::int64_t bo) {
      double gi = pg[i];
      switch (op) {
        case BinOp::Add:
          if (ga) (*ga)[static_cast<size_t>(ao)] += gi;
          if (gb) (*gb)[static_cast<size_t>(bo)] += gi;
          break;
        case BinOp::Sub:
          if (ga) (*ga)[static_cast<size_t>(ao)] += gi;
          if (gb) (*gb)[static_cast<size_t>(bo)] -= gi;
          break;
        case BinOp::Mul:
          if (ga) (*ga)[static_cast<size_t>(ao)] += gi * pb[bo];
          if (gb) (*gb)[static_cast<size_t>(bo)] += gi * pa[ao];
          break;
        case BinOp::Div:
          if (ga) (*ga)[static_cast<size_t>(ao)] += gi / pb[bo];
          if (gb) (*gb)[static_cast<size_t>(bo)] -= gi * pa[ao] / (pb[bo] * pb[bo]);
          break;
      }
    });
  });
  return out;
}

Tensor Tape::add_scalar(const Tensor& a, double s) {
  std::vector<double> v(a.values());
  for (double& x : v) x += s;
  Tensor out = make_out(a.shape(), std::move(v), {&a});
  record("add_scalar", out, [a, out](Tape& t) {
    auto* g = t.grad_ptr(out);
    if (!g) return;
    auto* ga = TapeOps::acc(t, a);
    if (!ga) return;
    for (size_t i = 0; i < g->size(); ++i) (*ga)[i] += (*g)[i];
  });
  return out;
}

Tensor Tape::mul_scalar(const Tensor& a, double s) {
  std::vector<double> v(a.values());
  for (double& x : v) x *= s;
  Tensor out = make_out(a.shape(), std::move(v), {&a});
  record("mul_scalar", out, [a, out, s](Tape& t) {
    auto* g = t.grad_ptr(out);
    if (!g) return;
    auto* ga = TapeOps::acc(t, a);
    if (!ga) return;
    for (size_t i = 0; i < g->size(); ++i) (*ga)[i] += (*g)[i] * s;
  });
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise nonlinearities

template <typename Fwd, typename Bwd>
static Tensor unary_op(Tape& tape, const Tensor& x, const char* name, Fwd fwd, Bwd bwd) {
  std::vector<double> v(static_cast<size_t>(x.size()));
  const double* px = x.data();
  for (size_t i = 0; i < v.size(); ++i) v[i] = fwd(px[i]);
  Tensor out = TapeOps::make(tape, x.shape(), std::move(v), {&x});
  TapeOps::rec(tape, name, out, [x, out, bwd](Tape& t) {
    auto* g = TapeOps::gp(t, out);
    if (!g) return;
    auto* gx = TapeOps::acc(t, x);
    if (!gx) return;
    const double* px = x.data();
    const double* py = out.data();
    for (size_t i = 0; i < g->size(); ++i) (*gx)[i] += (*g)[i] * bwd(px[i], py[i]);
  });
  return out;
}

Tensor Tape::relu(const Tensor& x) {
  return unary_op(*this, x, "relu",
                  [](double v) { return v > 0.0 ? v : 0.0; },
                  [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor Tape::leaky_relu(const Tensor& x, double slope) {
  return unary_op(*this, x, "leaky_relu",
                  [slope](double v) { return v >= 0.0 ? v : slope * v; },
                  [slope](double v, double) { return v >= 0.0 ? 1.0 : slope; });
}

Tensor Tape::clamp(const Tensor& x, double lo, double hi) {
  if (!(lo < hi)) throw std::invalid_argument("clamp requires lo < hi");
  return unary_op(*this, x, "clamp",
                  [lo, hi](double v) { return v < lo ? lo : (v > hi ? hi : v); },
                  [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

Tensor Tape::exp(const Tensor& x) {
  return unary_op(*this, x, "exp",
                  [](double v) { return std::exp(v); },
                  [](double, double y) { return y; });
}

Tensor Tape::log(const Tensor& x) {
  for (double v : x.values())
    if (!(v > 0.0))
      throw std::invalid_argument("log() requires strictly positive inputs, got " + std::to_string(v));
  return unary_op(*this, x, "log",
                  [](double v) { return std::log(v); },
                  [](double v, double) { return 1.0 / v; });
}

Tensor Tape::sin(const Tensor& x) {
  return unary_op(*this, x, "sin",
                  [](double v) { return std::sin(v); },
                  [](double v, double) { return std::cos(v); });
}

Tensor Tape::cos(const Tensor& x) {
  return unary_op(*this, x, "cos",
                  [](double v) { return std::cos(v); },
                  [](double v, double) { return -std::sin(v); });
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw std::invalid_argument("matmul expects rank-2 operands, got " + shape_str(a.shape()) +
                                " x " + shape_str(b.shape()));
  int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2)
    throw std::invalid_argument("matmul inner dimensions disagree: " + shape_str(a.shape()) +
                                " x " + shape_str(b.shape()));
  std::vector<double> v(static_cast<size_t>(m) * n, 0.0);
  const double* pa = a.data();
  const double* pb = b.data();
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p) {
      double av = pa[i * k + p];
      const double* brow = pb + static_cast<size_t>(p) * n;
      double* orow = v.data() + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  Tensor out = make_out({m, n}, std::move(v), {&a, &b});
  record("matmul", out, [a, b, out, m, k, n](Tape& t) {
    auto* g = t.grad_ptr(out);
    if (!g) return;
    const double* pg = g->data();
    const double* pa = a.data();
    const double* pb = b.data();
    if (auto* ga = TapeOps::acc(t, a)) {
      // dA = g . B^T
      for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
          double s = 0.0;
          const double* grow = pg + static_cast<size_t>(i) * n;
          const double* brow = pb + static_cast<size_t>(p) * n;
          for (int j = 0; j < n; ++j) s += grow[j] * brow[j];
          (*ga)[static_cast<size_t>(i) * k + p] += s;
        }
    }
    if (auto* gb = TapeOps::acc(t, b)) {
      // dB = A^T . g
      for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
          double av = pa[static_cast<size_t>(i) * k + p];
          const double* grow = pg + static_cast<size_t>(i) * n;
          double* brow = gb->data() + static_cast<size_t>(p) * n;
          for (int j = 0; j < n; ++j) brow[j] += av * grow[j];
        }
    }
  });
  return out;
}

Tensor Tape::linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() != 1 && x.rank() != 2)
    throw std::invalid_argument("linear expects x of rank 1 or 2, got " + shape_str(x.shape()));
  if (w.rank() != 2 || b.rank() != 1)
    throw std::invalid_argument("linear expects w rank 2 and b rank 1");
  bool vec = x.rank() == 1;
  int n = vec ? 1 : x.dim(0);
  int in = vec ? x.dim(0) : x.dim(1);
  int outw = w.dim(0);
  if (w.dim(1) != in)
    throw std::invalid_argument("linear: weight " + shape_str(w.shape()) +
                                " does not accept input features " + std::to_string(in));
  if (b.dim(0) != outw)
    throw std::invalid_argument("linear: bias " + shape_str(b.shape()) + " does not match " +
                                std::to_string(outw) + " outputs");
  std::vector<double> v(static_cast<size_t>(n) * outw);
  const double* px = x.data();
  const double* pw = w.data();
  const double* pbias = b.data();
  for (int r = 0; r < n; ++r) {
    const double* xrow = px + static_cast<size_t>(r) * in;
    double* orow = v.data() + static_cast<size_t>(r) * outw;
    for (int o = 0; o < outw; ++o) {
      const double* wrow = pw + static_cast<size_t>(o) * in;
      double s = pbias[o];
      for (int i = 0; i < in; ++i) s += xrow[i] * wrow[i];
      orow[o] = s;
    }
  }
  Shape os = vec ? Shape{outw} : Shape{n, outw};
  Tensor out = make_out(std::move(os), std::move(v), {&x, &w, &b});
  record("linear", out, [x, w, b, out, n, in, outw](Tape& t) {
    auto* g = t.grad_ptr(out);
    if (!g) return;
    const double* pg = g->data();
    const double* px = x.data();
    const double* pw = w.data();
    if (auto* gx = TapeOps::acc(t, x)) {
      for (int r = 0; r < n; ++r) {
        const double* grow = pg + static_cast<size_t>(r) * outw;
        double* xrow = gx->data() + static_cast<size_t>(r) * in;
        for (int o = 0; o < outw; ++o) {
          double gv = grow[o];
          const double* wrow = pw + static_cast<size_t>(o) * in;
          for (int i = 0; i < in; ++i) xrow[i] += gv * wrow[i];
        }
      }
    }
    if (auto* gw = TapeOps::acc(t, w)) {
      for (int r = 0; r < n; ++r) {
        const double* grow = pg + static_cast<size_t>(r) * outw;
        const double* xrow = px + static_cast<size_t>(r) * in;
        for (int o = 0; o < outw; ++o) {
          double gv = grow[o];
          double* wrow = gw->data() + static_cast<size_t>(o) * in;
          for (int i = 0; i < in; ++i) wrow[i] += gv * xrow[i];
        }
      }
    }
    if (auto* gb = TapeOps::acc(t, b)) {
      for (int r = 0; r < n; ++r) {
        const double* grow = pg + static_cast<size_t>(r) * outw;
        for (int o = 0; o < outw; ++o) (*gb)[static_cast<size_t>(o)] += grow[o];
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Convolutions

Tensor Tape::conv2d_s2(const Tensor& x, const Tensor& kernels, const Tensor& bias) {
  if (x.rank() != 3) throw std::invalid_argument("conv2d_s2 expects input [C,H,W]");
  if (kernels.rank() != 4 || kernels.dim(2) != 4 || kernels.dim(3) != 4)
    throw std::invalid_argument("conv2d_s2 expects kernels [Cout,Cin,4,4]");
  int cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  int cout = kernels.dim(0);
  if (kernels.dim(1) != cin)
    throw std::invalid_argument("conv2d_s2: kernel Cin " + std::to_string(kernels.dim(1)) +
                                " does not match input channels " + std::to_string(cin));
  if (bias.rank() != 1 || bias.dim(0) != cout) throw std::invalid_argument("conv2d_s2: bias must be [Cout]");
  if (h < 2 || w < 2 || h % 2 != 0 || w % 2 != 0)
    throw std::invalid_argument("conv2d_s2 requires even spatial dims >= 2, got " + shape_str(x.shape()));
  int oh = h / 2, ow = w / 2;
  std::vector<double> v(static_cast<size_t>(cout) * oh * ow);
  const double* px = x.data();
  const double* pk = kernels.data();
  const double* pb = bias.data();
  for (int co = 0; co < cout; ++co)
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j) {
        double s = pb[co];
        for (int ci = 0; ci < cin; ++ci) {
          const double* kk = pk + ((static_cast<size_t>(co) * cin + ci) * 16);
          for (int u = 0; u < 4; ++u) {
            int yy = 2 * i - 1 + u;
            if (yy < 0 || yy >= h) continue;
            for (int vv = 0; vv < 4; ++vv) {
              int xx = 2 * j - 1 + vv;
              if (xx < 0 || xx >= w) continue;
              s += px[(static_cast<size_t>(ci) * h + yy) * w + xx] * kk[u * 4 + vv];
            }
          }
        }
        v[(static_cast<size_t>(co) * oh + i) * ow + j] = s;
      }
  Tensor out = make_out({cout, oh, ow}, std::move(v), {&x, &kernels, &bias});
  record("conv2d_s2", out, [x, kernels, bias, out, cin, h, w, cout, oh, ow](Tape& t) {
    auto* g = t.grad_ptr(out);
    if (!g) return;
    auto* gx = TapeOps::acc(t, x);
    auto* gk = TapeOps::acc(t, kernels);
    auto* gb = TapeOps::acc(t, bias);
    const double* pg = g->data();
    const double* px = x.data();
    const double* pk = kernels.data();
    for (int co = 0; co < cout; ++co)
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j) {
          double gv = pg[(static_cast<size_t>(co) * oh + i) * ow + j];
          if (gb) (*gb)[static_cast<size_t>(co)] += gv;
          if (!gx && !gk) continue;
          for (int ci = 0; ci < cin; ++ci) {
            size_t kbase = (static_cast<size_t>(co) * cin + ci) * 16;
            for (int u = 0; u < 4; ++u) {
              int yy = 2 * i - 1 + u;
              if (yy < 0 || yy >= h) continue;
              for (int vv = 0; vv < 4; ++vv) {
                int xx = 2 * j - 1 + vv;
                if (xx < 0 || xx >= w) continue;
                size_t xoff = (static_cast<size_t>(ci) * h + yy) * w + xx;
                if (gx) (*gx)[xoff] += gv * pk[kbase + u * 4 + vv];
                if (gk) (*gk)[kbase + u * 4 + vv] += gv * px[xoff];
              }
            }
          }
        }
  });
  return out;
}

Tensor Tape::conv_transpose3d_s2(const Tensor& x, const Tensor& kernels, const Tensor& bias) {
  if (x.rank() != 4) throw std::invalid_argument("conv_transpose3d_s2 expects input [C,D,D,D]");
  if (kernels.rank() != 5 || kernels.dim(2) != 4 || kernels.dim(3) != 4 || kernels.dim(4) != 4)
    throw std::invalid_argument("conv_transpose3d_s2 expects kernels [Cin,Cout,4,4,4]");
  int cin = x.dim(0), d = x.dim(1);
  if (x.dim(2) != d || x.dim(3) != d)
    throw std::invalid_argument("conv_transpose3d_s2 expects cubic input, got " + shape_str(x.shape()));
  if (kernels.dim(0) != cin)
    throw std::invalid_argument("conv_transpose3d_s2: kernel Cin does not match input channels");
  int cout = kernels.dim(1);
  if (bias.rank() != 1 || bias.dim(0) != cout)
    throw std::invalid_argument("conv_transpose3d_s2: bias must be [Cout]");
  int od = 2 * d;  // (d-1)*2 - 2*1 + 4
  std::vector<double> v(static_cast<size_t>(cout) * od * od * od);
  const double* pb = bias.data();
  for (int co = 0; co < cout; ++co)
    std::fill_n(v.begin() + static_cast<std::ptrdiff_t>(static_cast<size_t>(co) * od * od * od),
                static_cast<size_t>(od) * od * od, pb[co]);
  const double* px = x.data();
  const double* pk = kernels.data();
  auto scatter = [cin, d, cout, od](auto&& touch) {
    for (int ci = 0; ci < cin; ++ci)
      for (int iz = 0; iz < d; ++iz)
        for (int iy = 0; iy < d; ++iy)
          for (int ix = 0; ix < d; ++ix) {
            size_t xoff = ((static_cast<size_t>(ci) * d + iz) * d + iy) * d + ix;
            for (int co = 0; co < cout; ++co) {
              size_t kbase = ((static_cast<size_t>(ci) * cout + co) * 64);
              for (int kz = 0; kz < 4; ++kz) {
                int oz = 2 * iz - 1 + kz;
                if (oz < 0 || oz >= od) continue;
                for (int ky = 0; ky < 4; ++ky) {
                  int oy = 2 * iy - 1 + ky;
                  if (oy < 0 || oy >= od) continue;
                  for (int kx = 0; kx < 4; ++kx) {
                    int ox = 2 * ix - 1 + kx;
                    if (ox < 0 || ox >= od) continue;
                    size_t ooff = ((static_cast<size_t>(co) * od + oz) * od + oy) * od + ox;
                    touch(xoff, kbase + static_cast<size_t>(kz) * 16 + ky * 4 + kx, ooff);
                  }
                }
              }
            }
          }
  };
  scatter([&](size_t xo, size_t ko, size_t oo) { v[oo] += px[xo] * pk[ko]; });
  Tensor out = make_out({cout, od, od, od}, std::move(v), {&x, &kernels, &bias});
  record("conv_transpose3d_s2", out, [x, kernels, bias, out, cin, d, cout, od](Tape& t) {
    auto* g = t.grad_ptr(out);
    if (!g) return;
    auto* gx = TapeOps::acc(t, x);
    auto* gk = TapeOps::acc(t, kernels);
    auto* gb = TapeOps::acc(t, bias);
    const double* pg = g->data();
    const double* px = x.data();
    const double* pk = kernels.data();
    std::int64_t vox = static_cast<std::int64_t>(od) * od * od;
    if (gb) {
      for (int co = 0; co < cout; ++co) {
        double s = 0.0;
        const double* base = pg + static_cast<size_t>(co) * vox;
        for (std::int64_t i = 0; i < vox; ++i) s += base[i];
        (*gb)[static_cast<size_t>(co)] += s;
      }
    }
    if (!gx && !gk) return;
    // Gather form: one pass over (ci, input voxel, co); the valid kernel-tap
    // window is precomputed per input coordinate.
    std::vector<std::array<int, 2>> win(static_cast<size_t>(d));
    for (int i = 0; i < d; ++i) {
      int lo = 0;
      while (2 * i - 1 + lo < 0) ++lo;
      int hi = 3;
      while (2 * i - 1 + hi >= od) --hi;
      win[static_cast<size_t>(i)] = {lo, hi};
    }
    for (int ci = 0; ci < cin; ++ci)
      for (int iz = 0; iz < d; ++iz)
        for (int iy = 0; iy < d; ++iy)
          for (int ix = 0; ix < d; ++ix) {
            size_t xoff = ((static_cast<size_t>(ci) * d + iz) * d + iy) * d + ix;
            double xv = px[xoff];
            double dx_acc = 0.0;
            auto [z0, z1] = win[static_cast<size_t>(iz)];
            auto [y0, y1] = win[static_cast<size_t>(iy)];
            auto [x0, x1] = win[static_cast<size_t>(ix)];
            for (int co = 0; co < cout; ++co) {
              const double* kbase = pk + (static_cast<size_t>(ci) * cout + co) * 64;
              double* gkbase = gk ? gk->data() + (static_cast<size_t>(ci) * cout + co) * 64 : nullptr;
              const double* gout = pg + static_cast<size_t>(co) * vox;
              for (int kz = z0; kz <= z1; ++kz) {
                std::int64_t oz = 2 * iz - 1 + kz;
                for (int ky = y0; ky <= y1; ++ky) {
                  std::int64_t oy = 2 * iy - 1 + ky;
                  const double* grow = gout + (oz * od + oy) * od + (2 * ix - 1);
                  const double* krow = kbase + kz * 16 + ky * 4;
                  if (gkbase) {
                    double* gkrow = gkbase + kz * 16 + ky * 4;
                    for (int kx = x0; kx <= x1; ++kx) {
                      double gv = grow[kx];
                      dx_acc += gv * krow[kx];
                      gkrow[kx] += gv * xv;
                    }
                  } else {
                    for (int kx = x0; kx <= x1; ++kx) dx_acc += grow[kx] * krow[kx];
                  }
                }
              }
            }
            if (gx) (*gx)[xoff] += dx_acc;
          }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Grid sampling

Tensor Tape::grid_sample_trilinear(const Tensor& grid, const Tensor& points) {
  return grid_sample_trilinear(grid, points, 0, grid.dim(0));
}

namespace {
struct AxisSample {
  int i0, i1;
  double t;
  bool clamped;
};

inline AxisSample sample_axis(double p, int d) {
  double g = (p + 1.0) * 0.5 * (d - 1);
  bool clamped = false;
  if (g <= 0.0) {
    g = 0.0;
    clamped = p < -1.0;
  } else if (g >= d - 1) {
    g = d - 1;
    clamped = p > 1.0;
  }
  int i0 = static_cast<int>(g);
  if (i0 > d - 2) i0 = d - 2;
  return {i0, i0 + 1, g - i0, clamped};
}
}  // namespace

Tensor Tape::grid_sample_trilinear(const Tensor& grid, const Tensor& points, int c0, int c1) {
  if (grid.rank() != 4) throw std::invalid_argument("grid_sample expects grid [F,D,D,D]");
  int f = grid.dim(0), d = grid.dim(1);
  if (grid.dim(2) != d || grid.dim(3) != d)
    throw std::invalid_argument("grid_sample expects a cubic grid, got " + shape_str(grid.shape()));
  if (d < 2) throw std::invalid_argument("grid_sample requires grid D >= 2");
  if (points.rank() != 2 || points.dim(1) != 3)
    throw std::invalid_argument("grid_sample expects points [N,3]");
  if (c0 < 0 || c1 > f || c0 >= c1) throw std::invalid_argument("grid_sample channel range invalid");
  int n = points.dim(0);
  int nc = c1 - c0;
  std::vector<double> v(static_cast<size_t>(n) * nc);
  const double* pg = grid.data();
  const double* pp = points.data();
  std::int64_t plane = static_cast<std::int64_t>(d) * d;
  std::int64_t vol = plane * d;
  for (int i = 0; i < n; ++i) {
    // points columns are (x,y,z); x indexes the innermost grid dim.
    AxisSample ax = sample_axis(pp[i * 3 + 0], d);
    AxisSample ay = sample_axis(pp[i * 3 + 1], d);
    AxisSample az = sample_axis(pp[i * 3 + 2], d);
    double wz[2] = {1.0 - az.t, az.t};
    double wy[2] = {1.0 - ay.t, ay.t};
    double wx[2] = {1.0 - ax.t, ax.t};
    int iz[2] = {az.i0, az.i1};
    int iy[2] = {ay.i0, ay.i1};
    int ix[2] = {ax.i0, ax.i1};
    for (int c = 0; c < nc; ++c) {
      const double* gc = pg + static_cast<size_t>(c0 + c) * vol;
      double acc = 0.0;
      for (int bz = 0; bz < 2; ++bz)
        for (int by = 0; by < 2; ++by) {
          double wzy = wz[bz] * wy[by];
          const double* row = gc + iz[bz] * plane + static_cast<std::int64_t>(iy[by]) * d;
          acc += wzy * (wx[0] * row[ix[0]] + wx[1] * row[ix[1]]);
        }
      v[static_cast<size_t>(i) * nc + c] = acc;
    }
  }
  Tensor out = make_out({n, nc}, std::move(v), {&grid, &points});
  record("grid_sample_trilinear", out, [grid, points, out, c0, nc, d, n](Tape& t) {
    auto* g = t.grad_ptr(out);
    if (!g) return;
    auto* ggrid = TapeOps::acc(t, grid);
    auto* gpts = TapeOps::acc(t, points);
    if (!ggrid && !gpts) return;
    const double* pgrad = g->data();
    const double* pg = grid.data();
    const double* pp = points.data();
    std::int64_t plane = static_cast<std::int64_t>(d) * d;
    std::int64_t vol = plane * d;
    double scale = 0.5 * (d - 1);
    for (int i = 0; i < n; ++i) {
      AxisSample a[3] = {sample_axis(pp[i * 3 + 0], d), sample_axis(pp[i * 3 + 1], d),
                         sample_axis(pp[i * 3 + 2], d)};
      double w[3][2] = {{1.0 - a[0].t, a[0].t}, {1.0 - a[1].t, a[1].t}, {1.0 - a[2].t, a[2].t}};
      int idx[3][2] = {{a[0].i0, a[0].i1}, {a[1].i0, a[1].i1}, {a[2].i0, a[2].i1}};
      double dp[3] = {0.0, 0.0, 0.0};
      for (int c = 0; c < nc; ++c) {
        double gv = pgrad[static_cast<size_t>(i) * nc + c];
        if (gv == 0.0) continue;
        const double* gc = pg + static_cast<size_t>(c0 + c) * vol;
        double* gg = ggrid ? ggrid->data() + static_cast<size_t>(c0 + c) * vol : nullptr;
        for (int bz = 0; bz < 2; ++bz)
          for (int by = 0; by < 2; ++by)
            for (int bx = 0; bx < 2; ++bx) {
              std::int64_t off = idx[2][bz] * plane + static_cast<std::int64_t>(idx[1][by]) * d + idx[0][bx];
              double wgt = w[2][bz] * w[1][by] * w[0][bx];
              if (gg) gg[off] += gv * wgt;
              if (gpts) {
                double val = gc[off];
                dp[0] += gv * val * (bx ? 1.0 : -1.0) * w[1][by] * w[2][bz];
                dp[1] += gv * val * (by ? 1.0 : -1.0) * w[0][bx] * w[2][bz];
                dp[2] += gv * val * (bz ? 1.0 : -1.0) * w[0][bx] * w[1][by];
              }
            }
      }
      if (gpts)
        for (int axis = 0; axis < 3; ++axis)
          if (!a[axis].clamped) (*gpts)[static_cast<size_t>(i) * 3 + axis] += dp[axis] * scale;
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Reductions and shape ops

Tensor Tape::reduce_sum(const Tensor& x, const std::vector<int>& axes) {
  auto ax = normalize_axes(axes, x.rank());
  Shape os;
  std::vector<bool> reduced(static_cast<size_t>(x.rank()), false);
  for (int a : ax) reduced[static_cast<size_t>(a)] = true;
  for (int i = 0; i < x.rank(); ++i)
    if (!reduced[static_cast<size_t>(i)]) os.push_back(x.dim(i));
  // Strides into the output for every input element (0 on reduced dims).
  Shape xs = x.shape();
  std::vector<std::int64_t> ostrides(xs.size(), 0);
  {
    std::int64_t acc = 1;
    for (size_t i = xs.size(); i-- > 0;) {
      if (!reduced[i]) {
        ostrides[i] = acc;
        acc *= xs[i];
      }
    }
  }
  std::vector<double> v(static_cast<size_t>(shape_numel(os)), 0.0);
  const double* px = x.data();
  size_t r = xs.size();
  std::vector<int> idx(r, 0);
  std::int64_t oo = 0;
  std::int64_t nel = x.size();
  for (std::int64_t i = 0; i < nel; ++i) {
    v[static_cast<size_t>(oo)] += px[i];
    for (size_t dd = r; dd-- > 0;) {
      ++idx[dd];
      oo += ostrides[dd];
      if (idx[dd] < xs[dd]) break;
      oo -= static_cast<std::int64_t>(idx[dd]) * ostrides[dd];
      idx[dd] = 0;
    }
  }
  Tensor out = make_out(std::move(os), std::move(v), {&x});
  record("reduce_sum", out, [x, out, ostrides, xs](Tape& t) {
    auto* g = t.grad_ptr(out);
    if (!g) return;
    auto* gx = TapeOps::acc(t, x);
    if (!gx) return;
    const double* pg = g->data();
    size_t r = xs.size();
    std::vector<int> idx(r, 0);
    std::int64_t oo = 0;
    std::int64_t nel = x.size();
    for (std::int64_t i = 0; i < nel; ++i) {
      (*gx)[static_cast<size_t>(i)] += pg[oo];
      for (size_t dd = r; dd-- > 0;) {
        ++idx[dd];
        oo += ostrides[dd];
        if (idx[dd] < xs[dd]) break;
        oo -= static_cast<std::int64_t>(idx[dd]) * ostrides[dd];
        idx[dd] = 0;
      }
    }
  });
  return out;
}

Tensor Tape::reduce_mean(const Tensor& x, const std::vector<int>& axes) {
  auto ax = normalize_axes(axes, x.rank());
  std::int64_t cnt = 1;
  for (int a : ax) cnt *= x.dim(a);
  Tensor s = reduce_sum(x, axes);
  return mul_scalar(s, 1.0 / static_cast<double>(cnt));
}

Tensor Tape::cumsum_exclusive_last(const Tensor& x) {
  if (x.rank() < 1) throw std::invalid_argument("cumsum_exclusive_last requires rank >= 1");
  int n = x.dim(x.rank() - 1);
  std::int64_t rows = x.size() / n;
  std::vector<double> v(static_cast<size_t>(x.size()));
  const double* px = x.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* xi = px + r * n;
    double* yo = v.data() + r * n;
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      yo[i] = acc;
      acc += xi[i];
    }
  }
  Tensor out = make_out(x.shape(), std::move(v), {&x});
  record("cumsum_exclusive", out, [x, out, n, rows](Tape& t) {
    auto* g = t.grad_ptr(out);
    if (!g) return;
    auto* gx = TapeOps::acc(t, x);
    if (!gx) return;
    const double* pg = g->data();
    for (std::int64_t r = 0; r < rows; ++r) {
      const double* gi = pg + r * n;
      double* go = gx->data() + r * n;
      double acc = 0.0;
      for (int i = n; i-- > 0;) {
        go[i] += acc;
        acc += gi[i];
      }
    }
  });
  return out;
}

Tensor Tape::concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat of zero tensors");
  int rank = parts[0].rank();
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw std::invalid_argument("concat axis out of range");
  Shape os = parts[0].shape();
  int total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != rank) throw std::invalid_argument("concat rank mismatch");
    for (int i = 0; i < rank; ++i)
      if (i != axis && p.dim(i) != os[static_cast<size_t>(i)])
        throw std::invalid_argument("concat dim mismatch at axis " + std::to_string(i));
    total += p.dim(axis);
  }
  os[static_cast<size_t>(axis)] = total;
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= os[static_cast<size_t>(i)];
  for (int i = axis + 1; i < rank; ++i) inner *= os[static_cast<size_t>(i)];
  std::vector<double> v(static_cast<size_t>(shape_numel(os)));
  std::int64_t row = static_cast<std::int64_t>(total) * inner;
  std::int64_t at = 0;
  for (const Tensor& p : parts) {
    std::int64_t prow = static_cast<std::int64_t>(p.dim(axis)) * inner;
    const double* src = p.data();
    for (std::int64_t o = 0; o < outer; ++o)
      std::memcpy(v.data() + o * row + at, src + o * prow, static_cast<size_t>(prow) * sizeof(double));
    at += prow;
  }
  bool needs = false;
  for (const Tensor& p : parts) needs = needs || p.needs_grad();
  auto dptr = std::make_shared<TensorData>();
  dptr->shape = os;
  dptr->values = std::move(v);
  dptr->needs_grad = needs;
  Tensor out{dptr};
  record("concat", out, [parts, out, outer, inner, row](Tape& t) {
    auto* g = t.grad_ptr(out);
    if (!g) return;
    const double* pg = g->data();
    std::int64_t at = 0;
    for (const Tensor& p : parts) {
      std::int64_t prow = p.size() / outer;
      if (auto* gp = TapeOps::acc(t, p)) {
        for (std::int64_t o = 0; o < outer; ++o) {
          const double* src = pg + o * row + at;
          double* dst = gp->data() + o * prow;
          for (std::int64_t i = 0; i < prow; ++i) dst[i] += src[i];
        }
      }
      at += prow;
    }
  });
  return out;
}

Tensor Tape::reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.size())
    throw std::invalid_argument("reshape from " + shape_str(x.shape()) + " to " + shape_str(shape) +
                                " changes element count");
  Tensor out = make_out(std::move(shape), x.values(), {&x});
  record("reshape", out, [x, out](Tape& t) {
    auto* g = t.grad_ptr(out);
    if (!g) return;
    auto* gx = TapeOps::acc(t, x);
    if (!gx) return;
    for (size_t i = 0; i < g->size(); ++i) (*gx)[i] += (*g)[i];
  });
  return out;
}

Tensor Tape::slice(const Tensor& x, int axis, int start, int len) {
  int rank = x.rank();
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw std::invalid_argument("slice axis out of range");
  if (start < 0 || len <= 0 || start + len > x.dim(axis))
    throw std::invalid_argument("slice range [" + std::to_string(start) + "," +
                                std::to_string(start + len) + ") out of bounds for dim " +
                                std::to_string(x.dim(axis)));
  Shape os = x.shape();
  os[static_cast<size_t>(axis)] = len;
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);
  for (int i = axis + 1; i < rank; ++i) inner *= x.dim(i);
  std::int64_t xrow = static_cast<std::int64_t>(x.dim(axis)) * inner;
  std::int64_t orow = static_cast<std::int64_t>(len) * inner;
  std::vector<double> v(static_cast<size_t>(outer * orow));
  const double* px = x.data();
  for (std::int64_t o = 0; o < outer; ++o)
    std::memcpy(v.data() + o * orow, px + o * xrow + static_cast<std::int64_t>(start) * inner,
                static_cast<size_t>(orow) * sizeof(double));
  Tensor out = make_out(std::move(os), std::move(v), {&x});
  record("slice", out, [x, out, outer, inner, xrow, orow, start](Tape& t) {
    auto* g = t.grad_ptr(out);
    if (!g) return;
    auto* gx = TapeOps::acc(t, x);
    if (!gx) return;
    const double* pg = g->data();
    for (std::int64_t o = 0; o < outer; ++o) {
      double* dst = gx->data() + o * xrow + static_cast<std::int64_t>(start) * inner;
      const double* src = pg + o * orow;
      for (std::int64_t i = 0; i < orow; ++i) dst[i] += src[i];
    }
  });
  return out;
}

Tensor Tape::transpose2d(const Tensor& x) {
  if (x.rank() != 2) throw std::invalid_argument("transpose2d expects rank 2");
  int a = x.dim(0), b = x.dim(1);
  std::vector<double> v(static_cast<size_t>(x.size()));
  const double* px = x.data();
  for (int i = 0; i < a; ++i)
    for (int j = 0; j < b; ++j) v[static_cast<size_t>(j) * a + i] = px[static_cast<size_t>(i) * b + j];
  Tensor out = make_out({b, a}, std::move(v), {&x});
  record("transpose2d", out, [x, out, a, b](Tape& t) {
    auto* g = t.grad_ptr(out);
    if (!g) return;
    auto* gx = TapeOps::acc(t, x);
    if (!gx) return;
    const double* pg = g->data();
    for (int i = 0; i < a; ++i)
      for (int j = 0; j < b; ++j)
        (*gx)[static_cast<size_t>(i) * b + j] += pg[static_cast<size_t>(j) * a + i];
  });
  return out;
}

Tensor Tape::expand_rows(const Tensor& x, int n) {
  if (x.rank() != 1) throw std::invalid_argument("expand_rows expects a vector");
  if (n < 1) throw std::invalid_argument("expand_rows requires n >= 1");
  int c = x.dim(0);
  std::vector<double> v(static_cast<size_t>(n) * c);
  for (int r = 0; r < n; ++r)
    std::memcpy(v.data() + static_cast<size_t>(r) * c, x.data(), static_cast<size_t>(c) * sizeof(double));
  Tensor out = make_out({n, c}, std::move(v), {&x});
  record("expand_rows", out, [x, out, n, c](Tape& t) {
    auto* g = t.grad_ptr(out);
    if (!g) return;
    auto* gx = TapeOps::acc(t, x);
    if (!gx) return;
    const double* pg = g->data();
    for (int r = 0; r < n; ++r)
      for (int i = 0; i < c; ++i) (*gx)[static_cast<size_t>(i)] += pg[static_cast<size_t>(r) * c + i];
  });
  return out;
}

Tensor Tape::maxpool_over_points(const Tensor& x) {
  if (x.rank() != 2) throw std::invalid_argument("maxpool_over_points expects [C,N]");
  int c = x.dim(0), n = x.dim(1);
  std::vector<double> v(static_cast<size_t>(c));
  std::vector<int> arg(static_cast<size_t>(c));
  const double* px = x.data();
  for (int i = 0; i < c; ++i) {
    const double* row = px + static_cast<size_t>(i) * n;
    int best = 0;
    for (int j = 1; j < n; ++j)
      if (row[j] > row[best]) best = j;  // strict: first index wins ties
    v[static_cast<size_t>(i)] = row[best];
    arg[static_cast<size_t>(i)] = best;
  }
  Tensor out = make_out({c}, std::move(v), {&x});
  record("maxpool_over_points", out, [x, out, arg, n](Tape& t) {
    auto* g = t.grad_ptr(out);
    if (!g) return;
    auto* gx = TapeOps::acc(t, x);
    if (!gx) return;
    for (size_t i = 0; i < arg.size(); ++i)
      (*gx)[i * static_cast<size_t>(n) + static_cast<size_t>(arg[i])] += (*g)[i];
  });
  return out;
}

Tensor Tape::positional_encoding(const Tensor& x, int n_freq) {
  if (x.rank() != 2) throw std::invalid_argument("positional_encoding expects [N,d]");
  if (n_freq < 1) throw std::invalid_argument("positional_encoding requires L >= 1");
  int n = x.dim(0), d = x.dim(1);
  int width = 2 * n_freq * d;
  std::vector<double> v(static_cast<size_t>(n) * width);
  const double* px = x.data();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) {
      double p = px[static_cast<size_t>(i) * d + j];
      for (int k = 0; k < n_freq; ++k) {
        double f = std::ldexp(kPi, k);  // 2^k * pi
        size_t col = (static_cast<size_t>(j) * n_freq + k) * 2;
        v[static_cast<size_t>(i) * width + col] = std::sin(f * p);
        v[static_cast<size_t>(i) * width + col + 1] = std::cos(f * p);
      }
    }
  Tensor out = make_out({n, width}, std::move(v), {&x});
  record("positional_encoding", out, [x, out, n, d, n_freq, width](Tape& t) {
    auto* g = t.grad_ptr(out);
    if (!g) return;
    auto* gx = TapeOps::acc(t, x);
    if (!gx) return;
    const double* pg = g->data();
    const double* py = out.data();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) {
        double acc = 0.0;
        for (int k = 0; k < n_freq; ++k) {
          double f = std::ldexp(kPi, k);
          size_t col = static_cast<size_t>(i) * width + (static_cast<size_t>(j) * n_freq + k) * 2;
          double s = py[col], c = py[col + 1];
          acc += f * (pg[col] * c - pg[col + 1] * s);
        }
        (*gx)[static_cast<size_t>(i) * d + j] += acc;
      }
  });
  return out;
}

}  // namespace crfd
