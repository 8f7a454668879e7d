#include "aufa/diff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <type_traits>

#include "aufa/error.hpp"
#include "aufa/kernels.hpp"

namespace aufa::diff {
namespace {

// The message may be a callable so that hot paths only format it on failure.
template <class Msg>
void require(bool ok, Msg&& what) {
  if (ok) return;
  if constexpr (std::is_invocable_v<Msg>) {
    throw Error(ErrorKind::DimensionMismatch, what());
  } else {
    throw Error(ErrorKind::DimensionMismatch, std::string(what));
  }
}

void require_finite(const Matrix& m, const char* where) {
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (!std::isfinite(m[i])) {
      throw Error(ErrorKind::InvalidArgument, std::string(where) + ": non-finite entry");
    }
  }
}

Tape& tape_of(const Value& v) {
  if (!v.valid()) throw Error(ErrorKind::InvalidArgument, "use of an unbound Value");
  return *v.tape();
}

Tape& same_tape(const Value& a, const Value& b) {
  Tape& t = tape_of(a);
  if (b.tape() != &t) throw Error(ErrorKind::InvalidArgument, "Values from different tapes");
  return t;
}

}  // namespace

// ---- Value ----------------------------------------------------------------

const Matrix& Value::data() const { return tape_of(*this).data(id_); }
Matrix Value::grad() const { return tape_of(*this).grad(id_); }

double Value::item() const {
  const Matrix& d = data();
  if (d.size() != 1) throw Error(ErrorKind::DimensionMismatch, "item() on " + d.shape_string());
  return d[0];
}

// ---- Tape -----------------------------------------------------------------

Value Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Value(this, nodes_.size() - 1);
}

Value Tape::constant(Matrix m) {
  require_finite(m, "constant");
  Node n;
  n.value = std::move(m);
  n.leaf = true;
  return push(std::move(n));
}

Value Tape::variable(Matrix m) {
  require_finite(m, "variable");
  Node n;
  n.grad = Matrix(m.rows(), m.cols());
  n.value = std::move(m);
  n.leaf = true;
  n.requires_grad = true;
  return push(std::move(n));
}

Value Tape::param(Parameter& p) {
  if (!p.grad.same_shape(p.value)) p.grad = Matrix(p.value.rows(), p.value.cols());
  Node n;
  n.external = &p;
  n.leaf = true;
  n.requires_grad = true;
  return push(std::move(n));
}

Value Tape::record(Matrix out, std::span<const Value> inputs, BackwardFn fn) {
  Node n;
  n.value = std::move(out);
  for (const Value& v : inputs) {
    if (v.tape() != this) throw Error(ErrorKind::InvalidArgument, "input from another tape");
    n.requires_grad = n.requires_grad || nodes_[v.id()].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(fn);
  return push(std::move(n));
}

const Matrix& Tape::data(std::size_t id) const {
  const Node& n = nodes_.at(id);
  return n.external ? n.external->value : n.value;
}

Matrix Tape::grad(std::size_t id) const {
  const Node& n = nodes_.at(id);
  if (n.external) return n.external->grad;
  if (n.grad.empty() && data(id).size() != 0) return Matrix(data(id).rows(), data(id).cols());
  return n.grad;
}

Matrix& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  n.touched = true;
  if (n.external) return n.external->grad;
  if (n.grad.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(const Value& loss) {
  if (loss.tape() != this) throw Error(ErrorKind::InvalidArgument, "loss from another tape");
  const Matrix& l = data(loss.id());
  if (l.rows() != 1 || l.cols() != 1) {
    throw Error(ErrorKind::DimensionMismatch, "backward needs a scalar loss, got " + l.shape_string());
  }
  for (Node& n : nodes_) {
    n.touched = false;
    if (!n.leaf && !n.grad.empty()) n.grad.fill(0.0);
  }
  if (!nodes_[loss.id()].requires_grad) return;
  grad_buffer(loss.id())[0] += 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.touched || !n.backward) continue;
    n.backward(*this, n.grad);
  }
}

// ---- primitives -----------------------------------------------------------

Value matmul(const Value& a, const Value& b) {
  Tape& t = same_tape(a, b);
  require(a.cols() == b.rows(), [&] { return "matmul: " + a.data().shape_string() + " x " + b.data().shape_string(); });
  Matrix out;
  kernels::gemm_nn(a.data(), b.data(), out);
  const std::size_t ia = a.id(), ib = b.id();
  const Value in[] = {a, b};
  return t.record(std::move(out), in, [ia, ib](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(ia)) kernels::gemm_nt(g, tp.data(ib), tp.grad_buffer(ia), true);
    if (tp.requires_grad(ib)) kernels::gemm_tn(tp.data(ia), g, tp.grad_buffer(ib), true);
  });
}

Value transpose(const Value& a) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.id();
  const Value in[] = {a};
  return t.record(a.data().transposed(), in, [ia](Tape& tp, const Matrix& g) {
    Matrix& ga = tp.grad_buffer(ia);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) ga(c, r) += g(r, c);
  });
}

namespace {

Value add_scaled(const Value& a, const Value& b, double sb, const char* name) {
  Tape& t = same_tape(a, b);
  require(a.data().same_shape(b.data()),
          [&] { return std::string(name) + ": " + a.data().shape_string() + " vs " + b.data().shape_string(); });
  Matrix out = a.data();
  kernels::axpy(sb, b.data(), out);
  const std::size_t ia = a.id(), ib = b.id();
  const Value in[] = {a, b};
  return t.record(std::move(out), in, [ia, ib, sb](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(ia)) kernels::axpy(1.0, g, tp.grad_buffer(ia));
    if (tp.requires_grad(ib)) kernels::axpy(sb, g, tp.grad_buffer(ib));
  });
}

}  // namespace

Value add(const Value& a, const Value& b) { return add_scaled(a, b, 1.0, "add"); }
Value sub(const Value& a, const Value& b) { return add_scaled(a, b, -1.0, "sub"); }

Value scale(const Value& a, double s) {
  Tape& t = tape_of(a);
  Matrix out = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= s;
  const std::size_t ia = a.id();
  const Value in[] = {a};
  return t.record(std::move(out), in,
                  [ia, s](Tape& tp, const Matrix& g) { kernels::axpy(s, g, tp.grad_buffer(ia)); });
}

Value hadamard(const Value& a, const Value& b) {
  Tape& t = same_tape(a, b);
  require(a.data().same_shape(b.data()), "hadamard: shape mismatch");
  Matrix out = a.data();
  const Matrix& bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bd[i];
  const std::size_t ia = a.id(), ib = b.id();
  const Value in[] = {a, b};
  return t.record(std::move(out), in, [ia, ib](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(ia)) {
      Matrix& ga = tp.grad_buffer(ia);
      const Matrix& y = tp.data(ib);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
    }
    if (tp.requires_grad(ib)) {
      Matrix& gb = tp.grad_buffer(ib);
      const Matrix& x = tp.data(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
    }
  });
}

Value relu(const Value& x) {
  Tape& t = tape_of(x);
  Matrix out = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
  const std::size_t ix = x.id();
  const Value in[] = {x};
  return t.record(std::move(out), in, [ix](Tape& tp, const Matrix& g) {
    Matrix& gx = tp.grad_buffer(ix);
    const Matrix& xv = tp.data(ix);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] > 0.0) gx[i] += g[i];
  });
}

Value row_softmax(const Value& x, double scale) {
  if (!(scale > 0.0)) throw Error(ErrorKind::InvalidArgument, "row_softmax: scale must be > 0");
  Tape& t = tape_of(x);
  const Matrix& xv = x.data();
  Matrix out(xv.rows(), xv.cols());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    auto in = xv.row(r);
    auto o = out.row(r);
    const double mx = *std::max_element(in.begin(), in.end());
    double z = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      o[c] = std::exp(scale * (in[c] - mx));
      z += o[c];
    }
    for (double& v : o) v /= z;
  }
  const std::size_t ix = x.id();
  const std::size_t iy = t.size();
  const Value in[] = {x};
  return t.record(std::move(out), in, [ix, iy, scale](Tape& tp, const Matrix& g) {
    const Matrix& y = tp.data(iy);
    Matrix& gx = tp.grad_buffer(ix);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      auto yr = y.row(r);
      auto gr = g.row(r);
      double dot = 0.0;
      for (std::size_t c = 0; c < yr.size(); ++c) dot += gr[c] * yr[c];
      auto out_r = gx.row(r);
      for (std::size_t c = 0; c < yr.size(); ++c) out_r[c] += scale * yr[c] * (gr[c] - dot);
    }
  });
}

Value row_layer_norm(const Value& x, const Value& g, const Value& b, double eps) {
  if (!(eps > 0.0)) throw Error(ErrorKind::InvalidArgument, "row_layer_norm: eps must be > 0");
  Tape& t = same_tape(x, g);
  same_tape(x, b);
  const Matrix& xv = x.data();
  const std::size_t m = xv.rows(), n = xv.cols();
  require(g.rows() == 1 && g.cols() == n && b.rows() == 1 && b.cols() == n,
          [&] { return "row_layer_norm: gain/offset must be 1x" + std::to_string(n); });
  Matrix xhat(m, n);
  std::vector<double> inv_std(m);
  for (std::size_t r = 0; r < m; ++r) {
    auto in = xv.row(r);
    double mean = 0.0;
    for (double v : in) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : in) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    auto h = xhat.row(r);
    for (std::size_t c = 0; c < n; ++c) h[c] = (in[c] - mean) * inv_std[r];
  }
  Matrix out(m, n);
  const Matrix& gv = g.data();
  const Matrix& bv = b.data();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out(r, c) = xhat(r, c) * gv[c] + bv[c];

  const std::size_t ix = x.id(), ig = g.id(), ib = b.id();
  const Value in[] = {x, g, b};
  return t.record(std::move(out), in,
                  [ix, ig, ib, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                      Tape& tp, const Matrix& dy) {
    const std::size_t m = dy.rows(), n = dy.cols();
    if (tp.requires_grad(ig)) {
      Matrix& dg = tp.grad_buffer(ig);
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) dg[c] += dy(r, c) * xhat(r, c);
    }
    if (tp.requires_grad(ib)) {
      Matrix& db = tp.grad_buffer(ib);
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) db[c] += dy(r, c);
    }
    if (tp.requires_grad(ix)) {
      const Matrix& gain = tp.data(ig);
      Matrix& dx = tp.grad_buffer(ix);
      std::vector<double> dxhat(n);
      for (std::size_t r = 0; r < m; ++r) {
        double mean_d = 0.0, mean_dh = 0.0;
        for (std::size_t c = 0; c < n; ++c) {
          dxhat[c] = dy(r, c) * gain[c];
          mean_d += dxhat[c];
          mean_dh += dxhat[c] * xhat(r, c);
        }
        mean_d /= static_cast<double>(n);
        mean_dh /= static_cast<double>(n);
        for (std::size_t c = 0; c < n; ++c)
          dx(r, c) += inv_std[r] * (dxhat[c] - mean_d - xhat(r, c) * mean_dh);
      }
    }
  });
}

Value affine(const Value& x, const Value& w, const Value& bias) {
  Tape& t = same_tape(x, w);
  same_tape(x, bias);
  require(x.cols() == w.rows(), [&] { return "affine: " + x.data().shape_string() + " x " + w.data().shape_string(); });
  require(bias.rows() == 1 && bias.cols() == w.cols(), [&] { return "affine: bias must be 1x" + std::to_string(w.cols()); });
  Matrix out;
  kernels::gemm_nn(x.data(), w.data(), out);
  const Matrix& bv = bias.data();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto o = out.row(r);
    for (std::size_t c = 0; c < o.size(); ++c) o[c] += bv[c];
  }
  const std::size_t ix = x.id(), iw = w.id(), ib = bias.id();
  const Value in[] = {x, w, bias};
  return t.record(std::move(out), in, [ix, iw, ib](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(ix)) kernels::gemm_nt(g, tp.data(iw), tp.grad_buffer(ix), true);
    if (tp.requires_grad(iw)) kernels::gemm_tn(tp.data(ix), g, tp.grad_buffer(iw), true);
    if (tp.requires_grad(ib)) {
      Matrix& gb = tp.grad_buffer(ib);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        auto gr = g.row(r);
        for (std::size_t c = 0; c < gr.size(); ++c) gb[c] += gr[c];
      }
    }
  });
}

Value concat_cols(std::span<const Value> xs) {
  require(!xs.empty(), "concat_cols: no inputs");
  Tape& t = tape_of(xs.front());
  const std::size_t m = xs.front().rows();
  std::size_t total = 0;
  for (const Value& v : xs) {
    require(v.tape() == &t, "concat_cols: mixed tapes");
    require(v.rows() == m, "concat_cols: row count mismatch");
    total += v.cols();
  }
  Matrix out(m, total);
  std::vector<std::size_t> ids, offsets;
  std::size_t off = 0;
  for (const Value& v : xs) {
    const Matrix& d = v.data();
    for (std::size_t r = 0; r < m; ++r)
      std::copy(d.row(r).begin(), d.row(r).end(), out.row(r).begin() + static_cast<std::ptrdiff_t>(off));
    ids.push_back(v.id());
    offsets.push_back(off);
    off += v.cols();
  }
  return t.record(std::move(out), xs, [ids, offsets](Tape& tp, const Matrix& g) {
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!tp.requires_grad(ids[k])) continue;
      Matrix& gk = tp.grad_buffer(ids[k]);
      for (std::size_t r = 0; r < gk.rows(); ++r)
        for (std::size_t c = 0; c < gk.cols(); ++c) gk(r, c) += g(r, offsets[k] + c);
    }
  });
}

Value concat_rows(std::span<const Value> xs) {
  require(!xs.empty(), "concat_rows: no inputs");
  Tape& t = tape_of(xs.front());
  const std::size_t n = xs.front().cols();
  std::size_t total = 0;
  for (const Value& v : xs) {
    require(v.tape() == &t, "concat_rows: mixed tapes");
    require(v.cols() == n, "concat_rows: column count mismatch");
    total += v.rows();
  }
  std::vector<double> buf;
  buf.reserve(total * n);
  std::vector<std::size_t> ids, offsets;
  for (const Value& v : xs) {
    offsets.push_back(buf.size());
    ids.push_back(v.id());
    buf.insert(buf.end(), v.data().values().begin(), v.data().values().end());
  }
  return t.record(Matrix(total, n, std::move(buf)), xs, [ids, offsets](Tape& tp, const Matrix& g) {
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!tp.requires_grad(ids[k])) continue;
      Matrix& gk = tp.grad_buffer(ids[k]);
      for (std::size_t i = 0; i < gk.size(); ++i) gk[i] += g[offsets[k] + i];
    }
  });
}

Value flatten(const Value& x) {
  Tape& t = tape_of(x);
  const std::size_t ix = x.id();
  const Value in[] = {x};
  return t.record(Matrix(1, x.data().size(), x.data().values()), in, [ix](Tape& tp, const Matrix& g) {
    kernels::axpy(1.0, Matrix(tp.data(ix).rows(), tp.data(ix).cols(), g.values()), tp.grad_buffer(ix));
  });
}

Value sum(const Value& x) {
  Tape& t = tape_of(x);
  double s = 0.0;
  for (double v : x.data().values()) s += v;
  const std::size_t ix = x.id();
  const Value in[] = {x};
  return t.record(Matrix(1, 1, s), in, [ix](Tape& tp, const Matrix& g) {
    Matrix& gx = tp.grad_buffer(ix);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0];
  });
}

Value column_sum(const Value& x) {
  Tape& t = tape_of(x);
  const Matrix& xv = x.data();
  Matrix out(1, xv.cols());
  for (std::size_t r = 0; r < xv.rows(); ++r)
    for (std::size_t c = 0; c < xv.cols(); ++c) out[c] += xv(r, c);
  const std::size_t ix = x.id();
  const Value in[] = {x};
  return t.record(std::move(out), in, [ix](Tape& tp, const Matrix& g) {
    Matrix& gx = tp.grad_buffer(ix);
    for (std::size_t r = 0; r < gx.rows(); ++r)
      for (std::size_t c = 0; c < gx.cols(); ++c) gx(r, c) += g[c];
  });
}

Value select_rows(const Value& x, std::span<const std::size_t> rows) {
  Tape& t = tape_of(x);
  const Matrix& xv = x.data();
  Matrix out(rows.size(), xv.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    require(rows[k] < xv.rows(), "select_rows: row index out of range");
    std::copy(xv.row(rows[k]).begin(), xv.row(rows[k]).end(), out.row(k).begin());
  }
  const std::size_t ix = x.id();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  const Value in[] = {x};
  return t.record(std::move(out), in, [ix, idx = std::move(idx)](Tape& tp, const Matrix& g) {
    Matrix& gx = tp.grad_buffer(ix);
    for (std::size_t k = 0; k < idx.size(); ++k)
      for (std::size_t c = 0; c < g.cols(); ++c) gx(idx[k], c) += g(k, c);
  });
}

Value lerp(const Value& a, const Value& b, double w) {
  Tape& t = same_tape(a, b);
  require(a.data().same_shape(b.data()), "lerp: shape mismatch");
  const Matrix& av = a.data();
  const Matrix& bv = b.data();
  Matrix out(av.rows(), av.cols());
  const double wa = 1.0 - w;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = wa * av[i] + w * bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  const Value in[] = {a, b};
  return t.record(std::move(out), in, [ia, ib, wa, w](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(ia)) kernels::axpy(wa, g, tp.grad_buffer(ia));
    if (tp.requires_grad(ib)) kernels::axpy(w, g, tp.grad_buffer(ib));
  });
}

Value cross_entropy(const Value& logits, std::span<const int> labels) {
  Tape& t = tape_of(logits);
  const Matrix& z = logits.data();
  require(z.cols() == 2, [&] { return "cross_entropy: logits must have 2 columns, got " + z.shape_string(); });
  require(z.rows() == labels.size() && z.rows() > 0, "cross_entropy: one label per row required");
  for (int y : labels)
    if (y != 0 && y != 1) throw Error(ErrorKind::InvalidArgument, "cross_entropy: label outside {0,1}");
  const std::size_t b = z.rows();
  Matrix soft(b, 2);
  double loss = 0.0;
  for (std::size_t r = 0; r < b; ++r) {
    const double mx = std::max(z(r, 0), z(r, 1));
    const double e0 = std::exp(z(r, 0) - mx), e1 = std::exp(z(r, 1) - mx);
    const double lse = mx + std::log(e0 + e1);
    loss += lse - z(r, static_cast<std::size_t>(labels[r]));
    soft(r, 0) = e0 / (e0 + e1);
    soft(r, 1) = e1 / (e0 + e1);
  }
  loss /= static_cast<double>(b);
  const std::size_t iz = logits.id();
  std::vector<int> y(labels.begin(), labels.end());
  const Value in[] = {logits};
  return t.record(Matrix(1, 1, loss), in,
                  [iz, y = std::move(y), soft = std::move(soft)](Tape& tp, const Matrix& g) {
    Matrix& gz = tp.grad_buffer(iz);
    const double k = g[0] / static_cast<double>(y.size());
    for (std::size_t r = 0; r < y.size(); ++r)
      for (std::size_t c = 0; c < 2; ++c)
        gz(r, c) += k * (soft(r, c) - (static_cast<std::size_t>(y[r]) == c ? 1.0 : 0.0));
  });
}

Value kl_divergence(const Value& p, const Value& q) {
  Tape& t = same_tape(p, q);
  const Matrix& pv = p.data();
  const Matrix& qv = q.data();
  require(pv.same_shape(qv), [&] { return "kl_divergence: " + pv.shape_string() + " vs " + qv.shape_string(); });
  require(pv.rows() > 0, "kl_divergence: empty batch");
  for (const Matrix* m : {&pv, &qv}) {
    for (std::size_t r = 0; r < m->rows(); ++r) {
      double s = 0.0;
      for (double v : m->row(r)) s += v;
      if (std::abs(s - 1.0) > 1e-6) {
        throw Error(ErrorKind::InvalidArgument,
                    "kl_divergence: row " + std::to_string(r) + " sums to " + std::to_string(s));
      }
    }
  }
  const double inv_b = 1.0 / static_cast<double>(pv.rows());
  double total = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    total += pv[i] * (std::log(std::max(pv[i], kProbClamp)) - std::log(std::max(qv[i], kProbClamp)));
  }
  const std::size_t ip = p.id(), iq = q.id();
  const Value in[] = {p, q};
  return t.record(Matrix(1, 1, total * inv_b), in, [ip, iq, inv_b](Tape& tp, const Matrix& g) {
    const Matrix& pv = tp.data(ip);
    const Matrix& qv = tp.data(iq);
    const double k = g[0] * inv_b;
    if (tp.requires_grad(ip)) {
      Matrix& gp = tp.grad_buffer(ip);
      for (std::size_t i = 0; i < pv.size(); ++i) {
        const double dlog = pv[i] > kProbClamp ? 1.0 : 0.0;
        gp[i] += k * (std::log(std::max(pv[i], kProbClamp)) - std::log(std::max(qv[i], kProbClamp)) + dlog);
      }
    }
    if (tp.requires_grad(iq)) {
      Matrix& gq = tp.grad_buffer(iq);
      for (std::size_t i = 0; i < qv.size(); ++i)
        if (qv[i] > kProbClamp) gq[i] -= k * pv[i] / qv[i];
    }
  });
}

}  // namespace aufa::diff
