#include "tfuse/ops.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>

namespace tfuse {
namespace {

Tape& shared_tape(const Var& a, const Var& b) {
  if (!a.valid() || !b.valid()) throw std::logic_error("unbound Var passed to an op");
  if (&a.tape() != &b.tape()) throw std::logic_error("operands live on different tapes");
  return a.tape();
}

[[noreturn]] void shape_error(std::string_view op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
}

Index normalize_axis(int axis, Index rank, std::string_view op) {
  const Index a = axis < 0 ? rank + axis : axis;
  if (a < 0 || a >= rank) {
    throw std::invalid_argument(std::string(op) + ": axis " + std::to_string(axis) + " invalid for rank " +
                                std::to_string(rank));
  }
  return a;
}

struct AxisSplit {
  Index outer = 1;
  Index n = 1;
  Index inner = 1;
};

AxisSplit split_at(const Shape& shape, Index axis) {
  AxisSplit s;
  for (Index i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (Index i = axis + 1; i < static_cast<Index>(shape.size()); ++i) s.inner *= shape[i];
  return s;
}

Var binary(Binary kind, const Var& a, const Var& b) {
  Tape& tape = shared_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  static constexpr std::string_view kNames[] = {"add", "sub", "mul"};
  if (av.shape() != bv.shape()) shape_error(kNames[static_cast<int>(kind)], av.shape(), bv.shape());
  Tensor out(av.shape());
  OpKind op = OpKind::kAdd;
  switch (kind) {
    case Binary::kAdd: out.values() = av.values() + bv.values(); op = OpKind::kAdd; break;
    case Binary::kSub: out.values() = av.values() - bv.values(); op = OpKind::kSub; break;
    case Binary::kMul: out.values() = av.values().cwiseProduct(bv.values()); op = OpKind::kMul; break;
  }
  const NodeId ia = a.id(), ib = b.id();
  return tape.record(op, {ia, ib}, std::move(out), [kind, ia, ib](Tape& t, NodeId self) {
    const Eigen::VectorXd& g = t.grad(self).values();
    if (t.requires_grad(ia)) {
      auto& ga = t.grad_buffer(ia).values();
      if (kind == Binary::kMul) ga += g.cwiseProduct(t.value(ib).values());
      else ga += g;
    }
    if (t.requires_grad(ib)) {
      auto& gb = t.grad_buffer(ib).values();
      if (kind == Binary::kAdd) gb += g;
      else if (kind == Binary::kSub) gb -= g;
      else gb += g.cwiseProduct(t.value(ia).values());
    }
  });
}

// Unrolls padded receptive fields into columns: rows are (c, ki, kj), columns
// are (n, oh, ow).
void im2col(const double* x, Index n_img, Index c, Index h, Index w, Index kh, Index kw, int stride, int pad,
            Index oh, Index ow, RowMatrixXd& cols) {
  const Index plane = oh * ow;
  cols.setZero(c * kh * kw, n_img * plane);
  for (Index n = 0; n < n_img; ++n) {
    for (Index ch = 0; ch < c; ++ch) {
      const double* src = x + (n * c + ch) * h * w;
      for (Index ki = 0; ki < kh; ++ki) {
        for (Index kj = 0; kj < kw; ++kj) {
          double* dst = cols.data() + ((ch * kh + ki) * kw + kj) * cols.cols() + n * plane;
          for (Index r = 0; r < oh; ++r) {
            const Index ih = r * stride - pad + ki;
            if (ih < 0 || ih >= h) continue;
            for (Index q = 0; q < ow; ++q) {
              const Index iw = q * stride - pad + kj;
              if (iw >= 0 && iw < w) dst[r * ow + q] = src[ih * w + iw];
            }
          }
        }
      }
    }
  }
}

void col2im(const RowMatrixXd& cols, Index n_img, Index c, Index h, Index w, Index kh, Index kw, int stride,
            int pad, Index oh, Index ow, double* dx) {
  const Index plane = oh * ow;
  for (Index n = 0; n < n_img; ++n) {
    for (Index ch = 0; ch < c; ++ch) {
      double* dst = dx + (n * c + ch) * h * w;
      for (Index ki = 0; ki < kh; ++ki) {
        for (Index kj = 0; kj < kw; ++kj) {
          const double* src = cols.data() + ((ch * kh + ki) * kw + kj) * cols.cols() + n * plane;
          for (Index r = 0; r < oh; ++r) {
            const Index ih = r * stride - pad + ki;
            if (ih < 0 || ih >= h) continue;
            for (Index q = 0; q < ow; ++q) {
              const Index iw = q * stride - pad + kj;
              if (iw >= 0 && iw < w) dst[ih * w + iw] += src[r * ow + q];
            }
          }
        }
      }
    }
  }
}

Var conv2d_impl(const Var& x, const Var& kernel, const Var* bias, int stride, int padding) {
  Tape& tape = shared_tape(x, kernel);
  if (bias) shared_tape(x, *bias);
  const Tensor& xv = x.value();
  const Tensor& kv = kernel.value();
  if (xv.rank() != 3 && xv.rank() != 4) throw std::invalid_argument("conv2d: input must be CxHxW or NxCxHxW");
  if (kv.rank() != 4) throw std::invalid_argument("conv2d: kernel must be C'xCxkhxkw");
  if (stride < 1 || padding < 0) throw std::invalid_argument("conv2d: stride must be >= 1 and padding >= 0");
  const bool batched = xv.rank() == 4;
  const Index n_img = batched ? xv.dim(0) : 1;
  const Index c = xv.dim(batched ? 1 : 0);
  const Index h = xv.dim(batched ? 2 : 1);
  const Index w = xv.dim(batched ? 3 : 2);
  const Index co = kv.dim(0), kh = kv.dim(2), kw = kv.dim(3);
  if (kv.dim(1) != c) shape_error("conv2d", xv.shape(), kv.shape());
  if (kh > h + 2 * padding || kw > w + 2 * padding) {
    throw std::invalid_argument("conv2d: kernel " + shape_string(kv.shape()) + " larger than padded input " +
                                shape_string(xv.shape()));
  }
  if (bias && (bias->value().rank() != 1 || bias->value().dim(0) != co)) {
    shape_error("conv2d bias", bias->value().shape(), Shape{co});
  }
  const Index oh = (h + 2 * padding - kh) / stride + 1;
  const Index ow = (w + 2 * padding - kw) / stride + 1;
  const Index plane = oh * ow;

  auto cols = std::make_shared<RowMatrixXd>();
  im2col(xv.data(), n_img, c, h, w, kh, kw, stride, padding, oh, ow, *cols);
  RowMatrixXd out_mat(co, n_img * plane);
  out_mat.noalias() = kv.matrix(co) * (*cols);
  if (bias) out_mat.colwise() += bias->value().values();

  Tensor out(batched ? Shape{n_img, co, oh, ow} : Shape{co, oh, ow});
  for (Index n = 0; n < n_img; ++n) {
    for (Index o = 0; o < co; ++o) {
      std::copy_n(out_mat.data() + o * out_mat.cols() + n * plane, plane, out.data() + (n * co + o) * plane);
    }
  }

  std::vector<NodeId> inputs{x.id(), kernel.id()};
  if (bias) inputs.push_back(bias->id());
  const NodeId ix = x.id(), ik = kernel.id(), ib = bias ? bias->id() : -1;
  const bool needs = tape.grad_enabled() && (x.requires_grad() || kernel.requires_grad() ||
                                             (bias && bias->requires_grad()));
  if (!needs) cols.reset();
  return tape.record(OpKind::kConv2d, std::move(inputs), std::move(out),
                     [=](Tape& t, NodeId self) {
                       const Tensor& g = t.grad(self);
                       RowMatrixXd gm(co, n_img * plane);
                       for (Index n = 0; n < n_img; ++n) {
                         for (Index o = 0; o < co; ++o) {
                           std::copy_n(g.data() + (n * co + o) * plane, plane, gm.data() + o * gm.cols() + n * plane);
                         }
                       }
                       if (t.requires_grad(ik)) {
                         t.grad_buffer(ik).matrix(co).noalias() += gm * cols->transpose();
                       }
                       if (ib >= 0 && t.requires_grad(ib)) {
                         t.grad_buffer(ib).values() += gm.rowwise().sum();
                       }
                       if (t.requires_grad(ix)) {
                         RowMatrixXd dcols(cols->rows(), cols->cols());
                         dcols.noalias() = t.value(ik).matrix(co).transpose() * gm;
                         col2im(dcols, n_img, c, h, w, kh, kw, stride, padding, oh, ow, t.grad_buffer(ix).data());
                       }
                     });
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  Tape& tape = shared_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) shape_error("matmul", av.shape(), bv.shape());
  const Index m = av.dim(0), n = bv.dim(1);
  Tensor out(Shape{m, n});
  out.matrix().noalias() = av.matrix() * bv.matrix();
  const NodeId ia = a.id(), ib = b.id();
  return tape.record(OpKind::kMatmul, {ia, ib}, std::move(out), [ia, ib](Tape& t, NodeId self) {
    const auto g = t.grad(self).matrix();
    if (t.requires_grad(ia)) t.grad_buffer(ia).matrix().noalias() += g * t.value(ib).matrix().transpose();
    if (t.requires_grad(ib)) t.grad_buffer(ib).matrix().noalias() += t.value(ia).matrix().transpose() * g;
  });
}

Var add_bias(const Var& x, const Var& bias) {
  Tape& tape = shared_tape(x, bias);
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  if (xv.rank() > 2 || bv.rank() != 1 || xv.matrix().cols() != bv.dim(0)) {
    shape_error("add_bias", xv.shape(), bv.shape());
  }
  Tensor out = xv;
  out.matrix().rowwise() += bv.values().transpose();
  const NodeId ix = x.id(), ib = bias.id();
  return tape.record(OpKind::kAddBias, {ix, ib}, std::move(out), [ix, ib](Tape& t, NodeId self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ix)) t.grad_buffer(ix).values() += g.values();
    if (t.requires_grad(ib)) t.grad_buffer(ib).values() += g.matrix().colwise().sum().transpose();
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) { return add_bias(matmul(x, weight), bias); }

Var conv2d(const Var& x, const Var& kernel, const Var& bias, int stride, int padding) {
  return conv2d_impl(x, kernel, &bias, stride, padding);
}

Var conv2d(const Var& x, const Var& kernel, int stride, int padding) {
  return conv2d_impl(x, kernel, nullptr, stride, padding);
}

Var avg_pool2d(const Var& x, int window) {
  const Tensor& xv = x.value();
  if (xv.rank() < 2 || window < 1) throw std::invalid_argument("avg_pool2d: needs rank >= 2 and window >= 1");
  const Index h = xv.dim(xv.rank() - 2), w = xv.dim(xv.rank() - 1);
  const Index oh = h / window, ow = w / window;
  if (oh < 1 || ow < 1) {
    throw std::invalid_argument("avg_pool2d: window " + std::to_string(window) + " larger than input " +
                                shape_string(xv.shape()));
  }
  const Index planes = xv.size() / (h * w);
  Shape out_shape = xv.shape();
  out_shape[out_shape.size() - 2] = oh;
  out_shape[out_shape.size() - 1] = ow;
  Tensor out(out_shape);
  const double norm = 1.0 / static_cast<double>(window * window);
  for (Index p = 0; p < planes; ++p) {
    const double* src = xv.data() + p * h * w;
    double* dst = out.data() + p * oh * ow;
    for (Index r = 0; r < oh; ++r) {
      for (Index q = 0; q < ow; ++q) {
        double acc = 0.0;
        for (Index i = 0; i < window; ++i) {
          for (Index j = 0; j < window; ++j) acc += src[(r * window + i) * w + q * window + j];
        }
        dst[r * ow + q] = acc * norm;
      }
    }
  }
  const NodeId ix = x.id();
  return x.tape().record(OpKind::kAvgPool, {ix}, std::move(out), [=](Tape& t, NodeId self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_buffer(ix);
    for (Index p = 0; p < planes; ++p) {
      const double* src = g.data() + p * oh * ow;
      double* dst = gx.data() + p * h * w;
      for (Index r = 0; r < oh; ++r) {
        for (Index q = 0; q < ow; ++q) {
          const double v = src[r * ow + q] * norm;
          for (Index i = 0; i < window; ++i) {
            for (Index j = 0; j < window; ++j) dst[(r * window + i) * w + q * window + j] += v;
          }
        }
      }
    }
  });
}

Var relu(const Var& x) {
  Tensor out(x.shape());
  out.values() = x.value().values().cwiseMax(0.0);
  const NodeId ix = x.id();
  return x.tape().record(OpKind::kRelu, {ix}, std::move(out), [ix](Tape& t, NodeId self) {
    const auto& xv = t.value(ix).values();
    const auto& g = t.grad(self).values();
    t.grad_buffer(ix).values() += (xv.array() > 0.0).select(g, 0.0);
  });
}

Var sigmoid(const Var& x) {
  Tensor out(x.shape());
  const auto& xv = x.value().values();
  for (Index i = 0; i < xv.size(); ++i) {
    const double z = xv[i];
    if (z >= 0) {
      out[i] = 1.0 / (1.0 + std::exp(-z));
    } else {
      const double e = std::exp(z);
      out[i] = e / (1.0 + e);
    }
  }
  const NodeId ix = x.id();
  return x.tape().record(OpKind::kSigmoid, {ix}, std::move(out), [ix](Tape& t, NodeId self) {
    const auto& y = t.value(self).values();
    t.grad_buffer(ix).values().array() += t.grad(self).values().array() * y.array() * (1.0 - y.array());
  });
}

Var add(const Var& a, const Var& b) { return binary(Binary::kAdd, a, b); }
Var sub(const Var& a, const Var& b) { return binary(Binary::kSub, a, b); }
Var mul(const Var& a, const Var& b) { return binary(Binary::kMul, a, b); }

Var scale(const Var& x, double factor) {
  Tensor out(x.shape());
  out.values() = x.value().values() * factor;
  const NodeId ix = x.id();
  return x.tape().record(OpKind::kScale, {ix}, std::move(out), [ix, factor](Tape& t, NodeId self) {
    t.grad_buffer(ix).values() += factor * t.grad(self).values();
  });
}

Var offset(const Var& x, double shift) {
  Tensor out(x.shape());
  out.values() = x.value().values().array() + shift;
  const NodeId ix = x.id();
  return x.tape().record(OpKind::kOffset, {ix}, std::move(out), [ix](Tape& t, NodeId self) {
    t.grad_buffer(ix).values() += t.grad(self).values();
  });
}

Var reduce(Reduction kind, const Var& x, int axis_in) {
  const Tensor& xv = x.value();
  const Index axis = normalize_axis(axis_in, xv.rank(), "reduce");
  const AxisSplit s = split_at(xv.shape(), axis);
  if (s.n == 0) throw std::invalid_argument("reduce: empty axis " + std::to_string(axis_in));
  Shape out_shape = xv.shape();
  out_shape.erase(out_shape.begin() + axis);
  Tensor out(out_shape);
  std::vector<Index> winners;
  if (kind == Reduction::kMax) winners.resize(static_cast<std::size_t>(s.outer * s.inner));
  for (Index o = 0; o < s.outer; ++o) {
    for (Index i = 0; i < s.inner; ++i) {
      const double* src = xv.data() + o * s.n * s.inner + i;
      double acc = kind == Reduction::kMax ? src[0] : 0.0;
      Index best = 0;
      for (Index k = 0; k < s.n; ++k) {
        const double v = src[k * s.inner];
        if (kind == Reduction::kMax) {
          if (v > acc) {
            acc = v;
            best = k;
          }
        } else {
          acc += v;
        }
      }
      if (kind == Reduction::kMean) acc /= static_cast<double>(s.n);
      if (kind == Reduction::kMax) winners[static_cast<std::size_t>(o * s.inner + i)] = best;
      out[o * s.inner + i] = acc;
    }
  }
  const NodeId ix = x.id();
  const OpKind op = kind == Reduction::kSum ? OpKind::kSum : kind == Reduction::kMean ? OpKind::kMean : OpKind::kMax;
  return x.tape().record(op, {ix}, std::move(out), [=, winners = std::move(winners)](Tape& t, NodeId self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_buffer(ix);
    const double w = kind == Reduction::kMean ? 1.0 / static_cast<double>(s.n) : 1.0;
    for (Index o = 0; o < s.outer; ++o) {
      for (Index i = 0; i < s.inner; ++i) {
        const double gi = g[o * s.inner + i];
        double* dst = gx.data() + o * s.n * s.inner + i;
        if (kind == Reduction::kMax) {
          dst[winners[static_cast<std::size_t>(o * s.inner + i)] * s.inner] += gi;
        } else {
          for (Index k = 0; k < s.n; ++k) dst[k * s.inner] += gi * w;
        }
      }
    }
  });
}

Var reduce(Reduction kind, const Var& x) {
  return reduce(kind, reshape(x, Shape{x.value().size()}), 0);
}

Var softmax(const Var& x, int axis_in) {
  const Tensor& xv = x.value();
  const Index axis = normalize_axis(axis_in, xv.rank(), "softmax");
  const AxisSplit s = split_at(xv.shape(), axis);
  if (s.n < 1) throw std::invalid_argument("softmax: empty axis");
  Tensor out(xv.shape());
  for (Index o = 0; o < s.outer; ++o) {
    for (Index i = 0; i < s.inner; ++i) {
      const double* src = xv.data() + o * s.n * s.inner + i;
      double* dst = out.data() + o * s.n * s.inner + i;
      double top = src[0];
      for (Index k = 1; k < s.n; ++k) top = std::max(top, src[k * s.inner]);
      double z = 0.0;
      for (Index k = 0; k < s.n; ++k) {
        dst[k * s.inner] = std::exp(src[k * s.inner] - top);
        z += dst[k * s.inner];
      }
      for (Index k = 0; k < s.n; ++k) dst[k * s.inner] /= z;
    }
  }
  const NodeId ix = x.id();
  return x.tape().record(OpKind::kSoftmax, {ix}, std::move(out), [=](Tape& t, NodeId self) {
    const Tensor& y = t.value(self);
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_buffer(ix);
    for (Index o = 0; o < s.outer; ++o) {
      for (Index i = 0; i < s.inner; ++i) {
        const Index base = o * s.n * s.inner + i;
        double dot = 0.0;
        for (Index k = 0; k < s.n; ++k) dot += g[base + k * s.inner] * y[base + k * s.inner];
        for (Index k = 0; k < s.n; ++k) {
          gx[base + k * s.inner] += y[base + k * s.inner] * (g[base + k * s.inner] - dot);
        }
      }
    }
  });
}

Var concat(const Var& a, const Var& b, int axis_in) {
  Tape& tape = shared_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const NodeId ia = a.id(), ib = b.id();
  if (av.empty() || bv.empty()) {
    const NodeId keep = av.empty() ? ib : ia;
    const Tensor& kept = av.empty() ? bv : av;
    return tape.record(OpKind::kConcat, {ia, ib}, kept, [keep](Tape& t, NodeId self) {
      if (t.requires_grad(keep)) t.grad_buffer(keep).values() += t.grad(self).values();
    });
  }
  if (av.rank() != bv.rank()) shape_error("concat", av.shape(), bv.shape());
  const Index axis = normalize_axis(axis_in, av.rank(), "concat");
  for (Index d = 0; d < av.rank(); ++d) {
    if (d != axis && av.dim(d) != bv.dim(d)) shape_error("concat", av.shape(), bv.shape());
  }
  const AxisSplit sa = split_at(av.shape(), axis);
  const AxisSplit sb = split_at(bv.shape(), axis);
  Shape out_shape = av.shape();
  out_shape[axis] = sa.n + sb.n;
  Tensor out(out_shape);
  const Index ca = sa.n * sa.inner, cb = sb.n * sb.inner;
  for (Index o = 0; o < sa.outer; ++o) {
    std::copy_n(av.data() + o * ca, ca, out.data() + o * (ca + cb));
    std::copy_n(bv.data() + o * cb, cb, out.data() + o * (ca + cb) + ca);
  }
  const Index outer = sa.outer;
  return tape.record(OpKind::kConcat, {ia, ib}, std::move(out), [=](Tape& t, NodeId self) {
    const Tensor& g = t.grad(self);
    for (Index o = 0; o < outer; ++o) {
      if (t.requires_grad(ia)) {
        Eigen::Map<Eigen::VectorXd>(t.grad_buffer(ia).data() + o * ca, ca) +=
            Eigen::Map<const Eigen::VectorXd>(g.data() + o * (ca + cb), ca);
      }
      if (t.requires_grad(ib)) {
        Eigen::Map<Eigen::VectorXd>(t.grad_buffer(ib).data() + o * cb, cb) +=
            Eigen::Map<const Eigen::VectorXd>(g.data() + o * (ca + cb) + ca, cb);
      }
    }
  });
}

Var concat(std::span<const Var> parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no operands");
  Var acc = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) acc = concat(acc, parts[i], axis);
  return acc;
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  const NodeId ix = x.id();
  return x.tape().record(OpKind::kReshape, {ix}, std::move(out), [ix](Tape& t, NodeId self) {
    t.grad_buffer(ix).values() += t.grad(self).values();
  });
}

Var gather_rows(const Var& x, std::vector<Index> rows) {
  const Tensor& xv = x.value();
  if (xv.rank() < 1) throw std::invalid_argument("gather_rows: scalar input");
  const Index n = xv.dim(0);
  const Index width = n == 0 ? 0 : xv.size() / n;
  for (Index r : rows) {
    if (r < 0 || r >= n) throw std::out_of_range("gather_rows: row " + std::to_string(r) + " out of range");
  }
  Shape out_shape = xv.shape();
  out_shape[0] = static_cast<Index>(rows.size());
  Tensor out(out_shape);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    std::copy_n(xv.data() + rows[k] * width, width, out.data() + static_cast<Index>(k) * width);
  }
  const NodeId ix = x.id();
  return x.tape().record(OpKind::kGatherRows, {ix}, std::move(out),
                         [ix, width, rows = std::move(rows)](Tape& t, NodeId self) {
                           const Tensor& g = t.grad(self);
                           Tensor& gx = t.grad_buffer(ix);
                           for (std::size_t k = 0; k < rows.size(); ++k) {
                             Eigen::Map<Eigen::VectorXd>(gx.data() + rows[k] * width, width) +=
                                 Eigen::Map<const Eigen::VectorXd>(g.data() + static_cast<Index>(k) * width, width);
                           }
                         });
}

Var pairwise_distances(const Var& x) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2) throw std::invalid_argument("pairwise_distances: expects an [n x d] matrix");
  const Index n = xv.dim(0);
  const auto m = xv.matrix();
  Tensor out(Shape{n, n});
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) {
      const double d = (m.row(i) - m.row(j)).norm();
      out[i * n + j] = d;
      out[j * n + i] = d;
    }
  }
  const NodeId ix = x.id();
  return x.tape().record(OpKind::kPairwiseDistance, {ix}, std::move(out), [ix, n](Tape& t, NodeId self) {
    const auto xm = t.value(ix).matrix();
    const Tensor& d = t.value(self);
    const Tensor& g = t.grad(self);
    auto gx = t.grad_buffer(ix).matrix();
    for (Index i = 0; i < n; ++i) {
      for (Index j = i + 1; j < n; ++j) {
        const double dij = d[i * n + j];
        if (dij == 0.0) continue;
        const double c = (g[i * n + j] + g[j * n + i]) / dij;
        gx.row(i) += c * (xm.row(i) - xm.row(j));
        gx.row(j) -= c * (xm.row(i) - xm.row(j));
      }
    }
  });
}

Var normalize_sum(const Var& x) {
  const Tensor& xv = x.value();
  const Index n = xv.size();
  if (n == 0) throw std::invalid_argument("normalize_sum: empty input");
  const double total = xv.values().sum();
  Tensor out(xv.shape());
  if (total == 0.0) {
    out.values().setConstant(1.0 / static_cast<double>(n));
  } else {
    out.values() = xv.values() / total;
  }
  const NodeId ix = x.id();
  return x.tape().record(OpKind::kNormalizeSum, {ix}, std::move(out), [ix, total](Tape& t, NodeId self) {
    if (total == 0.0) return;
    const auto& y = t.value(self).values();
    const auto& g = t.grad(self).values();
    const double dot = g.dot(y);
    t.grad_buffer(ix).values().array() += (g.array() - dot) / total;
  });
}

Var softmax_cross_entropy(const Var& logits, std::span<const int> labels) {
  const Tensor& zv = logits.value();
  if (zv.rank() != 2 || zv.dim(0) != static_cast<Index>(labels.size())) {
    throw std::invalid_argument("softmax_cross_entropy: logits " + shape_string(zv.shape()) + " vs " +
                                std::to_string(labels.size()) + " labels");
  }
  const Index n = zv.dim(0), k = zv.dim(1);
  if (n == 0 || k == 0) throw std::invalid_argument("softmax_cross_entropy: empty logits");
  RowMatrixXd probs(n, k);
  double loss = 0.0;
  const auto z = zv.matrix();
  for (Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= k) throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(y) + " out of range");
    const double top = z.row(i).maxCoeff();
    probs.row(i) = (z.row(i).array() - top).exp();
    const double norm = probs.row(i).sum();
    probs.row(i) /= norm;
    loss += std::log(norm) + top - z(i, y);
  }
  loss /= static_cast<double>(n);
  std::vector<int> owned(labels.begin(), labels.end());
  const NodeId iz = logits.id();
  return logits.tape().record(OpKind::kSoftmaxCrossEntropy, {iz}, Tensor::scalar(loss),
                              [iz, n, probs = std::move(probs), owned = std::move(owned)](Tape& t, NodeId self) {
                                const double g = t.grad(self).item() / static_cast<double>(n);
                                auto gz = t.grad_buffer(iz).matrix();
                                gz += g * probs;
                                for (Index i = 0; i < n; ++i) gz(i, owned[static_cast<std::size_t>(i)]) -= g;
                              });
}

}  // namespace tfuse
