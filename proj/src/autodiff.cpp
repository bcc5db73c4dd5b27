#include "gos/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace gos::ad {

namespace {

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

Value make_node(Tensor value, std::vector<Value> parents,
                std::function<void(Node&)> fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  for (auto& p : n->parents)
    if (p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) n->backward_fn = std::move(fn);
  return n;
}

inline double sigmoid_d(double x) {
  if (x >= 0) {
    double z = std::exp(-x);
    return 1.0 / (1.0 + z);
  }
  double z = std::exp(x);
  return z / (1.0 + z);
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

Value constant(Tensor v) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  return n;
}

Value leaf(Tensor v) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->requires_grad = true;
  return n;
}

Value detach(const Value& x) { return constant(x->value); }

void backward(const Value& root) {
  GOS_CHECK(root->value.numel() == 1, "backward: root must be scalar");
  // iterative post-order DFS for topological order
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Value, size_t>> stack;
  stack.emplace_back(root, 0);
  std::vector<Value> keep;  // hold shared ptrs during traversal
  while (!stack.empty()) {
    auto& top = stack.back();
    Node* node = top.first.get();
    if (visited.count(node)) {
      stack.pop_back();
      continue;
    }
    if (top.second < node->parents.size()) {
      Value next = node->parents[top.second++];
      if (!visited.count(next.get()) && next->requires_grad)
        stack.emplace_back(std::move(next), 0);  // invalidates `top`
    } else {
      if (visited.insert(node).second) {
        order.push_back(node);
        keep.push_back(top.first);
      }
      stack.pop_back();
    }
  }
  root->ensure_grad();
  root->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->grad.numel() == n->value.numel()) {
      for (auto& p : n->parents)
        if (p->requires_grad) p->ensure_grad();
      n->backward_fn(*n);
    }
  }
}

// ---------------------------------------------------------------- arithmetic

Value add(const Value& a, const Value& b) {
  GOS_CHECK(a->value.same_shape(b->value), "add: shape mismatch");
  Tensor out = a->value;
  for (size_t i = 0; i < out.numel(); ++i) out[i] += b->value[i];
  return make_node(std::move(out), {a, b}, [a, b](Node& n) {
    for (size_t i = 0; i < n.grad.numel(); ++i) {
      if (a->requires_grad) a->grad[i] += n.grad[i];
      if (b->requires_grad) b->grad[i] += n.grad[i];
    }
  });
}

Value sub(const Value& a, const Value& b) {
  GOS_CHECK(a->value.same_shape(b->value), "sub: shape mismatch");
  Tensor out = a->value;
  for (size_t i = 0; i < out.numel(); ++i) out[i] -= b->value[i];
  return make_node(std::move(out), {a, b}, [a, b](Node& n) {
    for (size_t i = 0; i < n.grad.numel(); ++i) {
      if (a->requires_grad) a->grad[i] += n.grad[i];
      if (b->requires_grad) b->grad[i] -= n.grad[i];
    }
  });
}

Value mul(const Value& a, const Value& b) {
  GOS_CHECK(a->value.same_shape(b->value), "mul: shape mismatch");
  Tensor out = a->value;
  for (size_t i = 0; i < out.numel(); ++i) out[i] *= b->value[i];
  return make_node(std::move(out), {a, b}, [a, b](Node& n) {
    for (size_t i = 0; i < n.grad.numel(); ++i) {
      if (a->requires_grad) a->grad[i] += n.grad[i] * b->value[i];
      if (b->requires_grad) b->grad[i] += n.grad[i] * a->value[i];
    }
  });
}

Value add_scalar(const Value& a, double c) {
  Tensor out = a->value;
  for (size_t i = 0; i < out.numel(); ++i) out[i] += c;
  return make_node(std::move(out), {a}, [a](Node& n) {
    for (size_t i = 0; i < n.grad.numel(); ++i) a->grad[i] += n.grad[i];
  });
}

Value mul_scalar(const Value& a, double c) {
  Tensor out = a->value;
  for (size_t i = 0; i < out.numel(); ++i) out[i] *= c;
  return make_node(std::move(out), {a}, [a, c](Node& n) {
    for (size_t i = 0; i < n.grad.numel(); ++i) a->grad[i] += n.grad[i] * c;
  });
}

Value gelu(const Value& x) {
  Tensor out = x->value;
  for (size_t i = 0; i < out.numel(); ++i) {
    double v = out[i];
    out[i] = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  }
  return make_node(std::move(out), {x}, [x](Node& n) {
    for (size_t i = 0; i < n.grad.numel(); ++i) {
      double v = x->value[i];
      double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
      double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
      x->grad[i] += n.grad[i] * (cdf + v * pdf);
    }
  });
}

Value sigmoid(const Value& x) {
  Tensor out = x->value;
  for (size_t i = 0; i < out.numel(); ++i) out[i] = sigmoid_d(out[i]);
  Tensor saved = out;
  return make_node(std::move(out), {x}, [x, saved](Node& n) {
    for (size_t i = 0; i < n.grad.numel(); ++i)
      x->grad[i] += n.grad[i] * saved[i] * (1.0 - saved[i]);
  });
}

Value clip_min0(const Value& x) {
  Tensor out = x->value;
  for (size_t i = 0; i < out.numel(); ++i) out[i] = std::max(0.0, out[i]);
  return make_node(std::move(out), {x}, [x](Node& n) {
    for (size_t i = 0; i < n.grad.numel(); ++i)
      if (x->value[i] > 0.0) x->grad[i] += n.grad[i];
  });
}

Value clamp01(const Value& x) {
  Tensor out = x->value;
  for (size_t i = 0; i < out.numel(); ++i)
    out[i] = std::min(1.0, std::max(0.0, out[i]));
  return make_node(std::move(out), {x}, [x](Node& n) {
    for (size_t i = 0; i < n.grad.numel(); ++i)
      if (x->value[i] > 0.0 && x->value[i] < 1.0) x->grad[i] += n.grad[i];
  });
}

// ------------------------------------------------------------ linear algebra

Value matmul(const Value& a, const Value& b) {
  GOS_CHECK(a->value.ndim() == 2 && b->value.ndim() == 2 &&
                a->value.dim(1) == b->value.dim(0),
            "matmul: bad shapes");
  int m = a->value.dim(0), k = a->value.dim(1), n2 = b->value.dim(1);
  Tensor out({m, n2});
  {
    CMapMat A(a->value.data(), m, k), B(b->value.data(), k, n2);
    MapMat C(out.data(), m, n2);
    C.noalias() = A * B;
  }
  return make_node(std::move(out), {a, b}, [a, b, m, k, n2](Node& n) {
    CMapMat G(n.grad.data(), m, n2);
    if (a->requires_grad) {
      CMapMat B(b->value.data(), k, n2);
      MapMat dA(a->grad.data(), m, k);
      dA.noalias() += G * B.transpose();
    }
    if (b->requires_grad) {
      CMapMat A(a->value.data(), m, k);
      MapMat dB(b->grad.data(), k, n2);
      dB.noalias() += A.transpose() * G;
    }
  });
}

Value transpose(const Value& a) {
  GOS_CHECK(a->value.ndim() == 2, "transpose: need 2D");
  int m = a->value.dim(0), k = a->value.dim(1);
  Tensor out({k, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < k; ++j) out.at(j, i) = a->value.at(i, j);
  return make_node(std::move(out), {a}, [a, m, k](Node& n) {
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < k; ++j) a->grad.at(i, j) += n.grad.at(j, i);
  });
}

Value add_bias_rows(const Value& x, const Value& b) {
  GOS_CHECK(x->value.ndim() == 2 && b->value.ndim() == 1 &&
                x->value.dim(1) == b->value.dim(0),
            "add_bias_rows: bad shapes");
  int t = x->value.dim(0), d = x->value.dim(1);
  Tensor out = x->value;
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < d; ++j) out.at(i, j) += b->value.at(j);
  return make_node(std::move(out), {x, b}, [x, b, t, d](Node& n) {
    for (int i = 0; i < t; ++i)
      for (int j = 0; j < d; ++j) {
        if (x->requires_grad) x->grad.at(i, j) += n.grad.at(i, j);
        if (b->requires_grad) b->grad.at(j) += n.grad.at(i, j);
      }
  });
}

Value add_bias_channels(const Value& x, const Value& b) {
  GOS_CHECK(x->value.ndim() == 3 && b->value.ndim() == 1 &&
                x->value.dim(0) == b->value.dim(0),
            "add_bias_channels: bad shapes");
  int c = x->value.dim(0), hw = x->value.dim(1) * x->value.dim(2);
  Tensor out = x->value;
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < hw; ++i) out[static_cast<size_t>(ch) * hw + i] += b->value.at(ch);
  return make_node(std::move(out), {x, b}, [x, b, c, hw](Node& n) {
    for (int ch = 0; ch < c; ++ch)
      for (int i = 0; i < hw; ++i) {
        size_t k = static_cast<size_t>(ch) * hw + i;
        if (x->requires_grad) x->grad[k] += n.grad[k];
        if (b->requires_grad) b->grad.at(ch) += n.grad[k];
      }
  });
}

Value dot(const Value& a, const Value& b) {
  GOS_CHECK(a->value.numel() == b->value.numel(), "dot: size mismatch");
  double s = 0.0;
  for (size_t i = 0; i < a->value.numel(); ++i) s += a->value[i] * b->value[i];
  return make_node(Tensor::scalar(s), {a, b}, [a, b](Node& n) {
    double g = n.grad[0];
    for (size_t i = 0; i < a->value.numel(); ++i) {
      if (a->requires_grad) a->grad[i] += g * b->value[i];
      if (b->requires_grad) b->grad[i] += g * a->value[i];
    }
  });
}

Value softmax_rows(const Value& x) {
  GOS_CHECK(x->value.ndim() == 2, "softmax_rows: need 2D");
  int t = x->value.dim(0), s = x->value.dim(1);
  Tensor out = x->value;
  for (int i = 0; i < t; ++i) {
    double mx = -1e300;
    for (int j = 0; j < s; ++j) mx = std::max(mx, out.at(i, j));
    double z = 0.0;
    for (int j = 0; j < s; ++j) {
      out.at(i, j) = std::exp(out.at(i, j) - mx);
      z += out.at(i, j);
    }
    for (int j = 0; j < s; ++j) out.at(i, j) /= z;
  }
  Tensor saved = out;
  return make_node(std::move(out), {x}, [x, saved, t, s](Node& n) {
    for (int i = 0; i < t; ++i) {
      double gy = 0.0;
      for (int j = 0; j < s; ++j) gy += n.grad.at(i, j) * saved.at(i, j);
      for (int j = 0; j < s; ++j)
        x->grad.at(i, j) += saved.at(i, j) * (n.grad.at(i, j) - gy);
    }
  });
}

Value layer_norm(const Value& x, const Value& gamma, const Value& beta,
                 double eps) {
  GOS_CHECK(x->value.ndim() == 2, "layer_norm: need 2D");
  int t = x->value.dim(0), d = x->value.dim(1);
  GOS_CHECK(gamma->value.numel() == static_cast<size_t>(d) &&
                beta->value.numel() == static_cast<size_t>(d),
            "layer_norm: affine shape");
  Tensor out({t, d});
  Tensor xhat({t, d});
  std::vector<double> inv_std(t);
  for (int i = 0; i < t; ++i) {
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += x->value.at(i, j);
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
      double c = x->value.at(i, j) - mean;
      var += c * c;
    }
    var /= d;
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (int j = 0; j < d; ++j) {
      xhat.at(i, j) = (x->value.at(i, j) - mean) * inv_std[i];
      out.at(i, j) = xhat.at(i, j) * gamma->value.at(j) + beta->value.at(j);
    }
  }
  return make_node(std::move(out), {x, gamma, beta},
                   [x, gamma, beta, xhat, inv_std, t, d](Node& n) {
    for (int i = 0; i < t; ++i) {
      double sum_g = 0.0, sum_gx = 0.0;
      for (int j = 0; j < d; ++j) {
        double gh = n.grad.at(i, j) * gamma->value.at(j);
        sum_g += gh;
        sum_gx += gh * xhat.at(i, j);
        if (gamma->requires_grad)
          gamma->grad.at(j) += n.grad.at(i, j) * xhat.at(i, j);
        if (beta->requires_grad) beta->grad.at(j) += n.grad.at(i, j);
      }
      if (x->requires_grad) {
        for (int j = 0; j < d; ++j) {
          double gh = n.grad.at(i, j) * gamma->value.at(j);
          x->grad.at(i, j) +=
              inv_std[i] * (gh - sum_g / d - xhat.at(i, j) * sum_gx / d);
        }
      }
    }
  });
}

Value group_norm(const Value& x, int groups, const Value& gamma,
                 const Value& beta, double eps) {
  GOS_CHECK(x->value.ndim() == 3, "group_norm: need CHW");
  int c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
  GOS_CHECK(c % groups == 0, "group_norm: channels not divisible by groups");
  int cg = c / groups, hw = h * w;
  size_t gsz = static_cast<size_t>(cg) * hw;
  Tensor out({c, h, w});
  Tensor xhat({c, h, w});
  std::vector<double> inv_std(groups);
  for (int g = 0; g < groups; ++g) {
    size_t base = static_cast<size_t>(g) * gsz;
    double mean = 0.0;
    for (size_t i = 0; i < gsz; ++i) mean += x->value[base + i];
    mean /= static_cast<double>(gsz);
    double var = 0.0;
    for (size_t i = 0; i < gsz; ++i) {
      double d2 = x->value[base + i] - mean;
      var += d2 * d2;
    }
    var /= static_cast<double>(gsz);
    inv_std[g] = 1.0 / std::sqrt(var + eps);
    for (size_t i = 0; i < gsz; ++i) {
      int ch = g * cg + static_cast<int>(i) / hw;
      xhat[base + i] = (x->value[base + i] - mean) * inv_std[g];
      out[base + i] = xhat[base + i] * gamma->value.at(ch) + beta->value.at(ch);
    }
  }
  return make_node(std::move(out), {x, gamma, beta},
                   [x, gamma, beta, xhat, inv_std, groups, cg, hw](Node& n) {
    size_t gsz = static_cast<size_t>(cg) * hw;
    for (int g = 0; g < groups; ++g) {
      size_t base = static_cast<size_t>(g) * gsz;
      double sum_g = 0.0, sum_gx = 0.0;
      for (size_t i = 0; i < gsz; ++i) {
        int ch = g * cg + static_cast<int>(i) / hw;
        double gh = n.grad[base + i] * gamma->value.at(ch);
        sum_g += gh;
        sum_gx += gh * xhat[base + i];
        if (gamma->requires_grad)
          gamma->grad.at(ch) += n.grad[base + i] * xhat[base + i];
        if (beta->requires_grad) beta->grad.at(ch) += n.grad[base + i];
      }
      if (x->requires_grad) {
        double nsz = static_cast<double>(gsz);
        for (size_t i = 0; i < gsz; ++i) {
          int ch = g * cg + static_cast<int>(i) / hw;
          double gh = n.grad[base + i] * gamma->value.at(ch);
          x->grad[base + i] +=
              inv_std[g] * (gh - sum_g / nsz - xhat[base + i] * sum_gx / nsz);
        }
      }
    }
  });
}

// --------------------------------------------------------------- convolution

namespace {

// im2col for x[C,H,W] with kernel (kh,kw): col[C*kh*kw, OH*OW]
void im2col(const Tensor& x, int kh, int kw, int stride, int pad, int oh,
            int ow, std::vector<double>& col) {
  int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  col.assign(static_cast<size_t>(c) * kh * kw * oh * ow, 0.0);
  size_t row = 0;
  for (int ch = 0; ch < c; ++ch)
    for (int ki = 0; ki < kh; ++ki)
      for (int kj = 0; kj < kw; ++kj, ++row) {
        double* dst = col.data() + row * oh * ow;
        for (int oi = 0; oi < oh; ++oi) {
          int ii = oi * stride + ki - pad;
          if (ii < 0 || ii >= h) {
            dst += ow;
            continue;
          }
          for (int oj = 0; oj < ow; ++oj, ++dst) {
            int jj = oj * stride + kj - pad;
            if (jj >= 0 && jj < w) *dst = x.at(ch, ii, jj);
          }
        }
      }
}

void col2im_add(const std::vector<double>& col, Tensor& gx, int kh, int kw,
                int stride, int pad, int oh, int ow) {
  int c = gx.dim(0), h = gx.dim(1), w = gx.dim(2);
  size_t row = 0;
  for (int ch = 0; ch < c; ++ch)
    for (int ki = 0; ki < kh; ++ki)
      for (int kj = 0; kj < kw; ++kj, ++row) {
        const double* src = col.data() + row * oh * ow;
        for (int oi = 0; oi < oh; ++oi) {
          int ii = oi * stride + ki - pad;
          if (ii < 0 || ii >= h) {
            src += ow;
            continue;
          }
          for (int oj = 0; oj < ow; ++oj, ++src) {
            int jj = oj * stride + kj - pad;
            if (jj >= 0 && jj < w) gx.at(ch, ii, jj) += *src;
          }
        }
      }
}

}  // namespace

Value conv2d(const Value& x, const Value& w, const Value& b, int stride,
             int pad) {
  GOS_CHECK(x->value.ndim() == 3 && w->value.ndim() == 4, "conv2d: bad shapes");
  int c = x->value.dim(0), h = x->value.dim(1), ww = x->value.dim(2);
  int o = w->value.dim(0), kh = w->value.dim(2), kw = w->value.dim(3);
  GOS_CHECK(w->value.dim(1) == c, "conv2d: channel mismatch");
  int oh = (h + 2 * pad - kh) / stride + 1;
  int ow = (ww + 2 * pad - kw) / stride + 1;
  GOS_CHECK(oh > 0 && ow > 0, "conv2d: empty output");
  auto col = std::make_shared<std::vector<double>>();
  im2col(x->value, kh, kw, stride, pad, oh, ow, *col);
  int k = c * kh * kw, n2 = oh * ow;
  Tensor out({o, oh, ow});
  {
    CMapMat W(w->value.data(), o, k);
    CMapMat Col(col->data(), k, n2);
    MapMat Y(out.data(), o, n2);
    Y.noalias() = W * Col;
  }
  for (int ch = 0; ch < o; ++ch)
    for (int i = 0; i < n2; ++i)
      out[static_cast<size_t>(ch) * n2 + i] += b->value.at(ch);
  return make_node(std::move(out), {x, w, b},
                   [x, w, b, col, stride, pad, o, k, n2, kh, kw, oh, ow](Node& n) {
    CMapMat G(n.grad.data(), o, n2);
    if (w->requires_grad) {
      CMapMat Col(col->data(), k, n2);
      MapMat dW(w->grad.data(), o, k);
      dW.noalias() += G * Col.transpose();
    }
    if (b->requires_grad) {
      for (int ch = 0; ch < o; ++ch)
        b->grad.at(ch) += G.row(ch).sum();
    }
    if (x->requires_grad) {
      std::vector<double> dcol(static_cast<size_t>(k) * n2);
      CMapMat W(w->value.data(), o, k);
      MapMat dCol(dcol.data(), k, n2);
      dCol.noalias() = W.transpose() * G;
      col2im_add(dcol, x->grad, kh, kw, stride, pad, oh, ow);
    }
  });
}

Value conv_transpose2d(const Value& x, const Value& w, const Value& b,
                       int stride, int pad) {
  GOS_CHECK(x->value.ndim() == 3 && w->value.ndim() == 4,
            "conv_transpose2d: bad shapes");
  int c = x->value.dim(0), h = x->value.dim(1), ww = x->value.dim(2);
  GOS_CHECK(w->value.dim(0) == c, "conv_transpose2d: channel mismatch");
  int o = w->value.dim(1), kh = w->value.dim(2), kw = w->value.dim(3);
  int oh = (h - 1) * stride - 2 * pad + kh;
  int ow = (ww - 1) * stride - 2 * pad + kw;
  GOS_CHECK(oh > 0 && ow > 0, "conv_transpose2d: empty output");
  Tensor out({o, oh, ow});
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < ww; ++j) {
        double xv = x->value.at(ch, i, j);
        if (xv == 0.0) continue;
        for (int oc = 0; oc < o; ++oc)
          for (int ki = 0; ki < kh; ++ki) {
            int ii = i * stride + ki - pad;
            if (ii < 0 || ii >= oh) continue;
            for (int kj = 0; kj < kw; ++kj) {
              int jj = j * stride + kj - pad;
              if (jj < 0 || jj >= ow) continue;
              out.at(oc, ii, jj) += xv * w->value.at(ch, oc, ki, kj);
            }
          }
      }
  for (int oc = 0; oc < o; ++oc)
    for (int i = 0; i < oh * ow; ++i)
      out[static_cast<size_t>(oc) * oh * ow + i] += b->value.at(oc);
  return make_node(std::move(out), {x, w, b},
                   [x, w, b, stride, pad, c, h, ww, o, kh, kw, oh, ow](Node& n) {
    for (int ch = 0; ch < c; ++ch)
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < ww; ++j) {
          double acc = 0.0;
          double xv = x->value.at(ch, i, j);
          for (int oc = 0; oc < o; ++oc)
            for (int ki = 0; ki < kh; ++ki) {
              int ii = i * stride + ki - pad;
              if (ii < 0 || ii >= oh) continue;
              for (int kj = 0; kj < kw; ++kj) {
                int jj = j * stride + kj - pad;
                if (jj < 0 || jj >= ow) continue;
                double g = n.grad.at(oc, ii, jj);
                acc += g * w->value.at(ch, oc, ki, kj);
                if (w->requires_grad) w->grad.at(ch, oc, ki, kj) += g * xv;
              }
            }
          if (x->requires_grad) x->grad.at(ch, i, j) += acc;
        }
    if (b->requires_grad) {
      for (int oc = 0; oc < o; ++oc) {
        double s = 0.0;
        for (int i = 0; i < oh * ow; ++i)
          s += n.grad[static_cast<size_t>(oc) * oh * ow + i];
        b->grad.at(oc) += s;
      }
    }
  });
}

Value pixel_shuffle(const Value& x, int r) {
  GOS_CHECK(x->value.ndim() == 3, "pixel_shuffle: need CHW");
  int c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
  GOS_CHECK(c % (r * r) == 0, "pixel_shuffle: channels not divisible by r^2");
  int oc = c / (r * r);
  Tensor out({oc, h * r, w * r});
  for (int k = 0; k < oc; ++k)
    for (int i = 0; i < h * r; ++i)
      for (int j = 0; j < w * r; ++j)
        out.at(k, i, j) =
            x->value.at(k * r * r + (i % r) * r + (j % r), i / r, j / r);
  return make_node(std::move(out), {x}, [x, r, oc, h, w](Node& n) {
    for (int k = 0; k < oc; ++k)
      for (int i = 0; i < h * r; ++i)
        for (int j = 0; j < w * r; ++j)
          x->grad.at(k * r * r + (i % r) * r + (j % r), i / r, j / r) +=
              n.grad.at(k, i, j);
  });
}

Value pixel_unshuffle(const Value& x, int r) {
  GOS_CHECK(x->value.ndim() == 3, "pixel_unshuffle: need CHW");
  int c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
  GOS_CHECK(h % r == 0 && w % r == 0, "pixel_unshuffle: spatial not divisible");
  Tensor out({c * r * r, h / r, w / r});
  for (int k = 0; k < c; ++k)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j)
        out.at(k * r * r + (i % r) * r + (j % r), i / r, j / r) =
            x->value.at(k, i, j);
  return make_node(std::move(out), {x}, [x, r, c, h, w](Node& n) {
    for (int k = 0; k < c; ++k)
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
          x->grad.at(k, i, j) +=
              n.grad.at(k * r * r + (i % r) * r + (j % r), i / r, j / r);
  });
}

namespace {

struct BilinearTap {
  int i0, j0;
  double wi, wj;  // weights of (i0, j0); complements go to i0+1/j0+1
};

// source coordinate convention: pixel k spans [k, k+1), center k+0.5
BilinearTap bilinear_tap(double y, double x, int h, int w) {
  BilinearTap t;
  double fy = y - 0.5, fx = x - 0.5;
  t.i0 = static_cast<int>(std::floor(fy));
  t.j0 = static_cast<int>(std::floor(fx));
  t.wi = 1.0 - (fy - t.i0);
  t.wj = 1.0 - (fx - t.j0);
  return t;
}

inline int clampi(int v, int lo, int hi) { return std::max(lo, std::min(hi, v)); }

}  // namespace

Value bilinear_resize(const Value& x, int out_h, int out_w) {
  GOS_CHECK(x->value.ndim() == 3, "bilinear_resize: need CHW");
  int c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
  double sy = static_cast<double>(h) / out_h, sx = static_cast<double>(w) / out_w;
  Tensor out({c, out_h, out_w});
  auto taps = std::make_shared<std::vector<BilinearTap>>();
  taps->reserve(static_cast<size_t>(out_h) * out_w);
  for (int i = 0; i < out_h; ++i)
    for (int j = 0; j < out_w; ++j)
      taps->push_back(bilinear_tap((i + 0.5) * sy, (j + 0.5) * sx, h, w));
  for (int ch = 0; ch < c; ++ch) {
    size_t t = 0;
    for (int i = 0; i < out_h; ++i)
      for (int j = 0; j < out_w; ++j, ++t) {
        const auto& tp = (*taps)[t];
        int i0 = clampi(tp.i0, 0, h - 1), i1 = clampi(tp.i0 + 1, 0, h - 1);
        int j0 = clampi(tp.j0, 0, w - 1), j1 = clampi(tp.j0 + 1, 0, w - 1);
        out.at(ch, i, j) =
            tp.wi * (tp.wj * x->value.at(ch, i0, j0) +
                     (1 - tp.wj) * x->value.at(ch, i0, j1)) +
            (1 - tp.wi) * (tp.wj * x->value.at(ch, i1, j0) +
                           (1 - tp.wj) * x->value.at(ch, i1, j1));
      }
  }
  return make_node(std::move(out), {x}, [x, taps, c, h, w, out_h, out_w](Node& n) {
    for (int ch = 0; ch < c; ++ch) {
      size_t t = 0;
      for (int i = 0; i < out_h; ++i)
        for (int j = 0; j < out_w; ++j, ++t) {
          const auto& tp = (*taps)[t];
          int i0 = clampi(tp.i0, 0, h - 1), i1 = clampi(tp.i0 + 1, 0, h - 1);
          int j0 = clampi(tp.j0, 0, w - 1), j1 = clampi(tp.j0 + 1, 0, w - 1);
          double g = n.grad.at(ch, i, j);
          x->grad.at(ch, i0, j0) += g * tp.wi * tp.wj;
          x->grad.at(ch, i0, j1) += g * tp.wi * (1 - tp.wj);
          x->grad.at(ch, i1, j0) += g * (1 - tp.wi) * tp.wj;
          x->grad.at(ch, i1, j1) += g * (1 - tp.wi) * (1 - tp.wj);
        }
    }
  });
}

Value roi_align(const Value& x, double x1, double y1, double x2, double y2,
                int out_h, int out_w, int samples_per_axis) {
  GOS_CHECK(x->value.ndim() == 3, "roi_align: need CHW");
  GOS_CHECK(x2 > x1 && y2 > y1, "roi_align: degenerate box");
  int c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
  // box in normalized [0,1]^2 mapped to continuous feature coordinates
  double bx1 = x1 * w, bx2 = x2 * w, by1 = y1 * h, by2 = y2 * h;
  double cw = (bx2 - bx1) / out_w, ch_ = (by2 - by1) / out_h;
  int s = samples_per_axis;
  auto taps = std::make_shared<std::vector<BilinearTap>>();
  taps->reserve(static_cast<size_t>(out_h) * out_w * s * s);
  for (int i = 0; i < out_h; ++i)
    for (int j = 0; j < out_w; ++j)
      for (int si = 0; si < s; ++si)
        for (int sj = 0; sj < s; ++sj) {
          double y = by1 + (i + (si + 0.5) / s) * ch_;
          double xx = bx1 + (j + (sj + 0.5) / s) * cw;
          taps->push_back(bilinear_tap(y, xx, h, w));
        }
  Tensor out({c, out_h, out_w});
  double inv_ss = 1.0 / (s * s);
  for (int chn = 0; chn < c; ++chn) {
    size_t t = 0;
    for (int i = 0; i < out_h; ++i)
      for (int j = 0; j < out_w; ++j) {
        double acc = 0.0;
        for (int k = 0; k < s * s; ++k, ++t) {
          const auto& tp = (*taps)[t];
          int i0 = clampi(tp.i0, 0, h - 1), i1 = clampi(tp.i0 + 1, 0, h - 1);
          int j0 = clampi(tp.j0, 0, w - 1), j1 = clampi(tp.j0 + 1, 0, w - 1);
          acc += tp.wi * (tp.wj * x->value.at(chn, i0, j0) +
                          (1 - tp.wj) * x->value.at(chn, i0, j1)) +
                 (1 - tp.wi) * (tp.wj * x->value.at(chn, i1, j0) +
                                (1 - tp.wj) * x->value.at(chn, i1, j1));
        }
        out.at(chn, i, j) = acc * inv_ss;
      }
  }
  return make_node(std::move(out), {x},
                   [x, taps, c, h, w, out_h, out_w, s, inv_ss](Node& n) {
    for (int chn = 0; chn < c; ++chn) {
      size_t t = 0;
      for (int i = 0; i < out_h; ++i)
        for (int j = 0; j < out_w; ++j) {
          double g = n.grad.at(chn, i, j) * inv_ss;
          for (int k = 0; k < s * s; ++k, ++t) {
            const auto& tp = (*taps)[t];
            int i0 = clampi(tp.i0, 0, h - 1), i1 = clampi(tp.i0 + 1, 0, h - 1);
            int j0 = clampi(tp.j0, 0, w - 1), j1 = clampi(tp.j0 + 1, 0, w - 1);
            x->grad.at(chn, i0, j0) += g * tp.wi * tp.wj;
            x->grad.at(chn, i0, j1) += g * tp.wi * (1 - tp.wj);
            x->grad.at(chn, i1, j0) += g * (1 - tp.wi) * tp.wj;
            x->grad.at(chn, i1, j1) += g * (1 - tp.wi) * (1 - tp.wj);
          }
        }
    }
  });
}

Value broadcast_mul_map(const Value& x, const Value& m) {
  GOS_CHECK(x->value.ndim() == 3 && m->value.ndim() == 2 &&
                x->value.dim(1) == m->value.dim(0) &&
                x->value.dim(2) == m->value.dim(1),
            "broadcast_mul_map: bad shapes");
  int c = x->value.dim(0), hw = x->value.dim(1) * x->value.dim(2);
  Tensor out = x->value;
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < hw; ++i)
      out[static_cast<size_t>(ch) * hw + i] *= m->value[i];
  return make_node(std::move(out), {x, m}, [x, m, c, hw](Node& n) {
    for (int ch = 0; ch < c; ++ch)
      for (int i = 0; i < hw; ++i) {
        size_t k = static_cast<size_t>(ch) * hw + i;
        if (x->requires_grad) x->grad[k] += n.grad[k] * m->value[i];
        if (m->requires_grad) m->grad[i] += n.grad[k] * x->value[k];
      }
  });
}

Value gap_chw(const Value& x) {
  GOS_CHECK(x->value.ndim() == 3, "gap_chw: need CHW");
  int c = x->value.dim(0), hw = x->value.dim(1) * x->value.dim(2);
  Tensor out({c});
  for (int ch = 0; ch < c; ++ch) {
    double s = 0.0;
    for (int i = 0; i < hw; ++i) s += x->value[static_cast<size_t>(ch) * hw + i];
    out.at(ch) = s / hw;
  }
  return make_node(std::move(out), {x}, [x, c, hw](Node& n) {
    for (int ch = 0; ch < c; ++ch) {
      double g = n.grad.at(ch) / hw;
      for (int i = 0; i < hw; ++i) x->grad[static_cast<size_t>(ch) * hw + i] += g;
    }
  });
}

// ----------------------------------------------------------------- reshaping

Value reshape(const Value& x, std::vector<int> shape) {
  Tensor out(shape);
  GOS_CHECK(out.numel() == x->value.numel(), "reshape: numel mismatch");
  for (size_t i = 0; i < out.numel(); ++i) out[i] = x->value[i];
  return make_node(std::move(out), {x}, [x](Node& n) {
    for (size_t i = 0; i < n.grad.numel(); ++i) x->grad[i] += n.grad[i];
  });
}

Value chw_to_tokens(const Value& x) {
  GOS_CHECK(x->value.ndim() == 3, "chw_to_tokens: need CHW");
  int c = x->value.dim(0), hw = x->value.dim(1) * x->value.dim(2);
  Tensor out({hw, c});
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < hw; ++i)
      out.at(i, ch) = x->value[static_cast<size_t>(ch) * hw + i];
  return make_node(std::move(out), {x}, [x, c, hw](Node& n) {
    for (int ch = 0; ch < c; ++ch)
      for (int i = 0; i < hw; ++i)
        x->grad[static_cast<size_t>(ch) * hw + i] += n.grad.at(i, ch);
  });
}

Value tokens_to_chw(const Value& x, int c, int h, int w) {
  GOS_CHECK(x->value.ndim() == 2 && x->value.dim(0) == h * w &&
                x->value.dim(1) == c,
            "tokens_to_chw: bad shapes");
  int hw = h * w;
  Tensor out({c, h, w});
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < hw; ++i)
      out[static_cast<size_t>(ch) * hw + i] = x->value.at(i, ch);
  return make_node(std::move(out), {x}, [x, c, hw](Node& n) {
    for (int ch = 0; ch < c; ++ch)
      for (int i = 0; i < hw; ++i)
        x->grad.at(i, ch) += n.grad[static_cast<size_t>(ch) * hw + i];
  });
}

Value concat_cols(const Value& a, const Value& b) {
  GOS_CHECK(a->value.ndim() == 2 && b->value.ndim() == 2 &&
                a->value.dim(0) == b->value.dim(0),
            "concat_cols: bad shapes");
  int t = a->value.dim(0), da = a->value.dim(1), db = b->value.dim(1);
  Tensor out({t, da + db});
  for (int i = 0; i < t; ++i) {
    for (int j = 0; j < da; ++j) out.at(i, j) = a->value.at(i, j);
    for (int j = 0; j < db; ++j) out.at(i, da + j) = b->value.at(i, j);
  }
  return make_node(std::move(out), {a, b}, [a, b, t, da, db](Node& n) {
    for (int i = 0; i < t; ++i) {
      if (a->requires_grad)
        for (int j = 0; j < da; ++j) a->grad.at(i, j) += n.grad.at(i, j);
      if (b->requires_grad)
        for (int j = 0; j < db; ++j) b->grad.at(i, j) += n.grad.at(i, da + j);
    }
  });
}

Value slice_cols(const Value& x, int start, int len) {
  GOS_CHECK(x->value.ndim() == 2 && start >= 0 &&
                start + len <= x->value.dim(1),
            "slice_cols: bad range");
  int t = x->value.dim(0);
  Tensor out({t, len});
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < len; ++j) out.at(i, j) = x->value.at(i, start + j);
  return make_node(std::move(out), {x}, [x, t, start, len](Node& n) {
    for (int i = 0; i < t; ++i)
      for (int j = 0; j < len; ++j) x->grad.at(i, start + j) += n.grad.at(i, j);
  });
}

Value concat_channels(const Value& a, const Value& b) {
  GOS_CHECK(a->value.ndim() == 3 && b->value.ndim() == 3 &&
                a->value.dim(1) == b->value.dim(1) &&
                a->value.dim(2) == b->value.dim(2),
            "concat_channels: bad shapes");
  int ca = a->value.dim(0), cb = b->value.dim(0);
  int hw = a->value.dim(1) * a->value.dim(2);
  Tensor out({ca + cb, a->value.dim(1), a->value.dim(2)});
  for (size_t i = 0; i < a->value.numel(); ++i) out[i] = a->value[i];
  for (size_t i = 0; i < b->value.numel(); ++i)
    out[static_cast<size_t>(ca) * hw + i] = b->value[i];
  return make_node(std::move(out), {a, b}, [a, b, ca, hw](Node& n) {
    if (a->requires_grad)
      for (size_t i = 0; i < a->value.numel(); ++i) a->grad[i] += n.grad[i];
    if (b->requires_grad)
      for (size_t i = 0; i < b->value.numel(); ++i)
        b->grad[i] += n.grad[static_cast<size_t>(ca) * hw + i];
  });
}

Value gather_rows(const Value& x, const std::vector<int>& idx) {
  GOS_CHECK(x->value.ndim() == 2, "gather_rows: need 2D");
  int d = x->value.dim(1);
  Tensor out({static_cast<int>(idx.size()), d});
  for (size_t i = 0; i < idx.size(); ++i)
    for (int j = 0; j < d; ++j)
      out.at(static_cast<int>(i), j) = x->value.at(idx[i], j);
  return make_node(std::move(out), {x}, [x, idx, d](Node& n) {
    for (size_t i = 0; i < idx.size(); ++i)
      for (int j = 0; j < d; ++j)
        x->grad.at(idx[i], j) += n.grad.at(static_cast<int>(i), j);
  });
}

// ---------------------------------------------------------------- reductions

Value sum_all(const Value& x) {
  double s = 0.0;
  for (size_t i = 0; i < x->value.numel(); ++i) s += x->value[i];
  return make_node(Tensor::scalar(s), {x}, [x](Node& n) {
    double g = n.grad[0];
    for (size_t i = 0; i < x->value.numel(); ++i) x->grad[i] += g;
  });
}

Value mean_all(const Value& x) {
  return mul_scalar(sum_all(x), 1.0 / static_cast<double>(x->value.numel()));
}

Value weighted_sum(const std::vector<std::pair<double, Value>>& terms) {
  double s = 0.0;
  std::vector<Value> parents;
  for (const auto& [c, v] : terms) {
    GOS_CHECK(v->value.numel() == 1, "weighted_sum: terms must be scalar");
    s += c * v->value[0];
    parents.push_back(v);
  }
  auto terms_copy = terms;
  return make_node(Tensor::scalar(s), std::move(parents),
                   [terms_copy](Node& n) {
    for (const auto& [c, v] : terms_copy)
      if (v->requires_grad) v->grad[0] += c * n.grad[0];
  });
}

Value mse_loss(const Value& pred, const Tensor& target) {
  GOS_CHECK(pred->value.same_shape(target), "mse_loss: shape mismatch");
  size_t n2 = pred->value.numel();
  double s = 0.0;
  for (size_t i = 0; i < n2; ++i) {
    double d2 = pred->value[i] - target[i];
    s += d2 * d2;
  }
  return make_node(Tensor::scalar(s / n2), {pred}, [pred, target, n2](Node& n) {
    double g = 2.0 * n.grad[0] / static_cast<double>(n2);
    for (size_t i = 0; i < n2; ++i)
      pred->grad[i] += g * (pred->value[i] - target[i]);
  });
}

Value l1_loss_mean(const Value& pred, const Tensor& target) {
  GOS_CHECK(pred->value.same_shape(target), "l1_loss_mean: shape mismatch");
  size_t n2 = pred->value.numel();
  double s = 0.0;
  for (size_t i = 0; i < n2; ++i) s += std::abs(pred->value[i] - target[i]);
  return make_node(Tensor::scalar(s / n2), {pred}, [pred, target, n2](Node& n) {
    double g = n.grad[0] / static_cast<double>(n2);
    for (size_t i = 0; i < n2; ++i) {
      double d2 = pred->value[i] - target[i];
      pred->grad[i] += g * (d2 > 0 ? 1.0 : (d2 < 0 ? -1.0 : 0.0));
    }
  });
}

Value bce_with_logits_mean(const Value& logits, const Tensor& target) {
  GOS_CHECK(logits->value.same_shape(target), "bce: shape mismatch");
  size_t n2 = logits->value.numel();
  double s = 0.0;
  for (size_t i = 0; i < n2; ++i) {
    double z = logits->value[i], t = target[i];
    // numerically stable: max(z,0) - z*t + log(1+exp(-|z|))
    s += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
  }
  return make_node(Tensor::scalar(s / n2), {logits}, [logits, target, n2](Node& n) {
    double g = n.grad[0] / static_cast<double>(n2);
    for (size_t i = 0; i < n2; ++i)
      logits->grad[i] += g * (sigmoid_d(logits->value[i]) - target[i]);
  });
}

Value cross_entropy_rows(const Value& logits, const std::vector<int>& targets,
                         const std::vector<double>& class_weights) {
  GOS_CHECK(logits->value.ndim() == 2 &&
                logits->value.dim(0) == static_cast<int>(targets.size()),
            "cross_entropy_rows: bad shapes");
  int t = logits->value.dim(0), k = logits->value.dim(1);
  GOS_CHECK(static_cast<int>(class_weights.size()) == k,
            "cross_entropy_rows: weights size");
  Tensor probs({t, k});
  double loss = 0.0, wsum = 0.0;
  for (int i = 0; i < t; ++i) {
    double mx = -1e300;
    for (int j = 0; j < k; ++j) mx = std::max(mx, logits->value.at(i, j));
    double z = 0.0;
    for (int j = 0; j < k; ++j) {
      probs.at(i, j) = std::exp(logits->value.at(i, j) - mx);
      z += probs.at(i, j);
    }
    for (int j = 0; j < k; ++j) probs.at(i, j) /= z;
    double w = class_weights[targets[i]];
    loss += -w * std::log(std::max(probs.at(i, targets[i]), 1e-300));
    wsum += w;
  }
  GOS_CHECK(wsum > 0, "cross_entropy_rows: zero weight sum");
  return make_node(Tensor::scalar(loss / wsum), {logits},
                   [logits, targets, class_weights, probs, t, k, wsum](Node& n) {
    double g = n.grad[0] / wsum;
    for (int i = 0; i < t; ++i) {
      double w = class_weights[targets[i]];
      for (int j = 0; j < k; ++j) {
        double ind = (j == targets[i]) ? 1.0 : 0.0;
        logits->grad.at(i, j) += g * w * (probs.at(i, j) - ind);
      }
    }
  });
}

Value dice_loss(const Value& logits, const Tensor& target) {
  GOS_CHECK(logits->value.numel() == target.numel(), "dice: size mismatch");
  size_t n2 = logits->value.numel();
  Tensor p({static_cast<int>(n2)});
  double inter = 0.0, psum = 0.0, tsum = 0.0;
  for (size_t i = 0; i < n2; ++i) {
    p[i] = sigmoid_d(logits->value[i]);
    inter += p[i] * target[i];
    psum += p[i];
    tsum += target[i];
  }
  const double eps = 1.0;
  double dice = (2.0 * inter + eps) / (psum + tsum + eps);
  return make_node(Tensor::scalar(1.0 - dice), {logits},
                   [logits, target, p, inter, psum, tsum, n2](Node& n) {
    const double eps = 1.0;
    double denom = psum + tsum + eps;
    double g = n.grad[0];
    for (size_t i = 0; i < n2; ++i) {
      // d(1-dice)/dp_i = -(2*t_i*denom - (2*inter+eps)) / denom^2
      double ddice = (2.0 * target[i] * denom - (2.0 * inter + eps)) /
                     (denom * denom);
      logits->grad[i] += g * (-ddice) * p[i] * (1.0 - p[i]);
    }
  });
}

// ------------------------------------------------------------------ geometry

Value giou_pairs(const Value& pred_cxcywh, const std::vector<Box>& gt) {
  GOS_CHECK(pred_cxcywh->value.ndim() == 2 && pred_cxcywh->value.dim(1) == 4 &&
                pred_cxcywh->value.dim(0) == static_cast<int>(gt.size()),
            "giou_pairs: bad shapes");
  int m = pred_cxcywh->value.dim(0);
  Tensor out({m});
  for (int i = 0; i < m; ++i) {
    double cx = pred_cxcywh->value.at(i, 0), cy = pred_cxcywh->value.at(i, 1);
    double w = pred_cxcywh->value.at(i, 2), h = pred_cxcywh->value.at(i, 3);
    Box p{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
    out[i] = giou(p, gt[i]);
  }
  return make_node(std::move(out), {pred_cxcywh}, [pred_cxcywh, gt, m](Node& n) {
    for (int i = 0; i < m; ++i) {
      double cx = pred_cxcywh->value.at(i, 0), cy = pred_cxcywh->value.at(i, 1);
      double w = pred_cxcywh->value.at(i, 2), h = pred_cxcywh->value.at(i, 3);
      double p1x = cx - w / 2, p1y = cy - h / 2;
      double p2x = cx + w / 2, p2y = cy + h / 2;
      const Box& g = gt[i];
      double iw = std::min(p2x, g.x2) - std::max(p1x, g.x1);
      double ih = std::min(p2y, g.y2) - std::max(p1y, g.y1);
      double inter = (iw > 0 && ih > 0) ? iw * ih : 0.0;
      double ap = (p2x - p1x) * (p2y - p1y);
      double uni = ap + g.area() - inter;
      double cw = std::max(p2x, g.x2) - std::min(p1x, g.x1);
      double ch = std::max(p2y, g.y2) - std::min(p1y, g.y1);
      double cc = cw * ch;
      if (uni <= 0 || cc <= 0) continue;
      // giou = I/U + U/C - 1; corner derivatives then chain to (cx,cy,w,h)
      double d[4] = {0, 0, 0, 0};  // wrt p1x, p1y, p2x, p2y
      for (int c = 0; c < 4; ++c) {
        double dap = (c == 0) ? -(p2y - p1y)
                   : (c == 1) ? -(p2x - p1x)
                   : (c == 2) ? (p2y - p1y)
                              : (p2x - p1x);
        double di = 0.0;
        if (inter > 0) {
          if (c == 0 && p1x > g.x1) di = -ih;
          if (c == 2 && p2x < g.x2) di = ih;
          if (c == 1 && p1y > g.y1) di = -iw;
          if (c == 3 && p2y < g.y2) di = iw;
        }
        double du = dap - di;
        double dc = 0.0;
        if (c == 0 && p1x < g.x1) dc = -ch;
        if (c == 2 && p2x > g.x2) dc = ch;
        if (c == 1 && p1y < g.y1) dc = -cw;
        if (c == 3 && p2y > g.y2) dc = cw;
        d[c] = (di * uni - inter * du) / (uni * uni) +
               (du * cc - uni * dc) / (cc * cc);
      }
      double go = n.grad[i];
      pred_cxcywh->grad[i * 4 + 0] += go * (d[0] + d[2]);
      pred_cxcywh->grad[i * 4 + 1] += go * (d[1] + d[3]);
      pred_cxcywh->grad[i * 4 + 2] += go * (d[2] - d[0]) / 2;
      pred_cxcywh->grad[i * 4 + 3] += go * (d[3] - d[1]) / 2;
    }
  });
}

Value l2_normalize2(const Value& x, bool* degenerate_flag) {
  GOS_CHECK(x->value.numel() == 2, "l2_normalize2: need 2-vector");
  double a = x->value[0], b = x->value[1];
  double nrm = std::sqrt(a * a + b * b);
  if (degenerate_flag) *degenerate_flag = false;
  if (nrm < 1e-12) {
    if (degenerate_flag) *degenerate_flag = true;
    Tensor out({2});
    out[0] = 1.0;
    out[1] = 0.0;
    return make_node(std::move(out), {x}, [](Node&) {});
  }
  Tensor out({2});
  out[0] = a / nrm;
  out[1] = b / nrm;
  Tensor saved = out;
  return make_node(std::move(out), {x}, [x, saved, nrm](Node& n) {
    // J = (I - y y^T)/|x|
    double gy0 = n.grad[0], gy1 = n.grad[1];
    double ydotg = saved[0] * gy0 + saved[1] * gy1;
    x->grad[0] += (gy0 - saved[0] * ydotg) / nrm;
    x->grad[1] += (gy1 - saved[1] * ydotg) / nrm;
  });
}

Value gaze_cone_map(const Value& v_unit, double eye_x, double eye_y, int n) {
  GOS_CHECK(v_unit->value.numel() == 2, "gaze_cone_map: need 2-vector");
  Tensor out({n, n});
  // unit offsets from eye to cell centers; the eye cell is pinned to 1
  Tensor ux({n, n}), uy({n, n});
  int eye_i = clampi(static_cast<int>(std::floor(eye_y * n)), 0, n - 1);
  int eye_j = clampi(static_cast<int>(std::floor(eye_x * n)), 0, n - 1);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double dx = (j + 0.5) / n - eye_x;
      double dy = (i + 0.5) / n - eye_y;
      double nrm = std::sqrt(dx * dx + dy * dy);
      if ((i == eye_i && j == eye_j) || nrm < 1e-12) {
        out.at(i, j) = 1.0;
        ux.at(i, j) = 0.0;
        uy.at(i, j) = 0.0;
      } else {
        ux.at(i, j) = dx / nrm;
        uy.at(i, j) = dy / nrm;
        double c = v_unit->value[0] * ux.at(i, j) + v_unit->value[1] * uy.at(i, j);
        out.at(i, j) = std::max(0.0, c);
      }
    }
  Tensor saved = out;
  return make_node(std::move(out), {v_unit}, [v_unit, ux, uy, saved, n](Node& nd) {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        if (saved.at(i, j) > 0.0 && (ux.at(i, j) != 0.0 || uy.at(i, j) != 0.0)) {
          v_unit->grad[0] += nd.grad.at(i, j) * ux.at(i, j);
          v_unit->grad[1] += nd.grad.at(i, j) * uy.at(i, j);
        }
      }
  });
}

}  // namespace gos::ad
