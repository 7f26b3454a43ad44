#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "dyne/tensor.hpp"

namespace dyne::nn {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<Mat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const Mat<T>>;

// Reverse-mode tape over 2-D tensors ([batch x features] row-major). Values
// are computed eagerly as nodes are recorded; backward() walks the tape in
// reverse and accumulates gradients for every node that can reach a Param
// leaf. This covers exactly the operations the training losses need; it is
// not a general autodiff system.
template <class T>
class Tape {
 public:
  enum class Op {
    kConst,
    kParam,
    kLinear,
    kRelu,
    kTanh,
    kAdd,
    kSub,
    kMul,
    kAffine,
    kExp,
    kSquare,
    kConcatCols,
    kSliceCols,
    kSumAll,
    kClamp,
    kConv2d,
  };

  struct ConvSpec {
    int cin = 0, h = 0, w = 0, k = 0, stride = 1, pad = 0;
    int cout = 0, hout = 0, wout = 0;
  };

  static constexpr std::array<int, 3> kNoInputs{-1, -1, -1};

  int constant(Tensor<T> value) { return push(Op::kConst, kNoInputs, std::move(value), nullptr, false); }

  // Leaf that references external storage and does not receive gradients
  // (frozen parameters, batch inputs).
  int frozen(const Tensor<T>* value) { return push(Op::kConst, kNoInputs, Tensor<T>{}, value, false); }

  // Trainable leaf referencing external storage; grad(id) is valid after
  // backward().
  int param(const Tensor<T>* value) { return push(Op::kParam, kNoInputs, Tensor<T>{}, value, true); }

  // y = x W + b with x:[B x n], W:[n x m], b:[m]
  int linear(int x, int w, int b) {
    const Tensor<T>& xv = value(x);
    const Tensor<T>& wv = value(w);
    const Tensor<T>& bv = value(b);
    if (xv.cols() != wv.rows()) throw std::invalid_argument("linear: input width does not match weight rows");
    if (bv.numel() != wv.cols()) throw std::invalid_argument("linear: bias length does not match weight cols");
    Tensor<T> out = Tensor<T>::zeros({xv.rows(), wv.cols()});
    MatMap<T>(out.data(), out.rows(), out.cols()).noalias() =
        cmap(xv) * cmap(wv);
    MatMap<T> om(out.data(), out.rows(), out.cols());
    om.rowwise() += Eigen::Map<const Eigen::RowVector<T, Eigen::Dynamic>>(bv.data(), bv.numel());
    return push(Op::kLinear, {x, w, b}, std::move(out));
  }

  int relu(int x) {
    Tensor<T> out = owned_copy(x);
    for (T& t : out.v) t = t > T(0) ? t : T(0);
    return push(Op::kRelu, {x, -1, -1}, std::move(out));
  }

  int tanh_(int x) {
    Tensor<T> out = owned_copy(x);
    for (T& t : out.v) t = std::tanh(t);
    return push(Op::kTanh, {x, -1, -1}, std::move(out));
  }

  int add(int a, int b) { return ew2(Op::kAdd, a, b, [](T x, T y) { return x + y; }); }
  int sub(int a, int b) { return ew2(Op::kSub, a, b, [](T x, T y) { return x - y; }); }
  int mul(int a, int b) { return ew2(Op::kMul, a, b, [](T x, T y) { return x * y; }); }

  // alpha * x + beta, elementwise
  int affine(int x, T alpha, T beta) {
    Tensor<T> out = owned_copy(x);
    for (T& t : out.v) t = alpha * t + beta;
    int id = push(Op::kAffine, {x, -1, -1}, std::move(out));
    nodes_[id].alpha = alpha;
    return id;
  }

  int scale(int x, T alpha) { return affine(x, alpha, T(0)); }

  int exp_(int x) {
    Tensor<T> out = owned_copy(x);
    for (T& t : out.v) t = std::exp(t);
    return push(Op::kExp, {x, -1, -1}, std::move(out));
  }

  int square(int x) {
    Tensor<T> out = owned_copy(x);
    for (T& t : out.v) t = t * t;
    return push(Op::kSquare, {x, -1, -1}, std::move(out));
  }

  // Gradient passes only strictly inside [lo, hi].
  int clamp(int x, T lo, T hi) {
    Tensor<T> out = owned_copy(x);
    for (T& t : out.v) t = t < lo ? lo : (t > hi ? hi : t);
    int id = push(Op::kClamp, {x, -1, -1}, std::move(out));
    nodes_[id].alpha = lo;
    nodes_[id].beta = hi;
    return id;
  }

  int concat_cols(int a, int b) {
    const Tensor<T>& av = value(a);
    const Tensor<T>& bv = value(b);
    if (av.rows() != bv.rows()) throw std::invalid_argument("concat_cols: row mismatch");
    int r = av.rows(), ca = av.cols(), cb = bv.cols();
    Tensor<T> out = Tensor<T>::zeros({r, ca + cb});
    for (int i = 0; i < r; ++i) {
      const T* pa = av.data() + static_cast<long>(i) * ca;
      const T* pb = bv.data() + static_cast<long>(i) * cb;
      T* po = out.data() + static_cast<long>(i) * (ca + cb);
      std::copy(pa, pa + ca, po);
      std::copy(pb, pb + cb, po + ca);
    }
    return push(Op::kConcatCols, {a, b, -1}, std::move(out));
  }

  int slice_cols(int x, int c0, int c1) {
    const Tensor<T>& xv = value(x);
    if (c0 < 0 || c1 > xv.cols() || c0 >= c1) throw std::invalid_argument("slice_cols: bad range");
    int r = xv.rows(), c = xv.cols();
    Tensor<T> out = Tensor<T>::zeros({r, c1 - c0});
    for (int i = 0; i < r; ++i)
      std::copy(xv.data() + static_cast<long>(i) * c + c0, xv.data() + static_cast<long>(i) * c + c1,
                out.data() + static_cast<long>(i) * (c1 - c0));
    int id = push(Op::kSliceCols, {x, -1, -1}, std::move(out));
    nodes_[id].i0 = c0;
    nodes_[id].i1 = c1;
    return id;
  }

  int sum_all(int x) {
    const Tensor<T>& xv = value(x);
    T s = 0;
    for (T t : xv.v) s += t;
    return push(Op::kSumAll, {x, -1, -1}, Tensor<T>({1}, {s}));
  }

  // x:[B x cin*h*w], weight:[cout x cin*k*k], bias:[cout]; stride/pad per spec.
  int conv2d(int x, int w, int b, ConvSpec spec) {
    const Tensor<T>& xv = value(x);
    const Tensor<T>& wv = value(w);
    spec.hout = (spec.h + 2 * spec.pad - spec.k) / spec.stride + 1;
    spec.wout = (spec.w + 2 * spec.pad - spec.k) / spec.stride + 1;
    if (xv.cols() != spec.cin * spec.h * spec.w) throw std::invalid_argument("conv2d: input shape mismatch");
    if (wv.rows() != spec.cout || wv.cols() != spec.cin * spec.k * spec.k)
      throw std::invalid_argument("conv2d: weight shape mismatch");
    int batch = xv.rows();
    int kk = spec.cin * spec.k * spec.k;
    int ohw = spec.hout * spec.wout;
    Tensor<T> cols = Tensor<T>::zeros({batch, kk * ohw});
    Tensor<T> out = Tensor<T>::zeros({batch, spec.cout * ohw});
    const Tensor<T>& bv = value(b);
    for (int n = 0; n < batch; ++n) {
      T* col = cols.data() + static_cast<long>(n) * kk * ohw;
      im2col(xv.data() + static_cast<long>(n) * xv.cols(), spec, col);
      MatMap<T> y(out.data() + static_cast<long>(n) * out.cols(), spec.cout, ohw);
      y.noalias() = cmap(wv) * ConstMatMap<T>(col, kk, ohw);
      y.colwise() += Eigen::Map<const Eigen::Vector<T, Eigen::Dynamic>>(bv.data(), spec.cout);
    }
    int id = push(Op::kConv2d, {x, w, b}, std::move(out));
    nodes_[id].conv = spec;
    nodes_[id].aux = std::move(cols);
    return id;
  }

  const Tensor<T>& value(int id) const {
    const Node& n = nodes_[id];
    return n.ref ? *n.ref : n.val;
  }

  const Tensor<T>& grad(int id) const {
    if (nodes_[id].grad.v.empty()) {
      static const Tensor<T> empty;
      return empty;
    }
    return nodes_[id].grad;
  }

  // Backpropagate from a scalar loss node.
  void backward(int loss) {
    const Tensor<T>& lv = value(loss);
    if (lv.numel() != 1) throw std::invalid_argument("backward: loss must be scalar");
    ensure_grad(loss);
    nodes_[loss].grad.v[0] = T(1);
    for (int id = loss; id >= 0; --id) {
      Node& n = nodes_[id];
      if (n.grad.v.empty() || !n.wants_grad) continue;
      step_backward(id, n);
    }
  }

 private:
  struct Node {
    Op op;
    std::array<int, 3> in{-1, -1, -1};
    Tensor<T> val;             // owned value (unused when ref != nullptr)
    const Tensor<T>* ref = nullptr;
    Tensor<T> grad;
    Tensor<T> aux;             // conv: cached im2col buffer
    bool wants_grad = false;
    T alpha = 0, beta = 0;     // affine / clamp bounds
    int i0 = 0, i1 = 0;        // slice range
    ConvSpec conv;
  };

  static ConstMatMap<T> cmap(const Tensor<T>& t) { return ConstMatMap<T>(t.data(), t.rows(), t.cols()); }
  static MatMap<T> map(Tensor<T>& t) { return MatMap<T>(t.data(), t.rows(), t.cols()); }

  Tensor<T> owned_copy(int x) const {
    const Tensor<T>& xv = value(x);
    return Tensor<T>(xv.shape, xv.v);
  }

  template <class F>
  int ew2(Op op, int a, int b, F f) {
    const Tensor<T>& av = value(a);
    const Tensor<T>& bv = value(b);
    if (av.shape != bv.shape) throw std::invalid_argument("elementwise: shape mismatch");
    Tensor<T> out = Tensor<T>(av.shape, av.v);
    for (long i = 0; i < out.numel(); ++i) out.v[i] = f(av.v[i], bv.v[i]);
    return push(op, {a, b, -1}, std::move(out));
  }

  int push(Op op, std::array<int, 3> in, Tensor<T> val, const Tensor<T>* ref = nullptr, bool param_grad = false) {
    Node n;
    n.op = op;
    n.in = in;
    n.val = std::move(val);
    n.ref = ref;
    n.wants_grad = param_grad;
    for (int i : in)
      if (i >= 0 && nodes_[i].wants_grad) n.wants_grad = true;
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size() - 1);
  }

  void ensure_grad(int id) {
    Node& n = nodes_[id];
    if (n.grad.v.empty()) n.grad = Tensor<T>::zeros(value(id).shape);
  }

  // Accumulate into input `which` of node id only if that input can reach a
  // parameter.
  Tensor<T>* sink(int id, int which) {
    int in = nodes_[id].in[which];
    if (in < 0 || !nodes_[in].wants_grad) return nullptr;
    ensure_grad(in);
    return &nodes_[in].grad;
  }

  void step_backward(int id, Node& n) {
    const Tensor<T>& g = n.grad;
    switch (n.op) {
      case Op::kConst:
      case Op::kParam:
        break;
      case Op::kLinear: {
        const Tensor<T>& xv = value(n.in[0]);
        const Tensor<T>& wv = value(n.in[1]);
        if (Tensor<T>* dx = sink(id, 0))
          map(*dx).noalias() += cmap(g) * cmap(wv).transpose();
        if (Tensor<T>* dw = sink(id, 1))
          map(*dw).noalias() += cmap(xv).transpose() * cmap(g);
        if (Tensor<T>* db = sink(id, 2))
          Eigen::Map<Eigen::RowVector<T, Eigen::Dynamic>>(db->data(), db->numel()) += cmap(g).colwise().sum();
        break;
      }
      case Op::kRelu: {
        if (Tensor<T>* dx = sink(id, 0)) {
          const Tensor<T>& y = value(id);
          for (long i = 0; i < g.numel(); ++i)
            if (y.v[i] > T(0)) dx->v[i] += g.v[i];
        }
        break;
      }
      case Op::kTanh: {
        if (Tensor<T>* dx = sink(id, 0)) {
          const Tensor<T>& y = value(id);
          for (long i = 0; i < g.numel(); ++i) dx->v[i] += g.v[i] * (T(1) - y.v[i] * y.v[i]);
        }
        break;
      }
      case Op::kAdd: {
        if (Tensor<T>* da = sink(id, 0))
          for (long i = 0; i < g.numel(); ++i) da->v[i] += g.v[i];
        if (Tensor<T>* db = sink(id, 1))
          for (long i = 0; i < g.numel(); ++i) db->v[i] += g.v[i];
        break;
      }
      case Op::kSub: {
        if (Tensor<T>* da = sink(id, 0))
          for (long i = 0; i < g.numel(); ++i) da->v[i] += g.v[i];
        if (Tensor<T>* db = sink(id, 1))
          for (long i = 0; i < g.numel(); ++i) db->v[i] -= g.v[i];
        break;
      }
      case Op::kMul: {
        const Tensor<T>& av = value(n.in[0]);
        const Tensor<T>& bv = value(n.in[1]);
        if (Tensor<T>* da = sink(id, 0))
          for (long i = 0; i < g.numel(); ++i) da->v[i] += g.v[i] * bv.v[i];
        if (Tensor<T>* db = sink(id, 1))
          for (long i = 0; i < g.numel(); ++i) db->v[i] += g.v[i] * av.v[i];
        break;
      }
      case Op::kAffine: {
        if (Tensor<T>* dx = sink(id, 0))
          for (long i = 0; i < g.numel(); ++i) dx->v[i] += n.alpha * g.v[i];
        break;
      }
      case Op::kExp: {
        if (Tensor<T>* dx = sink(id, 0)) {
          const Tensor<T>& y = value(id);
          for (long i = 0; i < g.numel(); ++i) dx->v[i] += g.v[i] * y.v[i];
        }
        break;
      }
      case Op::kSquare: {
        if (Tensor<T>* dx = sink(id, 0)) {
          const Tensor<T>& xv = value(n.in[0]);
          for (long i = 0; i < g.numel(); ++i) dx->v[i] += T(2) * g.v[i] * xv.v[i];
        }
        break;
      }
      case Op::kClamp: {
        if (Tensor<T>* dx = sink(id, 0)) {
          const Tensor<T>& xv = value(n.in[0]);
          for (long i = 0; i < g.numel(); ++i)
            if (xv.v[i] > n.alpha && xv.v[i] < n.beta) dx->v[i] += g.v[i];
        }
        break;
      }
      case Op::kConcatCols: {
        const Tensor<T>& av = value(n.in[0]);
        int r = av.rows(), ca = av.cols(), c = g.cols();
        if (Tensor<T>* da = sink(id, 0))
          for (int i = 0; i < r; ++i)
            for (int j = 0; j < ca; ++j) da->v[static_cast<long>(i) * ca + j] += g.v[static_cast<long>(i) * c + j];
        if (Tensor<T>* db = sink(id, 1)) {
          int cb = c - ca;
          for (int i = 0; i < r; ++i)
            for (int j = 0; j < cb; ++j)
              db->v[static_cast<long>(i) * cb + j] += g.v[static_cast<long>(i) * c + ca + j];
        }
        break;
      }
      case Op::kSliceCols: {
        if (Tensor<T>* dx = sink(id, 0)) {
          int r = g.rows(), cs = g.cols(), c = dx->cols();
          for (int i = 0; i < r; ++i)
            for (int j = 0; j < cs; ++j)
              dx->v[static_cast<long>(i) * c + n.i0 + j] += g.v[static_cast<long>(i) * cs + j];
        }
        break;
      }
      case Op::kSumAll: {
        if (Tensor<T>* dx = sink(id, 0)) {
          T gv = g.v[0];
          for (T& t : dx->v) t += gv;
        }
        break;
      }
      case Op::kConv2d: {
        const ConvSpec& c = n.conv;
        int kk = c.cin * c.k * c.k;
        int ohw = c.hout * c.wout;
        int batch = g.rows();
        const Tensor<T>& wv = value(n.in[1]);
        Tensor<T>* dx = sink(id, 0);
        Tensor<T>* dw = sink(id, 1);
        Tensor<T>* db = sink(id, 2);
        std::vector<T> dcol(static_cast<size_t>(kk) * ohw);
        for (int s = 0; s < batch; ++s) {
          ConstMatMap<T> gy(g.data() + static_cast<long>(s) * g.cols(), c.cout, ohw);
          const T* col = n.aux.data() + static_cast<long>(s) * kk * ohw;
          if (dw)
            map(*dw).noalias() += gy * ConstMatMap<T>(col, kk, ohw).transpose();
          if (db)
            Eigen::Map<Eigen::Vector<T, Eigen::Dynamic>>(db->data(), c.cout) += gy.rowwise().sum();
          if (dx) {
            MatMap<T>(dcol.data(), kk, ohw).noalias() = cmap(wv).transpose() * gy;
            col2im(dcol.data(), c, dx->data() + static_cast<long>(s) * dx->cols());
          }
        }
        break;
      }
    }
  }

  static void im2col(const T* x, const ConvSpec& c, T* col) {
    for (int ch = 0; ch < c.cin; ++ch)
      for (int ky = 0; ky < c.k; ++ky)
        for (int kx = 0; kx < c.k; ++kx) {
          long r = (static_cast<long>(ch) * c.k + ky) * c.k + kx;
          for (int oy = 0; oy < c.hout; ++oy) {
            int iy = oy * c.stride - c.pad + ky;
            for (int ox = 0; ox < c.wout; ++ox) {
              int ix = ox * c.stride - c.pad + kx;
              T val = T(0);
              if (iy >= 0 && iy < c.h && ix >= 0 && ix < c.w)
                val = x[(static_cast<long>(ch) * c.h + iy) * c.w + ix];
              col[r * (static_cast<long>(c.hout) * c.wout) + static_cast<long>(oy) * c.wout + ox] = val;
            }
          }
        }
  }

  static void col2im(const T* col, const ConvSpec& c, T* dx) {
    for (int ch = 0; ch < c.cin; ++ch)
      for (int ky = 0; ky < c.k; ++ky)
        for (int kx = 0; kx < c.k; ++kx) {
          long r = (static_cast<long>(ch) * c.k + ky) * c.k + kx;
          for (int oy = 0; oy < c.hout; ++oy) {
            int iy = oy * c.stride - c.pad + ky;
            if (iy < 0 || iy >= c.h) continue;
            for (int ox = 0; ox < c.wout; ++ox) {
              int ix = ox * c.stride - c.pad + kx;
              if (ix < 0 || ix >= c.w) continue;
              dx[(static_cast<long>(ch) * c.h + iy) * c.w + ix] +=
                  col[r * (static_cast<long>(c.hout) * c.wout) + static_cast<long>(oy) * c.wout + ox];
            }
          }
        }
  }

  std::vector<Node> nodes_;
};

}  // namespace dyne::nn
