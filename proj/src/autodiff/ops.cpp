#include "fundus/autodiff/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <initializer_list>

#include "fundus/error.hpp"

namespace fundus::ad {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

template <typename T>
BasicTensor<T> make_result(Shape shape, Buffer<T> value,
                           std::initializer_list<BasicTensor<T>> parents,
                           std::function<void(Node<T>&)> backward_fn) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (grad_enabled()) {
    for (const auto& p : parents) {
      if (p.requires_grad()) node->requires_grad = true;
    }
  }
  if (node->requires_grad) {
    for (const auto& p : parents) node->parents.push_back(p.node_ptr());
    node->backward_fn = std::move(backward_fn);
  }
  return BasicTensor<T>(std::move(node));
}

void require(bool ok, ErrorCode code, const std::string& what) {
  if (!ok) throw Error(code, what);
}

template <typename T>
void require_rank(const BasicTensor<T>& x, std::size_t rank, const char* op) {
  require(x.defined() && x.rank() == rank, ErrorCode::ShapeMismatch,
          std::string(op) + " expects a rank-" + std::to_string(rank) + " tensor, got " +
              (x.defined() ? shape_str(x.shape()) : std::string("undefined")));
}

template <typename T>
void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op) {
  require(a.shape() == b.shape(), ErrorCode::ShapeMismatch,
          std::string(op) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

struct ConvGeometry {
  int n, cin, h, w, cout, k, stride, pad, ho, wo;
  std::size_t patch() const { return static_cast<std::size_t>(cin) * k * k; }
  std::size_t out_plane() const { return static_cast<std::size_t>(ho) * wo; }
  std::size_t in_plane() const { return static_cast<std::size_t>(h) * w; }
  bool pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
  const std::size_t p = g.out_plane();
  for (int c = 0; c < g.cin; ++c) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        T* row = cols + (static_cast<std::size_t>(c * g.k + ky) * g.k + kx) * p;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          T* dst = row + static_cast<std::size_t>(oy) * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.wo, T(0));
            continue;
          }
          const T* src = x + (static_cast<std::size_t>(c) * g.h + iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, T* dx) {
  const std::size_t p = g.out_plane();
  for (int c = 0; c < g.cin; ++c) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const T* row = cols + (static_cast<std::size_t>(c * g.k + ky) * g.k + kx) * p;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          T* dst = dx + (static_cast<std::size_t>(c) * g.h + iy) * g.w;
          const T* src = row + static_cast<std::size_t>(oy) * g.wo;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b,
                      int stride, int pad) {
  require_rank(x, 4, "conv2d input");
  require_rank(w, 4, "conv2d weight");
  require_rank(b, 1, "conv2d bias");
  ConvGeometry g{};
  g.n = x.dim(0);
  g.cin = x.dim(1);
  g.h = x.dim(2);
  g.w = x.dim(3);
  g.cout = w.dim(0);
  g.k = w.dim(2);
  g.stride = stride;
  g.pad = pad;
  require(w.dim(1) == g.cin && w.dim(3) == g.k && g.k % 2 == 1, ErrorCode::ShapeMismatch,
          "conv2d weight " + shape_str(w.shape()) + " does not fit input " + shape_str(x.shape()));
  require(b.dim(0) == g.cout, ErrorCode::ShapeMismatch, "conv2d bias does not match Cout");
  require(stride >= 1 && pad >= 0, ErrorCode::InvalidArgument, "conv2d stride/pad out of range");
  const int span_h = g.h + 2 * pad - g.k;
  const int span_w = g.w + 2 * pad - g.k;
  require(span_h >= 0 && span_w >= 0 && span_h % stride == 0 && span_w % stride == 0,
          ErrorCode::ShapeMismatch, "conv2d output extent is not integral");
  g.ho = span_h / stride + 1;
  g.wo = span_w / stride + 1;

  const std::size_t patch = g.patch();
  const std::size_t op = g.out_plane();
  Buffer<T> out(static_cast<std::size_t>(g.n) * g.cout * op);
  Buffer<T> cols(g.pointwise() ? 0 : patch * op);
  ConstMapMat<T> wm(w.values().data(), g.cout, static_cast<Eigen::Index>(patch));
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bv(b.values().data(), g.cout);
  for (int s = 0; s < g.n; ++s) {
    const T* xs = x.values().data() + static_cast<std::size_t>(s) * g.cin * g.in_plane();
    const T* colp = xs;
    if (!g.pointwise()) {
      im2col(xs, g, cols.data());
      colp = cols.data();
    }
    ConstMapMat<T> cm(colp, static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(op));
    MapMat<T> om(out.data() + static_cast<std::size_t>(s) * g.cout * op, g.cout,
                 static_cast<Eigen::Index>(op));
    om.noalias() = wm * cm;
    om.colwise() += bv;
  }

  auto* xn = &x.node();
  auto* wn = &w.node();
  auto* bn = &b.node();
  return make_result<T>({g.n, g.cout, g.ho, g.wo}, std::move(out), {x, w, b}, [=](Node<T>& self) {
    const std::size_t patch = g.patch();
    const std::size_t op = g.out_plane();
    Buffer<T> cols(patch * op);
    ConstMapMat<T> wm(wn->value.data(), g.cout, static_cast<Eigen::Index>(patch));
    for (int s = 0; s < g.n; ++s) {
      const T* xs = xn->value.data() + static_cast<std::size_t>(s) * g.cin * g.in_plane();
      ConstMapMat<T> gout(self.grad.data() + static_cast<std::size_t>(s) * g.cout * op, g.cout,
                          static_cast<Eigen::Index>(op));
      if (bn->requires_grad) {
        Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> gb(bn->ensure_grad().data(), g.cout);
        gb += gout.rowwise().sum();
      }
      if (wn->requires_grad) {
        const T* colp = xs;
        if (!g.pointwise()) {
          im2col(xs, g, cols.data());
          colp = cols.data();
        }
        ConstMapMat<T> cm(colp, static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(op));
        MapMat<T> gw(wn->ensure_grad().data(), g.cout, static_cast<Eigen::Index>(patch));
        gw.noalias() += gout * cm.transpose();
      }
      if (xn->requires_grad) {
        T* gx = xn->ensure_grad().data() + static_cast<std::size_t>(s) * g.cin * g.in_plane();
        if (g.pointwise()) {
          MapMat<T> gxm(gx, static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(op));
          gxm.noalias() += wm.transpose() * gout;
        } else {
          MapMat<T> gcols(cols.data(), static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(op));
          gcols.noalias() = wm.transpose() * gout;
          col2im_add(cols.data(), g, gx);
        }
      }
    }
  });
}

template <typename T>
BasicTensor<T> max_pool2(const BasicTensor<T>& x) {
  require_rank(x, 4, "max_pool2");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  require(h % 2 == 0 && w % 2 == 0, ErrorCode::OddSpatialDims,
          "max_pool2 needs even spatial dims, got " + shape_str(x.shape()));
  const int ho = h / 2, wo = w / 2;
  const std::size_t planes = static_cast<std::size_t>(n) * c;
  Buffer<T> out(planes * ho * wo);
  std::vector<std::size_t> argmax(out.size());
  auto xv = x.values();
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const std::size_t in_base = pl * h * w;
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        std::size_t best = in_base + static_cast<std::size_t>(2 * oy) * w + 2 * ox;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const std::size_t idx = in_base + static_cast<std::size_t>(2 * oy + dy) * w + 2 * ox + dx;
            if (xv[idx] > xv[best]) best = idx;
          }
        }
        const std::size_t o = (pl * ho + oy) * wo + ox;
        out[o] = xv[best];
        argmax[o] = best;
      }
    }
  }
  auto* xn = &x.node();
  return make_result<T>({n, c, ho, wo}, std::move(out), {x},
                        [xn, argmax = std::move(argmax)](Node<T>& self) {
                          auto& gx = xn->ensure_grad();
                          for (std::size_t o = 0; o < argmax.size(); ++o) gx[argmax[o]] += self.grad[o];
                        });
}

template <typename T>
BasicTensor<T> upsample_nearest2(const BasicTensor<T>& x) {
  require_rank(x, 4, "upsample_nearest2");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int ho = 2 * h, wo = 2 * w;
  const std::size_t planes = static_cast<std::size_t>(n) * c;
  Buffer<T> out(planes * ho * wo);
  auto xv = x.values();
  for (std::size_t pl = 0; pl < planes; ++pl) {
    for (int y = 0; y < ho; ++y) {
      for (int xx = 0; xx < wo; ++xx) {
        out[(pl * ho + y) * wo + xx] = xv[(pl * h + y / 2) * w + xx / 2];
      }
    }
  }
  auto* xn = &x.node();
  return make_result<T>({n, c, ho, wo}, std::move(out), {x}, [=](Node<T>& self) {
    auto& gx = xn->ensure_grad();
    for (std::size_t pl = 0; pl < planes; ++pl) {
      for (int y = 0; y < ho; ++y) {
        for (int xx = 0; xx < wo; ++xx) {
          gx[(pl * h + y / 2) * w + xx / 2] += self.grad[(pl * ho + y) * wo + xx];
        }
      }
    }
  });
}

template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_rank(a, 4, "concat_channels");
  require_rank(b, 4, "concat_channels");
  require(a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3),
          ErrorCode::ShapeMismatch,
          "concat_channels: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  const std::size_t plane = static_cast<std::size_t>(a.dim(2)) * a.dim(3);
  const std::size_t sa = ca * plane, sb = cb * plane;
  Buffer<T> out(static_cast<std::size_t>(n) * (sa + sb));
  for (int s = 0; s < n; ++s) {
    std::copy_n(a.values().data() + s * sa, sa, out.data() + s * (sa + sb));
    std::copy_n(b.values().data() + s * sb, sb, out.data() + s * (sa + sb) + sa);
  }
  auto* an = &a.node();
  auto* bn = &b.node();
  return make_result<T>({n, ca + cb, a.dim(2), a.dim(3)}, std::move(out), {a, b},
                        [=](Node<T>& self) {
                          for (int s = 0; s < n; ++s) {
                            const T* g = self.grad.data() + s * (sa + sb);
                            if (an->requires_grad) {
                              T* ga = an->ensure_grad().data() + s * sa;
                              for (std::size_t i = 0; i < sa; ++i) ga[i] += g[i];
                            }
                            if (bn->requires_grad) {
                              T* gb = bn->ensure_grad().data() + s * sb;
                              for (std::size_t i = 0; i < sb; ++i) gb[i] += g[sa + i];
                            }
                          }
                        });
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  Buffer<T> out(x.values().begin(), x.values().end());
  for (T& v : out) v = v > T(0) ? v : T(0);
  auto* xn = &x.node();
  return make_result<T>(x.shape(), std::move(out), {x}, [xn](Node<T>& self) {
    auto& gx = xn->ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (xn->value[i] > T(0)) gx[i] += self.grad[i];
    }
  });
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x) {
  Buffer<T> out(x.values().begin(), x.values().end());
  for (T& v : out) v = T(1) / (T(1) + std::exp(-v));
  auto* xn = &x.node();
  return make_result<T>(x.shape(), std::move(out), {x}, [xn](Node<T>& self) {
    auto& gx = xn->ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const T s = self.value[i];
      gx[i] += self.grad[i] * s * (T(1) - s);
    }
  });
}

template <typename T>
BasicTensor<T> scale_shift(const BasicTensor<T>& x, T lo, T hi) {
  const T range = hi - lo;
  Buffer<T> out(x.values().begin(), x.values().end());
  for (T& v : out) v = lo + range * v;
  auto* xn = &x.node();
  return make_result<T>(x.shape(), std::move(out), {x}, [xn, range](Node<T>& self) {
    auto& gx = xn->ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += range * self.grad[i];
  });
}

template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& x) {
  require_rank(x, 4, "global_avg_pool");
  const int n = x.dim(0), c = x.dim(1);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  const std::size_t planes = static_cast<std::size_t>(n) * c;
  Buffer<T> out(planes);
  auto xv = x.values();
  for (std::size_t pl = 0; pl < planes; ++pl) {
    double s = 0.0;
    for (std::size_t i = 0; i < plane; ++i) s += xv[pl * plane + i];
    out[pl] = static_cast<T>(s / static_cast<double>(plane));
  }
  auto* xn = &x.node();
  return make_result<T>({n, c}, std::move(out), {x}, [=](Node<T>& self) {
    auto& gx = xn->ensure_grad();
    const T inv = T(1) / static_cast<T>(plane);
    for (std::size_t pl = 0; pl < planes; ++pl) {
      const T g = self.grad[pl] * inv;
      for (std::size_t i = 0; i < plane; ++i) gx[pl * plane + i] += g;
    }
  });
}

template <typename T>
BasicTensor<T> dense(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b) {
  require_rank(x, 2, "dense input");
  require_rank(w, 2, "dense weight");
  require_rank(b, 1, "dense bias");
  const int n = x.dim(0), in = x.dim(1), outd = w.dim(0);
  require(w.dim(1) == in && b.dim(0) == outd, ErrorCode::ShapeMismatch,
          "dense: weight " + shape_str(w.shape()) + " does not fit input " + shape_str(x.shape()));
  Buffer<T> out(static_cast<std::size_t>(n) * outd);
  for (int s = 0; s < n; ++s) {
    for (int o = 0; o < outd; ++o) {
      T acc = b.values()[o];
      for (int i = 0; i < in; ++i) acc += x.values()[s * in + i] * w.values()[o * in + i];
      out[s * outd + o] = acc;
    }
  }
  auto* xn = &x.node();
  auto* wn = &w.node();
  auto* bn = &b.node();
  return make_result<T>({n, outd}, std::move(out), {x, w, b}, [=](Node<T>& self) {
    for (int s = 0; s < n; ++s) {
      for (int o = 0; o < outd; ++o) {
        const T g = self.grad[s * outd + o];
        if (bn->requires_grad) bn->ensure_grad()[o] += g;
        if (wn->requires_grad) {
          auto& gw = wn->ensure_grad();
          for (int i = 0; i < in; ++i) gw[o * in + i] += g * xn->value[s * in + i];
        }
        if (xn->requires_grad) {
          auto& gx = xn->ensure_grad();
          for (int i = 0; i < in; ++i) gx[s * in + i] += g * wn->value[o * in + i];
        }
      }
    }
  });
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "add");
  Buffer<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  auto* an = &a.node();
  auto* bn = &b.node();
  return make_result<T>(a.shape(), std::move(out), {a, b}, [an, bn](Node<T>& self) {
    for (Node<T>* p : {an, bn}) {
      if (!p->requires_grad) continue;
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "mul");
  Buffer<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  auto* an = &a.node();
  auto* bn = &b.node();
  return make_result<T>(a.shape(), std::move(out), {a, b}, [an, bn](Node<T>& self) {
    if (an->requires_grad) {
      auto& g = an->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * an->value[i];
    }
  });
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, T factor) {
  Buffer<T> out(x.values().begin(), x.values().end());
  for (T& v : out) v *= factor;
  auto* xn = &x.node();
  return make_result<T>(x.shape(), std::move(out), {x}, [xn, factor](Node<T>& self) {
    auto& gx = xn->ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += factor * self.grad[i];
  });
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  double s = 0.0;
  for (T v : x.values()) s += v;
  auto* xn = &x.node();
  return make_result<T>({1}, {static_cast<T>(s)}, {x}, [xn](Node<T>& self) {
    auto& gx = xn->ensure_grad();
    for (T& g : gx) g += self.grad[0];
  });
}

template <typename T>
BasicTensor<T> bce_loss(const BasicTensor<T>& pred, const BasicTensor<T>& label) {
  require_same_shape(pred, label, "bce_loss");
  require(pred.rank() == 2 && pred.dim(1) == 1, ErrorCode::ShapeMismatch,
          "bce_loss expects [N, 1], got " + shape_str(pred.shape()));
  const std::size_t n = pred.numel();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = pred.values()[i];
    const double y = label.values()[i];
    require(p > 0.0 && p < 1.0, ErrorCode::DomainError,
            "prediction " + std::to_string(p) + " is not strictly inside (0, 1)");
    total -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
  }
  auto* pn = &pred.node();
  auto* ln = &label.node();
  return make_result<T>({1}, {static_cast<T>(total / static_cast<double>(n))}, {pred, label},
                        [pn, ln, n](Node<T>& self) {
                          const double g = static_cast<double>(self.grad[0]) / static_cast<double>(n);
                          if (pn->requires_grad) {
                            auto& gp = pn->ensure_grad();
                            for (std::size_t i = 0; i < n; ++i) {
                              const double p = pn->value[i];
                              const double y = ln->value[i];
                              gp[i] += static_cast<T>(g * (-y / p + (1.0 - y) / (1.0 - p)));
                            }
                          }
                          if (ln->requires_grad) {
                            auto& gl = ln->ensure_grad();
                            for (std::size_t i = 0; i < n; ++i) {
                              const double p = pn->value[i];
                              gl[i] += static_cast<T>(g * (std::log(1.0 - p) - std::log(p)));
                            }
                          }
                        });
}

template <typename T>
BasicTensor<T> mse_loss(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "mse_loss");
  const std::size_t n = a.numel();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(a.values()[i]) - static_cast<double>(b.values()[i]);
    total += d * d;
  }
  auto* an = &a.node();
  auto* bn = &b.node();
  return make_result<T>({1}, {static_cast<T>(total / static_cast<double>(n))}, {a, b},
                        [an, bn, n](Node<T>& self) {
                          const T scale2 = T(2) * self.grad[0] / static_cast<T>(n);
                          if (an->requires_grad) {
                            auto& g = an->ensure_grad();
                            for (std::size_t i = 0; i < n; ++i) g[i] += scale2 * (an->value[i] - bn->value[i]);
                          }
                          if (bn->requires_grad) {
                            auto& g = bn->ensure_grad();
                            for (std::size_t i = 0; i < n; ++i) g[i] -= scale2 * (an->value[i] - bn->value[i]);
                          }
                        });
}

template <typename T>
BasicTensor<T> shadow_removal(const BasicTensor<T>& image, const BasicTensor<T>& t,
                              const ShadowLayerConfig& cfg) {
  require_rank(image, 4, "shadow_removal image");
  require_rank(t, 4, "shadow_removal transmission");
  require(image.dim(1) == 3 && t.dim(1) == 1 && image.dim(0) == t.dim(0) &&
              image.dim(2) == t.dim(2) && image.dim(3) == t.dim(3),
          ErrorCode::ShapeMismatch,
          "shadow_removal: image " + shape_str(image.shape()) + ", t " + shape_str(t.shape()));
  cfg.validate();
  const ShadowBatch batch{image.dim(0), image.dim(2), image.dim(3)};
  Buffer<T> out(image.numel());
  shadow_forward<T>(image.values(), t.values(), batch, cfg, out);
  auto* in = &image.node();
  auto* tn = &t.node();
  return make_result<T>(image.shape(), std::move(out), {image, t}, [=](Node<T>& self) {
    Buffer<T> gi(in->value.size());
    Buffer<T> gt(tn->value.size());
    shadow_backward<T>(in->value, tn->value, batch, cfg, self.grad, gi, gt);
    if (in->requires_grad) {
      auto& g = in->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gi[i];
    }
    if (tn->requires_grad) {
      auto& g = tn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gt[i];
    }
  });
}

#define FUNDUS_INSTANTIATE_OPS(T)                                                              \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&,                 \
                                 const BasicTensor<T>&, int, int);                             \
  template BasicTensor<T> max_pool2(const BasicTensor<T>&);                                    \
  template BasicTensor<T> upsample_nearest2(const BasicTensor<T>&);                            \
  template BasicTensor<T> concat_channels(const BasicTensor<T>&, const BasicTensor<T>&);       \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                         \
  template BasicTensor<T> sigmoid(const BasicTensor<T>&);                                      \
  template BasicTensor<T> scale_shift(const BasicTensor<T>&, T, T);                            \
  template BasicTensor<T> global_avg_pool(const BasicTensor<T>&);                              \
  template BasicTensor<T> dense(const BasicTensor<T>&, const BasicTensor<T>&,                  \
                                const BasicTensor<T>&);                                        \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                   \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                   \
  template BasicTensor<T> scale(const BasicTensor<T>&, T);                                     \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                          \
  template BasicTensor<T> bce_loss(const BasicTensor<T>&, const BasicTensor<T>&);              \
  template BasicTensor<T> mse_loss(const BasicTensor<T>&, const BasicTensor<T>&);              \
  template BasicTensor<T> shadow_removal(const BasicTensor<T>&, const BasicTensor<T>&,         \
                                         const ShadowLayerConfig&);

FUNDUS_INSTANTIATE_OPS(float)
FUNDUS_INSTANTIATE_OPS(double)

}  // namespace fundus::ad
