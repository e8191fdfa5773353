#include <algorithm>
#include <cmath>

#include <Eigen/Core>

#include "salcar/autodiff.hpp"

namespace salcar {
namespace {

template <typename T>
void require_same_tape(Var<T> a, Var<T> b, const char* op) {
  if (a.tape != b.tape) throw ShapeError(std::string(op) + ": operands live on different tapes");
}

template <typename T>
void require_rank(const BasicTensor<T>& t, std::size_t rank, const char* op, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) + ", got " +
                     shape_string(t.shape()));
  }
}

// Valid output index range [lo, hi) for which in = out*stride + k - pad lies in [0, extent).
struct Range {
  std::size_t lo, hi;
};

Range valid_range(std::size_t out_extent, std::size_t in_extent, std::size_t stride, std::size_t k,
                  std::size_t pad) {
  std::size_t lo = 0;
  while (lo < out_extent && lo * stride + k < pad) ++lo;
  std::size_t hi = out_extent;
  while (hi > lo && (hi - 1) * stride + k >= pad + in_extent) --hi;
  return {lo, hi};
}

template <typename T>
using MatrixT = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapConst = Eigen::Map<const MatrixT<T>>;
template <typename T>
using MapMut = Eigen::Map<MatrixT<T>>;

struct ConvGeom {
  std::size_t N, C, H, W, O, k, stride, pad, Ho, Wo;
};

// Row (c,ky,kx), column (n,oy,ox); out-of-bounds taps are zero.
template <typename T>
MatrixT<T> im2col(const T* x, const ConvGeom& g) {
  const std::size_t plane = g.Ho * g.Wo;
  if (g.k == 1 && g.stride == 1) {
    MatrixT<T> cols(g.C, g.N * plane);
    for (std::size_t c = 0; c < g.C; ++c) {
      for (std::size_t n = 0; n < g.N; ++n) {
        const T* ip = x + (n * g.C + c) * plane;
        std::copy(ip, ip + plane, cols.data() + c * g.N * plane + n * plane);
      }
    }
    return cols;
  }
  MatrixT<T> cols = MatrixT<T>::Zero(g.C * g.k * g.k, g.N * plane);
  for (std::size_t c = 0; c < g.C; ++c) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      const Range ry = valid_range(g.Ho, g.H, g.stride, ky, g.pad);
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const Range rx = valid_range(g.Wo, g.W, g.stride, kx, g.pad);
        T* row = cols.data() + ((c * g.k + ky) * g.k + kx) * g.N * plane;
        for (std::size_t n = 0; n < g.N; ++n) {
          const T* ip = x + (n * g.C + c) * g.H * g.W;
          T* dst = row + n * plane;
          for (std::size_t oy = ry.lo; oy < ry.hi; ++oy) {
            const T* irow = ip + (oy * g.stride + ky - g.pad) * g.W;
            T* orow = dst + oy * g.Wo;
            if (g.stride == 1) {
              const T* src = irow + kx - g.pad;
              for (std::size_t ox = rx.lo; ox < rx.hi; ++ox) orow[ox] = src[ox];
            } else {
              for (std::size_t ox = rx.lo; ox < rx.hi; ++ox) orow[ox] = irow[ox * g.stride + kx - g.pad];
            }
          }
        }
      }
    }
  }
  return cols;
}

template <typename T>
void col2im_add(const MatrixT<T>& cols, T* gx, const ConvGeom& g) {
  const std::size_t plane = g.Ho * g.Wo;
  for (std::size_t c = 0; c < g.C; ++c) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      const Range ry = valid_range(g.Ho, g.H, g.stride, ky, g.pad);
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const Range rx = valid_range(g.Wo, g.W, g.stride, kx, g.pad);
        const T* row = cols.data() + ((c * g.k + ky) * g.k + kx) * g.N * plane;
        for (std::size_t n = 0; n < g.N; ++n) {
          T* ip = gx + (n * g.C + c) * g.H * g.W;
          const T* src = row + n * plane;
          for (std::size_t oy = ry.lo; oy < ry.hi; ++oy) {
            T* irow = ip + (oy * g.stride + ky - g.pad) * g.W;
            for (std::size_t ox = rx.lo; ox < rx.hi; ++ox) irow[ox * g.stride + kx - g.pad] += src[oy * g.Wo + ox];
          }
        }
      }
    }
  }
}

template <typename T>
Var<T> unary(Var<T> x, T (*f)(T, double), T (*df)(T, T, double), double arg) {
  const auto& xv = x.value();
  BasicTensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i], arg);
  std::size_t xi = x.id;
  return x.tape->record(std::move(out), {xi}, [xi, df, arg](Tape<T>& tape, std::size_t self) {
    auto gx = tape.grad_slot(xi);
    if (gx.empty()) return;
    const auto& in = tape.value(xi);
    const auto& y = tape.value(self);
    auto g = tape.grad_of(self);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * df(in[i], y[i], arg);
  });
}

}  // namespace

template <typename T>
Var<T> grouped_conv2d(Var<T> x, std::span<const Var<T>> ws, std::span<const Var<T>> bs, std::size_t stride,
                      std::size_t pad, GroupInput mode) {
  const char* op = ws.size() == 1 ? "conv2d" : "grouped_conv2d";
  if (ws.empty() || ws.size() != bs.size()) {
    throw ShapeError(std::string(op) + ": need one bias per weight and at least one group");
  }
  const auto& xv = x.value();
  require_rank(xv, 4, op, "input");
  const std::size_t G = ws.size();
  const std::size_t N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const Shape wshape = ws[0].shape();
  for (std::size_t g = 0; g < G; ++g) {
    require_same_tape(x, ws[g], op);
    require_same_tape(x, bs[g], op);
    require_rank(ws[g].value(), 4, op, "weight");
    require_rank(bs[g].value(), 1, op, "bias");
    if (ws[g].shape() != wshape) {
      throw ShapeError(std::string(op) + ": weight " + std::to_string(g) + " has shape " +
                       shape_string(ws[g].shape()) + ", expected " + shape_string(wshape));
    }
  }
  const std::size_t Og = wshape[0], Cg = wshape[1], k = wshape[2];
  const std::size_t expected_in = mode == GroupInput::shared ? C : C / G;
  if (Cg != expected_in || (mode == GroupInput::split && C % G != 0)) {
    throw ShapeError(std::string(op) + ": input channels (axis 1 of input = " + std::to_string(C) +
                     ") do not match weight axis 1 (" + std::to_string(Cg) + ")");
  }
  if (wshape[3] != k) throw ShapeError(std::string(op) + ": kernel must be square, got " + shape_string(wshape));
  if (k != 1 && k != 3) throw ShapeError(std::string(op) + ": kernel size must be 1 or 3, got " + std::to_string(k));
  if (pad != k / 2) throw ShapeError(std::string(op) + ": pad must be kernel/2 = " + std::to_string(k / 2));
  if (stride == 0) throw ShapeError(std::string(op) + ": stride must be positive");
  for (std::size_t g = 0; g < G; ++g) {
    if (bs[g].value().dim(0) != Og) {
      throw ShapeError(std::string(op) + ": bias length (" + std::to_string(bs[g].value().dim(0)) +
                       ") does not match output channels (" + std::to_string(Og) + ")");
    }
  }
  const std::size_t O = G * Og;
  const std::size_t Ho = (H + 2 * pad - k) / stride + 1;
  const std::size_t Wo = (W + 2 * pad - k) / stride + 1;
  const std::size_t plane = Ho * Wo, NP = N * plane, K = Cg * k * k;
  const ConvGeom geom{N, C, H, W, O, k, stride, pad, Ho, Wo};
  const bool shared = mode == GroupInput::shared;

  // Y (O x N*P); group g reads rows [g*K, (g+1)*K) of cols unless the input is shared.
  const MatrixT<T> cols = im2col(xv.data().data(), geom);
  // Weights of all groups stacked row-wise: O x K.
  MatrixT<T> wm(O, K);
  for (std::size_t g = 0; g < G; ++g) {
    const auto& wv = ws[g].value();
    std::copy(wv.data().begin(), wv.data().end(), wm.data() + g * Og * K);
  }
  MatrixT<T> y(O, NP);
  if (shared) {
    y.noalias() = wm * cols;
  } else {
    for (std::size_t g = 0; g < G; ++g) y.middleRows(g * Og, Og).noalias() = wm.middleRows(g * Og, Og) * cols.middleRows(g * K, K);
  }
  BasicTensor<T> out({N, O, Ho, Wo});
  for (std::size_t o = 0; o < O; ++o) {
    const T bias = bs[o / Og].value()[o % Og];
    for (std::size_t n = 0; n < N; ++n) {
      T* dst = &out.at(n, o, 0, 0);
      const T* src = y.data() + o * NP + n * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] + bias;
    }
  }

  std::vector<std::size_t> inputs{x.id};
  std::vector<std::size_t> wids, bids;
  for (std::size_t g = 0; g < G; ++g) {
    wids.push_back(ws[g].id);
    bids.push_back(bs[g].id);
  }
  inputs.insert(inputs.end(), wids.begin(), wids.end());
  inputs.insert(inputs.end(), bids.begin(), bids.end());
  const std::size_t xi = x.id;
  return x.tape->record(std::move(out), std::move(inputs), [=](Tape<T>& tape, std::size_t self) {
    auto g = tape.grad_of(self);
    MatrixT<T> gm(O, NP);
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t o = 0; o < O; ++o) {
        const T* src = g.data() + (n * O + o) * plane;
        std::copy(src, src + plane, gm.data() + o * NP + n * plane);
      }
    }
    bool need_w = false;
    for (std::size_t gi = 0; gi < G; ++gi) {
      auto gb = tape.grad_slot(bids[gi]);
      if (!gb.empty()) {
        for (std::size_t o = 0; o < Og; ++o) {
          double acc = 0;
          const T* row = gm.data() + (gi * Og + o) * NP;
          for (std::size_t i = 0; i < NP; ++i) acc += row[i];
          gb[o] += static_cast<T>(acc);
        }
      }
      need_w = need_w || tape.requires_grad(wids[gi]);
    }
    if (need_w) {
      const MatrixT<T> cols = im2col(tape.value(xi).data().data(), geom);
      for (std::size_t gi = 0; gi < G; ++gi) {
        auto gw = tape.grad_slot(wids[gi]);
        if (gw.empty()) continue;
        const auto src = shared ? cols.middleRows(0, K) : cols.middleRows(gi * K, K);
        MapMut<T>(gw.data(), Og, K).noalias() += gm.middleRows(gi * Og, Og) * src.transpose();
      }
    }
    auto gx = tape.grad_slot(xi);
    if (!gx.empty()) {
      MatrixT<T> wm(O, K);
      for (std::size_t gi = 0; gi < G; ++gi) {
        const auto& wv = tape.value(wids[gi]);
        std::copy(wv.data().begin(), wv.data().end(), wm.data() + gi * Og * K);
      }
      MatrixT<T> gcols;
      if (shared) {
        gcols.noalias() = wm.transpose() * gm;
      } else {
        gcols.resize(G * K, NP);
        for (std::size_t gi = 0; gi < G; ++gi) {
          gcols.middleRows(gi * K, K).noalias() = wm.middleRows(gi * Og, Og).transpose() * gm.middleRows(gi * Og, Og);
        }
      }
      col2im_add(gcols, gx.data(), geom);
    }
  });
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> bias, std::size_t stride, std::size_t pad) {
  return grouped_conv2d<T>(x, std::span<const Var<T>>(&w, 1), std::span<const Var<T>>(&bias, 1), stride, pad,
                           GroupInput::shared);
}

template <typename T>
Var<T> maxpool2(Var<T> x) {
  const auto& xv = x.value();
  require_rank(xv, 4, "maxpool2", "input");
  const std::size_t N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  if (H % 2 || W % 2) {
    throw ShapeError("maxpool2: spatial dims must be even, got " + shape_string(xv.shape()));
  }
  const std::size_t Ho = H / 2, Wo = W / 2;
  BasicTensor<T> out({N, C, Ho, Wo});
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(out.size());
  std::size_t idx = 0;
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const T* ip = xv.data().data() + nc * H * W;
    for (std::size_t oy = 0; oy < Ho; ++oy) {
      for (std::size_t ox = 0; ox < Wo; ++ox, ++idx) {
        // Row-major scan with strict '>' keeps the first maximum on ties.
        std::size_t best = (2 * oy) * W + 2 * ox;
        const std::size_t cand[3] = {best + 1, best + W, best + W + 1};
        for (auto cidx : cand) {
          if (ip[cidx] > ip[best]) best = cidx;
        }
        out[idx] = ip[best];
        (*argmax)[idx] = static_cast<std::uint32_t>(nc * H * W + best);
      }
    }
  }
  const std::size_t xi = x.id;
  return x.tape->record(std::move(out), {xi}, [xi, argmax](Tape<T>& tape, std::size_t self) {
    auto gx = tape.grad_slot(xi);
    if (gx.empty()) return;
    auto g = tape.grad_of(self);
    for (std::size_t i = 0; i < g.size(); ++i) gx[(*argmax)[i]] += g[i];
  });
}

template <typename T>
Var<T> leaky_relu(Var<T> x, double slope) {
  if (!(slope > 0.0 && slope < 1.0)) throw ShapeError("leaky_relu: slope must be in (0,1)");
  return unary<T>(
      x, [](T v, double s) { return v > T{0} ? v : static_cast<T>(s) * v; },
      [](T in, T, double s) { return in > T{0} ? T{1} : static_cast<T>(s); }, slope);
}

template <typename T>
Var<T> relu(Var<T> x) {
  return unary<T>(
      x, [](T v, double) { return v > T{0} ? v : T{0}; },
      [](T in, T, double) { return in > T{0} ? T{1} : T{0}; }, 0.0);
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  return unary<T>(
      x,
      [](T v, double) {
        return v >= T{0} ? T{1} / (T{1} + std::exp(-v)) : std::exp(v) / (T{1} + std::exp(v));
      },
      [](T, T y, double) { return y * (T{1} - y); }, 0.0);
}

template <typename T>
Var<T> softplus(Var<T> x) {
  return unary<T>(
      x, [](T v, double) { return std::max(v, T{0}) + std::log1p(std::exp(-std::abs(v))); },
      [](T in, T, double) {
        return in >= T{0} ? T{1} / (T{1} + std::exp(-in)) : std::exp(in) / (T{1} + std::exp(in));
      },
      0.0);
}

template <typename T>
Var<T> exponential(Var<T> x) {
  return unary<T>(
      x, [](T v, double) { return std::exp(v); }, [](T, T y, double) { return y; }, 0.0);
}

template <typename T>
Var<T> abs(Var<T> x) {
  return unary<T>(
      x, [](T v, double) { return std::abs(v); },
      [](T in, T, double) { return in > T{0} ? T{1} : (in < T{0} ? T{-1} : T{0}); }, 0.0);
}

template <typename T>
Var<T> scale(Var<T> x, double factor) {
  return unary<T>(
      x, [](T v, double f) { return static_cast<T>(f) * v; }, [](T, T, double f) { return static_cast<T>(f); },
      factor);
}

template <typename T>
Var<T> add_scalar(Var<T> x, double offset) {
  return unary<T>(
      x, [](T v, double c) { return v + static_cast<T>(c); }, [](T, T, double) { return T{1}; }, offset);
}

template <typename T>
Var<T> global_avg_pool(Var<T> x) {
  const auto& xv = x.value();
  require_rank(xv, 4, "global_avg_pool", "input");
  const std::size_t N = xv.dim(0), C = xv.dim(1), plane = xv.dim(2) * xv.dim(3);
  BasicTensor<T> out({N, C});
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    double acc = 0;
    const T* p = xv.data().data() + nc * plane;
    for (std::size_t i = 0; i < plane; ++i) acc += p[i];
    out[nc] = static_cast<T>(acc / static_cast<double>(plane));
  }
  const std::size_t xi = x.id;
  return x.tape->record(std::move(out), {xi}, [xi, plane](Tape<T>& tape, std::size_t self) {
    auto gx = tape.grad_slot(xi);
    if (gx.empty()) return;
    auto g = tape.grad_of(self);
    const T inv = T{1} / static_cast<T>(plane);
    for (std::size_t nc = 0; nc < g.size(); ++nc) {
      const T v = g[nc] * inv;
      T* dst = gx.data() + nc * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] += v;
    }
  });
}

template <typename T>
Var<T> fully_connected(Var<T> x, Var<T> w, Var<T> bias) {
  require_same_tape(x, w, "fully_connected");
  require_same_tape(x, bias, "fully_connected");
  const auto& xv = x.value();
  const auto& wv = w.value();
  const auto& bv = bias.value();
  require_rank(xv, 2, "fully_connected", "input");
  require_rank(wv, 2, "fully_connected", "weight");
  require_rank(bv, 1, "fully_connected", "bias");
  const std::size_t N = xv.dim(0), D = xv.dim(1), Do = wv.dim(0);
  if (wv.dim(1) != D) {
    throw ShapeError("fully_connected: input width (axis 1 = " + std::to_string(D) +
                     ") does not match weight axis 1 (" + std::to_string(wv.dim(1)) + ")");
  }
  if (bv.dim(0) != Do) throw ShapeError("fully_connected: bias length does not match weight axis 0");
  BasicTensor<T> out({N, Do});
  {
    MapMut<T> y(out.data().data(), N, Do);
    y.noalias() = MapConst<T>(xv.data().data(), N, D) * MapConst<T>(wv.data().data(), Do, D).transpose();
    y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bv.data().data(), Do);
  }
  const std::size_t xi = x.id, wi = w.id, bi = bias.id;
  return x.tape->record(std::move(out), {xi, wi, bi}, [=](Tape<T>& tape, std::size_t self) {
    const auto& xv = tape.value(xi);
    const auto& wv = tape.value(wi);
    auto g = tape.grad_of(self);
    auto gx = tape.grad_slot(xi);
    auto gw = tape.grad_slot(wi);
    auto gb = tape.grad_slot(bi);
    const MapConst<T> gm(g.data(), N, Do);
    if (!gb.empty()) {
      for (std::size_t o = 0; o < Do; ++o) {
        double acc = 0;
        for (std::size_t n = 0; n < N; ++n) acc += gm(n, o);
        gb[o] += static_cast<T>(acc);
      }
    }
    if (!gw.empty()) MapMut<T>(gw.data(), Do, D).noalias() += gm.transpose() * MapConst<T>(xv.data().data(), N, D);
    if (!gx.empty()) MapMut<T>(gx.data(), N, D).noalias() += gm * MapConst<T>(wv.data().data(), Do, D);
  });
}

template <typename T>
Var<T> concat_channels(std::span<const Var<T>> xs) {
  if (xs.empty()) throw ShapeError("concat_channels: no inputs");
  const auto& first = xs[0].value();
  require_rank(first, 4, "concat_channels", "input");
  const std::size_t N = first.dim(0), H = first.dim(2), W = first.dim(3);
  std::size_t C = 0;
  std::vector<std::size_t> ids, chans;
  for (const auto& v : xs) {
    require_same_tape(xs[0], v, "concat_channels");
    const auto& t = v.value();
    require_rank(t, 4, "concat_channels", "input");
    if (t.dim(0) != N || t.dim(2) != H || t.dim(3) != W) {
      throw ShapeError("concat_channels: non-channel dims differ: " + shape_string(first.shape()) + " vs " +
                       shape_string(t.shape()));
    }
    C += t.dim(1);
    ids.push_back(v.id);
    chans.push_back(t.dim(1));
  }
  const std::size_t plane = H * W;
  BasicTensor<T> out({N, C, H, W});
  for (std::size_t n = 0; n < N; ++n) {
    std::size_t c0 = 0;
    for (std::size_t j = 0; j < xs.size(); ++j) {
      const auto& t = xs[j].value();
      std::copy_n(t.data().data() + n * chans[j] * plane, chans[j] * plane,
                  out.data().data() + (n * C + c0) * plane);
      c0 += chans[j];
    }
  }
  return xs[0].tape->record(std::move(out), ids, [=](Tape<T>& tape, std::size_t self) {
    auto g = tape.grad_of(self);
    std::size_t c0 = 0;
    for (std::size_t j = 0; j < ids.size(); ++j) {
      auto gx = tape.grad_slot(ids[j]);
      if (!gx.empty()) {
        for (std::size_t n = 0; n < N; ++n) {
          const T* src = g.data() + (n * C + c0) * plane;
          T* dst = gx.data() + n * chans[j] * plane;
          for (std::size_t i = 0; i < chans[j] * plane; ++i) dst[i] += src[i];
        }
      }
      c0 += chans[j];
    }
  });
}

template <typename T>
Var<T> mul_broadcast(Var<T> x, Var<T> s) {
  require_same_tape(x, s, "mul_broadcast");
  const auto& xv = x.value();
  const auto& sv = s.value();
  require_rank(xv, 4, "mul_broadcast", "input");
  require_rank(sv, 2, "mul_broadcast", "scale");
  const std::size_t N = xv.dim(0), C = xv.dim(1), plane = xv.dim(2) * xv.dim(3);
  if (sv.dim(0) != N || sv.dim(1) != C) {
    throw ShapeError("mul_broadcast: scale " + shape_string(sv.shape()) + " does not match " +
                     shape_string(xv.shape()));
  }
  BasicTensor<T> out(xv.shape());
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    for (std::size_t i = 0; i < plane; ++i) out[nc * plane + i] = xv[nc * plane + i] * sv[nc];
  }
  const std::size_t xi = x.id, si = s.id;
  return x.tape->record(std::move(out), {xi, si}, [=](Tape<T>& tape, std::size_t self) {
    const auto& xv = tape.value(xi);
    const auto& sv = tape.value(si);
    auto g = tape.grad_of(self);
    auto gx = tape.grad_slot(xi);
    auto gs = tape.grad_slot(si);
    for (std::size_t nc = 0; nc < N * C; ++nc) {
      T acc = 0;
      for (std::size_t i = 0; i < plane; ++i) {
        const std::size_t k = nc * plane + i;
        acc += g[k] * xv[k];
        if (!gx.empty()) gx[k] += g[k] * sv[nc];
      }
      if (!gs.empty()) gs[nc] += acc;
    }
  });
}

namespace {

template <typename T>
Var<T> binary(Var<T> a, Var<T> b, const char* op, int kind) {
  require_same_tape(a, b, op);
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.shape() != bv.shape()) {
    throw ShapeError(std::string(op) + ": shapes differ " + shape_string(av.shape()) + " vs " +
                     shape_string(bv.shape()));
  }
  BasicTensor<T> out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) {
    out[i] = kind == 0 ? av[i] + bv[i] : kind == 1 ? av[i] - bv[i] : av[i] * bv[i];
  }
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->record(std::move(out), {ai, bi}, [=](Tape<T>& tape, std::size_t self) {
    auto g = tape.grad_of(self);
    auto ga = tape.grad_slot(ai);
    auto gb = tape.grad_slot(bi);
    const auto& av = tape.value(ai);
    const auto& bv = tape.value(bi);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!ga.empty()) ga[i] += kind == 2 ? g[i] * bv[i] : g[i];
      if (!gb.empty()) gb[i] += kind == 0 ? g[i] : kind == 1 ? -g[i] : g[i] * av[i];
    }
  });
}

}  // namespace

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  return binary(a, b, "add", 0);
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  return binary(a, b, "sub", 1);
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  return binary(a, b, "mul", 2);
}

template <typename T>
Var<T> div_scalar(Var<T> x, Var<T> s) {
  require_same_tape(x, s, "div_scalar");
  const auto& xv = x.value();
  if (s.value().size() != 1) throw ShapeError("div_scalar: divisor must have one element");
  const T d = s.value()[0];
  if (d == T{0}) throw NumericError("div_scalar: division by zero");
  BasicTensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] / d;
  const std::size_t xi = x.id, si = s.id;
  return x.tape->record(std::move(out), {xi, si}, [=](Tape<T>& tape, std::size_t self) {
    auto g = tape.grad_of(self);
    const auto& y = tape.value(self);
    auto gx = tape.grad_slot(xi);
    auto gs = tape.grad_slot(si);
    double acc = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!gx.empty()) gx[i] += g[i] / d;
      acc += static_cast<double>(g[i]) * static_cast<double>(y[i]);
    }
    if (!gs.empty()) gs[0] -= static_cast<T>(acc / static_cast<double>(d));
  });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  BasicTensor<T> out = x.value().reshaped(std::move(shape));
  const std::size_t xi = x.id;
  return x.tape->record(std::move(out), {xi}, [xi](Tape<T>& tape, std::size_t self) {
    auto gx = tape.grad_slot(xi);
    if (gx.empty()) return;
    auto g = tape.grad_of(self);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

template <typename T>
Var<T> sum(Var<T> x) {
  const auto& xv = x.value();
  double acc = 0;
  for (std::size_t i = 0; i < xv.size(); ++i) acc += xv[i];
  const std::size_t xi = x.id;
  return x.tape->record(BasicTensor<T>({1}, {static_cast<T>(acc)}), {xi}, [xi](Tape<T>& tape, std::size_t self) {
    auto gx = tape.grad_slot(xi);
    if (gx.empty()) return;
    const T g = tape.grad_of(self)[0];
    for (auto& v : gx) v += g;
  });
}

template <typename T>
Var<T> mean(Var<T> x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.value().size()));
}

template <typename T>
Var<T> select(Var<T> x, std::size_t i) {
  const auto& xv = x.value();
  if (i >= xv.size()) throw ShapeError("select: index " + std::to_string(i) + " out of range");
  const std::size_t xi = x.id;
  return x.tape->record(BasicTensor<T>({1}, {xv[i]}), {xi}, [xi, i](Tape<T>& tape, std::size_t self) {
    auto gx = tape.grad_slot(xi);
    if (!gx.empty()) gx[i] += tape.grad_of(self)[0];
  });
}

template <typename T>
Var<T> stack(std::span<const Var<T>> xs) {
  if (xs.empty()) throw ShapeError("stack: no inputs");
  std::vector<T> vals;
  std::vector<std::size_t> ids;
  for (const auto& v : xs) {
    require_same_tape(xs[0], v, "stack");
    if (v.value().size() != 1) throw ShapeError("stack: inputs must have one element");
    vals.push_back(v.value()[0]);
    ids.push_back(v.id);
  }
  const std::size_t k = vals.size();
  return xs[0].tape->record(BasicTensor<T>({k}, std::move(vals)), ids, [ids](Tape<T>& tape, std::size_t self) {
    auto g = tape.grad_of(self);
    for (std::size_t j = 0; j < ids.size(); ++j) {
      auto gx = tape.grad_slot(ids[j]);
      if (!gx.empty()) gx[0] += g[j];
    }
  });
}

#define SALCAR_INSTANTIATE_OPS(T)                                                      \
  template Var<T> conv2d(Var<T>, Var<T>, Var<T>, std::size_t, std::size_t);           \
  template Var<T> grouped_conv2d(Var<T>, std::span<const Var<T>>, std::span<const Var<T>>, std::size_t, \
                                 std::size_t, GroupInput);                                 \
  template Var<T> maxpool2(Var<T>);                                                    \
  template Var<T> leaky_relu(Var<T>, double);                                          \
  template Var<T> relu(Var<T>);                                                        \
  template Var<T> sigmoid(Var<T>);                                                     \
  template Var<T> softplus(Var<T>);                                                    \
  template Var<T> exponential(Var<T>);                                                 \
  template Var<T> abs(Var<T>);                                                         \
  template Var<T> global_avg_pool(Var<T>);                                             \
  template Var<T> fully_connected(Var<T>, Var<T>, Var<T>);                             \
  template Var<T> concat_channels(std::span<const Var<T>>);                            \
  template Var<T> mul_broadcast(Var<T>, Var<T>);                                       \
  template Var<T> add(Var<T>, Var<T>);                                                 \
  template Var<T> sub(Var<T>, Var<T>);                                                 \
  template Var<T> mul(Var<T>, Var<T>);                                                 \
  template Var<T> scale(Var<T>, double);                                               \
  template Var<T> add_scalar(Var<T>, double);                                          \
  template Var<T> div_scalar(Var<T>, Var<T>);                                          \
  template Var<T> reshape(Var<T>, Shape);                                              \
  template Var<T> sum(Var<T>);                                                         \
  template Var<T> mean(Var<T>);                                                        \
  template Var<T> select(Var<T>, std::size_t);                                         \
  template Var<T> stack(std::span<const Var<T>>);

SALCAR_INSTANTIATE_OPS(float)
SALCAR_INSTANTIATE_OPS(double)

}  // namespace salcar
