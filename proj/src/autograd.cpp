#include "falb/autograd.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

#include "falb/blas.hpp"

namespace falb {

SeqLayout SeqLayout::uniform(int batch, int len) {
  SeqLayout l;
  l.batch = batch;
  l.lengths.assign(batch, len);
  l.offsets.resize(batch);
  for (int b = 0; b < batch; ++b) l.offsets[b] = b * len;
  l.total = batch * len;
  return l;
}

SeqLayout SeqLayout::ragged(std::vector<int> lengths) {
  SeqLayout l;
  l.batch = static_cast<int>(lengths.size());
  l.lengths = std::move(lengths);
  l.offsets.resize(l.batch);
  int off = 0;
  for (int b = 0; b < l.batch; ++b) {
    if (l.lengths[b] <= 0) throw std::invalid_argument("layout: non-positive sequence length");
    l.offsets[b] = off;
    off += l.lengths[b];
  }
  l.total = off;
  return l;
}

int SeqLayout::max_len() const {
  int m = 0;
  for (int t : lengths) m = std::max(m, t);
  return m;
}

template <typename T>
Var Tape<T>::push(Tensor<T> value, bool requires_grad, std::function<void(Tape&)> backward,
                  const char* what) {
  if (check_finite_) value.require_finite(what);
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int32_t>(nodes_.size() - 1)};
}

template <typename T>
Tensor<T>& Tape<T>::grad_buf(int32_t id) {
  Node& n = node(id);
  if (n.grad.numel() == 0) n.grad = Tensor<T>(n.value.shape());
  return n.grad;
}

template <typename T>
void Tape<T>::accumulate(int32_t id, const Tensor<T>& delta) {
  Tensor<T>& g = grad_buf(id);
  T* gp = g.data();
  const T* dp = delta.data();
  for (int64_t i = 0, e = g.numel(); i < e; ++i) gp[i] += dp[i];
}

template <typename T>
const Tensor<T>& Tape<T>::grad(Var v) const {
  const Node& n = node(v.id);
  if (n.grad.numel() == 0)
    throw std::runtime_error("tape: gradient not populated (did backward() run?)");
  return n.grad;
}

template <typename T>
Var Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
  return push(std::move(value), requires_grad, nullptr, "leaf");
}

template <typename T>
Var Tape<T>::add(Var a, Var b) {
  const Tensor<T>&av = value(a), &bv = value(b);
  if (!av.same_shape(bv)) throw std::invalid_argument("add: shape mismatch");
  Tensor<T> out(av.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = av[i] + bv[i];
  bool rg = requires_grad(a) || requires_grad(b);
  return push(std::move(out), rg,
              [a, b, self = size()](Tape& t) {
                const Tensor<T>& g = t.node(static_cast<int32_t>(self)).grad;
                if (t.requires_grad(a)) t.accumulate(a.id, g);
                if (t.requires_grad(b)) t.accumulate(b.id, g);
              },
              "add");
}

template <typename T>
Var Tape<T>::sub(Var a, Var b) {
  const Tensor<T>&av = value(a), &bv = value(b);
  if (!av.same_shape(bv)) throw std::invalid_argument("sub: shape mismatch");
  Tensor<T> out(av.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = av[i] - bv[i];
  bool rg = requires_grad(a) || requires_grad(b);
  return push(std::move(out), rg,
              [a, b, self = size()](Tape& t) {
                const Tensor<T>& g = t.node(static_cast<int32_t>(self)).grad;
                if (t.requires_grad(a)) t.accumulate(a.id, g);
                if (t.requires_grad(b)) {
                  Tensor<T>& gb = t.grad_buf(b.id);
                  for (int64_t i = 0; i < gb.numel(); ++i) gb[i] -= g[i];
                }
              },
              "sub");
}

template <typename T>
Var Tape<T>::hadamard(Var a, Var b) {
  const Tensor<T>&av = value(a), &bv = value(b);
  if (!av.same_shape(bv)) throw std::invalid_argument("hadamard: shape mismatch");
  Tensor<T> out(av.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = av[i] * bv[i];
  bool rg = requires_grad(a) || requires_grad(b);
  return push(std::move(out), rg,
              [a, b, self = size()](Tape& t) {
                const Tensor<T>& g = t.node(static_cast<int32_t>(self)).grad;
                if (t.requires_grad(a)) {
                  Tensor<T>& ga = t.grad_buf(a.id);
                  const Tensor<T>& bv2 = t.value(b);
                  for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += g[i] * bv2[i];
                }
                if (t.requires_grad(b)) {
                  Tensor<T>& gb = t.grad_buf(b.id);
                  const Tensor<T>& av2 = t.value(a);
                  for (int64_t i = 0; i < gb.numel(); ++i) gb[i] += g[i] * av2[i];
                }
              },
              "hadamard");
}

template <typename T>
Var Tape<T>::scale(Var a, T c) {
  const Tensor<T>& av = value(a);
  Tensor<T> out(av.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = c * av[i];
  return push(std::move(out), requires_grad(a),
              [a, c, self = size()](Tape& t) {
                const Tensor<T>& g = t.node(static_cast<int32_t>(self)).grad;
                Tensor<T>& ga = t.grad_buf(a.id);
                for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += c * g[i];
              },
              "scale");
}

template <typename T>
Var Tape<T>::silu(Var a) {
  const Tensor<T>& av = value(a);
  bool rg = requires_grad(a);
  // sigmoid values are kept for the backward sweep
  auto sig = rg ? std::make_shared<Tensor<T>>(av.shape()) : nullptr;
  Tensor<T> out(av.shape());
  for (int64_t i = 0; i < out.numel(); ++i) {
    T s = T(1) / (T(1) + std::exp(-av[i]));
    if (sig) (*sig)[i] = s;
    out[i] = av[i] * s;
  }
  return push(std::move(out), rg,
              [a, sig, self = size()](Tape& t) {
                const Tensor<T>& g = t.node(static_cast<int32_t>(self)).grad;
                const Tensor<T>& x = t.value(a);
                Tensor<T>& ga = t.grad_buf(a.id);
                for (int64_t i = 0; i < ga.numel(); ++i) {
                  T s = (*sig)[i];
                  ga[i] += g[i] * s * (T(1) + x[i] * (T(1) - s));
                }
              },
              "silu");
}

template <typename T>
Var Tape<T>::sum(Var a) {
  const Tensor<T>& av = value(a);
  T acc = 0;
  for (int64_t i = 0; i < av.numel(); ++i) acc += av[i];
  Tensor<T> out({1});
  out[0] = acc;
  return push(std::move(out), requires_grad(a),
              [a, self = size()](Tape& t) {
                T g = t.node(static_cast<int32_t>(self)).grad[0];
                Tensor<T>& ga = t.grad_buf(a.id);
                for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += g;
              },
              "sum");
}

template <typename T>
Var Tape<T>::matmul(Var a, Var b) {
  const Tensor<T>&av = value(a), &bv = value(b);
  if (av.ndim() != 2 || bv.ndim() != 2 || av.cols() != bv.rows())
    throw std::invalid_argument("matmul: extent mismatch " + shape_str(av.shape()) + " x " +
                                shape_str(bv.shape()));
  int64_t p = av.rows(), q = av.cols(), r = bv.cols();
  Tensor<T> out({p, r});
  blas::gemm(false, false, p, r, q, T(1), av.data(), q, bv.data(), r, T(0), out.data(), r);
  bool rg = requires_grad(a) || requires_grad(b);
  return push(std::move(out), rg,
              [a, b, p, q, r, self = size()](Tape& t) {
                const Tensor<T>& g = t.node(static_cast<int32_t>(self)).grad;
                if (t.requires_grad(a)) {
                  // dA += dC * B^T
                  Tensor<T>& ga = t.grad_buf(a.id);
                  blas::gemm(false, true, p, q, r, T(1), g.data(), r, t.value(b).data(), r, T(1),
                             ga.data(), q);
                }
                if (t.requires_grad(b)) {
                  // dB += A^T * dC
                  Tensor<T>& gb = t.grad_buf(b.id);
                  blas::gemm(true, false, q, r, p, T(1), t.value(a).data(), q, g.data(), r, T(1),
                             gb.data(), r);
                }
              },
              "matmul");
}

template <typename T>
Var Tape<T>::rms_norm(Var h, Var gain, T eps) {
  const Tensor<T>&hv = value(h), &gv = value(gain);
  if (hv.ndim() != 2) throw std::invalid_argument("rms_norm: expected 2-D input");
  int64_t n = hv.rows(), N = hv.cols();
  if (gv.numel() != n) throw std::invalid_argument("rms_norm: gain extent mismatch");
  auto inv_rms = std::make_shared<std::vector<T>>(N);
  Tensor<T> out({n, N});
  for (int64_t c = 0; c < N; ++c) {
    T ms = 0;
    for (int64_t i = 0; i < n; ++i) {
      T x = hv(i, c);
      ms += x * x;
    }
    T ir = T(1) / std::sqrt(ms / static_cast<T>(n) + eps);
    (*inv_rms)[c] = ir;
    for (int64_t i = 0; i < n; ++i) out(i, c) = gv[i] * hv(i, c) * ir;
  }
  bool rg = requires_grad(h) || requires_grad(gain);
  return push(std::move(out), rg,
              [h, gain, n, N, inv_rms, self = size()](Tape& t) {
                const Tensor<T>& g = t.node(static_cast<int32_t>(self)).grad;
                const Tensor<T>& x = t.value(h);
                const Tensor<T>& gn = t.value(gain);
                if (t.requires_grad(gain)) {
                  Tensor<T>& gg = t.grad_buf(gain.id);
                  for (int64_t c = 0; c < N; ++c) {
                    T ir = (*inv_rms)[c];
                    for (int64_t i = 0; i < n; ++i) gg[i] += g(i, c) * x(i, c) * ir;
                  }
                }
                if (t.requires_grad(h)) {
                  Tensor<T>& gh = t.grad_buf(h.id);
                  for (int64_t c = 0; c < N; ++c) {
                    T ir = (*inv_rms)[c];
                    T dot = 0;
                    for (int64_t i = 0; i < n; ++i) dot += g(i, c) * gn[i] * x(i, c);
                    T k = ir * ir * ir * dot / static_cast<T>(n);
                    for (int64_t i = 0; i < n; ++i) gh(i, c) += ir * gn[i] * g(i, c) - k * x(i, c);
                  }
                }
              },
              "rms_norm");
}

namespace {

// Positions of each packed column within its own sample.
std::vector<int> column_positions(const SeqLayout& layout) {
  std::vector<int> pos(layout.total);
  for (int b = 0; b < layout.batch; ++b)
    for (int p = 0; p < layout.lengths[b]; ++p) pos[layout.offsets[b] + p] = p;
  return pos;
}

}  // namespace

template <typename T>
Var Tape<T>::rotary(Var x, int heads, const SeqLayout& layout, double base) {
  const Tensor<T>& xv = value(x);
  int64_t rows = xv.rows(), N = xv.cols();
  if (N != layout.total) throw std::invalid_argument("rotary: layout/total mismatch");
  if (rows % heads != 0) throw std::invalid_argument("rotary: heads must divide rows");
  int64_t dh = rows / heads;
  if (dh % 2 != 0) throw std::invalid_argument("rotary: head dim must be even");
  int64_t pairs = dh / 2;
  int max_len = layout.max_len();

  // cos/sin per (position, pair), evaluated in double then narrowed.
  auto cs = std::make_shared<std::vector<T>>(2 * max_len * pairs);
  for (int p = 0; p < max_len; ++p) {
    for (int64_t j = 0; j < pairs; ++j) {
      double theta = std::pow(base, -2.0 * static_cast<double>(j) / static_cast<double>(dh));
      double a = theta * p;
      (*cs)[2 * (p * pairs + j)] = static_cast<T>(std::cos(a));
      (*cs)[2 * (p * pairs + j) + 1] = static_cast<T>(std::sin(a));
    }
  }
  auto positions = std::make_shared<std::vector<int>>(column_positions(layout));

  Tensor<T> out({rows, N});
  for (int64_t c = 0; c < N; ++c) {
    int p = (*positions)[c];
    for (int h = 0; h < heads; ++h) {
      int64_t r0 = h * dh;
      for (int64_t j = 0; j < pairs; ++j) {
        T co = (*cs)[2 * (p * pairs + j)], si = (*cs)[2 * (p * pairs + j) + 1];
        T x0 = xv(r0 + 2 * j, c), x1 = xv(r0 + 2 * j + 1, c);
        out(r0 + 2 * j, c) = x0 * co - x1 * si;
        out(r0 + 2 * j + 1, c) = x0 * si + x1 * co;
      }
    }
  }
  return push(std::move(out), requires_grad(x),
              [x, heads, dh, pairs, N, cs, positions, self = size()](Tape& t) {
                const Tensor<T>& g = t.node(static_cast<int32_t>(self)).grad;
                Tensor<T>& gx = t.grad_buf(x.id);
                for (int64_t c = 0; c < N; ++c) {
                  int p = (*positions)[c];
                  for (int h = 0; h < heads; ++h) {
                    int64_t r0 = h * dh;
                    for (int64_t j = 0; j < pairs; ++j) {
                      T co = (*cs)[2 * (p * pairs + j)], si = (*cs)[2 * (p * pairs + j) + 1];
                      T g0 = g(r0 + 2 * j, c), g1 = g(r0 + 2 * j + 1, c);
                      // inverse rotation
                      gx(r0 + 2 * j, c) += g0 * co + g1 * si;
                      gx(r0 + 2 * j + 1, c) += -g0 * si + g1 * co;
                    }
                  }
                }
              },
              "rotary");
}

template <typename T>
Var Tape<T>::causal_attention(Var q, Var k, Var v, int heads, const SeqLayout& layout, T scale,
                              AttentionCapture<T>* capture) {
  const Tensor<T>&qv = value(q), &kv = value(k), &vv = value(v);
  if (!qv.same_shape(kv) || !qv.same_shape(vv))
    throw std::invalid_argument("attention: q/k/v shape mismatch");
  int64_t rows = qv.rows(), N = qv.cols();
  if (N != layout.total) throw std::invalid_argument("attention: layout/total mismatch");
  if (rows % heads != 0) throw std::invalid_argument("attention: heads must divide rows");
  int64_t dh = rows / heads;

  // Probabilities per (sample, head), kept for the backward sweep.
  auto probs = std::make_shared<std::vector<Tensor<T>>>();
  probs->reserve(static_cast<size_t>(layout.batch) * heads);
  if (capture) capture->maps.assign(layout.batch, {});

  Tensor<T> out({rows, N});
  for (int b = 0; b < layout.batch; ++b) {
    int o = layout.offsets[b], t = layout.lengths[b];
    if (capture) (*capture).maps[b].reserve(heads);
    for (int h = 0; h < heads; ++h) {
      int64_t r0 = h * dh;
      Tensor<T> A({t, t});
      for (int a = 0; a < t; ++a) {  // destination column
        T mx = -std::numeric_limits<T>::infinity();
        for (int s = 0; s <= a; ++s) {  // source row
          T dot = 0;
          for (int64_t d = 0; d < dh; ++d) dot += qv(r0 + d, o + s) * kv(r0 + d, o + a);
          A(s, a) = scale * dot;
          mx = std::max(mx, A(s, a));
        }
        T z = 0;
        for (int s = 0; s <= a; ++s) {
          A(s, a) = std::exp(A(s, a) - mx);
          z += A(s, a);
        }
        for (int s = 0; s <= a; ++s) A(s, a) /= z;
        for (int64_t d = 0; d < dh; ++d) {
          T acc = 0;
          for (int s = 0; s <= a; ++s) acc += vv(r0 + d, o + s) * A(s, a);
          out(r0 + d, o + a) = acc;
        }
      }
      if (capture) capture->maps[b].push_back(A);
      probs->push_back(std::move(A));
    }
  }
  bool rg = requires_grad(q) || requires_grad(k) || requires_grad(v);
  auto layout_p = std::make_shared<SeqLayout>(layout);
  return push(std::move(out), rg,
              [q, k, v, heads, dh, scale, probs, layout_p, self = size()](Tape& tp) {
                const Tensor<T>& g = tp.node(static_cast<int32_t>(self)).grad;
                const Tensor<T>& qv2 = tp.value(q);
                const Tensor<T>& kv2 = tp.value(k);
                const Tensor<T>& vv2 = tp.value(v);
                bool nq = tp.requires_grad(q), nk = tp.requires_grad(k), nv = tp.requires_grad(v);
                Tensor<T>* gq = nq ? &tp.grad_buf(q.id) : nullptr;
                Tensor<T>* gk = nk ? &tp.grad_buf(k.id) : nullptr;
                Tensor<T>* gv = nv ? &tp.grad_buf(v.id) : nullptr;
                for (int b = 0; b < layout_p->batch; ++b) {
                  int o = layout_p->offsets[b], t = layout_p->lengths[b];
                  for (int h = 0; h < heads; ++h) {
                    int64_t r0 = h * dh;
                    const Tensor<T>& A = (*probs)[static_cast<size_t>(b) * heads + h];
                    if (nv) {
                      for (int s = 0; s < t; ++s)
                        for (int64_t d = 0; d < dh; ++d) {
                          T acc = 0;
                          for (int a = s; a < t; ++a) acc += A(s, a) * g(r0 + d, o + a);
                          (*gv)(r0 + d, o + s) += acc;
                        }
                    }
                    if (nq || nk) {
                      Tensor<T> dS({t, t});
                      for (int a = 0; a < t; ++a) {
                        T dot = 0;
                        for (int s = 0; s <= a; ++s) {
                          T da = 0;
                          for (int64_t d = 0; d < dh; ++d)
                            da += vv2(r0 + d, o + s) * g(r0 + d, o + a);
                          dS(s, a) = da;
                          dot += A(s, a) * da;
                        }
                        for (int s = 0; s <= a; ++s) dS(s, a) = A(s, a) * (dS(s, a) - dot);
                      }
                      if (nq) {
                        for (int s = 0; s < t; ++s)
                          for (int64_t d = 0; d < dh; ++d) {
                            T acc = 0;
                            for (int a = s; a < t; ++a) acc += dS(s, a) * kv2(r0 + d, o + a);
                            (*gq)(r0 + d, o + s) += scale * acc;
                          }
                      }
                      if (nk) {
                        for (int a = 0; a < t; ++a)
                          for (int64_t d = 0; d < dh; ++d) {
                            T acc = 0;
                            for (int s = 0; s <= a; ++s) acc += dS(s, a) * qv2(r0 + d, o + s);
                            (*gk)(r0 + d, o + a) += scale * acc;
                          }
                      }
                    }
                  }
                }
              },
              "causal_attention");
}

template <typename T>
Var Tape<T>::mixing_attention(Var v, int heads, const SeqLayout& layout, const MixerFn& mixer,
                              AttentionCapture<T>* capture) {
  const Tensor<T>& vv = value(v);
  int64_t rows = vv.rows(), N = vv.cols();
  if (N != layout.total) throw std::invalid_argument("mixing: layout/total mismatch");
  if (rows % heads != 0) throw std::invalid_argument("mixing: heads must divide rows");
  int64_t dh = rows / heads;
  if (capture) capture->maps.assign(layout.batch, {});

  Tensor<T> out({rows, N});
  for (int b = 0; b < layout.batch; ++b) {
    int o = layout.offsets[b], t = layout.lengths[b];
    for (int h = 0; h < heads; ++h) {
      const Tensor<T>& M = mixer(h, t);  // (t x t), entry (source, destination)
      if (M.rows() != t || M.cols() != t) throw std::logic_error("mixing: bad mixer extent");
      int64_t r0 = h * dh;
      for (int a = 0; a < t; ++a)
        for (int64_t d = 0; d < dh; ++d) {
          T acc = 0;
          for (int s = 0; s < t; ++s) acc += vv(r0 + d, o + s) * M(s, a);
          out(r0 + d, o + a) = acc;
        }
      if (capture) capture->maps[b].push_back(M);
    }
  }
  auto layout_p = std::make_shared<SeqLayout>(layout);
  return push(std::move(out), requires_grad(v),
              [v, heads, dh, mixer, layout_p, self = size()](Tape& tp) {
                const Tensor<T>& g = tp.node(static_cast<int32_t>(self)).grad;
                Tensor<T>& gv = tp.grad_buf(v.id);
                for (int b = 0; b < layout_p->batch; ++b) {
                  int o = layout_p->offsets[b], t = layout_p->lengths[b];
                  for (int h = 0; h < heads; ++h) {
                    const Tensor<T>& M = mixer(h, t);
                    int64_t r0 = h * dh;
                    for (int s = 0; s < t; ++s)
                      for (int64_t d = 0; d < dh; ++d) {
                        T acc = 0;
                        for (int a = 0; a < t; ++a) acc += M(s, a) * g(r0 + d, o + a);
                        gv(r0 + d, o + s) += acc;
                      }
                  }
                }
              },
              "mixing_attention");
}

template <typename T>
Var Tape<T>::embed(Var emb, std::vector<int32_t> tokens) {
  const Tensor<T>& W = value(emb);
  int64_t n = W.rows(), V = W.cols();
  int64_t N = static_cast<int64_t>(tokens.size());
  if (N == 0) throw std::invalid_argument("embed: empty token sequence");
  Tensor<T> out({n, N});
  for (int64_t c = 0; c < N; ++c) {
    int32_t tok = tokens[c];
    if (tok < 0 || tok >= V)
      throw std::out_of_range("embed: token id " + std::to_string(tok) + " outside vocabulary " +
                              std::to_string(V));
    for (int64_t i = 0; i < n; ++i) out(i, c) = W(i, tok);
  }
  auto toks = std::make_shared<std::vector<int32_t>>(std::move(tokens));
  return push(std::move(out), requires_grad(emb),
              [emb, toks, n, N, self = size()](Tape& t) {
                const Tensor<T>& g = t.node(static_cast<int32_t>(self)).grad;
                Tensor<T>& gw = t.grad_buf(emb.id);
                for (int64_t c = 0; c < N; ++c) {
                  int32_t tok = (*toks)[c];
                  for (int64_t i = 0; i < n; ++i) gw(i, tok) += g(i, c);
                }
              },
              "embed");
}

template <typename T>
Var Tape<T>::add_positional(Var h, Var pos, const SeqLayout& layout) {
  const Tensor<T>&hv = value(h), &pv = value(pos);
  int64_t n = hv.rows();
  if (pv.rows() != n) throw std::invalid_argument("positional: width mismatch");
  if (layout.max_len() > pv.cols())
    throw std::invalid_argument("positional: sequence longer than table");
  auto positions = std::make_shared<std::vector<int>>(column_positions(layout));
  Tensor<T> out({n, hv.cols()});
  for (int64_t c = 0; c < hv.cols(); ++c) {
    int p = (*positions)[c];
    for (int64_t i = 0; i < n; ++i) out(i, c) = hv(i, c) + pv(i, p);
  }
  bool rg = requires_grad(h) || requires_grad(pos);
  return push(std::move(out), rg,
              [h, pos, positions, n, self = size()](Tape& t) {
                const Tensor<T>& g = t.node(static_cast<int32_t>(self)).grad;
                if (t.requires_grad(h)) t.accumulate(h.id, g);
                if (t.requires_grad(pos)) {
                  Tensor<T>& gp = t.grad_buf(pos.id);
                  for (int64_t c = 0; c < g.cols(); ++c) {
                    int p = (*positions)[c];
                    for (int64_t i = 0; i < n; ++i) gp(i, p) += g(i, c);
                  }
                }
              },
              "add_positional");
}

template <typename T>
Var Tape<T>::select_last(Var h, const SeqLayout& layout) {
  const Tensor<T>& hv = value(h);
  int64_t n = hv.rows();
  Tensor<T> out({n, layout.batch});
  auto layout_p = std::make_shared<SeqLayout>(layout);
  for (int b = 0; b < layout.batch; ++b) {
    int c = layout.offsets[b] + layout.lengths[b] - 1;
    for (int64_t i = 0; i < n; ++i) out(i, b) = hv(i, c);
  }
  return push(std::move(out), requires_grad(h),
              [h, layout_p, n, self = size()](Tape& t) {
                const Tensor<T>& g = t.node(static_cast<int32_t>(self)).grad;
                Tensor<T>& gh = t.grad_buf(h.id);
                for (int b = 0; b < layout_p->batch; ++b) {
                  int c = layout_p->offsets[b] + layout_p->lengths[b] - 1;
                  for (int64_t i = 0; i < n; ++i) gh(i, c) += g(i, b);
                }
              },
              "select_last");
}

template <typename T>
Var Tape<T>::cross_entropy(Var logits, std::vector<int32_t> targets, std::vector<uint8_t> mask) {
  const Tensor<T>& L = value(logits);
  int64_t V = L.rows(), N = L.cols();
  if (static_cast<int64_t>(targets.size()) != N || static_cast<int64_t>(mask.size()) != N)
    throw std::invalid_argument("cross_entropy: targets/mask length mismatch");
  int64_t count = 0;
  for (uint8_t m : mask) count += (m != 0);
  if (count == 0) throw std::invalid_argument("cross_entropy: no supervised positions");

  auto probs = std::make_shared<Tensor<T>>(Shape{V, N});
  double loss = 0;
  for (int64_t c = 0; c < N; ++c) {
    if (!mask[c]) continue;
    int32_t y = targets[c];
    if (y < 0 || y >= V) throw std::out_of_range("cross_entropy: target id outside vocabulary");
    T mx = L(0, c);
    for (int64_t i = 1; i < V; ++i) mx = std::max(mx, L(i, c));
    double z = 0;
    for (int64_t i = 0; i < V; ++i) z += std::exp(static_cast<double>(L(i, c) - mx));
    for (int64_t i = 0; i < V; ++i)
      (*probs)(i, c) = static_cast<T>(std::exp(static_cast<double>(L(i, c) - mx)) / z);
    loss += std::log(z) - static_cast<double>(L(y, c) - mx);
  }
  Tensor<T> out({1});
  out[0] = static_cast<T>(loss / static_cast<double>(count));

  auto tg = std::make_shared<std::vector<int32_t>>(std::move(targets));
  auto mk = std::make_shared<std::vector<uint8_t>>(std::move(mask));
  return push(std::move(out), requires_grad(logits),
              [logits, probs, tg, mk, V, N, count, self = size()](Tape& t) {
                T g = t.node(static_cast<int32_t>(self)).grad[0];
                Tensor<T>& gl = t.grad_buf(logits.id);
                T inv = g / static_cast<T>(count);
                for (int64_t c = 0; c < N; ++c) {
                  if (!(*mk)[c]) continue;
                  for (int64_t i = 0; i < V; ++i) gl(i, c) += inv * (*probs)(i, c);
                  gl((*tg)[c], c) -= inv;
                }
              },
              "cross_entropy");
}

template <typename T>
void Tape<T>::backward(Var loss) {
  if (backward_done_)
    throw std::runtime_error("tape: backward() called twice without a fresh tape");
  backward_done_ = true;
  Node& ln = node(loss.id);
  if (ln.value.numel() != 1) throw std::invalid_argument("tape: backward() needs a scalar loss");
  if (!ln.requires_grad)
    throw std::invalid_argument("tape: loss does not depend on any requires_grad leaf");
  grad_buf(loss.id)[0] = T(1);
  for (int32_t id = loss.id; id >= 0; --id) {
    Node& n = node(id);
    if (n.backward && n.grad.numel() > 0) n.backward(*this);
  }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace falb
