#include "vaecomp/runtime.hpp"

#include <algorithm>
#include <cmath>

namespace vaecomp {

namespace {

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.1;

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

bool is_param_layer(const LayerSpec& l) {
  return std::holds_alternative<Conv2d>(l) || std::holds_alternative<ConvTranspose2d>(l) ||
         std::holds_alternative<Linear>(l) || std::holds_alternative<LatentHead>(l);
}

}  // namespace

Array& RuntimeParams::at(const std::string& name) {
  auto it = values.find(name);
  if (it == values.end()) throw Error("RuntimeParams: no tensor named " + name);
  return it->second;
}

const Array& RuntimeParams::at(const std::string& name) const {
  auto it = values.find(name);
  if (it == values.end()) throw Error("RuntimeParams: no tensor named " + name);
  return it->second;
}

RuntimeParams materialize(const ParamStore& store) {
  RuntimeParams rp;
  for (auto& [name, pt] : store.entries) {
    rp.values.emplace(name, Array::from_tensor(pt.value));
    if (pt.mask) rp.masks.emplace(name, *pt.mask);
  }
  return rp;
}

void write_back(const RuntimeParams& rp, ParamStore& store) {
  for (auto& [name, pt] : store.entries) {
    auto it = rp.values.find(name);
    if (it == rp.values.end()) continue;
    const Array& a = it->second;
    if (pt.value.dtype != DType::F32) throw Error("write_back: store must be fp32");
    if (a.numel() != pt.value.numel()) throw Error("write_back: shape mismatch for " + name);
    for (size_t i = 0; i < a.v.size(); ++i) pt.value.f[i] = static_cast<float>(a.v[i]);
  }
}

void ActRange::observe(const Array& a) {
  for (double v : a.v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
}

ExecPrecision exec_precision_for(const ParamStore& store) {
  switch (store.dtype) {
    case DType::F32: return ExecPrecision::Fp32;
    case DType::F16: return ExecPrecision::Fp16;
    case DType::QInt8:
      return store.act_qparams.empty() ? ExecPrecision::DynamicInt8 : ExecPrecision::StaticInt8;
  }
  return ExecPrecision::Fp32;
}

void fake_quant_inplace(Array& a, const QuantParams& qp, std::vector<std::uint8_t>* passthrough) {
  if (passthrough) passthrough->assign(a.v.size(), 1);
  for (size_t i = 0; i < a.v.size(); ++i) {
    double r = std::nearbyint(a.v[i] / qp.scale) + qp.zero_point;
    if (r < -128.0 || r > 127.0) {
      r = std::clamp(r, -128.0, 127.0);
      if (passthrough) (*passthrough)[i] = 0;
    }
    a.v[i] = qp.scale * (r - qp.zero_point);
  }
}

namespace {

// Weights are fake-quantized per forward pass on the QAT path.
struct WeightRef {
  const Array* ptr = nullptr;
  Array owned;
  const Array& get() const { return ptr ? *ptr : owned; }
};

WeightRef fetch_weight(const RuntimeParams& params, const std::string& name,
                       const ExecOptions& opt) {
  WeightRef ref;
  const Array& w = params.at(name);
  if (opt.prec == ExecPrecision::FakeQuant) {
    ref.owned = w;
    double amax = 0;
    for (double v : ref.owned.v) amax = std::max(amax, std::abs(v));
    QuantParams qp{amax == 0 ? 1.0 : amax / 127.0, 0, QScheme::Symmetric};
    fake_quant_inplace(ref.owned, qp, nullptr);
  } else {
    ref.ptr = &w;
  }
  return ref;
}

void apply_output_precision(Array& out, const std::string& key, bool param_layer,
                            const ExecOptions& opt, LayerCache* cache) {
  switch (opt.prec) {
    case ExecPrecision::Fp32:
      return;
    case ExecPrecision::Fp16:
      for (double& v : out.v) v = round_to_fp16(static_cast<float>(v));
      return;
    case ExecPrecision::DynamicInt8: {
      if (!param_layer) return;
      double lo = 0, hi = 0;
      for (double v : out.v) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      fake_quant_inplace(out, compute_qparams_range(lo, hi, QScheme::Affine), nullptr);
      return;
    }
    case ExecPrecision::StaticInt8: {
      if (!param_layer) return;
      if (opt.observe) {
        (*opt.observe)[key].observe(out);
        return;
      }
      if (!opt.act_qparams || !opt.act_qparams->count(key))
        throw Error("missing activation qparams for qint8 static path at " + key);
      fake_quant_inplace(out, opt.act_qparams->at(key), cache ? &cache->passthrough : nullptr);
      return;
    }
    case ExecPrecision::FakeQuant: {
      if (!param_layer) return;
      if (!opt.observe) throw Error("fake-quant path requires a range observer");
      ActRange& r = (*opt.observe)[key];
      r.observe(out);
      fake_quant_inplace(out, compute_qparams_range(r.lo, r.hi, QScheme::Affine),
                         cache ? &cache->passthrough : nullptr);
      return;
    }
  }
}

// ---- layer forwards ---------------------------------------------------

Array conv2d_forward(const Conv2d& c, const Array& x, const Array& w, const Array* b) {
  const int64_t N = x.dim(0), IC = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int OH = conv_out_extent(static_cast<int>(H), c.kernel, c.stride, c.dilation, c.padding);
  const int OW = conv_out_extent(static_cast<int>(W), c.kernel, c.stride, c.dilation, c.padding);
  Array out({N, c.out_ch, OH, OW});
  for (int64_t n = 0; n < N; ++n)
    for (int oc = 0; oc < c.out_ch; ++oc)
      for (int oh = 0; oh < OH; ++oh)
        for (int ow = 0; ow < OW; ++ow) {
          double acc = b ? b->v[oc] : 0.0;
          for (int64_t ic = 0; ic < IC; ++ic)
            for (int kh = 0; kh < c.kernel; ++kh) {
              const int ih = oh * c.stride - c.padding + kh * c.dilation;
              if (ih < 0 || ih >= H) continue;
              const double* xrow = &x.v[((n * IC + ic) * H + ih) * W];
              const double* wrow = &w.v[((static_cast<int64_t>(oc) * IC + ic) * c.kernel + kh) * c.kernel];
              for (int kw = 0; kw < c.kernel; ++kw) {
                const int iw = ow * c.stride - c.padding + kw * c.dilation;
                if (iw < 0 || iw >= W) continue;
                acc += xrow[iw] * wrow[kw];
              }
            }
          out.v[((n * c.out_ch + oc) * OH + oh) * OW + ow] = acc;
        }
  return out;
}

Array conv2d_backward(const Conv2d& c, const Array& x, const Array& w, const Array& d_out,
                      Array& d_w, Array* d_b) {
  const int64_t N = x.dim(0), IC = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t OH = d_out.dim(2), OW = d_out.dim(3);
  Array d_x(x.shape);
  for (int64_t n = 0; n < N; ++n)
    for (int oc = 0; oc < c.out_ch; ++oc)
      for (int64_t oh = 0; oh < OH; ++oh)
        for (int64_t ow = 0; ow < OW; ++ow) {
          const double g = d_out.v[((n * c.out_ch + oc) * OH + oh) * OW + ow];
          if (d_b) d_b->v[oc] += g;
          for (int64_t ic = 0; ic < IC; ++ic)
            for (int kh = 0; kh < c.kernel; ++kh) {
              const int ih = static_cast<int>(oh) * c.stride - c.padding + kh * c.dilation;
              if (ih < 0 || ih >= H) continue;
              for (int kw = 0; kw < c.kernel; ++kw) {
                const int iw = static_cast<int>(ow) * c.stride - c.padding + kw * c.dilation;
                if (iw < 0 || iw >= W) continue;
                const int64_t xi = ((n * IC + ic) * H + ih) * W + iw;
                const int64_t wi = ((static_cast<int64_t>(oc) * IC + ic) * c.kernel + kh) * c.kernel + kw;
                d_w.v[wi] += x.v[xi] * g;
                d_x.v[xi] += w.v[wi] * g;
              }
            }
        }
  return d_x;
}

Array convt2d_forward(const ConvTranspose2d& c, const Array& x, const Array& w, const Array* b) {
  const int64_t N = x.dim(0), IC = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t OH = (H - 1) * c.stride - 2 * c.padding + c.dilation * (c.kernel - 1) + 1 + c.output_padding;
  const int64_t OW = (W - 1) * c.stride - 2 * c.padding + c.dilation * (c.kernel - 1) + 1 + c.output_padding;
  Array out({N, c.out_ch, OH, OW});
  if (b)
    for (int64_t n = 0; n < N; ++n)
      for (int oc = 0; oc < c.out_ch; ++oc)
        std::fill_n(&out.v[(n * c.out_ch + oc) * OH * OW], OH * OW, b->v[oc]);
  for (int64_t n = 0; n < N; ++n)
    for (int64_t ic = 0; ic < IC; ++ic)
      for (int64_t ih = 0; ih < H; ++ih)
        for (int64_t iw = 0; iw < W; ++iw) {
          const double xv = x.v[((n * IC + ic) * H + ih) * W + iw];
          if (xv == 0.0) continue;
          for (int oc = 0; oc < c.out_ch; ++oc) {
            const double* wrow = &w.v[(ic * c.out_ch + oc) * c.kernel * c.kernel];
            for (int kh = 0; kh < c.kernel; ++kh) {
              const int64_t oh = ih * c.stride - c.padding + kh * c.dilation;
              if (oh < 0 || oh >= OH) continue;
              for (int kw = 0; kw < c.kernel; ++kw) {
                const int64_t ow = iw * c.stride - c.padding + kw * c.dilation;
                if (ow < 0 || ow >= OW) continue;
                out.v[((n * c.out_ch + oc) * OH + oh) * OW + ow] += xv * wrow[kh * c.kernel + kw];
              }
            }
          }
        }
  return out;
}

Array convt2d_backward(const ConvTranspose2d& c, const Array& x, const Array& w, const Array& d_out,
                       Array& d_w, Array* d_b) {
  const int64_t N = x.dim(0), IC = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t OH = d_out.dim(2), OW = d_out.dim(3);
  Array d_x(x.shape);
  if (d_b)
    for (int64_t n = 0; n < N; ++n)
      for (int oc = 0; oc < c.out_ch; ++oc)
        for (int64_t i = 0; i < OH * OW; ++i) d_b->v[oc] += d_out.v[(n * c.out_ch + oc) * OH * OW + i];
  for (int64_t n = 0; n < N; ++n)
    for (int64_t ic = 0; ic < IC; ++ic)
      for (int64_t ih = 0; ih < H; ++ih)
        for (int64_t iw = 0; iw < W; ++iw) {
          const int64_t xi = ((n * IC + ic) * H + ih) * W + iw;
          const double xv = x.v[xi];
          double acc = 0;
          for (int oc = 0; oc < c.out_ch; ++oc) {
            const int64_t wbase = (ic * c.out_ch + oc) * c.kernel * c.kernel;
            for (int kh = 0; kh < c.kernel; ++kh) {
              const int64_t oh = ih * c.stride - c.padding + kh * c.dilation;
              if (oh < 0 || oh >= OH) continue;
              for (int kw = 0; kw < c.kernel; ++kw) {
                const int64_t ow = iw * c.stride - c.padding + kw * c.dilation;
                if (ow < 0 || ow >= OW) continue;
                const double g = d_out.v[((n * c.out_ch + oc) * OH + oh) * OW + ow];
                acc += w.v[wbase + kh * c.kernel + kw] * g;
                d_w.v[wbase + kh * c.kernel + kw] += xv * g;
              }
            }
          }
          d_x.v[xi] = acc;
        }
  return d_x;
}

Array linear_forward(const Linear& li, const Array& x, const Array& w, const Array* b) {
  const int64_t N = x.dim(0);
  Array out({N, li.out});
  for (int64_t n = 0; n < N; ++n)
    for (int o = 0; o < li.out; ++o) {
      double acc = b ? b->v[o] : 0.0;
      const double* wrow = &w.v[static_cast<int64_t>(o) * li.in];
      const double* xrow = &x.v[n * li.in];
      for (int i = 0; i < li.in; ++i) acc += wrow[i] * xrow[i];
      out.v[n * li.out + o] = acc;
    }
  return out;
}

Array linear_backward(const Linear& li, const Array& x, const Array& w, const Array& d_out,
                      Array& d_w, Array* d_b) {
  const int64_t N = x.dim(0);
  Array d_x(x.shape);
  for (int64_t n = 0; n < N; ++n)
    for (int o = 0; o < li.out; ++o) {
      const double g = d_out.v[n * li.out + o];
      if (d_b) d_b->v[o] += g;
      const double* xrow = &x.v[n * li.in];
      double* dwrow = &d_w.v[static_cast<int64_t>(o) * li.in];
      const double* wrow = &w.v[static_cast<int64_t>(o) * li.in];
      double* dxrow = &d_x.v[n * li.in];
      for (int i = 0; i < li.in; ++i) {
        dwrow[i] += xrow[i] * g;
        dxrow[i] += wrow[i] * g;
      }
    }
  return d_x;
}

Array batchnorm_forward(const BatchNorm2d& bn, const Array& x, RuntimeParams& params,
                        const std::string& prefix, bool training, LayerCache* cache) {
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t M = N * H * W;
  const Array& gamma = params.at(prefix + ".gamma");
  const Array& beta = params.at(prefix + ".beta");
  Array out(x.shape);
  if (training) {
    Array& rmean = params.at(prefix + ".running_mean");
    Array& rvar = params.at(prefix + ".running_var");
    std::vector<double> mean(C, 0.0), var(C, 0.0), inv_std(C, 0.0);
    for (int64_t c = 0; c < C; ++c) {
      double s = 0;
      for (int64_t n = 0; n < N; ++n) {
        const double* p = &x.v[((n * C + c) * H) * W];
        for (int64_t i = 0; i < H * W; ++i) s += p[i];
      }
      mean[c] = s / static_cast<double>(M);
      double sv = 0;
      for (int64_t n = 0; n < N; ++n) {
        const double* p = &x.v[((n * C + c) * H) * W];
        for (int64_t i = 0; i < H * W; ++i) {
          const double d = p[i] - mean[c];
          sv += d * d;
        }
      }
      var[c] = sv / static_cast<double>(M);
      inv_std[c] = 1.0 / std::sqrt(var[c] + kBnEps);
      const double unbiased = M > 1 ? sv / static_cast<double>(M - 1) : var[c];
      rmean.v[c] = (1.0 - kBnMomentum) * rmean.v[c] + kBnMomentum * mean[c];
      rvar.v[c] = (1.0 - kBnMomentum) * rvar.v[c] + kBnMomentum * unbiased;
    }
    Array xhat(x.shape);
    for (int64_t n = 0; n < N; ++n)
      for (int64_t c = 0; c < C; ++c) {
        const int64_t base = (n * C + c) * H * W;
        for (int64_t i = 0; i < H * W; ++i) {
          const double xh = (x.v[base + i] - mean[c]) * inv_std[c];
          xhat.v[base + i] = xh;
          out.v[base + i] = gamma.v[c] * xh + beta.v[c];
        }
      }
    if (cache) {
      cache->mean = std::move(mean);
      cache->inv_std = std::move(inv_std);
      cache->xhat = std::move(xhat);
    }
  } else {
    const Array& rmean = params.at(prefix + ".running_mean");
    const Array& rvar = params.at(prefix + ".running_var");
    for (int64_t n = 0; n < N; ++n)
      for (int64_t c = 0; c < C; ++c) {
        const double inv = 1.0 / std::sqrt(rvar.v[c] + kBnEps);
        const int64_t base = (n * C + c) * H * W;
        for (int64_t i = 0; i < H * W; ++i)
          out.v[base + i] = gamma.v[c] * (x.v[base + i] - rmean.v[c]) * inv + beta.v[c];
      }
  }
  return out;
}

Array batchnorm_backward(const BatchNorm2d&, const LayerCache& cache, const Array& gamma,
                         const Array& d_out, Array& d_gamma, Array& d_beta) {
  const Array& x = cache.input;
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t M = N * H * W;
  Array d_x(x.shape);
  for (int64_t c = 0; c < C; ++c) {
    double sum_dy = 0, sum_dy_xhat = 0;
    for (int64_t n = 0; n < N; ++n) {
      const int64_t base = (n * C + c) * H * W;
      for (int64_t i = 0; i < H * W; ++i) {
        sum_dy += d_out.v[base + i];
        sum_dy_xhat += d_out.v[base + i] * cache.xhat.v[base + i];
      }
    }
    d_gamma.v[c] += sum_dy_xhat;
    d_beta.v[c] += sum_dy;
    const double g = gamma.v[c];
    const double inv_std = cache.inv_std[c];
    for (int64_t n = 0; n < N; ++n) {
      const int64_t base = (n * C + c) * H * W;
      for (int64_t i = 0; i < H * W; ++i) {
        const double dy = d_out.v[base + i];
        d_x.v[base + i] =
            g * inv_std *
            (dy - sum_dy / static_cast<double>(M) -
             cache.xhat.v[base + i] * sum_dy_xhat / static_cast<double>(M));
      }
    }
  }
  return d_x;
}

Array maxpool_forward(const MaxPool2d& p, const Array& x, PoolRecord& rec) {
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t OH = (H - p.kernel) / p.stride + 1;
  const int64_t OW = (W - p.kernel) / p.stride + 1;
  Array out({N, C, OH, OW});
  rec.in_shape = x.shape;
  rec.indices.assign(static_cast<size_t>(out.numel()), 0);
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t oh = 0; oh < OH; ++oh)
        for (int64_t ow = 0; ow < OW; ++ow) {
          double best = -std::numeric_limits<double>::infinity();
          int64_t best_i = -1;
          for (int kh = 0; kh < p.kernel; ++kh)
            for (int kw = 0; kw < p.kernel; ++kw) {
              const int64_t ih = oh * p.stride + kh;
              const int64_t iw = ow * p.stride + kw;
              const int64_t xi = ((n * C + c) * H + ih) * W + iw;
              if (x.v[xi] > best) {
                best = x.v[xi];
                best_i = xi;
              }
            }
          const int64_t oi = ((n * C + c) * OH + oh) * OW + ow;
          out.v[oi] = best;
          rec.indices[oi] = best_i;
        }
  return out;
}

Array maxunpool_forward(const MaxUnpool2d&, const Array& x, const PoolRecord& rec) {
  if (static_cast<int64_t>(rec.indices.size()) != x.numel())
    throw Error("maxunpool: pool indices do not match input of shape " + shape_str(x.shape));
  Array out(rec.in_shape);
  for (size_t i = 0; i < rec.indices.size(); ++i) out.v[rec.indices[i]] = x.v[i];
  return out;
}

}  // namespace

Array& GradStore::grad_for(const std::string& name, const std::vector<int64_t>& shape) {
  auto it = g.find(name);
  if (it == g.end()) it = g.emplace(name, Array(shape)).first;
  return it->second;
}

namespace {

// Shared sequential executor. `pools` is appended to by MaxPool layers and
// consumed (from the back) by MaxUnpool layers.
Array run_sequence(const std::vector<LayerSpec>& layers, const std::string& prefix,
                   RuntimeParams& params, Array x, const ExecOptions& opt,
                   std::vector<LayerCache>* caches, std::vector<PoolRecord>* own_pools,
                   const std::vector<PoolRecord>* shared_pools, int64_t* pool_cursor,
                   size_t layer_count_limit) {
  for (size_t i = 0; i < layer_count_limit; ++i) {
    const LayerSpec& l = layers[i];
    const std::string key = prefix + "." + std::to_string(i);
    LayerCache cache;
    if (caches) cache.input = x;
    Array out;
    std::visit(
        overloaded{
            [&](const Conv2d& c) {
              WeightRef w = fetch_weight(params, key + ".weight", opt);
              const Array* b = c.bias ? &params.at(key + ".bias") : nullptr;
              out = conv2d_forward(c, x, w.get(), b);
            },
            [&](const ConvTranspose2d& c) {
              WeightRef w = fetch_weight(params, key + ".weight", opt);
              const Array* b = c.bias ? &params.at(key + ".bias") : nullptr;
              out = convt2d_forward(c, x, w.get(), b);
            },
            [&](const BatchNorm2d& bn) {
              out = batchnorm_forward(bn, x, params, key, opt.training, caches ? &cache : nullptr);
            },
            [&](const LeakyReLU& r) {
              out = x;
              for (double& v : out.v)
                if (v < 0) v *= r.slope;
            },
            [&](const ReLU&) {
              out = x;
              for (double& v : out.v)
                if (v < 0) v = 0;
            },
            [&](const MaxPool2d& p) {
              PoolRecord rec;
              out = maxpool_forward(p, x, rec);
              if (!own_pools) throw Error("maxpool outside encoder context at " + key);
              cache.pool_index = static_cast<int>(own_pools->size());
              own_pools->push_back(std::move(rec));
            },
            [&](const MaxUnpool2d& u) {
              if (!shared_pools || !pool_cursor || *pool_cursor < 0)
                throw Error("missing pool indices for maxunpool at " + key);
              cache.pool_index = static_cast<int>(*pool_cursor);
              out = maxunpool_forward(u, x, (*shared_pools)[(*pool_cursor)--]);
            },
            [&](const Flatten&) {
              out = std::move(x);
              int64_t n = out.dim(0), rest = out.numel() / n;
              out.shape = {n, rest};
            },
            [&](const Unflatten& u) {
              out = std::move(x);
              out.shape = {out.dim(0), u.ch, u.h, u.w};
            },
            [&](const Linear& li) {
              if (x.ndim() != 2 || x.dim(1) != li.in)
                throw Error("linear shape mismatch at " + key + ": input " + shape_str(x.shape));
              WeightRef w = fetch_weight(params, key + ".weight", opt);
              const Array* b = li.bias ? &params.at(key + ".bias") : nullptr;
              out = linear_forward(li, x, w.get(), b);
            },
            [&](const LatentHead&) { throw Error("latent_head must terminate the encoder"); }},
        l);
    apply_output_precision(out, key, is_param_layer(l), opt, caches ? &cache : nullptr);
    if (caches) caches->push_back(std::move(cache));
    x = std::move(out);
  }
  return x;
}

}  // namespace

EncoderResult forward_encoder(const VaeSpec& spec, RuntimeParams& params, const Array& batch,
                              const ExecOptions& opt) {
  const std::vector<int64_t> want = {batch.ndim() ? batch.dim(0) : 0, spec.input_shape[0],
                                     spec.input_shape[1], spec.input_shape[2]};
  if (batch.ndim() != 4 || batch.shape != want)
    throw Error("forward_encoder: batch shape " + shape_str(batch.shape) + " does not match " +
                shape_str(want));
  if (spec.encoder.empty() || !std::holds_alternative<LatentHead>(spec.encoder.back()))
    throw Error("forward_encoder: encoder must end in latent_head");

  EncoderResult res;
  std::vector<LayerCache>* caches = opt.training ? &res.caches : nullptr;
  Array x = run_sequence(spec.encoder, "enc", params, batch, opt, caches, &res.pools, nullptr,
                         nullptr, spec.encoder.size() - 1);

  const size_t head_idx = spec.encoder.size() - 1;
  const auto& head = std::get<LatentHead>(spec.encoder.back());
  const std::string key = "enc." + std::to_string(head_idx);
  if (x.ndim() != 2) throw Error("forward_encoder: latent_head expects flat input");
  LayerCache cache;
  if (caches) cache.input = x;
  const int in_f = static_cast<int>(x.dim(1));
  Linear lmu{in_f, head.latent_dim, true}, llv{in_f, head.latent_dim, true};
  WeightRef wm = fetch_weight(params, key + ".mu_weight", opt);
  WeightRef wl = fetch_weight(params, key + ".logvar_weight", opt);
  res.mu = linear_forward(lmu, x, wm.get(), &params.at(key + ".mu_bias"));
  res.logvar = linear_forward(llv, x, wl.get(), &params.at(key + ".logvar_bias"));
  apply_output_precision(res.mu, key + ".mu", true, opt, nullptr);
  apply_output_precision(res.logvar, key + ".logvar", true, opt, nullptr);
  if (caches) caches->push_back(std::move(cache));
  return res;
}

DecoderResult forward_decoder(const VaeSpec& spec, RuntimeParams& params, const Array& z,
                              const std::vector<PoolRecord>& pools, const ExecOptions& opt) {
  if (z.ndim() != 2 || z.dim(1) != spec.latent_dim)
    throw Error("forward_decoder: z shape " + shape_str(z.shape) + " does not match latent dim " +
                std::to_string(spec.latent_dim));
  DecoderResult res;
  std::vector<LayerCache>* caches = opt.training ? &res.caches : nullptr;
  int64_t cursor = static_cast<int64_t>(pools.size()) - 1;
  res.out = run_sequence(spec.decoder, "dec", params, z, opt, caches, nullptr, &pools, &cursor,
                         spec.decoder.size());
  return res;
}

namespace {

void check_differentiable(const ExecOptions& opt) {
  if (opt.prec != ExecPrecision::Fp32 && opt.prec != ExecPrecision::FakeQuant)
    throw Error("backward: only fp32 and QAT fake-quant models are trainable");
}

Array backward_sequence(const std::vector<LayerSpec>& layers, const std::string& prefix,
                        const RuntimeParams& params, const std::vector<LayerCache>& caches,
                        const std::vector<PoolRecord>& pools, Array d_out, const ExecOptions& opt,
                        GradStore& grads, size_t layer_count_limit) {
  if (caches.size() < layer_count_limit)
    throw Error("backward: caches missing; forward must run with the training flag");
  for (size_t ii = layer_count_limit; ii-- > 0;) {
    const LayerSpec& l = layers[ii];
    const std::string key = prefix + "." + std::to_string(ii);
    const LayerCache& cache = caches[ii];
    // Straight-through for fake-quantized layer outputs.
    if (!cache.passthrough.empty())
      for (size_t i = 0; i < d_out.v.size(); ++i)
        if (!cache.passthrough[i]) d_out.v[i] = 0;
    Array d_in;
    std::visit(
        overloaded{
            [&](const Conv2d& c) {
              WeightRef w = fetch_weight(params, key + ".weight", opt);
              Array& d_w = grads.grad_for(key + ".weight", params.at(key + ".weight").shape);
              Array* d_b = c.bias ? &grads.grad_for(key + ".bias", params.at(key + ".bias").shape) : nullptr;
              d_in = conv2d_backward(c, cache.input, w.get(), d_out, d_w, d_b);
            },
            [&](const ConvTranspose2d& c) {
              WeightRef w = fetch_weight(params, key + ".weight", opt);
              Array& d_w = grads.grad_for(key + ".weight", params.at(key + ".weight").shape);
              Array* d_b = c.bias ? &grads.grad_for(key + ".bias", params.at(key + ".bias").shape) : nullptr;
              d_in = convt2d_backward(c, cache.input, w.get(), d_out, d_w, d_b);
            },
            [&](const BatchNorm2d& bn) {
              Array& d_gamma = grads.grad_for(key + ".gamma", params.at(key + ".gamma").shape);
              Array& d_beta = grads.grad_for(key + ".beta", params.at(key + ".beta").shape);
              d_in = batchnorm_backward(bn, cache, params.at(key + ".gamma"), d_out, d_gamma, d_beta);
            },
            [&](const LeakyReLU& r) {
              d_in = d_out;
              for (size_t i = 0; i < d_in.v.size(); ++i)
                if (cache.input.v[i] < 0) d_in.v[i] *= r.slope;
            },
            [&](const ReLU&) {
              d_in = d_out;
              for (size_t i = 0; i < d_in.v.size(); ++i)
                if (cache.input.v[i] < 0) d_in.v[i] = 0;
            },
            [&](const MaxPool2d&) {
              const PoolRecord& rec = pools.at(cache.pool_index);
              d_in = Array(rec.in_shape);
              for (size_t i = 0; i < rec.indices.size(); ++i) d_in.v[rec.indices[i]] += d_out.v[i];
            },
            [&](const MaxUnpool2d&) {
              const PoolRecord& rec = pools.at(cache.pool_index);
              d_in = Array({static_cast<int64_t>(rec.indices.size())});
              d_in.shape = cache.input.shape;
              d_in.v.resize(cache.input.v.size());
              for (size_t i = 0; i < rec.indices.size(); ++i) d_in.v[i] = d_out.v[rec.indices[i]];
            },
            [&](const Flatten&) {
              d_in = std::move(d_out);
              d_in.shape = cache.input.shape;
            },
            [&](const Unflatten&) {
              d_in = std::move(d_out);
              d_in.shape = cache.input.shape;
            },
            [&](const Linear& li) {
              WeightRef w = fetch_weight(params, key + ".weight", opt);
              Array& d_w = grads.grad_for(key + ".weight", params.at(key + ".weight").shape);
              Array* d_b = li.bias ? &grads.grad_for(key + ".bias", params.at(key + ".bias").shape) : nullptr;
              d_in = linear_backward(li, cache.input, w.get(), d_out, d_w, d_b);
            },
            [&](const LatentHead&) { throw Error("latent_head has dedicated backward"); }},
        l);
    d_out = std::move(d_in);
  }
  return d_out;
}

}  // namespace

Array backward_decoder(const VaeSpec& spec, const RuntimeParams& params,
                       const std::vector<LayerCache>& caches, const std::vector<PoolRecord>& pools,
                       const Array& d_out, const ExecOptions& opt, GradStore& grads) {
  check_differentiable(opt);
  return backward_sequence(spec.decoder, "dec", params, caches, pools, d_out, opt, grads,
                           spec.decoder.size());
}

void backward_encoder(const VaeSpec& spec, const RuntimeParams& params,
                      const std::vector<LayerCache>& caches, const std::vector<PoolRecord>& pools,
                      const Array& d_mu, const Array& d_logvar, const ExecOptions& opt,
                      GradStore& grads) {
  check_differentiable(opt);
  const size_t head_idx = spec.encoder.size() - 1;
  const auto& head = std::get<LatentHead>(spec.encoder.back());
  const std::string key = "enc." + std::to_string(head_idx);
  const LayerCache& cache = caches.at(head_idx);
  const int in_f = static_cast<int>(cache.input.dim(1));
  Linear lin{in_f, head.latent_dim, true};

  WeightRef wm = fetch_weight(params, key + ".mu_weight", opt);
  WeightRef wl = fetch_weight(params, key + ".logvar_weight", opt);
  Array& d_wm = grads.grad_for(key + ".mu_weight", params.at(key + ".mu_weight").shape);
  Array& d_bm = grads.grad_for(key + ".mu_bias", params.at(key + ".mu_bias").shape);
  Array& d_wl = grads.grad_for(key + ".logvar_weight", params.at(key + ".logvar_weight").shape);
  Array& d_bl = grads.grad_for(key + ".logvar_bias", params.at(key + ".logvar_bias").shape);
  Array d_x = linear_backward(lin, cache.input, wm.get(), d_mu, d_wm, &d_bm);
  Array d_x2 = linear_backward(lin, cache.input, wl.get(), d_logvar, d_wl, &d_bl);
  for (size_t i = 0; i < d_x.v.size(); ++i) d_x.v[i] += d_x2.v[i];

  backward_sequence(spec.encoder, "enc", params, caches, pools, std::move(d_x), opt, grads,
                    spec.encoder.size() - 1);
}

}  // namespace vaecomp
