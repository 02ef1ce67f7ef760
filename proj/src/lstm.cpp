#include "defmod/lstm.hpp"

#include "defmod/error.hpp"

namespace defmod {

LstmCell::LstmCell(const std::string& name, std::size_t input_size, std::size_t hidden_size)
    : wx(name + ".wx", 4 * hidden_size, input_size),
      wh(name + ".wh", 4 * hidden_size, hidden_size),
      b(name + ".b", 4 * hidden_size),
      input_size_(input_size),
      hidden_size_(hidden_size) {}

void LstmCell::init(Rng& rng, double scale) {
  wx.fill_uniform(rng, -scale, scale);
  wh.fill_uniform(rng, -scale, scale);
  std::fill(b.value.begin(), b.value.end(), 0.0);
}

LstmState LstmCell::step(std::span<const double> x, const LstmState& state, LstmCache* cache) const {
  require(x.size() == input_size_, ErrorCode::Usage,
          "LSTM input size " + std::to_string(x.size()) + " != " + std::to_string(input_size_));
  require(state.h.size() == hidden_size_ && state.c.size() == hidden_size_, ErrorCode::Usage,
          "LSTM state size mismatch");
  const std::size_t n = hidden_size_;
  Vec z(4 * n, 0.0);
  matvec_add(wx, x, z);
  matvec_add(wh, state.h, z);
  for (std::size_t r = 0; r < 4 * n; ++r) z[r] += b.value[r];

  LstmState out{Vec(n), Vec(n)};
  Vec i(n), f(n), o(n), g(n), tc(n);
  for (std::size_t k = 0; k < n; ++k) {
    i[k] = sigmoid(z[k]);
    f[k] = sigmoid(z[n + k]);
    o[k] = sigmoid(z[2 * n + k]);
    g[k] = std::tanh(z[3 * n + k]);
    out.c[k] = f[k] * state.c[k] + i[k] * g[k];
    tc[k] = std::tanh(out.c[k]);
    out.h[k] = o[k] * tc[k];
  }
  if (cache) {
    cache->x.assign(x.begin(), x.end());
    cache->h_prev = state.h;
    cache->c_prev = state.c;
    cache->i = std::move(i);
    cache->f = std::move(f);
    cache->o = std::move(o);
    cache->g = std::move(g);
    cache->c = out.c;
    cache->tanh_c = std::move(tc);
  }
  return out;
}

void LstmCell::backward(const LstmCache& cache, std::span<const double> dh, std::span<const double> dc, Vec& dx,
                        Vec& dh_prev, Vec& dc_prev) {
  const std::size_t n = hidden_size_;
  Vec dz(4 * n);
  dc_prev.assign(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    const double tc = cache.tanh_c[k];
    const double dck = dc[k] + dh[k] * cache.o[k] * (1.0 - tc * tc);
    const double di = dck * cache.g[k];
    const double df = dck * cache.c_prev[k];
    const double doo = dh[k] * tc;
    const double dg = dck * cache.i[k];
    dz[k] = di * cache.i[k] * (1.0 - cache.i[k]);
    dz[n + k] = df * cache.f[k] * (1.0 - cache.f[k]);
    dz[2 * n + k] = doo * cache.o[k] * (1.0 - cache.o[k]);
    dz[3 * n + k] = dg * (1.0 - cache.g[k] * cache.g[k]);
    dc_prev[k] = dck * cache.f[k];
  }
  outer_add_grad(wx, dz, cache.x);
  outer_add_grad(wh, dz, cache.h_prev);
  for (std::size_t r = 0; r < 4 * n; ++r) b.grad[r] += dz[r];
  dx.assign(input_size_, 0.0);
  matvec_t_add(wx, dz, dx);
  dh_prev.assign(n, 0.0);
  matvec_t_add(wh, dz, dh_prev);
}

}  // namespace defmod
