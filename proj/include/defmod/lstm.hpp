#pragma once

#include <span>
#include <string>

#include "defmod/tensor.hpp"

namespace defmod {

struct LstmState {
  Vec h;
  Vec c;
};

// Everything a backward step needs from its forward step.
struct LstmCache {
  Vec x;
  Vec h_prev;
  Vec c_prev;
  Vec i, f, o, g;
  Vec c;
  Vec tanh_c;
};

// Standard LSTM cell. Gate rows are stacked as [input; forget; output; candidate].
class LstmCell {
 public:
  LstmCell() = default;
  LstmCell(const std::string& name, std::size_t input_size, std::size_t hidden_size);

  std::size_t input_size() const { return input_size_; }
  std::size_t hidden_size() const { return hidden_size_; }
  std::size_t parameter_count() const { return wx.size() + wh.size() + b.size(); }

  LstmState zero_state() const { return {Vec(hidden_size_, 0.0), Vec(hidden_size_, 0.0)}; }

  LstmState step(std::span<const double> x, const LstmState& state, LstmCache* cache = nullptr) const;

  // Accumulates parameter gradients. dh/dc are gradients w.r.t. the step's
  // outputs; writes gradients w.r.t. x, h_prev and c_prev.
  void backward(const LstmCache& cache, std::span<const double> dh, std::span<const double> dc, Vec& dx,
                Vec& dh_prev, Vec& dc_prev);

  void init(Rng& rng, double scale);
  ParamList params() { return {&wx, &wh, &b}; }

  ParamTensor wx;
  ParamTensor wh;
  ParamTensor b;

 private:
  std::size_t input_size_ = 0;
  std::size_t hidden_size_ = 0;
};

}  // namespace defmod
