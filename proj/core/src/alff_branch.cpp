#include "alff/alff_branch.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace alff {

template <typename T>
AlffParams<T>::AlffParams(const AlffShape& s)
    : shape(s), lstm(s.channels, s.hidden), fc_weight({1, 3 * s.hidden}), fc_bias({1}) {
  if (s.upsample <= 0) throw std::invalid_argument("AlffParams: upsample factor must be positive");
  const ConvShape block{s.channels, s.channels, 3, 1, 1, true, true};
  for (auto& b : blocks) b = ConvBlockParams<T>(block);
}

template <typename T>
void AlffParams<T>::init(SplitMix& rng) {
  for (auto& b : blocks) b.init(rng);
  lstm.init(rng);
  const double k = 1.0 / std::sqrt(static_cast<double>(3 * shape.hidden));
  for (T& v : fc_weight.data) v = static_cast<T>(rng.uniform(-k, k));
  for (T& v : fc_bias.data) v = static_cast<T>(rng.uniform(-k, k));
}

template <typename T>
void AlffParams<T>::visit(const std::string& prefix, const ParamVisitor<T>& f) {
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].visit(join_name(prefix, "block" + std::to_string(i + 1)), f);
  lstm.visit(join_name(prefix, "lstm"), f);
  f(join_name(prefix, "fc_weight"), fc_weight);
  f(join_name(prefix, "fc_bias"), fc_bias);
}

template <typename T>
Tensor3<T> upsample_nearest(const Tensor3<T>& x, int factor) {
  Tensor3<T> out(x.channels(), x.height() * factor, x.width() * factor);
  for (int c = 0; c < x.channels(); ++c) {
    for (int y = 0; y < out.height(); ++y) {
      for (int xx = 0; xx < out.width(); ++xx) out.at(c, y, xx) = x.at(c, y / factor, xx / factor);
    }
  }
  return out;
}

template <typename T>
Tensor3<T> upsample_nearest_adjoint(const Tensor3<T>& grad, int factor) {
  if (grad.height() % factor != 0 || grad.width() % factor != 0) {
    throw std::invalid_argument("upsample adjoint: " + grad.shape_string() + " not divisible by factor");
  }
  Tensor3<T> out(grad.channels(), grad.height() / factor, grad.width() / factor);
  for (int c = 0; c < grad.channels(); ++c) {
    for (int y = 0; y < grad.height(); ++y) {
      for (int x = 0; x < grad.width(); ++x) out.at(c, y / factor, x / factor) += grad.at(c, y, x);
    }
  }
  return out;
}

template <typename T>
Tensor3<T> alff_forward_grid(const AlffParams<T>& p, const Tensor3<T>& shared_feature, AlffCache<T>* cache) {
  if (shared_feature.channels() != p.shape.channels) {
    std::ostringstream msg;
    msg << "alff: shared feature has " << shared_feature.channels() << " channels, expected " << p.shape.channels;
    throw std::invalid_argument(msg.str());
  }
  AlffCache<T> local;
  AlffCache<T>& c = cache ? *cache : local;
  c.grid_h = shared_feature.height();
  c.grid_w = shared_feature.width();
  const int hd = p.shape.hidden;
  const Eigen::Index locations = shared_feature.plane();

  LstmState<T> state = LstmState<T>::zeros(hd, static_cast<int>(locations));
  c.hidden_concat.resize(3 * hd, locations);
  const Tensor3<T>* input = &shared_feature;
  std::array<Tensor3<T>, 3> outputs;
  for (std::size_t t = 0; t < 3; ++t) {
    outputs[t] = conv_block_forward(p.blocks[t], *input, &c.blocks[t]);
    const RowMatrix<T> x_t = as_matrix(outputs[t]);
    state = lstm_cell_forward(x_t, state, p.lstm, &c.steps[t]);
    c.hidden_concat.middleRows(static_cast<Eigen::Index>(t) * hd, hd) = state.h;
    input = &outputs[t];
  }
  RowMatrix<T> logits = as_matrix(p.fc_weight) * c.hidden_concat;
  logits.array() += p.fc_bias.data[0];
  c.prob = (T(1) + (-logits.array()).exp()).inverse().matrix();

  Tensor3<T> grid(1, c.grid_h, c.grid_w);
  as_matrix(grid) = c.prob;
  return grid;
}

template <typename T>
Tensor3<T> alff_forward(const AlffParams<T>& p, const Tensor3<T>& shared_feature, AlffCache<T>* cache) {
  return upsample_nearest(alff_forward_grid(p, shared_feature, cache), p.shape.upsample);
}

template <typename T>
Tensor3<T> alff_backward(const AlffParams<T>& p, const AlffCache<T>& cache, const Tensor3<T>& grad_out,
                         AlffParams<T>& grads) {
  const int up = p.shape.upsample;
  if (grad_out.channels() != 1 || grad_out.height() != cache.grid_h * up || grad_out.width() != cache.grid_w * up) {
    throw std::invalid_argument("alff backward: gradient " + grad_out.shape_string() +
                                " does not match the cached forward pass");
  }
  const int hd = p.shape.hidden;
  const Tensor3<T> grad_grid = upsample_nearest_adjoint(grad_out, up);
  const RowMatrix<T> d_logit = (as_matrix(grad_grid).array() * cache.prob.array() * (T(1) - cache.prob.array())).matrix();

  as_matrix(grads.fc_weight).noalias() += d_logit * cache.hidden_concat.transpose();
  grads.fc_bias.data[0] += d_logit.sum();
  const RowMatrix<T> d_concat = as_matrix(p.fc_weight).transpose() * d_logit;

  const Eigen::Index locations = cache.hidden_concat.cols();
  RowMatrix<T> d_h = RowMatrix<T>::Zero(hd, locations);
  RowMatrix<T> d_c = RowMatrix<T>::Zero(hd, locations);
  std::array<RowMatrix<T>, 3> d_x;
  for (int t = 2; t >= 0; --t) {
    d_h += d_concat.middleRows(static_cast<Eigen::Index>(t) * hd, hd);
    LstmGradients<T> g = lstm_cell_backward(d_h, d_c, cache.steps[static_cast<std::size_t>(t)], p.lstm, grads.lstm);
    d_x[static_cast<std::size_t>(t)] = std::move(g.x);
    d_h = std::move(g.state.h);
    d_c = std::move(g.state.c);
  }

  // Each block output feeds both the LSTM step and the next block.
  Tensor3<T> carry;
  for (int t = 2; t >= 0; --t) {
    const auto ti = static_cast<std::size_t>(t);
    Tensor3<T> d_out(p.shape.channels, cache.grid_h, cache.grid_w);
    as_matrix(d_out) = d_x[ti];
    if (!carry.empty()) as_matrix(d_out) += as_matrix(carry);
    carry = conv_block_backward(p.blocks[ti], cache.blocks[ti], d_out, grads.blocks[ti]);
  }
  return carry;
}

template struct AlffParams<float>;
template struct AlffParams<double>;
template Tensor3<float> upsample_nearest(const Tensor3<float>&, int);
template Tensor3<double> upsample_nearest(const Tensor3<double>&, int);
template Tensor3<float> upsample_nearest_adjoint(const Tensor3<float>&, int);
template Tensor3<double> upsample_nearest_adjoint(const Tensor3<double>&, int);
template Tensor3<float> alff_forward_grid(const AlffParams<float>&, const Tensor3<float>&, AlffCache<float>*);
template Tensor3<double> alff_forward_grid(const AlffParams<double>&, const Tensor3<double>&, AlffCache<double>*);
template Tensor3<float> alff_forward(const AlffParams<float>&, const Tensor3<float>&, AlffCache<float>*);
template Tensor3<double> alff_forward(const AlffParams<double>&, const Tensor3<double>&, AlffCache<double>*);
template Tensor3<float> alff_backward(const AlffParams<float>&, const AlffCache<float>&, const Tensor3<float>&,
                                      AlffParams<float>&);
template Tensor3<double> alff_backward(const AlffParams<double>&, const AlffCache<double>&, const Tensor3<double>&,
                                       AlffParams<double>&);

}  // namespace alff
