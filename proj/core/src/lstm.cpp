#include "alff/lstm.hpp"

#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

namespace alff {

template <typename T>
LstmWeights<T>::LstmWeights(int in, int hidden)
    : input_dim(in),
      hidden_dim(hidden),
      input_weights({4 * hidden, in}),
      hidden_weights({4 * hidden, hidden}),
      input_bias({4 * hidden}),
      hidden_bias({4 * hidden}) {
  if (in <= 0 || hidden <= 0) throw std::invalid_argument("LstmWeights: dimensions must be positive");
}

template <typename T>
void LstmWeights<T>::init(SplitMix& rng) {
  const double k_in = 1.0 / std::sqrt(static_cast<double>(input_dim));
  const double k_h = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
  for (T& v : input_weights.data) v = static_cast<T>(rng.uniform(-k_in, k_in));
  for (T& v : hidden_weights.data) v = static_cast<T>(rng.uniform(-k_h, k_h));
  for (T& v : input_bias.data) v = static_cast<T>(rng.uniform(-k_in, k_in));
  for (T& v : hidden_bias.data) v = static_cast<T>(rng.uniform(-k_h, k_h));
  input_bias_of(Gate::kForget).setConstant(T(1));
}

template <typename T>
void LstmWeights<T>::visit(const std::string& prefix, const ParamVisitor<T>& f) {
  f(join_name(prefix, "input_weights"), input_weights);
  f(join_name(prefix, "hidden_weights"), hidden_weights);
  f(join_name(prefix, "input_bias"), input_bias);
  f(join_name(prefix, "hidden_bias"), hidden_bias);
}

template <typename T>
std::uint64_t LstmWeights<T>::digest() const {
  std::uint64_t h = derive_key({static_cast<std::uint64_t>(input_dim), static_cast<std::uint64_t>(hidden_dim)});
  for (const auto* p : {&input_weights, &hidden_weights, &input_bias, &hidden_bias}) {
    for (T v : p->data) {
      std::uint64_t bits = 0;
      std::memcpy(&bits, &v, sizeof(T));
      h = splitmix64(h ^ bits);
    }
  }
  return h;
}

namespace {

template <typename T>
void check_dims(const RowMatrix<T>& m, Eigen::Index rows, Eigen::Index cols, const char* what) {
  if (m.rows() != rows || m.cols() != cols) {
    std::ostringstream msg;
    msg << "lstm: " << what << " is " << m.rows() << "x" << m.cols() << ", expected " << rows << "x" << cols;
    throw std::invalid_argument(msg.str());
  }
}

template <typename T>
RowMatrix<T> logistic(const RowMatrix<T>& z) {
  return (T(1) + (-z.array()).exp()).inverse().matrix();
}

}  // namespace

template <typename T>
LstmState<T> lstm_cell_forward(const RowMatrix<T>& x, const LstmState<T>& state, const LstmWeights<T>& w,
                               LstmCache<T>* cache) {
  const int hd = w.hidden_dim;
  const Eigen::Index cols = x.cols();
  check_dims(x, w.input_dim, cols, "input");
  check_dims(state.h, hd, cols, "hidden state");
  check_dims(state.c, hd, cols, "cell state");

  RowMatrix<T> pre = as_matrix(w.input_weights) * x + as_matrix(w.hidden_weights) * state.h;
  pre.colwise() += as_vector(w.input_bias) + as_vector(w.hidden_bias);

  LstmCache<T> local;
  LstmCache<T>& c = cache ? *cache : local;
  c.i = logistic<T>(pre.middleRows(0, hd));
  c.f = logistic<T>(pre.middleRows(hd, hd));
  c.g = pre.middleRows(2 * hd, hd).array().tanh().matrix();
  c.o = logistic<T>(pre.middleRows(3 * hd, hd));
  c.c = (c.f.array() * state.c.array() + c.i.array() * c.g.array()).matrix();
  c.tanh_c = c.c.array().tanh().matrix();

  LstmState<T> next{(c.o.array() * c.tanh_c.array()).matrix(), c.c};
  if (cache) {
    c.weights_digest = w.digest();
    c.x = x;
    c.h_prev = state.h;
    c.c_prev = state.c;
  }
  return next;
}

template <typename T>
LstmGradients<T> lstm_cell_backward(const RowMatrix<T>& grad_h, const RowMatrix<T>& grad_c,
                                    const LstmCache<T>& cache, const LstmWeights<T>& w, LstmWeights<T>& grads) {
  const int hd = w.hidden_dim;
  const Eigen::Index cols = cache.x.cols();
  if (cache.x.rows() != w.input_dim || cache.i.rows() != hd || cache.weights_digest != w.digest()) {
    throw std::invalid_argument("lstm backward: cache does not match these weights (stale or foreign cache)");
  }
  check_dims(grad_h, hd, cols, "grad_h");
  check_dims(grad_c, hd, cols, "grad_c");

  const auto tc = cache.tanh_c.array();
  const RowMatrix<T> d_c = (grad_c.array() + grad_h.array() * cache.o.array() * (T(1) - tc.square())).matrix();

  RowMatrix<T> d_pre(4 * hd, cols);
  d_pre.middleRows(0, hd) = (d_c.array() * cache.g.array() * cache.i.array() * (T(1) - cache.i.array())).matrix();
  d_pre.middleRows(hd, hd) =
      (d_c.array() * cache.c_prev.array() * cache.f.array() * (T(1) - cache.f.array())).matrix();
  d_pre.middleRows(2 * hd, hd) = (d_c.array() * cache.i.array() * (T(1) - cache.g.array().square())).matrix();
  d_pre.middleRows(3 * hd, hd) =
      (grad_h.array() * tc * cache.o.array() * (T(1) - cache.o.array())).matrix();

  as_matrix(grads.input_weights).noalias() += d_pre * cache.x.transpose();
  as_matrix(grads.hidden_weights).noalias() += d_pre * cache.h_prev.transpose();
  const Eigen::Matrix<T, Eigen::Dynamic, 1> d_bias = d_pre.rowwise().sum();
  as_vector(grads.input_bias) += d_bias;
  as_vector(grads.hidden_bias) += d_bias;

  LstmGradients<T> out;
  out.x = as_matrix(w.input_weights).transpose() * d_pre;
  out.state.h = as_matrix(w.hidden_weights).transpose() * d_pre;
  out.state.c = (d_c.array() * cache.f.array()).matrix();
  return out;
}

template <typename T>
std::vector<LstmState<T>> lstm_forward_sequence(const std::vector<RowMatrix<T>>& xs, const LstmState<T>& initial,
                                                const LstmWeights<T>& w) {
  std::vector<LstmState<T>> states;
  states.reserve(xs.size());
  const LstmState<T>* prev = &initial;
  for (const auto& x : xs) {
    states.push_back(lstm_cell_forward(x, *prev, w));
    prev = &states.back();
  }
  return states;
}

template struct LstmWeights<float>;
template struct LstmWeights<double>;
template LstmState<float> lstm_cell_forward(const RowMatrix<float>&, const LstmState<float>&,
                                            const LstmWeights<float>&, LstmCache<float>*);
template LstmState<double> lstm_cell_forward(const RowMatrix<double>&, const LstmState<double>&,
                                             const LstmWeights<double>&, LstmCache<double>*);
template LstmGradients<float> lstm_cell_backward(const RowMatrix<float>&, const RowMatrix<float>&,
                                                 const LstmCache<float>&, const LstmWeights<float>&,
                                                 LstmWeights<float>&);
template LstmGradients<double> lstm_cell_backward(const RowMatrix<double>&, const RowMatrix<double>&,
                                                  const LstmCache<double>&, const LstmWeights<double>&,
                                                  LstmWeights<double>&);

template std::vector<LstmState<float>> lstm_forward_sequence(const std::vector<RowMatrix<float>>&,
                                                             const LstmState<float>&, const LstmWeights<float>&);
template std::vector<LstmState<double>> lstm_forward_sequence(const std::vector<RowMatrix<double>>&,
                                                              const LstmState<double>&, const LstmWeights<double>&);

}  // namespace alff
