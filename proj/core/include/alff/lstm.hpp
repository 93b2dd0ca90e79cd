#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "alff/random.hpp"
#include "alff/tensor.hpp"

namespace alff {

enum class Gate { kInput = 0, kForget = 1, kCell = 2, kOutput = 3 };

/// One LSTM layer. The four input-to-gate matrices are stacked row-wise in
/// gate order (input, forget, cell, output), as are the hidden-to-gate
/// matrices and the two bias vectors; the gate accessors expose each block.
template <typename T>
struct LstmWeights {
  int input_dim = 0;
  int hidden_dim = 0;
  ParamTensor<T> input_weights;   // 4H x I : W_ii, W_if, W_ig, W_io
  ParamTensor<T> hidden_weights;  // 4H x H : W_hi, W_hf, W_hg, W_ho
  ParamTensor<T> input_bias;      // 4H     : b_ii, b_if, b_ig, b_io
  ParamTensor<T> hidden_bias;     // 4H     : b_hi, b_hf, b_hg, b_ho

  LstmWeights() = default;
  LstmWeights(int input_dim, int hidden_dim);

  auto input_weight(Gate g) {
    return as_matrix(input_weights).middleRows(static_cast<int>(g) * hidden_dim, hidden_dim);
  }
  auto hidden_weight(Gate g) {
    return as_matrix(hidden_weights).middleRows(static_cast<int>(g) * hidden_dim, hidden_dim);
  }
  auto input_bias_of(Gate g) { return as_vector(input_bias).segment(static_cast<int>(g) * hidden_dim, hidden_dim); }
  auto hidden_bias_of(Gate g) {
    return as_vector(hidden_bias).segment(static_cast<int>(g) * hidden_dim, hidden_dim);
  }

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), then b_if = 1.
  void init(SplitMix& rng);
  void visit(const std::string& prefix, const ParamVisitor<T>& f);
  std::uint64_t digest() const;
};

/// Hidden and cell state; each column is an independent sequence.
template <typename T>
struct LstmState {
  RowMatrix<T> h;  // H x L
  RowMatrix<T> c;  // H x L

  static LstmState zeros(int hidden_dim, int columns) {
    return {RowMatrix<T>::Zero(hidden_dim, columns), RowMatrix<T>::Zero(hidden_dim, columns)};
  }
};

template <typename T>
struct LstmCache {
  std::uint64_t weights_digest = 0;
  RowMatrix<T> x;       // I x L
  RowMatrix<T> h_prev;  // H x L
  RowMatrix<T> c_prev;
  RowMatrix<T> i, f, g, o;
  RowMatrix<T> c;
  RowMatrix<T> tanh_c;
};

template <typename T>
struct LstmGradients {
  RowMatrix<T> x;       // dL/dx_t
  LstmState<T> state;   // dL/dh_{t-1}, dL/dc_{t-1}
};

/// One timestep over a batch of columns. Throws std::invalid_argument on a dimension mismatch.
template <typename T>
LstmState<T> lstm_cell_forward(const RowMatrix<T>& x, const LstmState<T>& state, const LstmWeights<T>& w,
                               LstmCache<T>* cache = nullptr);

/// Runs the cell over a sequence from `initial`; returns the state after each step.
template <typename T>
std::vector<LstmState<T>> lstm_forward_sequence(const std::vector<RowMatrix<T>>& xs, const LstmState<T>& initial,
                                                const LstmWeights<T>& w);

/// Adjoint of lstm_cell_forward. Parameter gradients accumulate into `grads`.
/// Throws std::invalid_argument if the cache does not belong to these weights.
template <typename T>
LstmGradients<T> lstm_cell_backward(const RowMatrix<T>& grad_h, const RowMatrix<T>& grad_c,
                                    const LstmCache<T>& cache, const LstmWeights<T>& w,
                                    LstmWeights<T>& grads);

}  // namespace alff
