#pragma once

// Dense kernels used by the autodiff engine.
//
// Every kernel in `emofilm::kernels` parallelizes over independent output
// rows (or attention heads) with OpenMP. The reduction order inside each
// output element is identical to the matching routine in
// `emofilm::kernels::serial`, so both produce bit-identical results for any
// thread count. The serial versions are kept as the reference for tests and
// benchmarks.

#include "emofilm/matrix.hpp"

#include <cstddef>

namespace emofilm::kernels {

/// out = a · b
void matmul(const Matrix& a, const Matrix& b, Matrix& out);
/// out += aᵀ · b
void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& out);
/// out += a · bᵀ
void matmul_nt_acc(const Matrix& a, const Matrix& b, Matrix& out);

/// Multi-head scaled dot-product attention over column blocks of q/k/v.
/// `probs` receives heads × (q.rows × k.rows) softmax weights, laid out
/// head-major. With `causal`, query i only sees keys j ≤ i.
void attention_forward(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t heads,
                       bool causal, Matrix& out, std::vector<double>& probs);

/// Accumulates gradients into dq/dk/dv given dout and the saved probabilities.
void attention_backward(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t heads,
                        bool causal, const std::vector<double>& probs, const Matrix& dout,
                        Matrix& dq, Matrix& dk, Matrix& dv);

/// Work (multiply-adds) below which kernels stay on the calling thread.
inline constexpr std::size_t kParallelThreshold = 1u << 15;

namespace serial {

void matmul(const Matrix& a, const Matrix& b, Matrix& out);
void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& out);
void matmul_nt_acc(const Matrix& a, const Matrix& b, Matrix& out);
void attention_forward(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t heads,
                       bool causal, Matrix& out, std::vector<double>& probs);
void attention_backward(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t heads,
                        bool causal, const std::vector<double>& probs, const Matrix& dout,
                        Matrix& dq, Matrix& dk, Matrix& dv);

}  // namespace serial

}  // namespace emofilm::kernels
