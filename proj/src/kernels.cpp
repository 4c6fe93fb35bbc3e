#include "emofilm/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace emofilm::kernels {

namespace {

void check(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

// One head of attention. Shared by the serial and parallel drivers; heads
// touch disjoint column blocks of the outputs.
void attention_head_forward(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t head,
                            std::size_t head_dim, bool causal, Matrix& out, double* probs) {
  const std::size_t tq = q.rows(), tk = k.rows();
  const std::size_t c0 = head * head_dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  for (std::size_t i = 0; i < tq; ++i) {
    double* p = probs + i * tk;
    const std::size_t limit = causal ? std::min(i + 1, tk) : tk;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < limit; ++j) {
      double s = 0.0;
      for (std::size_t d = 0; d < head_dim; ++d) s += q(i, c0 + d) * k(j, c0 + d);
      p[j] = s * scale;
      mx = std::max(mx, p[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < limit; ++j) {
      p[j] = std::exp(p[j] - mx);
      z += p[j];
    }
    for (std::size_t j = 0; j < limit; ++j) p[j] /= z;
    for (std::size_t j = limit; j < tk; ++j) p[j] = 0.0;
    for (std::size_t d = 0; d < head_dim; ++d) {
      double acc = 0.0;
      for (std::size_t j = 0; j < limit; ++j) acc += p[j] * v(j, c0 + d);
      out(i, c0 + d) = acc;
    }
  }
}

void attention_head_backward(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t head,
                             std::size_t head_dim, bool causal, const double* probs,
                             const Matrix& dout, Matrix& dq, Matrix& dk, Matrix& dv) {
  const std::size_t tq = q.rows(), tk = k.rows();
  const std::size_t c0 = head * head_dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  std::vector<double> ds(tk);
  for (std::size_t i = 0; i < tq; ++i) {
    const double* p = probs + i * tk;
    const std::size_t limit = causal ? std::min(i + 1, tk) : tk;
    double dot = 0.0;
    for (std::size_t j = 0; j < limit; ++j) {
      double dp = 0.0;
      for (std::size_t d = 0; d < head_dim; ++d) dp += dout(i, c0 + d) * v(j, c0 + d);
      ds[j] = dp;
      dot += p[j] * dp;
    }
    for (std::size_t j = 0; j < limit; ++j) {
      for (std::size_t d = 0; d < head_dim; ++d) dv(j, c0 + d) += p[j] * dout(i, c0 + d);
      ds[j] = p[j] * (ds[j] - dot) * scale;
    }
    for (std::size_t j = 0; j < limit; ++j) {
      for (std::size_t d = 0; d < head_dim; ++d) {
        dq(i, c0 + d) += ds[j] * k(j, c0 + d);
        dk(j, c0 + d) += ds[j] * q(i, c0 + d);
      }
    }
  }
}

void check_attention(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t heads) {
  check(heads > 0 && q.cols() % heads == 0, "attention: width not divisible by heads");
  check(q.cols() == k.cols() && k.same_shape(v), "attention: q/k/v shape mismatch");
}

}  // namespace

void matmul(const Matrix& a, const Matrix& b, Matrix& out) {
  check(a.cols() == b.rows(), "matmul: inner dimension mismatch");
  const std::size_t m = a.rows(), n = b.cols(), kk = a.cols();
  if (out.rows() != m || out.cols() != n) out = Matrix(m, n);
  const double* A = a.data();
  const double* B = b.data();
  double* C = out.data();
  const long long rows = static_cast<long long>(m);
#pragma omp parallel for schedule(static) if (m * n * kk > kParallelThreshold)
  for (long long i = 0; i < rows; ++i) {
    double* crow = C + i * n;
    std::fill(crow, crow + n, 0.0);
    for (std::size_t p = 0; p < kk; ++p) {
      const double aip = A[i * kk + p];
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& out) {
  check(a.rows() == b.rows(), "matmul_tn: row mismatch");
  check(out.rows() == a.cols() && out.cols() == b.cols(), "matmul_tn: output shape");
  const std::size_t m = a.cols(), n = b.cols(), r = a.rows();
  const double* A = a.data();
  const double* B = b.data();
  double* C = out.data();
  const long long rows = static_cast<long long>(m);
#pragma omp parallel for schedule(static) if (m * n * r > kParallelThreshold)
  for (long long i = 0; i < rows; ++i) {
    double* crow = C + i * n;
    for (std::size_t p = 0; p < r; ++p) {
      const double api = A[p * m + i];
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += api * brow[j];
    }
  }
}

void matmul_nt_acc(const Matrix& a, const Matrix& b, Matrix& out) {
  check(a.cols() == b.cols(), "matmul_nt: inner dimension mismatch");
  check(out.rows() == a.rows() && out.cols() == b.rows(), "matmul_nt: output shape");
  const std::size_t m = a.rows(), n = b.rows(), kk = a.cols();
  const double* A = a.data();
  const double* B = b.data();
  double* C = out.data();
  const long long rows = static_cast<long long>(m);
#pragma omp parallel for schedule(static) if (m * n * kk > kParallelThreshold)
  for (long long i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = C[i * n + j];
      for (std::size_t p = 0; p < kk; ++p) s += A[i * kk + p] * B[j * kk + p];
      C[i * n + j] = s;
    }
  }
}

void attention_forward(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t heads,
                       bool causal, Matrix& out, std::vector<double>& probs) {
  check_attention(q, k, v, heads);
  const std::size_t hd = q.cols() / heads;
  out = Matrix(q.rows(), q.cols());
  probs.assign(heads * q.rows() * k.rows(), 0.0);
  const long long nh = static_cast<long long>(heads);
#pragma omp parallel for schedule(static) if (q.rows() * k.rows() * q.cols() > kParallelThreshold)
  for (long long h = 0; h < nh; ++h)
    attention_head_forward(q, k, v, static_cast<std::size_t>(h), hd, causal, out,
                           probs.data() + h * q.rows() * k.rows());
}

void attention_backward(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t heads,
                        bool causal, const std::vector<double>& probs, const Matrix& dout,
                        Matrix& dq, Matrix& dk, Matrix& dv) {
  check_attention(q, k, v, heads);
  const std::size_t hd = q.cols() / heads;
  const long long nh = static_cast<long long>(heads);
#pragma omp parallel for schedule(static) if (q.rows() * k.rows() * q.cols() > kParallelThreshold)
  for (long long h = 0; h < nh; ++h)
    attention_head_backward(q, k, v, static_cast<std::size_t>(h), hd, causal,
                            probs.data() + h * q.rows() * k.rows(), dout, dq, dk, dv);
}

namespace serial {

void matmul(const Matrix& a, const Matrix& b, Matrix& out) {
  check(a.cols() == b.rows(), "matmul: inner dimension mismatch");
  out = Matrix(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < a.cols(); ++p) s += a(i, p) * b(p, j);
      out(i, j) = s;
    }
}

void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& out) {
  check(a.rows() == b.rows(), "matmul_tn: row mismatch");
  check(out.rows() == a.cols() && out.cols() == b.cols(), "matmul_tn: output shape");
  for (std::size_t i = 0; i < a.cols(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = out(i, j);
      for (std::size_t p = 0; p < a.rows(); ++p) s += a(p, i) * b(p, j);
      out(i, j) = s;
    }
}

void matmul_nt_acc(const Matrix& a, const Matrix& b, Matrix& out) {
  check(a.cols() == b.cols(), "matmul_nt: inner dimension mismatch");
  check(out.rows() == a.rows() && out.cols() == b.rows(), "matmul_nt: output shape");
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double s = out(i, j);
      for (std::size_t p = 0; p < a.cols(); ++p) s += a(i, p) * b(j, p);
      out(i, j) = s;
    }
}

void attention_forward(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t heads,
                       bool causal, Matrix& out, std::vector<double>& probs) {
  check_attention(q, k, v, heads);
  const std::size_t hd = q.cols() / heads;
  out = Matrix(q.rows(), q.cols());
  probs.assign(heads * q.rows() * k.rows(), 0.0);
  for (std::size_t h = 0; h < heads; ++h)
    attention_head_forward(q, k, v, h, hd, causal, out, probs.data() + h * q.rows() * k.rows());
}

void attention_backward(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t heads,
                        bool causal, const std::vector<double>& probs, const Matrix& dout,
                        Matrix& dq, Matrix& dk, Matrix& dv) {
  check_attention(q, k, v, heads);
  const std::size_t hd = q.cols() / heads;
  for (std::size_t h = 0; h < heads; ++h)
    attention_head_backward(q, k, v, h, hd, causal, probs.data() + h * q.rows() * k.rows(), dout,
                            dq, dk, dv);
}

}  // namespace serial

}  // namespace emofilm::kernels
