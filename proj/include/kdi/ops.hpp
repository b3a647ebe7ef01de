#pragma once

#include "kdi/tensor.hpp"

namespace kdi {

// Forward kernels. All are pure; reductions accumulate in double.

// Cross-correlation, NCHW. x:[N,Cin,H,W] k:[Cout,Cin,kh,kw] (kh==kw) bias:[Cout].
// H' = (H + 2*padding - k)/stride + 1.
Tensor conv2d(const Tensor& x, const Tensor& k, const Tensor& bias, int stride, int padding);
Tensor relu(const Tensor& x);
Tensor maxpool2x2(const Tensor& x);             // [N,C,H,W] -> [N,C,H/2,W/2], H and W even
Tensor global_avg_pool(const Tensor& x);        // [N,C,H,W] -> [N,C]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);  // [N,Din]x[Dout,Din] -> [N,Dout]

// Row-wise softmax with temperature; per-row max subtraction for stability.
Tensor softmax_t(const Tensor& logits, float temperature);

// Mean over rows of -sum_k target[k]*log(max(pred[k], 1e-12)). Both arguments
// must be row-stochastic within 1e-4. Returns a scalar tensor.
Tensor cross_entropy_soft(const Tensor& pred, const Tensor& target);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float c);
Tensor sum_all(const Tensor& a);                // scalar
Tensor mean_all(const Tensor& a);               // scalar
Tensor pick(const Tensor& a, std::int64_t flat_index);  // scalar a[flat_index]
Tensor channel_sumsq(const Tensor& x);          // [N,C,H,W] -> [N,H*W], sum_c x^2
Tensor l2_normalize_rows(const Tensor& x);      // [N,D]; zero rows normalize to zero

// Backward kernels (vector-Jacobian products).
void conv2d_backward(const Tensor& x, const Tensor& k, int stride, int padding, const Tensor& gy,
                     Tensor& gx, Tensor& gk, Tensor& gb);
Tensor relu_backward(const Tensor& x, const Tensor& gy);
Tensor maxpool2x2_backward(const Tensor& x, const Tensor& gy);  // ties: first in row-major scan
Tensor global_avg_pool_backward(const Tensor& x, const Tensor& gy);
void linear_backward(const Tensor& x, const Tensor& w, const Tensor& gy, Tensor& gx, Tensor& gw,
                     Tensor& gb);
Tensor softmax_t_backward(const Tensor& y, float temperature, const Tensor& gy);
void cross_entropy_soft_backward(const Tensor& pred, const Tensor& target, float gy_scalar,
                                 Tensor& gpred, Tensor& gtarget);
Tensor channel_sumsq_backward(const Tensor& x, const Tensor& gy);
Tensor l2_normalize_rows_backward(const Tensor& x, const Tensor& gy);

constexpr float kLogClampFloor = 1e-12f;

}  // namespace kdi
