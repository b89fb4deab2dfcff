#pragma once

#include <cstdint>
#include <vector>

#include "nestseg/tensor.hpp"

// Raw forward/backward kernels for the differentiable primitives. The tape in
// tape.hpp wires these into recorded operations; pure-tensor callers (tests,
// oracles) can use them directly. Instantiated for float and double.
namespace nestseg::ops {

// 3x3 (or 1x1 head) cross-correlation, stride 1, symmetric zero padding,
// output spatial size equals input. x [B,Cin,H,W], w [Cout,Cin,k,k], b [Cout].
template <typename T>
TensorBase<T> conv2d(const TensorBase<T>& x, const TensorBase<T>& w, const TensorBase<T>& b);

// Any of gx/gw/gb may be null to skip that gradient. Accumulates (+=).
template <typename T>
void conv2d_backward(const TensorBase<T>& x, const TensorBase<T>& w, const TensorBase<T>& gout,
                     TensorBase<T>* gx, TensorBase<T>* gw, TensorBase<T>* gb);

// 2x2/stride-2 max pooling; H and W must be even. argmax (flat input indices,
// ties to the row-major earliest element) is recorded for the backward pass.
template <typename T>
TensorBase<T> maxpool2(const TensorBase<T>& x, std::vector<std::int64_t>* argmax = nullptr);

template <typename T>
TensorBase<T> maxpool2_backward(const std::vector<std::int64_t>& argmax,
                                const std::vector<std::int64_t>& input_shape,
                                const TensorBase<T>& gout);

// Nearest-neighbor x2 replication into 2x2 blocks.
template <typename T>
TensorBase<T> upsample2(const TensorBase<T>& x);

template <typename T>
TensorBase<T> upsample2_backward(const TensorBase<T>& gout);

// Channel-axis concatenation in argument order; all inputs share B, H, W.
template <typename T>
TensorBase<T> concat_channels(const std::vector<const TensorBase<T>*>& xs);

// Channels [c0, c1) of a 4-D tensor.
template <typename T>
TensorBase<T> slice_channels(const TensorBase<T>& x, std::int64_t c0, std::int64_t c1);

template <typename T>
TensorBase<T> relu(const TensorBase<T>& x);
template <typename T>
TensorBase<T> relu_backward(const TensorBase<T>& x, const TensorBase<T>& gout);

template <typename T>
TensorBase<T> sigmoid(const TensorBase<T>& x);
// takes the forward output, not the input
template <typename T>
TensorBase<T> sigmoid_backward(const TensorBase<T>& y, const TensorBase<T>& gout);

template <typename T>
TensorBase<T> add(const TensorBase<T>& a, const TensorBase<T>& b);
template <typename T>
TensorBase<T> mul(const TensorBase<T>& a, const TensorBase<T>& b);
template <typename T>
TensorBase<T> scale(const TensorBase<T>& a, T factor);
template <typename T>
TensorBase<T> mean_of(const std::vector<const TensorBase<T>*>& xs);

// sum of all elements as a scalar tensor of shape [1]
template <typename T>
TensorBase<T> sum_all(const TensorBase<T>& x);

// y += alpha * x (shape-checked)
template <typename T>
void axpy(TensorBase<T>& y, T alpha, const TensorBase<T>& x);

}  // namespace nestseg::ops
