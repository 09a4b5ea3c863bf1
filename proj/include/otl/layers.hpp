#pragma once

#include <cstddef>
#include <vector>

#include "otl/model.hpp"
#include "otl/tensor.hpp"

// Batched layer kernels over NHWC tensors. Backward kernels accumulate
// into gradient tensors that the caller has zeroed.
namespace otl::layers {

Shape conv2d_output_shape(const Shape& in, const Conv2d& spec);
Tensor conv2d_forward(const Tensor& in, const Tensor& weight, const Tensor& bias, Padding padding);
// grad_in may be null when the input gradient is not needed.
void conv2d_backward(const Tensor& in, const Tensor& weight, const Tensor& grad_out, Padding padding,
                     Tensor& grad_weight, Tensor& grad_bias, Tensor* grad_in);

Shape maxpool_output_shape(const Shape& in, const MaxPool& spec);
Tensor maxpool_forward(const Tensor& in, std::size_t window, std::vector<std::size_t>* argmax);
Tensor maxpool_backward(const Shape& in_shape, const std::vector<std::size_t>& argmax, const Tensor& grad_out);

Tensor relu_forward(const Tensor& in);
Tensor relu_backward(const Tensor& in, const Tensor& grad_out);

Tensor dense_forward(const Tensor& in, const Tensor& weight, const Tensor& bias);
void dense_backward(const Tensor& in, const Tensor& weight, const Tensor& grad_out, Tensor& grad_weight,
                    Tensor& grad_bias, Tensor* grad_in);

}  // namespace otl::layers
