#pragma once

#include <cstdint>
#include <span>

#include "xaib/rng.h"
#include "xaib/tensor.h"

// Differentiable operations. Each op records itself on `tape` when any input
// requires a gradient; otherwise it is a plain forward computation. Shape
// errors throw xaib::Error naming the op and the offending shapes.
namespace xaib::ops {

Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor add(Tape& tape, const Tensor& a, float b);
Tensor mul(Tape& tape, const Tensor& a, float b);

// (M,K) x (K,N) -> (M,N)
Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);

struct Conv2dParams {
  int stride = 1;
  int padding = 0;
};

// x: (N,C,H,W), weight: (O,C,kh,kw), bias: (O) or undefined.
Tensor conv2d(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias,
              Conv2dParams params = {});

// Max over kernel×kernel windows; ties resolve to the first element in
// row-major window order.
Tensor maxpool2d(Tape& tape, const Tensor& x, int kernel, int stride);

Tensor relu(Tape& tape, const Tensor& x);

// (N, ...) -> (N, prod(...))
Tensor flatten(Tape& tape, const Tensor& x);

// x: (N,F), weight: (O,F), bias: (O) or undefined -> (N,O)
Tensor dense(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias);

// Row-wise softmax over the last axis of a 2-D tensor, max-shifted.
Tensor softmax(Tape& tape, const Tensor& logits);

// Mean negative log-likelihood of `labels` under softmax(logits); scalar.
Tensor cross_entropy(Tape& tape, const Tensor& logits, std::span<const int> labels);

// out[n] = x[n, index[n]] for a 2-D x.
Tensor pick(Tape& tape, const Tensor& x, std::span<const int> index);

// Scalar sum of all elements (64-bit accumulation).
Tensor sum(Tape& tape, const Tensor& x);

// Inverted dropout. `streams` holds one stream for the whole tensor, or one
// per leading-axis row; element j of row n uses streams[n].uniform_at(j), so
// a row's mask does not depend on what else is in the batch. Inactive or
// rate == 0 returns x itself.
Tensor dropout(Tape& tape, const Tensor& x, float rate, std::span<const RngStream> streams,
               bool active);

}  // namespace xaib::ops
