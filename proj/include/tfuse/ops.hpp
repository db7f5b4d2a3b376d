#pragma once

#include "tfuse/tape.hpp"

#include <span>
#include <vector>

namespace tfuse {

// Differentiable operations. Every function records one node on the tape of
// its operands; operands must share a tape.

/// [m×k] · [k×n] → [m×n].
Var matmul(const Var& a, const Var& b);
/// Adds a length-n bias to every row of an [m×n] matrix (rank-1 x is one row).
Var add_bias(const Var& x, const Var& bias);
/// x · weight + bias, with x [m×in], weight [in×out], bias [out].
Var linear(const Var& x, const Var& weight, const Var& bias);

/// 2-D cross-correlation with zero padding.
///
/// x is [C×H×W] or [N×C×H×W], kernel is [C'×C×kh×kw], bias is [C'].
/// Output spatial size is (H + 2·padding − kh)/stride + 1.
Var conv2d(const Var& x, const Var& kernel, const Var& bias, int stride = 1, int padding = 1);
Var conv2d(const Var& x, const Var& kernel, int stride = 1, int padding = 1);
/// Non-overlapping window average over the last two axes.
Var avg_pool2d(const Var& x, int window = 2);

enum class Pointwise { kRelu, kSigmoid };
enum class Binary { kAdd, kSub, kMul };

Var relu(const Var& x);
Var sigmoid(const Var& x);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, double factor);
Var offset(const Var& x, double shift);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(double c, const Var& x) { return scale(x, c); }
inline Var operator-(const Var& x) { return scale(x, -1.0); }

enum class Reduction { kSum, kMean, kMax };

/// Reduces one axis (negative counts from the back). max routes its gradient
/// to the first maximal entry.
Var reduce(Reduction kind, const Var& x, int axis);
/// Reduces every element to a scalar.
Var reduce(Reduction kind, const Var& x);

inline Var sum(const Var& x) { return reduce(Reduction::kSum, x); }
inline Var sum(const Var& x, int axis) { return reduce(Reduction::kSum, x, axis); }
inline Var mean(const Var& x) { return reduce(Reduction::kMean, x); }
inline Var mean(const Var& x, int axis) { return reduce(Reduction::kMean, x, axis); }
inline Var max(const Var& x, int axis) { return reduce(Reduction::kMax, x, axis); }

/// Max-shifted softmax along one axis.
Var softmax(const Var& x, int axis = -1);

/// Concatenation along an axis. An operand with no elements is the identity.
Var concat(const Var& a, const Var& b, int axis = 0);
Var concat(std::span<const Var> parts, int axis = 0);

Var reshape(const Var& x, Shape shape);
/// Rows of x (viewed as [n × rest]) picked by index, in order; repeats allowed.
Var gather_rows(const Var& x, std::vector<Index> rows);

/// Euclidean distances between all rows of an [n×d] matrix → [n×n]. The
/// gradient at a zero distance is taken as zero.
Var pairwise_distances(const Var& x);

/// x / Σx for a non-negative vector. A zero sum yields the uniform vector 1/n
/// (with zero gradient).
Var normalize_sum(const Var& x);

/// Mean softmax cross-entropy of [n×K] logits against integer labels.
Var softmax_cross_entropy(const Var& logits, std::span<const int> labels);

}  // namespace tfuse
