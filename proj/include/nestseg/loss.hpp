#pragma once

#include <vector>

#include "nestseg/tape.hpp"
#include "nestseg/tensor.hpp"

namespace nestseg {

// Weights for the per-head training objective. ds_weights must sum to 1; an
// empty list means uniform over however many heads the graph has.
struct LossConfig {
  double smooth_epsilon = 1e-6;
  std::vector<double> ds_weights;

  void validate(std::size_t head_count) const;
  std::vector<double> effective_weights(std::size_t head_count) const;
};

// Hybrid cross-entropy + soft-Dice objective over a batch:
//
//   L = -(1/N) sum_b [ (1/(2P)) sum_p y log(yhat + eps)
//                      + (2 sum_p y yhat) / (sum_p y + sum_p yhat + eps) ]
//
// with N images of P pixels each. The log term rewards only foreground
// confidence, the ratio is the soft Dice overlap; both are per-image, then
// averaged. Lower is better; -1 is the perfect-prediction limit. eps sits in
// the log argument and the Dice denominator only, so an all-background image
// with yhat -> 0 contributes 0 rather than a spurious perfect-overlap 1.
//
// pred and target must share shape [B,1,H,W]; target entries must be exactly
// 0 or 1.
template <typename T>
T bce_dice_loss(const TensorBase<T>& pred, const TensorBase<T>& target, T eps = T(1e-6));

// Gradient of bce_dice_loss w.r.t. pred, scaled by an upstream scalar.
template <typename T>
void bce_dice_loss_backward(const TensorBase<T>& pred, const TensorBase<T>& target, T eps,
                            T upstream, TensorBase<T>& grad_pred);

// Records the loss as a single fused tape node (scalar output).
template <typename T>
typename Tape<T>::Id bce_dice_loss_node(Tape<T>& tape, typename Tape<T>::Id pred,
                                        typename Tape<T>::Id target, T eps = T(1e-6));

// Weighted sum of the per-head losses against one target.
template <typename T>
typename Tape<T>::Id deep_supervision_loss_node(Tape<T>& tape,
                                                const std::vector<typename Tape<T>::Id>& heads,
                                                typename Tape<T>::Id target,
                                                const LossConfig& config);

// Threshold-binarized overlap metrics, averaged per image over the batch so
// the result is independent of how the split was batched. A pair of empty
// masks counts as perfect agreement (1.0). pred/target shape [B,1,H,W].
double iou(const Tensor& pred, const Tensor& target, float threshold = 0.5f);
double dice(const Tensor& pred, const Tensor& target, float threshold = 0.5f);

// Per-image values for callers that aggregate across batches themselves.
void per_image_metrics(const Tensor& pred, const Tensor& target, float threshold,
                       std::vector<double>& ious, std::vector<double>& dices);

}  // namespace nestseg
