#include "nestseg/loss.hpp"

#include <cmath>

#include "nestseg/util.hpp"

namespace nestseg {

void LossConfig::validate(std::size_t head_count) const {
  if (smooth_epsilon <= 0) fail("loss config: smooth_epsilon must be positive");
  if (ds_weights.empty()) return;
  if (ds_weights.size() != head_count)
    fail("loss config: " + std::to_string(ds_weights.size()) + " head weights for " +
         std::to_string(head_count) + " heads");
  double sum = 0;
  for (double w : ds_weights) {
    if (w < 0) fail("loss config: negative head weight");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9) fail("loss config: head weights sum to " + fmt_fixed(sum, 9) +
                                       ", expected 1");
}

std::vector<double> LossConfig::effective_weights(std::size_t head_count) const {
  validate(head_count);
  if (!ds_weights.empty()) return ds_weights;
  return std::vector<double>(head_count, 1.0 / static_cast<double>(head_count));
}

namespace {

template <typename T>
void check_loss_shapes(const TensorBase<T>& pred, const TensorBase<T>& target) {
  if (!pred.same_shape(target))
    fail("loss: prediction shape " + pred.shape_str() + " vs target shape " + target.shape_str());
  if (pred.rank() != 4 || pred.dim(1) != 1)
    fail("loss: expected [B,1,H,W] masks, got " + pred.shape_str());
  for (std::int64_t i = 0; i < target.numel(); ++i)
    if (target[i] != T(0) && target[i] != T(1))
      fail("loss: target is not binary at flat index " + std::to_string(i));
}

}  // namespace

template <typename T>
T bce_dice_loss(const TensorBase<T>& pred, const TensorBase<T>& target, T eps) {
  check_loss_shapes(pred, target);
  const std::int64_t batch = pred.dim(0);
  const std::int64_t pixels = pred.numel() / batch;

  double acc = 0;
  for (std::int64_t b = 0; b < batch; ++b) {
    const T* y = target.data() + b * pixels;
    const T* yh = pred.data() + b * pixels;
    double log_term = 0, inter = 0, sum_y = 0, sum_yh = 0;
    for (std::int64_t p = 0; p < pixels; ++p) {
      if (y[p] != T(0)) log_term += std::log(static_cast<double>(yh[p]) + eps);
      inter += static_cast<double>(y[p]) * yh[p];
      sum_y += y[p];
      sum_yh += yh[p];
    }
    acc += log_term / (2.0 * static_cast<double>(pixels));
    acc += 2.0 * inter / (sum_y + sum_yh + eps);
  }
  return static_cast<T>(-acc / static_cast<double>(batch));
}

template <typename T>
void bce_dice_loss_backward(const TensorBase<T>& pred, const TensorBase<T>& target, T eps,
                            T upstream, TensorBase<T>& grad_pred) {
  if (!grad_pred.same_shape(pred))
    fail("loss backward: gradient shape " + grad_pred.shape_str() + " vs prediction shape " +
         pred.shape_str());
  const std::int64_t batch = pred.dim(0);
  const std::int64_t pixels = pred.numel() / batch;
  const double scale = -static_cast<double>(upstream) / static_cast<double>(batch);

  for (std::int64_t b = 0; b < batch; ++b) {
    const T* y = target.data() + b * pixels;
    const T* yh = pred.data() + b * pixels;
    T* g = grad_pred.data() + b * pixels;
    double inter = 0, sum_y = 0, sum_yh = 0;
    for (std::int64_t p = 0; p < pixels; ++p) {
      inter += static_cast<double>(y[p]) * yh[p];
      sum_y += y[p];
      sum_yh += yh[p];
    }
    const double denom = sum_y + sum_yh + eps;
    const double ratio_minus = 2.0 * inter / (denom * denom);
    for (std::int64_t p = 0; p < pixels; ++p) {
      double d = 0;
      if (y[p] != T(0))
        d += static_cast<double>(y[p]) /
             (2.0 * static_cast<double>(pixels) * (static_cast<double>(yh[p]) + eps));
      d += 2.0 * static_cast<double>(y[p]) / denom - ratio_minus;
      g[p] += static_cast<T>(scale * d);
    }
  }
}

template <typename T>
typename Tape<T>::Id bce_dice_loss_node(Tape<T>& tape, typename Tape<T>::Id pred,
                                        typename Tape<T>::Id target, T eps) {
  const T value = bce_dice_loss(tape.val(pred), tape.val(target), eps);
  return tape.custom(
      {pred, target}, TensorBase<T>({1}, {value}),
      [eps](Tape<T>& t, typename Tape<T>::Id self) {
        const auto& in = t.node_inputs(self);
        if (!t.wants_grad(in[0])) return;
        bce_dice_loss_backward(t.val(in[0]), t.val(in[1]), eps, t.node_grad(self)[0],
                               t.grad_buffer(in[0]));
      });
}

template <typename T>
typename Tape<T>::Id deep_supervision_loss_node(Tape<T>& tape,
                                                const std::vector<typename Tape<T>::Id>& heads,
                                                typename Tape<T>::Id target,
                                                const LossConfig& config) {
  if (heads.empty()) fail("loss: no heads to supervise");
  const std::vector<double> w = config.effective_weights(heads.size());
  std::vector<typename Tape<T>::Id> parts;
  std::vector<T> weights;
  parts.reserve(heads.size());
  weights.reserve(heads.size());
  for (std::size_t h = 0; h < heads.size(); ++h) {
    parts.push_back(bce_dice_loss_node(tape, heads[h], target,
                                       static_cast<T>(config.smooth_epsilon)));
    weights.push_back(static_cast<T>(w[h]));
  }
  return tape.weighted_sum(parts, weights);
}

void per_image_metrics(const Tensor& pred, const Tensor& target, float threshold,
                       std::vector<double>& ious, std::vector<double>& dices) {
  if (!pred.same_shape(target))
    fail("metrics: prediction shape " + pred.shape_str() + " vs target shape " +
         target.shape_str());
  if (pred.rank() != 4 || pred.dim(1) != 1)
    fail("metrics: expected [B,1,H,W] masks, got " + pred.shape_str());
  const std::int64_t batch = pred.dim(0);
  const std::int64_t pixels = pred.numel() / batch;
  for (std::int64_t b = 0; b < batch; ++b) {
    const float* yh = pred.data() + b * pixels;
    const float* y = target.data() + b * pixels;
    std::int64_t inter = 0, np = 0, nt = 0;
    for (std::int64_t p = 0; p < pixels; ++p) {
      const bool pb = yh[p] > threshold;
      const bool tb = y[p] > threshold;
      inter += pb && tb;
      np += pb;
      nt += tb;
    }
    const std::int64_t uni = np + nt - inter;
    ious.push_back(uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni));
    dices.push_back(np + nt == 0 ? 1.0
                                 : 2.0 * static_cast<double>(inter) /
                                       static_cast<double>(np + nt));
  }
}

namespace {

double mean(const std::vector<double>& xs) {
  double s = 0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

}  // namespace

double iou(const Tensor& pred, const Tensor& target, float threshold) {
  std::vector<double> ious, dices;
  per_image_metrics(pred, target, threshold, ious, dices);
  return mean(ious);
}

double dice(const Tensor& pred, const Tensor& target, float threshold) {
  std::vector<double> ious, dices;
  per_image_metrics(pred, target, threshold, ious, dices);
  return mean(dices);
}

template float bce_dice_loss<float>(const Tensor&, const Tensor&, float);
template double bce_dice_loss<double>(const Tensor64&, const Tensor64&, double);
template void bce_dice_loss_backward<float>(const Tensor&, const Tensor&, float, float, Tensor&);
template void bce_dice_loss_backward<double>(const Tensor64&, const Tensor64&, double, double,
                                             Tensor64&);
template Tape32::Id bce_dice_loss_node<float>(Tape32&, Tape32::Id, Tape32::Id, float);
template Tape64::Id bce_dice_loss_node<double>(Tape64&, Tape64::Id, Tape64::Id, double);
template Tape32::Id deep_supervision_loss_node<float>(Tape32&, const std::vector<Tape32::Id>&,
                                                      Tape32::Id, const LossConfig&);
template Tape64::Id deep_supervision_loss_node<double>(Tape64&, const std::vector<Tape64::Id>&,
                                                       Tape64::Id, const LossConfig&);

}  // namespace nestseg
