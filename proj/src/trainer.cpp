#include "nestseg/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include "nestseg/rng.hpp"
#include "nestseg/util.hpp"

namespace nestseg {

namespace {

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

double mean(const std::vector<double>& xs) {
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

}  // namespace

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::string out = "epoch,split,loss,iou,dice,seconds\n";
  for (const MetricsRow& r : rows)
    out += std::to_string(r.epoch) + "," + r.split + "," + fmt_fixed(r.loss, 6) + "," +
           fmt_fixed(r.iou, 6) + "," + fmt_fixed(r.dice, 6) + "," + fmt_fixed(r.seconds, 3) +
           "\n";
  return out;
}

EvalResult evaluate(const ModelGraph& graph, const std::vector<SegmentationSample>& samples,
                    const ForwardMode& mode, int batch_size, bool timing,
                    const LossConfig& loss_config) {
  if (samples.empty()) fail("evaluate: empty split");
  EvalResult result;
  result.images = static_cast<int>(samples.size());

  std::vector<double> ious, dices;
  double loss_sum = 0, forward_seconds = 0;
  for (const std::vector<int>& batch : batch_indices(result.images, batch_size)) {
    auto [images, masks] = stack_samples(samples, batch);
    const double t0 = timing ? now_seconds() : 0;
    const Tensor probs = graph.forward(images, mode);
    if (timing) forward_seconds += now_seconds() - t0;
    loss_sum += static_cast<double>(bce_dice_loss(
                    probs, masks, static_cast<float>(loss_config.smooth_epsilon))) *
                static_cast<double>(batch.size());
    per_image_metrics(probs, masks, 0.5f, ious, dices);
  }
  result.loss = loss_sum / result.images;
  result.iou = mean(ious);
  result.dice = mean(dices);
  if (timing) result.seconds_per_image = forward_seconds / result.images;
  return result;
}

TrainResult train(ModelGraph& graph, const Dataset& data, const TrainConfig& config,
                  const LossConfig& loss_config, bool timing) {
  config.validate();
  const std::vector<SegmentationSample>& train_set = data.split(Split::train);
  const std::vector<SegmentationSample>& val_set = data.split(Split::val);
  if (train_set.empty()) fail("train: the train split is empty");
  if (val_set.empty()) fail("train: the val split is empty");
  loss_config.validate(graph.heads().size());

  TrainResult result;
  AdamState state;
  state.init(graph.parameters());
  // last-good fallback until the first epoch completes
  result.best = snapshot(graph, &state, 0, 0.0);
  result.best_val_iou = -1.0;

  Rng shuffle_rng(config.seed);
  std::vector<int> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  int since_improve = 0;
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const double epoch_t0 = timing ? now_seconds() : 0;
    shuffle_rng.shuffle(order);

    std::vector<double> ious, dices;
    double loss_sum = 0;
    bool finite = true;
    for (const std::vector<int>& batch :
         batch_indices(static_cast<int>(order.size()), config.batch_size)) {
      std::vector<int> picks;
      picks.reserve(batch.size());
      for (int k : batch) picks.push_back(order[static_cast<std::size_t>(k)]);
      auto [images, masks] = stack_samples(train_set, picks);

      Tape32 tape;
      const Tape32::Id input = tape.leaf(std::move(images));
      const Tape32::Id target = tape.leaf(std::move(masks));
      const std::vector<Tape32::Id> heads = graph.forward_heads(tape, input);
      const Tape32::Id loss = deep_supervision_loss_node(tape, heads, target, loss_config);

      const float loss_value = tape.val(loss)[0];
      if (!std::isfinite(loss_value)) {
        finite = false;
        break;
      }
      graph.zero_grads();
      tape.backward(loss);
      adam_step(graph.parameters(), state, config);

      loss_sum += static_cast<double>(loss_value) * static_cast<double>(picks.size());
      std::vector<const Tensor*> head_probs;
      head_probs.reserve(heads.size());
      for (Tape32::Id h : heads) head_probs.push_back(&tape.val(h));
      per_image_metrics(ops::mean_of(head_probs), tape.val(target), 0.5f, ious, dices);
    }

    if (!finite) {
      result.diverged = true;
      restore(result.best, graph, &state);
      break;
    }

    result.epochs_run = epoch;
    MetricsRow train_row{epoch, "train", loss_sum / static_cast<double>(train_set.size()),
                         mean(ious), mean(dices), 0.0};

    const EvalResult val =
        evaluate(graph, val_set, ForwardMode::accurate_mode(), config.batch_size, false,
                 loss_config);
    MetricsRow val_row{epoch, "val", val.loss, val.iou, val.dice, 0.0};
    if (timing) {
      const double elapsed = now_seconds() - epoch_t0;
      train_row.seconds = elapsed;
      val_row.seconds = elapsed;
    }
    result.history.push_back(train_row);
    result.history.push_back(val_row);

    if (val.iou > result.best_val_iou) {
      result.best_val_iou = val.iou;
      result.best_epoch = epoch;
      result.best = snapshot(graph, &state, static_cast<std::uint32_t>(epoch), val.iou);
      since_improve = 0;
    } else {
      since_improve += 1;
      if (since_improve >= config.early_stop_patience) break;
    }
  }

  return result;
}

}  // namespace nestseg
