#pragma once

#include <string>
#include <vector>

#include "nestseg/checkpoint.hpp"
#include "nestseg/dataset.hpp"
#include "nestseg/graph.hpp"
#include "nestseg/loss.hpp"
#include "nestseg/optimizer.hpp"

namespace nestseg {

struct MetricsRow {
  int epoch = 0;
  std::string split;
  double loss = 0;
  double iou = 0;
  double dice = 0;
  double seconds = 0;
};

// Header epoch,split,loss,iou,dice,seconds; six fixed decimals except the
// integer epoch and three-decimal seconds. Equal histories give equal bytes.
std::string metrics_csv(const std::vector<MetricsRow>& rows);

struct EvalResult {
  double loss = 0;
  double iou = 0;
  double dice = 0;
  double seconds_per_image = 0;  // stays 0 unless timing was requested
  int images = 0;
};

// Runs the graph over the samples in the given inference mode. Loss is the
// hybrid objective of the mode's output; IoU/Dice are averaged per image, so
// the batch size only affects speed.
EvalResult evaluate(const ModelGraph& graph, const std::vector<SegmentationSample>& samples,
                    const ForwardMode& mode, int batch_size, bool timing,
                    const LossConfig& loss_config = {});

struct TrainResult {
  Checkpoint best;  // parameters + optimizer moments of the best-validation epoch
  std::vector<MetricsRow> history;
  int best_epoch = 0;
  double best_val_iou = 0;
  int epochs_run = 0;
  bool diverged = false;
};

// Shuffled mini-batch epochs minimizing the per-head supervised loss, with
// validation IoU (accurate mode) driving early stopping. The train rows in
// the history carry metrics accumulated from the training batches themselves
// (parameters move mid-epoch); val rows come from a full evaluation pass.
// On a non-finite loss the run stops and the graph is rolled back to the
// returned checkpoint. Timing off keeps the seconds column at zero so equal
// seeds produce byte-identical histories.
TrainResult train(ModelGraph& graph, const Dataset& data, const TrainConfig& config,
                  const LossConfig& loss_config = {}, bool timing = false);

}  // namespace nestseg
