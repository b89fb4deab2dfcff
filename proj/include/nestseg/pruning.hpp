#pragma once

#include <string>
#include <vector>

#include "nestseg/dataset.hpp"
#include "nestseg/graph.hpp"
#include "nestseg/loss.hpp"

namespace nestseg {

// The sub-network sufficient to compute head d: every node (i, j) with
// i+j <= d plus the 1x1 head at (0, d). Blocks and head alias the parent's
// parameters, so pruning moves no weights and its forward pass performs the
// same arithmetic the full graph performs for that branch.
struct PrunedModel {
  const ModelGraph* parent = nullptr;
  int level = 0;
  std::vector<NodeBlock> nodes;
  Head head;

  Tensor forward(const Tensor& input) const;
  std::int64_t param_count() const;
  std::int64_t flop_count() const;
  std::vector<NodeId> node_ids() const;
};

// Requires a deeply supervised nested graph and 1 <= level <= depth-1.
PrunedModel prune(const ModelGraph& graph, int level);

// The dependency cone of head d, two ways: the closed form {(i,j): i+j <= d}
// and a generic reverse reachability walk over the graph's edges. Both return
// pathway-major order; tests assert they agree.
std::vector<NodeId> closed_form_cone(const ArchitectureSpec& spec, int level);
std::vector<NodeId> reachable_cone(const ModelGraph& graph, int level);

struct PruneReportRow {
  int level = 0;
  std::int64_t params = 0;
  std::int64_t flops = 0;
  double seconds_per_image = 0;
  double iou = 0;
  double dice = 0;
};

// One row per level 1..depth-1 over the given samples. Timing (when on) runs
// `warmup` throwaway passes first, then measures only the forward calls.
std::vector<PruneReportRow> pruning_report(const ModelGraph& graph,
                                           const std::vector<SegmentationSample>& samples,
                                           int batch_size, bool timing, int warmup = 10);

// CSV with header level,params,flops,seconds_per_image,iou,dice.
std::string prune_report_csv(const std::vector<PruneReportRow>& rows);

}  // namespace nestseg
