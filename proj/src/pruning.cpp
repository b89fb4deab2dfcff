#include "nestseg/pruning.hpp"

#include <algorithm>
#include <chrono>
#include <set>

#include "nestseg/util.hpp"

namespace nestseg {

namespace {

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

void check_prunable(const ModelGraph& graph, int level) {
  const ArchitectureSpec& spec = graph.spec();
  if (spec.variant != Variant::unetpp || !spec.deep_supervision)
    fail("prune: requires a deeply supervised unetpp graph");
  if (level < 1 || level > spec.depth - 1)
    fail("prune: level " + std::to_string(level) + " outside [1, " +
         std::to_string(spec.depth - 1) + "]");
}

}  // namespace

std::vector<NodeId> closed_form_cone(const ArchitectureSpec& spec, int level) {
  std::vector<NodeId> out;
  for (int j = 0; j <= level; ++j)
    for (int i = 0; i + j <= level; ++i)
      if (node_exists(spec, {i, j})) out.push_back({i, j});
  return out;
}

std::vector<NodeId> reachable_cone(const ModelGraph& graph, int level) {
  // reverse edges from the head's node, following sources until fixpoint
  std::set<NodeId> seen;
  std::vector<NodeId> frontier{{0, level}};
  seen.insert({0, level});
  while (!frontier.empty()) {
    const NodeId cur = frontier.back();
    frontier.pop_back();
    for (const Edge& e : graph.edges()) {
      if (e.dst != cur || e.src.from_input) continue;
      if (seen.insert(e.src.node).second) frontier.push_back(e.src.node);
    }
  }
  // same pathway-major order the builder uses
  std::vector<NodeId> out(seen.begin(), seen.end());
  std::sort(out.begin(), out.end(),
            [](NodeId a, NodeId b) { return a.j != b.j ? a.j < b.j : a.i < b.i; });
  return out;
}

PrunedModel prune(const ModelGraph& graph, int level) {
  check_prunable(graph, level);
  PrunedModel model;
  model.parent = &graph;
  model.level = level;
  for (const NodeBlock& block : graph.nodes())
    if (block.id.i + block.id.j <= level) model.nodes.push_back(block);
  for (const Head& head : graph.heads())
    if (head.j == level) model.head = head;
  if (!model.head.conv.weight) fail("prune: graph has no head at level " + std::to_string(level));
  return model;
}

Tensor PrunedModel::forward(const Tensor& input) const {
  check_forward_input(parent->spec(), input);
  Tape32 tape(false);
  const std::vector<Tape32::Id> outs =
      run_node_blocks(tape, tape.leaf(input), parent->spec(), nodes);
  Tape32::Id top = -1;
  for (std::size_t k = 0; k < nodes.size(); ++k)
    if (nodes[k].id == NodeId{0, level}) top = outs[k];
  if (top < 0) fail("prune: node (0," + std::to_string(level) + ") missing from the cone");
  return tape.val(apply_head(tape, head, top));
}

std::int64_t PrunedModel::param_count() const { return conv_param_count(nodes, {head}); }

std::int64_t PrunedModel::flop_count() const {
  return conv_flop_count(parent->spec(), nodes, {head});
}

std::vector<NodeId> PrunedModel::node_ids() const {
  std::vector<NodeId> out;
  out.reserve(nodes.size());
  for (const NodeBlock& b : nodes) out.push_back(b.id);
  return out;
}

std::vector<PruneReportRow> pruning_report(const ModelGraph& graph,
                                           const std::vector<SegmentationSample>& samples,
                                           int batch_size, bool timing, int warmup) {
  if (samples.empty()) fail("pruning report: empty sample list");
  std::vector<PruneReportRow> rows;
  for (int level = 1; level <= graph.spec().depth - 1; ++level) {
    const PrunedModel model = prune(graph, level);
    PruneReportRow row;
    row.level = level;
    row.params = model.param_count();
    row.flops = model.flop_count();

    const std::vector<std::vector<int>> batches =
        batch_indices(static_cast<int>(samples.size()), batch_size);
    if (timing) {
      auto [first_images, first_masks] = stack_samples(samples, batches[0]);
      for (int k = 0; k < warmup; ++k) model.forward(first_images);
    }

    std::vector<double> ious, dices;
    double forward_seconds = 0;
    for (const std::vector<int>& batch : batches) {
      auto [images, masks] = stack_samples(samples, batch);
      const double t0 = timing ? now_seconds() : 0;
      const Tensor probs = model.forward(images);
      if (timing) forward_seconds += now_seconds() - t0;
      per_image_metrics(probs, masks, 0.5f, ious, dices);
    }
    double iou_sum = 0, dice_sum = 0;
    for (double v : ious) iou_sum += v;
    for (double v : dices) dice_sum += v;
    row.iou = iou_sum / static_cast<double>(ious.size());
    row.dice = dice_sum / static_cast<double>(dices.size());
    if (timing) row.seconds_per_image = forward_seconds / static_cast<double>(samples.size());
    rows.push_back(row);
  }
  return rows;
}

std::string prune_report_csv(const std::vector<PruneReportRow>& rows) {
  std::string out = "level,params,flops,seconds_per_image,iou,dice\n";
  for (const PruneReportRow& r : rows)
    out += std::to_string(r.level) + "," + std::to_string(r.params) + "," +
           std::to_string(r.flops) + "," + fmt_fixed(r.seconds_per_image, 6) + "," +
           fmt_fixed(r.iou, 6) + "," + fmt_fixed(r.dice, 6) + "\n";
  return out;
}

}  // namespace nestseg
