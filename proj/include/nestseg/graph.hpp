#pragma once

#include <memory>
#include <string>
#include <vector>

#include "nestseg/arch.hpp"
#include "nestseg/tape.hpp"
#include "nestseg/tensor.hpp"

namespace nestseg {

enum class Transform { direct, maxpool2, upsample2 };

std::string transform_name(Transform t);

// Where a node block reads from: the network input or an earlier node's
// output, optionally resampled on the way in.
struct NodeSource {
  bool from_input = false;
  NodeId node;
  Transform transform = Transform::direct;
};

struct Edge {
  NodeSource src;
  NodeId dst;
};

// Whether the variant materializes node (i, j). The nested variant keeps the
// full triangle i+j <= depth-1; the plain U-Nets keep only the encoder column
// j == 0 and the decoder diagonal i+j == depth-1.
bool node_exists(const ArchitectureSpec& spec, NodeId id);

// Ordered input list of a node. Encoder nodes read the level above through a
// maxpool; pathway nodes read their same-level predecessors laterally, in
// ascending pathway position, then the upsampled output of the node one level
// down and one position back. The order fixes the channel layout of the
// concatenation.
std::vector<NodeSource> node_inputs(const ArchitectureSpec& spec, NodeId id);

// Channel count arriving at the node's first convolution.
int node_in_channels(const ArchitectureSpec& spec, NodeId id);

struct ConvLayer {
  Parameter* weight = nullptr;  // [Cout, Cin, k, k]
  Parameter* bias = nullptr;    // [Cout]
};

struct NodeBlock {
  NodeId id;
  std::vector<ConvLayer> convs;
};

// 1x1 convolution + sigmoid attached to node (0, j).
struct Head {
  int j = 0;
  ConvLayer conv;
};

struct ForwardMode {
  bool accurate = true;
  int fast_level = 0;

  static ForwardMode accurate_mode() { return {}; }
  static ForwardMode fast(int level) { return {false, level}; }
  // "accurate" or "fast:<level>"
  static ForwardMode parse(const std::string& text);
  std::string to_string() const;
};

class ModelGraph {
 public:
  static ModelGraph build(const ArchitectureSpec& spec);

  const ArchitectureSpec& spec() const { return spec_; }
  const std::vector<NodeBlock>& nodes() const { return nodes_; }
  const std::vector<Head>& heads() const { return heads_; }
  std::vector<Edge> edges() const;

  // Declaration order: node blocks (conv weight, then bias, per layer), then
  // heads by ascending pathway position. Initialization, checkpoints, and the
  // optimizer all walk this order.
  std::vector<Parameter*> parameters() const;
  Parameter* find_parameter(const std::string& name) const;

  // He-uniform weights (bound sqrt(6/fan_in)), zero biases, zero grads; one
  // sequential stream in parameter order, so equal seeds give equal weights.
  void initialize_parameters(std::uint64_t seed);
  void zero_grads() const;

  std::int64_t param_count() const;
  std::int64_t flop_count() const;

  // Records every node block and head on the tape; returns the per-head
  // sigmoid outputs, aligned with heads().
  std::vector<Tape32::Id> forward_heads(Tape32& tape, Tape32::Id input) const;

  // Gradient-free inference. accurate: elementwise mean of all head outputs;
  // fast(d): the head at (0, d) alone.
  Tensor forward(const Tensor& input, const ForwardMode& mode) const;

  // Deterministic text listing (topology, channels, costs); golden-file
  // surface for tests.
  std::string dump() const;

 private:
  ArchitectureSpec spec_;
  std::vector<NodeBlock> nodes_;
  std::vector<Head> heads_;
  std::vector<std::unique_ptr<Parameter>> storage_;
};

// Shared by the full graph and pruned submodels. Blocks must appear in
// dependency order; sources are resolved against the blocks present in the
// list, so a well-formed sublist evaluates exactly as it would inside the
// full graph.
std::vector<Tape32::Id> run_node_blocks(Tape32& tape, Tape32::Id input,
                                        const ArchitectureSpec& spec,
                                        const std::vector<NodeBlock>& blocks);
Tape32::Id apply_head(Tape32& tape, const Head& head, Tape32::Id node_output);

std::int64_t conv_param_count(const std::vector<NodeBlock>& blocks,
                              const std::vector<Head>& heads);
std::int64_t conv_flop_count(const ArchitectureSpec& spec, const std::vector<NodeBlock>& blocks,
                             const std::vector<Head>& heads);

void check_forward_input(const ArchitectureSpec& spec, const Tensor& input);

}  // namespace nestseg
