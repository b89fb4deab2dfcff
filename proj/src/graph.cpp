#include "nestseg/graph.hpp"

#include <cmath>
#include <map>

#include "nestseg/rng.hpp"
#include "nestseg/util.hpp"

namespace nestseg {

std::string transform_name(Transform t) {
  switch (t) {
    case Transform::direct: return "direct";
    case Transform::maxpool2: return "maxpool2";
    case Transform::upsample2: return "upsample2";
  }
  fail("unreachable transform");
}

namespace {

std::string node_name(NodeId id) {
  return "(" + std::to_string(id.i) + "," + std::to_string(id.j) + ")";
}

void check_node(const ArchitectureSpec& spec, NodeId id) {
  if (!node_exists(spec, id))
    fail("graph: node " + node_name(id) + " does not exist in a depth-" +
         std::to_string(spec.depth) + " " + variant_name(spec.variant));
}

}  // namespace

bool node_exists(const ArchitectureSpec& spec, NodeId id) {
  if (id.i < 0 || id.j < 0 || id.i + id.j > spec.depth - 1) return false;
  if (spec.variant == Variant::unetpp) return true;
  return id.j == 0 || id.i + id.j == spec.depth - 1;
}

std::vector<NodeSource> node_inputs(const ArchitectureSpec& spec, NodeId id) {
  check_node(spec, id);
  std::vector<NodeSource> in;
  if (id.j == 0) {
    if (id.i == 0) {
      in.push_back({true, {}, Transform::direct});
    } else {
      in.push_back({false, {id.i - 1, 0}, Transform::maxpool2});
    }
    return in;
  }
  if (spec.variant == Variant::unetpp) {
    for (int k = 0; k < id.j; ++k) in.push_back({false, {id.i, k}, Transform::direct});
  } else {
    in.push_back({false, {id.i, 0}, Transform::direct});
  }
  in.push_back({false, {id.i + 1, id.j - 1}, Transform::upsample2});
  return in;
}

int node_in_channels(const ArchitectureSpec& spec, NodeId id) {
  int channels = 0;
  for (const NodeSource& s : node_inputs(spec, id))
    channels += s.from_input ? spec.input_channels : spec.widths[s.node.i];
  return channels;
}

ForwardMode ForwardMode::parse(const std::string& text) {
  if (text == "accurate") return accurate_mode();
  if (text.rfind("fast:", 0) == 0)
    return fast(static_cast<int>(parse_long(text.substr(5), "fast level")));
  fail("mode '" + text + "' is neither 'accurate' nor 'fast:<level>'");
}

std::string ForwardMode::to_string() const {
  return accurate ? "accurate" : "fast:" + std::to_string(fast_level);
}

ModelGraph ModelGraph::build(const ArchitectureSpec& spec) {
  spec.validate();
  ModelGraph g;
  g.spec_ = spec;

  auto make_param = [&](const std::string& name, std::vector<std::int64_t> shape) {
    g.storage_.push_back(std::make_unique<Parameter>(name, Tensor(std::move(shape))));
    return g.storage_.back().get();
  };

  // Pathway-major, level-ascending order: every input of a node lies at a
  // smaller pathway position, or at the same position and a smaller level.
  for (int j = 0; j < spec.depth; ++j) {
    for (int i = 0; i + j < spec.depth; ++i) {
      const NodeId id{i, j};
      if (!node_exists(spec, id)) continue;
      NodeBlock block;
      block.id = id;
      int cin = node_in_channels(spec, id);
      const int cout = spec.widths[i];
      for (int c = 0; c < spec.convs_per_node; ++c) {
        const std::string prefix =
            "node." + std::to_string(i) + "." + std::to_string(j) + ".conv." + std::to_string(c);
        ConvLayer layer;
        layer.weight = make_param(prefix + ".weight", {cout, cin, 3, 3});
        layer.bias = make_param(prefix + ".bias", {cout});
        block.convs.push_back(layer);
        cin = cout;
      }
      g.nodes_.push_back(std::move(block));
    }
  }

  auto make_head = [&](int j) {
    Head head;
    head.j = j;
    const std::string prefix = "head." + std::to_string(j) + ".conv";
    head.conv.weight = make_param(prefix + ".weight", {1, spec.widths[0], 1, 1});
    head.conv.bias = make_param(prefix + ".bias", {1});
    g.heads_.push_back(head);
  };
  if (spec.deep_supervision) {
    for (int j = 1; j < spec.depth; ++j) make_head(j);
  } else {
    make_head(spec.depth - 1);
  }
  return g;
}

std::vector<Edge> ModelGraph::edges() const {
  std::vector<Edge> out;
  for (const NodeBlock& block : nodes_)
    for (const NodeSource& s : node_inputs(spec_, block.id)) out.push_back({s, block.id});
  return out;
}

std::vector<Parameter*> ModelGraph::parameters() const {
  std::vector<Parameter*> out;
  out.reserve(storage_.size());
  for (const auto& p : storage_) out.push_back(p.get());
  return out;
}

Parameter* ModelGraph::find_parameter(const std::string& name) const {
  for (const auto& p : storage_)
    if (p->name == name) return p.get();
  return nullptr;
}

void ModelGraph::initialize_parameters(std::uint64_t seed) {
  Rng rng(seed);
  for (Parameter* p : parameters()) {
    if (p->value.rank() == 4) {
      const double fan_in =
          static_cast<double>(p->value.dim(1) * p->value.dim(2) * p->value.dim(3));
      const float bound = static_cast<float>(std::sqrt(6.0 / fan_in));
      rng.fill_uniform(p->value, -bound, bound);
    } else {
      std::fill(p->value.data(), p->value.data() + p->value.numel(), 0.0f);
    }
    p->zero_grad();
  }
}

void ModelGraph::zero_grads() const {
  for (Parameter* p : parameters()) p->zero_grad();
}

std::int64_t conv_param_count(const std::vector<NodeBlock>& blocks,
                              const std::vector<Head>& heads) {
  std::int64_t count = 0;
  for (const NodeBlock& b : blocks)
    for (const ConvLayer& c : b.convs) count += c.weight->value.numel() + c.bias->value.numel();
  for (const Head& h : heads) count += h.conv.weight->value.numel() + h.conv.bias->value.numel();
  return count;
}

std::int64_t conv_flop_count(const ArchitectureSpec& spec, const std::vector<NodeBlock>& blocks,
                             const std::vector<Head>& heads) {
  std::int64_t flops = 0;
  for (const NodeBlock& b : blocks) {
    const std::int64_t hw =
        static_cast<std::int64_t>(spec.input_h >> b.id.i) * (spec.input_w >> b.id.i);
    for (const ConvLayer& c : b.convs) {
      const auto& w = c.weight->value;
      flops += 2 * w.dim(0) * w.dim(1) * w.dim(2) * w.dim(3) * hw;
    }
  }
  const std::int64_t hw = static_cast<std::int64_t>(spec.input_h) * spec.input_w;
  for (const Head& h : heads) flops += 2 * h.conv.weight->value.dim(1) * hw;
  return flops;
}

std::int64_t ModelGraph::param_count() const { return conv_param_count(nodes_, heads_); }

std::int64_t ModelGraph::flop_count() const { return conv_flop_count(spec_, nodes_, heads_); }

std::vector<Tape32::Id> run_node_blocks(Tape32& tape, Tape32::Id input,
                                        const ArchitectureSpec& spec,
                                        const std::vector<NodeBlock>& blocks) {
  std::map<NodeId, Tape32::Id> computed;
  std::vector<Tape32::Id> out;
  out.reserve(blocks.size());
  for (const NodeBlock& block : blocks) {
    std::vector<Tape32::Id> ins;
    for (const NodeSource& s : node_inputs(spec, block.id)) {
      Tape32::Id src = input;
      if (!s.from_input) {
        auto it = computed.find(s.node);
        if (it == computed.end())
          fail("graph: node " + node_name(block.id) + " reads " + node_name(s.node) +
               ", which is not in the evaluated block list");
        src = it->second;
      }
      switch (s.transform) {
        case Transform::direct: break;
        case Transform::maxpool2: src = tape.maxpool2(src); break;
        case Transform::upsample2: src = tape.upsample2(src); break;
      }
      ins.push_back(src);
    }
    Tape32::Id cur = ins.size() == 1 ? ins[0] : tape.concat_channels(ins);
    for (const ConvLayer& layer : block.convs) {
      cur = tape.conv2d(cur, tape.leaf_param(layer.weight), tape.leaf_param(layer.bias));
      cur = tape.relu(cur);
    }
    computed.emplace(block.id, cur);
    out.push_back(cur);
  }
  return out;
}

Tape32::Id apply_head(Tape32& tape, const Head& head, Tape32::Id node_output) {
  Tape32::Id logits = tape.conv2d(node_output, tape.leaf_param(head.conv.weight),
                                  tape.leaf_param(head.conv.bias));
  return tape.sigmoid(logits);
}

void check_forward_input(const ArchitectureSpec& spec, const Tensor& input) {
  if (input.rank() != 4)
    fail("forward: expected a [B,C,H,W] input, got " + input.shape_str());
  if (input.dim(1) != spec.input_channels || input.dim(2) != spec.input_h ||
      input.dim(3) != spec.input_w)
    fail("forward: input " + input.shape_str() + " does not match the architecture's [B," +
         std::to_string(spec.input_channels) + "," + std::to_string(spec.input_h) + "," +
         std::to_string(spec.input_w) + "]");
}

std::vector<Tape32::Id> ModelGraph::forward_heads(Tape32& tape, Tape32::Id input) const {
  std::vector<Tape32::Id> node_out = run_node_blocks(tape, input, spec_, nodes_);
  std::map<NodeId, Tape32::Id> by_id;
  for (std::size_t k = 0; k < nodes_.size(); ++k) by_id.emplace(nodes_[k].id, node_out[k]);
  std::vector<Tape32::Id> out;
  out.reserve(heads_.size());
  for (const Head& head : heads_) out.push_back(apply_head(tape, head, by_id.at({0, head.j})));
  return out;
}

Tensor ModelGraph::forward(const Tensor& input, const ForwardMode& mode) const {
  check_forward_input(spec_, input);
  Tape32 tape(false);
  const std::vector<Tape32::Id> head_ids = forward_heads(tape, tape.leaf(input));
  if (mode.accurate) {
    std::vector<const Tensor*> outs;
    outs.reserve(head_ids.size());
    for (Tape32::Id id : head_ids) outs.push_back(&tape.val(id));
    return ops::mean_of(outs);
  }
  for (std::size_t k = 0; k < heads_.size(); ++k)
    if (heads_[k].j == mode.fast_level) return tape.val(head_ids[k]);
  std::string have;
  for (const Head& h : heads_) have += (have.empty() ? "" : ",") + std::to_string(h.j);
  fail("forward: no head at level " + std::to_string(mode.fast_level) + " (heads: " + have + ")");
}

std::string ModelGraph::dump() const {
  std::string out = "# nestseg-graph v1\n";
  out += spec_.canonical_text();
  out += "nodes = " + std::to_string(nodes_.size()) + "\n";
  for (const NodeBlock& b : nodes_)
    out += "node " + node_name(b.id) + " in=" + std::to_string(node_in_channels(spec_, b.id)) +
           " out=" + std::to_string(spec_.widths[b.id.i]) +
           " convs=" + std::to_string(b.convs.size()) + "\n";
  for (const Edge& e : edges()) {
    out += "edge ";
    out += e.src.from_input ? "input" : node_name(e.src.node);
    out += " -> " + node_name(e.dst) + " " + transform_name(e.src.transform) + "\n";
  }
  for (const Head& h : heads_) out += "head (0," + std::to_string(h.j) + ") 1x1+sigmoid\n";
  out += "params = " + std::to_string(param_count()) + "\n";
  out += "flops = " + std::to_string(flop_count()) + "\n";
  return out;
}

}  // namespace nestseg
