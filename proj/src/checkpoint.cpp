#include "nestseg/checkpoint.hpp"

#include <cstring>

#include "nestseg/util.hpp"

namespace nestseg {

namespace {

constexpr char kMagic[4] = {'U', 'N', 'P', 'P'};

template <typename T>
void append_raw(std::string& buf, T v) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  buf.append(bytes, sizeof(T));
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;
  const std::string& path;

  void need(std::size_t n) const {
    if (pos + n > buf.size()) fail("checkpoint " + path + ": truncated file");
  }
  template <typename T>
  T take() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  }
  std::string take_bytes(std::size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

const Checkpoint::Record* Checkpoint::find(const std::string& name) const {
  for (const Record& r : records)
    if (r.name == name) return &r;
  return nullptr;
}

Checkpoint snapshot(const ModelGraph& graph, const AdamState* state, std::uint32_t epoch,
                    double best_val_iou) {
  Checkpoint ckpt;
  ckpt.fingerprint = graph.spec().fingerprint();
  ckpt.epoch = epoch;
  ckpt.best_val_iou = best_val_iou;

  const std::vector<Parameter*> params = graph.parameters();
  for (const Parameter* p : params) ckpt.records.push_back({p->name, p->value});
  if (state && state->initialized()) {
    if (state->slots.size() != params.size())
      fail("checkpoint: optimizer state does not match the graph's parameter list");
    ckpt.adam_step = state->step;
    for (std::size_t k = 0; k < params.size(); ++k) {
      ckpt.records.push_back({"adam.m." + params[k]->name, state->slots[k].m});
      ckpt.records.push_back({"adam.v." + params[k]->name, state->slots[k].v});
    }
  }
  return ckpt;
}

void restore(const Checkpoint& ckpt, const ModelGraph& graph, AdamState* state) {
  if (ckpt.fingerprint != graph.spec().fingerprint())
    fail("checkpoint: architecture fingerprint " + std::to_string(ckpt.fingerprint) +
         " does not match the graph's " + std::to_string(graph.spec().fingerprint()));

  const std::vector<Parameter*> params = graph.parameters();
  for (Parameter* p : params) {
    const Checkpoint::Record* r = ckpt.find(p->name);
    if (!r) fail("checkpoint: missing parameter " + p->name);
    if (!r->value.same_shape(p->value))
      fail("checkpoint: " + p->name + " has shape " + r->value.shape_str() + ", graph expects " +
           p->value.shape_str());
    p->value = r->value;
    p->zero_grad();
  }
  if (!state) return;

  state->init(params);
  const bool has_moments = !params.empty() && ckpt.find("adam.m." + params[0]->name) != nullptr;
  if (!has_moments) return;
  state->step = ckpt.adam_step;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Checkpoint::Record* m = ckpt.find("adam.m." + params[k]->name);
    const Checkpoint::Record* v = ckpt.find("adam.v." + params[k]->name);
    if (!m || !v) fail("checkpoint: incomplete optimizer moments for " + params[k]->name);
    if (!m->value.same_shape(params[k]->value) || !v->value.same_shape(params[k]->value))
      fail("checkpoint: moment shape mismatch for " + params[k]->name);
    state->slots[k].m = m->value;
    state->slots[k].v = v->value;
  }
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::string buf;
  buf.append(kMagic, sizeof(kMagic));
  append_raw<std::uint32_t>(buf, ckpt.version);
  append_raw<std::uint64_t>(buf, ckpt.fingerprint);
  append_raw<std::uint32_t>(buf, ckpt.epoch);
  append_raw<double>(buf, ckpt.best_val_iou);
  append_raw<std::uint64_t>(buf, static_cast<std::uint64_t>(ckpt.adam_step));
  append_raw<std::uint32_t>(buf, static_cast<std::uint32_t>(ckpt.records.size()));
  for (const Checkpoint::Record& r : ckpt.records) {
    append_raw<std::uint32_t>(buf, static_cast<std::uint32_t>(r.name.size()));
    buf.append(r.name);
    append_raw<std::uint32_t>(buf, static_cast<std::uint32_t>(r.value.rank()));
    for (std::size_t d = 0; d < r.value.rank(); ++d)
      append_raw<std::uint64_t>(buf, static_cast<std::uint64_t>(r.value.dim(d)));
    buf.append(reinterpret_cast<const char*>(r.value.data()),
               static_cast<std::size_t>(r.value.numel()) * sizeof(float));
  }
  write_text_file(path, buf);
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::string buf = read_text_file(path);
  Reader in{buf, 0, path};

  const std::string magic = in.take_bytes(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0)
    fail("checkpoint " + path + ": bad magic bytes");
  Checkpoint ckpt;
  ckpt.version = in.take<std::uint32_t>();
  if (ckpt.version != 1)
    fail("checkpoint " + path + ": unsupported version " + std::to_string(ckpt.version));
  ckpt.fingerprint = in.take<std::uint64_t>();
  ckpt.epoch = in.take<std::uint32_t>();
  ckpt.best_val_iou = in.take<double>();
  ckpt.adam_step = static_cast<std::int64_t>(in.take<std::uint64_t>());

  const std::uint32_t count = in.take<std::uint32_t>();
  ckpt.records.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    Checkpoint::Record r;
    const std::uint32_t name_len = in.take<std::uint32_t>();
    r.name = in.take_bytes(name_len);
    const std::uint32_t ndim = in.take<std::uint32_t>();
    if (ndim == 0 || ndim > 8) fail("checkpoint " + path + ": implausible rank for " + r.name);
    std::vector<std::int64_t> shape;
    std::int64_t numel = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      shape.push_back(static_cast<std::int64_t>(in.take<std::uint64_t>()));
      numel *= shape.back();
    }
    std::vector<float> data(static_cast<std::size_t>(numel));
    in.need(data.size() * sizeof(float));
    std::memcpy(data.data(), buf.data() + in.pos, data.size() * sizeof(float));
    in.pos += data.size() * sizeof(float);
    r.value = Tensor(std::move(shape), std::move(data));
    ckpt.records.push_back(std::move(r));
  }
  if (in.pos != buf.size()) fail("checkpoint " + path + ": trailing bytes after records");
  return ckpt;
}

}  // namespace nestseg
