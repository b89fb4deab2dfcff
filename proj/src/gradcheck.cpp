#include "nestseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "nestseg/loss.hpp"
#include "nestseg/rng.hpp"

namespace nestseg {

namespace {

double eval_at(const ScalarFn& f, const Tensor64& point) {
  Tape64 tape(false);
  Tape64::Id root = f(tape, tape.leaf(point));
  const Tensor64& v = tape.val(root);
  if (v.numel() != 1) fail("gradcheck: function under test is not scalar, got " + v.shape_str());
  return v[0];
}

}  // namespace

GradCheckReport gradcheck(const ScalarFn& f, const Tensor64& point, double eps, double tol) {
  GradCheckReport report;

  Tensor64 x = point;
  x.requires_grad = true;
  Tape64 tape;
  Tape64::Id leaf = tape.leaf(x);
  Tape64::Id root = f(tape, leaf);
  if (tape.val(root).numel() != 1) {
    report.message = "function under test is not scalar: " + tape.val(root).shape_str();
    return report;
  }
  tape.backward(root);
  Tensor64 analytic = tape.grad_of(leaf);

  Tensor64 probe = point;
  for (std::int64_t idx = 0; idx < point.numel(); ++idx) {
    const double saved = probe[idx];
    probe[idx] = saved + eps;
    const double f_plus = eval_at(f, probe);
    probe[idx] = saved - eps;
    const double f_minus = eval_at(f, probe);
    probe[idx] = saved;

    const double numeric = (f_plus - f_minus) / (2.0 * eps);
    const double a = analytic[idx];
    if (!std::isfinite(numeric) || !std::isfinite(a)) {
      report.message = "non-finite gradient at coordinate " + std::to_string(idx) +
                       " (analytic " + std::to_string(a) + ", numeric " + std::to_string(numeric) +
                       ")";
      report.worst_index = idx;
      report.max_rel_err = std::numeric_limits<double>::infinity();
      return report;
    }
    const double rel = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
    if (rel > report.max_rel_err) {
      report.max_rel_err = rel;
      report.worst_index = idx;
    }
  }

  report.pass = report.max_rel_err <= tol;
  return report;
}

namespace {

Tensor64 random_tensor(Rng& rng, std::vector<std::int64_t> shape, double lo = -1.0,
                       double hi = 1.0) {
  Tensor64 t(std::move(shape));
  rng.fill_uniform(t, lo, hi);
  return t;
}

// keeps every coordinate at least `margin` away from zero so one eps
// perturbation cannot cross the relu kink
Tensor64 kink_safe(Tensor64 t, double margin = 0.01) {
  for (std::int64_t i = 0; i < t.numel(); ++i)
    if (std::abs(t[i]) < margin) t[i] += t[i] < 0 ? -margin : margin;
  return t;
}

// widens any 2x2 pooling window whose top two values nearly tie; an eps
// perturbation must not be able to change which element wins. Each element
// belongs to exactly one stride-2 window, so raising one maximum cannot
// disturb a neighboring window.
Tensor64 tie_safe(Tensor64 t, double margin = 0.05) {
  const std::int64_t planes = t.dim(0) * t.dim(1), h = t.dim(2), w = t.dim(3);
  for (std::int64_t pl = 0; pl < planes; ++pl)
    for (std::int64_t y = 0; y < h; y += 2)
      for (std::int64_t x = 0; x < w; x += 2) {
        std::int64_t base = (pl * h + y) * w + x;
        const std::int64_t idx[4] = {base, base + 1, base + w, base + w + 1};
        std::int64_t best = idx[0];
        for (std::int64_t i : idx)
          if (t[i] > t[best]) best = i;
        double second = -std::numeric_limits<double>::infinity();
        for (std::int64_t i : idx)
          if (i != best) second = std::max(second, t[i]);
        if (t[best] - second < margin) t[best] += 2 * margin;
      }
  return t;
}

Tensor64 random_binary(Rng& rng, std::vector<std::int64_t> shape) {
  Tensor64 t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;
  return t;
}

// sum(z * r): a fixed random weighting makes uniform-gradient mistakes (for
// example a dropped transpose) visible where plain sum(z) would hide them.
Tape64::Id weighted_probe(Tape64& tape, Tape64::Id z, const Tensor64& r) {
  return tape.sum(tape.mul(z, tape.leaf(r)));
}

struct Instance {
  Tensor64 point;
  ScalarFn fn;
};

using InstanceGen = std::function<Instance(Rng&)>;

}  // namespace

std::vector<BatteryEntry> gradcheck_battery(std::uint64_t seed, int instances, double eps,
                                            double tol, const std::string& filter) {
  std::vector<std::pair<std::string, InstanceGen>> checks;

  checks.emplace_back("conv2d/input", [](Rng& rng) {
    Tensor64 w = random_tensor(rng, {4, 3, 3, 3});
    Tensor64 b = random_tensor(rng, {4});
    Tensor64 r = random_tensor(rng, {2, 4, 8, 8});
    Instance inst;
    inst.point = random_tensor(rng, {2, 3, 8, 8});
    inst.fn = [w, b, r](Tape64& t, Tape64::Id x) {
      return weighted_probe(t, t.conv2d(x, t.leaf(w), t.leaf(b)), r);
    };
    return inst;
  });
  checks.emplace_back("conv2d/weight", [](Rng& rng) {
    Tensor64 x = random_tensor(rng, {2, 3, 8, 8});
    Tensor64 b = random_tensor(rng, {4});
    Tensor64 r = random_tensor(rng, {2, 4, 8, 8});
    Instance inst;
    inst.point = random_tensor(rng, {4, 3, 3, 3});
    inst.fn = [x, b, r](Tape64& t, Tape64::Id w) {
      return weighted_probe(t, t.conv2d(t.leaf(x), w, t.leaf(b)), r);
    };
    return inst;
  });
  checks.emplace_back("conv2d/bias", [](Rng& rng) {
    Tensor64 x = random_tensor(rng, {2, 3, 8, 8});
    Tensor64 w = random_tensor(rng, {4, 3, 3, 3});
    Tensor64 r = random_tensor(rng, {2, 4, 8, 8});
    Instance inst;
    inst.point = random_tensor(rng, {4});
    inst.fn = [x, w, r](Tape64& t, Tape64::Id b) {
      return weighted_probe(t, t.conv2d(t.leaf(x), t.leaf(w), b), r);
    };
    return inst;
  });
  checks.emplace_back("maxpool2", [](Rng& rng) {
    Tensor64 r = random_tensor(rng, {2, 3, 4, 4});
    Instance inst;
    inst.point = tie_safe(random_tensor(rng, {2, 3, 8, 8}, -10.0, 10.0));
    inst.fn = [r](Tape64& t, Tape64::Id x) { return weighted_probe(t, t.maxpool2(x), r); };
    return inst;
  });
  checks.emplace_back("upsample2", [](Rng& rng) {
    Tensor64 r = random_tensor(rng, {2, 3, 12, 12});
    Instance inst;
    inst.point = random_tensor(rng, {2, 3, 6, 6});
    inst.fn = [r](Tape64& t, Tape64::Id x) { return weighted_probe(t, t.upsample2(x), r); };
    return inst;
  });
  checks.emplace_back("concat_channels", [](Rng& rng) {
    Tensor64 other = random_tensor(rng, {2, 3, 6, 6});
    Tensor64 r = random_tensor(rng, {2, 5, 6, 6});
    Instance inst;
    inst.point = random_tensor(rng, {2, 2, 6, 6});
    inst.fn = [other, r](Tape64& t, Tape64::Id x) {
      return weighted_probe(t, t.concat_channels({x, t.leaf(other)}), r);
    };
    return inst;
  });
  checks.emplace_back("relu", [](Rng& rng) {
    Tensor64 r = random_tensor(rng, {2, 3, 8, 8});
    Instance inst;
    inst.point = kink_safe(random_tensor(rng, {2, 3, 8, 8}));
    inst.fn = [r](Tape64& t, Tape64::Id x) { return weighted_probe(t, t.relu(x), r); };
    return inst;
  });
  checks.emplace_back("sigmoid", [](Rng& rng) {
    Tensor64 r = random_tensor(rng, {2, 3, 8, 8});
    Instance inst;
    inst.point = random_tensor(rng, {2, 3, 8, 8}, -4.0, 4.0);
    inst.fn = [r](Tape64& t, Tape64::Id x) { return weighted_probe(t, t.sigmoid(x), r); };
    return inst;
  });
  checks.emplace_back("add", [](Rng& rng) {
    Tensor64 other = random_tensor(rng, {3, 5});
    Tensor64 r = random_tensor(rng, {3, 5});
    Instance inst;
    inst.point = random_tensor(rng, {3, 5});
    inst.fn = [other, r](Tape64& t, Tape64::Id x) {
      return weighted_probe(t, t.add(x, t.leaf(other)), r);
    };
    return inst;
  });
  checks.emplace_back("mul", [](Rng& rng) {
    Tensor64 other = random_tensor(rng, {3, 5});
    Tensor64 r = random_tensor(rng, {3, 5});
    Instance inst;
    inst.point = random_tensor(rng, {3, 5});
    inst.fn = [other, r](Tape64& t, Tape64::Id x) {
      return weighted_probe(t, t.mul(x, t.leaf(other)), r);
    };
    return inst;
  });
  checks.emplace_back("scale", [](Rng& rng) {
    Tensor64 r = random_tensor(rng, {3, 5});
    Instance inst;
    inst.point = random_tensor(rng, {3, 5});
    inst.fn = [r](Tape64& t, Tape64::Id x) { return weighted_probe(t, t.scale(x, 1.7), r); };
    return inst;
  });
  checks.emplace_back("sum", [](Rng& rng) {
    Instance inst;
    inst.point = random_tensor(rng, {3, 5});
    inst.fn = [](Tape64& t, Tape64::Id x) { return t.sum(x); };
    return inst;
  });
  checks.emplace_back("conv2d+relu chain", [](Rng& rng) {
    Tensor64 w = random_tensor(rng, {4, 3, 3, 3});
    Tensor64 b = random_tensor(rng, {4});
    Instance inst;
    inst.point = random_tensor(rng, {2, 3, 8, 8});
    inst.fn = [w, b](Tape64& t, Tape64::Id x) {
      return t.sum(t.relu(t.conv2d(x, t.leaf(w), t.leaf(b))));
    };
    return inst;
  });
  checks.emplace_back("hybrid loss", [](Rng& rng) {
    Tensor64 target = random_binary(rng, {2, 1, 8, 8});
    Instance inst;
    inst.point = random_tensor(rng, {2, 1, 8, 8}, 0.05, 0.95);
    inst.fn = [target](Tape64& t, Tape64::Id pred) {
      return bce_dice_loss_node(t, pred, t.leaf(target));
    };
    return inst;
  });
  checks.emplace_back("deep supervision", [](Rng& rng) {
    Tensor64 target = random_binary(rng, {1, 1, 8, 8});
    Instance inst;
    inst.point = random_tensor(rng, {1, 1, 8, 8}, -2.0, 2.0);
    inst.fn = [target](Tape64& t, Tape64::Id logits) {
      const std::vector<Tape64::Id> heads = {t.sigmoid(logits), t.sigmoid(t.scale(logits, 0.5))};
      return deep_supervision_loss_node(t, heads, t.leaf(target), LossConfig{});
    };
    return inst;
  });

  std::vector<BatteryEntry> entries;
  for (const auto& [name, gen] : checks) {
    if (!filter.empty() && name.find(filter) == std::string::npos) continue;
    BatteryEntry entry;
    entry.name = name;
    entry.instances = instances;
    bool all_pass = true;
    Rng rng(seed ^ fnv1a64(name));
    for (int k = 0; k < instances; ++k) {
      Instance inst = gen(rng);
      GradCheckReport report = gradcheck(inst.fn, inst.point, eps, tol);
      all_pass = all_pass && report.pass;
      if (k == 0 || report.max_rel_err > entry.report.max_rel_err) entry.report = report;
    }
    entry.report.pass = all_pass;
    entries.push_back(std::move(entry));
  }
  return entries;
}

}  // namespace nestseg
