#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "nestseg/arch.hpp"
#include "nestseg/checkpoint.hpp"
#include "nestseg/dataset.hpp"
#include "nestseg/gradcheck.hpp"
#include "nestseg/graph.hpp"
#include "nestseg/pruning.hpp"
#include "nestseg/synthetic.hpp"
#include "nestseg/trainer.hpp"
#include "nestseg/util.hpp"

namespace {

using namespace nestseg;

void ensure_out_dir(const std::string& out) {
  std::filesystem::create_directories(out);
  if (!std::filesystem::is_directory(out)) fail("cannot create output directory " + out);
}

int cmd_gen_data(const std::string& out, const SyntheticConfig& config) {
  ensure_out_dir(out);
  const DatasetManifest manifest = generate_synthetic(config, out);
  save_manifest(manifest, out + "/manifest.tsv");
  write_text_file(out + "/gen-data.config", config.canonical_text());
  int n_train = 0, n_val = 0, n_test = 0;
  split_counts(config.count, &n_train, &n_val, &n_test);
  std::printf("wrote %d samples to %s (train %d, val %d, test %d)\n", config.count, out.c_str(),
              n_train, n_val, n_test);
  return 0;
}

int cmd_train(const std::string& arch, const std::string& data, const std::string& out,
              const TrainConfig& config, bool timing) {
  ensure_out_dir(out);
  const ArchitectureSpec spec = load_arch_spec(arch);
  const Dataset dataset = Dataset::load(load_manifest(data));

  ModelGraph graph = ModelGraph::build(spec);
  graph.initialize_parameters(config.seed);
  const TrainResult result = train(graph, dataset, config, LossConfig{}, timing);

  save_arch_spec(spec, out + "/arch.txt");
  save_train_config(config, out + "/train.config");
  write_text_file(out + "/metrics.csv", metrics_csv(result.history));
  save_checkpoint(result.best, out + "/best.ckpt");

  if (result.diverged)
    std::printf("training diverged; rolled back to epoch %d\n", result.best_epoch);
  std::printf("trained %s for %d epoch(s); best val IoU %.4f at epoch %d\n",
              variant_name(spec.variant).c_str(), result.epochs_run, result.best_val_iou,
              result.best_epoch);
  std::printf("wrote %s/metrics.csv and %s/best.ckpt\n", out.c_str(), out.c_str());
  return result.diverged ? 1 : 0;
}

int cmd_eval(const std::string& arch, const std::string& ckpt_path, const std::string& data,
             const std::string& split, const std::string& mode_text, int batch_size,
             const std::string& out, bool timing) {
  const ArchitectureSpec spec = load_arch_spec(arch);
  const ForwardMode mode = ForwardMode::parse(mode_text);
  const Dataset dataset = Dataset::load(load_manifest(data));
  const std::vector<SegmentationSample>& samples = dataset.split(parse_split(split));

  ModelGraph graph = ModelGraph::build(spec);
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  restore(ckpt, graph, nullptr);

  const EvalResult r = evaluate(graph, samples, mode, batch_size, timing);
  std::vector<MetricsRow> rows{{static_cast<int>(ckpt.epoch), split, r.loss, r.iou, r.dice,
                                r.seconds_per_image * r.images}};
  const std::string csv = metrics_csv(rows);
  std::printf("%s", csv.c_str());
  std::printf("# mode=%s images=%d flops_per_image=%lld\n", mode.to_string().c_str(), r.images,
              static_cast<long long>(graph.flop_count()));
  if (!out.empty()) {
    ensure_out_dir(out);
    write_text_file(out + "/eval.csv", csv);
  }
  return 0;
}

int cmd_params(const std::string& arch, const std::string& out) {
  std::vector<ArchitectureSpec> specs;
  if (arch.empty()) {
    for (const char* name : {"unet", "wide_unet", "unetpp"}) specs.push_back(arch_preset(name));
  } else {
    specs.push_back(load_arch_spec(arch));
  }
  std::string csv = "arch,params,flops\n";
  for (const ArchitectureSpec& spec : specs) {
    const ModelGraph graph = ModelGraph::build(spec);
    csv += variant_name(spec.variant) + "," + std::to_string(graph.param_count()) + "," +
           std::to_string(graph.flop_count()) + "\n";
  }
  std::printf("%s", csv.c_str());
  if (!out.empty()) {
    ensure_out_dir(out);
    write_text_file(out + "/params.csv", csv);
  }
  return 0;
}

int cmd_prune_report(const std::string& arch, const std::string& ckpt_path,
                     const std::string& data, const std::string& split, int batch_size,
                     int warmup, const std::string& out, bool timing) {
  const ArchitectureSpec spec = load_arch_spec(arch);
  const Dataset dataset = Dataset::load(load_manifest(data));
  const std::vector<SegmentationSample>& samples = dataset.split(parse_split(split));

  ModelGraph graph = ModelGraph::build(spec);
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  restore(ckpt, graph, nullptr);

  const std::vector<PruneReportRow> rows = pruning_report(graph, samples, batch_size, timing,
                                                          warmup);
  const std::string csv = prune_report_csv(rows);
  std::printf("%s", csv.c_str());
  if (!out.empty()) {
    ensure_out_dir(out);
    write_text_file(out + "/prune_report.csv", csv);
  }
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, int instances, double eps, double tol,
                  const std::string& filter) {
  const std::vector<BatteryEntry> entries = gradcheck_battery(seed, instances, eps, tol, filter);
  if (entries.empty()) fail("gradcheck: no checks match filter '" + filter + "'");
  bool all_pass = true;
  for (const BatteryEntry& e : entries) {
    std::printf("%-20s %s  max_rel_err=%.3e  instances=%d%s%s\n", e.name.c_str(),
                e.report.pass ? "PASS" : "FAIL", e.report.max_rel_err, e.instances,
                e.report.message.empty() ? "" : "  ", e.report.message.c_str());
    all_pass = all_pass && e.report.pass;
  }
  std::printf("%s\n", all_pass ? "all gradient checks passed" : "gradient checks FAILED");
  return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nestseg: build, train, prune, and evaluate nested segmentation networks"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic blob dataset");
  SyntheticConfig gen_config;
  std::string gen_out;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--seed", gen_config.seed, "generator seed");
  gen->add_option("--count", gen_config.count, "number of samples");
  gen->add_option("--size", gen_config.image_size, "square image size in pixels");
  gen->add_option("--min-blobs", gen_config.min_blobs, "minimum ellipses per image");
  gen->add_option("--max-blobs", gen_config.max_blobs, "maximum ellipses per image");
  gen->add_option("--noise", gen_config.noise_level, "Gaussian noise level");

  // train
  auto* tr = app.add_subcommand("train", "train a model and write metrics + checkpoint");
  std::string tr_arch, tr_data, tr_out, tr_config_path;
  bool tr_timing = false;
  double tr_lr = -1;
  std::int64_t tr_batch = -1, tr_epochs = -1, tr_patience = -1, tr_seed = -1;
  tr->add_option("--arch", tr_arch, "preset (unet|wide_unet|unetpp) or spec file")->required();
  tr->add_option("--data", tr_data, "dataset manifest path")->required();
  tr->add_option("--out", tr_out, "output directory")->required();
  tr->add_option("--config", tr_config_path, "training config file");
  tr->add_option("--seed", tr_seed, "experiment seed (overrides config)");
  tr->add_option("--lr", tr_lr, "learning rate (overrides config)");
  tr->add_option("--batch-size", tr_batch, "batch size (overrides config)");
  tr->add_option("--max-epochs", tr_epochs, "epoch budget (overrides config)");
  tr->add_option("--patience", tr_patience, "early-stop patience (overrides config)");
  tr->add_flag("--timing", tr_timing, "record wall time in the metrics (breaks byte-identical reruns)");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on one split");
  std::string ev_arch, ev_ckpt, ev_data, ev_split = "test", ev_mode = "accurate", ev_out;
  int ev_batch = 4;
  bool ev_timing = false;
  ev->add_option("--arch", ev_arch, "preset or spec file")->required();
  ev->add_option("--ckpt", ev_ckpt, "checkpoint path")->required();
  ev->add_option("--data", ev_data, "dataset manifest path")->required();
  ev->add_option("--split", ev_split, "train|val|test");
  ev->add_option("--mode", ev_mode, "accurate or fast:<level>");
  ev->add_option("--batch-size", ev_batch, "evaluation batch size");
  ev->add_option("--out", ev_out, "directory for eval.csv (optional)");
  ev->add_flag("--timing", ev_timing, "measure forward wall time");

  // params
  auto* pa = app.add_subcommand("params", "parameter and FLOP counts per architecture");
  std::string pa_arch, pa_out;
  pa->add_option("--arch", pa_arch, "preset or spec file (default: all three presets)");
  pa->add_option("--out", pa_out, "directory for params.csv (optional)");

  // prune-report
  auto* pr = app.add_subcommand("prune-report", "per-level cost/accuracy table of a trained model");
  std::string pr_arch, pr_ckpt, pr_data, pr_split = "test", pr_out;
  int pr_batch = 4, pr_warmup = 10;
  bool pr_timing = false;
  pr->add_option("--arch", pr_arch, "preset or spec file")->required();
  pr->add_option("--ckpt", pr_ckpt, "checkpoint path")->required();
  pr->add_option("--data", pr_data, "dataset manifest path")->required();
  pr->add_option("--split", pr_split, "train|val|test");
  pr->add_option("--batch-size", pr_batch, "evaluation batch size");
  pr->add_option("--warmup", pr_warmup, "warm-up passes before timing");
  pr->add_option("--out", pr_out, "directory for prune_report.csv (optional)");
  pr->add_flag("--timing", pr_timing, "measure forward wall time per image");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference checks of every primitive");
  std::uint64_t gc_seed = 0;
  int gc_instances = 10;
  double gc_eps = 1e-4, gc_tol = 1e-4;
  std::string gc_filter;
  gc->add_option("--seed", gc_seed, "random seed");
  gc->add_option("--instances", gc_instances, "random instances per check");
  gc->add_option("--eps", gc_eps, "finite-difference step");
  gc->add_option("--tol", gc_tol, "relative-error tolerance");
  gc->add_option("--op", gc_filter, "run only checks whose name contains this substring");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(gen_out, gen_config);
    if (tr->parsed()) {
      TrainConfig config =
          tr_config_path.empty() ? TrainConfig{} : load_train_config(tr_config_path);
      if (tr_seed >= 0) config.seed = static_cast<std::uint64_t>(tr_seed);
      if (tr_lr > 0) config.learning_rate = tr_lr;
      if (tr_batch > 0) config.batch_size = static_cast<int>(tr_batch);
      if (tr_epochs > 0) config.max_epochs = static_cast<int>(tr_epochs);
      if (tr_patience > 0) config.early_stop_patience = static_cast<int>(tr_patience);
      config.validate();
      return cmd_train(tr_arch, tr_data, tr_out, config, tr_timing);
    }
    if (ev->parsed())
      return cmd_eval(ev_arch, ev_ckpt, ev_data, ev_split, ev_mode, ev_batch, ev_out, ev_timing);
    if (pa->parsed()) return cmd_params(pa_arch, pa_out);
    if (pr->parsed())
      return cmd_prune_report(pr_arch, pr_ckpt, pr_data, pr_split, pr_batch, pr_warmup, pr_out,
                              pr_timing);
    if (gc->parsed()) return cmd_gradcheck(gc_seed, gc_instances, gc_eps, gc_tol, gc_filter);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
