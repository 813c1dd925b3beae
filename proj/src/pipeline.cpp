#include "sakit/pipeline.hpp"

#include <cstdio>
#include <fstream>

#include "sakit/error.hpp"
#include "sakit/flops.hpp"
#include "sakit/layers.hpp"
#include "sakit/report.hpp"
#include "sakit/rf.hpp"

namespace sakit::pipeline {

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& p, const std::string& s) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream o(p, std::ios::binary);
  if (!o) throw IoError("cannot write '" + p.string() + "'");
  o << s;
}

void say(const Log& log, const std::string& s) {
  if (log) log(s);
}

}  // namespace

Splits load_data(const DataConfig& c) {
  Splits s;
  if (c.dataset == "synthetic") {
    s.train = data::synthetic_dataset(c.classes, c.train_per_class, c.size, c.seed, "train");
    s.val = data::synthetic_dataset(c.classes, c.val_per_class, c.size, c.seed ^ 0x76616cULL, "val");
  } else if (c.dataset == "cifar10" || c.dataset == "cifar100") {
    if (c.data_dir.empty()) throw Error("--data-dir is required for " + c.dataset);
    const auto v = data::parse_cifar_variant(c.dataset);
    s.train = data::load_cifar_split(c.data_dir, v, true);
    s.val = data::load_cifar_split(c.data_dir, v, false);
  } else if (c.dataset == "folder") {
    if (c.data_dir.empty()) throw Error("--data-dir is required for folder datasets");
    s.train = data::load_image_folder(c.data_dir / "train");
    s.val = data::load_image_folder(c.data_dir / "val");
  } else {
    throw Error("unknown dataset '" + c.dataset + "' (synthetic|cifar10|cifar100|folder)");
  }
  data::attach_stats(s.train);
  data::copy_stats(s.val, s.train);
  return s;
}

Variant parse_variant(const std::string& s) {
  if (s == "baseline") return Variant::baseline;
  if (s == "seed") return Variant::seed;
  if (s == "even") return Variant::even;
  if (s == "scalenet") return Variant::scalenet;
  throw Error("unknown variant '" + s + "' (baseline|seed|even|scalenet)");
}

net::Architecture base_arch(const ArchConfig& c) {
  auto a = net::preset(c.preset, c.classes);
  if (c.input) a.input = {a.input[0], *c.input, *c.input};
  return a;
}

std::vector<int> scales_of(const ArchConfig& c, const net::Architecture& base) {
  return c.scales.empty() ? net::default_scales(base) : c.scales;
}

net::Architecture make_arch(const ArchConfig& c, Variant v, const std::optional<net::AllocationPlan>& plan) {
  const auto base = base_arch(c);
  net::Architecture a;
  switch (v) {
    case Variant::baseline:
      return base;
    case Variant::seed:
      a = net::build_seed(base, scales_of(c, base));
      break;
    case Variant::even:
      a = net::build_scalenet(base, net::even_allocation(base, scales_of(c, base)));
      break;
    case Variant::scalenet:
      if (!plan) throw Error("the scalenet variant needs a plan");
      a = net::build_scalenet(base, *plan);
      break;
  }
  a.downsample = c.downsample;
  return a;
}

std::int64_t parameter_count(const NetworkSpec& spec) {
  std::int64_t n = 0;
  for (const auto& l : layers::compile(spec))
    for (const auto& p : l.params)
      if (p.trainable) n += static_cast<std::int64_t>(shape_size(p.shape));
  return n;
}

PipelineResult run_pipeline(const PipelineConfig& config, const Log& log) {
  PipelineResult res;
  const fs::path out = config.out_dir;
  fs::create_directories(out);
  const Splits data = load_data(config.data);
  ArchConfig ac = config.arch;
  if (!ac.classes) ac.classes = data.train.num_classes;
  if (!ac.input) ac.input = data.train.height();
  const auto base = base_arch(ac);
  const auto scales = scales_of(ac, base);
  const NetworkSpec base_spec = net::lower(base);
  res.base_gflops = flops::network_flops(base_spec).gflops();

  // stage 1: seed network
  const auto seed_arch = make_arch(ac, Variant::seed);
  const NetworkSpec seed_spec = net::lower(seed_arch);
  res.seed_gflops = flops::network_flops(seed_spec).gflops();
  write_text(out / "seed" / "spec.txt", seed_spec.to_text());
  Checkpoint seed_ckpt;
  if (config.resume && fs::exists(out / "seed" / "final.ckpt")) {
    seed_ckpt = load_checkpoint(out / "seed" / "final.ckpt");
    if (seed_ckpt.spec_text != seed_spec.to_text()) throw Error("seed/final.ckpt was trained for a different network");
    res.resumed.push_back("seed");
    say(log, "seed: reusing " + (out / "seed" / "final.ckpt").string());
  } else {
    say(log, "seed: training " + seed_arch.name + " (" + std::to_string(parameter_count(seed_spec)) + " params)");
    seed_ckpt = train::train(seed_spec, data.train, data.val, config.train, out / "seed",
                             [&](const train::EpochMetrics& m) {
                               char buf[160];
                               std::snprintf(buf, sizeof buf, "seed: epoch %d loss %.4f val top-1 %.3f", m.epoch,
                                             m.train_loss, m.val_top1);
                               say(log, buf);
                             })
                    .final_checkpoint;
  }
  res.seed_eval = train::evaluate(seed_ckpt, data.val);

  // stage 2: importance, budgets, projection
  const auto records = alloc::extract_importance(seed_ckpt, seed_spec);
  const auto budgets = flops::block_budgets(base_spec, scales);
  write_text(out / "importance.csv", alloc::importance_csv(records));
  write_text(out / "budgets.csv", alloc::budgets_csv(budgets));
  std::vector<std::int64_t> o;
  for (const auto& b : budgets) o.push_back(b.budget);
  auto proj = alloc::project_all(records, o, scales, config.projection);
  proj.plan.source = "seed/final.ckpt";  // relative, so plans compare across out dirs
  res.plan = proj.plan;
  res.blocks = proj.blocks;
  res.even = net::even_allocation(base, scales);
  net::save_plan((out / "plan.txt").string(), res.plan);
  net::save_plan((out / "even_plan.txt").string(), res.even);
  res.differs_from_even = res.plan.rows != res.even.rows;

  // stage 3: ScaleNet from the plan, retrained from scratch
  const auto final_arch = make_arch(ac, Variant::scalenet, res.plan);
  const NetworkSpec final_spec = net::lower(final_arch);
  const auto fr = flops::network_flops(final_spec);
  res.final_gflops = fr.gflops();
  res.budgets_ok = true;
  for (const auto& b : budgets)
    if (fr.block_cost(b.block_index) > b.budget) res.budgets_ok = false;
  write_text(out / "scalenet" / "spec.txt", final_spec.to_text());
  write_text(out / "scalenet" / "flops.csv", flops::report_csv(fr));
  Checkpoint final_ckpt;
  if (config.resume && fs::exists(out / "scalenet" / "final.ckpt") &&
      load_checkpoint(out / "scalenet" / "final.ckpt").spec_text == final_spec.to_text()) {
    final_ckpt = load_checkpoint(out / "scalenet" / "final.ckpt");
    res.resumed.push_back("scalenet");
    say(log, "scalenet: reusing " + (out / "scalenet" / "final.ckpt").string());
  } else {
    say(log, "scalenet: training " + final_arch.name + " (" + std::to_string(parameter_count(final_spec)) + " params)");
    final_ckpt = train::train(final_spec, data.train, data.val, config.train, out / "scalenet",
                              [&](const train::EpochMetrics& m) {
                                char buf[160];
                                std::snprintf(buf, sizeof buf, "scalenet: epoch %d loss %.4f val top-1 %.3f", m.epoch,
                                              m.train_loss, m.val_top1);
                                say(log, buf);
                              })
                     .final_checkpoint;
  }
  res.final_eval = train::evaluate(final_ckpt, data.val);

  // stage 4: report
  report::emit_report(res.plan, rf::rf_network_report(final_spec), out / "report");
  char buf[128];
  std::string summary = "key,value\n";
  auto row = [&](const char* k, double v) {
    std::snprintf(buf, sizeof buf, "%s,%.6g\n", k, v);
    summary += buf;
  };
  row("base_gflops", res.base_gflops);
  row("seed_gflops", res.seed_gflops);
  row("scalenet_gflops", res.final_gflops);
  row("seed_val_top1", 1 - res.seed_eval.top1_error);
  row("scalenet_val_top1", 1 - res.final_eval.top1_error);
  row("scalenet_val_top5", 1 - res.final_eval.top5_error);
  row("chance", 1.0 / data.val.num_classes);
  row("budgets_ok", res.budgets_ok);
  row("differs_from_even", res.differs_from_even);
  write_text(out / "summary.csv", summary);
  return res;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "mode,val_top1,val_top5,gflops,params\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%.6f,%lld\n", sa::downsample_name(r.mode).c_str(), r.val_top1,
                  r.val_top5, r.gflops, static_cast<long long>(r.params));
    out += buf;
  }
  return out;
}

std::vector<AblationRow> run_ablation(const PipelineConfig& config, const std::vector<sa::Downsample>& modes,
                                      const std::optional<net::AllocationPlan>& plan, const Log& log) {
  if (modes.empty()) throw Error("ablation needs at least one downsampling mode");
  const Splits data = load_data(config.data);
  ArchConfig ac = config.arch;
  if (!ac.classes) ac.classes = data.train.num_classes;
  if (!ac.input) ac.input = data.train.height();
  std::vector<AblationRow> rows;
  for (auto mode : modes) {
    ac.downsample = mode;
    const auto arch = plan ? make_arch(ac, Variant::scalenet, plan) : make_arch(ac, Variant::even);
    const NetworkSpec spec = net::lower(arch);
    const std::string name = sa::downsample_name(mode);
    say(log, "ablate: " + name);
    auto r = train::train(spec, data.train, data.val, config.train, config.out_dir / name);
    const auto e = train::evaluate(r.final_checkpoint, data.val);
    rows.push_back({mode, 1 - e.top1_error, 1 - e.top5_error, flops::network_flops(spec).gflops(), parameter_count(spec)});
  }
  write_text(config.out_dir / "ablation.csv", ablation_csv(rows));
  return rows;
}

}  // namespace sakit::pipeline
