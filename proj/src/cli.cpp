#include "sakit/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include "sakit/allocator.hpp"
#include "sakit/checkpoint.hpp"
#include "sakit/error.hpp"
#include "sakit/flops.hpp"
#include "sakit/gradcheck.hpp"
#include "sakit/net_builder.hpp"
#include "sakit/pipeline.hpp"
#include "sakit/report.hpp"
#include "sakit/rf.hpp"
#include "sakit/train.hpp"

extern char** environ;

namespace sakit::cli {

namespace fs = std::filesystem;

namespace {

class UsageError : public Error {
 public:
  using Error::Error;
};

struct Key {
  std::string name;
  std::string def;
  std::string help;
  bool flag = false;
};
using Keys = std::vector<Key>;

Keys arch_keys() {
  return {
      {"preset", "cifar-n1", "resnet50|resnet101|resnet152|cifar-n<k>|scalenet50[-light]|scalenet101|scalenet152|scalenet-cifar-n<k>"},
      {"input", "0", "square input side; 0 keeps the preset's"},
      {"classes", "0", "class count; 0 takes it from the dataset or preset"},
      {"scales", "", "scale factors, e.g. 1,2,4,7; empty uses the preset default"},
      {"plan", "", "allocation plan file"},
      {"variant", "auto", "baseline|seed|even|scalenet; auto = scalenet with a plan, else baseline"},
      {"downsample", "max", "SA downsampling: max|avg|conv|dilated"},
  };
}

Keys data_keys() {
  return {
      {"dataset", "synthetic", "synthetic|cifar10|cifar100|folder"},
      {"data-dir", "", "dataset directory"},
      {"per-class", "100", "synthetic training images per class"},
      {"val-per-class", "30", "synthetic validation images per class"},
      {"size", "16", "synthetic image side"},
  };
}

Keys train_keys() {
  return {
      {"epochs", "8", "training epochs"},
      {"batch", "32", "batch size"},
      {"lr", "0.05", "initial learning rate"},
      {"milestones", "6", "epochs at which lr is divided by --lr-decay"},
      {"lr-decay", "10", "lr decay factor"},
      {"momentum", "0.9", "SGD momentum"},
      {"weight-decay", "1e-4", "L2 weight decay"},
      {"augment", "flip", "flip,crop or none"},
  };
}

Keys common_keys(const std::string& out_default) {
  return {
      {"seed", "0", "RNG seed (u64)"},
      {"deterministic", "false", "zero the timing column so logs compare bitwise", true},
      {"out-dir", out_default, "output directory; empty prints only"},
  };
}

Keys join(std::initializer_list<Keys> parts) {
  Keys k;
  for (const auto& p : parts) k.insert(k.end(), p.begin(), p.end());
  return k;
}

Keys with_default(Keys k, const std::string& name, const std::string& def) {
  for (auto& x : k)
    if (x.name == name) x.def = def;
  return k;
}

// ---- resolved settings ----------------------------------------------------

struct Ctx {
  std::string command;
  std::map<std::string, std::string> v;
  std::ostream& out;
  std::ostream& err;

  const std::string& s(const std::string& k) const {
    auto it = v.find(k);
    if (it == v.end()) throw Error("internal: key '" + k + "' not registered for " + command);
    return it->second;
  }
  long long i64(const std::string& k) const {
    const auto& t = s(k);
    long long x = 0;
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), x);
    if (t.empty() || ec != std::errc() || p != t.data() + t.size()) throw UsageError("--" + k + ": '" + t + "' is not an integer");
    return x;
  }
  int i(const std::string& k) const { return static_cast<int>(i64(k)); }
  std::uint64_t u64(const std::string& k) const {
    const auto& t = s(k);
    std::uint64_t x = 0;
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), x);
    if (t.empty() || ec != std::errc() || p != t.data() + t.size()) throw UsageError("--" + k + ": '" + t + "' is not a u64");
    return x;
  }
  double d(const std::string& k) const {
    const auto& t = s(k);
    try {
      std::size_t n = 0;
      const double x = std::stod(t, &n);
      if (n != t.size()) throw std::invalid_argument(t);
      return x;
    } catch (const std::logic_error&) {
      throw UsageError("--" + k + ": '" + t + "' is not a number");
    }
  }
  bool b(const std::string& k) const {
    std::string t = s(k);
    std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
    if (t == "1" || t == "true" || t == "yes" || t == "on") return true;
    if (t == "0" || t == "false" || t == "no" || t == "off" || t.empty()) return false;
    throw UsageError("--" + k + ": '" + s(k) + "' is not a boolean");
  }
  std::vector<int> ints(const std::string& k) const {
    std::vector<int> r;
    std::stringstream ss(s(k));
    std::string item;
    while (std::getline(ss, item, ',')) {
      int x = 0;
      auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), x);
      if (item.empty() || ec != std::errc() || p != item.data() + item.size())
        throw UsageError("--" + k + ": '" + item + "' is not an integer");
      r.push_back(x);
    }
    return r;
  }
  fs::path out_dir() const { return s("out-dir"); }

  // Writes config.txt (every resolved key) into the output directory.
  void snapshot() const {
    if (out_dir().empty()) return;
    fs::create_directories(out_dir());
    std::ofstream o(out_dir() / "config.txt");
    o << "# sakit " << command << "\n";
    for (const auto& [k, val] : v)
      if (k != "config") o << k << "=" << val << "\n";
  }
};

void write_text(const fs::path& p, const std::string& s) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream o(p, std::ios::binary);
  if (!o) throw IoError("cannot write '" + p.string() + "'");
  o << s;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open '" + p.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---- architecture resolution ----------------------------------------------

struct ResolvedArch {
  pipeline::ArchConfig config;
  pipeline::Variant variant = pipeline::Variant::baseline;
  std::optional<net::AllocationPlan> plan;
};

ResolvedArch resolve_arch(const Ctx& c, std::optional<int> classes_fallback = std::nullopt,
                          std::optional<int> input_fallback = std::nullopt) {
  ResolvedArch r;
  std::string preset = c.s("preset");
  std::string plan_path = c.s("plan");
  bool scalenet_preset = false;
  if (preset.rfind("scalenet", 0) == 0) {
    // scalenet50 -> resnet50 + data/plans/scalenet50.txt
    std::string rest = preset.substr(8);
    std::string suffix;
    if (rest.size() > 6 && rest.ends_with("-light")) {
      suffix = "_light";
      rest = rest.substr(0, rest.size() - 6);
    }
    std::string base;
    if (rest.rfind("-cifar-n", 0) == 0) base = rest.substr(1);
    else if (!rest.empty() && std::all_of(rest.begin(), rest.end(), ::isdigit)) base = "resnet" + rest;
    else throw UsageError("unknown preset '" + preset + "'");
    if (plan_path.empty()) {
      std::string file = preset.substr(0, preset.size() - (suffix.empty() ? 0 : 6)) + suffix;
      std::replace(file.begin(), file.end(), '-', '_');
      plan_path = std::string(SAKIT_DATA_DIR) + "/plans/" + file + ".txt";
    }
    preset = base;
    scalenet_preset = true;
  }
  r.config.preset = preset;
  if (const int k = c.i("classes"); k > 0) r.config.classes = k;
  else r.config.classes = classes_fallback;
  if (const int in = c.i("input"); in > 0) r.config.input = in;
  else r.config.input = input_fallback;
  r.config.scales = c.ints("scales");
  r.config.downsample = sa::parse_downsample(c.s("downsample"));
  if (!plan_path.empty()) r.plan = net::load_plan(plan_path);
  const std::string v = c.s("variant");
  if (v == "auto") r.variant = r.plan ? pipeline::Variant::scalenet : pipeline::Variant::baseline;
  else r.variant = pipeline::parse_variant(v);
  if (scalenet_preset && v != "auto" && r.variant != pipeline::Variant::scalenet)
    throw UsageError("preset " + c.s("preset") + " implies --variant scalenet");
  if (r.variant == pipeline::Variant::scalenet && !r.plan) throw UsageError("--variant scalenet needs --plan");
  return r;
}

net::Architecture arch_of(const ResolvedArch& r) { return pipeline::make_arch(r.config, r.variant, r.plan); }

pipeline::DataConfig data_config(const Ctx& c) {
  pipeline::DataConfig d;
  d.dataset = c.s("dataset");
  d.data_dir = c.s("data-dir");
  d.classes = c.i("classes") > 0 ? c.i("classes") : 10;
  d.train_per_class = c.i("per-class");
  d.val_per_class = c.i("val-per-class");
  d.size = c.i("size");
  d.seed = c.u64("seed");
  return d;
}

train::TrainConfig train_config(const Ctx& c) {
  train::TrainConfig t;
  t.epochs = c.i("epochs");
  t.batch_size = c.i("batch");
  t.learning_rate = c.d("lr");
  t.milestones = c.ints("milestones");
  t.decay_factor = c.d("lr-decay");
  t.momentum = c.d("momentum");
  t.weight_decay = c.d("weight-decay");
  t.augment = data::parse_augment(c.s("augment"));
  t.seed = c.u64("seed");
  t.deterministic = c.b("deterministic");
  t.validate();
  return t;
}

pipeline::PipelineConfig pipeline_config(const Ctx& c) {
  pipeline::PipelineConfig p;
  const auto ra = resolve_arch(c);
  p.arch = ra.config;
  p.data = data_config(c);
  p.train = train_config(c);
  p.projection.exponent = c.d("b");
  p.projection.min_total_neurons_per_block = c.i("min-neurons");
  p.projection.validate();
  p.out_dir = c.out_dir().empty() ? fs::path("pipeline_out") : c.out_dir();
  return p;
}

// ---- subcommands ----------------------------------------------------------

int cmd_build(Ctx& c) {
  const auto arch = arch_of(resolve_arch(c));
  const NetworkSpec spec = net::lower(arch);
  const auto fr = flops::network_flops(spec);
  c.out << "name " << arch.name << "\nlabel " << arch.label << "\nblocks " << arch.block_count() << "\nsa_blocks "
        << arch.sa_block_count() << "\nnodes " << spec.layers.size() << "\nparams " << pipeline::parameter_count(spec)
        << "\ngflops " << std::fixed << std::setprecision(4) << fr.gflops() << "\n";
  if (c.b("emit-spec")) c.out << spec.to_text();
  if (!c.out_dir().empty()) {
    write_text(c.out_dir() / "spec.txt", spec.to_text());
    c.snapshot();
  }
  return 0;
}

int cmd_flops(Ctx& c) {
  const auto arch = arch_of(resolve_arch(c));
  const NetworkSpec spec = net::lower(arch);
  flops::CostModel m;
  m.count_bn = c.b("count-bn");
  m.count_pool = c.b("count-pool");
  m.count_resize = c.b("count-resize");
  m.count_relu = c.b("count-relu");
  m.mac_equals_one_flop = !c.b("two-flops-per-mac");
  const auto r = flops::network_flops(spec, m);
  c.out << std::left << std::setw(4) << "k" << std::setw(7) << "scale" << std::setw(10) << "channels" << std::setw(14)
        << "unit_cost" << std::setw(14) << "subtotal" << "budget\n";
  for (const auto& row : r.rows)
    c.out << std::setw(4) << row.block_index << std::setw(7) << row.scale << std::setw(10) << row.channels
          << std::setw(14) << row.unit_cost << std::setw(14) << row.subtotal << row.budget << "\n";
  c.out << std::fixed << std::setprecision(3) << arch.label << " @" << arch.input[1] << "x" << arch.input[2]
        << ": total " << r.gflops() << " G" << (m.mac_equals_one_flop ? " (MACs)" : " (FLOPs, 2 per MAC)")
        << "  conv " << r.conv_macs / 1e9 << " G  dense " << r.dense_macs / 1e9 << " G\n";
  if (!c.out_dir().empty()) {
    write_text(c.out_dir() / "flops.csv", flops::report_csv(r));
    c.snapshot();
  }
  return 0;
}

int cmd_train(Ctx& c) {
  const auto splits = pipeline::load_data(data_config(c));
  const auto ra = resolve_arch(c, splits.train.num_classes, splits.train.height());
  const NetworkSpec spec = net::lower(arch_of(ra));
  const auto tc = train_config(c);
  c.snapshot();
  if (!c.out_dir().empty()) write_text(c.out_dir() / "spec.txt", spec.to_text());
  const auto res = train::train(spec, splits.train, splits.val, tc, c.out_dir(), [&](const train::EpochMetrics& m) {
    char buf[200];
    std::snprintf(buf, sizeof buf, "epoch %d lr %.4g loss %.4f train top-1 %.3f val top-1 %.3f top-5 %.3f\n", m.epoch,
                  m.lr, m.train_loss, m.train_top1, m.val_top1, m.val_top5);
    c.out << buf << std::flush;
  });
  c.out << "final val top-1 " << res.log.back().val_top1 << "\n";
  return 0;
}

int cmd_allocate(Ctx& c) {
  std::vector<alloc::NeuronRecord> records;
  if (!c.s("importances").empty()) {
    records = alloc::parse_importance_csv(read_text(c.s("importances")));
  } else if (!c.s("checkpoint").empty()) {
    const auto ck = load_checkpoint(c.s("checkpoint"));
    records = alloc::extract_importance(ck, NetworkSpec::parse(ck.spec_text));
  } else {
    throw UsageError("allocate needs --importances or --checkpoint");
  }
  if (records.empty()) throw Error("no SA neurons in the importance source");
  std::vector<int> scales = c.ints("scales");
  if (scales.empty()) {
    std::set<int> seen;
    for (const auto& r : records) seen.insert(r.scale);
    scales.assign(seen.begin(), seen.end());
  }
  std::vector<std::int64_t> budgets;
  if (!c.s("budgets").empty()) {
    budgets = alloc::parse_budgets_csv(read_text(c.s("budgets")));
  } else {
    auto ra = resolve_arch(c);
    ra.variant = pipeline::Variant::baseline;
    for (const auto& b : flops::block_budgets(net::lower(arch_of(ra)), scales)) budgets.push_back(b.budget);
  }
  alloc::ProjectionConfig pc;
  pc.exponent = c.d("b");
  pc.min_total_neurons_per_block = c.i("min-neurons");
  pc.validate();
  auto res = alloc::project_all(records, budgets, scales, pc);
  res.plan.source = !c.s("importances").empty() ? c.s("importances") : c.s("checkpoint");
  const std::string text = res.plan.serialize();
  c.out << text;
  for (const auto& b : res.blocks)
    if (b.selection.forced) c.err << "block " << b.block << ": budget admitted too few neurons, forced top-ranked\n";
  if (!c.out_dir().empty()) {
    c.snapshot();
    net::save_plan((c.out_dir() / "plan.txt").string(), res.plan);
  }
  return 0;
}

int cmd_pipeline(Ctx& c) {
  auto p = pipeline_config(c);
  p.resume = c.b("resume");
  c.v["out-dir"] = p.out_dir.string();
  c.snapshot();
  const auto r = pipeline::run_pipeline(p, [&](const std::string& s) { c.out << s << "\n" << std::flush; });
  c.out << "plan:\n" << r.plan.serialize();
  c.out << std::fixed << std::setprecision(4) << "seed val top-1 " << 1 - r.seed_eval.top1_error
        << "\nscalenet val top-1 " << 1 - r.final_eval.top1_error << "\nbase/seed/scalenet GFLOPs " << r.base_gflops
        << " / " << r.seed_gflops << " / " << r.final_gflops << "\nbudgets " << (r.budgets_ok ? "ok" : "VIOLATED")
        << "\nplan " << (r.differs_from_even ? "differs from" : "equals") << " even allocation\n";
  return r.budgets_ok ? 0 : 2;
}

int cmd_rf(Ctx& c) {
  const NetworkSpec spec = net::lower(arch_of(resolve_arch(c)));
  const std::string csv = rf::rf_csv(rf::rf_network_report(spec));
  c.out << csv;
  if (!c.out_dir().empty()) {
    write_text(c.out_dir() / "rf.csv", csv);
    c.snapshot();
  }
  return 0;
}

int cmd_eval(Ctx& c) {
  if (c.s("checkpoint").empty()) throw UsageError("eval needs --checkpoint");
  const auto ck = load_checkpoint(c.s("checkpoint"));
  const auto splits = pipeline::load_data(data_config(c));
  train::EvalOptions o;
  o.batch_size = c.i("batch");
  o.center_crop = c.i("center-crop");
  const auto e = train::evaluate(ck, splits.val, o);
  char buf[160];
  std::snprintf(buf, sizeof buf, "samples,top1_error,top5_error\n%d,%.6f,%.6f\n", e.samples, e.top1_error, e.top5_error);
  c.out << buf;
  if (!c.out_dir().empty()) {
    write_text(c.out_dir() / "eval.csv", buf);
    c.snapshot();
  }
  return 0;
}

int cmd_report(Ctx& c) {
  auto ra = resolve_arch(c);
  if (!ra.plan) throw UsageError("report needs --plan (or a scalenet preset)");
  ra.variant = pipeline::Variant::scalenet;
  const NetworkSpec spec = net::lower(arch_of(ra));
  const fs::path dir = c.out_dir().empty() ? fs::path("report") : c.out_dir();
  c.v["out-dir"] = dir.string();
  report::emit_report(*ra.plan, rf::rf_network_report(spec), dir);
  c.snapshot();
  c.out << report::proportions_csv(*ra.plan);
  c.out << "wrote " << (dir / "proportions.svg").string() << " and " << (dir / "rf.svg").string() << "\n";
  return 0;
}

int cmd_bench(Ctx& c) {
  const NetworkSpec spec = net::lower(arch_of(resolve_arch(c)));
  const auto r = report::bench(spec, c.i("batch"), c.i("repeats"), c.i("warmup"));
  const std::string csv = report::bench_csv(r);
  c.out << csv;
  if (!c.out_dir().empty()) {
    write_text(c.out_dir() / "bench.csv", csv);
    c.snapshot();
  }
  return 0;
}

int cmd_gradcheck(Ctx& c) {
  GradcheckOptions o;
  o.step = c.d("step");
  o.tolerance = c.d("tolerance");
  const auto results = op_gradcheck_suite(c.i("cases"), c.u64("seed"), o);
  bool ok = true;
  std::string csv = "op,cases,failed,max_rel_error\n";
  for (const auto& r : results) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s,%d,%d,%.3e\n", r.op.c_str(), r.cases, r.failed, r.max_rel_error);
    csv += buf;
    ok = ok && r.failed == 0;
  }
  c.out << csv << (ok ? "PASS" : "FAIL") << "\n";
  if (!c.out_dir().empty()) {
    write_text(c.out_dir() / "gradcheck.csv", csv);
    c.snapshot();
  }
  return ok ? 0 : 2;
}

int cmd_ablate(Ctx& c) {
  auto p = pipeline_config(c);
  if (c.out_dir().empty()) p.out_dir = "ablation_out";
  c.v["out-dir"] = p.out_dir.string();
  std::vector<sa::Downsample> modes;
  std::stringstream ss(c.s("modes"));
  std::string m;
  while (std::getline(ss, m, ',')) modes.push_back(sa::parse_downsample(m));
  const auto ra = resolve_arch(c);
  c.snapshot();
  const auto rows = pipeline::run_ablation(p, modes, ra.plan, [&](const std::string& s) { c.out << s << "\n" << std::flush; });
  c.out << pipeline::ablation_csv(rows);
  return 0;
}

struct Command {
  std::string name;
  std::string help;
  Keys keys;
  std::function<int(Ctx&)> run;
};

const std::vector<Command>& commands() {
  static const std::vector<Command> cmds = [] {
    const Keys pipe_extra{{"b", "0", "importance exponent b in V / cost^b"},
                          {"min-neurons", "1", "minimum neurons kept per block"}};
    std::vector<Command> v;
    v.push_back({"build", "lower an architecture and summarize it",
                 join({arch_keys(), common_keys(""), {{"emit-spec", "false", "print the network spec", true}}}), cmd_build});
    v.push_back({"flops", "per-block cost table and network total",
                 join({with_default(arch_keys(), "input", "0"), common_keys(""),
                       {{"count-bn", "false", "count BN ops", true},
                        {"count-pool", "false", "count pooling ops", true},
                        {"count-resize", "false", "count resize ops", true},
                        {"count-relu", "false", "count ReLU ops", true},
                        {"two-flops-per-mac", "false", "report 2 FLOPs per MAC", true}}}),
                 cmd_flops});
    v.push_back({"train", "train a network on a dataset",
                 join({arch_keys(), data_keys(), train_keys(), common_keys("train_out")}), cmd_train});
    v.push_back({"allocate", "project importances onto per-block budgets",
                 join({arch_keys(), common_keys("allocate_out"), pipe_extra,
                       {{"importances", "", "importance CSV"},
                        {"checkpoint", "", "seed checkpoint to read BN gammas from"},
                        {"budgets", "", "budget CSV (k,budget); default: baseline 3x3 costs of --preset"}}}),
                 cmd_allocate});
    v.push_back({"pipeline", "seed train, allocate, build, retrain, report",
                 join({arch_keys(), data_keys(), train_keys(), common_keys("pipeline_out"), pipe_extra,
                       {{"resume", "false", "reuse finished stages in --out-dir", true}}}),
                 cmd_pipeline});
    v.push_back({"rf", "receptive-field range per block", join({arch_keys(), common_keys("")}), cmd_rf});
    v.push_back({"eval", "evaluate a checkpoint on the validation split",
                 join({data_keys(), common_keys(""),
                       {{"checkpoint", "", "checkpoint file"},
                        {"classes", "0", "synthetic class count (0 = 10)"},
                        {"batch", "100", "evaluation batch"},
                        {"center-crop", "0", "crop side before evaluation; 0 = none"}}}),
                 cmd_eval});
    v.push_back({"report", "proportion and RF charts (CSV + SVG) for a plan",
                 join({arch_keys(), common_keys("report")}), cmd_report});
    v.push_back({"bench", "time inference forward passes",
                 join({arch_keys(), common_keys(""),
                       {{"batch", "8", "batch per forward"},
                        {"repeats", "10", "timed runs"},
                        {"warmup", "1", "discarded runs"}}}),
                 cmd_bench});
    v.push_back({"gradcheck", "finite-difference check of every op",
                 join({common_keys(""),
                       {{"cases", "50", "random shapes per op"},
                        {"step", "1e-4", "finite-difference step"},
                        {"tolerance", "1e-5", "max relative error"}}}),
                 cmd_gradcheck});
    v.push_back({"ablate", "downsampling-mode sweep on the desk config",
                 join({arch_keys(), data_keys(), train_keys(), common_keys("ablation_out"), pipe_extra,
                       {{"modes", "max,avg,conv,dilated", "modes to compare"}}}),
                 cmd_ablate});
    return v;
  }();
  return cmds;
}

std::string usage() {
  std::string u = "usage: sakit <command> [--key value ...] [--config FILE]\n\ncommands:\n";
  for (const auto& c : commands()) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "  %-10s %s\n", c.name.c_str(), c.help.c_str());
    u += buf;
  }
  u += "\nRun 'sakit <command> --help' for its options. Any option can also come from a\n"
       "key=value config file or an environment variable SAKIT_<KEY> (env > flag > file > default).\n";
  return u;
}

std::map<std::string, std::string> process_env() {
  std::map<std::string, std::string> env;
  for (char** e = environ; e && *e; ++e) {
    const std::string kv = *e;
    const auto eq = kv.find('=');
    if (eq != std::string::npos && kv.rfind("SAKIT_", 0) == 0) env[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
  return env;
}

std::map<std::string, std::string> parse_config_file(const fs::path& p, const std::set<std::string>& known) {
  std::ifstream in(p);
  if (!in) throw UsageError("cannot open config file '" + p.string() + "'");
  std::map<std::string, std::string> out;
  std::string line;
  int no = 0;
  while (std::getline(in, line)) {
    ++no;
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(" \t\r"));
      s.erase(s.find_last_not_of(" \t\r") + 1);
      return s;
    };
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError(p.string() + ":" + std::to_string(no) + ": expected key=value");
    const std::string k = trim(line.substr(0, eq));
    if (!known.count(k) || k == "config")
      throw UsageError(p.string() + ":" + std::to_string(no) + ": unknown key '" + k + "'");
    out[k] = trim(line.substr(eq + 1));
  }
  return out;
}

}  // namespace

std::vector<std::string> subcommands() {
  std::vector<std::string> n;
  for (const auto& c : commands()) n.push_back(c.name);
  return n;
}

std::string env_name(const std::string& key) {
  std::string e = "SAKIT_";
  for (char ch : key) e += ch == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  return e;
}

int run_command(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err,
                const std::optional<std::map<std::string, std::string>>& env_in) {
  if (argv.size() < 2) {
    err << usage();
    return 1;
  }
  const std::string name = argv[1];
  if (name == "--help" || name == "-h" || name == "help") {
    out << usage();
    return 0;
  }
  const auto it = std::find_if(commands().begin(), commands().end(), [&](const Command& c) { return c.name == name; });
  if (it == commands().end()) {
    err << "unknown command '" << name << "'\n\n" << usage();
    return 1;
  }
  const Command& cmd = *it;

  // flags
  CLI::App app{cmd.help, "sakit " + cmd.name};
  std::map<std::string, std::string> flag_values;
  std::map<std::string, bool> flag_bools;
  std::map<std::string, CLI::Option*> opts;
  std::string config_path;
  app.add_option("--config", config_path, "key=value settings file");
  for (const auto& k : cmd.keys) {
    if (k.flag) {
      opts[k.name] = app.add_flag("--" + k.name, flag_bools[k.name], k.help);
    } else {
      opts[k.name] = app.add_option("--" + k.name, flag_values[k.name], k.help)->default_str(k.def);
    }
  }
  std::vector<std::string> rest(argv.begin() + 2, argv.end());
  std::reverse(rest.begin(), rest.end());
  try {
    app.parse(rest);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "sakit " << cmd.name << ": " << e.what() << "\n";
    return 1;
  }

  Ctx ctx{cmd.name, {}, out, err};
  try {
    std::set<std::string> known;
    for (const auto& k : cmd.keys) known.insert(k.name);
    // defaults < file < flags < env
    for (const auto& k : cmd.keys) ctx.v[k.name] = k.def;
    if (!config_path.empty())
      for (const auto& [k, val] : parse_config_file(config_path, known)) ctx.v[k] = val;
    for (const auto& k : cmd.keys)
      if (opts[k.name]->count() > 0) ctx.v[k.name] = k.flag ? (flag_bools[k.name] ? "true" : "false") : flag_values[k.name];
    std::set<std::string> all_env;
    for (const auto& c : commands())
      for (const auto& k : c.keys) all_env.insert(env_name(k.name));
    all_env.insert(env_name("config"));
    const auto env = env_in ? *env_in : process_env();
    for (const auto& [e, val] : env) {
      if (e.rfind("SAKIT_", 0) != 0) continue;
      if (!all_env.count(e)) throw UsageError("unknown environment setting " + e);
    }
    for (const auto& k : cmd.keys)
      if (auto e = env.find(env_name(k.name)); e != env.end()) ctx.v[k.name] = e->second;
  } catch (const UsageError& e) {
    err << "sakit " << cmd.name << ": " << e.what() << "\n";
    return 1;
  }

  try {
    return cmd.run(ctx);
  } catch (const UsageError& e) {
    err << "sakit " << cmd.name << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "sakit " << cmd.name << ": error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace sakit::cli
