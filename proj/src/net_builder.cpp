#include "sakit/net_builder.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "sakit/error.hpp"
#include "sakit/layers.hpp"

namespace sakit::net {

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

template <class I>
std::vector<I> parse_list(std::string_view text, int line) {
  std::vector<I> out;
  std::size_t start = 0;
  while (true) {
    std::size_t comma = text.find(',', start);
    std::string item = trim(text.substr(start, comma == std::string_view::npos ? std::string_view::npos
                                                                                 : comma - start));
    I v{};
    auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || ec != std::errc() || p != item.data() + item.size())
      throw ParseError(line, "expected integer, got '" + item + "'");
    out.push_back(v);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

template <class I>
std::string join(const std::vector<I>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(v[i]);
  }
  return s;
}

std::vector<Bottleneck> make_stage(int in, int mid, int out, int count, int stride) {
  std::vector<Bottleneck> blocks;
  for (int i = 0; i < count; ++i) {
    Bottleneck b;
    b.in_channels = i == 0 ? in : out;
    b.mid_channels = mid;
    b.out_channels = out;
    b.stride = i == 0 ? stride : 1;
    blocks.push_back(b);
  }
  return blocks;
}

}  // namespace

void AllocationPlan::validate() const {
  if (scale_factors.empty()) throw Error("plan has no scale factors");
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto& r = rows[k];
    const std::string where = "plan row " + std::to_string(k + 1) + ": ";
    if (r.size() != scale_factors.size())
      throw Error(where + std::to_string(r.size()) + " entries for " +
                  std::to_string(scale_factors.size()) + " scales");
    int sum = 0;
    for (int c : r) {
      if (c < 0) throw Error(where + "negative channel count");
      sum += c;
    }
    if (sum < 1) throw Error(where + "no channels");
  }
  if (!budgets.empty() && budgets.size() != rows.size())
    throw Error("plan has " + std::to_string(budgets.size()) + " budgets for " +
                std::to_string(rows.size()) + " rows");
}

std::string AllocationPlan::serialize() const {
  std::ostringstream out;
  out << "scales: " << join(scale_factors) << "\n";
  if (exponent) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", *exponent);
    out << "b: " << buf << "\n";
  }
  if (!source.empty()) out << "source: " << source << "\n";
  if (!budgets.empty()) out << "budgets: " << join(budgets) << "\n";
  for (std::size_t k = 0; k < rows.size(); ++k) out << (k + 1) << ": " << join(rows[k]) << "\n";
  return out.str();
}

AllocationPlan AllocationPlan::parse(std::string_view text) {
  AllocationPlan plan;
  bool have_scales = false;
  int lineno = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    std::string_view raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++lineno;
    if (auto hash = raw.find('#'); hash != std::string_view::npos) raw = raw.substr(0, hash);
    const std::string line = trim(raw);
    if (line.empty()) continue;
    const auto colon = line.find(':');
    if (colon == std::string::npos) throw ParseError(lineno, "expected 'key: value'");
    const std::string key = trim(std::string_view(line).substr(0, colon));
    const std::string value = trim(std::string_view(line).substr(colon + 1));
    if (key == "scales") {
      if (have_scales) throw ParseError(lineno, "duplicate scales line");
      plan.scale_factors = parse_list<int>(value, lineno);
      for (int f : plan.scale_factors)
        if (f <= 0) throw ParseError(lineno, "scale factors must be positive");
      have_scales = true;
    } else if (key == "b") {
      try {
        std::size_t used = 0;
        plan.exponent = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument("junk");
      } catch (const std::exception&) {
        throw ParseError(lineno, "bad exponent '" + value + "'");
      }
    } else if (key == "source") {
      plan.source = value;
    } else if (key == "budgets") {
      plan.budgets = parse_list<std::int64_t>(value, lineno);
    } else if (!key.empty() && std::all_of(key.begin(), key.end(), [](char c) { return c >= '0' && c <= '9'; })) {
      if (!have_scales) throw ParseError(lineno, "block row before scales line");
      const int k = std::stoi(key);
      if (k != static_cast<int>(plan.rows.size()) + 1)
        throw ParseError(lineno, "expected block " + std::to_string(plan.rows.size() + 1) + ", got " + key);
      auto row = parse_list<int>(value, lineno);
      if (row.size() != plan.scale_factors.size())
        throw ParseError(lineno, "row has " + std::to_string(row.size()) + " entries, expected " +
                                     std::to_string(plan.scale_factors.size()));
      int sum = 0;
      for (int c : row) {
        if (c < 0) throw ParseError(lineno, "negative channel count");
        sum += c;
      }
      if (sum < 1) throw ParseError(lineno, "row has no channels");
      plan.rows.push_back(std::move(row));
    } else {
      throw ParseError(lineno, "unknown key '" + key + "'");
    }
  }
  if (!have_scales) throw ParseError(lineno, "missing scales line");
  if (!plan.budgets.empty() && plan.budgets.size() != plan.rows.size())
    throw ParseError(lineno, "budgets count does not match row count");
  return plan;
}

AllocationPlan load_plan(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read plan " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return AllocationPlan::parse(ss.str());
}

void save_plan(const std::string& path, const AllocationPlan& plan) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write plan " + path);
  out << plan.serialize();
}

int Architecture::block_count() const {
  int n = 0;
  for (const auto& s : stages) n += static_cast<int>(s.size());
  return n;
}

int Architecture::sa_block_count() const {
  int n = 0;
  for (const auto* b : blocks()) n += b->sa_channels ? 1 : 0;
  return n;
}

int Architecture::weighted_layers() const { return 1 + 3 * block_count() + 1; }

std::vector<const Bottleneck*> Architecture::blocks() const {
  std::vector<const Bottleneck*> out;
  for (const auto& s : stages)
    for (const auto& b : s) out.push_back(&b);
  return out;
}

std::vector<Bottleneck*> Architecture::blocks() {
  std::vector<Bottleneck*> out;
  for (auto& s : stages)
    for (auto& b : s) out.push_back(&b);
  return out;
}

Architecture build_resnet(int depth, int num_classes) {
  std::vector<int> counts;
  if (depth == 50) counts = {3, 4, 6, 3};
  else if (depth == 101) counts = {3, 4, 23, 3};
  else if (depth == 152) counts = {3, 8, 36, 3};
  else throw Error("unsupported ResNet depth " + std::to_string(depth) + " (50|101|152)");
  if (num_classes < 1) throw Error("num_classes must be positive");
  Architecture a;
  a.name = "resnet" + std::to_string(depth);
  a.label = "ResNet-" + std::to_string(depth);
  a.input = {3, 224, 224};
  a.num_classes = num_classes;
  a.stem = Stem::imagenet;
  int in = 64;
  for (int s = 0; s < 4; ++s) {
    const int mid = 64 << s;
    a.stages.push_back(make_stage(in, mid, 4 * mid, counts[s], s == 0 ? 1 : 2));
    in = 4 * mid;
  }
  a.scale_factors = {1, 2, 4, 7};
  return a;
}

Architecture build_cifar_resnet(int n, int num_classes) {
  if (n < 1) throw Error("cifar resnet needs n >= 1");
  if (num_classes < 1) throw Error("num_classes must be positive");
  Architecture a;
  a.name = "cifar-n" + std::to_string(n);
  // n=10 is conventionally called ResNet-101 even though it has 92 layers.
  a.label = n == 10 ? "ResNet-101" : "ResNet-" + std::to_string(9 * n + 2);
  a.input = {3, 32, 32};
  a.num_classes = num_classes;
  a.stem = Stem::cifar;
  int in = 16;
  for (int s = 0; s < 3; ++s) {
    const int mid = 16 << s;
    a.stages.push_back(make_stage(in, mid, 4 * mid, n, s == 0 ? 1 : 2));
    in = 4 * mid;
  }
  a.scale_factors = {1, 2, 4};
  if (a.weighted_layers() != 9 * n + 2) throw Error("internal: cifar layer count mismatch");
  return a;
}

std::vector<int> default_scales(const Architecture& base) {
  return base.stem == Stem::cifar ? std::vector<int>{1, 2, 4} : std::vector<int>{1, 2, 4, 7};
}

namespace {

std::string scalenet_name(const std::string& base) {
  if (base.rfind("resnet", 0) == 0) return "scalenet" + base.substr(6);
  if (base.rfind("scalenet", 0) == 0) return base;
  return "scalenet-" + base;
}

std::string scalenet_label(const std::string& label) {
  if (label.rfind("ResNet-", 0) == 0) return "ScaleNet-" + label.substr(7);
  return label;
}

}  // namespace

Architecture build_scalenet(const Architecture& base, const AllocationPlan& plan) {
  plan.validate();
  if (static_cast<int>(plan.rows.size()) != base.block_count())
    throw Error("plan has " + std::to_string(plan.rows.size()) + " rows but " + base.name + " has " +
                std::to_string(base.block_count()) + " 3x3 convs");
  Architecture a = base;
  a.name = scalenet_name(base.name);
  a.label = scalenet_label(base.label);
  a.scale_factors = plan.scale_factors;
  auto blocks = a.blocks();
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    Bottleneck& b = *blocks[k];
    if (b.stride != 1) {
      b.pool_before = true;
      b.stride = 1;
    }
    b.sa_channels = plan.rows[k];
  }
  return a;
}

AllocationPlan even_allocation(const Architecture& base, const std::vector<int>& scale_factors) {
  if (scale_factors.empty()) throw Error("no scale factors");
  const int L = static_cast<int>(scale_factors.size());
  std::vector<int> order(scale_factors.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int x, int y) { return scale_factors[x] < scale_factors[y]; });
  AllocationPlan plan;
  plan.scale_factors = scale_factors;
  for (const auto* b : base.blocks()) {
    std::vector<int> row(scale_factors.size(), b->mid_channels / L);
    const int r = b->mid_channels % L;
    for (int i = 0; i < r; ++i) row[order[i]] += 1;
    plan.rows.push_back(std::move(row));
  }
  return plan;
}

Architecture build_seed(const Architecture& base, const std::vector<int>& scale_factors) {
  if (scale_factors.empty()) throw Error("no scale factors");
  AllocationPlan plan;
  plan.scale_factors = scale_factors;
  for (const auto* b : base.blocks())
    plan.rows.emplace_back(scale_factors.size(), b->mid_channels);
  Architecture a = build_scalenet(base, plan);
  a.name += "-seed";
  return a;
}

AllocationPlan plan_of(const Architecture& arch) {
  AllocationPlan plan;
  plan.scale_factors = arch.scale_factors;
  for (const auto* b : arch.blocks()) {
    if (!b->sa_channels) throw Error(arch.name + " has a plain 3x3 block; no allocation plan");
    plan.rows.push_back(*b->sa_channels);
  }
  return plan;
}

NetworkSpec lower(const Architecture& arch) {
  using sa::Port;
  sa::SpecWriter w(arch.name);
  w.add("image", "input").set("shape", layers::dims_str(arch.input));
  w.add("labels", "labels").set("classes", arch.num_classes);
  Port x{"image", arch.input};
  if (arch.stem == Stem::imagenet) {
    x = sa::add_conv_bn(w, "stem", x, 64, 7, 2, 3, true);
    w.add("stem.pool", "pool", {x.node}).set("mode", "max").set("k", 3).set("s", 2).set("p", 1);
    nn::Pool2dSpec ps{nn::PoolMode::max, 3, 2, 1, false};
    x = Port{"stem.pool", {x.channels(), ps.out_dim(x.height()), ps.out_dim(x.width())}};
  } else {
    x = sa::add_conv_bn(w, "stem", x, 16, 3, 1, 1, true);
  }

  int k = 0;
  for (const auto* b : arch.blocks()) {
    ++k;
    const std::string p = "b" + std::to_string(k);
    if (x.channels() != b->in_channels)
      throw ShapeError(p, "block expects " + std::to_string(b->in_channels) + " channels, got " +
                              std::to_string(x.channels()));
    if (b->pool_before) {
      w.add(p + ".pre", "pool", {x.node}).set("mode", "max").set("k", 2).set("s", 2).set("p", 0).set("ceil", 1);
      nn::Pool2dSpec ps{nn::PoolMode::max, 2, 2, 0, true};
      x = Port{p + ".pre", {x.channels(), ps.out_dim(x.height()), ps.out_dim(x.width())}};
    }
    if (b->sa_channels) {
      if (b->stride != 1) throw ShapeError(p, "SA units must have stride 1");
      sa::SAResidualSpec rs;
      rs.in_channels = b->in_channels;
      rs.reduce_channels = b->mid_channels;
      rs.expand_channels = b->out_channels;
      rs.shortcut = b->in_channels == b->out_channels ? sa::Shortcut::identity : sa::Shortcut::projection;
      rs.sa.in_channels = b->mid_channels;
      rs.sa.scale_factors = arch.scale_factors;
      rs.sa.per_scale_channels = *b->sa_channels;
      rs.sa.block_index = k;
      rs.sa.downsample = arch.downsample;
      rs.sa.base_channels = b->mid_channels;
      x = sa::build_sa_residual(w, rs, p, x);
      continue;
    }
    Port r = sa::add_conv_bn(w, p + ".reduce", x, b->mid_channels, 1, 1, 0, true);
    w.add(p + ".mid", "conv", {r.node})
        .set("out", b->mid_channels)
        .set("k", 3)
        .set("s", b->stride)
        .set("p", 1)
        .set("block", k)
        .set("role", "mid");
    w.add(p + ".mid.bn", "bn", {p + ".mid"});
    w.add(p + ".mid.relu", "relu", {p + ".mid.bn"});
    nn::Conv2dSpec mid{b->mid_channels, b->mid_channels, 3, b->stride, 1, 1, false};
    Port m{p + ".mid.relu", {b->mid_channels, mid.out_dim(r.height()), mid.out_dim(r.width())}};
    Port e = sa::add_conv_bn(w, p + ".expand", m, b->out_channels, 1, 1, 0, false);
    std::string shortcut = x.node;
    if (b->stride != 1 || b->in_channels != b->out_channels)
      shortcut = sa::add_conv_bn(w, p + ".proj", x, b->out_channels, 1, b->stride, 0, false).node;
    w.add(p + ".add", "add", {e.node, shortcut});
    w.add(p + ".out", "relu", {p + ".add"}).set("block", k).set("role", "out");
    x = Port{p + ".out", e.shape};
  }
  w.add("gap", "gap", {x.node});
  w.add("fc", "dense", {"gap"}).set("out", arch.num_classes);
  w.add("loss", "xent", {"fc", "labels"});
  return w.take();
}

Architecture preset(const std::string& name, std::optional<int> num_classes) {
  if (name == "resnet50" || name == "resnet101" || name == "resnet152")
    return build_resnet(std::stoi(name.substr(6)), num_classes.value_or(1000));
  if (name.rfind("cifar-n", 0) == 0) {
    const std::string digits = name.substr(7);
    int n = 0;
    auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), n);
    if (digits.empty() || ec != std::errc() || p != digits.data() + digits.size())
      throw Error("bad preset '" + name + "'");
    return build_cifar_resnet(n, num_classes.value_or(100));
  }
  throw Error("unknown preset '" + name + "' (resnet50|resnet101|resnet152|cifar-n<k>)");
}

}  // namespace sakit::net
