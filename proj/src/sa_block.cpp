#include "sakit/sa_block.hpp"

#include <set>

#include "sakit/error.hpp"
#include "sakit/layers.hpp"
#include "sakit/nn_ops.hpp"

namespace sakit::sa {

Downsample parse_downsample(const std::string& s) {
  if (s == "max") return Downsample::max;
  if (s == "avg") return Downsample::avg;
  if (s == "conv") return Downsample::conv;
  if (s == "dilated") return Downsample::dilated;
  throw Error("unknown downsample mode '" + s + "' (max|avg|conv|dilated)");
}

std::string downsample_name(Downsample d) {
  switch (d) {
    case Downsample::max: return "max";
    case Downsample::avg: return "avg";
    case Downsample::conv: return "conv";
    case Downsample::dilated: return "dilated";
  }
  return "?";
}

int SABlockSpec::out_channels() const {
  int sum = 0;
  for (int c : per_scale_channels) sum += c;
  return sum;
}

void SABlockSpec::validate() const {
  const std::string node = "sa block " + std::to_string(block_index);
  if (in_channels <= 0) throw ShapeError(node, "in_channels must be positive");
  if (scale_factors.empty()) throw ShapeError(node, "no scale factors");
  if (scale_factors.size() != per_scale_channels.size())
    throw ShapeError(node, std::to_string(scale_factors.size()) + " scale factors but " +
                               std::to_string(per_scale_channels.size()) + " channel counts");
  std::set<int> seen;
  for (int f : scale_factors) {
    if (f <= 0) throw ShapeError(node, "scale factor must be positive");
    if (!seen.insert(f).second) throw ShapeError(node, "duplicate scale factor " + std::to_string(f));
  }
  for (int c : per_scale_channels)
    if (c < 0) throw ShapeError(node, "negative channel count");
  if (out_channels() < 1) throw ShapeError(node, "all scales have zero channels");
}

Port add_conv_bn(SpecWriter& w, const std::string& name, const Port& in, int out, int k, int s, int p,
                 bool relu) {
  nn::Conv2dSpec cs{in.channels(), out, k, s, 1, p, false};
  w.add(name, "conv", {in.node}).set("out", out).set("k", k).set("s", s).set("p", p);
  w.add(name + ".bn", "bn", {name});
  Port o{name + ".bn", {out, cs.out_dim(in.height()), cs.out_dim(in.width())}};
  if (relu) {
    w.add(name + ".relu", "relu", {o.node});
    o.node = name + ".relu";
  }
  return o;
}

Port build_sa_block(SpecWriter& w, const SABlockSpec& spec, const std::string& prefix, const Port& in) {
  spec.validate();
  if (in.channels() != spec.in_channels)
    throw ShapeError(prefix, "SA block expects " + std::to_string(spec.in_channels) +
                                 " input channels, got " + std::to_string(in.channels()));
  const int h = in.height(), wd = in.width();
  std::vector<std::string> branches;
  for (std::size_t l = 0; l < spec.scale_factors.size(); ++l) {
    const int c = spec.per_scale_channels[l];
    if (c == 0) continue;
    const int f = spec.scale_factors[l];
    const std::string b = prefix + ".s" + std::to_string(f);
    std::string src = in.node;
    int conv_stride = 1, dilation = 1, pad = 1;
    if (f > 1) {
      switch (spec.downsample) {
        case Downsample::max:
        case Downsample::avg:
          w.add(b + ".pool", "pool", {src})
              .set("mode", spec.downsample == Downsample::max ? "max" : "avg")
              .set("k", f)
              .set("s", f)
              .set("p", 0)
              .set("ceil", 1);
          src = b + ".pool";
          break;
        case Downsample::conv:
          conv_stride = f;
          break;
        case Downsample::dilated:
          conv_stride = f;
          dilation = 2;
          pad = 2;
          break;
      }
    }
    auto& conv = w.add(b + ".conv", "conv", {src}).set("out", c).set("k", 3).set("s", conv_stride);
    if (dilation != 1) conv.set("d", dilation);
    conv.set("p", pad).set("block", spec.block_index).set("scale", f).set("role", "sa");
    w.add(b + ".bn", "bn", {b + ".conv"}).set("block", spec.block_index).set("scale", f).set("role", "sa");
    w.add(b + ".relu", "relu", {b + ".bn"});
    std::string out = b + ".relu";
    if (f > 1) {
      w.add(b + ".up", "resize", {out}).set("h", h).set("w", wd);
      out = b + ".up";
    }
    branches.push_back(out);
  }
  auto& cat = w.add(prefix + ".cat", "concat", branches).set("block", spec.block_index).set("role", "sacat");
  if (spec.base_channels > 0) cat.set("base", spec.base_channels);
  return Port{prefix + ".cat", {spec.out_channels(), h, wd}};
}

Port build_sa_residual(SpecWriter& w, const SAResidualSpec& spec, const std::string& prefix,
                       const Port& in) {
  if (in.channels() != spec.in_channels)
    throw ShapeError(prefix, "residual expects " + std::to_string(spec.in_channels) +
                                 " input channels, got " + std::to_string(in.channels()));
  SABlockSpec sa = spec.sa;
  sa.in_channels = spec.reduce_channels;
  Port r = add_conv_bn(w, prefix + ".reduce", in, spec.reduce_channels, 1, 1, 0, true);
  Port s = build_sa_block(w, sa, prefix + ".sa", r);
  Port e = add_conv_bn(w, prefix + ".expand", s, spec.expand_channels, 1, 1, 0, false);
  std::string shortcut = in.node;
  if (spec.shortcut == Shortcut::projection || in.channels() != spec.expand_channels) {
    shortcut = add_conv_bn(w, prefix + ".proj", in, spec.expand_channels, 1, 1, 0, false).node;
  }
  w.add(prefix + ".add", "add", {e.node, shortcut});
  w.add(prefix + ".out", "relu", {prefix + ".add"}).set("block", sa.block_index).set("role", "out");
  return Port{prefix + ".out", e.shape};
}

NetworkSpec sa_block_network(const SABlockSpec& spec, int height, int width) {
  SpecWriter w("sa_block");
  w.add("input", "input").set("shape", layers::dims_str({spec.in_channels, height, width}));
  build_sa_block(w, spec, "sa", Port{"input", {spec.in_channels, height, width}});
  return w.take();
}

}  // namespace sakit::sa
