#include "sakit/layers.hpp"

#include <map>
#include <set>
#include <sstream>

namespace sakit {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

}  // namespace sakit

namespace sakit::layers {

namespace {

const std::set<std::string>& annotation_keys() {
  static const std::set<std::string> keys{"block", "scale", "role", "base"};
  return keys;
}

void check_args(const LayerSpec& l, std::initializer_list<const char*> allowed) {
  for (const auto& [k, v] : l.args) {
    if (is_annotation_key(k)) continue;
    bool ok = false;
    for (const char* a : allowed) ok = ok || k == a;
    if (!ok) throw ShapeError(l.name, "unknown argument '" + k + "' for op " + l.op);
  }
}

void check_arity(const LayerSpec& l, std::size_t lo, std::size_t hi) {
  if (l.inputs.size() < lo || l.inputs.size() > hi)
    throw ShapeError(l.name, l.op + " takes " + std::to_string(lo) +
                                 (hi != lo ? ".." + std::to_string(hi) : std::string()) +
                                 " inputs, got " + std::to_string(l.inputs.size()));
}

int positive(const LayerSpec& l, const char* key, int value) {
  if (value <= 0) throw ShapeError(l.name, std::string("argument '") + key + "' must be positive");
  return value;
}

void require_spatial(const LayerSpec& l, const Shape& s) {
  if (s.size() != 3) throw ShapeError(l.name, l.op + " needs a CxHxW input, got " + shape_str(s));
}

}  // namespace

bool is_annotation_key(const std::string& key) { return annotation_keys().count(key) > 0; }

Shape parse_dims(const std::string& text) {
  Shape s;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t x = text.find('x', start);
    if (x == std::string::npos) x = text.size();
    const std::string part = text.substr(start, x - start);
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(part, &used);
    } catch (const std::exception&) {
      throw ShapeError("", "bad dims '" + text + "'");
    }
    if (used != part.size() || v <= 0) throw ShapeError("", "bad dims '" + text + "'");
    s.push_back(v);
    start = x + 1;
    if (x == text.size()) break;
  }
  return s;
}

std::string dims_str(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out;
}

std::vector<CompiledLayer> compile(const NetworkSpec& spec) {
  std::vector<CompiledLayer> out;
  std::map<std::string, int> index;
  out.reserve(spec.layers.size());
  for (const LayerSpec& l : spec.layers) {
    if (index.count(l.name)) throw ShapeError(l.name, "duplicate layer name");
    CompiledLayer c;
    c.name = l.name;
    std::vector<const CompiledLayer*> ins;
    for (const auto& in : l.inputs) {
      auto it = index.find(in);
      if (it == index.end()) throw ShapeError(l.name, "input '" + in + "' does not precede this node");
      c.inputs.push_back(it->second);
      ins.push_back(&out[static_cast<std::size_t>(it->second)]);
    }
    for (const auto* in : ins) {
      if (!in->batched && l.op != "add" && l.op != "identity")
        throw ShapeError(l.name, "input '" + in->name + "' is a scalar");
      if (std::holds_alternative<LabelsOp>(in->attrs) && l.op != "xent")
        throw ShapeError(l.name, "labels can only feed xent");
    }

    if (l.op == "input") {
      check_args(l, {"shape"});
      check_arity(l, 0, 0);
      c.attrs = InputOp{parse_dims(l.arg("shape"))};
      c.shape = std::get<InputOp>(c.attrs).shape;
    } else if (l.op == "labels") {
      check_args(l, {"classes"});
      check_arity(l, 0, 0);
      c.attrs = LabelsOp{positive(l, "classes", l.int_arg("classes"))};
      c.shape = {1};
    } else if (l.op == "conv") {
      check_args(l, {"out", "k", "s", "d", "p", "bias"});
      check_arity(l, 1, 1);
      const Shape& x = ins[0]->shape;
      require_spatial(l, x);
      nn::Conv2dSpec s;
      s.in_channels = x[0];
      s.out_channels = positive(l, "out", l.int_arg("out"));
      s.kernel = positive(l, "k", l.int_arg("k"));
      s.stride = positive(l, "s", l.int_arg("s", 1));
      s.dilation = positive(l, "d", l.int_arg("d", 1));
      s.padding = l.int_arg("p", 0);
      s.bias = l.int_arg("bias", 0) != 0;
      if (s.padding < 0) throw ShapeError(l.name, "negative padding");
      try {
        c.shape = {s.out_channels, s.out_dim(x[1]), s.out_dim(x[2])};
      } catch (const ShapeError& e) {
        throw ShapeError(l.name, e.what());
      }
      c.params.push_back({l.name + ".weight", s.weight_shape(), true});
      if (s.bias) c.params.push_back({l.name + ".bias", {s.out_channels}, true});
      c.attrs = ConvOp{s};
    } else if (l.op == "pool") {
      check_args(l, {"mode", "k", "s", "p", "ceil"});
      check_arity(l, 1, 1);
      const Shape& x = ins[0]->shape;
      require_spatial(l, x);
      nn::Pool2dSpec s;
      const std::string mode = l.str_arg("mode", "max");
      if (mode == "max")
        s.mode = nn::PoolMode::max;
      else if (mode == "avg")
        s.mode = nn::PoolMode::avg;
      else
        throw ShapeError(l.name, "pool mode must be max or avg");
      s.kernel = positive(l, "k", l.int_arg("k"));
      s.stride = positive(l, "s", l.int_arg("s", s.kernel));
      s.padding = l.int_arg("p", 0);
      s.ceil_mode = l.int_arg("ceil", 0) != 0;
      if (s.padding < 0 || 2 * s.padding > s.kernel)
        throw ShapeError(l.name, "pool padding must be within [0, k/2]");
      try {
        c.shape = {x[0], s.out_dim(x[1]), s.out_dim(x[2])};
      } catch (const ShapeError& e) {
        throw ShapeError(l.name, e.what());
      }
      c.attrs = PoolOp{s};
    } else if (l.op == "resize") {
      check_args(l, {"h", "w"});
      check_arity(l, 1, 1);
      require_spatial(l, ins[0]->shape);
      ResizeOp r{positive(l, "h", l.int_arg("h")), positive(l, "w", l.int_arg("w"))};
      c.shape = {ins[0]->shape[0], r.height, r.width};
      c.attrs = r;
    } else if (l.op == "bn") {
      check_args(l, {"eps", "momentum"});
      check_arity(l, 1, 1);
      require_spatial(l, ins[0]->shape);
      nn::BatchNormSpec s;
      s.channels = ins[0]->shape[0];
      s.eps = l.real_arg("eps", 1e-5);
      s.momentum = l.real_arg("momentum", 0.1);
      if (!(s.eps >= 0) || !(s.momentum >= 0 && s.momentum <= 1))
        throw ShapeError(l.name, "bn eps must be >= 0 and momentum in [0, 1]");
      c.shape = ins[0]->shape;
      c.params.push_back({l.name + ".gamma", {s.channels}, true});
      c.params.push_back({l.name + ".beta", {s.channels}, true});
      c.params.push_back({l.name + ".running_mean", {s.channels}, false});
      c.params.push_back({l.name + ".running_var", {s.channels}, false});
      c.attrs = BatchNormOp{s};
    } else if (l.op == "relu" || l.op == "identity") {
      check_args(l, {});
      check_arity(l, 1, 1);
      c.shape = ins[0]->shape;
      c.batched = ins[0]->batched;
      if (l.op == "relu")
        c.attrs = ReluOp{};
      else
        c.attrs = IdentityOp{};
    } else if (l.op == "concat") {
      check_args(l, {});
      check_arity(l, 1, 64);
      Shape s = ins[0]->shape;
      s[0] = 0;
      for (const auto* in : ins) {
        Shape a = in->shape, b = ins[0]->shape;
        a[0] = b[0] = 0;
        if (a != b) throw ShapeError(l.name, "concat inputs differ outside the channel axis");
        s[0] += in->shape[0];
      }
      c.shape = s;
      c.attrs = ConcatOp{};
    } else if (l.op == "add") {
      check_args(l, {});
      check_arity(l, 2, 2);
      if (ins[0]->shape != ins[1]->shape || ins[0]->batched != ins[1]->batched)
        throw ShapeError(l.name, "add operands differ: " + shape_str(ins[0]->shape) + " vs " +
                                     shape_str(ins[1]->shape));
      c.shape = ins[0]->shape;
      c.batched = ins[0]->batched;
      c.attrs = AddOp{};
    } else if (l.op == "gap") {
      check_args(l, {});
      check_arity(l, 1, 1);
      require_spatial(l, ins[0]->shape);
      c.shape = {ins[0]->shape[0]};
      c.attrs = GlobalAvgPoolOp{};
    } else if (l.op == "dense") {
      check_args(l, {"out", "bias"});
      check_arity(l, 1, 1);
      DenseOp d;
      d.in_features = static_cast<int>(shape_size(ins[0]->shape));
      d.out_features = positive(l, "out", l.int_arg("out"));
      d.bias = l.int_arg("bias", 1) != 0;
      c.shape = {d.out_features};
      c.params.push_back({l.name + ".weight", {d.out_features, d.in_features}, true});
      if (d.bias) c.params.push_back({l.name + ".bias", {d.out_features}, true});
      c.attrs = d;
    } else if (l.op == "xent") {
      check_args(l, {});
      check_arity(l, 2, 2);
      const auto* labels = std::get_if<LabelsOp>(&ins[1]->attrs);
      if (!labels) throw ShapeError(l.name, "second xent input must be a labels node");
      if (ins[0]->shape.size() != 1 || ins[0]->shape[0] != labels->classes)
        throw ShapeError(l.name, "logits shape " + shape_str(ins[0]->shape) + " does not match " +
                                     std::to_string(labels->classes) + " classes");
      c.shape = {1};
      c.batched = false;
      c.attrs = SoftmaxXentOp{};
    } else if (l.op == "sum") {
      check_args(l, {"seed"});
      check_arity(l, 1, 1);
      c.shape = {1};
      c.batched = false;
      c.attrs = SumOp{static_cast<std::uint64_t>(l.int_arg("seed", 0))};
    } else {
      throw ShapeError(l.name, "unsupported op '" + l.op + "'");
    }
    index[l.name] = static_cast<int>(out.size());
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace sakit::layers
