#include "sakit/rf.hpp"

#include <cstdio>
#include <set>

#include "sakit/error.hpp"
#include "sakit/graph.hpp"

namespace sakit::rf {

namespace {

template <class... F>
struct overloaded : F... {
  using F::operator()...;
};
template <class... F>
overloaded(F...) -> overloaded<F...>;

RFState grow(const RFState& s, int kernel, int stride, int dilation) {
  return {s.jump * stride, s.rf + Rational(dilation * (kernel - 1)) * s.jump};
}

RFInterval single(std::span<const RFInterval> in, const char* op) {
  if (in.size() != 1) throw Error(std::string(op) + " expects one input interval");
  return in[0];
}

}  // namespace

RFInterval rf_propagate(const layers::OpAttrs& op, std::span<const RFInterval> incoming, int in_height) {
  return std::visit(
      overloaded{
          [&](const layers::InputOp&) { return RFInterval{}; },
          [&](const layers::ConvOp& c) {
            auto i = single(incoming, "conv");
            const auto& s = c.spec;
            return RFInterval{grow(i.min, s.kernel, s.stride, s.dilation), grow(i.max, s.kernel, s.stride, s.dilation)};
          },
          [&](const layers::PoolOp& p) {
            auto i = single(incoming, "pool");
            return RFInterval{grow(i.min, p.spec.kernel, p.spec.stride, 1), grow(i.max, p.spec.kernel, p.spec.stride, 1)};
          },
          [&](const layers::ResizeOp& r) {
            auto i = single(incoming, "resize");
            if (in_height <= 0) throw Error("resize needs the input height");
            const Rational f(in_height, r.height);
            i.min.jump *= f;
            i.max.jump *= f;
            return i;
          },
          [&](const layers::BatchNormOp&) { return single(incoming, "bn"); },
          [&](const layers::ReluOp&) { return single(incoming, "relu"); },
          [&](const layers::IdentityOp&) { return single(incoming, "identity"); },
          [&](const auto& merge) -> RFInterval {
            using T = std::decay_t<decltype(merge)>;
            if constexpr (std::is_same_v<T, layers::ConcatOp> || std::is_same_v<T, layers::AddOp>) {
              if (incoming.empty()) throw Error("merge with no inputs");
              RFInterval out = incoming[0];
              for (const auto& b : incoming.subspan(1)) {
                if (b.min.rf < out.min.rf || (b.min.rf == out.min.rf && b.min.jump < out.min.jump)) out.min = b.min;
                if (b.max.rf > out.max.rf || (b.max.rf == out.max.rf && b.max.jump > out.max.jump)) out.max = b.max;
              }
              return out;
            } else {
              throw Error("receptive field undefined for this op");
            }
          },
      },
      op);
}

std::vector<std::optional<RFInterval>> rf_analyze(const NetworkSpec& spec) {
  const auto cl = layers::compile(spec);
  std::vector<std::optional<RFInterval>> out(cl.size());
  for (std::size_t i = 0; i < cl.size(); ++i) {
    const auto& c = cl[i];
    if (std::holds_alternative<layers::LabelsOp>(c.attrs)) continue;
    std::vector<RFInterval> in;
    bool ok = true;
    for (int j : c.inputs) {
      if (!out[static_cast<std::size_t>(j)]) ok = false;
      else in.push_back(*out[static_cast<std::size_t>(j)]);
    }
    if (!ok) continue;
    const int in_h = c.inputs.empty() ? 0 : cl[static_cast<std::size_t>(c.inputs[0])].shape.size() > 1
                                                ? cl[static_cast<std::size_t>(c.inputs[0])].shape[1]
                                                : 0;
    try {
      out[i] = rf_propagate(c.attrs, in, in_h);
    } catch (const Error&) {
      out[i].reset();
    }
  }
  return out;
}

std::vector<BlockRF> rf_network_report(const NetworkSpec& spec) {
  const auto all = rf_analyze(spec);
  std::vector<BlockRF> rows;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    if (l.str_arg("role", "") != "out" || !all[i]) continue;
    rows.push_back({l.int_arg("block"), *all[i]});
  }
  return rows;
}

std::string format_rational(const Rational& r) {
  if (r.denominator() == 1) return std::to_string(r.numerator());
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.3f", boost::rational_cast<double>(r));
  return buf;
}

std::string rf_csv(const std::vector<BlockRF>& rows) {
  std::string out = "block_index,min_rf,max_rf\n";
  for (const auto& r : rows)
    out += std::to_string(r.block_index) + ',' + format_rational(r.interval.min.rf) + ',' +
           format_rational(r.interval.max.rf) + '\n';
  return out;
}

std::vector<int> rf_empirical_oracle(const NetworkSpec& spec, const std::string& node) {
  const int target = spec.index_of(node);
  if (target < 0) throw Error("no node '" + node + "'");
  // ancestors of the target, in spec order
  std::set<std::string> keep{node};
  for (int i = target; i >= 0; --i) {
    const auto& l = spec.layers[static_cast<std::size_t>(i)];
    if (!keep.count(l.name)) continue;
    for (const auto& in : l.inputs) keep.insert(in);
  }
  NetworkSpec prefix;
  prefix.name = spec.name + ".prefix";
  std::string input;
  for (int i = 0; i <= target; ++i) {
    const auto& l = spec.layers[static_cast<std::size_t>(i)];
    if (!keep.count(l.name)) continue;
    if (l.op == "input") {
      if (!input.empty()) throw Error("empirical oracle supports one input node");
      input = l.name;
    }
    prefix.layers.push_back(l);
  }
  if (input.empty()) throw Error("prefix of '" + node + "' has no input");

  Graph<double> g(prefix);
  for (auto& [name, t] : g.params()) {
    if (name.ends_with(".weight")) {
      const double fan_in = static_cast<double>(t.size()) / t.dim(0);
      t.fill(1.0 / fan_in);
    } else if (name.ends_with(".gamma")) {
      t.fill(1.0);
    } else {
      t.fill(0.0);
    }
  }
  for (auto& [name, t] : g.buffers()) t.fill(name.ends_with(".running_var") ? 1.0 : 0.0);

  const auto& in_shape = std::get<layers::InputOp>(g.compiled()[static_cast<std::size_t>(prefix.index_of(input))].attrs).shape;
  if (in_shape.size() != 3) throw Error("empirical oracle needs a CxHxW input");
  const int c = in_shape[0], h = in_shape[1], w = in_shape[2];
  const Shape& out_shape = g.compiled().back().shape;
  if (out_shape.size() != 3) throw Error("empirical oracle needs a spatial target node");
  const int oc = out_shape[0], oi = out_shape[1] / 2, oj = out_shape[2] / 2;

  std::vector<int> lo(static_cast<std::size_t>(oc), -1), hi(static_cast<std::size_t>(oc), -1);
  constexpr int kBatch = 16;
  for (int r0 = 0; r0 < h; r0 += kBatch) {
    const int n = std::min(kBatch, h - r0);
    TensorD x({n, c, h, w}, 0.0);
    for (int b = 0; b < n; ++b)
      for (int ch = 0; ch < c; ++ch)
        for (int j = 0; j < w; ++j) x.at(b, ch, r0 + b, j) = 1.0;
    Feed<double> feed;
    feed.tensors[input] = std::move(x);
    g.forward(feed, Mode::infer);
    const auto& y = g.value(node);
    for (int b = 0; b < n; ++b)
      for (int ch = 0; ch < oc; ++ch)
        if (y.at(b, ch, oi, oj) > 0) {
          auto& l = lo[static_cast<std::size_t>(ch)];
          if (l < 0) l = r0 + b;
          hi[static_cast<std::size_t>(ch)] = r0 + b;
        }
  }
  std::vector<int> extent(static_cast<std::size_t>(oc), 0);
  for (std::size_t ch = 0; ch < extent.size(); ++ch)
    if (lo[ch] >= 0) extent[ch] = hi[ch] - lo[ch] + 1;
  return extent;
}

}  // namespace sakit::rf
