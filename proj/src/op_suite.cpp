#include <algorithm>
#include <numeric>
#include <string>

#include "sakit/error.hpp"
#include "sakit/gradcheck.hpp"
#include "sakit/network_spec.hpp"
#include "sakit/nn_ops.hpp"

namespace sakit {

namespace {

struct Case {
  std::string body;  // spec lines after the input node
  Shape input;       // N x C x H x W or N x F
  Mode mode = Mode::train;
  std::vector<int> labels;
};

int pick(Rng& rng, int lo, int hi) { return lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1))); }

std::string shape_arg(const Shape& s) {
  std::string out;
  for (std::size_t i = 1; i < s.size(); ++i) out += (i > 1 ? "x" : "") + std::to_string(s[i]);
  return out;
}

Case make_case(const std::string& op, Rng& rng) {
  Case c;
  const int n = pick(rng, 1, 3), ch = pick(rng, 1, 3);
  int h = pick(rng, 1, 7), w = pick(rng, 1, 7);
  const std::string probe = "l = sum(seed=" + std::to_string(rng.below(1000)) + ") <- ";
  if (op == "conv") {
    for (;;) {
      const int k = std::array{1, 3, 5}[rng.below(3)], s = pick(rng, 1, 2), d = pick(rng, 1, 2);
      const int p = pick(rng, 0, d * (k - 1) / 2 + 1);
      h = pick(rng, 1, 7);
      w = pick(rng, 1, 7);
      if (h + 2 * p - d * (k - 1) - 1 < 0 || w + 2 * p - d * (k - 1) - 1 < 0) continue;
      c.body = "y = conv(out=" + std::to_string(pick(rng, 1, 3)) + ", k=" + std::to_string(k) + ", s=" +
               std::to_string(s) + ", d=" + std::to_string(d) + ", p=" + std::to_string(p) +
               ", bias=" + std::to_string(pick(rng, 0, 1)) + ") <- x\n" + probe + "y\n";
      break;
    }
  } else if (op == "pool_max" || op == "pool_avg") {
    for (;;) {
      const int k = pick(rng, 1, 3), s = pick(rng, 1, 3), p = pick(rng, 0, k / 2);
      const bool ceil = rng.bernoulli(0.5);
      h = pick(rng, 1, 7);
      w = pick(rng, 1, 7);
      if (!ceil && (h + 2 * p < k || w + 2 * p < k)) continue;
      c.body = "y = pool(mode=" + std::string(op == "pool_max" ? "max" : "avg") + ", k=" + std::to_string(k) +
               ", s=" + std::to_string(s) + ", p=" + std::to_string(p) + ", ceil=" + (ceil ? "1" : "0") +
               ") <- x\n" + probe + "y\n";
      break;
    }
  } else if (op == "resize") {
    c.body = "y = resize(h=" + std::to_string(pick(rng, 1, 9)) + ", w=" + std::to_string(pick(rng, 1, 9)) +
             ") <- x\n" + probe + "y\n";
  } else if (op == "bn_train" || op == "bn_infer") {
    if (op == "bn_train")
      while (n * h * w < 2) h = pick(rng, 1, 7);
    c.mode = op == "bn_train" ? Mode::train : Mode::infer;
    c.body = "y = bn() <- x\n" + probe + "y\n";
  } else if (op == "relu") {
    c.body = "y = relu() <- x\n" + probe + "y\n";
  } else if (op == "concat") {
    c.body = "a = conv(out=" + std::to_string(pick(rng, 1, 3)) + ", k=1) <- x\ny = concat() <- x, a\n" + probe + "y\n";
  } else if (op == "add") {
    c.body = "a = conv(out=" + std::to_string(ch) + ", k=3, p=1) <- x\ny = add() <- a, x\n" + probe + "y\n";
  } else if (op == "gap") {
    c.body = "y = gap() <- x\n" + probe + "y\n";
  } else if (op == "dense") {
    c.body = "y = dense(out=" + std::to_string(pick(rng, 1, 4)) + ", bias=" + std::to_string(pick(rng, 0, 1)) +
             ") <- x\n" + probe + "y\n";
  } else if (op == "xent") {
    const int k = pick(rng, 2, 5);
    c.body = "y = dense(out=" + std::to_string(k) + ") <- x\nt = labels(classes=" + std::to_string(k) +
             ")\nl = xent() <- y, t\n";
    for (int i = 0; i < n; ++i) c.labels.push_back(pick(rng, 0, k - 1));
  } else {
    throw Error("no gradcheck case for op '" + op + "'");
  }
  c.input = {n, ch, h, w};
  return c;
}

TensorD spaced_values(const Shape& s, Rng& rng) {
  TensorD t(s);
  const std::size_t n = t.size();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
  const double step = 2.0 / static_cast<double>(n);
  // (i - n/2 + 1/4) * step is never zero for integer i
  for (std::size_t i = 0; i < n; ++i) t[i] = (static_cast<double>(perm[i]) - n / 2.0 + 0.25) * step;
  return t;
}

}  // namespace

const std::vector<std::string>& suite_ops() {
  static const std::vector<std::string> ops{"conv", "pool_max", "pool_avg", "resize", "bn_train", "bn_infer",
                                            "relu", "concat",   "add",      "gap",    "dense",    "xent"};
  return ops;
}

std::vector<OpSuiteResult> op_gradcheck_suite(int cases_per_op, std::uint64_t seed, const GradcheckOptions& options) {
  if (cases_per_op < 1) throw Error("cases per op must be positive");
  std::vector<OpSuiteResult> out;
  const Rng root(seed);
  for (std::size_t oi = 0; oi < suite_ops().size(); ++oi) {
    const std::string& op = suite_ops()[oi];
    OpSuiteResult r{op, 0, 0, 0, {}};
    for (int k = 0; k < cases_per_op; ++k) {
      Rng rng = root.split(oi * 100003 + static_cast<std::uint64_t>(k));
      const Case c = make_case(op, rng);
      const std::string text = "network gc_" + op + "\nx = input(shape=" + shape_arg(c.input) + ")\n" + c.body;
      Graph<double> g(NetworkSpec::parse(text));
      initialize_parameters(g, rng.next_u64());
      for (auto& [name, t] : g.buffers()) {
        for (auto& v : t.data()) v = name.ends_with(".running_var") ? rng.uniform(0.5, 2.0) : rng.uniform(-0.5, 0.5);
      }
      // non-trivial affine so gamma/beta gradients are not degenerate
      for (auto& [name, t] : g.params())
        if (name.ends_with(".gamma") || name.ends_with(".beta") || name.ends_with(".bias"))
          for (auto& v : t.data()) v = rng.uniform(-1.5, 1.5);
      Feed<double> feed;
      feed.tensors["x"] = spaced_values(c.input, rng);
      if (!c.labels.empty()) feed.labels["t"] = c.labels;
      GradcheckOptions o = options;
      o.mode = c.mode;
      const auto rep = gradcheck(g, feed, "l", o);
      ++r.cases;
      if (!rep.passed()) ++r.failed;
      if (rep.max_rel_error() >= r.max_rel_error) {
        r.max_rel_error = rep.max_rel_error();
        r.worst_case = text;
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace sakit
