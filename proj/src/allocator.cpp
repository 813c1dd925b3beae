#include "sakit/allocator.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>

#include "sakit/error.hpp"
#include "sakit/layers.hpp"

namespace sakit::alloc {

void ProjectionConfig::validate() const {
  if (!std::isfinite(exponent)) throw Error("projection exponent must be finite");
  if (min_total_neurons_per_block < 1) throw Error("min_total_neurons_per_block must be >= 1");
}

namespace {

double key(const NeuronRecord& r, double b) {
  return b == 0 ? r.importance : r.importance / std::pow(static_cast<double>(r.cost), b);
}

void check_records(std::span<const NeuronRecord> records) {
  if (records.empty()) throw Error("no neuron records to project");
  for (const auto& r : records) {
    if (r.cost <= 0) throw Error("neuron cost must be positive");
    if (!(r.importance >= 0) || !std::isfinite(r.importance))
      throw Error("neuron importance must be finite and nonnegative");
  }
}

// Forces top-ranked unselected neurons until the minimum count is met.
void enforce_minimum(std::span<const NeuronRecord> records, const std::vector<std::size_t>& order,
                     const ProjectionConfig& config, Selection& s) {
  const auto need = static_cast<std::size_t>(config.min_total_neurons_per_block);
  if (s.selected.size() >= need) return;
  std::vector<bool> taken(records.size(), false);
  for (auto i : s.selected) taken[i] = true;
  std::size_t have = s.selected.size();
  for (auto i : order) {
    if (have >= need) break;
    if (taken[i]) continue;
    taken[i] = true;
    ++have;
    s.cost += records[i].cost;
    s.forced = true;
  }
  s.selected.clear();
  for (auto i : order)
    if (taken[i]) s.selected.push_back(i);
}

}  // namespace

std::vector<std::size_t> rank_order(std::span<const NeuronRecord> records, const ProjectionConfig& config) {
  std::vector<double> keys(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) keys[i] = key(records[i], config.exponent);
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (keys[a] != keys[b]) return keys[a] > keys[b];
    if (records[a].scale != records[b].scale) return records[a].scale < records[b].scale;
    return records[a].channel < records[b].channel;
  });
  return order;
}

Selection greedy_project(std::span<const NeuronRecord> records, std::int64_t budget,
                         const ProjectionConfig& config) {
  config.validate();
  check_records(records);
  if (budget <= 0) throw Error("budget must be positive");
  const auto order = rank_order(records, config);
  Selection s;
  for (auto i : order) {
    if (s.cost + records[i].cost <= budget) {
      s.selected.push_back(i);
      s.cost += records[i].cost;
    }
  }
  enforce_minimum(records, order, config, s);
  return s;
}

OracleResult brute_oracle(std::span<const NeuronRecord> records, std::int64_t budget,
                          const ProjectionConfig& config) {
  config.validate();
  check_records(records);
  if (budget <= 0) throw Error("budget must be positive");
  const std::size_t n = records.size();
  if (n > 24) throw Error("brute_oracle supports at most 24 records");

  // rank[i] = number of records that precede i
  std::vector<std::size_t> rank(n, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double ki = key(records[i], config.exponent), kj = key(records[j], config.exponent);
      bool before;
      if (kj != ki) before = kj > ki;
      else if (records[j].scale != records[i].scale) before = records[j].scale < records[i].scale;
      else if (records[j].channel != records[i].channel) before = records[j].channel < records[i].channel;
      else before = j < i;
      rank[i] += before ? 1 : 0;
    }
  std::vector<std::size_t> by_rank(n);
  for (std::size_t i = 0; i < n; ++i) by_rank[rank[i]] = i;

  // Bit (n-1-r) holds the record of rank r, so the numerically largest
  // feasible mask is the lexicographically greatest in rank order.
  std::vector<std::int64_t> cost(n);
  std::vector<double> value(n);
  for (std::size_t r = 0; r < n; ++r) {
    cost[n - 1 - r] = records[by_rank[r]].cost;
    value[n - 1 - r] = records[by_rank[r]].importance;
  }
  std::uint32_t mask = 0, best_lex = 0, best_knap = 0;
  std::int64_t c = 0;
  double v = 0, best_value = 0;
  const std::uint32_t total = 1u << n;
  for (std::uint32_t g = 1; g < total; ++g) {
    const int bit = std::countr_zero(g);
    mask ^= 1u << bit;
    if (mask & (1u << bit)) {
      c += cost[static_cast<std::size_t>(bit)];
      v += value[static_cast<std::size_t>(bit)];
    } else {
      c -= cost[static_cast<std::size_t>(bit)];
      v -= value[static_cast<std::size_t>(bit)];
    }
    if (c <= budget) {
      if (mask > best_lex) best_lex = mask;
      if (v > best_value) {
        best_value = v;
        best_knap = mask;
      }
    }
  }

  OracleResult out;
  for (std::size_t r = 0; r < n; ++r) {
    const std::uint32_t b = 1u << (n - 1 - r);
    if (best_lex & b) {
      out.greedy.selected.push_back(by_rank[r]);
      out.greedy.cost += records[by_rank[r]].cost;
    }
    if (best_knap & b) out.knapsack_set.push_back(by_rank[r]);
  }
  enforce_minimum(records, by_rank, config, out.greedy);
  for (auto i : out.knapsack_set) out.knapsack_value += records[i].importance;
  return out;
}

std::vector<int> scale_counts(std::span<const NeuronRecord> records, const Selection& s,
                              const std::vector<int>& scale_factors) {
  std::vector<int> counts(scale_factors.size(), 0);
  for (auto i : s.selected) {
    auto it = std::find(scale_factors.begin(), scale_factors.end(), records[i].scale);
    if (it == scale_factors.end()) throw Error("record scale " + std::to_string(records[i].scale) + " not in plan scales");
    counts[static_cast<std::size_t>(it - scale_factors.begin())] += 1;
  }
  return counts;
}

std::vector<NeuronRecord> extract_importance(const Checkpoint& ckpt, const NetworkSpec& spec) {
  const auto cl = layers::compile(spec);
  // grid of each block's SA output
  std::map<int, std::pair<int, int>> grid;
  for (std::size_t i = 0; i < cl.size(); ++i)
    if (spec.layers[i].str_arg("role", "") == "sacat") grid[spec.layers[i].int_arg("block")] = {cl[i].shape[1], cl[i].shape[2]};

  std::vector<NeuronRecord> out;
  for (std::size_t i = 0; i < cl.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    if (l.op != "conv" || l.str_arg("role", "") != "sa") continue;
    const int k = l.int_arg("block");
    std::string bn;
    for (const auto& m : spec.layers)
      if (m.op == "bn" && m.inputs.size() == 1 && m.inputs[0] == l.name) bn = m.name;
    if (bn.empty()) throw ShapeError(l.name, "SA conv is not followed by a BN layer");
    const AnyTensor* gamma = ckpt.find(bn + ".gamma");
    if (!gamma) throw IoError("checkpoint lacks '" + bn + ".gamma'");
    const TensorD g = as_double(*gamma);
    const int channels = cl[i].shape[0];
    if (static_cast<int>(g.size()) != channels) throw ShapeError(bn, "gamma size does not match conv");
    auto it = grid.find(k);
    if (it == grid.end()) throw ShapeError(l.name, "block has no SA concat");
    const int cin = cl[static_cast<std::size_t>(cl[i].inputs[0])].shape[0];
    const std::int64_t cost = flops::neuron_cost(cin, l.int_arg("scale"), it->second.first, it->second.second);
    for (int c = 0; c < channels; ++c)
      out.push_back({k, l.int_arg("scale"), c, g[static_cast<std::size_t>(c)],
                     std::abs(g[static_cast<std::size_t>(c)]), cost});
  }
  return out;
}

ProjectionResult project_all(const std::vector<NeuronRecord>& records, const std::vector<std::int64_t>& budgets,
                             const std::vector<int>& scale_factors, const ProjectionConfig& config) {
  std::map<int, std::vector<NeuronRecord>> groups;
  for (const auto& r : records) groups[r.block].push_back(r);
  ProjectionResult res;
  res.plan.scale_factors = scale_factors;
  res.plan.exponent = config.exponent;
  int expect = 1;
  for (const auto& [k, recs] : groups) {
    if (k != expect) throw Error("importance records skip block " + std::to_string(expect));
    ++expect;
    if (static_cast<std::size_t>(k) > budgets.size()) throw Error("no budget for block " + std::to_string(k));
    BlockResult b;
    b.block = k;
    b.budget = budgets[static_cast<std::size_t>(k - 1)];
    b.selection = greedy_project(recs, b.budget, config);
    b.counts = scale_counts(recs, b.selection, scale_factors);
    if (!b.selection.forced && b.selection.cost > b.budget)
      throw Error("internal: block " + std::to_string(k) + " exceeds its budget");
    res.plan.rows.push_back(b.counts);
    res.plan.budgets.push_back(b.budget);
    res.blocks.push_back(std::move(b));
  }
  if (groups.size() != budgets.size())
    throw Error(std::to_string(budgets.size()) + " budgets for " + std::to_string(groups.size()) + " blocks");
  return res;
}

namespace {

std::vector<std::vector<std::string>> read_csv(const std::string& text, const std::string& header) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  bool seen_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!seen_header) {
      if (line != header) throw ParseError(lineno, "expected header '" + header + "'");
      seen_header = true;
      continue;
    }
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
      auto comma = line.find(',', start);
      cells.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    const auto want = static_cast<std::size_t>(std::count(header.begin(), header.end(), ',') + 1);
    if (cells.size() != want)
      throw ParseError(lineno, "expected " + std::to_string(want) + " fields, got " + std::to_string(cells.size()));
    cells.push_back(std::to_string(lineno));
    rows.push_back(std::move(cells));
  }
  if (!seen_header) throw ParseError(lineno, "empty file, expected header '" + header + "'");
  return rows;
}

template <class T>
T number(const std::string& s, int line) {
  try {
    std::size_t used = 0;
    T v;
    if constexpr (std::is_same_v<T, double>) v = std::stod(s, &used);
    else v = static_cast<T>(std::stoll(s, &used));
    if (used != s.size()) throw std::invalid_argument("junk");
    return v;
  } catch (const std::exception&) {
    throw ParseError(line, "bad number '" + s + "'");
  }
}

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string importance_csv(const std::vector<NeuronRecord>& records) {
  std::string out = "k,scale,channel,gamma,abs_gamma,unit_cost\n";
  for (const auto& r : records)
    out += std::to_string(r.block) + ',' + std::to_string(r.scale) + ',' + std::to_string(r.channel) + ',' +
           g17(r.gamma) + ',' + g17(r.importance) + ',' + std::to_string(r.cost) + '\n';
  return out;
}

std::vector<NeuronRecord> parse_importance_csv(const std::string& text) {
  std::vector<NeuronRecord> out;
  for (const auto& c : read_csv(text, "k,scale,channel,gamma,abs_gamma,unit_cost")) {
    const int line = std::stoi(c[6]);
    NeuronRecord r{number<int>(c[0], line), number<int>(c[1], line), number<int>(c[2], line),
                   number<double>(c[3], line), number<double>(c[4], line), number<std::int64_t>(c[5], line)};
    if (r.cost <= 0) throw ParseError(line, "unit_cost must be positive");
    if (r.importance < 0) throw ParseError(line, "abs_gamma must be nonnegative");
    out.push_back(r);
  }
  return out;
}

std::string budgets_csv(const std::vector<flops::BlockBudget>& budgets) {
  std::string out = "k,budget\n";
  for (const auto& b : budgets) out += std::to_string(b.block_index) + ',' + std::to_string(b.budget) + '\n';
  return out;
}

std::vector<std::int64_t> parse_budgets_csv(const std::string& text) {
  std::vector<std::int64_t> out;
  for (const auto& c : read_csv(text, "k,budget")) {
    const int line = std::stoi(c[2]);
    const int k = number<int>(c[0], line);
    if (k != static_cast<int>(out.size()) + 1) throw ParseError(line, "budgets must list blocks 1..K in order");
    const auto b = number<std::int64_t>(c[1], line);
    if (b <= 0) throw ParseError(line, "budget must be positive");
    out.push_back(b);
  }
  return out;
}

}  // namespace sakit::alloc
