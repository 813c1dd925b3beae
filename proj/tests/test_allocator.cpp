#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "sakit/allocator.hpp"
#include "sakit/error.hpp"
#include "sakit/layers.hpp"
#include "sakit/rng.hpp"

using namespace sakit;
using alloc::NeuronRecord;

namespace {

std::vector<NeuronRecord> five() {
  // A..E = channels 0..4 of one scale
  return {{1, 1, 0, 0.9, 0.9, 4}, {1, 1, 1, 0.8, 0.8, 4}, {1, 1, 2, 0.7, 0.7, 4},
          {1, 1, 3, 0.6, 0.6, 1}, {1, 1, 4, 0.5, 0.5, 1}};
}

std::set<std::size_t> as_set(const std::vector<std::size_t>& v) { return {v.begin(), v.end()}; }

std::vector<NeuronRecord> random_records(Rng& rng, std::size_t n, bool ties) {
  const int scales[] = {1, 2, 4, 7};
  std::vector<NeuronRecord> r;
  std::vector<int> next_channel(4, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto s = rng.below(4);
    NeuronRecord x;
    x.block = 1;
    x.scale = scales[s];
    x.channel = next_channel[s]++;
    x.importance = ties ? static_cast<double>(rng.below(3)) * 0.25 : rng.uniform();
    x.gamma = rng.bernoulli(0.5) ? x.importance : -x.importance;
    x.cost = ties ? std::int64_t{16} * (1 + static_cast<std::int64_t>(s % 2)) : 1 + static_cast<std::int64_t>(rng.below(50));
    r.push_back(x);
  }
  return r;
}

// Checkpoint holding only the SA BN gammas of a spec, drawn from rng.
Checkpoint gamma_checkpoint(const NetworkSpec& spec, Rng& rng) {
  Checkpoint c;
  c.spec_text = spec.to_text();
  const auto cl = layers::compile(spec);
  for (std::size_t i = 0; i < cl.size(); ++i) {
    const auto& l = spec.layers[i];
    if (l.op == "bn" && l.str_arg("role", "") == "sa") {
      const int n = cl[i].shape[0];
      Tensor g({n});
      for (auto& v : g.data()) v = static_cast<float>(rng.uniform(-1, 1));
      c.put(l.name + ".gamma", g);
    }
  }
  return c;
}

}  // namespace

TEST(Greedy, ExampleExponentZero) {
  auto r = five();
  auto s = alloc::greedy_project(r, 10, {});
  EXPECT_EQ(as_set(s.selected), (std::set<std::size_t>{0, 1, 3, 4}));
  EXPECT_EQ(s.cost, 10);
  EXPECT_FALSE(s.forced);
}

TEST(Greedy, ExampleExponentOne) {
  auto r = five();
  alloc::ProjectionConfig cfg;
  cfg.exponent = 1;
  auto order = alloc::rank_order(r, cfg);
  EXPECT_EQ(order, (std::vector<std::size_t>{3, 4, 0, 1, 2}));
  auto s = alloc::greedy_project(r, 10, cfg);
  EXPECT_EQ(s.selected, (std::vector<std::size_t>{3, 4, 0, 1}));
  EXPECT_EQ(s.cost, 10);
}

TEST(Greedy, UnconstrainedSelectsAll) {
  auto r = five();
  EXPECT_EQ(alloc::greedy_project(r, 14, {}).selected.size(), 5u);
  EXPECT_EQ(alloc::greedy_project(r, 1000, {}).selected.size(), 5u);
}

TEST(Greedy, ForceSelectsTopWhenNothingFits) {
  auto r = five();
  for (auto& x : r) x.cost = 100;
  auto s = alloc::greedy_project(r, 10, {});
  EXPECT_TRUE(s.forced);
  EXPECT_EQ(s.selected, (std::vector<std::size_t>{0}));
}

TEST(Greedy, Errors) {
  std::vector<NeuronRecord> none;
  EXPECT_THROW(alloc::greedy_project(none, 10, {}), Error);
  auto r = five();
  EXPECT_THROW(alloc::greedy_project(r, 0, {}), Error);
  alloc::ProjectionConfig bad;
  bad.exponent = INFINITY;
  EXPECT_THROW(alloc::greedy_project(r, 10, bad), Error);
  r[0].cost = 0;
  EXPECT_THROW(alloc::greedy_project(r, 10, {}), Error);
}

TEST(Greedy, AllEqualImportanceTakesTieBreakPrefix) {
  std::vector<NeuronRecord> r;
  for (int s : {4, 1, 2})
    for (int c = 0; c < 3; ++c) r.push_back({1, s, c, 1.0, 1.0, 3});
  auto sel = alloc::greedy_project(r, 12, {});
  ASSERT_EQ(sel.selected.size(), 4u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(r[sel.selected[i]].scale, 1);
  EXPECT_EQ(r[sel.selected[3]].scale, 2);
  EXPECT_EQ(r[sel.selected[3]].channel, 0);
}

TEST(BruteOracle, SingleRecord) {
  std::vector<NeuronRecord> r{{1, 1, 0, 0.3, 0.3, 5}};
  auto o = alloc::brute_oracle(r, 5, {});
  EXPECT_EQ(o.greedy.selected, (std::vector<std::size_t>{0}));
  EXPECT_FALSE(o.greedy.forced);
  EXPECT_THROW(alloc::brute_oracle(std::vector<NeuronRecord>(25, r[0]), 5, {}), Error);
}

TEST(BruteOracle, MatchesGreedyOnRandomInstances) {
  Rng rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.below(20);
    const bool ties = trial % 4 == 0;
    auto r = random_records(rng, n, ties);
    alloc::ProjectionConfig cfg;
    cfg.exponent = std::array{0.0, 0.5, 1.0, 2.0}[rng.below(4)];
    std::int64_t total = 0;
    for (const auto& x : r) total += x.cost;
    const auto budget = 1 + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(total + 10)));
    auto g = alloc::greedy_project(r, budget, cfg);
    auto o = alloc::brute_oracle(r, budget, cfg);
    ASSERT_EQ(g.selected, o.greedy.selected) << "trial " << trial;
    EXPECT_EQ(g.cost, o.greedy.cost);
    EXPECT_EQ(g.forced, o.greedy.forced);
    if (!g.forced) {
      EXPECT_LE(g.cost, budget);
      double v = 0;
      for (auto i : g.selected) v += r[i].importance;
      EXPECT_LE(v, o.knapsack_value + 1e-9);
    } else {
      EXPECT_EQ(g.selected.size(), 1u);
    }
  }
}

TEST(Greedy, RescalingInvariantAtExponentZero) {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    auto r = random_records(rng, 1 + rng.below(40), trial % 3 == 0);
    const std::int64_t budget = 1 + static_cast<std::int64_t>(rng.below(400));
    auto a = alloc::greedy_project(r, budget, {});
    const double scale = std::array{0.5, 3.0, 1e3}[rng.below(3)];
    for (auto& x : r) x.importance *= scale;
    EXPECT_EQ(alloc::greedy_project(r, budget, {}).selected, a.selected);
  }
}

TEST(Greedy, DeterministicAndCountsPartitionSelection) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    auto r = random_records(rng, 1 + rng.below(60), trial % 2 == 0);
    auto a = alloc::greedy_project(r, 200, {});
    auto b = alloc::greedy_project(r, 200, {});
    EXPECT_EQ(a.selected, b.selected);
    auto counts = alloc::scale_counts(r, a, {1, 2, 4, 7});
    int sum = 0;
    for (int c : counts) sum += c;
    EXPECT_EQ(static_cast<std::size_t>(sum), a.selected.size());
    const std::vector<int> factors{1, 2, 4, 7};
    std::vector<int> direct(4, 0);
    for (auto i : a.selected)
      direct[static_cast<std::size_t>(std::find(factors.begin(), factors.end(), r[i].scale) - factors.begin())]++;
    EXPECT_EQ(counts, direct);
  }
}

TEST(Extract, AbsoluteGammaPerChannel) {
  net::Architecture base = net::build_cifar_resnet(1, 10);
  auto spec = net::lower(net::build_seed(base, {1, 2, 4}));
  Rng rng(5);
  auto ckpt = gamma_checkpoint(spec, rng);
  ckpt.put("b1.sa.s1.bn.gamma", Tensor({16}, std::vector<float>(16, 0.5f)));
  auto g = std::get<Tensor>(*ckpt.find("b1.sa.s2.bn.gamma"));
  g[0] = 0.5f;
  g[1] = -0.5f;
  ckpt.put("b1.sa.s2.bn.gamma", g);
  auto recs = alloc::extract_importance(ckpt, spec);
  EXPECT_EQ(recs.size(), 3u * (16 + 32 + 64));
  for (const auto& r : recs) {
    EXPECT_EQ(r.importance, std::abs(r.gamma));
    if (r.block == 1 && r.scale == 2 && r.channel < 2) {
      EXPECT_EQ(r.importance, 0.5);
    }
  }
  // block 1 grid is 32x32 with 16 input channels
  for (const auto& r : recs) {
    if (r.block == 1) {
      EXPECT_EQ(r.cost, 9LL * 16 * ((32 + r.scale - 1) / r.scale) * ((32 + r.scale - 1) / r.scale));
    }
  }
}

TEST(Extract, SeedScaleNet50BlockOneHas256Records) {
  auto spec = net::lower(net::build_seed(net::build_resnet(50), {1, 2, 4, 7}));
  Rng rng(1);
  auto recs = alloc::extract_importance(gamma_checkpoint(spec, rng), spec);
  EXPECT_EQ(std::count_if(recs.begin(), recs.end(), [](const NeuronRecord& r) { return r.block == 1; }), 256);
}

TEST(Extract, FreshInitGivesEqualImportance) {
  auto spec = net::lower(net::build_seed(net::build_cifar_resnet(1, 10), {1, 2}));
  Graph<float> g(spec);
  initialize_parameters(g, 3);
  auto recs = alloc::extract_importance(snapshot(g), spec);
  for (const auto& r : recs) EXPECT_EQ(r.importance, 1.0);
}

TEST(Extract, MissingBnPairingThrows) {
  auto spec = net::lower(net::build_seed(net::build_cifar_resnet(1, 10), {1, 2}));
  // rewire the relu to read the conv directly and drop the BN
  auto& relu = spec.layer("b1.sa.s2.relu");
  relu.inputs = {"b1.sa.s2.conv"};
  spec.layers.erase(spec.layers.begin() + spec.index_of("b1.sa.s2.bn"));
  Rng rng(1);
  EXPECT_THROW(alloc::extract_importance(gamma_checkpoint(spec, rng), spec), ShapeError);
}

TEST(ProjectAll, BudgetsHoldAndSlackKeepsSeed) {
  auto spec = net::lower(net::build_seed(net::build_cifar_resnet(2, 10), {1, 2, 4}));
  Rng rng(9);
  auto recs = alloc::extract_importance(gamma_checkpoint(spec, rng), spec);
  auto budgets = flops::block_budgets(spec, {1, 2, 4});
  std::vector<std::int64_t> b;
  for (const auto& x : budgets) b.push_back(x.budget);
  auto res = alloc::project_all(recs, b, {1, 2, 4}, {});
  ASSERT_EQ(res.plan.rows.size(), 6u);
  for (const auto& blk : res.blocks) {
    EXPECT_LE(blk.selection.cost, blk.budget);
    EXPECT_EQ(blk.counts, res.plan.rows[static_cast<std::size_t>(blk.block - 1)]);
  }
  EXPECT_NO_THROW(net::build_scalenet(net::build_cifar_resnet(2, 10), res.plan));

  // budget equal to the seed cost keeps every neuron
  std::vector<std::int64_t> slack;
  for (const auto& x : budgets) {
    std::int64_t c = 0;
    for (const auto& r : recs)
      if (r.block == x.block_index) c += r.cost;
    slack.push_back(c);
  }
  auto full = alloc::project_all(recs, slack, {1, 2, 4}, {});
  for (std::size_t k = 0; k < full.plan.rows.size(); ++k) {
    const int mid = net::build_cifar_resnet(2, 10).blocks()[k]->mid_channels;
    EXPECT_EQ(full.plan.rows[k], (std::vector<int>{mid, mid, mid}));
  }
}

TEST(Csv, ImportanceRoundTrip) {
  Rng rng(3);
  auto r = random_records(rng, 30, false);
  for (auto& x : r) x.gamma = rng.uniform(-2, 2), x.importance = std::abs(x.gamma);
  auto back = alloc::parse_importance_csv(alloc::importance_csv(r));
  ASSERT_EQ(back.size(), r.size());
  for (std::size_t i = 0; i < r.size(); ++i) {
    EXPECT_EQ(back[i].gamma, r[i].gamma);
    EXPECT_EQ(back[i].importance, r[i].importance);
    EXPECT_EQ(back[i].cost, r[i].cost);
    EXPECT_EQ(back[i].scale, r[i].scale);
    EXPECT_EQ(back[i].channel, r[i].channel);
  }
  EXPECT_THROW(alloc::parse_importance_csv("k,scale\n"), ParseError);
  EXPECT_THROW(alloc::parse_importance_csv("k,scale,channel,gamma,abs_gamma,unit_cost\n1,1,0,0.5,0.5\n"), ParseError);
}

TEST(Csv, Budgets) {
  std::vector<flops::BlockBudget> b(2);
  b[0].block_index = 1;
  b[0].budget = 100;
  b[1].block_index = 2;
  b[1].budget = 7;
  EXPECT_EQ(alloc::parse_budgets_csv(alloc::budgets_csv(b)), (std::vector<std::int64_t>{100, 7}));
  EXPECT_THROW(alloc::parse_budgets_csv("k,budget\n2,5\n"), ParseError);
}
