#include <gtest/gtest.h>

#include <string>

#include "sakit/error.hpp"
#include "sakit/layers.hpp"
#include "sakit/net_builder.hpp"

using namespace sakit;

namespace {

std::string plan_path(const std::string& name) { return std::string(SAKIT_DATA_DIR) + "/plans/" + name + ".txt"; }

net::Architecture tiny(int mid) {
  net::Architecture a = net::build_cifar_resnet(1, 10);
  for (auto* b : a.blocks()) b->mid_channels = mid;
  return a;
}

}  // namespace

TEST(Resnet, StageBlockCounts) {
  auto count = [](const net::Architecture& a) {
    std::vector<int> c;
    for (const auto& s : a.stages) c.push_back(static_cast<int>(s.size()));
    return c;
  };
  EXPECT_EQ(count(net::build_resnet(50)), (std::vector<int>{3, 4, 6, 3}));
  EXPECT_EQ(count(net::build_resnet(101)), (std::vector<int>{3, 4, 23, 3}));
  EXPECT_EQ(count(net::build_resnet(152)), (std::vector<int>{3, 8, 36, 3}));
  EXPECT_EQ(net::build_resnet(50).weighted_layers(), 50);
  EXPECT_EQ(net::build_resnet(101).weighted_layers(), 101);
  EXPECT_EQ(net::build_resnet(152).weighted_layers(), 152);
  EXPECT_THROW(net::build_resnet(34), Error);
  EXPECT_THROW(net::preset("vgg16"), Error);
}

TEST(CifarResnet, LayerCountFollowsFormula) {
  EXPECT_EQ(net::build_cifar_resnet(4).weighted_layers(), 38);
  EXPECT_EQ(net::build_cifar_resnet(6).weighted_layers(), 56);
  const auto n10 = net::build_cifar_resnet(10);
  EXPECT_EQ(n10.weighted_layers(), 92);
  EXPECT_EQ(n10.label, "ResNet-101");
  EXPECT_EQ(net::build_cifar_resnet(11).weighted_layers(), 101);
  const auto& first = n10.stages[0][0];
  EXPECT_EQ(first.in_channels, 16);
  EXPECT_EQ(first.mid_channels, 16);
  EXPECT_EQ(first.out_channels, 64);
  EXPECT_THROW(net::build_cifar_resnet(0), Error);
}

TEST(Scalenet, FromPublishedPlan) {
  auto plan = net::load_plan(plan_path("scalenet50"));
  auto sn = net::build_scalenet(net::build_resnet(50), plan);
  EXPECT_EQ(sn.name, "scalenet50");
  EXPECT_EQ(sn.label, "ScaleNet-50");
  EXPECT_EQ(*sn.blocks()[0]->sa_channels, (std::vector<int>{62, 9, 5, 12}));
  auto spec = net::lower(sn);
  auto cl = layers::compile(spec);
  EXPECT_EQ(cl.at(static_cast<std::size_t>(spec.index_of("b1.sa.cat"))).shape, (Shape{88, 56, 56}));
  EXPECT_EQ(cl.at(static_cast<std::size_t>(spec.index_of("b1.expand"))).shape, (Shape{256, 56, 56}));
  // strided units become pool + stride-1 unit
  EXPECT_GE(spec.index_of("b4.pre"), 0);
  EXPECT_EQ(cl.at(static_cast<std::size_t>(spec.index_of("b4.pre"))).shape, (Shape{256, 28, 28}));
  EXPECT_EQ(net::plan_of(sn), plan);
}

TEST(Scalenet, RowCountMismatchThrows) {
  auto plan = net::load_plan(plan_path("scalenet50"));
  EXPECT_THROW(net::build_scalenet(net::build_resnet(101), plan), Error);
  auto n11 = net::load_plan(plan_path("scalenet_cifar_n11"));
  EXPECT_THROW(net::build_scalenet(net::build_cifar_resnet(10), n11), Error);
  EXPECT_NO_THROW(net::build_scalenet(net::build_cifar_resnet(11), n11));
}

TEST(Scalenet, SingleScalePlanMatchesBaselineWidths) {
  auto base = net::build_resnet(50);
  net::AllocationPlan plan;
  plan.scale_factors = {1, 2, 4, 7};
  for (const auto* b : base.blocks()) plan.rows.push_back({b->mid_channels, 0, 0, 0});
  auto spec = net::lower(net::build_scalenet(base, plan));
  for (const auto& l : spec.layers) {
    EXPECT_EQ(l.op == "resize", false) << l.name;
    if (l.str_arg("role", "") == "sa") {
      EXPECT_EQ(l.int_arg("scale"), 1);
    }
  }
  EXPECT_NO_THROW(layers::compile(spec));
}

TEST(EvenAllocation, Splits) {
  EXPECT_EQ(net::even_allocation(tiny(64), {1, 2, 4, 7}).rows[0], (std::vector<int>{16, 16, 16, 16}));
  EXPECT_EQ(net::even_allocation(tiny(64), {1, 2, 4}).rows[0], (std::vector<int>{22, 21, 21}));
  EXPECT_EQ(net::even_allocation(tiny(3), {1, 2, 4, 7}).rows[0], (std::vector<int>{1, 1, 1, 0}));
  // remainder follows the factor, not the listed position
  EXPECT_EQ(net::even_allocation(tiny(64), {4, 1, 2}).rows[0], (std::vector<int>{21, 22, 21}));
}

TEST(EvenAllocation, RowsSumToBaseWidth) {
  for (const char* p : {"resnet50", "resnet152", "cifar-n6"}) {
    auto base = net::preset(p);
    for (int L = 1; L <= 5; ++L) {
      std::vector<int> scales;
      for (int i = 0; i < L; ++i) scales.push_back(1 << i);
      auto plan = net::even_allocation(base, scales);
      auto blocks = base.blocks();
      ASSERT_EQ(plan.rows.size(), blocks.size());
      for (std::size_t k = 0; k < blocks.size(); ++k) {
        int sum = 0, lo = 1 << 30, hi = 0;
        for (int c : plan.rows[k]) {
          sum += c;
          lo = std::min(lo, c);
          hi = std::max(hi, c);
        }
        EXPECT_EQ(sum, blocks[k]->mid_channels);
        EXPECT_LE(hi - lo, 1);
      }
    }
  }
}

TEST(Seed, ChannelsAreLTimesBase) {
  auto seed = net::build_seed(net::build_resnet(50), {1, 2, 4, 7});
  auto spec = net::lower(seed);
  auto cl = layers::compile(spec);
  EXPECT_EQ(cl.at(static_cast<std::size_t>(spec.index_of("b1.sa.cat"))).shape[0], 256);
  auto one = net::lower(net::build_seed(net::build_resnet(50), {1}));
  auto cl1 = layers::compile(one);
  EXPECT_EQ(cl1.at(static_cast<std::size_t>(one.index_of("b1.sa.cat"))).shape[0], 64);
}

TEST(Plan, ParseExamples) {
  auto p = net::AllocationPlan::parse("scales: 1,2,4,7\n1: 62,9,5,12\n");
  EXPECT_EQ(p.scale_factors, (std::vector<int>{1, 2, 4, 7}));
  ASSERT_EQ(p.rows.size(), 1u);
  EXPECT_EQ(p.rows[0], (std::vector<int>{62, 9, 5, 12}));
  auto z = net::AllocationPlan::parse("# light\nscales: 1,2,4,7\n1: 1,1,1,1\n2: 1,1,1,1\n3: 30,27,7,0\n");
  EXPECT_EQ(z.rows[2], (std::vector<int>{30, 27, 7, 0}));
}

TEST(Plan, RoundTripPublishedPlan) {
  auto p = net::load_plan(plan_path("scalenet50_light"));
  ASSERT_EQ(p.rows.size(), 16u);
  const std::string text = p.serialize();
  EXPECT_EQ(net::AllocationPlan::parse(text), p);
  EXPECT_EQ(net::AllocationPlan::parse(text).serialize(), text);
}

TEST(Plan, RoundTripWithMetadata) {
  net::AllocationPlan p;
  p.scale_factors = {1, 2, 4};
  p.rows = {{3, 0, 1}, {1, 1, 1}};
  p.source = "runs/seed/seed_final.ckpt";
  p.exponent = 0.1;
  p.budgets = {1000, 2000};
  EXPECT_EQ(net::AllocationPlan::parse(p.serialize()), p);
  // whitespace-insensitive
  auto q = net::AllocationPlan::parse("  scales:1, 2 ,4\n\n1 :3,0,1   # x\n2: 1,1,1\nsource: runs/seed/seed_final.ckpt\nb: 0.1\nbudgets: 1000,2000\n");
  EXPECT_EQ(q, p);
}

TEST(Plan, MalformedLinesReportLineNumber) {
  auto line_of = [](const std::string& text) {
    try {
      net::AllocationPlan::parse(text);
    } catch (const ParseError& e) {
      return e.line();
    }
    return -1;
  };
  EXPECT_EQ(line_of("scales: 1,2\n1: 3,x\n"), 2);
  EXPECT_EQ(line_of("scales: 1,2\n1: 3,1\n3: 1,1\n"), 3);
  EXPECT_EQ(line_of("# c\nscales: 1,2\n1: 3\n"), 3);
  EXPECT_EQ(line_of("scales: 1,2\n1: -1,1\n"), 2);
  EXPECT_EQ(line_of("scales: 1,2\n1: 0,0\n"), 2);
  EXPECT_EQ(line_of("1: 1,1\n"), 1);
  EXPECT_EQ(line_of("scales: 1,2\nfoo: 1\n"), 2);
  EXPECT_EQ(line_of("scales: 1,2\nno colon here\n"), 2);
}

TEST(Lowering, EveryPresetCompilesToLoss) {
  std::vector<net::Architecture> archs;
  for (const char* p : {"resnet50", "resnet101", "resnet152", "cifar-n4", "cifar-n6", "cifar-n10"}) {
    auto base = net::preset(p);
    archs.push_back(base);
    archs.push_back(net::build_seed(base, net::default_scales(base)));
    archs.push_back(net::build_scalenet(base, net::even_allocation(base, net::default_scales(base))));
  }
  for (const auto& [plan, base] : std::vector<std::pair<std::string, std::string>>{
           {"scalenet50", "resnet50"}, {"scalenet50_light", "resnet50"}, {"scalenet101", "resnet101"},
           {"scalenet152", "resnet152"}, {"scalenet_cifar_n4", "cifar-n4"}, {"scalenet_cifar_n6", "cifar-n6"},
           {"scalenet_cifar_n11", "cifar-n11"}})
    archs.push_back(net::build_scalenet(net::preset(base), net::load_plan(plan_path(plan))));
  for (const auto& a : archs) {
    auto spec = net::lower(a);
    auto cl = layers::compile(spec);
    EXPECT_EQ(spec.layers.back().name, "loss") << a.name;
    EXPECT_EQ(cl.back().shape, (Shape{1})) << a.name;
    EXPECT_EQ(NetworkSpec::parse(spec.to_text()), spec) << a.name;
  }
}

TEST(Lowering, DownsampleModeCarriesThrough) {
  auto base = net::build_cifar_resnet(1, 10);
  auto a = net::build_seed(base, {1, 2, 4});
  a.downsample = sa::Downsample::dilated;
  auto spec = net::lower(a);
  EXPECT_EQ(spec.index_of("b1.sa.s2.pool"), -1);
  EXPECT_EQ(spec.layer("b1.sa.s2.conv").int_arg("d"), 2);
  EXPECT_NO_THROW(layers::compile(spec));
}
