#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "sakit/checkpoint.hpp"
#include "sakit/data.hpp"
#include "sakit/net_builder.hpp"
#include "sakit/train.hpp"
#include "test_util.hpp"

using namespace sakit;
using sakit::testing::spec_from;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("sakit_test_data_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<std::uint8_t> fake_cifar(int n, data::CifarVariant v, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::uint8_t> b(static_cast<std::size_t>(n * data::cifar_record_size(v)));
  for (auto& x : b) x = static_cast<std::uint8_t>(rng.below(256));
  const int rec = data::cifar_record_size(v);
  for (int i = 0; i < n; ++i) {
    if (v == data::CifarVariant::cifar100) {
      b[static_cast<std::size_t>(i * rec)] = static_cast<std::uint8_t>(rng.below(20));
      b[static_cast<std::size_t>(i * rec + 1)] = static_cast<std::uint8_t>(rng.below(100));
    } else {
      b[static_cast<std::size_t>(i * rec)] = static_cast<std::uint8_t>(rng.below(10));
    }
  }
  return b;
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& b) {
  std::ofstream o(p, std::ios::binary);
  o.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

// conv net small enough for many-epoch tests
NetworkSpec toy_net(int classes, int size, bool bn = true) {
  const std::string s = std::to_string(size);
  std::string body = "x = input(shape=3x" + s + "x" + s + ")\n" + "c1 = conv(out=8, k=3, p=1) <- x\n";
  std::string last = "c1";
  if (bn) {
    body += "b1 = bn() <- c1\n";
    last = "b1";
  }
  body += "r1 = relu() <- " + last + "\n";
  body += "p1 = pool(k=2, s=2) <- r1\nc2 = conv(out=16, k=3, p=1) <- p1\nr2 = relu() <- c2\n";
  body += "g = gap() <- r2\nfc = dense(out=" + std::to_string(classes) + ") <- g\n";
  body += "y = labels(classes=" + std::to_string(classes) + ")\nloss = xent() <- fc, y\n";
  return spec_from(body, "toy");
}

NetworkSpec linear_net(int classes, int size) {
  const std::string s = std::to_string(size);
  return spec_from("x = input(shape=3x" + s + "x" + s + ")\nfc = dense(out=" + std::to_string(classes) +
                       ") <- x\ny = labels(classes=" + std::to_string(classes) + ")\nloss = xent() <- fc, y\n",
                   "linear");
}

train::TrainConfig quick(int epochs) {
  train::TrainConfig c;
  c.epochs = epochs;
  c.milestones = {};
  c.batch_size = 32;
  c.learning_rate = 0.05;
  c.deterministic = true;
  c.seed = 3;
  return c;
}

struct Split {
  data::Dataset train, val;
};

Split synthetic(int per_class, int size = 16, int classes = 10) {
  Split s{data::synthetic_dataset(classes, per_class, size, 11, "train"),
          data::synthetic_dataset(classes, std::max(10, per_class / 3), size, 12, "val")};
  data::attach_stats(s.train);
  data::copy_stats(s.val, s.train);
  return s;
}

}  // namespace

TEST(Cifar, RecordLayoutMatchesBytewiseParse) {
  for (auto v : {data::CifarVariant::cifar10, data::CifarVariant::cifar100}) {
    const auto bytes = fake_cifar(7, v, 5);
    const auto ds = data::parse_cifar(bytes, v);
    ASSERT_EQ(ds.size(), 7);
    EXPECT_EQ(ds.num_classes, v == data::CifarVariant::cifar100 ? 100 : 10);
    const int rec = data::cifar_record_size(v), skip = rec - 3072;
    for (int i = 0; i < 7; ++i) {
      EXPECT_EQ(ds.labels[static_cast<std::size_t>(i)], bytes[static_cast<std::size_t>(i * rec + skip - 1)]);
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 32; y += 5)
          for (int x = 0; x < 32; x += 3) {
            const auto b = bytes[static_cast<std::size_t>(i * rec + skip + c * 1024 + y * 32 + x)];
            EXPECT_EQ(ds.images.at(i, c, y, x), static_cast<float>(b) / 255.0f);
          }
    }
  }
}

TEST(Cifar, RecordCount) {
  const auto bytes = fake_cifar(2000, data::CifarVariant::cifar100, 1);
  const auto ds = data::parse_cifar(bytes, data::CifarVariant::cifar100);
  EXPECT_EQ(ds.size(), 2000);
  EXPECT_EQ(ds.images.shape(), (Shape{2000, 3, 32, 32}));
}

TEST(Cifar, TruncatedFileIsError) {
  auto bytes = fake_cifar(3, data::CifarVariant::cifar10, 1);
  bytes.pop_back();
  EXPECT_THROW(data::parse_cifar(bytes, data::CifarVariant::cifar10), IoError);
  const auto dir = scratch("trunc");
  write_bytes(dir / "test_batch.bin", bytes);
  try {
    data::load_cifar(dir / "test_batch.bin", data::CifarVariant::cifar10);
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("test_batch.bin"), std::string::npos);
  }
  EXPECT_THROW(data::parse_cifar({}, data::CifarVariant::cifar10), IoError);
}

TEST(Cifar, DirectoryLayouts) {
  const auto dir = scratch("dirs");
  for (int i = 1; i <= 5; ++i)
    write_bytes(dir / ("data_batch_" + std::to_string(i) + ".bin"), fake_cifar(3, data::CifarVariant::cifar10, i));
  write_bytes(dir / "test_batch.bin", fake_cifar(4, data::CifarVariant::cifar10, 9));
  EXPECT_EQ(data::load_cifar_split(dir, data::CifarVariant::cifar10, true).size(), 15);
  EXPECT_EQ(data::load_cifar_split(dir, data::CifarVariant::cifar10, false).size(), 4);
  EXPECT_THROW(data::load_cifar_split(dir, data::CifarVariant::cifar100, true), IoError);
  write_bytes(dir / "train.bin", fake_cifar(6, data::CifarVariant::cifar100, 3));
  EXPECT_EQ(data::load_cifar_split(dir, data::CifarVariant::cifar100, true).split, "train");
}

TEST(Synthetic, SizeAndLabels) {
  const auto ds = data::synthetic_dataset(10, 100, 16, 1);
  EXPECT_EQ(ds.size(), 1000);
  EXPECT_EQ(ds.images.shape(), (Shape{1000, 3, 16, 16}));
  std::vector<int> count(10, 0);
  for (int y : ds.labels) ++count[static_cast<std::size_t>(y)];
  for (int c : count) EXPECT_EQ(c, 100);
  EXPECT_NO_THROW(ds.validate());
}

TEST(Synthetic, DeterministicPerSeed) {
  const auto a = data::synthetic_dataset(10, 20, 16, 7), b = data::synthetic_dataset(10, 20, 16, 7);
  EXPECT_EQ(a.images, b.images);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_NE(a.images, data::synthetic_dataset(10, 20, 16, 8).images);
}

TEST(Synthetic, BlobClassesDifferInScale) {
  // mean image energy grows along the radius ladder
  const auto ds = data::synthetic_dataset(10, 40, 16, 2);
  std::vector<double> energy(5, 0.0);
  for (int i = 0; i < ds.size(); ++i) {
    if (ds.labels[static_cast<std::size_t>(i)] % 2) continue;
    double e = 0;
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) e += std::abs(ds.images.at(i, c, y, x));
    energy[static_cast<std::size_t>(ds.labels[static_cast<std::size_t>(i)] / 2)] += e;
  }
  for (std::size_t k = 1; k < energy.size(); ++k) EXPECT_GT(energy[k], energy[k - 1]);
}

TEST(Stats, AttachAndNormalize) {
  auto ds = data::synthetic_dataset(4, 10, 8, 3);
  data::attach_stats(ds);
  ASSERT_EQ(ds.mean.size(), 3u);
  Tensor all = ds.images;
  data::normalize(all, ds.mean, ds.std);
  for (int c = 0; c < 3; ++c) {
    double s = 0, sq = 0, n = 0;
    for (int i = 0; i < ds.size(); ++i)
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
          const double v = all.at(i, c, y, x);
          s += v;
          sq += v * v;
          ++n;
        }
    EXPECT_NEAR(s / n, 0.0, 1e-4);
    EXPECT_NEAR(sq / n, 1.0, 1e-3);
  }
}

TEST(Augment, EmptyFlagsIsIdentity) {
  Rng rng(1);
  Tensor x = sakit::testing::random_tensor<float>({4, 3, 8, 8}, rng);
  Tensor y = x;
  data::augment(y, data::AugmentFlags{}, rng);
  EXPECT_EQ(x, y);
  EXPECT_FALSE(data::parse_augment("none").flip);
  EXPECT_TRUE(data::parse_augment("flip,crop").crop);
  EXPECT_THROW(data::parse_augment("rotate"), Error);
}

TEST(Augment, ForcedFlipIsInvolution) {
  Rng rng(2);
  Tensor x = sakit::testing::random_tensor<float>({3, 3, 5, 7}, rng);
  data::AugmentFlags f;
  f.flip = true;
  f.flip_p = 1.0;
  Tensor y = x;
  data::augment(y, f, rng);
  EXPECT_NE(x, y);
  EXPECT_EQ(y.at(0, 1, 2, 0), x.at(0, 1, 2, 6));
  data::augment(y, f, rng);
  EXPECT_EQ(x, y);
}

TEST(Augment, CropShiftsWithZeroPad) {
  Tensor x({1, 1, 6, 6});
  for (int i = 0; i < 36; ++i) x[static_cast<std::size_t>(i)] = static_cast<float>(i + 1);
  Tensor same = x;
  data::apply_augment(same, 0, {false, 4, 4}, 4);
  EXPECT_EQ(same, x);
  Tensor shifted = x;
  data::apply_augment(shifted, 0, {false, 2, 5}, 4);  // content moves down 2, left 1
  for (int y = 0; y < 6; ++y)
    for (int c = 0; c < 6; ++c) {
      const int sy = y - 2, sx = c + 1;
      const float want = sy >= 0 && sx < 6 ? x.at(0, 0, sy, sx) : 0.0f;
      EXPECT_EQ(shifted.at(0, 0, y, c), want);
    }
}

TEST(Augment, CropOffsetsUniform) {
  data::AugmentFlags f;
  f.crop = true;
  Rng rng(99);
  std::vector<int> hist(81, 0);
  constexpr int kDraws = 10000;
  for (int i = 0; i < kDraws; ++i) {
    const auto d = data::draw_augment(f, rng);
    ASSERT_GE(d.dy, 0);
    ASSERT_LE(d.dy, 8);
    ASSERT_GE(d.dx, 0);
    ASSERT_LE(d.dx, 8);
    ++hist[static_cast<std::size_t>(d.dy * 9 + d.dx)];
  }
  const double expect = kDraws / 81.0;
  double chi2 = 0;
  for (int h : hist) chi2 += (h - expect) * (h - expect) / expect;
  EXPECT_LT(chi2, 124.8);  // df 80, p = 0.001
}

TEST(Schedule, MilestoneDecay) {
  train::TrainConfig c;
  c.epochs = 300;
  c.learning_rate = 0.1;
  c.decay_factor = 10;
  c.milestones = {150, 225};
  EXPECT_DOUBLE_EQ(c.lr_at(0), 0.1);
  EXPECT_DOUBLE_EQ(c.lr_at(149), 0.1);
  EXPECT_NEAR(c.lr_at(150), 0.01, 1e-15);
  EXPECT_NEAR(c.lr_at(225), 0.001, 1e-15);
  EXPECT_NO_THROW(c.validate());
  c.milestones = {225, 150};
  EXPECT_THROW(c.validate(), Error);
  c.milestones = {300};
  EXPECT_THROW(c.validate(), Error);
}

TEST(Train, HeadsFound) {
  const auto h = train::find_heads(toy_net(10, 8));
  EXPECT_EQ(h.image, "x");
  EXPECT_EQ(h.labels, "y");
  EXPECT_EQ(h.loss, "loss");
  EXPECT_EQ(h.logits, "fc");
  EXPECT_THROW(train::find_heads(spec_from("x = input(shape=2)\n")), Error);
}

TEST(Train, ZeroLearningRateLeavesParameters) {
  auto s = synthetic(4, 8);
  const auto spec = toy_net(10, 8);
  auto c = quick(2);
  c.learning_rate = 0;
  const auto res = train::train(spec, s.train, s.val, c);
  Graph<float> g(spec);
  initialize_parameters(g, c.seed);
  for (const auto& [name, t] : g.params()) {
    const auto* got = res.final_checkpoint.find(name);
    ASSERT_NE(got, nullptr);
    EXPECT_EQ(std::get<Tensor>(*got), t) << name;
  }
}

TEST(Train, NonFiniteLossAborts) {
  auto s = synthetic(4, 8);
  s.train.images[5] = std::nanf("");
  try {
    // no ReLU to swallow the NaN
    train::train(linear_net(10, 8), s.train, s.val, quick(1));
    FAIL();
  } catch (const train::TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("non-finite"), std::string::npos);
  }
}

TEST(Train, WritesArtifactsAndLogsEveryEpoch) {
  auto s = synthetic(6, 8);
  const auto dir = scratch("artifacts");
  auto c = quick(3);
  c.milestones = {2};
  const auto res = train::train(toy_net(10, 8), s.train, s.val, c, dir);
  ASSERT_EQ(res.log.size(), 3u);
  EXPECT_DOUBLE_EQ(res.log[2].lr, 0.005);
  EXPECT_TRUE(fs::exists(dir / "final.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "best.ckpt"));
  std::ifstream in(dir / "metrics.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "epoch,lr,train_loss,train_top1,val_top1,val_top5,seconds");
  EXPECT_EQ(load_checkpoint(dir / "final.ckpt"), res.final_checkpoint);
  EXPECT_NE(res.final_checkpoint.find("_norm.mean"), nullptr);
  for (const auto& m : res.log) EXPECT_GE(m.val_top5, m.val_top1);
}

TEST(Train, DeterministicRunsAreBitwiseEqual) {
  auto s = synthetic(6, 8);
  auto c = quick(2);
  c.augment = data::parse_augment("flip,crop");
  const auto a = train::train(toy_net(10, 8), s.train, s.val, c);
  const auto b = train::train(toy_net(10, 8), s.train, s.val, c);
  EXPECT_EQ(train::metrics_csv(a.log), train::metrics_csv(b.log));
  EXPECT_EQ(encode_checkpoint(a.final_checkpoint), encode_checkpoint(b.final_checkpoint));
  c.seed = 4;
  const auto d = train::train(toy_net(10, 8), s.train, s.val, c);
  EXPECT_NE(encode_checkpoint(a.final_checkpoint), encode_checkpoint(d.final_checkpoint));
}

TEST(Train, ToyNetBeatsChanceAndLossFalls) {
  auto s = synthetic(30);
  auto c = quick(20);
  c.learning_rate = 0.02;
  const auto res = train::train(toy_net(10, 16), s.train, s.val, c);
  EXPECT_GT(res.log.back().val_top1, 0.3);
  // 5-epoch rolling mean nonincreasing <=> loss[e] >= loss[e + 5]
  for (std::size_t e = 0; e + 5 < res.log.size(); ++e)
    EXPECT_GE(res.log[e].train_loss, res.log[e + 5].train_loss) << "epoch " << e + 1;
}

TEST(Train, LinearModelTrailsSANet) {
  auto s = synthetic(30);
  auto base = net::preset("cifar-n1", 10);
  base.input = {3, 16, 16};
  const auto sa_net = net::lower(net::build_seed(base, {1, 2, 4}));
  const auto conv = train::train(sa_net, s.train, s.val, quick(8));
  auto c = quick(15);
  c.learning_rate = 0.01;
  const auto lin = train::train(linear_net(10, 16), s.train, s.val, c);
  double best_lin = 0;
  for (const auto& m : lin.log) best_lin = std::max(best_lin, m.val_top1);
  EXPECT_LT(best_lin, conv.log.back().val_top1);
}

TEST(Evaluate, RandomNetIsNearChance) {
  auto ds = data::synthetic_dataset(100, 10, 8, 5);
  data::attach_stats(ds);
  const std::string body =
      "x = input(shape=3x8x8)\nc = conv(out=8, k=3, p=1) <- x\nr = relu() <- c\ng = gap() <- r\n"
      "fc = dense(out=100) <- g\ny = labels(classes=100)\nloss = xent() <- fc, y\n";
  Graph<float> g(spec_from(body));
  initialize_parameters(g, 1);
  const auto e = train::evaluate(g, ds);
  EXPECT_NEAR(e.top1_error, 0.99, 0.03);
  EXPECT_LE(e.top5_error, e.top1_error);
  EXPECT_EQ(e.samples, 1000);
}

TEST(Evaluate, MemorizedPairHasZeroError) {
  auto ds = data::synthetic_dataset(2, 1, 8, 5);
  data::attach_stats(ds);
  auto c = quick(60);
  c.batch_size = 2;
  c.weight_decay = 0;
  const auto res = train::train(toy_net(2, 8, false), ds, ds, c);
  const auto e = train::evaluate(res.final_checkpoint, ds);
  EXPECT_EQ(e.top1_error, 0.0);
  EXPECT_EQ(e.top5_error, e.top1_error);  // fewer than 5 classes
}

TEST(Evaluate, SaveLoadReproducesBitwise) {
  auto s = synthetic(5, 8);
  const auto res = train::train(toy_net(10, 8), s.train, s.val, quick(2));
  const auto before = train::evaluate(res.final_checkpoint, s.val);
  const auto dir = scratch("reload");
  save_checkpoint(dir / "m.ckpt", res.final_checkpoint);
  const auto after = train::evaluate(load_checkpoint(dir / "m.ckpt"), s.val);
  EXPECT_EQ(before.top1_error, after.top1_error);
  EXPECT_EQ(before.top5_error, after.top5_error);
  Graph<float> a(NetworkSpec::parse(res.final_checkpoint.spec_text));
  restore(a, load_checkpoint(dir / "m.ckpt"));
  Graph<float> b(NetworkSpec::parse(res.final_checkpoint.spec_text));
  restore(b, res.final_checkpoint);
  Feed<float> feed;
  Tensor x = s.val.gather(std::vector<int>{0, 1, 2}, 0, 3);
  feed.tensors["x"] = x;
  feed.labels["y"] = {0, 1, 2};
  a.forward(feed, Mode::infer);
  b.forward(feed, Mode::infer);
  EXPECT_EQ(a.value("fc"), b.value("fc"));
}

TEST(Evaluate, CenterCrop) {
  Tensor x({1, 1, 6, 6});
  for (int i = 0; i < 36; ++i) x[static_cast<std::size_t>(i)] = static_cast<float>(i);
  const Tensor y = data::center_crop(x, 4);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 4, 4}));
  EXPECT_EQ(y.at(0, 0, 0, 0), x.at(0, 0, 1, 1));
  EXPECT_THROW(data::center_crop(x, 7), ShapeError);
  // evaluation through a crop: 10x10 images into an 8x8 net
  auto ds = data::synthetic_dataset(10, 2, 10, 1);
  Graph<float> g(toy_net(10, 8));
  initialize_parameters(g, 0);
  train::EvalOptions opt;
  opt.center_crop = 8;
  EXPECT_EQ(train::evaluate(g, ds, opt).samples, 20);
}

TEST(ImageFolder, LoadsPpmClasses) {
  const auto dir = scratch("folder");
  for (const char* cls : {"b_dog", "a_cat"}) {
    fs::create_directories(dir / cls);
    for (int k = 0; k < 2; ++k) {
      std::ofstream o(dir / cls / ("img" + std::to_string(k) + ".ppm"), std::ios::binary);
      o << "P6\n# comment\n3 2\n255\n";
      for (int i = 0; i < 18; ++i) o.put(static_cast<char>(i * 10 + k));
    }
  }
  const auto ds = data::load_image_folder(dir);
  EXPECT_EQ(ds.size(), 4);
  EXPECT_EQ(ds.num_classes, 2);
  EXPECT_EQ(ds.labels, (std::vector<int>{0, 0, 1, 1}));
  EXPECT_EQ(ds.images.shape(), (Shape{4, 3, 2, 3}));
  // pixel (y=1, x=0) channel 2 is byte (1*3+0)*3+2 = 11
  EXPECT_FLOAT_EQ(ds.images.at(1, 2, 1, 0), (110.0f + 1) / 255.0f);
  std::ofstream(dir / "a_cat" / "bad.ppm") << "P3\n1 1\n255\n0 0 0\n";
  EXPECT_THROW(data::load_image_folder(dir), IoError);
}
