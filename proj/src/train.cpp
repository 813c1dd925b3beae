#include "sakit/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "sakit/error.hpp"
#include "sakit/sgd.hpp"

namespace sakit::train {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
  if (batch_size < 1) throw Error("batch size must be positive");
  if (epochs < 1) throw Error("epochs must be positive");
  if (!(learning_rate >= 0)) throw Error("learning rate must be non-negative");
  if (!(decay_factor > 0)) throw Error("lr decay factor must be positive");
  for (std::size_t i = 0; i < milestones.size(); ++i) {
    if (milestones[i] <= 0 || milestones[i] >= epochs)
      throw Error("milestone " + std::to_string(milestones[i]) + " outside (0, " + std::to_string(epochs) + ")");
    if (i > 0 && milestones[i] <= milestones[i - 1]) throw Error("milestones must be strictly ascending");
  }
  if (augment.pad < 0) throw Error("crop padding must be non-negative");
}

double TrainConfig::lr_at(int epoch) const {
  double lr = learning_rate;
  for (int m : milestones)
    if (epoch >= m) lr /= decay_factor;
  return lr;
}

std::string metrics_csv(const std::vector<EpochMetrics>& log) {
  std::string out = "epoch,lr,train_loss,train_top1,val_top1,val_top5,seconds\n";
  char buf[256];
  for (const auto& m : log) {
    std::snprintf(buf, sizeof buf, "%d,%.6g,%.6f,%.6f,%.6f,%.6f,%.3f\n", m.epoch, m.lr, m.train_loss, m.train_top1,
                  m.val_top1, m.val_top5, m.seconds);
    out += buf;
  }
  return out;
}

Heads find_heads(const NetworkSpec& spec) {
  Heads h;
  for (const auto& l : spec.layers) {
    auto take = [&](std::string& slot, const char* what) {
      if (!slot.empty()) throw Error("spec has more than one " + std::string(what) + " node");
      slot = l.name;
    };
    if (l.op == "input") take(h.image, "input");
    else if (l.op == "labels") take(h.labels, "labels");
    else if (l.op == "xent") {
      take(h.loss, "xent");
      for (const auto& in : l.inputs)
        if (spec.layers[static_cast<std::size_t>(spec.index_of(in))].op != "labels") h.logits = in;
    }
  }
  if (h.image.empty() || h.labels.empty() || h.loss.empty() || h.logits.empty())
    throw Error("spec '" + spec.name + "' is not a classifier (needs input, labels and xent nodes)");
  return h;
}

void attach_norm(Checkpoint& ckpt, const data::Dataset& ds) {
  const Shape s{static_cast<int>(ds.mean.size())};
  if (ds.mean.empty()) return;
  ckpt.put("_norm.mean", Tensor(s, std::vector<float>(ds.mean)));
  ckpt.put("_norm.std", Tensor(s, std::vector<float>(ds.std)));
}

void read_norm(const Checkpoint& ckpt, std::vector<float>& mean, std::vector<float>& std) {
  const auto* m = ckpt.find("_norm.mean");
  const auto* s = ckpt.find("_norm.std");
  if (!m || !s) return;
  const auto md = as_double(*m), sd = as_double(*s);
  mean.assign(md.data().begin(), md.data().end());
  std.assign(sd.data().begin(), sd.data().end());
}

namespace {

// Number of classes scoring strictly above the true one.
int rank_of_label(std::span<const float> row, int label) {
  const float t = row[static_cast<std::size_t>(label)];
  int above = 0;
  for (std::size_t j = 0; j < row.size(); ++j)
    if (row[j] > t || (row[j] == t && static_cast<int>(j) < label)) ++above;
  return above;
}

EvalResult run_eval(Graph<float>& g, const Heads& h, const data::Dataset& ds, std::span<const float> mean,
                    std::span<const float> std, const EvalOptions& opt) {
  if (ds.size() == 0) throw Error("cannot evaluate on an empty dataset");
  std::vector<int> order(static_cast<std::size_t>(ds.size()));
  std::iota(order.begin(), order.end(), 0);
  const int bs = std::max(1, opt.batch_size);
  int top1 = 0, top5 = 0;
  for (int b = 0; b < ds.size(); b += bs) {
    const int n = std::min(bs, ds.size() - b);
    Tensor x = ds.gather(order, b, n);
    if (opt.center_crop > 0) x = data::center_crop(x, opt.center_crop);
    data::normalize(x, mean, std);
    Feed<float> feed;
    feed.tensors[h.image] = std::move(x);
    feed.labels[h.labels].assign(ds.labels.begin() + b, ds.labels.begin() + b + n);
    g.forward(feed, Mode::infer);
    const auto& logits = g.value(h.logits);
    const std::size_t k = static_cast<std::size_t>(logits.dim(1));
    for (int i = 0; i < n; ++i) {
      const int r = rank_of_label(logits.data().subspan(static_cast<std::size_t>(i) * k, k),
                                  ds.labels[static_cast<std::size_t>(b + i)]);
      top1 += r < 1;
      top5 += r < 5;
    }
  }
  EvalResult e;
  e.samples = ds.size();
  e.top1_error = 1.0 - static_cast<double>(top1) / ds.size();
  e.top5_error = ds.num_classes >= 5 ? 1.0 - static_cast<double>(top5) / ds.size() : e.top1_error;
  return e;
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream o(p, std::ios::binary);
  if (!o) throw IoError("cannot write '" + p.string() + "'");
  o << s;
}

}  // namespace

EvalResult evaluate(Graph<float>& graph, const data::Dataset& ds, const EvalOptions& options) {
  return run_eval(graph, find_heads(graph.spec()), ds, ds.mean, ds.std, options);
}

EvalResult evaluate(const Checkpoint& ckpt, const data::Dataset& ds, const EvalOptions& options) {
  Graph<float> g(NetworkSpec::parse(ckpt.spec_text));
  restore(g, ckpt);
  std::vector<float> mean = ds.mean, std = ds.std;
  read_norm(ckpt, mean, std);
  return run_eval(g, find_heads(g.spec()), ds, mean, std, options);
}

TrainResult train(const NetworkSpec& spec, const data::Dataset& train_set, const data::Dataset& val_set,
                  const TrainConfig& config, const fs::path& out_dir, const EpochHook& hook) {
  config.validate();
  train_set.validate();
  val_set.validate();
  if (train_set.size() < 2) throw Error("training set needs at least two samples");
  const Heads h = find_heads(spec);

  Graph<float> g(spec);
  initialize_parameters(g, config.seed);
  Sgd<float> opt(SgdConfig{config.learning_rate, config.momentum, config.weight_decay, config.decay_bn});
  if (!out_dir.empty()) fs::create_directories(out_dir);

  const Rng root(config.seed);
  const int n = train_set.size();
  TrainResult res;
  double best = -1;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = config.lr_at(epoch);
    opt.set_learning_rate(lr);
    // shuffle and augmentation streams depend only on (seed, epoch)
    Rng shuffle = root.split(0x51ull << 32 | static_cast<std::uint64_t>(epoch));
    Rng aug = root.split(0xa6ull << 32 | static_cast<std::uint64_t>(epoch));
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[shuffle.below(i + 1)]);

    double loss_sum = 0;
    int correct = 0, seen = 0, batch_no = 0;
    for (int b = 0; b < n; b += config.batch_size, ++batch_no) {
      const int m = std::min(config.batch_size, n - b);
      if (m < 2) break;  // BN needs two samples
      Tensor x = train_set.gather(order, b, m);
      data::augment(x, config.augment, aug);
      data::normalize(x, train_set.mean, train_set.std);
      Feed<float> feed;
      feed.tensors[h.image] = std::move(x);
      auto& y = feed.labels[h.labels];
      for (int i = 0; i < m; ++i) y.push_back(train_set.labels[static_cast<std::size_t>(order[static_cast<std::size_t>(b + i)])]);
      g.forward(feed, Mode::train);
      const double loss = g.value(h.loss)[0];
      if (!std::isfinite(loss)) {
        if (!out_dir.empty()) write_text(out_dir / "metrics.csv", metrics_csv(res.log));
        throw TrainingError("non-finite loss " + std::to_string(loss) + " at epoch " + std::to_string(epoch + 1) +
                            ", batch " + std::to_string(batch_no) + " (lr " + std::to_string(lr) + ")");
      }
      const auto& logits = g.value(h.logits);
      const std::size_t k = static_cast<std::size_t>(logits.dim(1));
      for (int i = 0; i < m; ++i)
        correct += rank_of_label(logits.data().subspan(static_cast<std::size_t>(i) * k, k), y[static_cast<std::size_t>(i)]) == 0;
      loss_sum += loss * m;
      seen += m;
      g.backward(h.loss);
      opt.step(g.params(), g.grads());
    }

    const EvalResult ev = run_eval(g, h, val_set, train_set.mean, train_set.std, {});
    EpochMetrics em;
    em.epoch = epoch + 1;
    em.lr = lr;
    em.train_loss = loss_sum / seen;
    em.train_top1 = static_cast<double>(correct) / seen;
    em.val_top1 = 1 - ev.top1_error;
    em.val_top5 = 1 - ev.top5_error;
    em.seconds =
        config.deterministic ? 0.0 : std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.log.push_back(em);
    if (em.val_top1 > best) {
      best = em.val_top1;
      res.best_checkpoint = snapshot(g);
      attach_norm(res.best_checkpoint, train_set);
    }
    if (!out_dir.empty()) write_text(out_dir / "metrics.csv", metrics_csv(res.log));
    if (hook) hook(em);
  }
  res.final_checkpoint = snapshot(g);
  attach_norm(res.final_checkpoint, train_set);
  if (!out_dir.empty()) {
    save_checkpoint(out_dir / "final.ckpt", res.final_checkpoint);
    save_checkpoint(out_dir / "best.ckpt", res.best_checkpoint);
  }
  return res;
}

}  // namespace sakit::train
