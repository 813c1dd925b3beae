#include "sakit/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "sakit/error.hpp"

namespace sakit::data {

namespace fs = std::filesystem;

void Dataset::validate() const {
  if (images.rank() != 4) throw ShapeError("", "dataset images must be N x C x H x W, got " + shape_str(images.shape()));
  if (images.dim(0) != size())
    throw ShapeError("", std::to_string(images.dim(0)) + " images but " + std::to_string(size()) + " labels");
  if (num_classes <= 0) throw Error("dataset has no classes");
  for (int y : labels)
    if (y < 0 || y >= num_classes)
      throw Error("label " + std::to_string(y) + " outside [0, " + std::to_string(num_classes) + ")");
  if (!mean.empty() && (static_cast<int>(mean.size()) != channels() || mean.size() != std.size()))
    throw Error("normalization stats do not match the channel count");
}

Tensor Dataset::gather(std::span<const int> order, int begin, int n) const {
  const std::size_t per = static_cast<std::size_t>(channels()) * height() * width();
  Tensor out({n, channels(), height(), width()});
  for (int i = 0; i < n; ++i) {
    const auto src = images.data().subspan(static_cast<std::size_t>(order[static_cast<std::size_t>(begin + i)]) * per, per);
    std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return out;
}

Dataset Dataset::subset(std::span<const int> indices) const {
  Dataset d;
  d.images = gather(indices, 0, static_cast<int>(indices.size()));
  for (int i : indices) d.labels.push_back(labels.at(static_cast<std::size_t>(i)));
  d.num_classes = num_classes;
  d.split = split;
  d.mean = mean;
  d.std = std;
  return d;
}

CifarVariant parse_cifar_variant(const std::string& s) {
  if (s == "cifar10") return CifarVariant::cifar10;
  if (s == "cifar100") return CifarVariant::cifar100;
  throw Error("unknown CIFAR variant '" + s + "' (cifar10|cifar100)");
}

Dataset parse_cifar(std::span<const std::uint8_t> bytes, CifarVariant variant, std::string split) {
  const std::size_t rec = static_cast<std::size_t>(cifar_record_size(variant));
  if (bytes.empty() || bytes.size() % rec != 0)
    throw IoError("CIFAR data of " + std::to_string(bytes.size()) + " bytes is not a multiple of the " +
                  std::to_string(rec) + "-byte record");
  const int n = static_cast<int>(bytes.size() / rec);
  Dataset d;
  d.num_classes = variant == CifarVariant::cifar100 ? 100 : 10;
  d.split = std::move(split);
  d.images = Tensor({n, 3, 32, 32});
  d.labels.resize(static_cast<std::size_t>(n));
  const std::size_t label_at = variant == CifarVariant::cifar100 ? 1 : 0;
  const std::size_t skip = rec - kCifarPixels;
  auto px = d.images.data();
  for (std::size_t i = 0; i < static_cast<std::size_t>(n); ++i) {
    const auto r = bytes.subspan(i * rec, rec);
    d.labels[i] = r[label_at];
    for (std::size_t j = 0; j < kCifarPixels; ++j) px[i * kCifarPixels + j] = static_cast<float>(r[skip + j]) / 255.0f;
  }
  d.validate();
  return d;
}

namespace {

std::vector<std::uint8_t> read_all(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open '" + file.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Dataset concat(std::vector<Dataset> parts) {
  if (parts.size() == 1) return std::move(parts[0]);
  Dataset d;
  d.num_classes = parts[0].num_classes;
  d.split = parts[0].split;
  int n = 0;
  for (const auto& p : parts) n += p.size();
  d.images = Tensor({n, parts[0].channels(), parts[0].height(), parts[0].width()});
  auto out = d.images.data().begin();
  for (const auto& p : parts) {
    out = std::copy(p.images.data().begin(), p.images.data().end(), out);
    d.labels.insert(d.labels.end(), p.labels.begin(), p.labels.end());
  }
  return d;
}

}  // namespace

Dataset load_cifar(const fs::path& file, CifarVariant variant) {
  const auto bytes = read_all(file);
  try {
    return parse_cifar(bytes, variant, file.stem().string());
  } catch (const IoError& e) {
    throw IoError(file.string() + ": " + e.what());
  }
}

Dataset load_cifar_split(const fs::path& dir, CifarVariant variant, bool train) {
  std::vector<fs::path> files;
  if (variant == CifarVariant::cifar100) {
    files.push_back(dir / (train ? "train.bin" : "test.bin"));
  } else if (train) {
    for (int i = 1; i <= 5; ++i) files.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
  } else {
    files.push_back(dir / "test_batch.bin");
  }
  std::vector<Dataset> parts;
  for (const auto& f : files) {
    if (!fs::exists(f)) throw IoError("missing CIFAR file '" + f.string() + "'");
    parts.push_back(load_cifar(f, variant));
  }
  Dataset d = concat(std::move(parts));
  d.split = train ? "train" : "test";
  return d;
}

Dataset synthetic_dataset(int classes, int per_class, int size, std::uint64_t seed, std::string split) {
  if (classes < 1 || per_class < 1 || size < 4) throw Error("synthetic dataset needs classes, per_class >= 1 and size >= 4");
  const int levels = (classes + 1) / 2;
  // radius ladder from 0.04 to 0.23 of the side, geometric
  std::vector<double> sigma(static_cast<std::size_t>(levels));
  for (int k = 0; k < levels; ++k) {
    const double t = levels == 1 ? 0.0 : static_cast<double>(k) / (levels - 1);
    sigma[static_cast<std::size_t>(k)] = size * 0.04 * std::pow(0.23 / 0.04, t);
  }
  const int n = classes * per_class;
  Dataset d;
  d.num_classes = classes;
  d.split = std::move(split);
  d.images = Tensor({n, 3, size, size});
  d.labels.resize(static_cast<std::size_t>(n));
  const Rng root(seed);
  for (int i = 0; i < n; ++i) {
    Rng rng = root.split(static_cast<std::uint64_t>(i));
    const int c = i % classes;
    d.labels[static_cast<std::size_t>(i)] = c;
    const double s = sigma[static_cast<std::size_t>(c / 2)];
    const bool pair = c % 2 == 1;
    const double cy = rng.uniform(0.3, 0.7) * size, cx = rng.uniform(0.3, 0.7) * size;
    // log-uniform over 8x so pixel mass overlaps across radius levels
    const double amp = std::exp(rng.uniform(std::log(0.25), std::log(2.0)));
    double colour[3];
    for (double& v : colour) v = rng.uniform(0.2, 1.0);
    std::vector<std::pair<double, double>> centres;
    if (pair) {
      centres = {{cy, cx - 1.25 * s}, {cy, cx + 1.25 * s}};
    } else {
      centres = {{cy, cx}};
    }
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        double v = 0;
        for (auto [py, px] : centres) {
          const double dy = y + 0.5 - py, dx = x + 0.5 - px;
          v += std::exp(-(dy * dy + dx * dx) / (2 * s * s));
        }
        v *= amp;
        for (int ch = 0; ch < 3; ++ch)
          d.images.at(i, ch, y, x) = static_cast<float>(colour[ch] * v + 0.05 * rng.normal());
      }
  }
  return d;
}

Tensor read_ppm(const fs::path& file) {
  const auto bytes = read_all(file);
  std::size_t pos = 0;
  auto token = [&]() {
    for (;;) {
      while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
      if (pos < bytes.size() && bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        continue;
      }
      break;
    }
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) t += static_cast<char>(bytes[pos++]);
    if (t.empty()) throw IoError(file.string() + ": truncated PPM header");
    return t;
  };
  if (token() != "P6") throw IoError(file.string() + ": only binary P6 PPM is supported");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(token());
    h = std::stoi(token());
    maxval = std::stoi(token());
  } catch (const std::logic_error&) {
    throw IoError(file.string() + ": bad PPM header");
  }
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) throw IoError(file.string() + ": unsupported PPM dimensions or depth");
  ++pos;  // single whitespace before the raster
  if (bytes.size() < pos + static_cast<std::size_t>(3 * w * h)) throw IoError(file.string() + ": truncated PPM raster");
  Tensor t({1, 3, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        t.at(0, c, y, x) = static_cast<float>(bytes[pos + static_cast<std::size_t>((y * w + x) * 3 + c)]) / maxval;
  return t;
}

Dataset load_image_folder(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("'" + dir.string() + "' is not a directory");
  std::vector<fs::path> classes;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) classes.push_back(e.path());
  std::sort(classes.begin(), classes.end());
  if (classes.empty()) throw IoError("'" + dir.string() + "' has no class directories");
  std::vector<Tensor> imgs;
  Dataset d;
  d.num_classes = static_cast<int>(classes.size());
  d.split = dir.filename().string();
  for (std::size_t c = 0; c < classes.size(); ++c) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(classes[c]))
      if (e.is_regular_file() && e.path().extension() == ".ppm") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      imgs.push_back(read_ppm(f));
      if (imgs.back().shape() != imgs.front().shape())
        throw ShapeError(f.string(), "image size differs from " + shape_str(imgs.front().shape()));
      d.labels.push_back(static_cast<int>(c));
    }
  }
  if (imgs.empty()) throw IoError("'" + dir.string() + "' has no .ppm images");
  const auto& s = imgs.front().shape();
  d.images = Tensor({static_cast<int>(imgs.size()), s[1], s[2], s[3]});
  auto out = d.images.data().begin();
  for (const auto& t : imgs) out = std::copy(t.data().begin(), t.data().end(), out);
  return d;
}

void attach_stats(Dataset& ds) {
  const int c = ds.channels();
  const std::size_t plane = static_cast<std::size_t>(ds.height()) * ds.width();
  ds.mean.assign(static_cast<std::size_t>(c), 0.0f);
  ds.std.assign(static_cast<std::size_t>(c), 0.0f);
  const auto px = ds.images.data();
  for (int ch = 0; ch < c; ++ch) {
    double sum = 0, sq = 0;
    for (int n = 0; n < ds.size(); ++n) {
      const auto p = px.subspan((static_cast<std::size_t>(n) * c + ch) * plane, plane);
      for (float v : p) {
        sum += v;
        sq += static_cast<double>(v) * v;
      }
    }
    const double cnt = static_cast<double>(plane) * ds.size();
    const double m = sum / cnt;
    ds.mean[static_cast<std::size_t>(ch)] = static_cast<float>(m);
    ds.std[static_cast<std::size_t>(ch)] = static_cast<float>(std::max(std::sqrt(std::max(sq / cnt - m * m, 0.0)), 1e-6));
  }
}

void copy_stats(Dataset& to, const Dataset& from) {
  to.mean = from.mean;
  to.std = from.std;
}

void normalize(Tensor& batch, std::span<const float> mean, std::span<const float> std) {
  if (mean.empty()) return;
  const int n = batch.dim(0), c = batch.dim(1);
  if (static_cast<int>(mean.size()) != c || static_cast<int>(std.size()) != c)
    throw ShapeError("", "normalization stats for " + std::to_string(mean.size()) + " channels, batch has " +
                             std::to_string(c));
  const std::size_t plane = static_cast<std::size_t>(batch.dim(2)) * batch.dim(3);
  auto px = batch.data();
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const float m = mean[static_cast<std::size_t>(ch)], inv = 1.0f / std[static_cast<std::size_t>(ch)];
      for (auto& v : px.subspan((static_cast<std::size_t>(i) * c + ch) * plane, plane)) v = (v - m) * inv;
    }
}

AugmentFlags parse_augment(const std::string& csv) {
  AugmentFlags f;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "flip") f.flip = true;
    else if (item == "crop") f.crop = true;
    else if (item == "none" || item.empty()) continue;
    else throw Error("unknown augmentation '" + item + "' (flip|crop|none)");
  }
  return f;
}

AugmentDraw draw_augment(const AugmentFlags& flags, Rng& rng) {
  AugmentDraw d;
  if (flags.crop) {
    d.dy = static_cast<int>(rng.below(static_cast<std::uint64_t>(2 * flags.pad + 1)));
    d.dx = static_cast<int>(rng.below(static_cast<std::uint64_t>(2 * flags.pad + 1)));
  } else {
    d.dy = d.dx = flags.pad;
  }
  d.flip = flags.flip && rng.bernoulli(flags.flip_p);
  return d;
}

void apply_augment(Tensor& batch, int n, const AugmentDraw& d, int pad) {
  const int c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  if (d.dy == pad && d.dx == pad && !d.flip) return;
  std::vector<float> tmp(static_cast<std::size_t>(h) * w);
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        // output (y, x) reads padded (y + dy, x' + dx), x' flipped when requested
        const int xs = d.flip ? w - 1 - x : x;
        const int sy = y + d.dy - pad, sx = xs + d.dx - pad;
        tmp[static_cast<std::size_t>(y * w + x)] = sy >= 0 && sy < h && sx >= 0 && sx < w ? batch.at(n, ch, sy, sx) : 0.0f;
      }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) batch.at(n, ch, y, x) = tmp[static_cast<std::size_t>(y * w + x)];
  }
}

void augment(Tensor& batch, const AugmentFlags& flags, Rng& rng) {
  if (!flags.flip && !flags.crop) return;
  for (int i = 0; i < batch.dim(0); ++i) apply_augment(batch, i, draw_augment(flags, rng), flags.pad);
}

Tensor center_crop(const Tensor& images, int size) {
  const int n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  if (size > h || size > w) throw ShapeError("", "crop " + std::to_string(size) + " larger than " + shape_str(images.shape()));
  const int oy = (h - size) / 2, ox = (w - size) / 2;
  Tensor out({n, c, size, size});
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) out.at(i, ch, y, x) = images.at(i, ch, y + oy, x + ox);
  return out;
}

}  // namespace sakit::data
