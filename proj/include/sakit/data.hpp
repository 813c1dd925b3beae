#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "sakit/rng.hpp"
#include "sakit/tensor.hpp"

namespace sakit::data {

// Images are N x C x H x W floats; CIFAR and PPM pixels are scaled to [0, 1].
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  int num_classes = 0;
  std::string split;
  // Per-channel stats, normally taken from the training split.
  std::vector<float> mean;
  std::vector<float> std;

  int size() const { return static_cast<int>(labels.size()); }
  int channels() const { return images.dim(1); }
  int height() const { return images.dim(2); }
  int width() const { return images.dim(3); }
  Shape sample_shape() const { return {channels(), height(), width()}; }

  void validate() const;
  Dataset subset(std::span<const int> indices) const;
  // Images [begin, begin + n) in the given order; no normalization.
  Tensor gather(std::span<const int> order, int begin, int n) const;
};

enum class CifarVariant { cifar10, cifar100 };
CifarVariant parse_cifar_variant(const std::string& s);

inline constexpr int kCifarPixels = 3 * 32 * 32;
inline int cifar_record_size(CifarVariant v) { return (v == CifarVariant::cifar100 ? 2 : 1) + kCifarPixels; }

// One binary file. cifar100 uses the fine label (second byte).
Dataset load_cifar(const std::filesystem::path& file, CifarVariant variant);
Dataset parse_cifar(std::span<const std::uint8_t> bytes, CifarVariant variant, std::string split = "");
// Standard directory layout: data_batch_{1..5}.bin / test_batch.bin, or train.bin / test.bin.
Dataset load_cifar_split(const std::filesystem::path& dir, CifarVariant variant, bool train);

// Blob images: class c has a blob radius from a fixed ladder and either one
// blob or a horizontal pair. Position, colour and amplitude are random per
// sample, so raw pixel sums carry little class signal.
Dataset synthetic_dataset(int classes, int per_class, int size, std::uint64_t seed, std::string split = "");

// Folder-of-images: <dir>/<class>/*.ppm (binary P6). Class ids follow sorted
// directory names. Images must share one size. Smoke-test sized only.
Dataset load_image_folder(const std::filesystem::path& dir);
Tensor read_ppm(const std::filesystem::path& file);  // 1 x 3 x H x W in [0, 1]

// Per-channel mean/std over all pixels; std floored at 1e-6.
void attach_stats(Dataset& ds);
void copy_stats(Dataset& to, const Dataset& from);
void normalize(Tensor& batch, std::span<const float> mean, std::span<const float> std);

struct AugmentFlags {
  bool flip = false;
  bool crop = false;
  int pad = 4;
  double flip_p = 0.5;
};
AugmentFlags parse_augment(const std::string& csv);  // "flip,crop", "none" or ""

struct AugmentDraw {
  bool flip = false;
  int dy = 0;  // crop offset into the padded image, in [0, 2 * pad]
  int dx = 0;
};
AugmentDraw draw_augment(const AugmentFlags& flags, Rng& rng);
// Zero-pad then crop back to the original size, then flip.
void apply_augment(Tensor& batch, int n, const AugmentDraw& d, int pad);
void augment(Tensor& batch, const AugmentFlags& flags, Rng& rng);

// Central size x size window of every image.
Tensor center_crop(const Tensor& images, int size);

}  // namespace sakit::data
