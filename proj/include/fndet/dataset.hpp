#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include "fndet/boxes.hpp"
#include "fndet/tensor.hpp"

namespace fndet {

struct Sample {
  Tensor4 image;  // (1, 3, h, w), values in [0, 1]
  std::vector<GroundTruth> gts;
  std::string id;
};

/// One object per line: "class cx cy w h". Coordinates outside [0, 1]
/// (or non-positive sizes) raise ParseError with the line number.
std::vector<GroundTruth> parse_yolo_txt(std::istream& is);
std::vector<GroundTruth> load_yolo_txt(const std::string& path);
void write_yolo_txt(std::ostream& os, const std::vector<GroundTruth>& gts);
void save_yolo_txt(const std::string& path, const std::vector<GroundTruth>& gts);

/// Binary P6, maxval 255. Pixels map to k/255.
Tensor4 read_ppm(std::istream& is);
Tensor4 load_ppm(const std::string& path);
void write_ppm(std::ostream& os, const Tensor4& image);
void save_ppm(const std::string& path, const Tensor4& image);

enum class AugmentKind { kHFlip, kVFlip, kScale, kTranslate, kCrop };

struct AugmentOp {
  AugmentKind kind = AugmentKind::kHFlip;
  double factor = 1.0;       // scale: zoom about the image center
  double dx = 0, dy = 0;     // translate: pixels
  BBox region{0, 0, 1, 1};   // crop: normalized corners, resampled to full size

  static AugmentOp hflip() { return {AugmentKind::kHFlip}; }
  static AugmentOp vflip() { return {AugmentKind::kVFlip}; }
  static AugmentOp scale(double f) { return {AugmentKind::kScale, f}; }
  static AugmentOp translate(double dx, double dy) { return {AugmentKind::kTranslate, 1.0, dx, dy}; }
  static AugmentOp crop(const BBox& region) { return {AugmentKind::kCrop, 1.0, 0, 0, region}; }
};

/// Applies one geometric transform to pixels and boxes. Uncovered pixels
/// become 0; boxes are clipped to the frame and dropped when less than
/// `min_visible` of their area remains.
Sample augment(const Sample& s, const AugmentOp& op, double min_visible = 0.2);

struct AugmentPolicy {
  double p = 0.5;  // per-op probability
  double scale_min = 0.75, scale_max = 1.25;
  double translate_max = 0.1;  // fraction of the image side
  double crop_min = 0.6;       // smallest crop side, fraction of the image
};

/// Draws each op independently with probability policy.p.
Sample random_augment(const Sample& s, const AugmentPolicy& policy, std::uint64_t seed);

struct Split {
  std::vector<std::string> train, val, test;
};

/// Seeded shuffle, then partition by largest-remainder rounding of `ratios`.
Split split(std::vector<std::string> ids, const std::array<double, 3>& ratios, std::uint64_t seed);

/// Bright ellipses on a dark noisy background; 1..max_objects per image.
/// Pixel values are multiples of 1/255 so PPM round trips are exact.
std::vector<Sample> synth_blobs(int n_images, int size, int max_objects, std::uint64_t seed);

/// images/<id>.ppm plus labels/<id>.txt under `root`.
void save_dataset(const std::string& root, const std::vector<Sample>& samples);
/// Loads every id in `ids` (or every image under root when `ids` is empty).
std::vector<Sample> load_dataset(const std::string& root, const std::vector<std::string>& ids = {});
void write_manifest(const std::string& path, const std::vector<std::string>& ids);
std::vector<std::string> read_manifest(const std::string& path);

/// Stacks same-sized samples into one (n, 3, h, w) batch.
Tensor4 stack_images(const std::vector<const Sample*>& samples);

}  // namespace fndet
