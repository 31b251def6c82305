// Copyright 2026 The metanas Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "metanas/error.hpp"
#include "metanas/graph.hpp"
#include "metanas/io.hpp"
#include "metanas/random.hpp"

namespace metanas {

/// One split: images stored sample-major, each sample CHW.
struct DataSplit {
  std::vector<double> images;
  std::vector<int> labels;

  std::size_t size() const noexcept { return labels.size(); }
};

struct Dataset {
  Shape sample_shape;
  int num_classes = 0;
  DataSplit train;
  DataSplit val;

  std::size_t sample_size() const noexcept { return sample_shape.size(); }
  const double* image(const DataSplit& split, std::size_t i) const noexcept {
    return split.images.data() + i * sample_size();
  }
};

namespace detail {

/// First floor(0.8 n) samples train, the rest validate.
inline Dataset split_dataset(Shape shape, int classes, std::vector<double> images, std::vector<int> labels) {
  Dataset d;
  d.sample_shape = shape;
  d.num_classes = classes;
  const std::size_t n = labels.size();
  const std::size_t n_train = (8 * n) / 10;
  const std::size_t sz = shape.size();
  d.train.images.assign(images.begin(), images.begin() + static_cast<std::ptrdiff_t>(n_train * sz));
  d.train.labels.assign(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n_train));
  d.val.images.assign(images.begin() + static_cast<std::ptrdiff_t>(n_train * sz), images.end());
  d.val.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(n_train), labels.end());
  return d;
}

}  // namespace detail

struct SyntheticSpec {
  int classes = 4;
  int samples = 512;
  int height = 16;
  int width = 16;
  int channels = 1;
  double noise = 0.1;
  std::uint64_t seed = 0;

  void check() const {
    if (classes < 2) fail(ErrorKind::invalid_spec, "synthetic dataset needs >= 2 classes");
    if (samples < 2) fail(ErrorKind::invalid_spec, "synthetic dataset needs >= 2 samples");
    if (height < 3 || width < 3 || channels < 1)
      fail(ErrorKind::invalid_spec, "synthetic images must be at least 3x3 with >= 1 channel");
    if (noise < 0.0) fail(ErrorKind::invalid_spec, "noise must be >= 0");
  }
};

/// Class k draws a bar through the image centre at angle pi*k/classes with
/// brightness 0.5 + 0.5*k/(classes-1), shifted by up to one pixel across its
/// direction, on a zero background plus Gaussian noise. Labels cycle through
/// the classes so every split stays balanced.
inline Dataset generate_synthetic_dataset(const SyntheticSpec& spec) {
  spec.check();
  Rng rng = make_stream(spec.seed, "synthetic-data");
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> shift(-1.0, 1.0);
  const Shape shape{spec.channels, spec.height, spec.width};
  std::vector<double> images(static_cast<std::size_t>(spec.samples) * shape.size(), 0.0);
  std::vector<int> labels(static_cast<std::size_t>(spec.samples));
  const double cy = 0.5 * (spec.height - 1), cx = 0.5 * (spec.width - 1);
  for (int i = 0; i < spec.samples; ++i) {
    const int k = i % spec.classes;
    labels[static_cast<std::size_t>(i)] = k;
    const double theta = std::numbers::pi * k / spec.classes;
    const double brightness = 0.5 + 0.5 * k / (spec.classes - 1);
    const double dx = std::cos(theta), dy = std::sin(theta);
    const double offset = shift(rng);
    double* img = images.data() + static_cast<std::size_t>(i) * shape.size();
    for (int y = 0; y < spec.height; ++y)
      for (int x = 0; x < spec.width; ++x) {
        // Signed distance from the bar's centre line.
        const double dist = -(x - cx) * dy + (y - cy) * dx - offset;
        const double v = std::abs(dist) <= 1.0 ? brightness : 0.0;
        for (int c = 0; c < spec.channels; ++c) {
          double& px = img[(static_cast<std::size_t>(c) * spec.height + y) * spec.width + x];
          px = v + (spec.noise > 0.0 ? spec.noise * noise(rng) : 0.0);
        }
      }
  }
  return detail::split_dataset(shape, spec.classes, std::move(images), std::move(labels));
}

namespace detail {

inline std::uint32_t read_be32(const std::string& bytes, std::size_t at) {
  if (at + 4 > bytes.size()) fail(ErrorKind::malformed_file, "IDX header truncated");
  return (std::uint32_t(std::uint8_t(bytes[at])) << 24) | (std::uint32_t(std::uint8_t(bytes[at + 1])) << 16) |
         (std::uint32_t(std::uint8_t(bytes[at + 2])) << 8) | std::uint32_t(std::uint8_t(bytes[at + 3]));
}

}  // namespace detail

/// Reads an IDX image file (magic 0x803, dims n x h x w) and label file
/// (magic 0x801). Pixels are scaled to [0, 1]; at most `limit` samples are
/// kept (0 keeps all) before the 80/20 split.
inline Dataset load_idx_dataset(const std::filesystem::path& images_path,
                                const std::filesystem::path& labels_path, std::size_t limit = 0) {
  const std::string img = read_file(images_path);
  const std::string lab = read_file(labels_path);
  if (detail::read_be32(img, 0) != 0x803) fail(ErrorKind::malformed_file, "bad IDX image magic");
  if (detail::read_be32(lab, 0) != 0x801) fail(ErrorKind::malformed_file, "bad IDX label magic");
  const std::size_t n = detail::read_be32(img, 4);
  const std::size_t h = detail::read_be32(img, 8);
  const std::size_t w = detail::read_be32(img, 12);
  const std::size_t n_labels = detail::read_be32(lab, 4);
  if (n != n_labels)
    fail(ErrorKind::dimension_mismatch, std::to_string(n) + " images but " + std::to_string(n_labels) + " labels");
  if (img.size() < 16 + n * h * w) fail(ErrorKind::malformed_file, "IDX image payload truncated");
  if (lab.size() < 8 + n) fail(ErrorKind::malformed_file, "IDX label payload truncated");
  const std::size_t keep = limit == 0 ? n : std::min(limit, n);
  std::vector<double> images(keep * h * w);
  std::vector<int> labels(keep);
  int classes = 0;
  for (std::size_t i = 0; i < keep; ++i) {
    labels[i] = std::uint8_t(lab[8 + i]);
    classes = std::max(classes, labels[i] + 1);
    for (std::size_t p = 0; p < h * w; ++p) images[i * h * w + p] = std::uint8_t(img[16 + i * h * w + p]) / 255.0;
  }
  return detail::split_dataset({1, static_cast<int>(h), static_cast<int>(w)}, std::max(classes, 2),
                               std::move(images), std::move(labels));
}

}  // namespace metanas
