#include "uanll/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "uanll/detail/binary_io.hpp"
#include "uanll/errors.hpp"

namespace uanll {

namespace {

constexpr std::string_view kDatasetMagic = "UDAT0001";

// Shape templates on normalized coordinates (u, v) in roughly [-1, 1].
// Returns 1 inside the shape and 0 outside.
double shape_template(std::size_t k, double u, double v) {
  const double au = std::abs(u);
  const double av = std::abs(v);
  const double r = std::hypot(u, v);
  switch (k) {
    case 0:  // filled disk
      return r <= 0.62 ? 1.0 : 0.0;
    case 1:  // filled square of similar area
      return std::max(au, av) <= 0.55 ? 1.0 : 0.0;
    case 2:  // three horizontal bars
    case 3: {  // four horizontal bars
      if (au > 0.75 || av > 0.75) return 0.0;
      const double periods = k == 2 ? 3.0 : 4.0;
      const double phase = (v + 0.75) / 1.5 * periods;
      return phase - std::floor(phase) < 0.5 ? 1.0 : 0.0;
    }
    case 4:  // upright cross
      return (au <= 0.18 && av <= 0.75) || (av <= 0.18 && au <= 0.75) ? 1.0 : 0.0;
    case 5: {  // diagonal cross
      const double d1 = std::abs(u - v) / std::numbers::sqrt2;
      const double d2 = std::abs(u + v) / std::numbers::sqrt2;
      return (d1 <= 0.18 || d2 <= 0.18) && r <= 0.8 ? 1.0 : 0.0;
    }
    case 6:  // ring
      return r <= 0.7 && r >= 0.45 ? 1.0 : 0.0;
    case 7: {  // square outline
      const double m = std::max(au, av);
      return m <= 0.62 && m >= 0.4 ? 1.0 : 0.0;
    }
    case 8:  // 2 x 2 checker
    case 9: {  // 3 x 3 checker
      if (au > 0.75 || av > 0.75) return 0.0;
      const double cells = k == 8 ? 2.0 : 3.0;
      const auto cu = static_cast<long>(std::floor((u + 0.75) / 1.5 * cells));
      const auto cv = static_cast<long>(std::floor((v + 0.75) / 1.5 * cells));
      return (cu + cv) % 2 == 0 ? 1.0 : 0.0;
    }
    default:
      return 0.0;
  }
}

void render(LabeledImage& img, std::size_t k, double cx, double cy, double scale,
            double contrast) {
  const double half = 0.5 * static_cast<double>(img.width);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      const double u = ((static_cast<double>(x) + 0.5) - half - cx) / (half * scale);
      const double v = ((static_cast<double>(y) + 0.5) - half - cy) / (half * scale);
      img.at(0, y, x) = contrast * shape_template(k, u, v);
    }
  }
}

void check_same_shape(const LabeledImage& a, const LabeledImage& b) {
  if (a.channels != b.channels || a.height != b.height || a.width != b.width) {
    throw ConfigError("dataset images differ in shape");
  }
}

Dataset subset(const Dataset& ds, std::span<const std::size_t> idx) {
  Dataset out;
  out.num_classes = ds.num_classes;
  out.images.reserve(idx.size());
  for (std::size_t i : idx) out.images.push_back(ds.images[i]);
  if (ds.clean_labels) {
    std::vector<std::size_t> clean;
    clean.reserve(idx.size());
    for (std::size_t i : idx) clean.push_back((*ds.clean_labels)[i]);
    out.clean_labels = std::move(clean);
  }
  return out;
}

Dataset apply_channel_affine(const Dataset& ds, const ChannelStats& stats, bool forward) {
  Dataset out = ds;
  for (auto& img : out.images) {
    if (stats.means.size() != img.channels || stats.stds.size() != img.channels) {
      throw ShapeError("normalization statistics must have one entry per channel");
    }
    const std::size_t plane = img.height * img.width;
    for (std::size_t c = 0; c < img.channels; ++c) {
      const double mean = stats.means[c];
      const double std = stats.stds[c];
      double* p = img.pixels.data() + c * plane;
      for (std::size_t k = 0; k < plane; ++k) p[k] = forward ? (p[k] - mean) / std : p[k] * std + mean;
    }
  }
  return out;
}

}  // namespace

std::vector<std::size_t> Dataset::labels() const {
  std::vector<std::size_t> out;
  out.reserve(images.size());
  for (const auto& img : images) out.push_back(img.label);
  return out;
}

std::vector<std::size_t> Dataset::true_labels() const {
  return clean_labels ? *clean_labels : labels();
}

void Dataset::validate() const {
  for (const auto& img : images) {
    if (img.pixels.size() != img.channels * img.height * img.width) {
      throw ConfigError("image pixel count does not match its declared shape");
    }
    if (img.label >= num_classes) throw ConfigError("label out of range");
    check_same_shape(img, images.front());
  }
  if (clean_labels) {
    if (clean_labels->size() != images.size()) throw ConfigError("clean label count mismatch");
    for (std::size_t l : *clean_labels) {
      if (l >= num_classes) throw ConfigError("clean label out of range");
    }
  }
}

Dataset gen_synthetic_shapes(std::size_t num_classes, std::size_t per_class, std::size_t side,
                             double noise_std, std::uint64_t seed) {
  if (num_classes < 2) throw ConfigError("synthetic data needs at least 2 classes");
  if (num_classes > kSyntheticTemplates) {
    throw ConfigError("only " + std::to_string(kSyntheticTemplates) + " synthetic templates exist");
  }
  if (side < 8) throw ConfigError("synthetic images need side >= 8");
  if (!(noise_std >= 0.0)) throw ConfigError("noise_std must be non-negative");

  Dataset ds;
  ds.num_classes = num_classes;
  ds.images.reserve(num_classes * per_class);
  for (std::size_t k = 0; k < num_classes; ++k) {
    for (std::size_t i = 0; i < per_class; ++i) {
      Rng rng(derive_seed(seed, k, i));
      LabeledImage img{1, side, side, std::vector<double>(side * side, 0.0), k};
      if (i == 0) {
        render(img, k, 0.0, 0.0, 1.0, 1.0);
      } else {
        const double scale = rng.uniform(0.8, 1.0);
        const double slack = 0.05 * static_cast<double>(side);
        const double cx = rng.uniform(-slack, slack);
        const double cy = rng.uniform(-slack, slack);
        const double contrast = rng.uniform(0.6, 1.0);
        render(img, k, cx, cy, scale, contrast);
      }
      if (noise_std > 0.0) {
        for (double& p : img.pixels) p = std::clamp(p + noise_std * rng.normal(), 0.0, 1.0);
      }
      ds.images.push_back(std::move(img));
    }
  }
  return ds;
}

std::vector<std::pair<std::size_t, std::size_t>> adjacent_pairs(std::size_t num_classes) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t k = 0; k + 1 < num_classes; k += 2) pairs.emplace_back(k, k + 1);
  return pairs;
}

Dataset inject_asymmetric_noise(const Dataset& ds, const NoiseSpec& spec) {
  if (!(spec.rate >= 0.0 && spec.rate <= 1.0)) throw ConfigError("noise rate must lie in [0, 1]");
  constexpr std::size_t kUnpaired = static_cast<std::size_t>(-1);
  std::vector<std::size_t> partner(ds.num_classes, kUnpaired);
  std::vector<bool> used(ds.num_classes, false);
  for (const auto& [a, b] : spec.pairs) {
    if (a >= ds.num_classes || b >= ds.num_classes) throw ConfigError("noise pair index out of range");
    if (a == b) throw ConfigError("noise pair must name two different classes");
    if (used[a] || used[b]) throw ConfigError("noise pairs overlap");
    used[a] = used[b] = true;
    partner[a] = b;
    if (spec.direction == FlipDirection::Both) partner[b] = a;
  }

  Dataset out = ds;
  if (!out.clean_labels) out.clean_labels = ds.labels();
  Rng rng(spec.seed);
  for (auto& img : out.images) {
    if (img.label >= ds.num_classes) throw ConfigError("label out of range");
    const std::size_t to = partner[img.label];
    if (to >= ds.num_classes) continue;
    if (rng.uniform() < spec.rate) img.label = to;
  }
  return out;
}

LabeledImage random_resized_crop(const LabeledImage& img, double min_scale, Rng& rng) {
  if (!(min_scale > 0.0 && min_scale <= 1.0)) throw DomainError("crop scale must lie in (0, 1]");
  const double area = rng.uniform(min_scale, 1.0);
  const double ratio = std::sqrt(area);
  const auto crop_h = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::lround(ratio * static_cast<double>(img.height))), 1, img.height);
  const auto crop_w = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::lround(ratio * static_cast<double>(img.width))), 1, img.width);
  const std::size_t y0 = rng.below(img.height - crop_h + 1);
  const std::size_t x0 = rng.below(img.width - crop_w + 1);
  if (crop_h == img.height && crop_w == img.width) return img;

  LabeledImage out{img.channels, img.height, img.width,
                   std::vector<double>(img.pixels.size()), img.label};
  const double sy = static_cast<double>(crop_h) / static_cast<double>(img.height);
  const double sx = static_cast<double>(crop_w) / static_cast<double>(img.width);
  for (std::size_t oy = 0; oy < img.height; ++oy) {
    const double fy_src = std::clamp((static_cast<double>(oy) + 0.5) * sy - 0.5, 0.0,
                                     static_cast<double>(crop_h - 1));
    const auto ylo = static_cast<std::size_t>(fy_src);
    const std::size_t yhi = std::min(ylo + 1, crop_h - 1);
    const double fy = fy_src - static_cast<double>(ylo);
    for (std::size_t ox = 0; ox < img.width; ++ox) {
      const double fx_src = std::clamp((static_cast<double>(ox) + 0.5) * sx - 0.5, 0.0,
                                       static_cast<double>(crop_w - 1));
      const auto xlo = static_cast<std::size_t>(fx_src);
      const std::size_t xhi = std::min(xlo + 1, crop_w - 1);
      const double fx = fx_src - static_cast<double>(xlo);
      for (std::size_t c = 0; c < img.channels; ++c) {
        const double top = std::lerp(img.at(c, y0 + ylo, x0 + xlo), img.at(c, y0 + ylo, x0 + xhi), fx);
        const double bottom = std::lerp(img.at(c, y0 + yhi, x0 + xlo), img.at(c, y0 + yhi, x0 + xhi), fx);
        out.at(c, oy, ox) = std::lerp(top, bottom, fy);
      }
    }
  }
  return out;
}

ChannelStats channel_stats(const Dataset& ds) {
  if (ds.empty()) throw ConfigError("cannot compute statistics of an empty dataset");
  const std::size_t channels = ds.images.front().channels;
  const std::size_t plane = ds.images.front().height * ds.images.front().width;
  ChannelStats stats{std::vector<double>(channels, 0.0), std::vector<double>(channels, 0.0)};
  const double count = static_cast<double>(plane * ds.size());
  for (std::size_t c = 0; c < channels; ++c) {
    double sum = 0.0;
    for (const auto& img : ds.images) {
      for (std::size_t k = 0; k < plane; ++k) sum += img.pixels[c * plane + k];
    }
    const double mean = sum / count;
    double sq = 0.0;
    for (const auto& img : ds.images) {
      for (std::size_t k = 0; k < plane; ++k) {
        const double d = img.pixels[c * plane + k] - mean;
        sq += d * d;
      }
    }
    stats.means[c] = mean;
    stats.stds[c] = std::sqrt(sq / count);
  }
  return stats;
}

Dataset normalize(const Dataset& ds, const ChannelStats& stats) {
  for (double s : stats.stds) {
    if (!(s > 0.0)) throw DomainError("normalization std must be positive");
  }
  return apply_channel_affine(ds, stats, true);
}

Dataset denormalize(const Dataset& ds, const ChannelStats& stats) {
  return apply_channel_affine(ds, stats, false);
}

DatasetSplits split_dataset(const Dataset& ds, SplitSizes sizes, std::uint64_t seed) {
  if (sizes.train + sizes.val + sizes.test > ds.size()) {
    throw ConfigError("split sizes exceed dataset size " + std::to_string(ds.size()));
  }
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);
  const std::span<const std::size_t> all(order);
  DatasetSplits out;
  out.train = subset(ds, all.subspan(0, sizes.train));
  out.val = subset(ds, all.subspan(sizes.train, sizes.val));
  out.test = subset(ds, all.subspan(sizes.train + sizes.val, sizes.test));
  if (out.test.clean_labels) {
    for (std::size_t i = 0; i < out.test.size(); ++i) {
      out.test.images[i].label = (*out.test.clean_labels)[i];
    }
    out.test.clean_labels.reset();
  }
  return out;
}

Dataset parse_cifar10_batch(std::span<const std::uint8_t> bytes) {
  if (bytes.size() % kCifarRecordBytes != 0) {
    throw FormatError("CIFAR-10 batch length " + std::to_string(bytes.size()) +
                      " is not a multiple of 3073");
  }
  Dataset ds;
  ds.num_classes = 10;
  const std::size_t count = bytes.size() / kCifarRecordBytes;
  ds.images.reserve(count);
  for (std::size_t r = 0; r < count; ++r) {
    const auto record = bytes.subspan(r * kCifarRecordBytes, kCifarRecordBytes);
    if (record[0] > 9) {
      throw FormatError("record " + std::to_string(r) + " has label byte " +
                        std::to_string(record[0]));
    }
    LabeledImage img{3, kCifarSide, kCifarSide, std::vector<double>(kCifarRecordBytes - 1),
                     record[0]};
    for (std::size_t k = 1; k < kCifarRecordBytes; ++k) img.pixels[k - 1] = record[k] / 255.0;
    ds.images.push_back(std::move(img));
  }
  return ds;
}

std::vector<std::uint8_t> write_cifar10_batch(const Dataset& ds) {
  std::vector<std::uint8_t> out;
  out.reserve(ds.size() * kCifarRecordBytes);
  for (const auto& img : ds.images) {
    if (img.channels != 3 || img.height != kCifarSide || img.width != kCifarSide) {
      throw ShapeError("CIFAR-10 records must be 3 x 32 x 32");
    }
    if (img.label > 9) throw FormatError("CIFAR-10 labels must be 0-9");
    out.push_back(static_cast<std::uint8_t>(img.label));
    for (double p : img.pixels) {
      out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(p, 0.0, 1.0) * 255.0)));
    }
  }
  return out;
}

Dataset load_cifar10_files(const std::vector<std::string>& paths) {
  Dataset all;
  all.num_classes = 10;
  for (const auto& path : paths) {
    Dataset part = parse_cifar10_batch(detail::read_file(path));
    std::move(part.images.begin(), part.images.end(), std::back_inserter(all.images));
  }
  return all;
}

std::vector<std::uint8_t> encode_dataset(const Dataset& ds) {
  ds.validate();
  std::vector<std::uint8_t> out;
  detail::put_magic(out, kDatasetMagic);
  const LabeledImage empty_shape{};
  const LabeledImage& shape = ds.empty() ? empty_shape : ds.images.front();
  detail::put_u32(out, static_cast<std::uint32_t>(ds.num_classes));
  detail::put_u32(out, static_cast<std::uint32_t>(ds.size()));
  detail::put_u32(out, static_cast<std::uint32_t>(shape.channels));
  detail::put_u32(out, static_cast<std::uint32_t>(shape.height));
  detail::put_u32(out, static_cast<std::uint32_t>(shape.width));
  detail::put_u32(out, ds.clean_labels ? 1u : 0u);
  for (const auto& img : ds.images) {
    for (double p : img.pixels) detail::put_f64(out, p);
  }
  for (const auto& img : ds.images) detail::put_u32(out, static_cast<std::uint32_t>(img.label));
  if (ds.clean_labels) {
    for (std::size_t l : *ds.clean_labels) detail::put_u32(out, static_cast<std::uint32_t>(l));
  }
  return out;
}

Dataset decode_dataset(std::span<const std::uint8_t> bytes) {
  detail::ByteReader in(bytes);
  in.expect_magic(kDatasetMagic);
  Dataset ds;
  ds.num_classes = in.u32();
  const std::size_t count = in.u32();
  const std::size_t channels = in.u32();
  const std::size_t height = in.u32();
  const std::size_t width = in.u32();
  const std::uint32_t has_clean = in.u32();
  if (has_clean > 1) throw FormatError("bad clean-label flag");
  const std::size_t plane = channels * height * width;
  if (count > 0 && plane * count > in.remaining() / 8) throw FormatError("dataset truncated");
  ds.images.resize(count);
  for (auto& img : ds.images) {
    img.channels = channels;
    img.height = height;
    img.width = width;
    img.pixels.resize(plane);
    for (double& p : img.pixels) p = in.f64();
  }
  for (auto& img : ds.images) img.label = in.u32();
  if (has_clean == 1) {
    std::vector<std::size_t> clean(count);
    for (auto& l : clean) l = in.u32();
    ds.clean_labels = std::move(clean);
  }
  if (!in.done()) throw FormatError("trailing bytes after dataset");
  try {
    ds.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("invalid dataset file: ") + e.what());
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& path) {
  detail::write_file(path, encode_dataset(ds));
}

Dataset load_dataset(const std::string& path) { return decode_dataset(detail::read_file(path)); }

}  // namespace uanll
