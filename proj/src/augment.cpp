#include "tcal/augment.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "tcal/errors.hpp"

namespace tcal {

DatasetVariant parse_variant(const std::string& text) {
  if (text == "I") return DatasetVariant::I;
  if (text == "II") return DatasetVariant::II;
  if (text == "III") return DatasetVariant::III;
  throw ConfigError("unknown dataset variant '" + text + "' (expected I, II, or III)");
}

std::string variant_name(DatasetVariant v) {
  switch (v) {
    case DatasetVariant::I: return "I";
    case DatasetVariant::II: return "II";
    case DatasetVariant::III: return "III";
  }
  throw ConfigError("invalid variant value");
}

std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0)) throw NumericError("gaussian_kernel: sigma must be positive");
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> w(2 * radius + 1);
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int i = -radius; i <= radius; ++i)
    w[i + radius] = std::exp(-static_cast<double>(i) * i * inv);
  // Very small sigmas underflow the outer taps; trim them so the kernel
  // degenerates to [1] in the delta limit.
  while (w.size() > 1 && w.front() == 0.0) {
    w.erase(w.begin());
    w.pop_back();
  }
  double sum = 0.0;
  for (double v : w) sum += v;
  for (double& v : w) v /= sum;
  return w;
}

namespace {

// Dot product with eight interleaved accumulators and a fixed combine order.
// A single running sum serializes on FP add latency; this is ~6x faster and
// still bit-deterministic.
double dot8(const double* __restrict a, const double* __restrict b, int n) {
  double acc[8] = {0.0};
  double tail = 0.0;
  int i = 0;
  for (; i + 8 <= n; i += 8)
    for (int j = 0; j < 8; ++j) acc[j] += a[i + j] * b[i + j];
  for (; i < n; ++i) tail += a[i] * b[i];
  return (((acc[0] + acc[1]) + (acc[2] + acc[3])) +
          ((acc[4] + acc[5]) + (acc[6] + acc[7]))) +
         tail;
}

// One reflect-border convolution pass along x. Rows of `src` have length n;
// there are `rows` of them.
void convolve_rows(const std::vector<double>& src, std::vector<double>& dst,
                   int n, int rows, const std::vector<double>& w) {
  const int klen = static_cast<int>(w.size());
  const int r = klen / 2;
  if (klen >= n) {
    // Kernel spans the whole axis: fold it through the reflection once into
    // an n x n weight matrix, then apply it to every row.
    std::vector<double> fold(static_cast<std::size_t>(n) * n, 0.0);
    for (int x = 0; x < n; ++x) {
      double* fx = fold.data() + static_cast<std::size_t>(x) * n;
      for (int o = 0; o < klen; ++o)
        fx[mirror_index(static_cast<long long>(x) + o - r, n)] += w[o];
    }
    for (int row = 0; row < rows; ++row) {
      const double* s = src.data() + static_cast<std::size_t>(row) * n;
      double* d = dst.data() + static_cast<std::size_t>(row) * n;
      for (int x = 0; x < n; ++x)
        d[x] = dot8(fold.data() + static_cast<std::size_t>(x) * n, s, n);
    }
    return;
  }
  // Mirror each row into a padded buffer once so every output pixel is a
  // contiguous dot product; per-tap mirror arithmetic is far slower.
  std::vector<double> pad(static_cast<std::size_t>(n) + 2 * r);
  for (int row = 0; row < rows; ++row) {
    const double* s = src.data() + static_cast<std::size_t>(row) * n;
    double* d = dst.data() + static_cast<std::size_t>(row) * n;
    for (int i = -r; i < n + r; ++i)
      pad[static_cast<std::size_t>(i + r)] = s[mirror_index(i, n)];
    for (int x = 0; x < n; ++x) d[x] = dot8(w.data(), pad.data() + x, klen);
  }
}

std::vector<double> transpose(const std::vector<double>& src, int w, int h) {
  std::vector<double> out(src.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      out[static_cast<std::size_t>(x) * h + y] = src[static_cast<std::size_t>(y) * w + x];
  return out;
}

}  // namespace

ImageBuffer gaussian_blur(const ImageBuffer& img, double sigma) {
  if (img.width < 1 || img.height < 1) throw NumericError("gaussian_blur: empty image");
  const auto kernel = gaussian_kernel(sigma);

  std::vector<double> plane(img.pixels.size());
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    plane[i] = static_cast<double>(img.pixels[i]);

  std::vector<double> tmp(plane.size());
  convolve_rows(plane, tmp, img.width, img.height, kernel);
  // Vertical pass runs on the transpose so the inner loops stay contiguous.
  std::vector<double> tmp_t = transpose(tmp, img.width, img.height);
  std::vector<double> out_t(plane.size());
  convolve_rows(tmp_t, out_t, img.height, img.width, kernel);
  std::vector<double> out = transpose(out_t, img.height, img.width);

  ImageBuffer result(img.width, img.height);
  for (std::size_t i = 0; i < out.size(); ++i)
    result.pixels[i] = clamp_to_byte(out[i]);
  return result;
}

ImageBuffer gaussian_noise(const ImageBuffer& img, double sigma, Rng& rng) {
  if (sigma < 0.0) throw NumericError("gaussian_noise: sigma must be >= 0");
  if (sigma == 0.0) return img;
  ImageBuffer out(img.width, img.height);
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    out.pixels[i] = clamp_to_byte(img.pixels[i] + sigma * rng.normal());
  return out;
}

GeometricPlan plan_geometric(const AugmentParams& params, Rng& rng) {
  GeometricPlan plan;
  plan.crop = rng.coin(params.apply_probability);
  if (plan.crop) {
    plan.crop_scale = rng.uniform(params.crop_scale_min, params.crop_scale_max);
    plan.crop_fx = rng.uniform();
    plan.crop_fy = rng.uniform();
  }
  plan.flip_h = rng.coin(params.apply_probability);
  plan.flip_v = rng.coin(params.apply_probability);
  plan.rotate = rng.coin(params.apply_probability);
  if (plan.rotate)
    plan.angle_deg = rng.uniform(-params.rotation_max_deg, params.rotation_max_deg);
  return plan;
}

namespace {

ImageBuffer crop_and_resize(const ImageBuffer& img, double scale, double fx, double fy) {
  const int cw = std::max(1, static_cast<int>(std::lround(scale * img.width)));
  const int ch = std::max(1, static_cast<int>(std::lround(scale * img.height)));
  const int x0 = static_cast<int>(std::lround(fx * (img.width - cw)));
  const int y0 = static_cast<int>(std::lround(fy * (img.height - ch)));
  ImageBuffer window(cw, ch);
  for (int y = 0; y < ch; ++y)
    for (int x = 0; x < cw; ++x)
      window.at(x, y) = img.at(x0 + x, y0 + y);
  return resize_bilinear(window, img.width, img.height);
}

ImageBuffer rotate_bilinear(const ImageBuffer& img, double angle_deg) {
  const double rad = angle_deg * 3.14159265358979323846 / 180.0;
  const double c = std::cos(rad), s = std::sin(rad);
  const double cx = (img.width - 1) / 2.0, cy = (img.height - 1) / 2.0;
  ImageBuffer out(img.width, img.height);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      // Inverse map with reflect fill for samples outside the frame.
      const double dx = x - cx, dy = y - cy;
      const double sx = c * dx + s * dy + cx;
      const double sy = -s * dx + c * dy + cy;
      const int x0 = static_cast<int>(std::floor(sx));
      const int y0 = static_cast<int>(std::floor(sy));
      const double wx = sx - x0, wy = sy - y0;
      const int xa = mirror_index(x0, img.width), xb = mirror_index(x0 + 1, img.width);
      const int ya = mirror_index(y0, img.height), yb = mirror_index(y0 + 1, img.height);
      const double top = (1.0 - wx) * img.at(xa, ya) + wx * img.at(xb, ya);
      const double bot = (1.0 - wx) * img.at(xa, yb) + wx * img.at(xb, yb);
      out.at(x, y) = clamp_to_byte((1.0 - wy) * top + wy * bot);
    }
  }
  return out;
}

}  // namespace

ImageBuffer apply_geometric(const ImageBuffer& img, const GeometricPlan& plan) {
  ImageBuffer out = img;
  if (plan.crop) out = crop_and_resize(out, plan.crop_scale, plan.crop_fx, plan.crop_fy);
  if (plan.flip_h) {
    ImageBuffer flipped(out.width, out.height);
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x)
        flipped.at(x, y) = out.at(out.width - 1 - x, y);
    out = std::move(flipped);
  }
  if (plan.flip_v) {
    ImageBuffer flipped(out.width, out.height);
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x)
        flipped.at(x, y) = out.at(x, out.height - 1 - y);
    out = std::move(flipped);
  }
  if (plan.rotate) out = rotate_bilinear(out, plan.angle_deg);
  return out;
}

ImageBuffer geometric_augment(const ImageBuffer& img, const AugmentParams& params, Rng& rng) {
  return apply_geometric(img, plan_geometric(params, rng));
}

ImageBuffer training_pipeline(const ImageBuffer& img, DatasetVariant variant,
                              const AugmentParams& params, Rng& rng,
                              PipelineTrace* trace) {
  ImageBuffer out = img;
  PipelineTrace local;
  if (variant == DatasetVariant::II) {
    if (rng.coin(params.apply_probability)) {
      local.blur_applied = true;
      local.blur_sigma = rng.uniform(1.0, params.blur_sigma_max);
      out = gaussian_blur(out, local.blur_sigma);
    }
  } else if (variant == DatasetVariant::III) {
    if (rng.coin(params.apply_probability)) {
      local.noise_applied = true;
      local.noise_sigma = rng.uniform(1.0, params.noise_sigma_max);
      out = gaussian_noise(out, local.noise_sigma, rng);
    }
  }
  local.plan = plan_geometric(params, rng);
  out = apply_geometric(out, local.plan);
  if (trace) *trace = local;
  return out;
}

}  // namespace tcal
