#pragma once

#include <string>
#include <vector>

#include "tcal/image.hpp"
#include "tcal/rng.hpp"

namespace tcal {

struct AugmentParams {
  double blur_sigma_max = 256.0;
  double noise_sigma_max = 50.0;
  double apply_probability = 0.5;
  double rotation_max_deg = 45.0;   // rotations drawn in [-max, +max]
  double crop_scale_min = 0.8;
  double crop_scale_max = 1.0;
};

// Training regimes: I geometric only, II adds blur, III adds noise.
enum class DatasetVariant { I, II, III };

DatasetVariant parse_variant(const std::string& text);
std::string variant_name(DatasetVariant v);

// Discrete Gaussian taps with radius ceil(3*sigma), trimmed of outermost
// zero weights and renormalized to sum exactly 1.
std::vector<double> gaussian_kernel(double sigma);

// Separable convolution (horizontal then vertical) in doubles with reflect
// borders; rounded to nearest and clamped to [0, 255] once at the end.
ImageBuffer gaussian_blur(const ImageBuffer& img, double sigma);

// Independent N(0, sigma) added per pixel in intensity units (row-major draw
// order), rounded and clamped.
ImageBuffer gaussian_noise(const ImageBuffer& img, double sigma, Rng& rng);

// Sampled decisions for one geometric augmentation. Tests construct plans
// directly to pin individual steps.
struct GeometricPlan {
  bool crop = false;
  double crop_scale = 1.0;
  double crop_fx = 0.0;  // fractional crop origin in [0, 1]
  double crop_fy = 0.0;
  bool flip_h = false;
  bool flip_v = false;
  bool rotate = false;
  double angle_deg = 0.0;
};

GeometricPlan plan_geometric(const AugmentParams& params, Rng& rng);

// Applies crop -> flip-h -> flip-v -> rotate. Crop resizes back to the input
// dimensions with bilinear interpolation; rotation uses bilinear sampling
// with reflect fill. Output dimensions always equal input dimensions.
ImageBuffer apply_geometric(const ImageBuffer& img, const GeometricPlan& plan);

ImageBuffer geometric_augment(const ImageBuffer& img, const AugmentParams& params, Rng& rng);

struct PipelineTrace {
  bool blur_applied = false;
  double blur_sigma = 0.0;
  bool noise_applied = false;
  double noise_sigma = 0.0;
  GeometricPlan plan;
};

// Variant II draws blur sigma uniformly in [1, blur_sigma_max] and variant
// III noise sigma in [1, noise_sigma_max], each fired with apply_probability;
// the blur/noise step precedes the geometric augmentation.
ImageBuffer training_pipeline(const ImageBuffer& img, DatasetVariant variant,
                              const AugmentParams& params, Rng& rng,
                              PipelineTrace* trace = nullptr);

}  // namespace tcal
