#include "tcal/image.hpp"

#include <algorithm>
#include <cmath>

#include "tcal/errors.hpp"

namespace tcal {

int mirror_index(long long t, int n) {
  if (n == 1) return 0;
  const long long period = 2LL * n;
  long long m = t % period;
  if (m < 0) m += period;
  if (m >= n) m = period - 1 - m;
  return static_cast<int>(m);
}

std::uint8_t clamp_to_byte(double v) {
  const double r = std::nearbyint(v);
  if (r <= 0.0) return 0;
  if (r >= 255.0) return 255;
  return static_cast<std::uint8_t>(r);
}

ImageBuffer resize_bilinear(const ImageBuffer& src, int new_width, int new_height) {
  if (src.width < 1 || src.height < 1)
    throw NumericError("resize_bilinear: empty source image");
  if (new_width < 1 || new_height < 1)
    throw NumericError("resize_bilinear: target dimensions must be positive");
  if (new_width == src.width && new_height == src.height) return src;

  ImageBuffer out(new_width, new_height);
  const double sx = static_cast<double>(src.width) / new_width;
  const double sy = static_cast<double>(src.height) / new_height;
  for (int y = 0; y < new_height; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(src.height - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, src.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < new_width; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(src.width - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, src.width - 1);
      const double wx = fx - x0;
      const double top = (1.0 - wx) * src.at(x0, y0) + wx * src.at(x1, y0);
      const double bot = (1.0 - wx) * src.at(x0, y1) + wx * src.at(x1, y1);
      out.at(x, y) = clamp_to_byte((1.0 - wy) * top + wy * bot);
    }
  }
  return out;
}

std::vector<double> to_unit_doubles(const ImageBuffer& img) {
  std::vector<double> out(img.pixels.size());
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    out[i] = img.pixels[i] / 255.0;
  return out;
}

}  // namespace tcal
