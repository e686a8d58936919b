#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>

#include "tcal/augment.hpp"
#include "tcal/dataset.hpp"
#include "tcal/errors.hpp"
#include "tcal/io_formats.hpp"
#include "tcal/rng.hpp"

namespace tcal {

std::string class_name(TextureClass c) {
  switch (c) {
    case TextureClass::Asteroid: return "Asteroid";
    case TextureClass::Gyrus: return "Gyrus";
    case TextureClass::Oval: return "Oval";
    case TextureClass::Round: return "Round";
  }
  throw ConfigError("invalid texture class");
}

char class_letter(TextureClass c) { return class_name(c)[0]; }

TextureClass parse_class(const std::string& text) {
  for (TextureClass c : kAllClasses)
    if (text == class_name(c)) return c;
  throw ConfigError("unknown texture class '" + text + "'");
}

int class_index(TextureClass c) { return static_cast<int>(c); }

namespace {

constexpr double kBackground = 150.0;
constexpr double kAmplitudeStep = 30.0;  // imprint contrast per material level

struct Feature {
  double cx = 0.0, cy = 0.0;
  double p0 = 0.0, p1 = 0.0, p2 = 0.0;  // class-specific parameters
};

// Jittered square lattice covering the canvas plus a one-cell margin.
std::vector<Feature> lattice_features(Rng& rng, int size, double pitch, double jitter,
                                      int extra_params) {
  std::vector<Feature> features;
  const int lo = -1;
  const int hi = static_cast<int>(size / pitch) + 1;
  for (int gy = lo; gy <= hi; ++gy)
    for (int gx = lo; gx <= hi; ++gx) {
      Feature f;
      f.cx = (gx + 0.5) * pitch + rng.uniform(-jitter, jitter);
      f.cy = (gy + 0.5) * pitch + rng.uniform(-jitter, jitter);
      if (extra_params > 0) f.p0 = rng.uniform();
      if (extra_params > 1) f.p1 = rng.uniform();
      if (extra_params > 2) f.p2 = rng.uniform();
      features.push_back(f);
    }
  return features;
}

double soft_inside(double signed_distance, double edge) {
  // 1 well inside (negative distance), 0 outside, linear ramp across the edge.
  const double t = 0.5 - signed_distance / (2.0 * edge);
  return std::clamp(t, 0.0, 1.0);
}

// Filled discs on a near-regular lattice.
void field_round(Rng& rng, int size, std::vector<double>& field) {
  const double d = rng.uniform(30.0, 55.0);
  const double pitch = std::max(60.0, 1.2 * d);
  const double jitter = std::max(0.0, (pitch - d) / 2.0 - 1.5);
  const auto features = lattice_features(rng, size, pitch, jitter, 0);
  const double r = d / 2.0;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      double best = 0.0;
      for (const auto& f : features) {
        const double dist = std::hypot(x - f.cx, y - f.cy);
        best = std::max(best, soft_inside(dist - r, 1.5));
      }
      field[static_cast<std::size_t>(y) * size + x] = best;
    }
}

// Elongated ellipses sharing a slowly drifting orientation field.
void field_oval(Rng& rng, int size, std::vector<double>& field) {
  const double d = rng.uniform(45.0, 90.0);
  const double pitch = std::max(60.0, 1.2 * d);
  const double theta0 = rng.uniform(0.0, std::numbers::pi);
  const double drift_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const auto features = lattice_features(rng, size, pitch, std::max(0.0, pitch / 2.0 - d / 2.0 - 1.5), 1);
  const double a = d / 2.0;
  const double b = 0.4 * a;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      double best = 0.0;
      for (const auto& f : features) {
        const double theta = theta0 +
                             0.35 * std::sin(2.0 * std::numbers::pi * (f.cx + f.cy) / (3.0 * size) +
                                             drift_phase) +
                             0.25 * (f.p0 - 0.5);
        const double ct = std::cos(theta), st = std::sin(theta);
        const double dx = x - f.cx, dy = y - f.cy;
        const double u = dx * ct + dy * st;
        const double v = -dx * st + dy * ct;
        const double rho = std::sqrt((u / a) * (u / a) + (v / b) * (v / b));
        best = std::max(best, soft_inside((rho - 1.0) * b, 1.5));
      }
      field[static_cast<std::size_t>(y) * size + x] = best;
    }
}

// Star-shaped spots with 4 to 6 points.
void field_asteroid(Rng& rng, int size, std::vector<double>& field) {
  const double d = rng.uniform(40.0, 80.0);
  const double pitch = std::max(60.0, 1.2 * d);
  const double jitter = std::max(0.0, (pitch - d) / 2.0 - 1.5);
  const auto features = lattice_features(rng, size, pitch, jitter, 2);
  const double r0 = d / 2.0;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      double best = 0.0;
      for (const auto& f : features) {
        const double dx = x - f.cx, dy = y - f.cy;
        const double dist = std::hypot(dx, dy);
        if (dist > r0 + 2.0) continue;
        const int points = 4 + static_cast<int>(f.p0 * 3.0);  // 4..6
        const double phase = f.p1 * 2.0 * std::numbers::pi;
        const double phi = std::atan2(dy, dx);
        const double r = r0 * (0.62 + 0.38 * std::cos(points * (phi - phase)));
        best = std::max(best, soft_inside(dist - r, 1.5));
      }
      field[static_cast<std::size_t>(y) * size + x] = best;
    }
}

// Smooth lattice noise with cosine interpolation.
struct ValueNoise {
  int cells = 0;
  double scale = 0.0;
  std::vector<double> values;

  ValueNoise(Rng& rng, int size, double wavelength) {
    scale = 1.0 / wavelength;
    cells = static_cast<int>(size * scale) + 4;
    values.resize(static_cast<std::size_t>(cells) * cells);
    for (auto& v : values) v = rng.normal();
  }

  double at(double x, double y) const {
    const double u = x * scale + 1.0;
    const double v = y * scale + 1.0;
    const int i = static_cast<int>(u);
    const int j = static_cast<int>(v);
    const double fu = 0.5 - 0.5 * std::cos(std::numbers::pi * (u - i));
    const double fv = 0.5 - 0.5 * std::cos(std::numbers::pi * (v - j));
    auto g = [&](int a, int b) {
      return values[static_cast<std::size_t>(std::min(b, cells - 1)) * cells +
                    std::min(a, cells - 1)];
    };
    const double top = g(i, j) * (1.0 - fu) + g(i + 1, j) * fu;
    const double bot = g(i, j + 1) * (1.0 - fu) + g(i + 1, j + 1) * fu;
    return top * (1.0 - fv) + bot * fv;
  }
};

// Labyrinthine ridges: the zero-level band of band-limited noise.
void field_gyrus(Rng& rng, int size, std::vector<double>& field) {
  const double wavelength = rng.uniform(60.0, 90.0);
  const ValueNoise coarse(rng, size, wavelength);
  const ValueNoise fine(rng, size, wavelength / 2.0);
  const double sigma = std::sqrt(1.0 + 0.35 * 0.35);
  const double band = 0.55 * sigma;
  const double edge = 0.10 * sigma;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double v = coarse.at(x, y) + 0.35 * fine.at(x, y);
      field[static_cast<std::size_t>(y) * size + x] = soft_inside(std::abs(v) - band, edge);
    }
}

}  // namespace

ImageBuffer render_phantom(const PhantomSpec& spec, int size) {
  if (spec.geometry_variant < 1 || spec.geometry_variant > 10)
    throw ConfigError("geometry_variant must lie in [1, 10]");
  if (spec.material_level < 1 || spec.material_level > 4)
    throw ConfigError("material_level must lie in [1, 4]");
  if (spec.contact_angle != 0 && spec.contact_angle != 45)
    throw ConfigError("contact_angle must be 0 or 45");
  if (size < 32) throw ConfigError("render size must be at least 32");

  // Layout depends only on (seed, class, variant): material and angle reuse
  // the same geometry.
  const std::uint64_t layout =
      derive_stream(derive_stream(derive_stream(spec.seed, "phantom"),
                                  static_cast<std::uint64_t>(class_index(spec.texture))),
                    static_cast<std::uint64_t>(spec.geometry_variant));
  Rng rng(layout, 0);

  std::vector<double> field(static_cast<std::size_t>(size) * size, 0.0);
  switch (spec.texture) {
    case TextureClass::Asteroid: field_asteroid(rng, size, field); break;
    case TextureClass::Gyrus: field_gyrus(rng, size, field); break;
    case TextureClass::Oval: field_oval(rng, size, field); break;
    case TextureClass::Round: field_round(rng, size, field); break;
  }

  // Imprints modulate around the background level instead of only darkening
  // it; otherwise mean brightness alone would identify the classes that cover
  // more area, and that signal survives arbitrarily heavy blur.
  double dc = 0.0;
  for (double v : field) dc += v;
  dc /= static_cast<double>(field.size());

  const double amp = kAmplitudeStep * spec.material_level;
  ImageBuffer img;
  img.width = size;
  img.height = size;
  img.pixels.resize(field.size());
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      double visibility = 1.0;
      if (spec.contact_angle == 45)
        visibility = std::min(1.0, 2.0 * (1.0 - double(x) / (size - 1)));
      const std::size_t i = static_cast<std::size_t>(y) * size + x;
      img.pixels[i] = clamp_to_byte(kBackground - amp * visibility * (field[i] - dc));
    }
  return img;
}

namespace {

std::string sample_id_for(const PhantomSpec& spec) {
  std::string id;
  id += class_letter(spec.texture);
  id += spec.geometry_variant < 10 ? "0" : "";
  id += std::to_string(spec.geometry_variant);
  id += "m" + std::to_string(spec.material_level);
  id += "a" + std::to_string(spec.contact_angle);
  return id;
}

}  // namespace

DatasetManifest build_dataset(std::uint64_t root_seed, const std::string& output_dir, int size) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(output_dir) / "images", ec);
  if (ec) throw IoError("cannot create '" + output_dir + "/images': " + ec.message());

  // Per-class totals 57/57/55/60; 40 straight-on samples per class plus a
  // deterministic truncation of the 20 angled candidates.
  const int angled_quota[] = {17, 17, 15, 20};

  std::vector<PhantomSpec> specs;
  for (TextureClass c : kAllClasses)
    for (int j = 1; j <= 10; ++j)
      for (int k = 1; k <= 4; ++k)
        specs.push_back({c, j, k, 0, root_seed});

  for (TextureClass c : kAllClasses) {
    std::vector<int> variants(10);
    for (int j = 0; j < 10; ++j) variants[j] = j + 1;
    Rng rng(derive_stream(root_seed, "angled"), static_cast<std::uint64_t>(class_index(c)));
    rng.shuffle(variants);
    variants.resize(5);
    int remaining = angled_quota[class_index(c)];
    for (int j : variants)
      for (int k = 1; k <= 4 && remaining > 0; ++k, --remaining)
        specs.push_back({c, j, k, 45, root_seed});
  }

  DatasetManifest manifest;
  for (const auto& spec : specs) {
    SampleRecord rec;
    rec.spec = spec;
    rec.sample_id = sample_id_for(spec);
    rec.path = "images/" + rec.sample_id + ".pgm";
    manifest.samples.push_back(std::move(rec));
  }
  std::sort(manifest.samples.begin(), manifest.samples.end(),
            [](const SampleRecord& a, const SampleRecord& b) { return a.sample_id < b.sample_id; });

  for (const auto& rec : manifest.samples)
    write_pgm(render_phantom(rec.spec, size), output_dir + "/" + rec.path);
  return manifest;
}

void stratified_split(DatasetManifest& manifest, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw ConfigError("test_fraction must lie in (0, 1)");
  for (TextureClass c : kAllClasses) {
    std::vector<int> members;
    for (int i = 0; i < static_cast<int>(manifest.samples.size()); ++i)
      if (manifest.samples[i].group == '\0' && manifest.samples[i].spec.texture == c)
        members.push_back(i);
    Rng rng(derive_stream(seed, "split"), static_cast<std::uint64_t>(class_index(c)));
    rng.shuffle(members);
    const int test_count =
        static_cast<int>(std::ceil(test_fraction * members.size() - 1e-9));
    for (int i = 0; i < static_cast<int>(members.size()); ++i) {
      manifest.samples[members[i]].split = i < test_count ? "test" : "train";
      manifest.samples[members[i]].fold = -1;
    }
  }
}

void kfold(DatasetManifest& manifest, int folds, std::uint64_t seed) {
  if (folds < 2) throw ConfigError("folds must be at least 2");
  int rotation = 0;
  for (TextureClass c : kAllClasses) {
    std::vector<int> members;
    for (int i = 0; i < static_cast<int>(manifest.samples.size()); ++i)
      if (manifest.samples[i].split == "train" && manifest.samples[i].spec.texture == c)
        members.push_back(i);
    if (members.empty()) throw ConfigError("kfold requires an existing train split");
    Rng rng(derive_stream(seed, "kfold"), static_cast<std::uint64_t>(class_index(c)));
    rng.shuffle(members);
    const int base = static_cast<int>(members.size()) / folds;
    const int extras = static_cast<int>(members.size()) % folds;
    // Rotate which folds receive the per-class remainders so global fold
    // sizes stay within one of each other.
    std::vector<int> quota(folds, base);
    for (int e = 0; e < extras; ++e) ++quota[(rotation + e) % folds];
    rotation = (rotation + extras) % folds;
    int next = 0;
    for (int f = 0; f < folds; ++f)
      for (int q = 0; q < quota[f]; ++q) manifest.samples[members[next++]].fold = f;
  }
}

void build_test_groups(DatasetManifest& manifest, double blur_cap, double noise_cap,
                       std::uint64_t seed, const std::string& output_dir) {
  namespace fs = std::filesystem;
  std::vector<int> test_rows;
  for (int i = 0; i < static_cast<int>(manifest.samples.size()); ++i)
    if (manifest.samples[i].group == '\0' && manifest.samples[i].split == "test")
      test_rows.push_back(i);
  if (test_rows.empty()) throw ConfigError("build_test_groups requires an existing test split");

  for (const char* sub : {"B", "C", "D"}) {
    std::error_code ec;
    fs::create_directories(fs::path(output_dir) / "test_groups" / sub, ec);
    if (ec) throw IoError("cannot create '" + output_dir + "/test_groups': " + ec.message());
  }

  std::vector<SampleRecord> expanded;
  for (int row : test_rows) {
    const SampleRecord base = manifest.samples[row];
    const ImageBuffer img = read_pgm(output_dir + "/" + base.path);
    const std::uint64_t key = derive_stream(derive_stream(seed, "groups"), base.sample_id);

    SampleRecord a = base;
    a.sample_id += "-A";
    a.split.clear();
    a.group = 'A';
    expanded.push_back(a);

    SampleRecord b = base;
    b.sample_id += "-B";
    b.split.clear();
    b.group = 'B';
    Rng rng_b(key, 1);
    b.blur_sigma = rng_b.uniform(1.0, blur_cap);
    b.path = "test_groups/B/" + b.sample_id + ".pgm";
    write_pgm(gaussian_blur(img, b.blur_sigma), output_dir + "/" + b.path);
    expanded.push_back(b);

    SampleRecord cr = base;
    cr.sample_id += "-C";
    cr.split.clear();
    cr.group = 'C';
    Rng rng_c(key, 2);
    cr.noise_sigma = rng_c.uniform(1.0, noise_cap);
    cr.path = "test_groups/C/" + cr.sample_id + ".pgm";
    write_pgm(gaussian_noise(img, cr.noise_sigma, rng_c), output_dir + "/" + cr.path);
    expanded.push_back(cr);

    SampleRecord d = base;
    d.sample_id += "-D";
    d.split.clear();
    d.group = 'D';
    Rng rng_d(key, 3);
    d.blur_sigma = rng_d.uniform(1.0, blur_cap);
    d.noise_sigma = rng_d.uniform(1.0, noise_cap);
    d.path = "test_groups/D/" + d.sample_id + ".pgm";
    write_pgm(gaussian_noise(gaussian_blur(img, d.blur_sigma), d.noise_sigma, rng_d),
              output_dir + "/" + d.path);
    expanded.push_back(d);
  }
  for (auto& rec : expanded) manifest.samples.push_back(std::move(rec));
}

}  // namespace tcal
