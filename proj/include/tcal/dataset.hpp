#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tcal/image.hpp"

namespace tcal {

enum class TextureClass { Asteroid, Gyrus, Oval, Round };

inline constexpr TextureClass kAllClasses[] = {
    TextureClass::Asteroid, TextureClass::Gyrus, TextureClass::Oval, TextureClass::Round};

std::string class_name(TextureClass c);
char class_letter(TextureClass c);
TextureClass parse_class(const std::string& text);
int class_index(TextureClass c);

struct PhantomSpec {
  TextureClass texture = TextureClass::Asteroid;
  int geometry_variant = 1;  // 1..10
  int material_level = 1;    // 1..4, rendered as imprint contrast
  int contact_angle = 0;     // 0 or 45 degrees
  std::uint64_t seed = 0;
};

// One manifest row. Base samples carry a split (and a fold when training);
// expanded test rows carry a group tag and the perturbation sigmas instead.
struct SampleRecord {
  std::string sample_id;
  PhantomSpec spec;
  std::string split;       // "train", "test", or empty for expanded rows
  int fold = -1;           // 0..4 for train samples
  char group = '\0';       // 'A'..'D' for expanded test rows
  double blur_sigma = 0.0;
  double noise_sigma = 0.0;
  std::string path;        // image file, relative to the dataset directory
};

struct DatasetManifest {
  std::vector<SampleRecord> samples;
};

// Deterministic texture render; layout depends only on (seed, class,
// geometry_variant) so material and angle are pure nuisance factors.
ImageBuffer render_phantom(const PhantomSpec& spec, int size = 224);

// Renders the full 229-sample corpus (160 straight-on plus 69 angled) into
// output_dir/images and returns the manifest, ordered by sample_id.
DatasetManifest build_dataset(std::uint64_t root_seed, const std::string& output_dir,
                              int size = 224);

// Marks each base sample train/test: per class, test count = ceil(0.2 * n).
void stratified_split(DatasetManifest& manifest, double test_fraction, std::uint64_t seed);

// Assigns train samples to stratified folds; sizes differ by at most one.
void kfold(DatasetManifest& manifest, int folds, std::uint64_t seed);

// Appends the expanded test rows: Group A references the originals, B/C/D
// are written under output_dir/test_groups with per-sample sigma draws.
void build_test_groups(DatasetManifest& manifest, double blur_cap, double noise_cap,
                       std::uint64_t seed, const std::string& output_dir);

}  // namespace tcal
