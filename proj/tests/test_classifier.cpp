#include "tcal/classifier.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <vector>

#include <json.hpp>

#include "oracles.hpp"
#include "tcal/dataset.hpp"
#include "tcal/errors.hpp"
#include "tcal/image.hpp"
#include "tcal/io_formats.hpp"
#include "tcal/rng.hpp"

using namespace tcal;

namespace {

const char* kScratch = "classifier_test_scratch";

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.input_size = 16;
  cfg.channels = {4, 8};
  cfg.dilations = {1, 2};
  return cfg;
}

std::vector<double> random_plane(Rng& rng, int side) {
  std::vector<double> v(static_cast<std::size_t>(side) * side);
  for (double& x : v) x = rng.uniform(0.0, 1.0);
  return v;
}

Batch random_batch(Rng& rng, const ModelConfig& cfg, int n) {
  Batch b;
  for (int i = 0; i < n; ++i) {
    b.inputs.push_back(random_plane(rng, cfg.input_size));
    b.labels.push_back(static_cast<int>(rng.uniform_int(cfg.num_classes)));
  }
  return b;
}

// Reference forward pass for a one-stage network, written as plain dense
// 2-D convolution loops. A dilated 3x3 kernel is first expanded into the
// equivalent dense (2d+1)^2 kernel with zeros in between.
std::vector<double> dense_reference(const ModelConfig& cfg,
                                    const std::vector<double>& params,
                                    const std::vector<double>& input) {
  REQUIRE(cfg.channels.size() == 1);
  const int S = cfg.input_size;
  const int C = cfg.channels[0];
  const int d = cfg.dilations[0];
  const int K = cfg.num_classes;
  const int R = 2 * d + 1;  // dense kernel side

  const std::size_t w_off = 0;
  const std::size_t b_off = static_cast<std::size_t>(C) * 9;
  const std::size_t hw_off = b_off + C;
  const std::size_t hb_off = hw_off + static_cast<std::size_t>(K) * C;

  std::vector<double> relu(static_cast<std::size_t>(C) * S * S, 0.0);
  for (int co = 0; co < C; ++co) {
    std::vector<double> dense(static_cast<std::size_t>(R) * R, 0.0);
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx)
        dense[static_cast<std::size_t>(ky * d) * R + kx * d] =
            params[w_off + static_cast<std::size_t>(co) * 9 + ky * 3 + kx];
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x) {
        double acc = params[b_off + co];
        for (int u = 0; u < R; ++u)
          for (int v = 0; v < R; ++v) {
            const int iy = y + u - d;
            const int ix = x + v - d;
            if (iy < 0 || iy >= S || ix < 0 || ix >= S) continue;
            acc += dense[static_cast<std::size_t>(u) * R + v] *
                   input[static_cast<std::size_t>(iy) * S + ix];
          }
        relu[(static_cast<std::size_t>(co) * S + y) * S + x] = std::max(acc, 0.0);
      }
  }

  const int H = S / 2;
  std::vector<double> gap(C, 0.0);
  for (int co = 0; co < C; ++co) {
    double sum = 0.0;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < H; ++x) {
        double cell = 0.0;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx)
            cell += relu[(static_cast<std::size_t>(co) * S + 2 * y + dy) * S +
                         2 * x + dx];
        sum += cell / 4.0;
      }
    gap[co] = sum / (static_cast<double>(H) * H);
  }

  std::vector<double> logits(K, 0.0);
  for (int k = 0; k < K; ++k) {
    double acc = params[hb_off + k];
    for (int c = 0; c < C; ++c)
      acc += params[hw_off + static_cast<std::size_t>(k) * C + c] * gap[c];
    logits[k] = acc;
  }
  return logits;
}

// 40-sample 4-class corpus rendered at 64 px with balanced 5-fold tags.
DatasetManifest tiny_corpus() {
  std::filesystem::create_directories(std::string(kScratch) + "/images");
  DatasetManifest manifest;
  for (TextureClass cls : kAllClasses) {
    for (int j = 1; j <= 10; ++j) {
      SampleRecord rec;
      rec.spec = PhantomSpec{cls, j, 2, 0, 4242};
      rec.sample_id = std::string(1, class_letter(cls)) + std::to_string(j);
      rec.split = "train";
      rec.fold = j % 5;
      rec.path = "images/" + rec.sample_id + ".pgm";
      write_pgm(render_phantom(rec.spec, 64),
                std::string(kScratch) + "/" + rec.path);
      manifest.samples.push_back(rec);
    }
  }
  return manifest;
}

TrainConfig tiny_train_config() {
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 8;
  tc.learning_rate = 0.01;
  tc.seed = 7;
  tc.variant = DatasetVariant::I;
  tc.augment.apply_probability = 0.0;
  return tc;
}

ModelConfig tiny_model_config() {
  ModelConfig cfg;
  cfg.input_size = 32;
  cfg.channels = {4, 8};
  cfg.dilations = {1, 2};
  return cfg;
}

}  // namespace

TEST_CASE("parameter count matches the closed-form formula") {
  ModelConfig def;
  CHECK(param_count(def) == 6020);
  CHECK(param_count(small_config()) == 372);

  // Independent arithmetic over the same config.
  auto formula = [](const ModelConfig& cfg) {
    int total = 0;
    int c_in = 1;
    for (int c : cfg.channels) {
      total += c_in * c * 9 + c;
      c_in = c;
    }
    total += cfg.num_classes * c_in + cfg.num_classes;
    return total;
  };
  CHECK(param_count(def) == formula(def));
  CHECK(param_count(small_config()) == formula(small_config()));

  ModelConfig wide;
  wide.input_size = 32;
  wide.channels = {5, 7, 11};
  wide.dilations = {1, 1, 2};
  CHECK(param_count(wide) == formula(wide));
}

TEST_CASE("config validation rejects malformed models") {
  ModelConfig cfg;
  cfg.channels = {8, 16};
  CHECK_THROWS_AS(validate_model_config(cfg), ConfigError);  // length mismatch
  cfg = ModelConfig{};
  cfg.kernel_size = 5;
  CHECK_THROWS_AS(validate_model_config(cfg), ConfigError);
  cfg = ModelConfig{};
  cfg.input_size = 60;  // 60 -> 30 -> 15, not divisible at the third pool
  CHECK_THROWS_AS(validate_model_config(cfg), ConfigError);
  cfg = ModelConfig{};
  cfg.dilations = {1, 0, 4};
  CHECK_THROWS_AS(validate_model_config(cfg), ConfigError);
  cfg = ModelConfig{};
  cfg.channels.clear();
  cfg.dilations.clear();
  CHECK_THROWS_AS(validate_model_config(cfg), ConfigError);
}

TEST_CASE("init is seed-deterministic and seed-sensitive") {
  const ModelConfig cfg = small_config();
  const ModelParams a = init_model(cfg, 0);
  const ModelParams b = init_model(cfg, 0);
  const ModelParams c = init_model(cfg, 1);
  CHECK(a.values == b.values);
  CHECK(a.values != c.values);

  // Conv biases start at zero; first-layer weights stay inside the fan-in
  // bound sqrt(6 / 9).
  const double bound = std::sqrt(6.0 / 9.0);
  for (int i = 0; i < 4 * 9; ++i) {
    CHECK(std::abs(a.values[i]) <= bound);
  }
  for (int i = 4 * 9; i < 4 * 9 + 4; ++i) CHECK(a.values[i] == 0.0);
}

TEST_CASE("all-zero weights produce logits equal to the head bias") {
  const ModelConfig cfg = small_config();
  ModelParams params;
  params.values.assign(param_count(cfg), 0.0);
  const std::vector<double> bias = {0.1, -0.2, 0.3, 0.45};
  for (int k = 0; k < 4; ++k)
    params.values[params.values.size() - 4 + k] = bias[k];
  Rng rng(11, 0);
  const std::vector<double> logits =
      forward_logits(params, cfg, random_plane(rng, cfg.input_size));
  for (int k = 0; k < 4; ++k) CHECK(logits[k] == bias[k]);
}

TEST_CASE("forward pass matches a dense 2-D convolution reference on 8x8") {
  ModelConfig cfg;
  cfg.input_size = 8;
  cfg.channels = {3};
  cfg.num_classes = 2;
  Rng rng(21, 0);
  for (int dilation : {1, 2}) {
    CAPTURE(dilation);
    cfg.dilations = {dilation};
    for (int rep = 0; rep < 5; ++rep) {
      ModelParams params;
      params.values.resize(param_count(cfg));
      for (double& v : params.values) v = rng.uniform(-1.0, 1.0);
      const std::vector<double> input = random_plane(rng, 8);
      const std::vector<double> got = forward_logits(params, cfg, input);
      const std::vector<double> want = dense_reference(cfg, params.values, input);
      REQUIRE(got.size() == want.size());
      for (std::size_t k = 0; k < got.size(); ++k)
        CHECK(got[k] == doctest::Approx(want[k]).epsilon(1e-10));
    }
  }
}

TEST_CASE("input size mismatches are rejected") {
  const ModelConfig cfg = small_config();
  const ModelParams params = init_model(cfg, 3);
  std::vector<double> bad(17 * 16, 0.5);
  CHECK_THROWS_AS(forward_logits(params, cfg, bad), ConfigError);
  ModelParams short_params = params;
  short_params.values.pop_back();
  std::vector<double> ok(16 * 16, 0.5);
  CHECK_THROWS_AS(forward_logits(short_params, cfg, ok), ConfigError);
}

TEST_CASE("translation by the pool stride only mildly perturbs logits") {
  // Three stride-2 pools give a total stride of 8; a circular shift by 8
  // realigns every pooling window, so only padding borders differ.
  const ModelConfig cfg;  // default 64 px
  const ModelParams params = init_model(cfg, 5);
  const ImageBuffer tex = render_phantom(PhantomSpec{TextureClass::Round, 3, 3, 0, 77});
  const std::vector<double> base = to_unit_doubles(resize_bilinear(tex, 64, 64));
  std::vector<double> shifted(base.size());
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x)
      shifted[static_cast<std::size_t>(y) * 64 + x] =
          base[static_cast<std::size_t>((y + 8) % 64) * 64 + (x + 8) % 64];
  const std::vector<double> z0 = forward_logits(params, cfg, base);
  const std::vector<double> z1 = forward_logits(params, cfg, shifted);
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < z0.size(); ++k) {
    num += (z1[k] - z0[k]) * (z1[k] - z0[k]);
    den += z0[k] * z0[k];
  }
  CHECK(std::sqrt(num / den) < 0.10);
}

TEST_CASE("analytic gradients match central finite differences") {
  Rng rng(31, 0);
  SUBCASE("two stages, dilations 1 and 2") {
    const ModelConfig cfg = small_config();
    const ModelParams params = init_model(cfg, 8);
    const Batch batch = random_batch(rng, cfg, 3);
    CHECK(param_count(cfg) <= 5000);
    CHECK(gradient_check(params, cfg, batch, 99, 400) < 1e-4);
  }
  SUBCASE("dilation 4 stage") {
    ModelConfig cfg;
    cfg.input_size = 16;
    cfg.channels = {3, 5};
    cfg.dilations = {4, 1};
    const ModelParams params = init_model(cfg, 9);
    const Batch batch = random_batch(rng, cfg, 2);
    CHECK(gradient_check(params, cfg, batch, 100, 250) < 1e-4);
  }
}

TEST_CASE("zero input leaves first-layer weight gradients at zero") {
  const ModelConfig cfg = small_config();
  const ModelParams params = init_model(cfg, 13);
  Batch batch;
  batch.inputs.assign(2, std::vector<double>(16 * 16, 0.0));
  batch.labels = {0, 2};
  std::vector<double> grad;
  batch_loss(params, cfg, batch, &grad);
  for (int i = 0; i < 4 * 9; ++i) CHECK(grad[i] == 0.0);
  // The head bias still sees the full cross-entropy signal.
  double head_bias_mag = 0.0;
  for (int k = 0; k < 4; ++k)
    head_bias_mag += std::abs(grad[grad.size() - 4 + k]);
  CHECK(head_bias_mag > 0.0);
}

TEST_CASE("gradients are linear in the loss scale") {
  const ModelConfig cfg = small_config();
  const ModelParams params = init_model(cfg, 17);
  Rng rng(41, 0);
  const Batch batch = random_batch(rng, cfg, 2);
  std::vector<double> g1, g2;
  const double l1 = batch_loss(params, cfg, batch, &g1, 1.0);
  const double l2 = batch_loss(params, cfg, batch, &g2, 2.0);
  CHECK(l2 == doctest::Approx(2.0 * l1).epsilon(1e-14));
  for (std::size_t i = 0; i < g1.size(); ++i) {
    CHECK(std::abs(g2[i] - 2.0 * g1[i]) <=
          1e-10 * std::max(1.0, std::abs(g1[i])));
  }
}

TEST_CASE("capacity: a tiny two-class set is memorized within 400 epochs") {
  ModelConfig cfg;
  cfg.input_size = 32;
  cfg.channels = {6, 12};
  cfg.dilations = {1, 2};
  cfg.num_classes = 2;

  Batch batch;
  for (int j = 1; j <= 10; ++j) {
    for (TextureClass cls : {TextureClass::Round, TextureClass::Gyrus}) {
      const ImageBuffer img = render_phantom(PhantomSpec{cls, j, 3, 0, 911}, 64);
      batch.inputs.push_back(to_unit_doubles(resize_bilinear(img, 32, 32)));
      batch.labels.push_back(cls == TextureClass::Round ? 0 : 1);
    }
  }

  ModelParams params = init_model(cfg, 23);
  std::vector<double> grad, velocity(params.values.size(), 0.0);
  std::vector<int> order(batch.inputs.size());
  std::iota(order.begin(), order.end(), 0);
  Rng order_rng(77, 0);
  for (int epoch = 0; epoch < 400; ++epoch) {
    order_rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += 5) {
      Batch mini;
      for (std::size_t i = start; i < std::min(order.size(), start + 5); ++i) {
        mini.inputs.push_back(batch.inputs[order[i]]);
        mini.labels.push_back(batch.labels[order[i]]);
      }
      batch_loss(params, cfg, mini, &grad);
      for (std::size_t i = 0; i < velocity.size(); ++i) {
        velocity[i] = 0.9 * velocity[i] - 0.01 * grad[i];
        params.values[i] += velocity[i];
      }
    }
  }
  int hits = 0;
  for (std::size_t i = 0; i < batch.inputs.size(); ++i) {
    const std::vector<double> z = forward_logits(params, cfg, batch.inputs[i]);
    const int arg = z[1] > z[0] ? 1 : 0;
    if (arg == batch.labels[i]) ++hits;
  }
  CHECK(hits >= 19);  // >= 95% of 20
}

TEST_CASE("cross-validated training on a tiny corpus") {
  const DatasetManifest manifest = tiny_corpus();
  const ModelConfig cfg = tiny_model_config();
  const TrainConfig tc = tiny_train_config();

  const TrainOutput out = train(manifest, kScratch, cfg, tc);

  SUBCASE("report structure and learning signal") {
    REQUIRE(out.report.folds.size() == 5);
    for (const FoldReport& f : out.report.folds) {
      REQUIRE(f.epoch_losses.size() == 3);
      CHECK(f.epoch_losses.back() < f.initial_loss);
      CHECK(f.best_epoch >= 1);
      CHECK(f.best_epoch <= 3);
      CHECK(f.val_accuracy >= 0.0);
      CHECK(f.val_accuracy <= 1.0);
    }
    CHECK(out.report.best_fold >= 0);
    CHECK(out.report.best_fold < 5);
    CHECK(out.report.final_epochs ==
          out.report.folds[out.report.best_fold].best_epoch);
    CHECK(out.report.final_losses.size() ==
          static_cast<std::size_t>(out.report.final_epochs));
    for (double loss : out.report.final_losses) {
      CHECK(std::isfinite(loss));
      CHECK(loss > 0.0);
    }
    CHECK(out.params.values.size() ==
          static_cast<std::size_t>(param_count(cfg)));
  }

  SUBCASE("holdout pools every training sample exactly once") {
    REQUIRE(out.holdout.n == 40);
    CHECK(out.holdout.k == 4);
    std::vector<std::string> ids = out.holdout.sample_ids;
    std::sort(ids.begin(), ids.end());
    CHECK(std::adjacent_find(ids.begin(), ids.end()) == ids.end());
    for (double z : out.holdout.logits) CHECK(std::isfinite(z));
  }

  SUBCASE("training is deterministic end to end") {
    const TrainOutput again = train(manifest, kScratch, cfg, tc);
    CHECK(again.params.values == out.params.values);
    CHECK(again.holdout.logits == out.holdout.logits);
    CHECK(again.holdout.sample_ids == out.holdout.sample_ids);
    REQUIRE(again.report.folds.size() == out.report.folds.size());
    for (std::size_t f = 0; f < out.report.folds.size(); ++f) {
      CHECK(again.report.folds[f].epoch_losses ==
            out.report.folds[f].epoch_losses);
      CHECK(again.report.folds[f].val_accuracy ==
            out.report.folds[f].val_accuracy);
    }
    CHECK(again.report.final_losses == out.report.final_losses);
  }

  SUBCASE("a different seed changes the trained weights") {
    TrainConfig other = tc;
    other.seed = 8;
    const TrainOutput alt = train(manifest, kScratch, cfg, other);
    CHECK(alt.params.values != out.params.values);
  }

  SUBCASE("train report serializes with one entry per fold") {
    const std::string path = std::string(kScratch) + "/report.json";
    write_train_report(out.report, path);
    std::ifstream in(path);
    REQUIRE(in.good());
    nlohmann::json j = nlohmann::json::parse(in);
    CHECK(j["folds"].size() == 5);
    CHECK(j["best_fold"] == out.report.best_fold);
    CHECK(j["final_epochs"] == out.report.final_epochs);
    CHECK(j["folds"][0]["epoch_losses"].size() == 3);
    for (const auto& f : j["folds"]) {
      CHECK(f["val_accuracy"].is_number());
      CHECK(f["best_epoch"].is_number_integer());
    }
  }

  SUBCASE("prediction follows the given record order") {
    const LogitMatrix m =
        predict_logits(out.params, cfg, manifest.samples, kScratch);
    REQUIRE(m.n == 40);
    CHECK(m.k == 4);
    for (int i = 0; i < m.n; ++i) {
      CHECK(m.sample_ids[i] == manifest.samples[i].sample_id);
      CHECK(m.labels[i] == class_index(manifest.samples[i].spec.texture));
    }
    const LogitMatrix again =
        predict_logits(out.params, cfg, manifest.samples, kScratch);
    CHECK(again.logits == m.logits);

    // Reversed record order carries the rows along with it.
    std::vector<SampleRecord> reversed(manifest.samples.rbegin(),
                                       manifest.samples.rend());
    const LogitMatrix rev = predict_logits(out.params, cfg, reversed, kScratch);
    CHECK(rev.sample_ids.front() == m.sample_ids.back());
    for (int k = 0; k < 4; ++k) CHECK(rev.row(0)[k] == m.row(m.n - 1)[k]);
  }

  SUBCASE("missing image files raise an I/O error") {
    std::vector<SampleRecord> ghost = {manifest.samples[0]};
    ghost[0].path = "images/nonexistent.pgm";
    CHECK_THROWS_AS(predict_logits(out.params, cfg, ghost, kScratch), IoError);
  }

  SUBCASE("checkpoint round-trip preserves logits bit for bit") {
    const std::string path = std::string(kScratch) + "/model.ckpt";
    save_checkpoint(out.params, cfg, path);
    const auto [cfg2, params2] = load_checkpoint(path);
    CHECK(cfg2.input_size == cfg.input_size);
    CHECK(cfg2.channels == cfg.channels);
    CHECK(cfg2.dilations == cfg.dilations);
    CHECK(cfg2.num_classes == cfg.num_classes);
    CHECK(params2.values == out.params.values);

    Rng rng(55, 0);
    for (int rep = 0; rep < 3; ++rep) {
      const std::vector<double> probe = random_plane(rng, cfg.input_size);
      CHECK(forward_logits(params2, cfg2, probe) ==
            forward_logits(out.params, cfg, probe));
    }

    // Repeated saves are bit-identical.
    const std::string path2 = std::string(kScratch) + "/model2.ckpt";
    save_checkpoint(out.params, cfg, path2);
    std::ifstream a(path, std::ios::binary), b(path2, std::ios::binary);
    std::string sa((std::istreambuf_iterator<char>(a)),
                   std::istreambuf_iterator<char>());
    std::string sb((std::istreambuf_iterator<char>(b)),
                   std::istreambuf_iterator<char>());
    CHECK(sa == sb);
  }

  SUBCASE("corrupt checkpoints are rejected") {
    const std::string good = std::string(kScratch) + "/good.ckpt";
    save_checkpoint(out.params, cfg, good);
    std::ifstream in(good, std::ios::binary);
    std::string blob((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    in.close();
    auto with_blob = [&](std::string data, const char* name) {
      const std::string p = std::string(kScratch) + "/" + name;
      std::ofstream o(p, std::ios::binary);
      o.write(data.data(), static_cast<std::streamsize>(data.size()));
      o.close();
      return p;
    };
    std::string bad = blob;
    bad[0] = 'X';
    CHECK_THROWS_WITH_AS(load_checkpoint(with_blob(bad, "magic.ckpt")),
                         doctest::Contains("magic"), IoError);
    bad = blob;
    bad[4] = 9;
    CHECK_THROWS_WITH_AS(load_checkpoint(with_blob(bad, "version.ckpt")),
                         doctest::Contains("version"), IoError);
    CHECK_THROWS_WITH_AS(
        load_checkpoint(with_blob(blob.substr(0, blob.size() - 11), "trunc.ckpt")),
        doctest::Contains("truncated"), IoError);
    bad = blob;
    // Overwrite the first parameter with a quiet NaN pattern.
    const std::size_t header = blob.size() - 8 * out.params.values.size();
    for (int i = 0; i < 8; ++i) bad[header + i] = static_cast<char>(0xff);
    CHECK_THROWS_WITH_AS(load_checkpoint(with_blob(bad, "nan.ckpt")),
                         doctest::Contains("non-finite"), IoError);
    CHECK_THROWS_AS(load_checkpoint(std::string(kScratch) + "/missing.ckpt"),
                    IoError);
  }
}

TEST_CASE("training rejects manifests without folds") {
  DatasetManifest manifest = tiny_corpus();
  for (SampleRecord& rec : manifest.samples) rec.fold = -1;
  CHECK_THROWS_AS(
      train(manifest, kScratch, tiny_model_config(), tiny_train_config()),
      ConfigError);
  for (SampleRecord& rec : manifest.samples) rec.split = "test";
  CHECK_THROWS_AS(
      train(manifest, kScratch, tiny_model_config(), tiny_train_config()),
      ConfigError);
}

TEST_CASE("divergent training aborts with a numeric error") {
  const DatasetManifest manifest = tiny_corpus();
  TrainConfig tc = tiny_train_config();
  tc.learning_rate = 1e9;  // guaranteed blow-up
  tc.epochs = 4;
  CHECK_THROWS_WITH_AS(train(manifest, kScratch, tiny_model_config(), tc),
                       doctest::Contains("diverged"), NumericError);
}
