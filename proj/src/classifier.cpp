#include "tcal/classifier.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>
#include <string>

#include "tcal/errors.hpp"
#include "tcal/io_formats.hpp"
#include "tcal/rng.hpp"

namespace tcal {

namespace {

struct ConvShape {
  int c_in;
  int c_out;
  int dilation;
  int side;        // spatial size of the conv input (and output)
  std::size_t w_off;
  std::size_t b_off;
};

struct Shapes {
  std::vector<ConvShape> convs;
  int feat_side;  // spatial size after the last pool
  int feat_c;
  std::size_t head_w_off;
  std::size_t head_b_off;
  std::size_t total;
};

Shapes layout(const ModelConfig& cfg) {
  Shapes s;
  int side = cfg.input_size;
  int c_in = 1;
  std::size_t off = 0;
  for (std::size_t l = 0; l < cfg.channels.size(); ++l) {
    ConvShape c;
    c.c_in = c_in;
    c.c_out = cfg.channels[l];
    c.dilation = cfg.dilations[l];
    c.side = side;
    c.w_off = off;
    off += static_cast<std::size_t>(c.c_out) * c.c_in * 9;
    c.b_off = off;
    off += static_cast<std::size_t>(c.c_out);
    s.convs.push_back(c);
    side /= 2;
    c_in = c.c_out;
  }
  s.feat_side = side;
  s.feat_c = c_in;
  s.head_w_off = off;
  off += static_cast<std::size_t>(cfg.num_classes) * c_in;
  s.head_b_off = off;
  off += static_cast<std::size_t>(cfg.num_classes);
  s.total = off;
  return s;
}

// dst(y, x) += w * src(y + dy, x + dx) over the in-range window of an s-by-s
// plane. The inner loop is contiguous in x.
void axpy_shifted(double w, const double* __restrict src, double* __restrict dst,
                  int s, int dy, int dx) {
  const int y0 = std::max(0, -dy);
  const int y1 = std::min(s - 1, s - 1 - dy);
  const int x0 = std::max(0, -dx);
  const int x1 = std::min(s - 1, s - 1 - dx);
  if (y1 < y0 || x1 < x0) return;
  const int len = x1 - x0 + 1;
  for (int y = y0; y <= y1; ++y) {
    double* __restrict d = dst + static_cast<std::size_t>(y) * s + x0;
    const double* __restrict r =
        src + static_cast<std::size_t>(y + dy) * s + (x0 + dx);
    for (int i = 0; i < len; ++i) d[i] += w * r[i];
  }
}

// sum over (y, x) of a(y, x) * b(y + dy, x + dx), same windowing as above.
// Eight interleaved accumulators (fixed combine order) break the FP add
// dependency chain; a single accumulator runs at FMA latency, not throughput.
double dot_shifted(const double* __restrict a, const double* __restrict b,
                   int s, int dy, int dx) {
  const int y0 = std::max(0, -dy);
  const int y1 = std::min(s - 1, s - 1 - dy);
  const int x0 = std::max(0, -dx);
  const int x1 = std::min(s - 1, s - 1 - dx);
  if (y1 < y0 || x1 < x0) return 0.0;
  const int len = x1 - x0 + 1;
  double acc[8] = {0.0};
  double tail = 0.0;
  for (int y = y0; y <= y1; ++y) {
    const double* __restrict pa = a + static_cast<std::size_t>(y) * s + x0;
    const double* __restrict pb =
        b + static_cast<std::size_t>(y + dy) * s + (x0 + dx);
    int i = 0;
    for (; i + 8 <= len; i += 8)
      for (int j = 0; j < 8; ++j) acc[j] += pa[i + j] * pb[i + j];
    for (; i < len; ++i) tail += pa[i] * pb[i];
  }
  return (((acc[0] + acc[1]) + (acc[2] + acc[3])) +
          ((acc[4] + acc[5]) + (acc[6] + acc[7]))) +
         tail;
}

// Per-sample activations kept for the backward pass.
struct Activations {
  std::vector<std::vector<double>> conv_z;  // pre-ReLU conv outputs
  std::vector<std::vector<double>> pooled;  // post-ReLU average pools
  std::vector<double> gap;
  std::vector<double> logits;
};

void forward_pass(const double* p, const Shapes& s, int num_classes,
                  const std::vector<double>& input, Activations& act) {
  const std::size_t layers = s.convs.size();
  act.conv_z.resize(layers);
  act.pooled.resize(layers);
  const std::vector<double>* in = &input;
  for (std::size_t l = 0; l < layers; ++l) {
    const ConvShape& c = s.convs[l];
    const int side = c.side;
    const std::size_t plane = static_cast<std::size_t>(side) * side;
    std::vector<double>& z = act.conv_z[l];
    z.assign(static_cast<std::size_t>(c.c_out) * plane, 0.0);
    for (int co = 0; co < c.c_out; ++co) {
      double* zp = z.data() + co * plane;
      const double bias = p[c.b_off + co];
      for (std::size_t i = 0; i < plane; ++i) zp[i] = bias;
      for (int ci = 0; ci < c.c_in; ++ci) {
        const double* ip = in->data() + ci * plane;
        const double* w = p + c.w_off + (static_cast<std::size_t>(co) * c.c_in + ci) * 9;
        for (int ky = 0; ky < 3; ++ky)
          for (int kx = 0; kx < 3; ++kx)
            axpy_shifted(w[ky * 3 + kx], ip, zp, side, (ky - 1) * c.dilation,
                         (kx - 1) * c.dilation);
      }
    }
    const int half = side / 2;
    const std::size_t hplane = static_cast<std::size_t>(half) * half;
    std::vector<double>& pool = act.pooled[l];
    pool.resize(static_cast<std::size_t>(c.c_out) * hplane);
    for (int co = 0; co < c.c_out; ++co) {
      const double* zp = z.data() + co * plane;
      double* pp = pool.data() + co * hplane;
      for (int y = 0; y < half; ++y)
        for (int x = 0; x < half; ++x) {
          const double* r0 = zp + static_cast<std::size_t>(2 * y) * side + 2 * x;
          const double* r1 = r0 + side;
          pp[static_cast<std::size_t>(y) * half + x] =
              0.25 * (std::max(r0[0], 0.0) + std::max(r0[1], 0.0) +
                      std::max(r1[0], 0.0) + std::max(r1[1], 0.0));
        }
    }
    in = &pool;
  }
  const std::size_t fplane = static_cast<std::size_t>(s.feat_side) * s.feat_side;
  act.gap.assign(s.feat_c, 0.0);
  for (int c = 0; c < s.feat_c; ++c) {
    const double* pp = in->data() + c * fplane;
    double acc = 0.0;
    for (std::size_t i = 0; i < fplane; ++i) acc += pp[i];
    act.gap[c] = acc / static_cast<double>(fplane);
  }
  act.logits.assign(num_classes, 0.0);
  for (int k = 0; k < num_classes; ++k) {
    double acc = p[s.head_b_off + k];
    const double* w = p + s.head_w_off + static_cast<std::size_t>(k) * s.feat_c;
    for (int c = 0; c < s.feat_c; ++c) acc += w[c] * act.gap[c];
    act.logits[k] = acc;
  }
}

// Backward from d(loss)/d(logits); accumulates into grad (flat layout).
void backward_pass(const double* p, const Shapes& s, int num_classes,
                   const std::vector<double>& input, const Activations& act,
                   const std::vector<double>& dlogits, double* grad) {
  const std::size_t layers = s.convs.size();
  const std::size_t fplane = static_cast<std::size_t>(s.feat_side) * s.feat_side;

  std::vector<double> dgap(s.feat_c, 0.0);
  for (int k = 0; k < num_classes; ++k) {
    const double dk = dlogits[k];
    grad[s.head_b_off + k] += dk;
    double* gw = grad + s.head_w_off + static_cast<std::size_t>(k) * s.feat_c;
    const double* w = p + s.head_w_off + static_cast<std::size_t>(k) * s.feat_c;
    for (int c = 0; c < s.feat_c; ++c) {
      gw[c] += dk * act.gap[c];
      dgap[c] += dk * w[c];
    }
  }

  std::vector<double> dpool(static_cast<std::size_t>(s.feat_c) * fplane);
  for (int c = 0; c < s.feat_c; ++c) {
    const double v = dgap[c] / static_cast<double>(fplane);
    for (std::size_t i = 0; i < fplane; ++i) dpool[c * fplane + i] = v;
  }

  for (std::size_t l = layers; l-- > 0;) {
    const ConvShape& c = s.convs[l];
    const int side = c.side;
    const int half = side / 2;
    const std::size_t plane = static_cast<std::size_t>(side) * side;
    const std::size_t hplane = static_cast<std::size_t>(half) * half;
    const std::vector<double>& z = act.conv_z[l];

    // Through the average pool and the rectifier.
    std::vector<double> dz(static_cast<std::size_t>(c.c_out) * plane, 0.0);
    for (int co = 0; co < c.c_out; ++co) {
      const double* zp = z.data() + co * plane;
      const double* dp = dpool.data() + co * hplane;
      double* dzp = dz.data() + co * plane;
      for (int y = 0; y < half; ++y)
        for (int x = 0; x < half; ++x) {
          const double g = 0.25 * dp[static_cast<std::size_t>(y) * half + x];
          const std::size_t base = static_cast<std::size_t>(2 * y) * side + 2 * x;
          if (zp[base] > 0.0) dzp[base] += g;
          if (zp[base + 1] > 0.0) dzp[base + 1] += g;
          if (zp[base + side] > 0.0) dzp[base + side] += g;
          if (zp[base + side + 1] > 0.0) dzp[base + side + 1] += g;
        }
    }

    const double* in =
        (l == 0) ? input.data() : act.pooled[l - 1].data();
    const bool need_din = l > 0;
    std::vector<double> din;
    if (need_din) din.assign(static_cast<std::size_t>(c.c_in) * plane, 0.0);

    for (int co = 0; co < c.c_out; ++co) {
      const double* dzp = dz.data() + co * plane;
      double bsum = 0.0;
      for (std::size_t i = 0; i < plane; ++i) bsum += dzp[i];
      grad[c.b_off + co] += bsum;
      for (int ci = 0; ci < c.c_in; ++ci) {
        const double* ip = in + static_cast<std::size_t>(ci) * plane;
        const std::size_t widx =
            c.w_off + (static_cast<std::size_t>(co) * c.c_in + ci) * 9;
        const double* w = p + widx;
        double* gw = grad + widx;
        for (int ky = 0; ky < 3; ++ky)
          for (int kx = 0; kx < 3; ++kx) {
            const int dy = (ky - 1) * c.dilation;
            const int dx = (kx - 1) * c.dilation;
            gw[ky * 3 + kx] += dot_shifted(dzp, ip, side, dy, dx);
            if (need_din)
              axpy_shifted(w[ky * 3 + kx], dzp,
                           din.data() + static_cast<std::size_t>(ci) * plane,
                           side, -dy, -dx);
          }
      }
    }
    if (need_din) dpool = std::move(din);
  }
}

std::vector<double> image_input(const ImageBuffer& img, int size) {
  std::vector<double> x = img.width == size && img.height == size
                              ? to_unit_doubles(img)
                              : to_unit_doubles(resize_bilinear(img, size, size));
  // Center each input at its own mean: the classifier must read texture, not
  // global brightness, and a featureless plane maps to all zeros.
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  for (double& v : x) v -= mean;
  return x;
}

// Little-endian scalar encoding for the checkpoint format.
void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
std::uint32_t get_u32(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}
std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

constexpr char kCheckpointMagic[4] = {'T', 'C', 'A', 'L'};
constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace

void validate_model_config(const ModelConfig& cfg) {
  if (cfg.channels.empty()) throw ConfigError("model needs at least one conv layer");
  if (cfg.channels.size() != cfg.dilations.size())
    throw ConfigError("channels and dilations must have the same length");
  for (int c : cfg.channels)
    if (c < 1) throw ConfigError("channel counts must be positive");
  for (int d : cfg.dilations)
    if (d < 1) throw ConfigError("dilations must be >= 1");
  if (cfg.kernel_size != 3) throw ConfigError("kernel_size must be 3");
  if (cfg.num_classes < 2) throw ConfigError("num_classes must be >= 2");
  int side = cfg.input_size;
  for (std::size_t l = 0; l < cfg.channels.size(); ++l) {
    if (side < 2 || side % 2 != 0)
      throw ConfigError("input_size must halve cleanly through every pool");
    side /= 2;
  }
}

int param_count(const ModelConfig& cfg) {
  validate_model_config(cfg);
  return static_cast<int>(layout(cfg).total);
}

ModelParams init_model(const ModelConfig& cfg, std::uint64_t seed) {
  validate_model_config(cfg);
  const Shapes s = layout(cfg);
  ModelParams params;
  params.values.assign(s.total, 0.0);
  Rng rng(seed, 0);
  for (const ConvShape& c : s.convs) {
    const double bound = std::sqrt(6.0 / (static_cast<double>(c.c_in) * 9.0));
    const std::size_t nw = static_cast<std::size_t>(c.c_out) * c.c_in * 9;
    for (std::size_t i = 0; i < nw; ++i)
      params.values[c.w_off + i] = rng.uniform(-bound, bound);
  }
  const double bound = std::sqrt(6.0 / static_cast<double>(s.feat_c));
  const std::size_t nw = static_cast<std::size_t>(cfg.num_classes) * s.feat_c;
  for (std::size_t i = 0; i < nw; ++i)
    params.values[s.head_w_off + i] = rng.uniform(-bound, bound);
  return params;
}

std::vector<double> forward_logits(const ModelParams& params,
                                   const ModelConfig& cfg,
                                   const std::vector<double>& input) {
  validate_model_config(cfg);
  const Shapes s = layout(cfg);
  if (params.values.size() != s.total)
    throw ConfigError("parameter vector does not match the model config");
  if (input.size() != static_cast<std::size_t>(cfg.input_size) * cfg.input_size)
    throw ConfigError("input plane does not match input_size");
  Activations act;
  forward_pass(params.values.data(), s, cfg.num_classes, input, act);
  return act.logits;
}

std::vector<double> forward_image(const ModelParams& params,
                                  const ModelConfig& cfg,
                                  const ImageBuffer& image) {
  return forward_logits(params, cfg, image_input(image, cfg.input_size));
}

double batch_loss(const ModelParams& params, const ModelConfig& cfg,
                  const Batch& batch, std::vector<double>* grad,
                  double loss_scale) {
  validate_model_config(cfg);
  const Shapes s = layout(cfg);
  if (params.values.size() != s.total)
    throw ConfigError("parameter vector does not match the model config");
  if (batch.inputs.empty() || batch.inputs.size() != batch.labels.size())
    throw ConfigError("batch inputs and labels must be nonempty and aligned");
  const int n = static_cast<int>(batch.inputs.size());
  if (grad) {
    grad->assign(s.total, 0.0);
  }
  const double* p = params.values.data();
  double total = 0.0;
  Activations act;
  std::vector<double> dlogits(cfg.num_classes);
  for (int i = 0; i < n; ++i) {
    const int label = batch.labels[i];
    if (label < 0 || label >= cfg.num_classes)
      throw ConfigError("label out of range in batch");
    if (batch.inputs[i].size() !=
        static_cast<std::size_t>(cfg.input_size) * cfg.input_size)
      throw ConfigError("input plane does not match input_size");
    forward_pass(p, s, cfg.num_classes, batch.inputs[i], act);
    double zmax = act.logits[0];
    for (double z : act.logits) zmax = std::max(zmax, z);
    double sum = 0.0;
    for (double z : act.logits) sum += std::exp(z - zmax);
    const double lse = zmax + std::log(sum);
    total += lse - act.logits[label];
    if (grad) {
      const double scale = loss_scale / n;
      for (int k = 0; k < cfg.num_classes; ++k) {
        double pk = std::exp(act.logits[k] - lse);
        dlogits[k] = scale * (pk - (k == label ? 1.0 : 0.0));
      }
      backward_pass(p, s, cfg.num_classes, batch.inputs[i], act, dlogits,
                    grad->data());
    }
  }
  return loss_scale * total / n;
}

namespace {

// Batch loss plus a fingerprint of the rectifier on/off pattern. Central
// differences are only valid where the loss is smooth, so probes whose +/-h
// evaluations land on different patterns must be discarded.
double loss_with_pattern(const double* p, const Shapes& s, int num_classes,
                         const Batch& batch, std::uint64_t* pattern) {
  Activations act;
  double total = 0.0;
  std::uint64_t h = 1469598103934665603ull;
  for (std::size_t i = 0; i < batch.inputs.size(); ++i) {
    forward_pass(p, s, num_classes, batch.inputs[i], act);
    for (const std::vector<double>& z : act.conv_z)
      for (double v : z) {
        h ^= (v > 0.0) ? 0x9e3779b97f4a7c15ull : 0x2545f4914f6cdd1dull;
        h *= 1099511628211ull;
      }
    double zmax = act.logits[0];
    for (double z : act.logits) zmax = std::max(zmax, z);
    double sum = 0.0;
    for (double z : act.logits) sum += std::exp(z - zmax);
    total += zmax + std::log(sum) - act.logits[batch.labels[i]];
  }
  *pattern = h;
  return total / static_cast<double>(batch.inputs.size());
}

}  // namespace

double gradient_check(const ModelParams& params, const ModelConfig& cfg,
                      const Batch& batch, std::uint64_t seed, int probes) {
  std::vector<double> analytic;
  batch_loss(params, cfg, batch, &analytic);
  const Shapes shapes = layout(cfg);
  const int n = static_cast<int>(params.values.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed, 0);
  rng.shuffle(order);
  const int count = std::min(probes, n);
  const double h = 1e-4;
  ModelParams probe = params;
  double worst = 0.0;
  int taken = 0;
  for (int i = 0; i < n && taken < count; ++i) {
    const int idx = order[i];
    const double saved = probe.values[idx];
    std::uint64_t pat_plus = 0, pat_minus = 0;
    probe.values[idx] = saved + h;
    const double lp = loss_with_pattern(probe.values.data(), shapes,
                                        cfg.num_classes, batch, &pat_plus);
    probe.values[idx] = saved - h;
    const double lm = loss_with_pattern(probe.values.data(), shapes,
                                        cfg.num_classes, batch, &pat_minus);
    probe.values[idx] = saved;
    if (pat_plus != pat_minus) continue;  // stepped across a kink
    ++taken;
    const double fd = (lp - lm) / (2.0 * h);
    const double a = analytic[idx];
    const double rel = std::abs(a - fd) / std::max(std::abs(a) + std::abs(fd), 1e-6);
    worst = std::max(worst, rel);
  }
  return worst;
}

namespace {

struct Sgd {
  std::vector<double> velocity;
  double momentum;
  double weight_decay;

  Sgd(std::size_t n, double mu, double wd)
      : velocity(n, 0.0), momentum(mu), weight_decay(wd) {}

  void step(ModelParams& params, const std::vector<double>& grad, double lr) {
    for (std::size_t i = 0; i < velocity.size(); ++i) {
      const double g = grad[i] + weight_decay * params.values[i];
      velocity[i] = momentum * velocity[i] - lr * g;
      params.values[i] += velocity[i];
    }
  }
};

double cosine_lr(double base, int epoch, int total) {
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) /
                                      static_cast<double>(total)));
}

struct TrainSet {
  std::vector<int> rows;                  // manifest row indices
  std::vector<std::vector<double>> clean; // resized unit-scale planes
  std::vector<ImageBuffer> native;        // full-resolution images
  std::vector<int> labels;
};

// Runs SGD over the given subset; returns per-epoch mean losses and, when a
// validation set is supplied, tracks its accuracy after every epoch.
struct EpochRun {
  double initial_loss = 0.0;
  std::vector<double> losses;
  std::vector<double> val_accuracy;
};

double subset_accuracy(const ModelParams& params, const ModelConfig& cfg,
                       const Shapes& shapes, const TrainSet& set) {
  Activations act;
  int hits = 0;
  for (std::size_t i = 0; i < set.clean.size(); ++i) {
    forward_pass(params.values.data(), shapes, cfg.num_classes, set.clean[i], act);
    int arg = 0;
    for (int k = 1; k < cfg.num_classes; ++k)
      if (act.logits[k] > act.logits[arg]) arg = k;
    if (arg == set.labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(set.clean.size());
}

EpochRun run_sgd(ModelParams& params, const ModelConfig& cfg,
                 const TrainConfig& tc, const Shapes& shapes,
                 const TrainSet& train_set, const TrainSet* val_set,
                 std::uint64_t run_seed, const std::string& phase) {
  EpochRun out;
  const int n = static_cast<int>(train_set.rows.size());
  Sgd opt(shapes.total, tc.momentum, tc.weight_decay);
  const std::uint64_t order_seed = derive_stream(run_seed, "order");
  const std::uint64_t aug_seed = derive_stream(run_seed, "aug");

  {
    Batch clean;
    clean.inputs = train_set.clean;
    clean.labels = train_set.labels;
    out.initial_loss = batch_loss(params, cfg, clean, nullptr);
  }

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> grad;
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    const double lr = cosine_lr(tc.learning_rate, epoch, tc.epochs);
    Rng order_rng(order_seed, static_cast<std::uint64_t>(epoch));
    order_rng.shuffle(order);
    const std::uint64_t epoch_aug =
        derive_stream(aug_seed, static_cast<std::uint64_t>(epoch));
    double loss_sum = 0.0;
    for (int start = 0; start < n; start += tc.batch_size) {
      const int stop = std::min(n, start + tc.batch_size);
      Batch batch;
      batch.inputs.reserve(stop - start);
      batch.labels.reserve(stop - start);
      for (int i = start; i < stop; ++i) {
        const int local = order[i];
        Rng aug_rng(derive_stream(epoch_aug, static_cast<std::uint64_t>(
                                                 train_set.rows[local])),
                    0);
        ImageBuffer augmented = training_pipeline(train_set.native[local],
                                                  tc.variant, tc.augment, aug_rng);
        batch.inputs.push_back(image_input(augmented, cfg.input_size));
        batch.labels.push_back(train_set.labels[local]);
      }
      const double loss = batch_loss(params, cfg, batch, &grad);
      if (!std::isfinite(loss))
        throw NumericError("training diverged (non-finite loss) at " + phase +
                           " epoch " + std::to_string(epoch + 1));
      opt.step(params, grad, lr);
      loss_sum += loss * (stop - start);
    }
    out.losses.push_back(loss_sum / n);
    if (val_set) out.val_accuracy.push_back(subset_accuracy(params, cfg, shapes, *val_set));
  }
  return out;
}

}  // namespace

TrainOutput train(const DatasetManifest& manifest,
                  const std::string& dataset_dir, const ModelConfig& model_cfg,
                  const TrainConfig& train_cfg) {
  validate_model_config(model_cfg);
  if (train_cfg.epochs < 1 || train_cfg.batch_size < 1)
    throw ConfigError("epochs and batch_size must be >= 1");
  if (!(train_cfg.learning_rate > 0.0))
    throw ConfigError("learning_rate must be positive");

  const Shapes shapes = layout(model_cfg);

  std::vector<int> train_rows;
  int num_folds = 0;
  for (int i = 0; i < static_cast<int>(manifest.samples.size()); ++i) {
    const SampleRecord& rec = manifest.samples[i];
    if (rec.split != "train") continue;
    if (rec.fold < 0)
      throw ConfigError("training sample '" + rec.sample_id +
                        "' has no fold assignment");
    num_folds = std::max(num_folds, rec.fold + 1);
    train_rows.push_back(i);
  }
  if (train_rows.empty()) throw ConfigError("manifest has no training samples");
  if (num_folds < 2) throw ConfigError("need at least 2 folds");

  // Preload every training image once; augmentation works on the native
  // resolution and the resize to input_size happens per draw.
  std::vector<ImageBuffer> images(train_rows.size());
  std::vector<std::vector<double>> clean(train_rows.size());
  std::vector<int> labels(train_rows.size());
  for (std::size_t i = 0; i < train_rows.size(); ++i) {
    const SampleRecord& rec = manifest.samples[train_rows[i]];
    images[i] = read_pgm(dataset_dir + "/" + rec.path);
    clean[i] = image_input(images[i], model_cfg.input_size);
    labels[i] = class_index(rec.spec.texture);
    if (labels[i] >= model_cfg.num_classes)
      throw ConfigError("class index exceeds num_classes");
  }

  auto subset = [&](auto&& keep) {
    TrainSet set;
    for (std::size_t i = 0; i < train_rows.size(); ++i) {
      if (!keep(manifest.samples[train_rows[i]])) continue;
      set.rows.push_back(train_rows[i]);
      set.clean.push_back(clean[i]);
      set.native.push_back(images[i]);
      set.labels.push_back(labels[i]);
    }
    return set;
  };

  TrainOutput out;
  out.holdout.k = model_cfg.num_classes;
  const std::uint64_t fold_base = derive_stream(train_cfg.seed, "fold");

  for (int f = 0; f < num_folds; ++f) {
    TrainSet fit = subset([&](const SampleRecord& r) { return r.fold != f; });
    TrainSet val = subset([&](const SampleRecord& r) { return r.fold == f; });
    if (val.rows.empty())
      throw ConfigError("fold " + std::to_string(f) + " has no validation samples");
    if (fit.rows.empty())
      throw ConfigError("fold " + std::to_string(f) + " has no training samples");

    const std::uint64_t fold_seed =
        derive_stream(fold_base, static_cast<std::uint64_t>(f));
    ModelParams params = init_model(model_cfg, derive_stream(fold_seed, "init"));
    EpochRun run = run_sgd(params, model_cfg, train_cfg, shapes, fit, &val,
                           fold_seed, "fold " + std::to_string(f));

    FoldReport rep;
    rep.initial_loss = run.initial_loss;
    rep.epoch_losses = run.losses;
    rep.val_accuracy = run.val_accuracy.back();
    rep.best_epoch = 1;
    for (int e = 1; e < static_cast<int>(run.val_accuracy.size()); ++e)
      if (run.val_accuracy[e] > run.val_accuracy[rep.best_epoch - 1])
        rep.best_epoch = e + 1;
    out.report.folds.push_back(rep);

    Activations act;
    for (std::size_t i = 0; i < val.rows.size(); ++i) {
      forward_pass(params.values.data(), shapes, model_cfg.num_classes,
                   val.clean[i], act);
      out.holdout.logits.insert(out.holdout.logits.end(), act.logits.begin(),
                                act.logits.end());
      out.holdout.labels.push_back(val.labels[i]);
      out.holdout.sample_ids.push_back(
          manifest.samples[val.rows[i]].sample_id);
    }
  }
  out.holdout.n = static_cast<int>(out.holdout.labels.size());

  out.report.best_fold = 0;
  for (int f = 1; f < num_folds; ++f)
    if (out.report.folds[f].val_accuracy >
        out.report.folds[out.report.best_fold].val_accuracy)
      out.report.best_fold = f;
  out.report.final_epochs = out.report.folds[out.report.best_fold].best_epoch;

  TrainSet all = subset([](const SampleRecord&) { return true; });
  TrainConfig final_cfg = train_cfg;
  final_cfg.epochs = out.report.final_epochs;
  ModelParams params = init_model(
      model_cfg, derive_stream(derive_stream(train_cfg.seed, "final"), "init"));
  EpochRun run = run_sgd(params, model_cfg, final_cfg, shapes, all, nullptr,
                         derive_stream(train_cfg.seed, "final"), "final retrain");
  out.report.final_initial_loss = run.initial_loss;
  out.report.final_losses = run.losses;
  out.params = std::move(params);
  return out;
}

LogitMatrix predict_logits(const ModelParams& params, const ModelConfig& cfg,
                           const std::vector<SampleRecord>& records,
                           const std::string& dataset_dir) {
  validate_model_config(cfg);
  const Shapes shapes = layout(cfg);
  if (params.values.size() != shapes.total)
    throw ConfigError("parameter vector does not match the model config");
  LogitMatrix m;
  m.n = static_cast<int>(records.size());
  m.k = cfg.num_classes;
  m.logits.reserve(static_cast<std::size_t>(m.n) * m.k);
  Activations act;
  for (const SampleRecord& rec : records) {
    const ImageBuffer img = read_pgm(dataset_dir + "/" + rec.path);
    forward_pass(params.values.data(), shapes, cfg.num_classes,
                 image_input(img, cfg.input_size), act);
    m.logits.insert(m.logits.end(), act.logits.begin(), act.logits.end());
    m.labels.push_back(class_index(rec.spec.texture));
    m.sample_ids.push_back(rec.sample_id);
  }
  return m;
}

void save_checkpoint(const ModelParams& params, const ModelConfig& cfg,
                     const std::string& path) {
  validate_model_config(cfg);
  if (params.values.size() != layout(cfg).total)
    throw ConfigError("parameter vector does not match the model config");
  std::string blob;
  blob.append(kCheckpointMagic, 4);
  put_u32(blob, kCheckpointVersion);
  put_u32(blob, static_cast<std::uint32_t>(cfg.input_size));
  put_u32(blob, static_cast<std::uint32_t>(cfg.kernel_size));
  put_u32(blob, static_cast<std::uint32_t>(cfg.num_classes));
  put_u32(blob, static_cast<std::uint32_t>(cfg.channels.size()));
  for (int c : cfg.channels) put_u32(blob, static_cast<std::uint32_t>(c));
  for (int d : cfg.dilations) put_u32(blob, static_cast<std::uint32_t>(d));
  put_u64(blob, params.values.size());
  for (double v : params.values) put_u64(blob, std::bit_cast<std::uint64_t>(v));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) throw IoError("write failed for '" + path + "'");
}

std::pair<ModelConfig, ModelParams> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::string blob((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  const unsigned char* p = reinterpret_cast<const unsigned char*>(blob.data());
  std::size_t size = blob.size();
  auto need = [&](std::size_t at, std::size_t bytes) {
    if (at + bytes > size) throw IoError("truncated checkpoint '" + path + "'");
  };
  need(0, 8);
  if (std::memcmp(p, kCheckpointMagic, 4) != 0)
    throw IoError("bad checkpoint magic in '" + path + "'");
  if (get_u32(p + 4) != kCheckpointVersion)
    throw IoError("unsupported checkpoint version in '" + path + "'");
  std::size_t off = 8;
  need(off, 16);
  ModelConfig cfg;
  cfg.input_size = static_cast<int>(get_u32(p + off));
  cfg.kernel_size = static_cast<int>(get_u32(p + off + 4));
  cfg.num_classes = static_cast<int>(get_u32(p + off + 8));
  const std::uint32_t layers = get_u32(p + off + 12);
  off += 16;
  if (layers == 0 || layers > 16)
    throw IoError("implausible layer count in '" + path + "'");
  need(off, static_cast<std::size_t>(layers) * 8);
  cfg.channels.resize(layers);
  cfg.dilations.resize(layers);
  for (std::uint32_t l = 0; l < layers; ++l)
    cfg.channels[l] = static_cast<int>(get_u32(p + off + 4 * l));
  off += 4 * layers;
  for (std::uint32_t l = 0; l < layers; ++l)
    cfg.dilations[l] = static_cast<int>(get_u32(p + off + 4 * l));
  off += 4 * layers;
  validate_model_config(cfg);
  need(off, 8);
  const std::uint64_t count = get_u64(p + off);
  off += 8;
  if (count != layout(cfg).total)
    throw IoError("parameter count mismatch in '" + path + "'");
  need(off, count * 8);
  ModelParams params;
  params.values.resize(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    params.values[i] = std::bit_cast<double>(get_u64(p + off + 8 * i));
    if (!std::isfinite(params.values[i]))
      throw IoError("non-finite parameter in '" + path + "'");
  }
  return {cfg, std::move(params)};
}

void write_train_report(const TrainReport& report, const std::string& path) {
  nlohmann::json j;
  j["format_version"] = 1;
  j["folds"] = nlohmann::json::array();
  for (const FoldReport& f : report.folds) {
    j["folds"].push_back({{"initial_loss", f.initial_loss},
                          {"epoch_losses", f.epoch_losses},
                          {"val_accuracy", f.val_accuracy},
                          {"best_epoch", f.best_epoch}});
  }
  j["best_fold"] = report.best_fold;
  j["final_epochs"] = report.final_epochs;
  j["final_initial_loss"] = report.final_initial_loss;
  j["final_losses"] = report.final_losses;
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << j.dump(2) << "\n";
  if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace tcal
