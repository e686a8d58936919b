#include "tcal/io_formats.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "tcal/errors.hpp"

namespace tcal {

namespace {

std::string quoted_path(const std::string& path) { return "'" + path + "'"; }

std::ifstream open_input(const std::string& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw IoError("cannot open " + quoted_path(path) + " for reading");
  return in;
}

std::ofstream open_output(const std::string& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(path, mode);
  if (!out) throw IoError("cannot open " + quoted_path(path) + " for writing");
  return out;
}

void check_write(const std::ostream& out, const std::string& path) {
  if (!out) throw IoError("write to " + quoted_path(path) + " failed");
}

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

double parse_double(const std::string& text, const std::string& where) {
  double v = 0.0;
  const char* begin = text.data();
  const char* end = begin + text.size();
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end)
    throw IoError(where + ": not a number: '" + text + "'");
  return v;
}

long long parse_int(const std::string& text, const std::string& where) {
  long long v = 0;
  const char* begin = text.data();
  const char* end = begin + text.size();
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end)
    throw IoError(where + ": not an integer: '" + text + "'");
  return v;
}

std::string fixed6(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value, std::chars_format::fixed, 6);
  return std::string(buf, res.ptr);
}

}  // namespace

std::string format_double(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

ImageBuffer read_pgm(const std::string& path) {
  auto in = open_input(path, std::ios::binary);
  std::string magic;
  in >> magic;
  if (magic != "P5")
    throw IoError(quoted_path(path) + ": not a binary PGM (magic '" + magic + "')");
  long long w = 0, h = 0, maxval = 0;
  if (!(in >> w >> h >> maxval))
    throw IoError(quoted_path(path) + ": malformed PGM header");
  if (w < 1 || h < 1) throw IoError(quoted_path(path) + ": bad PGM dimensions");
  if (maxval != 255)
    throw IoError(quoted_path(path) + ": unsupported PGM maxval " + std::to_string(maxval) +
                  " (only 255)");
  in.get();  // single whitespace byte after maxval
  ImageBuffer img;
  img.width = static_cast<int>(w);
  img.height = static_cast<int>(h);
  img.pixels.resize(static_cast<std::size_t>(w) * h);
  in.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size()))
    throw IoError(quoted_path(path) + ": truncated PGM payload");
  return img;
}

void write_pgm(const ImageBuffer& img, const std::string& path) {
  if (img.width < 1 || img.height < 1 ||
      img.pixels.size() != static_cast<std::size_t>(img.width) * img.height)
    throw IoError("refusing to write malformed image to " + quoted_path(path));
  auto out = open_output(path, std::ios::binary);
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
  check_write(out, path);
}

LogitMatrix read_logits(const std::string& path) {
  auto in = open_input(path);
  std::string line;
  if (!std::getline(in, line)) throw IoError(quoted_path(path) + ": empty logits file");
  const auto header = split_csv(trim(line));
  if (header.size() < 3 || header[0] != "sample_id" || header[1] != "label")
    throw IoError(quoted_path(path) + ": bad logits header");
  const int k = static_cast<int>(header.size()) - 2;
  for (int j = 0; j < k; ++j)
    if (header[j + 2] != "z" + std::to_string(j))
      throw IoError(quoted_path(path) + ": bad logits header column '" + header[j + 2] + "'");

  LogitMatrix m;
  m.k = k;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = trim(line);
    if (t.empty()) continue;
    const auto fields = split_csv(t);
    const std::string where = quoted_path(path) + " line " + std::to_string(line_no);
    if (fields.size() != header.size())
      throw IoError(where + ": expected " + std::to_string(header.size()) + " fields, got " +
                    std::to_string(fields.size()));
    const long long label = parse_int(fields[1], where);
    if (label < 0 || label >= k)
      throw IoError(where + ": label " + fields[1] + " out of range for k=" + std::to_string(k));
    m.sample_ids.push_back(fields[0]);
    m.labels.push_back(static_cast<int>(label));
    for (int j = 0; j < k; ++j) m.logits.push_back(parse_double(fields[j + 2], where));
    ++m.n;
  }
  return m;
}

void write_logits(const LogitMatrix& m, const std::string& path) {
  auto out = open_output(path);
  out << "sample_id,label";
  for (int j = 0; j < m.k; ++j) out << ",z" << j;
  out << '\n';
  for (int i = 0; i < m.n; ++i) {
    const std::string id = i < static_cast<int>(m.sample_ids.size()) && !m.sample_ids[i].empty()
                               ? m.sample_ids[i]
                               : "s" + std::to_string(i);
    out << id << ',' << m.labels[i];
    const double* row = m.row(i);
    for (int j = 0; j < m.k; ++j) out << ',' << format_double(row[j]);
    out << '\n';
  }
  check_write(out, path);
}

namespace {
constexpr const char* kManifestHeader =
    "sample_id,class,geometry_variant,material_level,contact_angle,split,fold,group,"
    "blur_sigma,noise_sigma,path";
}

DatasetManifest read_manifest(const std::string& path) {
  auto in = open_input(path);
  std::string line;
  if (!std::getline(in, line) || trim(line) != kManifestHeader)
    throw IoError(quoted_path(path) + ": bad manifest header");
  DatasetManifest manifest;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = trim(line);
    if (t.empty()) continue;
    const auto f = split_csv(t);
    const std::string where = quoted_path(path) + " line " + std::to_string(line_no);
    if (f.size() != 11)
      throw IoError(where + ": expected 11 fields, got " + std::to_string(f.size()));
    SampleRecord rec;
    rec.sample_id = f[0];
    rec.spec.texture = parse_class(f[1]);
    rec.spec.geometry_variant = static_cast<int>(parse_int(f[2], where));
    rec.spec.material_level = static_cast<int>(parse_int(f[3], where));
    rec.spec.contact_angle = static_cast<int>(parse_int(f[4], where));
    rec.split = f[5];
    rec.fold = f[6].empty() ? -1 : static_cast<int>(parse_int(f[6], where));
    if (f[7].size() > 1 || (!f[7].empty() && (f[7][0] < 'A' || f[7][0] > 'D')))
      throw IoError(where + ": bad group '" + f[7] + "'");
    rec.group = f[7].empty() ? '\0' : f[7][0];
    rec.blur_sigma = f[8].empty() ? 0.0 : parse_double(f[8], where);
    rec.noise_sigma = f[9].empty() ? 0.0 : parse_double(f[9], where);
    rec.path = f[10];
    manifest.samples.push_back(std::move(rec));
  }
  return manifest;
}

void write_manifest(const DatasetManifest& manifest, const std::string& path) {
  auto out = open_output(path);
  out << kManifestHeader << '\n';
  for (const auto& rec : manifest.samples) {
    out << rec.sample_id << ',' << class_name(rec.spec.texture) << ','
        << rec.spec.geometry_variant << ',' << rec.spec.material_level << ','
        << rec.spec.contact_angle << ',' << rec.split << ',';
    if (rec.fold >= 0) out << rec.fold;
    out << ',';
    if (rec.group) out << rec.group;
    out << ',';
    if (rec.group == 'B' || rec.group == 'D') out << format_double(rec.blur_sigma);
    out << ',';
    if (rec.group == 'C' || rec.group == 'D') out << format_double(rec.noise_sigma);
    out << ',' << rec.path << '\n';
  }
  check_write(out, path);
}

void write_temperature(const Temperature& t, double pre_nll, const std::string& txt_path,
                       const std::string& json_path) {
  {
    auto out = open_output(txt_path);
    out << "T=" << format_double(t.value) << '\n';
    check_write(out, txt_path);
  }
  nlohmann::json j{{"format_version", 1},
                   {"t", t.value},
                   {"nll_at_fit", t.nll_at_fit},
                   {"pre_fit_nll", pre_nll},
                   {"iterations", t.iterations}};
  auto out = open_output(json_path);
  out << j.dump(2) << '\n';
  check_write(out, json_path);
}

double read_temperature(const std::string& txt_path) {
  auto in = open_input(txt_path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("T=", 0) != 0)
    throw IoError(quoted_path(txt_path) + ": expected a 'T=<value>' line");
  const double t = parse_double(trim(line.substr(2)), quoted_path(txt_path));
  if (!(t > 0.0)) throw IoError(quoted_path(txt_path) + ": temperature must be positive");
  return t;
}

void write_reliability_csv(const ReliabilityReport& report, const std::string& path) {
  auto out = open_output(path);
  out << "bin,lower,upper,count,accuracy,avg_confidence\n";
  const int m = static_cast<int>(report.bins.size());
  for (int b = 0; b < m; ++b) {
    const auto& bin = report.bins[b];
    out << b << ',' << fixed6(double(b) / m) << ',' << fixed6(double(b + 1) / m) << ','
        << bin.count << ',';
    if (bin.count > 0) out << fixed6(bin.accuracy) << ',' << fixed6(bin.confidence);
    else out << ',';
    out << '\n';
  }
  check_write(out, path);
}

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path) {
  auto out = open_output(path);
  out << "perturbation,sigma,accuracy,avg_confidence,ece\n";
  for (const auto& r : rows)
    out << r.perturbation << ',' << format_double(r.sigma) << ',' << format_double(r.accuracy)
        << ',' << format_double(r.avg_confidence) << ',' << format_double(r.ece) << '\n';
  check_write(out, path);
}

std::vector<SweepRow> read_sweep_csv(const std::string& path) {
  auto in = open_input(path);
  std::string line;
  if (!std::getline(in, line) || trim(line) != "perturbation,sigma,accuracy,avg_confidence,ece")
    throw IoError(quoted_path(path) + ": bad sweep header");
  std::vector<SweepRow> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = trim(line);
    if (t.empty()) continue;
    const auto f = split_csv(t);
    const std::string where = quoted_path(path) + " line " + std::to_string(line_no);
    if (f.size() != 5) throw IoError(where + ": expected 5 fields");
    rows.push_back({f[0], parse_double(f[1], where), parse_double(f[2], where),
                    parse_double(f[3], where), parse_double(f[4], where)});
  }
  return rows;
}

void write_metrics_json(const std::string& variant, bool calibrated,
                        const ReliabilityReport& report, int bins, const std::string& path) {
  nlohmann::json j{{"format_version", 1},
                   {"variant", variant},
                   {"calibrated", calibrated},
                   {"n", report.n},
                   {"bins", bins},
                   {"accuracy", report.accuracy},
                   {"avg_confidence", report.avg_confidence},
                   {"ece", report.ece},
                   {"mce", report.mce},
                   {"ace", report.ace}};
  auto out = open_output(path);
  out << j.dump(2) << '\n';
  check_write(out, path);
}

namespace {

struct ConfigParser {
  const std::string& path;
  ExperimentConfig cfg;

  std::string where(int line_no) const {
    return "'" + path + "' line " + std::to_string(line_no);
  }

  static double to_double(const std::string& v, const std::string& at) {
    double x = 0.0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc() || p != v.data() + v.size())
      throw ConfigError(at + ": expected a number, got '" + v + "'");
    return x;
  }

  static long long to_int(const std::string& v, const std::string& at) {
    long long x = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc() || p != v.data() + v.size())
      throw ConfigError(at + ": expected an integer, got '" + v + "'");
    return x;
  }

  static std::uint64_t to_u64(const std::string& v, const std::string& at) {
    std::uint64_t x = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc() || p != v.data() + v.size())
      throw ConfigError(at + ": expected an unsigned integer, got '" + v + "'");
    return x;
  }

  static std::vector<int> to_int_list(const std::string& v, const std::string& at) {
    std::vector<int> out;
    for (const auto& piece : split_csv(v))
      out.push_back(static_cast<int>(to_int(trim(piece), at)));
    return out;
  }

  void apply(const std::string& section, const std::string& key, const std::string& value,
             int line_no) {
    const std::string at = where(line_no);
    const std::string full = section + "." + key;
    if (full == "experiment.root_seed") cfg.root_seed = to_u64(value, at);
    else if (full == "experiment.dataset_dir") cfg.dataset_dir = value;
    else if (full == "experiment.variant") cfg.variant = value;
    else if (full == "dataset.image_size") cfg.image_size = static_cast<int>(to_int(value, at));
    else if (full == "dataset.test_fraction") cfg.test_fraction = to_double(value, at);
    else if (full == "dataset.folds") cfg.folds = static_cast<int>(to_int(value, at));
    else if (full == "dataset.blur_cap") cfg.group_blur_cap = to_double(value, at);
    else if (full == "dataset.noise_cap") cfg.group_noise_cap = to_double(value, at);
    else if (full == "model.input_size") cfg.input_size = static_cast<int>(to_int(value, at));
    else if (full == "model.channels") cfg.channels = to_int_list(value, at);
    else if (full == "model.dilations") cfg.dilations = to_int_list(value, at);
    else if (full == "train.epochs") cfg.epochs = static_cast<int>(to_int(value, at));
    else if (full == "train.batch_size") cfg.batch_size = static_cast<int>(to_int(value, at));
    else if (full == "train.learning_rate") cfg.learning_rate = to_double(value, at);
    else if (full == "train.momentum") cfg.momentum = to_double(value, at);
    else if (full == "train.weight_decay") cfg.weight_decay = to_double(value, at);
    else if (full == "fit.log_t_lower") cfg.log_t_lower = to_double(value, at);
    else if (full == "fit.log_t_upper") cfg.log_t_upper = to_double(value, at);
    else if (full == "fit.tolerance") cfg.fit_tolerance = to_double(value, at);
    else if (full == "binning.m") cfg.bins = static_cast<int>(to_int(value, at));
    else if (full == "sweep.blur_points") cfg.blur_points = static_cast<int>(to_int(value, at));
    else if (full == "sweep.noise_points") cfg.noise_points = static_cast<int>(to_int(value, at));
    else throw ConfigError(at + ": unknown key '" + full + "'");
  }
};

}  // namespace

ExperimentConfig load_config(const std::string& path) {
  ConfigParser parser{path, {}};
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + quoted_path(path));
    std::string line, section;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto t = trim(line);
      if (t.empty() || t[0] == '#' || t[0] == ';') continue;
      if (t.front() == '[') {
        if (t.back() != ']')
          throw ConfigError(parser.where(line_no) + ": malformed section header '" + t + "'");
        section = trim(t.substr(1, t.size() - 2));
        continue;
      }
      const auto eq = t.find('=');
      if (eq == std::string::npos)
        throw ConfigError(parser.where(line_no) + ": expected 'key = value', got '" + t + "'");
      const auto key = trim(t.substr(0, eq));
      const auto value = trim(t.substr(eq + 1));
      if (section.empty())
        throw ConfigError(parser.where(line_no) + ": key '" + key + "' outside any section");
      parser.apply(section, key, value, line_no);
    }
  }
  validate_config(parser.cfg);
  return parser.cfg;
}

void validate_config(const ExperimentConfig& cfg) {
  auto fail = [](const std::string& msg) { throw ConfigError("config: " + msg); };
  if (cfg.variant != "I" && cfg.variant != "II" && cfg.variant != "III" && cfg.variant != "all")
    fail("experiment.variant must be I, II, III, or all (got '" + cfg.variant + "')");
  if (cfg.dataset_dir.empty()) fail("experiment.dataset_dir must not be empty");
  if (cfg.image_size < 32) fail("dataset.image_size must be at least 32");
  if (!(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0))
    fail("dataset.test_fraction must lie in (0, 1)");
  if (cfg.folds < 2) fail("dataset.folds must be at least 2");
  if (!(cfg.group_blur_cap >= 1.0 && cfg.group_blur_cap <= 256.0))
    fail("dataset.blur_cap must lie in [1, 256]");
  if (!(cfg.group_noise_cap >= 1.0 && cfg.group_noise_cap <= 50.0))
    fail("dataset.noise_cap must lie in [1, 50]");
  if (cfg.input_size < 8) fail("model.input_size must be at least 8");
  if (cfg.channels.empty()) fail("model.channels must not be empty");
  if (cfg.channels.size() != cfg.dilations.size())
    fail("model.channels and model.dilations must have equal length");
  for (int c : cfg.channels)
    if (c < 1) fail("model.channels entries must be positive");
  for (int d : cfg.dilations)
    if (d < 1) fail("model.dilations entries must be at least 1");
  if (cfg.epochs < 1) fail("train.epochs must be positive");
  if (cfg.batch_size < 1) fail("train.batch_size must be positive");
  if (!(cfg.learning_rate > 0.0)) fail("train.learning_rate must be positive");
  if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0)) fail("train.momentum must lie in [0, 1)");
  if (cfg.weight_decay < 0.0) fail("train.weight_decay must be non-negative");
  if (!(cfg.log_t_lower < cfg.log_t_upper)) fail("fit.log_t_lower must be below fit.log_t_upper");
  if (!(cfg.fit_tolerance > 0.0)) fail("fit.tolerance must be positive");
  if (cfg.bins < 1) fail("binning.m must be at least 1");
  if (cfg.blur_points < 2 || cfg.blur_points > 9)
    fail("sweep.blur_points must lie in [2, 9]");  // 2^(points-1) <= 256
  if (cfg.noise_points < 2 || cfg.noise_points > 50)
    fail("sweep.noise_points must lie in [2, 50]");
}

void write_config_echo(const ExperimentConfig& cfg, const std::string& path) {
  auto out = open_output(path);
  auto list = [](const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) s += ',';
      s += std::to_string(v[i]);
    }
    return s;
  };
  out << "# effective configuration\n"
      << "[experiment]\n"
      << "root_seed = " << cfg.root_seed << '\n'
      << "dataset_dir = " << cfg.dataset_dir << '\n'
      << "variant = " << cfg.variant << '\n'
      << "\n[dataset]\n"
      << "image_size = " << cfg.image_size << '\n'
      << "test_fraction = " << format_double(cfg.test_fraction) << '\n'
      << "folds = " << cfg.folds << '\n'
      << "blur_cap = " << format_double(cfg.group_blur_cap) << '\n'
      << "noise_cap = " << format_double(cfg.group_noise_cap) << '\n'
      << "\n[model]\n"
      << "input_size = " << cfg.input_size << '\n'
      << "channels = " << list(cfg.channels) << '\n'
      << "dilations = " << list(cfg.dilations) << '\n'
      << "\n[train]\n"
      << "epochs = " << cfg.epochs << '\n'
      << "batch_size = " << cfg.batch_size << '\n'
      << "learning_rate = " << format_double(cfg.learning_rate) << '\n'
      << "momentum = " << format_double(cfg.momentum) << '\n'
      << "weight_decay = " << format_double(cfg.weight_decay) << '\n'
      << "\n[fit]\n"
      << "log_t_lower = " << format_double(cfg.log_t_lower) << '\n'
      << "log_t_upper = " << format_double(cfg.log_t_upper) << '\n'
      << "tolerance = " << format_double(cfg.fit_tolerance) << '\n'
      << "\n[binning]\n"
      << "m = " << cfg.bins << '\n'
      << "\n[sweep]\n"
      << "blur_points = " << cfg.blur_points << '\n'
      << "noise_points = " << cfg.noise_points << '\n';
  check_write(out, path);
}

}  // namespace tcal
