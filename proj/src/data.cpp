#include "mvc/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <numeric>

#include "json.hpp"
#include "mvc/views.hpp"

namespace mvc {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw UsageError("unknown split '" + s + "' (expected train, val or test)");
}

std::vector<Split> assign_splits(std::size_t count, std::uint64_t seed, const SplitFractions& f) {
  if (f.train < 0 || f.val < 0 || f.test < 0 || std::abs(f.train + f.val + f.test - 1.0) > 1e-9) {
    throw UsageError("split fractions must be non-negative and sum to 1");
  }
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Engine rng = make_engine(seed, "split");
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(f.train * static_cast<double>(count)));
  const auto n_val = std::min(count - n_train,
                              static_cast<std::size_t>(std::llround(f.val * static_cast<double>(count))));
  std::vector<Split> out(count, Split::test);
  for (std::size_t i = 0; i < count; ++i) {
    out[order[i]] = i < n_train ? Split::train : (i < n_train + n_val ? Split::val : Split::test);
  }
  return out;
}

std::vector<std::size_t> ChipDataset::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < splits.size(); ++i) {
    if (splits[i] == s) out.push_back(i);
  }
  return out;
}

std::vector<Tensor<float>> ChipDataset::band_tensors(Split s) const {
  std::vector<Tensor<float>> out;
  for (const auto i : indices(s)) out.push_back(chips[i].bands);
  return out;
}

void ChipDataset::validate() const {
  if (splits.size() != chips.size()) throw DataError("every chip needs exactly one split");
  if (num_classes < 1) throw DataError("dataset has no classes");
  for (const auto& c : chips) {
    if (c.bands.rank() != 3 || c.bands.dim(0) != c.band_names.size()) {
      throw DataError("chip " + c.id + ": band count differs from its band names");
    }
    if (c.band_names != band_names) throw DataError("chip " + c.id + ": band names differ from the dataset");
    c.bands.check_finite(c.id.c_str());
    if (task_mode == TaskMode::single_label) {
      const auto* cls = std::get_if<std::size_t>(&c.label);
      if (!cls || *cls >= num_classes) throw DataError("chip " + c.id + ": invalid class label");
    } else {
      const auto* hot = std::get_if<std::vector<std::uint8_t>>(&c.label);
      if (!hot || hot->size() != num_classes) throw DataError("chip " + c.id + ": invalid multi-hot label");
    }
  }
}

// ---------------------------------------------------------------- synthesis

void SynthConfig::validate() const {
  if (num_chips < 1 || channels < 1 || size < 1 || num_classes < 1) {
    throw UsageError("synth config needs positive chip count, channels, size and classes");
  }
  if (!(noise_std >= 0) || !(haze_std >= 0) || !(signature_jitter >= 0)) {
    throw UsageError("noise_std, haze_std and signature_jitter must be >= 0");
  }
  if (!(field_max >= field_min) || field_min < 0) throw UsageError("field range must satisfy 0 <= min <= max");
  if (field_grid < 2) throw UsageError("field_grid must be >= 2");
  if (!signatures.empty()) {
    if (signatures.size() != num_classes) throw UsageError("signature rows must equal num_classes");
    for (const auto& s : signatures) {
      if (s.size() != channels) throw UsageError("signature columns must equal channels");
    }
  }
}

FlatConfig SynthConfig::to_config() const {
  FlatConfig c;
  c.set("num_chips", std::to_string(num_chips));
  c.set("channels", std::to_string(channels));
  c.set("size", std::to_string(size));
  c.set("num_classes", std::to_string(num_classes));
  c.set("rgb_confusable", rgb_confusable ? "true" : "false");
  c.set("noise_std", format_real(noise_std));
  c.set("haze_std", format_real(haze_std));
  c.set("signature_jitter", format_real(signature_jitter));
  c.set("field_min", format_real(field_min));
  c.set("field_max", format_real(field_max));
  c.set("field_grid", std::to_string(field_grid));
  c.set("multi_label", multi_label ? "true" : "false");
  c.set("seed", std::to_string(seed));
  c.set("split_train", format_real(split.train));
  c.set("split_val", format_real(split.val));
  c.set("split_test", format_real(split.test));
  return c;
}

SynthConfig SynthConfig::from_config(const FlatConfig& c) {
  SynthConfig s;
  s.num_chips = c.get_size("num_chips", s.num_chips);
  s.channels = c.get_size("channels", s.channels);
  s.size = c.get_size("size", s.size);
  s.num_classes = c.get_size("num_classes", s.num_classes);
  s.rgb_confusable = c.get_bool("rgb_confusable", s.rgb_confusable);
  s.noise_std = c.get_double("noise_std", s.noise_std);
  s.haze_std = c.get_double("haze_std", s.haze_std);
  s.signature_jitter = c.get_double("signature_jitter", s.signature_jitter);
  s.field_min = c.get_double("field_min", s.field_min);
  s.field_max = c.get_double("field_max", s.field_max);
  s.field_grid = c.get_size("field_grid", s.field_grid);
  s.multi_label = c.get_bool("multi_label", s.multi_label);
  s.seed = c.get_u64("seed", s.seed);
  s.split.train = c.get_double("split_train", s.split.train);
  s.split.val = c.get_double("split_val", s.split.val);
  s.split.test = c.get_double("split_test", s.split.test);
  s.validate();
  return s;
}

namespace {

void check_signatures(const std::vector<std::vector<double>>& sig) {
  for (std::size_t a = 0; a < sig.size(); ++a)
    for (std::size_t b = a + 1; b < sig.size(); ++b) {
      double d = 0;
      for (std::size_t c = 0; c < sig[a].size(); ++c) d += (sig[a][c] - sig[b][c]) * (sig[a][c] - sig[b][c]);
      if (std::sqrt(d) < 1e-6) {
        throw UsageError("degenerate signature matrix: classes " + std::to_string(a) + " and " +
                         std::to_string(b) + " coincide");
      }
    }
}

// Bilinear upsample (corner-aligned) of a g x g grid to size x size.
std::vector<double> smooth_field(std::size_t size, std::size_t grid, double lo, double hi, Engine& rng) {
  std::uniform_real_distribution<double> u(lo, std::nextafter(hi, hi + 1.0));
  std::vector<double> knots(grid * grid);
  for (auto& k : knots) k = lo == hi ? lo : u(rng);
  std::vector<double> field(size * size);
  const double step = size > 1 ? static_cast<double>(grid - 1) / static_cast<double>(size - 1) : 0.0;
  for (std::size_t y = 0; y < size; ++y) {
    const double gy = static_cast<double>(y) * step;
    const auto y0 = std::min(static_cast<std::size_t>(gy), grid - 2);
    const double fy = gy - static_cast<double>(y0);
    for (std::size_t x = 0; x < size; ++x) {
      const double gx = static_cast<double>(x) * step;
      const auto x0 = std::min(static_cast<std::size_t>(gx), grid - 2);
      const double fx = gx - static_cast<double>(x0);
      const double top = knots[y0 * grid + x0] * (1 - fx) + knots[y0 * grid + x0 + 1] * fx;
      const double bottom = knots[(y0 + 1) * grid + x0] * (1 - fx) + knots[(y0 + 1) * grid + x0 + 1] * fx;
      field[y * size + x] = top * (1 - fy) + bottom * fy;
    }
  }
  return field;
}

}  // namespace

std::vector<std::vector<double>> make_signatures(const SynthConfig& cfg) {
  cfg.validate();
  if (!cfg.signatures.empty()) {
    check_signatures(cfg.signatures);
    return cfg.signatures;
  }
  Engine rng = make_engine(cfg.seed, "signatures");
  std::uniform_real_distribution<double> visible(0.05, 0.35), other(0.1, 0.6);
  const std::size_t n_visible = std::min<std::size_t>(3, cfg.channels);
  std::vector<std::vector<double>> sig(cfg.num_classes, std::vector<double>(cfg.channels));
  for (std::size_t c = 0; c < cfg.num_classes; ++c) {
    const bool shares = cfg.rgb_confusable && c % 2 == 1;
    for (std::size_t b = 0; b < cfg.channels; ++b) {
      if (b < n_visible) {
        sig[c][b] = shares ? sig[c - 1][b] : visible(rng);
      } else {
        sig[c][b] = other(rng);
      }
    }
  }
  check_signatures(sig);
  return sig;
}

ChipDataset generate_synthetic(const SynthConfig& cfg) {
  const auto sig = make_signatures(cfg);
  ChipDataset ds;
  ds.task_mode = cfg.multi_label ? TaskMode::multi_label : TaskMode::single_label;
  ds.num_classes = cfg.num_classes;
  if (cfg.channels == sentinel2_bands().size()) {
    ds.band_names = sentinel2_bands();
  } else {
    for (std::size_t b = 0; b < cfg.channels; ++b) ds.band_names.push_back("b" + std::to_string(b));
  }

  std::vector<std::size_t> classes(cfg.num_chips);
  for (std::size_t i = 0; i < cfg.num_chips; ++i) classes[i] = i % cfg.num_classes;
  Engine order_rng = make_engine(cfg.seed, "labels");
  std::shuffle(classes.begin(), classes.end(), order_rng);

  const std::size_t s = cfg.size, area = s * s, c = cfg.channels;
  for (std::size_t i = 0; i < cfg.num_chips; ++i) {
    Engine rng = make_engine(cfg.seed, "data", i);
    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<std::size_t> present{classes[i]};
    if (cfg.multi_label) {
      std::uniform_int_distribution<std::size_t> count(1, std::min<std::size_t>(3, cfg.num_classes));
      const std::size_t n = count(rng);
      std::vector<std::size_t> all(cfg.num_classes);
      std::iota(all.begin(), all.end(), std::size_t{0});
      std::shuffle(all.begin(), all.end(), rng);
      present.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n));
      std::sort(present.begin(), present.end());
    }
    const auto brightness = smooth_field(s, cfg.field_grid, cfg.field_min, cfg.field_max, rng);
    std::vector<std::size_t> material(area, 0);
    if (present.size() > 1) {
      std::vector<double> best(area, -1e300);
      for (std::size_t j = 0; j < present.size(); ++j) {
        const auto f = smooth_field(s, cfg.field_grid, 0.0, 1.0, rng);
        for (std::size_t p = 0; p < area; ++p) {
          if (f[p] > best[p]) {
            best[p] = f[p];
            material[p] = j;
          }
        }
      }
    }
    std::vector<double> haze(c);
    for (auto& h : haze) h = cfg.haze_std * noise(rng);
    std::vector<std::vector<double>> chip_sig(present.size());
    for (std::size_t j = 0; j < present.size(); ++j) {
      chip_sig[j] = sig[present[j]];
      for (auto& v : chip_sig[j]) v += cfg.signature_jitter * noise(rng);
    }

    Tensor<float> bands({c, s, s});
    for (std::size_t p = 0; p < area; ++p) {
      const auto& v = chip_sig[material[p]];
      for (std::size_t b = 0; b < c; ++b) {
        bands[b * area + p] = static_cast<float>(brightness[p] * v[b] + haze[b] + cfg.noise_std * noise(rng));
      }
    }
    Chip chip;
    chip.bands = std::move(bands);
    chip.band_names = ds.band_names;
    if (cfg.multi_label) {
      std::vector<std::uint8_t> hot(cfg.num_classes, 0);
      for (const auto m : material) hot[present[m]] = 1;
      chip.label = std::move(hot);
    } else {
      chip.label = classes[i];
    }
    char id[32];
    std::snprintf(id, sizeof(id), "chip%06zu", i);
    chip.id = id;
    ds.chips.push_back(std::move(chip));
  }
  ds.splits = assign_splits(cfg.num_chips, cfg.seed, cfg.split);
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------- augment

Tensor<float> resize_bilinear(const Tensor<float>& chip, std::size_t out_h, std::size_t out_w) {
  if (chip.rank() != 3 || chip.dim(1) < 1 || chip.dim(2) < 1) throw ShapeError("resize needs a [C,H,W] chip");
  if (out_h < 1 || out_w < 1) throw UsageError("resize target must be at least 1x1");
  const std::size_t c = chip.dim(0), h = chip.dim(1), w = chip.dim(2);
  if (h == out_h && w == out_w) return chip.clone();
  Tensor<float> out({c, out_h, out_w});
  auto source = [](std::size_t dst, std::size_t in, std::size_t out_len, std::size_t& i0, std::size_t& i1, double& f) {
    double src = (static_cast<double>(dst) + 0.5) * static_cast<double>(in) / static_cast<double>(out_len) - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    i0 = static_cast<std::size_t>(src);
    i1 = std::min(i0 + 1, in - 1);
    f = src - static_cast<double>(i0);
  };
  for (std::size_t y = 0; y < out_h; ++y) {
    std::size_t y0, y1;
    double fy;
    source(y, h, out_h, y0, y1, fy);
    for (std::size_t x = 0; x < out_w; ++x) {
      std::size_t x0, x1;
      double fx;
      source(x, w, out_w, x0, x1, fx);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const float* plane = chip.ptr() + ch * h * w;
        const double top = plane[y0 * w + x0] * (1 - fx) + plane[y0 * w + x1] * fx;
        const double bottom = plane[y1 * w + x0] * (1 - fx) + plane[y1 * w + x1] * fx;
        out[(ch * out_h + y) * out_w + x] = static_cast<float>(top * (1 - fy) + bottom * fy);
      }
    }
  }
  return out;
}

Tensor<float> crop(const Tensor<float>& chip, std::size_t top, std::size_t left, std::size_t h,
                   std::size_t w) {
  if (chip.rank() != 3 || h < 1 || w < 1 || top + h > chip.dim(1) || left + w > chip.dim(2)) {
    throw ShapeError("crop window outside chip " + to_string(chip.shape()));
  }
  const std::size_t c = chip.dim(0), width = chip.dim(2);
  Tensor<float> out({c, h, w});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      std::copy_n(chip.ptr() + (ch * chip.dim(1) + top + y) * width + left, w, out.ptr() + (ch * h + y) * w);
  return out;
}

Tensor<float> random_resized_crop(const Tensor<float>& chip, std::size_t out_size,
                                  const CropParams& params, Engine& rng) {
  if (chip.rank() != 3 || chip.dim(1) < 1 || chip.dim(2) < 1) throw ShapeError("random_resized_crop: chip smaller than 1x1");
  if (out_size < 1) throw UsageError("random_resized_crop: out_size must be >= 1");
  if (params.scale_min > params.scale_max || params.ratio_min > params.ratio_max || params.scale_min <= 0 ||
      params.ratio_min <= 0) {
    throw UsageError("random_resized_crop: invalid scale/ratio bounds");
  }
  const std::size_t h = chip.dim(1), w = chip.dim(2);
  const double area = static_cast<double>(h * w);
  std::uniform_real_distribution<double> scale(params.scale_min, params.scale_max);
  std::uniform_real_distribution<double> log_ratio(std::log(params.ratio_min), std::log(params.ratio_max));
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = area * scale(rng);
    const double aspect = std::exp(log_ratio(rng));
    const auto cw = static_cast<std::size_t>(std::llround(std::sqrt(target * aspect)));
    const auto ch = static_cast<std::size_t>(std::llround(std::sqrt(target / aspect)));
    if (cw >= 1 && ch >= 1 && cw <= w && ch <= h) {
      const std::size_t top = std::uniform_int_distribution<std::size_t>(0, h - ch)(rng);
      const std::size_t left = std::uniform_int_distribution<std::size_t>(0, w - cw)(rng);
      return resize_bilinear(crop(chip, top, left, ch, cw), out_size, out_size);
    }
  }
  // Centre crop at the closest admissible aspect ratio.
  const double in_ratio = static_cast<double>(w) / static_cast<double>(h);
  std::size_t cw = w, ch = h;
  if (in_ratio < params.ratio_min) {
    ch = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(static_cast<double>(w) / params.ratio_min)));
  } else if (in_ratio > params.ratio_max) {
    cw = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(static_cast<double>(h) * params.ratio_max)));
  }
  ch = std::min(ch, h);
  cw = std::min(cw, w);
  return resize_bilinear(crop(chip, (h - ch) / 2, (w - cw) / 2, ch, cw), out_size, out_size);
}

Tensor<float> flip_horizontal(const Tensor<float>& chip) {
  if (chip.rank() != 3) throw ShapeError("flip needs a [C,H,W] chip");
  Tensor<float> out(chip.shape());
  const std::size_t rows = chip.dim(0) * chip.dim(1), w = chip.dim(2);
  for (std::size_t r = 0; r < rows; ++r)
    std::reverse_copy(chip.ptr() + r * w, chip.ptr() + (r + 1) * w, out.ptr() + r * w);
  return out;
}

Tensor<float> horizontal_flip(const Tensor<float>& chip, double p, Engine& rng) {
  std::bernoulli_distribution coin(std::clamp(p, 0.0, 1.0));
  return coin(rng) ? flip_horizontal(chip) : chip.clone();
}

// ---------------------------------------------------------------- files

namespace {

constexpr char kMagic[8] = {'M', 'S', 'C', 'H', 'I', 'P', '0', '1'};
constexpr std::size_t kHeaderBytes = 8 + 4 * 4;

static_assert(std::endian::native == std::endian::little, "MSC1 I/O assumes a little-endian host");

void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

std::uint32_t get_u32(const std::vector<char>& bytes, std::size_t at) {
  std::uint32_t v;
  std::memcpy(&v, bytes.data() + at, 4);
  return v;
}

json label_to_json(const Label& l) {
  if (const auto* cls = std::get_if<std::size_t>(&l)) return *cls;
  return std::get<std::vector<std::uint8_t>>(l);
}

Label label_from_json(const json& j, TaskMode mode) {
  if (mode == TaskMode::single_label) return j.get<std::size_t>();
  return j.get<std::vector<std::uint8_t>>();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

}  // namespace

void write_chip_file(const fs::path& path, const Tensor<float>& bands) {
  if (bands.rank() != 3) throw ShapeError("chip files hold [C,H,W] tensors");
  std::string out(kMagic, sizeof(kMagic));
  for (std::size_t i = 0; i < 3; ++i) put_u32(out, static_cast<std::uint32_t>(bands.dim(i)));
  put_u32(out, 0);
  out.append(reinterpret_cast<const char*>(bands.ptr()), bands.numel() * sizeof(float));
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_text(path, out);
}

Tensor<float> read_chip_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open chip file " + path.string());
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < sizeof(kMagic)) throw TruncatedError("chip file " + path.string() + " is truncated");
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw BadMagicError("chip file " + path.string() + " has a bad magic number");
  }
  if (bytes.size() < kHeaderBytes) throw TruncatedError("chip file " + path.string() + " has a truncated header");
  const std::size_t c = get_u32(bytes, 8), h = get_u32(bytes, 12), w = get_u32(bytes, 16);
  if (const auto dtype = get_u32(bytes, 20); dtype != 0) {
    throw DtypeError("chip file " + path.string() + " has unsupported dtype code " + std::to_string(dtype));
  }
  const std::size_t payload = c * h * w * sizeof(float);
  if (bytes.size() < kHeaderBytes + payload) throw TruncatedError("chip file " + path.string() + " is truncated");
  if (bytes.size() > kHeaderBytes + payload) throw FormatError("chip file " + path.string() + " has trailing bytes");
  std::vector<float> values(c * h * w);
  std::memcpy(values.data(), bytes.data() + kHeaderBytes, payload);
  return Tensor<float>({c, h, w}, std::move(values));
}

void save_dataset(const fs::path& root, const ChipDataset& ds) {
  ds.validate();
  fs::create_directories(root / "chips");
  fs::create_directories(root / "splits");
  std::string index;
  std::map<Split, json> split_ids{{Split::train, json::array()}, {Split::val, json::array()}, {Split::test, json::array()}};
  for (std::size_t i = 0; i < ds.chips.size(); ++i) {
    const auto& chip = ds.chips[i];
    const std::string rel = "chips/" + chip.id + ".msc";
    write_chip_file(root / rel, chip.bands);
    index += json{{"id", chip.id}, {"path", rel}, {"label", label_to_json(chip.label)}}.dump() + "\n";
    split_ids[ds.splits[i]].push_back(chip.id);
  }
  write_text(root / "index.jsonl", index);
  for (const auto& [split, ids] : split_ids) write_text(root / "splits" / (to_string(split) + ".json"), ids.dump() + "\n");
  const json meta{{"band_names", ds.band_names},
                  {"task_mode", to_string(ds.task_mode)},
                  {"num_classes", ds.num_classes},
                  {"num_chips", ds.chips.size()}};
  write_text(root / "dataset.json", meta.dump(2) + "\n");
}

ChipDataset load_dataset(const fs::path& root) {
  if (!fs::exists(root / "dataset.json")) throw DataError("no dataset at " + root.string());
  const json meta = read_json(root / "dataset.json");
  ChipDataset ds;
  try {
    ds.band_names = meta.at("band_names").get<std::vector<std::string>>();
    ds.task_mode = task_mode_from_string(meta.at("task_mode").get<std::string>());
    ds.num_classes = meta.at("num_classes").get<std::size_t>();
  } catch (const json::exception& e) {
    throw FormatError("malformed dataset.json: " + std::string(e.what()));
  }
  std::map<std::string, Split> split_of;
  for (const Split s : {Split::train, Split::val, Split::test}) {
    const auto path = root / "splits" / (to_string(s) + ".json");
    if (!fs::exists(path)) continue;
    for (const auto& id : read_json(path)) {
      if (!split_of.emplace(id.get<std::string>(), s).second) {
        throw DataError("chip " + id.get<std::string>() + " appears in more than one split");
      }
    }
  }
  std::ifstream index(root / "index.jsonl");
  if (!index) throw DataError("missing index.jsonl in " + root.string());
  std::string line;
  while (std::getline(index, line)) {
    if (line.empty()) continue;
    Chip chip;
    std::string rel;
    try {
      const json entry = json::parse(line);
      chip.id = entry.at("id").get<std::string>();
      rel = entry.at("path").get<std::string>();
      chip.label = label_from_json(entry.at("label"), ds.task_mode);
    } catch (const json::exception& e) {
      throw FormatError("malformed index entry: " + std::string(e.what()));
    }
    chip.bands = read_chip_file(root / rel);
    chip.band_names = ds.band_names;
    const auto it = split_of.find(chip.id);
    if (it == split_of.end()) throw DataError("chip " + chip.id + " is not assigned to a split");
    ds.splits.push_back(it->second);
    ds.chips.push_back(std::move(chip));
  }
  ds.validate();
  return ds;
}

}  // namespace mvc
