#include "mvc/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <tuple>

#include "mvc/pretrain.hpp"

namespace mvc {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------- configs

void ProbeConfig::validate() const {
  if (epochs < 1 || batch < 1) throw UsageError("probe epochs and batch must be >= 1");
  if (!(lr > 0) || !(weight_decay >= 0)) throw UsageError("probe needs lr > 0 and weight_decay >= 0");
  schedule.validate();
}

FlatConfig ProbeConfig::to_config() const {
  FlatConfig c;
  c.set("epochs", std::to_string(epochs));
  c.set("batch", std::to_string(batch));
  c.set("optimizer", "adam");
  c.set("lr", format_real(lr));
  c.set("weight_decay", format_real(weight_decay));
  c.set("milestones", format_sizes(schedule.milestones));
  c.set("lr_factor", format_real(schedule.factor));
  c.set("standardize", standardize ? "true" : "false");
  c.set("seed", std::to_string(seed));
  return c;
}

ProbeConfig ProbeConfig::from_config(const FlatConfig& c, ProbeConfig p) {
  if (c.has("optimizer") && c.get("optimizer") != "adam") throw UsageError("the probe trains with adam");
  p.epochs = c.get_size("epochs", p.epochs);
  p.batch = c.get_size("batch", p.batch);
  p.lr = c.get_double("lr", p.lr);
  p.weight_decay = c.get_double("weight_decay", p.weight_decay);
  p.schedule.milestones = c.get_sizes("milestones", p.schedule.milestones);
  p.schedule.factor = c.get_double("lr_factor", p.schedule.factor);
  p.standardize = c.get_bool("standardize", p.standardize);
  p.seed = c.get_u64("seed", p.seed);
  p.validate();
  return p;
}

ProbeConfig ProbeConfig::preset(const std::string& name) {
  ProbeConfig p;
  if (name == "default") return p;
  if (name == "aid") {
    p.weight_decay = 1e-2;
    return p;
  }
  if (name == "mlrsnet") {
    p.lr = 1e-2;
    p.weight_decay = 1e-2;
    return p;
  }
  throw UsageError("unknown probe preset '" + name + "' (expected default, aid or mlrsnet)");
}

void FinetuneConfig::validate() const {
  if (batch < 1) throw UsageError("finetune batch must be >= 1");
  if (!(lr > 0) || !(weight_decay >= 0)) throw UsageError("finetune needs lr > 0 and weight_decay >= 0");
  if (!(flip_p >= 0 && flip_p <= 1)) throw UsageError("flip_p must be in [0,1]");
  schedule.validate();
}

FlatConfig FinetuneConfig::to_config() const {
  FlatConfig c;
  c.set("epochs", std::to_string(epochs));
  c.set("batch", std::to_string(batch));
  c.set("optimizer", "adam");
  c.set("lr", format_real(lr));
  c.set("weight_decay", format_real(weight_decay));
  c.set("milestones", format_sizes(schedule.milestones));
  c.set("lr_factor", format_real(schedule.factor));
  c.set("augment", augment ? "true" : "false");
  c.set("crop_scale_min", format_real(crop.scale_min));
  c.set("crop_scale_max", format_real(crop.scale_max));
  c.set("flip_p", format_real(flip_p));
  c.set("input_size", std::to_string(input_size));
  c.set("freeze_bn", freeze_bn ? "true" : "false");
  c.set("seed", std::to_string(seed));
  return c;
}

FinetuneConfig FinetuneConfig::from_config(const FlatConfig& c, FinetuneConfig p) {
  if (c.has("optimizer") && c.get("optimizer") != "adam") throw UsageError("finetuning trains with adam");
  p.epochs = c.get_size("epochs", p.epochs);
  p.batch = c.get_size("batch", p.batch);
  p.lr = c.get_double("lr", p.lr);
  p.weight_decay = c.get_double("weight_decay", p.weight_decay);
  p.schedule.milestones = c.get_sizes("milestones", p.schedule.milestones);
  p.schedule.factor = c.get_double("lr_factor", p.schedule.factor);
  p.augment = c.get_bool("augment", p.augment);
  p.crop.scale_min = c.get_double("crop_scale_min", p.crop.scale_min);
  p.crop.scale_max = c.get_double("crop_scale_max", p.crop.scale_max);
  p.flip_p = c.get_double("flip_p", p.flip_p);
  p.input_size = c.get_size("input_size", p.input_size);
  p.freeze_bn = c.get_bool("freeze_bn", p.freeze_bn);
  p.seed = c.get_u64("seed", p.seed);
  p.validate();
  return p;
}

FinetuneConfig FinetuneConfig::preset(const std::string& name) {
  if (name == "default") return {};
  throw UsageError("unknown finetune preset '" + name + "' (expected default)");
}

// ---------------------------------------------------------------- metrics

double accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> targets) {
  if (predictions.size() != targets.size()) throw ShapeError("accuracy: prediction/target count mismatch");
  if (predictions.empty()) throw UsageError("accuracy of an empty set");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) correct += predictions[i] == targets[i];
  return static_cast<double>(correct) / static_cast<double>(predictions.size());
}

MapResult macro_map(std::span<const double> scores, std::span<const std::uint8_t> targets,
                    std::size_t n, std::size_t classes) {
  if (scores.size() != n * classes || targets.size() != n * classes) {
    throw ShapeError("macro_map: scores and targets must both be [n x classes]");
  }
  MapResult out;
  out.per_class.assign(classes, std::numeric_limits<double>::quiet_NaN());
  std::vector<std::size_t> order(n);
  double total = 0;
  std::size_t counted = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    std::size_t positives = 0;
    for (std::size_t i = 0; i < n; ++i) positives += targets[i * classes + c] != 0;
    if (positives == 0) {
      ++out.skipped;
      continue;
    }
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return scores[a * classes + c] > scores[b * classes + c];
    });
    double ap = 0;
    std::size_t hits = 0;
    for (std::size_t r = 0; r < n; ++r) {
      if (targets[order[r] * classes + c]) {
        ++hits;
        ap += static_cast<double>(hits) / static_cast<double>(r + 1);
      }
    }
    out.per_class[c] = ap / static_cast<double>(positives);
    total += out.per_class[c];
    ++counted;
  }
  if (counted == 0) throw DataError("macro_map: targets contain no positives");
  if (out.skipped > 0) {
    std::cerr << "warning: macro_map skipped " << out.skipped << " class(es) without positives\n";
  }
  out.value = total / static_cast<double>(counted);
  return out;
}

// ---------------------------------------------------------------- reports

json EvalReport::to_json() const {
  json pc = json::array();
  for (const double v : per_class) pc.push_back(std::isnan(v) ? json(nullptr) : json(v));
  return json{{"task", task},
              {"pretrain_source", pretrain_source},
              {"views", views},
              {"n_pretrain", n_pretrain},
              {"protocol", protocol},
              {"metric", metric},
              {"value", value},
              {"per_class", pc},
              {"config_fingerprint", config_fingerprint},
              {"seed", seed},
              {"train_loss", train_loss}};
}

void EvalReport::save_json(const fs::path& path) const {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << to_json().dump(2) << '\n';
}

std::string config_fingerprint(const FlatConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char ch : cfg.dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += ',';
    out += parts[i];
  }
  return out;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string checked_cell(const std::string& s) {
  if (s.find_first_of(",\n\r") != std::string::npos) throw UsageError("ledger field '" + s + "' contains a separator");
  return s;
}

}  // namespace

void append_ledger(const fs::path& path, const EvalReport& r) {
  const bool fresh = !fs::exists(path) || fs::file_size(path) == 0;
  if (!fresh) {
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    if (header != join(ledger_columns())) throw FormatError("ledger " + path.string() + " has an unexpected header");
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::app);
  if (!out) throw DataError("cannot append to ledger " + path.string());
  if (fresh) out << join(ledger_columns()) << '\n';
  out << join({checked_cell(r.task), checked_cell(r.pretrain_source), checked_cell(r.views),
               std::to_string(r.n_pretrain), checked_cell(r.protocol), checked_cell(r.metric),
               format_real(r.value), std::to_string(r.seed)})
      << '\n';
}

std::vector<LedgerRow> read_ledger(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("no results ledger at " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != join(ledger_columns())) {
    throw FormatError("ledger " + path.string() + " has an unexpected header");
  }
  std::vector<LedgerRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != ledger_columns().size()) {
      throw FormatError("ledger line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) + " fields");
    }
    LedgerRow r;
    try {
      r.task = cells[0];
      r.pretrain_source = cells[1];
      r.views = cells[2];
      r.n_pretrain = std::stoull(cells[3]);
      r.protocol = cells[4];
      r.metric = cells[5];
      r.value = std::stod(cells[6]);
      r.seed = std::stoull(cells[7]);
    } catch (const std::logic_error&) {
      throw FormatError("ledger line " + std::to_string(line_no) + " has a malformed number");
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<LedgerGroup> group_ledger(const std::vector<LedgerRow>& rows) {
  using Key = std::tuple<std::string, std::string, std::string, std::string, std::string, std::size_t>;
  std::map<Key, std::vector<double>> groups;
  for (const auto& r : rows) {
    groups[{r.task, r.protocol, r.metric, r.pretrain_source, r.views, r.n_pretrain}].push_back(r.value);
  }
  std::vector<LedgerGroup> out;
  for (auto& [key, values] : groups) {
    LedgerGroup g;
    std::tie(g.task, g.protocol, g.metric, g.pretrain_source, g.views, g.n_pretrain) = key;
    std::sort(values.begin(), values.end());
    g.runs = values.size();
    g.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(g.runs);
    const std::size_t mid = g.runs / 2;
    g.median = g.runs % 2 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
    g.min = values.front();
    g.max = values.back();
    double ss = 0;
    for (const double v : values) ss += (v - g.mean) * (v - g.mean);
    g.stddev = g.runs > 1 ? std::sqrt(ss / static_cast<double>(g.runs - 1)) : 0.0;
    out.push_back(std::move(g));
  }
  return out;
}

void write_report(const fs::path& path, const std::vector<LedgerGroup>& groups) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << join(report_columns()) << '\n';
  for (const auto& g : groups) {
    out << join({g.task, g.protocol, g.metric, g.pretrain_source, g.views, std::to_string(g.n_pretrain),
                 std::to_string(g.runs), format_real(g.mean), format_real(g.median), format_real(g.min),
                 format_real(g.max), format_real(g.stddev)})
        << '\n';
  }
}

// ---------------------------------------------------------------- protocols

Tensor<float> extract_dataset_features(CmcModel<float>& model, const ChipDataset& ds,
                                       const ViewSpec& spec, std::span<const std::size_t> rows,
                                       std::size_t input_size) {
  constexpr std::size_t chunk = 128;
  const std::size_t dim = model.config().view1.embedding_dim + model.config().view2.embedding_dim;
  if (model.config().view1.in_channels != spec.view1_channels() ||
      model.config().view2.in_channels != spec.view2_channels()) {
    throw ShapeError("model channel counts differ from the view spec");
  }
  Tensor<float> out({rows.size(), dim});
  for (std::size_t begin = 0; begin < rows.size(); begin += chunk) {
    const auto part = rows.subspan(begin, std::min(chunk, rows.size() - begin));
    auto [v1, v2] = make_view_batch(ds, part, spec, std::nullopt, {}, 0.0, input_size);
    const auto f = model.extract_features(v1, v2);
    std::copy(f.data().begin(), f.data().end(), out.ptr() + begin * dim);
  }
  return out;
}

namespace {

std::vector<Label> labels_of(const ChipDataset& ds, std::span<const std::size_t> rows) {
  std::vector<Label> out;
  out.reserve(rows.size());
  for (const auto r : rows) out.push_back(ds.chips[r].label);
  return out;
}

struct Score {
  std::string metric;
  double value = 0;
  std::vector<double> per_class;
};

Score evaluate(const ClassifierHead<float>& head, const Tensor<float>& features,
               std::span<const Label> labels) {
  Tape<float> tape;
  tape.set_recording(false);
  const auto logits = head.logits(tape, features);
  const std::size_t n = labels.size(), c = head.num_classes();
  Score s;
  if (head.mode() == TaskMode::single_label) {
    std::vector<std::size_t> pred(n), truth(n);
    for (std::size_t i = 0; i < n; ++i) {
      const float* row = logits.ptr() + i * c;
      pred[i] = static_cast<std::size_t>(std::max_element(row, row + c) - row);
      truth[i] = std::get<std::size_t>(labels[i]);
    }
    s.metric = "accuracy";
    s.value = accuracy(pred, truth);
  } else {
    std::vector<double> scores(logits.data().begin(), logits.data().end());
    std::vector<std::uint8_t> targets;
    targets.reserve(n * c);
    for (const auto& l : labels) {
      const auto& hot = std::get<std::vector<std::uint8_t>>(l);
      targets.insert(targets.end(), hot.begin(), hot.end());
    }
    auto m = macro_map(scores, targets, n, c);
    s.metric = "macro_mAP";
    s.value = m.value;
    s.per_class = std::move(m.per_class);
  }
  return s;
}

Tensor<float> gather_rows(const Tensor<float>& x, std::span<const std::size_t> rows) {
  const std::size_t d = x.dim(1);
  Tensor<float> out({rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(x.ptr() + rows[i] * d, d, out.ptr() + i * d);
  return out;
}

void standardize_with(Tensor<float>& x, const std::vector<double>& mean, const std::vector<double>& inv_std) {
  const std::size_t d = x.dim(1);
  for (std::size_t i = 0; i < x.dim(0); ++i)
    for (std::size_t j = 0; j < d; ++j) {
      float& v = x[i * d + j];
      v = static_cast<float>((v - mean[j]) * inv_std[j]);
    }
}

EvalReport make_report(const Provenance& from, const std::string& protocol, const Score& s,
                       const FlatConfig& cfg, std::uint64_t seed, std::vector<double> losses) {
  EvalReport r;
  r.task = from.task;
  r.pretrain_source = from.pretrain_source;
  r.views = from.views;
  r.n_pretrain = from.n_pretrain;
  r.protocol = protocol;
  r.metric = s.metric;
  r.value = s.value;
  r.per_class = s.per_class;
  r.config_fingerprint = config_fingerprint(cfg);
  r.seed = seed;
  r.train_loss = std::move(losses);
  return r;
}

}  // namespace

ProbeResult probe_on_features(const Tensor<float>& train_features, std::span<const Label> train_labels,
                              const Tensor<float>& test_features, std::span<const Label> test_labels,
                              TaskMode mode, std::size_t num_classes, const ProbeConfig& cfg) {
  cfg.validate();
  if (train_features.rank() != 2 || test_features.rank() != 2 || train_features.dim(1) != test_features.dim(1)) {
    throw ShapeError("probe: feature-dim mismatch between " + to_string(train_features.shape()) + " and " +
                     to_string(test_features.shape()));
  }
  if (train_features.dim(0) != train_labels.size() || test_features.dim(0) != test_labels.size()) {
    throw ShapeError("probe: feature and label counts differ");
  }
  if (train_labels.empty() || test_labels.empty()) throw DataError("probe needs non-empty train and test splits");
  const std::size_t n = train_features.dim(0), d = train_features.dim(1);

  Tensor<float> train = train_features.clone(), test = test_features.clone();
  if (cfg.standardize) {
    std::vector<double> mean(d, 0.0), inv_std(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) mean[j] += train[i * d + j];
    for (auto& m : mean) m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) inv_std[j] += (train[i * d + j] - mean[j]) * (train[i * d + j] - mean[j]);
    for (auto& s : inv_std) {
      const double sd = std::sqrt(s / static_cast<double>(n));
      s = sd > 1e-12 ? 1.0 / sd : 1.0;
    }
    standardize_with(train, mean, inv_std);
    standardize_with(test, mean, inv_std);
  }

  Engine init = make_engine(cfg.seed, "probe");
  ClassifierHead<float> head(d, num_classes, mode, init);
  OptimizerConfig oc;
  oc.kind = OptimizerKind::adam;
  oc.lr = cfg.lr;
  oc.weight_decay = cfg.weight_decay;
  Optimizer<float> opt(oc);
  const auto params = head.parameters();

  std::vector<std::size_t> order(n);
  std::vector<double> losses;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Engine shuffle = make_engine(cfg.seed, "probe-shuffle", epoch);
    std::shuffle(order.begin(), order.end(), shuffle);
    const double lr = schedule_lr(cfg.lr, epoch, cfg.schedule);
    double total = 0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < n; begin += cfg.batch) {
      const std::span<const std::size_t> rows(order.data() + begin, std::min(cfg.batch, n - begin));
      const auto x = gather_rows(train, rows);
      std::vector<Label> y;
      for (const auto r : rows) y.push_back(train_labels[r]);
      for (const auto& [name, p] : params) p.zero_grad();
      Tape<float> tape;
      const auto loss = head.loss(tape, x, y);
      tape.backward(loss);
      opt.step(params, lr);
      total += loss.item();
      ++batches;
    }
    losses.push_back(total / static_cast<double>(batches));
  }
  const Score s = evaluate(head, test, test_labels);
  ProbeResult result{std::move(head), {}};
  result.report = make_report(Provenance{}, "probe", s, cfg.to_config(), cfg.seed, std::move(losses));
  return result;
}

ProbeResult run_linear_probe(CmcModel<float>& model, const ChipDataset& ds, const ViewSpec& spec,
                             const ProbeConfig& cfg, const Provenance& from) {
  const auto train_rows = ds.indices(Split::train);
  const auto test_rows = ds.indices(Split::test);
  const auto train_x = extract_dataset_features(model, ds, spec, train_rows);
  const auto test_x = extract_dataset_features(model, ds, spec, test_rows);
  const auto train_y = labels_of(ds, train_rows);
  const auto test_y = labels_of(ds, test_rows);
  auto result = probe_on_features(train_x, train_y, test_x, test_y, ds.task_mode, ds.num_classes, cfg);
  auto losses = std::move(result.report.train_loss);
  const Score s{result.report.metric, result.report.value, result.report.per_class};
  result.report = make_report(from, "probe", s, cfg.to_config(), cfg.seed, std::move(losses));
  return result;
}

FinetuneResult run_finetune(CmcModel<float>& model, const ChipDataset& ds, const ViewSpec& spec,
                            const FinetuneConfig& cfg, const Provenance& from) {
  cfg.validate();
  const auto train_rows = ds.indices(Split::train);
  const auto test_rows = ds.indices(Split::test);
  if (train_rows.empty() || test_rows.empty()) throw DataError("finetuning needs non-empty train and test splits");
  const std::size_t d = model.config().view1.embedding_dim + model.config().view2.embedding_dim;
  const std::size_t side = cfg.input_size > 0 ? cfg.input_size : ds.chips[train_rows[0]].bands.dim(1);

  Engine init = make_engine(cfg.seed, "finetune-head");
  ClassifierHead<float> head(d, ds.num_classes, ds.task_mode, init);
  auto params = model.encoder_parameters();
  for (const auto& p : head.parameters()) params.push_back(p);
  OptimizerConfig oc;
  oc.kind = OptimizerKind::adam;
  oc.lr = cfg.lr;
  oc.weight_decay = cfg.weight_decay;
  Optimizer<float> opt(oc);

  const std::size_t n = train_rows.size();
  std::vector<std::size_t> order(n), batch_rows;
  std::vector<double> losses;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Engine shuffle = make_engine(cfg.seed, "finetune-shuffle", epoch);
    std::shuffle(order.begin(), order.end(), shuffle);
    const double lr = schedule_lr(cfg.lr, epoch, cfg.schedule);
    const std::uint64_t augment_root = derive_seed(cfg.seed, "finetune-augment", epoch);
    double total = 0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < n; begin += cfg.batch) {
      const std::size_t count = std::min(cfg.batch, n - begin);
      batch_rows.resize(count);
      std::vector<Label> y;
      for (std::size_t i = 0; i < count; ++i) {
        batch_rows[i] = train_rows[order[begin + i]];
        y.push_back(ds.chips[batch_rows[i]].label);
      }
      auto [v1, v2] = make_view_batch(ds, batch_rows, spec,
                                      cfg.augment ? std::optional(augment_root) : std::nullopt, cfg.crop,
                                      cfg.flip_p, side);
      for (const auto& [name, p] : params) p.zero_grad();
      Tape<float> tape;
      auto [z1, z2] = model.encode(tape, v1, v2, !cfg.freeze_bn);
      const auto features = ops::concat(tape, {z1, z2}, 1);
      const auto loss = head.loss(tape, features, y);
      tape.backward(loss);
      opt.step(params, lr);
      total += loss.item();
      ++batches;
    }
    losses.push_back(total / static_cast<double>(batches));
  }
  const auto test_x = extract_dataset_features(model, ds, spec, test_rows, side);
  const Score s = evaluate(head, test_x, labels_of(ds, test_rows));
  FinetuneResult result{std::move(head), {}};
  result.report = make_report(from, "finetune", s, cfg.to_config(), cfg.seed, std::move(losses));
  return result;
}

}  // namespace mvc
