#include "mvc/pretrain.hpp"

#include <exception>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "mvc/parallel.hpp"
#include "mvc/serialize.hpp"

namespace mvc {

namespace fs = std::filesystem;
using nlohmann::json;

void PretrainConfig::validate() const {
  if (epochs < 1 || batch < 1) throw UsageError("pretrain epochs and batch must be >= 1");
  optimizer.validate();
  schedule.validate();
  contrastive.validate();
  if (!(bank_momentum >= 0 && bank_momentum < 1)) throw UsageError("bank_momentum must be in [0,1)");
  if (stage_widths.empty()) throw UsageError("stage_widths must not be empty");
  if (embedding_dim < 2 || projection_dim < 1) throw UsageError("embedding_dim must be >= 2 and projection_dim >= 1");
  if (!(flip_p >= 0 && flip_p <= 1)) throw UsageError("flip_p must be in [0,1]");
}

FlatConfig PretrainConfig::to_config() const {
  FlatConfig c;
  c.set("epochs", std::to_string(epochs));
  c.set("batch", std::to_string(batch));
  c.set("optimizer", optimizer.kind == OptimizerKind::sgd ? "sgd" : "adam");
  c.set("lr", format_real(optimizer.lr));
  c.set("momentum", format_real(optimizer.momentum));
  c.set("weight_decay", format_real(optimizer.weight_decay));
  c.set("milestones", format_sizes(schedule.milestones));
  c.set("lr_factor", format_real(schedule.factor));
  c.set("k", std::to_string(contrastive.k));
  c.set("tau", format_real(contrastive.tau));
  c.set("positives", to_string(contrastive.positives));
  c.set("bank_momentum", format_real(bank_momentum));
  c.set("stage_widths", format_sizes(stage_widths));
  c.set("embedding_dim", std::to_string(embedding_dim));
  c.set("projection_dim", std::to_string(projection_dim));
  c.set("augment", augment ? "true" : "false");
  c.set("crop_scale_min", format_real(crop.scale_min));
  c.set("crop_scale_max", format_real(crop.scale_max));
  c.set("flip_p", format_real(flip_p));
  c.set("pretrain_split", to_string(pretrain_split));
  c.set("n_pretrain", std::to_string(n_pretrain));
  c.set("checkpoint_every", std::to_string(checkpoint_every));
  c.set("seed", std::to_string(seed));
  return c;
}

PretrainConfig PretrainConfig::from_config(const FlatConfig& c, PretrainConfig p) {
  p.epochs = c.get_size("epochs", p.epochs);
  p.batch = c.get_size("batch", p.batch);
  if (c.has("optimizer")) {
    const auto& kind = c.get("optimizer");
    if (kind != "sgd" && kind != "adam") throw UsageError("optimizer must be sgd or adam");
    p.optimizer.kind = kind == "sgd" ? OptimizerKind::sgd : OptimizerKind::adam;
  }
  p.optimizer.lr = c.get_double("lr", p.optimizer.lr);
  p.optimizer.momentum = c.get_double("momentum", p.optimizer.momentum);
  p.optimizer.weight_decay = c.get_double("weight_decay", p.optimizer.weight_decay);
  p.schedule.milestones = c.get_sizes("milestones", p.schedule.milestones);
  p.schedule.factor = c.get_double("lr_factor", p.schedule.factor);
  p.contrastive.k = c.get_size("k", p.contrastive.k);
  p.contrastive.tau = c.get_double("tau", p.contrastive.tau);
  if (c.has("positives")) p.contrastive.positives = positive_source_from_string(c.get("positives"));
  p.bank_momentum = c.get_double("bank_momentum", p.bank_momentum);
  p.stage_widths = c.get_sizes("stage_widths", p.stage_widths);
  p.embedding_dim = c.get_size("embedding_dim", p.embedding_dim);
  p.projection_dim = c.get_size("projection_dim", p.projection_dim);
  p.augment = c.get_bool("augment", p.augment);
  p.crop.scale_min = c.get_double("crop_scale_min", p.crop.scale_min);
  p.crop.scale_max = c.get_double("crop_scale_max", p.crop.scale_max);
  p.flip_p = c.get_double("flip_p", p.flip_p);
  if (c.has("pretrain_split")) p.pretrain_split = split_from_string(c.get("pretrain_split"));
  p.n_pretrain = c.get_size("n_pretrain", p.n_pretrain);
  p.checkpoint_every = c.get_size("checkpoint_every", p.checkpoint_every);
  p.seed = c.get_u64("seed", p.seed);
  p.validate();
  return p;
}

CmcConfig make_cmc_config(const ViewSpec& spec, const std::vector<std::size_t>& stage_widths,
                          std::size_t embedding_dim, std::size_t projection_dim) {
  CmcConfig cfg;
  for (auto [enc, channels] : {std::pair{&cfg.view1, spec.view1_channels()},
                               std::pair{&cfg.view2, spec.view2_channels()}}) {
    enc->in_channels = channels;
    enc->stage_widths = stage_widths;
    enc->stage_widths.back() = embedding_dim;
    enc->embedding_dim = embedding_dim;
  }
  cfg.projection_dim = projection_dim;
  cfg.validate();
  return cfg;
}

std::vector<std::size_t> pretrain_indices(const ChipDataset& ds, const PretrainConfig& cfg) {
  auto rows = ds.indices(cfg.pretrain_split);
  if (cfg.n_pretrain > 0) {
    if (cfg.n_pretrain > rows.size()) {
      throw UsageError("n_pretrain=" + std::to_string(cfg.n_pretrain) + " exceeds the " +
                       std::to_string(rows.size()) + " chips of the " + to_string(cfg.pretrain_split) + " split");
    }
    rows.resize(cfg.n_pretrain);
  }
  if (rows.size() < 2) throw DataError("pretraining needs at least 2 chips");
  return rows;
}

std::pair<Tensor<float>, Tensor<float>> make_view_batch(const ChipDataset& ds,
                                                        std::span<const std::size_t> rows,
                                                        const ViewSpec& spec,
                                                        std::optional<std::uint64_t> rng_root,
                                                        const CropParams& crop, double flip_p,
                                                        std::size_t out_size) {
  if (rows.empty()) throw UsageError("empty batch");
  const auto& first = ds.chips.at(rows[0]).bands;
  const std::size_t side = out_size > 0 ? out_size : first.dim(1);
  const std::size_t c1 = spec.view1_channels(), c2 = spec.view2_channels(), area = side * side;
  Tensor<float> v1({rows.size(), c1, side, side}), v2({rows.size(), c2, side, side});
  std::exception_ptr failure;
  const auto n = static_cast<std::ptrdiff_t>(rows.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      const Chip& chip = ds.chips.at(rows[static_cast<std::size_t>(i)]);
      Tensor<float> img;
      if (rng_root) {
        Engine rng = make_engine(*rng_root, "chip", rows[static_cast<std::size_t>(i)]);
        img = horizontal_flip(random_resized_crop(chip.bands, side, crop, rng), flip_p, rng);
      } else if (chip.bands.dim(1) != side || chip.bands.dim(2) != side) {
        img = resize_bilinear(chip.bands, side, side);
      } else {
        img = chip.bands;
      }
      const ViewPair pair = apply_view_spec(img, spec);
      std::copy_n(pair.view1.ptr(), c1 * area, v1.ptr() + static_cast<std::size_t>(i) * c1 * area);
      std::copy_n(pair.view2.ptr(), c2 * area, v2.ptr() + static_cast<std::size_t>(i) * c2 * area);
    } catch (...) {
#pragma omp critical(mvc_view_batch)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return {v1, v2};
}

// ---------------------------------------------------------------- checkpoints

namespace {

NamedTensors<float> model_state(const CmcModel<float>& model) {
  auto all = model.parameters();
  for (auto& b : model.buffers()) all.push_back(b);
  return all;
}

void write_loss_log(const fs::path& path, const std::vector<double>& losses) {
  std::ofstream out(path, std::ios::trunc);
  out << "epoch,loss\n";
  for (std::size_t e = 0; e < losses.size(); ++e) out << e + 1 << ',' << format_real(losses[e]) << '\n';
}

std::vector<double> read_loss_log(const fs::path& path) {
  std::ifstream in(path);
  if (!in) return {};
  std::vector<double> out;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw FormatError("malformed loss log line: " + line);
    out.push_back(std::stod(line.substr(comma + 1)));
  }
  return out;
}

json manifest_json(const Checkpoint& info) {
  return json{{"encoder_config", info.model_config.to_json()},
              {"d_h", info.model_config.projection_dim},
              {"view_spec_id", info.view_spec.id()},
              {"epoch", info.epoch},
              {"rng_seed", info.seed},
              {"n_pretrain", info.n_pretrain},
              {"source", info.source}};
}

}  // namespace

Checkpoint read_checkpoint_manifest(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw DataError("no checkpoint manifest in " + dir.string());
  Checkpoint info;
  try {
    const json j = json::parse(in);
    info.model_config = CmcConfig::from_json(j.at("encoder_config"));
    info.epoch = j.at("epoch").get<std::size_t>();
    info.seed = j.at("rng_seed").get<std::uint64_t>();
    info.n_pretrain = j.value("n_pretrain", std::size_t{0});
    info.source = j.value("source", std::string("cmc"));
    if (j.at("d_h").get<std::size_t>() != info.model_config.projection_dim) {
      throw FormatError("checkpoint manifest: d_h disagrees with the encoder config");
    }
    info.view_spec = ViewSpec::load(dir / "view_spec.json");
    if (info.view_spec.id() != j.at("view_spec_id").get<std::string>()) {
      throw FormatError("checkpoint manifest: view spec id mismatch");
    }
  } catch (const json::exception& e) {
    throw FormatError("malformed checkpoint manifest: " + std::string(e.what()));
  }
  info.epoch_loss = read_loss_log(dir / "loss_log.csv");
  return info;
}

CmcModel<float> load_checkpoint_model(const fs::path& dir, Checkpoint* info_out) {
  Checkpoint info = read_checkpoint_manifest(dir);
  CmcModel<float> model(info.model_config, info.seed);
  load_tensors(dir / "params", model_state(model));
  if (info_out) *info_out = std::move(info);
  return model;
}

void save_model_checkpoint(const fs::path& dir, const CmcModel<float>& model, const Checkpoint& info) {
  fs::create_directories(dir / "params");
  save_tensors(dir / "params", model_state(model));
  info.view_spec.save(dir / "view_spec.json");
  write_loss_log(dir / "loss_log.csv", info.epoch_loss);
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint manifest in " + dir.string());
  out << manifest_json(info).dump(2) << '\n';
}

// ---------------------------------------------------------------- training

PretrainResult run_pretrain(const PretrainConfig& cfg, const ChipDataset& ds, const ViewSpec& spec,
                            const fs::path& out, const PretrainOptions& options) {
  cfg.validate();
  spec.validate();
  if (spec.band_names != ds.band_names) throw DataError("view spec band names differ from the dataset");
  const auto rows = pretrain_indices(ds, cfg);
  const std::size_t n = rows.size();

  ContrastiveConfig contrastive = cfg.contrastive;
  contrastive.k = contrastive.effective_k(n);

  Checkpoint info;
  info.model_config = make_cmc_config(spec, cfg.stage_widths, cfg.embedding_dim, cfg.projection_dim);
  info.view_spec = spec;
  info.seed = cfg.seed;
  info.n_pretrain = n;
  info.source = "cmc";

  CmcModel<float> model(info.model_config, cfg.seed);
  Optimizer<float> opt(cfg.optimizer);
  MemoryBank<float> bank(n, cfg.projection_dim, cfg.bank_momentum, cfg.seed);
  const auto params = model.parameters();

  if (options.resume && fs::exists(out / "manifest.json")) {
    Checkpoint saved = read_checkpoint_manifest(out);
    if (saved.model_config.to_json() != info.model_config.to_json() || saved.seed != cfg.seed ||
        saved.n_pretrain != n || saved.view_spec.id() != spec.id()) {
      throw UsageError("checkpoint in " + out.string() + " was written by a different configuration");
    }
    // Only the epoch count may change on resume.
    if (fs::exists(out / "pretrain_config.txt")) {
      auto previous = PretrainConfig::from_config(FlatConfig::load(out / "pretrain_config.txt"));
      previous.epochs = cfg.epochs;
      if (previous.to_config().dump() != cfg.to_config().dump()) {
        throw UsageError("checkpoint in " + out.string() + " was written with different training settings");
      }
    }
    load_tensors(out / "params", model_state(model));
    opt.load_state(out / "optimizer", params);
    for (auto [t, name] : {std::pair{&bank.view1(), "view1"}, std::pair{&bank.view2(), "view2"}}) {
      const auto loaded = load_tensor<float>(out / "bank" / name);
      if (loaded.shape() != t->shape()) throw DataError("memory bank shape differs from the checkpoint");
      std::copy(loaded.data().begin(), loaded.data().end(), t->data().begin());
    }
    info.epoch = saved.epoch;
    info.epoch_loss = saved.epoch_loss;
    info.epoch_loss.resize(std::min(info.epoch_loss.size(), info.epoch));
  }

  auto save = [&]() {
    save_model_checkpoint(out, model, info);
    opt.save_state(out / "optimizer");
    save_tensor(out / "bank" / "view1", bank.view1());
    save_tensor(out / "bank" / "view2", bank.view2());
    cfg.to_config().save(out / "pretrain_config.txt");
  };

  const std::size_t batches = n >= cfg.batch ? n / cfg.batch : 1;
  const std::size_t batch = std::min(cfg.batch, n);
  std::vector<std::size_t> order(n), positions(batch), batch_rows(batch);
  bool saved_this_epoch = false;
  for (std::size_t epoch = info.epoch; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Engine shuffle = make_engine(cfg.seed, "shuffle", epoch);
    std::shuffle(order.begin(), order.end(), shuffle);
    Engine negatives = make_engine(cfg.seed, "negatives", epoch);
    const std::uint64_t augment_root = derive_seed(cfg.seed, "augment", epoch);
    const double lr = schedule_lr(cfg.optimizer.lr, epoch, cfg.schedule);

    double total = 0;
    for (std::size_t b = 0; b < batches; ++b) {
      for (std::size_t i = 0; i < batch; ++i) {
        positions[i] = order[b * batch + i];
        batch_rows[i] = rows[positions[i]];
      }
      auto [v1, v2] = make_view_batch(ds, batch_rows, spec,
                                      cfg.augment ? std::optional(augment_root) : std::nullopt,
                                      cfg.crop, cfg.flip_p);
      Tape<float> tape;
      model.zero_grad();
      auto [z1, z2] = model.encode(tape, v1, v2, true);
      auto [h1, h2] = model.project(tape, z1, z2);
      const auto loss = symmetric_loss(tape, h1, h2, bank, positions, contrastive, negatives);
      tape.backward(loss);
      opt.step(params, lr);
      bank.update(positions, h1, h2);
      total += loss.item();
    }
    info.epoch = epoch + 1;
    info.epoch_loss.push_back(total / static_cast<double>(batches));
    if (options.verbose) {
      std::cerr << "epoch " << info.epoch << "/" << cfg.epochs << " loss " << info.epoch_loss.back()
                << " lr " << lr << '\n';
    }
    const bool stop = options.stop_after && info.epoch >= *options.stop_after;
    saved_this_epoch = false;
    if ((cfg.checkpoint_every > 0 && info.epoch % cfg.checkpoint_every == 0) || stop) {
      save();
      saved_this_epoch = true;
    }
    if (stop) break;
  }
  if (!saved_this_epoch) save();

  PretrainResult result;
  result.epoch_loss = info.epoch_loss;
  result.epochs_done = info.epoch;
  result.effective_k = contrastive.k;
  return result;
}

}  // namespace mvc
