#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mvc/error.hpp"
#include "mvc/parallel.hpp"
#include "mvc/pretrain.hpp"
#include "mvc/transfer.hpp"

namespace fs = std::filesystem;
using namespace mvc;

namespace {

constexpr std::size_t kDefaultPcaPixels = 144;

// --config file, then --set key=value entries, then explicit flags.
struct ConfigSource {
  std::string file;
  std::vector<std::string> sets;

  FlatConfig resolve() const {
    FlatConfig cfg = file.empty() ? FlatConfig{} : FlatConfig::load(file);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got '" + s + "'");
      cfg.set(s.substr(0, eq), s.substr(eq + 1));
    }
    return cfg;
  }
};

void add_config_options(CLI::App* cmd, ConfigSource& src) {
  cmd->add_option("--config", src.file, "Flat key = value config file")->check(CLI::ExistingFile);
  cmd->add_option("--set", src.sets, "Override one config key (key=value), repeatable");
}

void write_snapshot(const fs::path& path, const FlatConfig& cfg) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  cfg.save(path);
}

ViewSpec build_spec(const std::string& views, const ChipDataset& ds, const std::string& spec_file,
                    std::size_t pixels, std::uint64_t seed) {
  if (!spec_file.empty()) {
    ViewSpec spec = ViewSpec::load(spec_file);
    if (spec.id() != views && !(views == "bands" && spec.kind == ViewKind::fixed_bands)) {
      throw UsageError("view spec " + spec_file + " is '" + spec.id() + "', not '" + views + "'");
    }
    return spec;
  }
  const auto train = ds.band_tensors(Split::train);
  if (views == "lab") return make_lab_spec(ds.band_names);
  if (views == "bands") return make_fixed_band_spec(ds.band_names, train);
  if (views == "pca") return make_pca_spec(ds.band_names, pca_fit(train, pixels, derive_seed(seed, "pca")));
  throw UsageError("unknown view kind '" + views + "' (expected lab, bands or pca)");
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
  ConfigSource cfg;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> chips;
  bool multi_label = false;
};

void cmd_synth(const SynthArgs& a) {
  FlatConfig c = a.cfg.resolve();
  if (a.seed) c.set("seed", std::to_string(*a.seed));
  if (a.chips) c.set("num_chips", std::to_string(*a.chips));
  if (a.multi_label) c.set("multi_label", "true");
  const auto sc = SynthConfig::from_config(c);
  const auto ds = generate_synthetic(sc);
  save_dataset(a.out, ds);
  write_snapshot(fs::path(a.out) / "synth_config.txt", sc.to_config());
  std::cout << "wrote " << ds.chips.size() << " chips to " << a.out << "\n";
}

// ---------------------------------------------------------------- pca-fit

struct PcaArgs {
  std::string dataset, out;
  std::size_t pixels = kDefaultPcaPixels;
  std::uint64_t seed = 0;
};

void cmd_pca_fit(const PcaArgs& a) {
  const auto ds = load_dataset(a.dataset);
  const auto spec = build_spec("pca", ds, {}, a.pixels, a.seed);
  spec.save(a.out);
  FlatConfig snap;
  snap.set("dataset", a.dataset);
  snap.set("pixels_per_chip", std::to_string(a.pixels));
  snap.set("seed", std::to_string(a.seed));
  write_snapshot(fs::path(a.out).string() + ".config.txt", snap);
  std::cout << "pca basis: view1 variance share " << view1_variance_share(spec) << "\n";
}

// ---------------------------------------------------------------- pretrain

struct PretrainArgs {
  ConfigSource cfg;
  std::string dataset, out, views = "bands", view_spec, positives;
  std::optional<std::size_t> epochs, k, stop_after;
  std::optional<double> tau;
  std::optional<std::uint64_t> seed;
  bool resume = false;
};

void cmd_pretrain(const PretrainArgs& a) {
  FlatConfig c = a.cfg.resolve();
  if (a.epochs) c.set("epochs", std::to_string(*a.epochs));
  if (a.k) c.set("k", std::to_string(*a.k));
  if (a.tau) c.set("tau", format_real(*a.tau));
  if (a.seed) c.set("seed", std::to_string(*a.seed));
  if (!a.positives.empty()) c.set("positives", a.positives);
  const auto pc = PretrainConfig::from_config(c);
  pc.validate();
  const auto ds = load_dataset(a.dataset);
  const auto spec = build_spec(a.views, ds, a.view_spec, kDefaultPcaPixels, pc.seed);

  PretrainOptions opts;
  opts.resume = a.resume;
  opts.stop_after = a.stop_after;
  opts.verbose = true;
  const auto r = run_pretrain(pc, ds, spec, a.out, opts);
  FlatConfig snap = pc.to_config();
  snap.set("dataset", a.dataset);
  snap.set("views", spec.id());
  write_snapshot(fs::path(a.out) / "run_config.txt", snap);
  std::cout << "epochs " << r.epochs_done << " final loss "
            << (r.epoch_loss.empty() ? 0.0 : r.epoch_loss.back()) << " (k=" << r.effective_k << ")\n";
}

// ---------------------------------------------------------------- probe / finetune

struct EvalArgs {
  ConfigSource cfg;
  std::string dataset, checkpoint, supervised, views = "bands", view_spec, preset = "default", ledger, out,
      task = "synthetic", save_model;
  bool random_init = false;
  std::optional<std::uint64_t> seed;
};

struct LoadedEncoder {
  CmcModel<float> model;
  ViewSpec spec;
  Provenance from;
};

LoadedEncoder load_encoder(const EvalArgs& a, const FlatConfig& c, const ChipDataset& ds, std::uint64_t seed) {
  const int sources = int(!a.checkpoint.empty()) + int(!a.supervised.empty()) + int(a.random_init);
  if (sources != 1) throw UsageError("give exactly one of --checkpoint, --random-init, --supervised-init");
  Provenance from;
  from.task = a.task;
  if (a.random_init) {
    const auto arch = PretrainConfig::from_config(c);
    ViewSpec spec = build_spec(a.views, ds, a.view_spec, kDefaultPcaPixels, seed);
    CmcModel<float> model(make_cmc_config(spec, arch.stage_widths, arch.embedding_dim, arch.projection_dim),
                          derive_seed(seed, "random-init"));
    from.pretrain_source = "random";
    from.views = spec.id();
    return {std::move(model), std::move(spec), from};
  }
  const std::string dir = a.checkpoint.empty() ? a.supervised : a.checkpoint;
  Checkpoint info;
  auto model = load_checkpoint_model(dir, &info);
  if (!a.supervised.empty() && info.source != "supervised") {
    throw UsageError(dir + " holds a '" + info.source + "' checkpoint, not a supervised one");
  }
  from.pretrain_source = info.source;
  from.views = info.view_spec.id();
  from.n_pretrain = info.n_pretrain;
  return {std::move(model), info.view_spec, from};
}

void finish_report(const EvalArgs& a, const EvalReport& report, const FlatConfig& snap) {
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    report.save_json(fs::path(a.out) / "report.json");
    write_snapshot(fs::path(a.out) / "run_config.txt", snap);
  }
  if (!a.ledger.empty()) append_ledger(a.ledger, report);
  std::cout << report.protocol << " " << report.metric << " " << report.value << "\n";
}

void cmd_probe(const EvalArgs& a) {
  FlatConfig c = a.cfg.resolve();
  if (a.seed) c.set("seed", std::to_string(*a.seed));
  const auto pc = ProbeConfig::from_config(c, ProbeConfig::preset(a.preset));
  const auto ds = load_dataset(a.dataset);
  auto enc = load_encoder(a, c, ds, pc.seed);
  const auto result = run_linear_probe(enc.model, ds, enc.spec, pc, enc.from);
  FlatConfig snap = pc.to_config();
  snap.set("dataset", a.dataset);
  snap.set("preset", a.preset);
  snap.set("pretrain_source", enc.from.pretrain_source);
  finish_report(a, result.report, snap);
}

void cmd_finetune(const EvalArgs& a) {
  FlatConfig c = a.cfg.resolve();
  if (a.seed) c.set("seed", std::to_string(*a.seed));
  const auto fc = FinetuneConfig::from_config(c, FinetuneConfig::preset(a.preset));
  const auto ds = load_dataset(a.dataset);
  auto enc = load_encoder(a, c, ds, fc.seed);
  const auto result = run_finetune(enc.model, ds, enc.spec, fc, enc.from);
  if (!a.save_model.empty()) {
    // The finetuned encoders serve as a supervised initialization elsewhere.
    Checkpoint info;
    info.model_config = enc.model.config();
    info.view_spec = enc.spec;
    info.epoch = fc.epochs;
    info.seed = fc.seed;
    info.n_pretrain = ds.indices(Split::train).size();
    info.source = "supervised";
    info.epoch_loss = result.report.train_loss;
    save_model_checkpoint(a.save_model, enc.model, info);
  }
  FlatConfig snap = fc.to_config();
  snap.set("dataset", a.dataset);
  snap.set("preset", a.preset);
  snap.set("pretrain_source", enc.from.pretrain_source);
  finish_report(a, result.report, snap);
}

// ---------------------------------------------------------------- report

struct ReportArgs {
  std::string ledger, out;
};

void cmd_report(const ReportArgs& a) {
  if (!fs::exists(a.ledger)) throw DataError("ledger not found: " + a.ledger);
  const auto rows = read_ledger(a.ledger);
  const auto groups = group_ledger(rows);
  write_report(a.out, groups);
  std::cout << rows.size() << " ledger rows in " << groups.size() << " groups\n";
}

void add_eval_options(CLI::App* cmd, EvalArgs& a, bool finetune) {
  add_config_options(cmd, a.cfg);
  cmd->add_option("--dataset", a.dataset, "Dataset root")->required();
  auto* ck = cmd->add_option("--checkpoint", a.checkpoint, "Pretrained checkpoint directory");
  auto* rnd = cmd->add_flag("--random-init", a.random_init, "Randomly initialized encoders");
  auto* sup = cmd->add_option("--supervised-init", a.supervised, "Checkpoint saved by finetune --save-model");
  ck->excludes(rnd)->excludes(sup);
  rnd->excludes(sup);
  cmd->add_option("--views", a.views, "View kind for --random-init")
      ->check(CLI::IsMember({"lab", "bands", "pca"}));
  cmd->add_option("--view-spec", a.view_spec, "View spec file for --random-init");
  cmd->add_option("--preset", a.preset, finetune ? "Recipe preset (default)" : "Recipe preset (default|aid|mlrsnet)");
  cmd->add_option("--seed", a.seed, "Root seed");
  cmd->add_option("--ledger", a.ledger, "Results ledger CSV to append to");
  cmd->add_option("--out", a.out, "Directory for report.json and the config snapshot");
  cmd->add_option("--task", a.task, "Task name recorded in the ledger");
  if (finetune) cmd->add_option("--save-model", a.save_model, "Save the finetuned model as a supervised checkpoint");
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const NumericError*>(&e)) return 3;
  if (dynamic_cast<const DataError*>(&e)) return 2;
  if (dynamic_cast<const fs::filesystem_error*>(&e)) return 2;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contrastive multiview coding for multispectral chips"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic multispectral dataset");
  add_config_options(s, synth.cfg);
  s->add_option("--out", synth.out, "Dataset root")->required();
  s->add_option("--seed", synth.seed, "Root seed");
  s->add_option("--chips", synth.chips, "Number of chips");
  s->add_flag("--multi-label", synth.multi_label, "Multi-label chips");

  PcaArgs pca;
  auto* p = app.add_subcommand("pca-fit", "Fit the PCA view spec on the training split");
  p->add_option("--dataset", pca.dataset, "Dataset root")->required();
  p->add_option("--pixels-per-chip", pca.pixels, "Random pixels sampled per chip")->capture_default_str();
  p->add_option("--seed", pca.seed, "Root seed");
  p->add_option("--out", pca.out, "View spec JSON path")->required();

  PretrainArgs pre;
  auto* t = app.add_subcommand("pretrain", "Contrastive pretraining");
  add_config_options(t, pre.cfg);
  t->add_option("--dataset", pre.dataset, "Dataset root")->required();
  t->add_option("--views", pre.views, "View kind")->check(CLI::IsMember({"lab", "bands", "pca"}))->capture_default_str();
  t->add_option("--view-spec", pre.view_spec, "View spec file (e.g. from pca-fit)");
  t->add_option("--epochs", pre.epochs, "Epochs");
  t->add_option("--k", pre.k, "Negatives per anchor");
  t->add_option("--tau", pre.tau, "Temperature");
  t->add_option("--positives", pre.positives, "Positive source")->check(CLI::IsMember({"fresh", "bank"}));
  t->add_option("--seed", pre.seed, "Root seed");
  t->add_flag("--resume", pre.resume, "Continue from the checkpoint in --out");
  t->add_option("--stop-after", pre.stop_after, "Stop once this many epochs are complete");
  t->add_option("--out", pre.out, "Checkpoint directory")->required();

  EvalArgs probe, fine;
  add_eval_options(app.add_subcommand("probe", "Linear probe on frozen encoders"), probe, false);
  add_eval_options(app.add_subcommand("finetune", "Finetune encoders and a linear head"), fine, true);

  ReportArgs rep;
  auto* r = app.add_subcommand("report", "Group ledger rows by pretraining source and size");
  r->add_option("--ledger", rep.ledger, "Results ledger CSV")->required();
  r->add_option("--out", rep.out, "Grouped CSV output")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    configure_threads_from_env();
    if (s->parsed()) cmd_synth(synth);
    if (p->parsed()) cmd_pca_fit(pca);
    if (t->parsed()) cmd_pretrain(pre);
    if (app.got_subcommand("probe")) cmd_probe(probe);
    if (app.got_subcommand("finetune")) cmd_finetune(fine);
    if (r->parsed()) cmd_report(rep);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return 0;
}
