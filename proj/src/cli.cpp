#include "fsam/cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <numbers>
#include <optional>

#include "fsam/checkpoint.hpp"
#include "fsam/config.hpp"
#include "fsam/eval.hpp"
#include "fsam/image_io.hpp"
#include "fsam/synth.hpp"
#include "fsam/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace fsam::cli {

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidConfig:
    case ErrorKind::MissingInput:
    case ErrorKind::MissingCheckpoint:
      return 2;
    default:
      return 1;
  }
}

fs::path resolve_out_dir(const std::string& flag, const std::string& configured, const std::string& command) {
  if (!flag.empty()) return flag;
  if (!configured.empty()) return configured;
  if (const char* env = std::getenv("FSAM_OUT_DIR"); env != nullptr && *env != '\0') return fs::path(env) / command;
  return fs::path("fsam_out") / command;
}

namespace {

void diagnose(std::string_view kind, std::string message) {
  for (char& c : message)
    if (c == '\n' || c == '\r') c = ' ';
  std::cerr << "error: kind=" << kind << " message=" << message << std::endl;
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec && fs::is_directory(dir), ErrorKind::Io, "cannot create output directory " + dir.string());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path.string());
  out << text;
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path.string());
}

void require_exists(const std::string& path, const std::string& what) {
  require(!path.empty(), ErrorKind::MissingInput, what + " is required");
  require(fs::exists(path), ErrorKind::MissingInput, what + " '" + path + "' does not exist");
}

json audit_json(const ParameterAudit& audit) {
  json j;
  j["frozen"] = audit.frozen;
  j["trainable"] = audit.trainable;
  j["groups"] = json::object();
  for (const auto& [group, count] : audit.counts) j["groups"][std::string(to_string(group))] = count;
  j["entries"] = json::array();
  for (const auto& e : audit.entries)
    j["entries"].push_back({{"name", e.name}, {"group", to_string(e.group)}, {"shape", {e.rows, e.cols}}});
  return j;
}

struct RunFlags {
  std::string config_file;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::optional<Index> max_epochs;
  std::vector<std::string> sets;
  std::string out;
};

void add_run_flags(CLI::App* cmd, RunFlags& flags) {
  cmd->add_option("--config", flags.config_file, "Flat key = value config file");
  cmd->add_option("--preset", flags.preset, "Named preset")->check(CLI::IsMember(preset_names()));
  cmd->add_option("--seed", flags.seed, "Overrides the config seed");
  cmd->add_option("--max-epochs", flags.max_epochs, "Overrides max_epochs (early stop is clamped to it)");
  cmd->add_option("--set", flags.sets, "Extra key=value override, repeatable");
  cmd->add_option("--out", flags.out, "Output directory");
}

std::vector<ConfigEntry> override_entries(const std::vector<std::string>& sets) {
  std::vector<ConfigEntry> entries;
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    require(eq != std::string::npos && eq > 0, ErrorKind::InvalidConfig, "--set expects key=value, got '" + s + "'");
    ConfigEntry e;
    e.key = s.substr(0, eq);
    while (!e.key.empty() && e.key.back() == ' ') e.key.pop_back();
    e.value = parse_config_value(s.substr(eq + 1));
    entries.push_back(std::move(e));
  }
  return entries;
}

RunConfig resolve_run(const RunFlags& flags) {
  std::vector<ConfigEntry> entries;
  if (!flags.config_file.empty()) {
    require_exists(flags.config_file, "config file");
    entries = parse_config_text(read_text_file(flags.config_file));
  }
  RunConfig config = resolve_run_config(entries, flags.preset);
  for (const auto& e : override_entries(flags.sets)) apply_setting(config, e.key, e.value);
  if (flags.seed) {
    config.model.seed = *flags.seed;
    config.model.vit.seed = *flags.seed;
  }
  if (flags.max_epochs) {
    config.model.max_epochs = *flags.max_epochs;
    config.model.early_stop_epoch = std::min(config.model.early_stop_epoch, *flags.max_epochs);
  }
  config.validate();
  return config;
}

int cmd_train(const RunFlags& flags, const std::string& data_flag, const std::string& source_flag) {
  RunConfig config = resolve_run(flags);
  if (!data_flag.empty()) config.data_root = data_flag;
  if (!source_flag.empty()) config.source_domain = source_flag;
  require_exists(config.data_root, "data_root");

  const fs::path out = resolve_out_dir(flags.out, config.out_dir, "train");
  make_dir(out);

  const DatasetManifest manifest = load_manifest(config.data_root);
  if (config.source_domain.empty()) config.source_domain = manifest.domains.begin()->first;
  require(manifest.domains.contains(config.source_domain), ErrorKind::MissingInput,
          "source domain '" + config.source_domain + "' not found under " + config.data_root);
  write_text(out / "resolved_config.txt", render_config(config));

  std::vector<Sample> samples;
  for (const auto& s : manifest.domains.at(config.source_domain))
    samples.push_back(preprocess(s, config.model.vit.image_size, config.model.vit.in_channels));
  auto [train_set, val_set] = split_source<Sample>(samples, config.split_ratio, config.model.seed);

  FSAMModel model(config.model);
  write_text(out / "audit.json", audit_json(model.audit()).dump(2) + "\n");

  std::ofstream metrics(out / "metrics.jsonl", std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(metrics), ErrorKind::Io, "cannot write metrics log");
  FitOptions options;
  options.source_domain = config.source_domain;
  options.on_record = [&metrics](const MetricsRecord& r) { metrics << metrics_line(r) << '\n' << std::flush; };
  const FitResult result = fit(model, train_set, val_set, options);

  save_checkpoint(out / "checkpoint_best.fsam", result.best);
  save_checkpoint(out / "checkpoint_last.fsam", result.last);
  std::cout << "trained source=" << config.source_domain << " epochs=" << result.epochs << " steps=" << result.steps
            << " best_val_dsc=" << result.best.best_val_dsc << " out=" << out.string() << '\n';
  return 0;
}

int cmd_eval(const std::vector<std::string>& checkpoints, const std::string& data_root,
             const std::vector<std::string>& targets, const std::string& out_flag) {
  require(!checkpoints.empty(), ErrorKind::MissingCheckpoint, "at least one --checkpoint is required");
  require_exists(data_root, "--data");
  for (const auto& path : checkpoints)
    require(fs::exists(path), ErrorKind::MissingCheckpoint, "checkpoint '" + path + "' does not exist");

  std::vector<std::unique_ptr<FSAMModel>> models;
  std::map<std::string, Predictor> predictors;
  for (const auto& path : checkpoints) {
    const Checkpoint ckpt = load_checkpoint(path);
    require(!ckpt.source_domain.empty(), ErrorKind::InvalidConfig, "checkpoint '" + path + "' has no source domain");
    require(!predictors.contains(ckpt.source_domain), ErrorKind::InvalidConfig,
            "two checkpoints for source domain '" + ckpt.source_domain + "'");
    models.push_back(model_from_checkpoint(ckpt));
    if (models.size() > 1) {
      const FSAMConfig& a = models.front()->config();
      const FSAMConfig& b = models.back()->config();
      require(a.vit.image_size == b.vit.image_size && a.vit.in_channels == b.vit.in_channels &&
                  a.num_classes == b.num_classes,
              ErrorKind::InvalidConfig, "checkpoints disagree on image size, channels or class count");
    }
    const FSAMModel* model = models.back().get();
    predictors[ckpt.source_domain] = [model](const Image& image) { return model->predict(image); };
  }
  const FSAMConfig& cfg = models.front()->config();
  const Dataset data = load_dataset(load_manifest(data_root), cfg.vit.image_size, cfg.vit.in_channels);
  for (const auto& t : targets)
    require(data.contains(t), ErrorKind::MissingInput, "target domain '" + t + "' not found under " + data_root);

  LeaveOneOutOptions options;
  options.targets = targets;
  const DSCReport report = leave_one_out_eval(predictors, data, cfg.num_classes, options);

  const fs::path out = resolve_out_dir(out_flag, {}, "eval");
  make_dir(out);
  write_text(out / "report.csv", report.to_csv());
  write_text(out / "report.json", report.to_json().dump(2) + "\n");
  for (const auto& row : report.rows) std::cout << "row " << row.source << " average=" << row.average << '\n';
  std::cout << "average " << report.average << '\n';
  return 0;
}

int cmd_synth(const std::string& spec_file, const std::vector<std::string>& sets,
              const std::optional<std::uint64_t>& seed, const std::string& out_flag) {
  std::vector<ConfigEntry> entries;
  if (!spec_file.empty()) {
    require_exists(spec_file, "spec file");
    entries = parse_config_text(read_text_file(spec_file));
  }
  for (auto& e : override_entries(sets)) entries.push_back(std::move(e));
  if (seed) {
    std::erase_if(entries, [](const ConfigEntry& e) { return e.key == "seed"; });
    ConfigEntry e;
    e.key = "seed";
    e.value = parse_config_value(std::to_string(*seed));
    entries.push_back(std::move(e));
  }
  // Later entries win; collapse duplicates from --set onto the file values.
  std::vector<ConfigEntry> merged;
  for (auto& e : entries) {
    std::erase_if(merged, [&](const ConfigEntry& m) { return m.key == e.key; });
    merged.push_back(std::move(e));
  }
  const SyntheticSpec spec = resolve_synthetic_spec(merged);

  const fs::path out = resolve_out_dir(out_flag, {}, "synth");
  make_dir(out);
  const DatasetManifest manifest = write_dataset(synth_domain_dataset(spec), out);
  write_text(out / "synth_spec.txt", render_config(spec));
  std::cout << "wrote " << manifest.num_samples() << " pairs in " << manifest.domains.size() << " domains to "
            << out.string() << '\n';
  return 0;
}

int cmd_inspect_spectrum(const std::string& image_path, const std::string& out_flag) {
  require_exists(image_path, "--image");
  const Image image = read_image(image_path);
  const Spectrum spec = fft2(image);
  const AmplitudeMap amp = amplitude(spec);
  const PhaseMap ph = phase(spec);
  const FrequencyInput freq = amplitude_preprocess(amp);

  const fs::path out = resolve_out_dir(out_flag, {}, "inspect");
  make_dir(out);
  write_image(out / "amplitude.png", freq.values);
  Image phase_img;
  for (const auto& p : ph.channels)
    phase_img.channels.push_back(((fftshift(p).array() + std::numbers::pi) / (2.0 * std::numbers::pi)).matrix());
  write_image(out / "phase.png", phase_img);

  json j;
  j["height"] = image.height();
  j["width"] = image.width();
  j["channels"] = json::array();
  const Index h = image.height(), w = image.width();
  for (std::size_t c = 0; c < amp.channels.size(); ++c) {
    const Plane<double> centered = fftshift(amp.channels[c]);
    const double peak = centered.maxCoeff();
    json bins = json::array();
    Index nonzero = 0;
    for (Index u = 0; u < h; ++u)
      for (Index v = 0; v < w; ++v)
        if (centered(u, v) > 1e-9 * std::max(peak, 1.0)) {
          ++nonzero;
          if (bins.size() < 64) bins.push_back({{"row", u}, {"col", v}, {"amplitude", centered(u, v)}});
        }
    j["channels"].push_back({{"log_min", freq.stats[c].log_min},
                             {"log_max", freq.stats[c].log_max},
                             {"degenerate", freq.stats[c].degenerate},
                             {"center", {h / 2, w / 2}},
                             {"nonzero_bins", nonzero},
                             {"bins", bins}});
  }
  write_text(out / "spectrum.json", j.dump(2) + "\n");
  std::cout << "spectrum " << h << "x" << w << " nonzero_bins=" << j["channels"][0]["nonzero_bins"] << '\n';
  return 0;
}

int cmd_inspect_prompt(const std::string& checkpoint, const std::string& image_path, const std::string& out_flag) {
  require(fs::exists(checkpoint), ErrorKind::MissingCheckpoint, "checkpoint '" + checkpoint + "' does not exist");
  require_exists(image_path, "--image");
  const auto model = model_from_checkpoint(load_checkpoint(checkpoint));
  const FSAMConfig& cfg = model->config();
  const Image image = resize_bilinear(convert_channels(read_image(image_path), cfg.vit.in_channels),
                                      cfg.vit.image_size, cfg.vit.image_size);
  const auto trace = model->trace(image);
  const auto& pt = trace.prompt;

  const fs::path out = resolve_out_dir(out_flag, {}, "inspect");
  make_dir(out);
  std::vector<double> alpha(pt.refined.alpha.data(), pt.refined.alpha.data() + pt.refined.alpha.size());
  std::vector<double> sim(pt.s.data(), pt.s.data() + pt.s.size());
  json j;
  j["alpha"] = alpha;
  j["alpha_sum"] = pt.refined.alpha.sum();
  j["similarity"] = sim;
  j["p_hat_norm"] = pt.refined.p_hat.norm();
  j["activation_min"] = pt.activation.values.minCoeff();
  j["activation_max"] = pt.activation.values.maxCoeff();
  write_text(out / "prompt.json", j.dump(2) + "\n");
  write_plane(out / "activation.png", ((pt.activation.values.array() + 1.0) / 2.0).matrix());
  std::cout << "prompt alpha_sum=" << j["alpha_sum"] << '\n';
  return 0;
}

int cmd_inspect_audit(const std::string& checkpoint, const RunFlags& flags) {
  std::unique_ptr<FSAMModel> model;
  if (!checkpoint.empty()) {
    require(fs::exists(checkpoint), ErrorKind::MissingCheckpoint, "checkpoint '" + checkpoint + "' does not exist");
    model = model_from_checkpoint(load_checkpoint(checkpoint));
  } else {
    model = build(resolve_run(flags).model);
  }
  const ParameterAudit audit = model->audit();
  const fs::path out = resolve_out_dir(flags.out, {}, "inspect");
  make_dir(out);
  write_text(out / "audit.json", audit_json(audit).dump(2) + "\n");
  std::cout << "audit frozen=" << audit.frozen << " trainable=" << audit.trainable << '\n';
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"FSAM desk-scale reference: train, evaluate and inspect"};
  app.require_subcommand(1);

  RunFlags train_flags;
  std::string train_data, train_source;
  auto* train = app.add_subcommand("train", "Fit on one source domain");
  add_run_flags(train, train_flags);
  train->add_option("--data", train_data, "Dataset root (overrides data_root)");
  train->add_option("--source", train_source, "Source domain (overrides source_domain)");

  std::vector<std::string> eval_ckpts, eval_targets;
  std::string eval_data, eval_out;
  auto* eval = app.add_subcommand("eval", "Leave-one-domain-out evaluation");
  eval->add_option("--checkpoint", eval_ckpts, "Checkpoint per source domain, repeatable");
  eval->add_option("--data", eval_data, "Dataset root");
  eval->add_option("--targets", eval_targets, "Target domains (default: all but the source)");
  eval->add_option("--out", eval_out, "Output directory");

  std::string synth_spec, synth_out;
  std::vector<std::string> synth_sets;
  std::optional<std::uint64_t> synth_seed;
  auto* synth = app.add_subcommand("synth", "Write a synthetic multi-domain corpus");
  synth->add_option("--spec", synth_spec, "Synthetic spec file (key = value)");
  synth->add_option("--config", synth_spec, "Alias of --spec");
  synth->add_option("--set", synth_sets, "Extra key=value override, repeatable");
  synth->add_option("--seed", synth_seed, "Overrides the spec seed");
  synth->add_option("--out", synth_out, "Output dataset root");

  auto* inspect = app.add_subcommand("inspect", "Write inspection artifacts");
  inspect->require_subcommand(1);
  std::string spec_image, spec_out;
  auto* spectrum = inspect->add_subcommand("spectrum", "Amplitude and phase of an image");
  spectrum->add_option("image,--image", spec_image, "Input PNG")->required();
  spectrum->add_option("--out", spec_out, "Output directory");
  std::string prompt_ckpt, prompt_image, prompt_out;
  auto* prompt = inspect->add_subcommand("prompt", "Memory-bank retrieval for one image");
  prompt->add_option("--checkpoint", prompt_ckpt, "Checkpoint")->required();
  prompt->add_option("image,--image", prompt_image, "Input PNG")->required();
  prompt->add_option("--out", prompt_out, "Output directory");
  std::string audit_ckpt;
  RunFlags audit_flags;
  auto* audit = inspect->add_subcommand("audit", "Frozen/trainable parameter partition");
  audit->add_option("--checkpoint", audit_ckpt, "Checkpoint (default: build from config)");
  add_run_flags(audit, audit_flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    diagnose("usage", e.what());
    return 2;
  }

  try {
    if (*train) return cmd_train(train_flags, train_data, train_source);
    if (*eval) return cmd_eval(eval_ckpts, eval_data, eval_targets, eval_out);
    if (*synth) return cmd_synth(synth_spec, synth_sets, synth_seed, synth_out);
    if (*spectrum) return cmd_inspect_spectrum(spec_image, spec_out);
    if (*prompt) return cmd_inspect_prompt(prompt_ckpt, prompt_image, prompt_out);
    if (*audit) return cmd_inspect_audit(audit_ckpt, audit_flags);
  } catch (const Error& e) {
    diagnose(to_string(e.kind()), e.what());
    return exit_code_for(e.kind());
  } catch (const nlohmann::json::exception& e) {
    diagnose("integrity", e.what());
    return 1;
  } catch (const std::exception& e) {
    diagnose("runtime", e.what());
    return 1;
  }
  return 2;
}

}  // namespace fsam::cli
