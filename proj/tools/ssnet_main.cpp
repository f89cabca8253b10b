#include <CLI11.hpp>

#include <iostream>
#include <optional>

#include "ssnet/commands.hpp"

namespace {

using ssnet::cli::ExperimentConfig;

struct CommonFlags {
  std::string config_path;
  std::optional<uint64_t> seed_data, seed_init, seed_train;
  std::optional<std::string> scheme, preset, out_dir, precision;
  std::optional<size_t> max_epochs, batch_size, patience;
  std::optional<double> learning_rate;

  void attach(CLI::App* cmd, bool config_required = true) {
    auto* opt = cmd->add_option("--config", config_path, "experiment config file (JSON)");
    if (config_required) opt->required();
    cmd->add_option("--seed-data", seed_data, "data seed (undersample/split)");
    cmd->add_option("--seed-init", seed_init, "weight initialization seed");
    cmd->add_option("--seed-train", seed_train, "training seed (shuffle/dropout)");
    cmd->add_option("--scheme", scheme, "label scheme: three|five");
    cmd->add_option("--preset", preset, "undersample preset: sleep-edfx|isruc|none");
    cmd->add_option("--out", out_dir, "output directory");
    cmd->add_option("--precision", precision, "compute precision: f32|f64");
    cmd->add_option("--max-epochs", max_epochs, "training epoch limit");
    cmd->add_option("--batch-size", batch_size, "mini-batch size");
    cmd->add_option("--patience", patience, "early-stop patience (epochs)");
    cmd->add_option("--lr", learning_rate, "Adam learning rate");
  }

  ExperimentConfig load() const {
    nlohmann::json overrides = nlohmann::json::object();
    if (seed_data || seed_init || seed_train) {
      overrides["seeds"] = nlohmann::json::object();
      if (seed_data) overrides["seeds"]["data"] = *seed_data;
      if (seed_init) overrides["seeds"]["init"] = *seed_init;
      if (seed_train) overrides["seeds"]["train"] = *seed_train;
    }
    if (scheme) overrides["scheme"] = *scheme;
    if (preset) overrides["undersample"] = {{"preset", *preset}};
    if (out_dir) overrides["out_dir"] = *out_dir;
    if (precision) overrides["precision"] = *precision;
    if (max_epochs || batch_size || patience || learning_rate) {
      overrides["hyper"] = nlohmann::json::object();
      if (max_epochs) overrides["hyper"]["max_epochs"] = *max_epochs;
      if (batch_size) overrides["hyper"]["batch_size"] = *batch_size;
      if (patience) overrides["hyper"]["patience"] = *patience;
      if (learning_rate) overrides["hyper"]["learning_rate"] = *learning_rate;
    }
    return ExperimentConfig::load(config_path, overrides);
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SSNet sleep-stage classification pipeline"};
  app.require_subcommand(1);

  // inspect
  auto* inspect = app.add_subcommand("inspect", "dump the channel inventory of an EDF file");
  std::string inspect_path, inspect_format = "table";
  inspect->add_option("edf", inspect_path, "EDF/EDF+ file")->required();
  inspect->add_option("--format", inspect_format, "json|table");

  // prepare
  auto* prepare = app.add_subcommand("prepare", "epoch, normalize, undersample and split");
  CommonFlags prepare_flags;
  prepare_flags.attach(prepare);

  // synth
  auto* synth = app.add_subcommand("synth", "generate band-limited synthetic epochs");
  ssnet::cli::SynthArgs synth_args;
  std::vector<std::string> synth_stages;
  std::string synth_scheme = "five";
  synth->add_option("--stages", synth_stages, "stages to generate (default all five)");
  synth->add_option("--n-per-class", synth_args.n_per_class, "epochs per stage");
  synth->add_option("--channels", synth_args.n_channels, "channel count");
  synth->add_option("--rate", synth_args.sample_rate_hz, "sample rate in Hz");
  synth->add_option("--noise", synth_args.noise_sigma, "Gaussian noise sigma");
  synth->add_option("--seed-data", synth_args.seed, "generator seed");
  synth->add_option("--scheme", synth_scheme, "label scheme: three|five");
  synth->add_option("--out", synth_args.out_dir, "output shard directory")->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "train SSNet on prepared shards");
  CommonFlags train_flags;
  train_flags.attach(train_cmd);
  std::string resume_path;
  train_cmd->add_option("--resume", resume_path, "resume from a checkpoint file");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a model on test shards");
  std::string eval_model, eval_shards, eval_out = "eval";
  eval_cmd->add_option("--model", eval_model, "model or checkpoint file")->required();
  eval_cmd->add_option("--shards", eval_shards, "test shard directory")->required();
  eval_cmd->add_option("--out", eval_out, "report output directory");

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference checks for every layer");
  size_t gc_seeds = 20;
  bool gc_perturb = false;
  gradcheck->add_option("--seeds", gc_seeds, "random cases per layer");
  gradcheck->add_flag("--self-test-perturb", gc_perturb,
                      "perturb a backward pass to prove detection");

  // report
  auto* report = app.add_subcommand("report", "re-render a saved metrics.json");
  std::string report_path, report_format = "table";
  report->add_option("--metrics", report_path, "metrics.json from eval")->required();
  report->add_option("--format", report_format, "table|csv|json");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*inspect) {
      ssnet::cli::cmd_inspect(inspect_path, inspect_format, std::cout);
    } else if (*prepare) {
      ssnet::cli::cmd_prepare(prepare_flags.load(), std::cout);
    } else if (*synth) {
      if (!synth_stages.empty()) {
        synth_args.stages.clear();
        for (const std::string& s : synth_stages)
          synth_args.stages.push_back(ssnet::data::stage_from_string(s));
      }
      synth_args.scheme = ssnet::data::LabelScheme::from_name(synth_scheme);
      ssnet::cli::cmd_synth(synth_args, std::cout);
    } else if (*train_cmd) {
      ssnet::cli::cmd_train(train_flags.load(), resume_path, std::cout);
    } else if (*eval_cmd) {
      ssnet::cli::cmd_eval(eval_model, eval_shards, eval_out, std::cout);
    } else if (*gradcheck) {
      return ssnet::cli::cmd_gradcheck(gc_seeds, gc_perturb, std::cout);
    } else if (*report) {
      ssnet::cli::cmd_report(report_path, report_format, std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return ssnet::cli::exit_code_for(e);
  }
  return 0;
}
