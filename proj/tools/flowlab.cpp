// flowlab: corpus -> pretrain -> finetune -> sample -> eval -> diagnose.
//
// Failures print one line "error: <category>: <message>" to stderr and exit nonzero.

#include "flowlab/commands.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace flowlab;

namespace {

struct ExitCode {
  const char* category;
  int code;
};

ExitCode classify(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return {"config", 2};
  if (dynamic_cast<const DataError*>(&e)) return {"data", 3};
  if (dynamic_cast<const VocabMismatch*>(&e)) return {"vocab_mismatch", 5};
  if (dynamic_cast<const CheckpointError*>(&e)) return {"checkpoint", 4};
  if (dynamic_cast<const SamplerMismatch*>(&e)) return {"sampler_mismatch", 6};
  if (dynamic_cast<const NumericError*>(&e)) return {"numeric", 7};
  if (dynamic_cast<const std::invalid_argument*>(&e) || dynamic_cast<const std::out_of_range*>(&e) ||
      dynamic_cast<const std::length_error*>(&e)) {
    return {"invalid_argument", 8};
  }
  if (dynamic_cast<const std::filesystem::filesystem_error*>(&e)) return {"io", 9};
  return {"internal", 1};
}

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flowlab: few-step flow matching for a continuous diffusion language model"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "run config JSON (defaults apply when omitted)");
    cmd->add_option("--seed", seed, "override the config seed");
  };

  std::string out, data_dir, log, teacher, checkpoint, input, references, trajectory, sampler_name;
  std::optional<int> steps, mbr;
  bool clamp = false, no_timing = false;
  std::vector<std::string> logs;

  auto* corpus = app.add_subcommand("corpus", "generate or ingest a corpus and write splits plus vocab");
  add_common(corpus);
  corpus->add_option("--out", out, "output directory")->required();

  auto* pre = app.add_subcommand("pretrain", "train the diffusion model");
  add_common(pre);
  pre->add_option("--data", data_dir, "corpus directory")->required();
  pre->add_option("--out", out, "checkpoint path")->required();
  pre->add_option("--log", log, "per-step training log (TSV)");

  auto* ft = app.add_subcommand("finetune", "fine-tune a diffusion checkpoint into a straight flow");
  add_common(ft);
  ft->add_option("--data", data_dir, "corpus directory")->required();
  ft->add_option("--teacher", teacher, "diffusion checkpoint")->required();
  ft->add_option("--out", out, "checkpoint path")->required();
  ft->add_option("--log", log, "per-step training log (TSV)");

  auto* smp = app.add_subcommand("sample", "generate targets for a JSONL file of sources");
  add_common(smp);
  smp->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  smp->add_option("--data", data_dir, "corpus directory holding vocab.txt")->required();
  smp->add_option("--input", input, "source JSONL (default: <data>/test.jsonl)");
  smp->add_option("--out", out, "output JSONL")->required();
  smp->add_option("--sampler", sampler_name, "flow-avg, flow-instant or diffusion")
      ->check(CLI::IsMember({"flow-avg", "flow-instant", "diffusion"}));
  smp->add_option("--steps", steps, "sampling steps");
  smp->add_option("--mbr", mbr, "candidates per source; the MBR choice goes to \"trg\"");
  smp->add_option("--record-trajectory", trajectory, "CSV of the first prompt's latent path");
  smp->add_flag("--clamp", clamp, "snap predicted latents to embeddings at every step");

  auto* ev = app.add_subcommand("eval", "score sampled outputs, sweeping MBR sizes");
  add_common(ev);
  ev->add_option("--input", input, "sample output JSONL")->required();
  ev->add_option("--references", references, "reference JSONL")->required();
  ev->add_option("--mbr", mbr, "largest MBR size (default: all candidates)");
  ev->add_option("--out", out, "metric CSV")->required();

  auto* diag = app.add_subcommand("diagnose", "quartile losses, grad norms, straightness and timing");
  add_common(diag);
  diag->add_option("--data", data_dir, "corpus directory");
  diag->add_option("--teacher", teacher, "diffusion checkpoint");
  diag->add_option("--checkpoint", checkpoint, "flow checkpoint");
  diag->add_option("--log", logs, "training log(s) for grad-norm summaries");
  diag->add_option("--out", out, "output directory")->required();
  diag->add_flag("--no-timing", no_timing, "skip the wall-clock table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: usage: " << one_line(e.what()) << '\n';
    return 64;
  }

  try {
    RunConfig rc = config_path.empty() ? parse_run_config("{}") : load_run_config(config_path);
    if (seed) set_run_seed(rc, *seed);

    if (corpus->parsed()) {
      cmd_corpus(rc, out, std::cout);
    } else if (pre->parsed()) {
      cmd_pretrain(rc, data_dir, out, log, std::cout);
    } else if (ft->parsed()) {
      cmd_finetune(rc, data_dir, teacher, out, log, std::cout);
    } else if (smp->parsed()) {
      SampleOptions o;
      o.checkpoint = checkpoint;
      o.data_dir = data_dir;
      o.input = input;
      o.out = out;
      o.trajectory = trajectory;
      if (!sampler_name.empty()) o.sampler = parse_sampler(sampler_name);
      o.steps = steps;
      o.mbr = mbr;
      if (clamp) o.clamp = true;
      cmd_sample(rc, o, std::cout);
    } else if (ev->parsed()) {
      cmd_eval(input, references, mbr, out, std::cout);
    } else if (diag->parsed()) {
      DiagnoseOptions o;
      o.data_dir = data_dir;
      o.teacher = teacher;
      o.checkpoint = checkpoint;
      for (const auto& l : logs) o.logs.emplace_back(l);
      o.out_dir = out;
      o.timing = !no_timing;
      if ((!o.teacher.empty() || !o.checkpoint.empty()) && o.data_dir.empty()) {
        throw ConfigError("diagnose needs --data when checkpoints are given");
      }
      cmd_diagnose(rc, o, std::cout);
    }
  } catch (const std::exception& e) {
    const ExitCode ec = classify(e);
    std::cerr << "error: " << ec.category << ": " << one_line(e.what()) << '\n';
    return ec.code;
  }
  return 0;
}
