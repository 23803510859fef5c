#include <iostream>

#include "CLI11.hpp"
#include "commands.hpp"

namespace {

using namespace mbu::cli;

void add_config(CLI::App* cmd, ConfigOptions& c) {
  cmd->add_option("--config", c.path, "config file (key = value)")->check(CLI::ExistingFile);
  cmd->add_option("--base", c.base, "scale the default schedule so the first encoder width is BASE");
  cmd->add_option("--extent", c.extent, "square image extent override");
}

void add_output(CLI::App* cmd, OutputOptions& o) {
  cmd->add_option("--format", o.format, "stdout table format")
      ->transform(CLI::CheckedTransformer(std::map<std::string, Format>{{"text", Format::Text}, {"csv", Format::Csv}}));
  cmd->add_option("--csv", o.csv_path, "also write the table as CSV to this path");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Masked-binary U-Net inference engine and planning toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "mbu 1.0");
  const int default_threads = mbu::default_workers();

  QuantizeOptions q;
  auto* quantize = app.add_subcommand("quantize", "quantize a weight bundle into an MBUN model file");
  quantize->add_option("--bundle", q.bundle_dir, "weight bundle directory")->required()->check(CLI::ExistingDirectory);
  add_config(quantize, q.config);
  quantize->add_option("--out", q.out_path, "output model file")->required();
  add_output(quantize, q.out);

  InferOptions inf;
  inf.threads = default_threads;
  auto* infer = app.add_subcommand("infer", "segment one PGM/PPM image");
  infer->add_option("--model", inf.model_path, "MBUN model file")->required()->check(CLI::ExistingFile);
  infer->add_option("--image", inf.image_path, "input image (P5 or P6)")->required()->check(CLI::ExistingFile);
  infer->add_option("--mask", inf.mask_path, "output mask (P5, 0/255)")->required();
  infer->add_option("--logits", inf.logits_path, "optional RTEN f64 logits output");
  infer->add_option("--threads", inf.threads, "worker threads")->check(CLI::PositiveNumber);

  ProfileOptions prof;
  auto* profile = app.add_subcommand("profile", "per-layer operation and parameter counts");
  add_config(profile, prof.config);
  add_output(profile, prof.out);

  PlanOptions plan;
  auto* plan_cmd = app.add_subcommand("plan", "rank layers by cost score and pick a masking plan");
  add_config(plan_cmd, plan.config);
  plan_cmd->add_option("--w-op", plan.w_op, "operation weight; the parameter weight is 1 - w_op");
  plan_cmd->add_option("-k,--k", plan.k, "number of layers to mask");
  plan_cmd->add_option("--normalization", plan.normalization, "count normalization")
      ->transform(CLI::CheckedTransformer(std::map<std::string, mbu::planner::Normalization>{
          {"min-max", mbu::planner::Normalization::MinMax},
          {"divide-by-max", mbu::planner::Normalization::DivideByMax}}));
  add_output(plan_cmd, plan.out);

  AnalyzeOptions an;
  auto* analyze = app.add_subcommand("analyze", "marginal gain of masking each layer from sweep results");
  analyze->add_option("--results", an.results_path, "CSV with header config_id,dice")->required()->check(CLI::ExistingFile);
  analyze->add_option("--max-masked", an.max_masked, "only use configs with fewer masked layers");
  add_output(analyze, an.out);

  VerifyOptions ver;
  auto* verify = app.add_subcommand("verify", "check engine against the integer oracle on random models");
  add_config(verify, ver.config);
  verify->add_option("--seed", ver.seed, "random seed");
  verify->add_option("--trials", ver.trials, "number of random models")->check(CLI::NonNegativeNumber);
  verify->add_option("--threads", ver.threads, "worker threads")->check(CLI::PositiveNumber);
  add_output(verify, ver.out);

  BenchOptions bench;
  auto* bench_cmd = app.add_subcommand("bench", "throughput of bit-packed versus reference convolution");
  bench_cmd->add_option("--model", bench.model_path, "also time full forward passes of this model")
      ->check(CLI::ExistingFile);
  bench_cmd->add_option("--channels", bench.channels, "input and output channels");
  bench_cmd->add_option("--extent", bench.extent, "square input extent");
  bench_cmd->add_option("--kernel", bench.kernel, "kernel size");
  bench_cmd->add_option("--reps", bench.reps, "repetitions (best is reported)");
  bench_cmd->add_option("--threads", bench.threads, "worker threads for the bit path")->check(CLI::PositiveNumber);
  bench_cmd->add_flag("!--no-oracle", bench.oracle, "skip the oracle convolution");
  add_output(bench_cmd, bench.out);

  SynthCmdOptions syn;
  auto* synth = app.add_subcommand("synth", "write a random weight bundle for a config");
  add_config(synth, syn.config);
  synth->add_option("--seed", syn.seed, "random seed");
  synth->add_option("--out", syn.out_dir, "output bundle directory")->required();
  synth->add_option("--write-config", syn.config_out, "also write the resolved config file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    std::ostream& os = std::cout;
    if (*quantize) return cmd_quantize(q, os);
    if (*infer) return cmd_infer(inf, os);
    if (*profile) return cmd_profile(prof, os);
    if (*plan_cmd) return cmd_plan(plan, os);
    if (*analyze) return cmd_analyze(an, os);
    if (*verify) return cmd_verify(ver, os);
    if (*bench_cmd) return cmd_bench(bench, os);
    if (*synth) return cmd_synth(syn, os);
  } catch (const mbu::Error& e) {
    std::cerr << "mbu: " << mbu::to_string(e.kind()) << ": " << e.what() << "\n";
    return static_cast<int>(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "mbu: internal error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitUsage;
}
