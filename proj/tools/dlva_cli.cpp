// SPDX-License-Identifier: Apache-2.0
// dlva: command-line front end (gen-perms, gen-data, train, eval, gradcheck,
// ablate, config).
#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "dlva/dlva.hpp"

using namespace dlva;

namespace {

struct Overrides {
  std::string config_path;
  std::vector<std::string> sets;  // key=value

  RunConfig load() const {
    RunConfig rc = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) fail(ErrorKind::usage, "--set expects key=value, got '" + s + "'");
      set_run_key(rc, io::trim(s.substr(0, eq)), io::trim(s.substr(eq + 1)));
    }
    return rc;
  }
};

void add_overrides(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config_path, "Run config file (key = value lines)");
  cmd->add_option("--set", o.sets, "Override one config key, key=value (repeatable; wins over --config)");
}

PermutationSet load_perms_for(const std::string& path, const Corpus& corpus) {
  auto perms = load_permutation_set(path);
  if (perms.n != corpus.spec.n_patches())
    fail(ErrorKind::config, "permutation file '" + path + "' is over " + std::to_string(perms.n) + " positions, corpus images have " +
                                std::to_string(corpus.spec.n_patches()) + " patches");
  return perms;
}

void print_stats(const PermutationSet& s) {
  std::printf("n=%zu k=%zu objective=%s seed=%llu\nhamming min=%zu mean=%s max=%zu\n", s.n, s.size(), to_string(s.objective),
              static_cast<unsigned long long>(s.seed), s.stats.min, io::fmt_double(s.stats.mean).c_str(), s.stats.max);
}

int run_gen_perms(const Overrides& ov, std::optional<std::size_t> n, std::optional<std::size_t> k,
                  std::optional<std::string> objective, std::optional<std::size_t> pool, std::optional<std::uint64_t> seed,
                  const std::string& out) {
  RunConfig rc = ov.load();
  PermSpec p = rc.perms;
  if (n) p.n = *n;
  if (k) p.k = *k;
  if (objective) {
    try {
      p.objective = parse_objective(*objective);
    } catch (const Error& e) {
      fail(ErrorKind::usage, e.what());
    }
  }
  if (pool) p.pool = *pool;
  if (seed) p.seed = *seed;
  GenerateOptions g;
  g.pool = p.pool;
  const auto set = generate_set(p.n, p.k, p.objective, p.seed, g);
  save_permutation_set(out, set);
  print_stats(set);
  std::printf("wrote %s\n", out.c_str());
  return 0;
}

int run_gen_data(const Overrides& ov, const std::string& out) {
  const RunConfig rc = ov.load();
  validate(rc.corpus);
  const auto corpus = generate_corpus(rc.corpus);
  write_corpus(out, corpus);
  std::printf("samples=%zu train=%zu val=%zu\nwrote %s\n", corpus.train.size() + corpus.val.size(), corpus.train.size(),
              corpus.val.size(), out.c_str());
  return 0;
}

int run_train(const Overrides& ov, const std::string& stage_name, const std::string& resume_path) {
  const RunConfig rc = ov.load();
  const Stage stage = parse_stage(stage_name);
  const TrainConfig cfg = rc.stage_config(stage);
  validate(cfg);  // stage and value errors come before any file is read
  const Corpus corpus = read_corpus(cfg.corpus_path);
  std::optional<PermutationSet> perms;
  if (cfg.enable_image_order) perms = load_perms_for(cfg.perms_path, corpus);
  std::optional<Checkpoint> init, resume;
  if (!resume_path.empty()) resume = load_checkpoint(resume_path);
  else if (!cfg.init_checkpoint.empty()) init = load_checkpoint(cfg.init_checkpoint);
  const auto out = run_training(cfg, corpus, perms ? &*perms : nullptr, init ? &*init : nullptr, resume ? &*resume : nullptr,
                                &std::cout);
  std::printf("completed %zu/%zu steps\n", out.completed_steps, cfg.steps);
  if (!cfg.trace_path.empty()) std::printf("trace %s\n", cfg.trace_path.c_str());
  if (!cfg.out_checkpoint.empty()) std::printf("checkpoint %s\n", cfg.out_checkpoint.c_str());
  return 0;
}

int run_eval(const std::string& checkpoint, const std::string& corpus_path, const std::string& perms_path,
             const std::string& mode, bool blank, std::uint64_t seed, std::size_t limit, std::size_t draws,
             const std::string& out) {
  const auto ck = load_checkpoint(checkpoint);
  const Corpus corpus = read_corpus(corpus_path);
  std::optional<PermutationSet> perms;
  if (!perms_path.empty()) perms = load_perms_for(perms_path, corpus);
  EvalOptions o;
  o.mode = parse_order_mode(mode);
  o.blank = blank;
  o.seed = seed;
  o.limit = limit;
  o.draws_per_sample = draws;
  const auto report = evaluate(ck.params, corpus, perms ? &*perms : nullptr, o);
  const auto text = report.text();
  std::cout << text;
  if (!out.empty()) io::write_file(out, text);
  return 0;
}

int run_gradcheck(const Overrides& ov, std::size_t coords, const std::string& corrupt) {
  LossGradcheckOptions o;
  if (!ov.config_path.empty() || !ov.sets.empty()) {
    const RunConfig rc = ov.load();
    o.model = rc.train.model;
    o.corpus = rc.corpus;
    o.k = rc.perms.k;
    o.seed = rc.train.seed;
  }
  o.coords_per_tensor = coords;
  if (corrupt == "gelu") gradient_fault() = GradientFault::gelu;
  else if (corrupt == "matmul") gradient_fault() = GradientFault::matmul;
  else if (!corrupt.empty()) fail(ErrorKind::usage, "--corrupt-gradient takes gelu or matmul");
  const auto report = gradcheck_losses(o);
  gradient_fault() = GradientFault::none;
  constexpr double tol = 1e-4;
  for (const auto& [name, r] : report.terms)
    std::printf("%-6s max_rel_err=%.3e (%s) key_bias_abs_err=%.1e %s\n", name.c_str(), r.result.max_rel_error,
                r.worst_name.c_str(), r.invariant.max_abs_error, r.pass(tol) ? "ok" : "FAIL");
  std::printf("seconds=%.2f\n", report.seconds);
  if (!report.pass(tol)) fail(ErrorKind::numeric, "gradient check failed: worst relative error " + io::fmt_double(report.worst()));
  return 0;
}

int run_ablate(const Overrides& ov, const std::string& grid, const std::vector<std::string>& axes, bool finetune,
               std::size_t eval_limit, const std::string& out) {
  const RunConfig rc = ov.load();
  std::vector<AblationCell> cells;
  if (grid == "ladder") {
    cells = shuffle_ladder();
  } else if (grid == "factorial") {
    std::vector<AblationAxis> spec;
    for (const auto& a : axes) {
      const auto eq = a.find('=');
      if (eq == std::string::npos) fail(ErrorKind::usage, "--axis expects name=v1,v2");
      spec.push_back({a.substr(0, eq), detail::split_list(a.substr(eq + 1))});
    }
    cells = factorial(spec);
  } else {
    fail(ErrorKind::usage, "--grid takes ladder or factorial");
  }
  AblationBase base;
  base.pretrain = rc.stage_config(Stage::pretrain);
  if (finetune) base.finetune = rc.stage_config(Stage::finetune);
  base.eval.limit = eval_limit;
  validate(base.pretrain);
  if (base.finetune) validate(*base.finetune);
  const Corpus corpus = read_corpus(base.pretrain.corpus_path);
  const auto perms = load_perms_for(base.pretrain.perms_path, corpus);
  const auto rows = run_ablation_grid(base, cells, corpus, &perms, &std::cout);
  const auto csv = ablation_csv(rows);
  std::cout << csv;
  if (!out.empty()) io::write_file(out, csv);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dlva: shuffle-learning vision-language toy pipeline"};
  app.require_subcommand(1);
  app.footer("Exit codes: 0 success, 1 usage/config, 2 data/format, 3 numeric failure.\n"
             "Every config key and its default: dlva config --defaults");

  Overrides ov;

  auto* gp = app.add_subcommand("gen-perms", "Generate a permutation set file");
  std::optional<std::size_t> n, k, pool;
  std::optional<std::string> objective;
  std::optional<std::uint64_t> pseed;
  std::string perms_out = "perms.txt";
  add_overrides(gp, ov);
  gp->add_option("--n", n, "Positions per permutation (default 16)");
  gp->add_option("--k", k, "Set size (default 100)");
  gp->add_option("--objective", objective, "min_avg | max_avg | random (default min_avg)");
  gp->add_option("--pool", pool, "Candidates drawn per greedy step (default 100)");
  gp->add_option("--seed", pseed, "Seed (default 1)");
  gp->add_option("--out", perms_out, "Output file")->capture_default_str();

  auto* gd = app.add_subcommand("gen-data", "Generate the synthetic corpus file");
  std::string data_out = "corpus.bin";
  add_overrides(gd, ov);
  gd->add_option("--out", data_out, "Output file")->capture_default_str();

  auto* tr = app.add_subcommand("train", "Run one training stage");
  std::string stage = "pretrain", resume;
  add_overrides(tr, ov);
  tr->add_option("--stage", stage, "pretrain | finetune")->capture_default_str();
  tr->add_option("--resume", resume, "Continue from a checkpoint written by the same stage");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on the validation split");
  std::string ckpt, corpus_path = "corpus.bin", eval_perms, mode = "drt", eval_out = "metrics.txt";
  bool blank = false;
  std::uint64_t eval_seed = 1;
  std::size_t limit = 0, draws = 1;
  ev->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
  ev->add_option("--corpus", corpus_path, "Corpus file")->capture_default_str();
  ev->add_option("--perms", eval_perms, "Permutation file (omit to skip image-order metrics)");
  ev->add_option("--mode", mode, "drt | vis")->capture_default_str();
  ev->add_flag("--blank", blank, "Replace every evaluation image with a blank one");
  ev->add_option("--seed", eval_seed, "Evaluation seed")->capture_default_str();
  ev->add_option("--limit", limit, "Evaluate only the first N samples (0 = all)")->capture_default_str();
  ev->add_option("--draws", draws, "Image-order draws per sample")->capture_default_str();
  ev->add_option("--out", eval_out, "Report file (empty = stdout only)")->capture_default_str();

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check through every loss term");
  std::size_t coords = 6;
  std::string corrupt;
  add_overrides(gc, ov);
  gc->add_option("--coords", coords, "Sampled coordinates per parameter tensor (0 = all)")->capture_default_str();
  gc->add_option("--corrupt-gradient", corrupt, "Test fixture: break a backward rule (gelu | matmul)")->group("");

  auto* ab = app.add_subcommand("ablate", "Train and evaluate a grid of toggle settings");
  std::string grid = "ladder", ablate_out = "ablation.csv";
  std::vector<std::string> axes;
  bool with_finetune = false;
  std::size_t ablate_limit = 0;
  add_overrides(ab, ov);
  ab->add_option("--grid", grid, "ladder (seven shuffle/I2R settings) | factorial")->capture_default_str();
  ab->add_option("--axis", axes, "Factorial axis name=v1,v2 (text_order, image_order, finetune_image_order, i2r, order_mode, sum_tasks)");
  ab->add_flag("--finetune", with_finetune, "Run the finetune stage after pretraining in every cell");
  ab->add_option("--eval-limit", ablate_limit, "Validation samples per cell (0 = all)")->capture_default_str();
  ab->add_option("--out", ablate_out, "CSV file")->capture_default_str();

  auto* cf = app.add_subcommand("config", "Print the effective run config");
  bool defaults = false;
  add_overrides(cf, ov);
  cf->add_flag("--defaults", defaults, "Ignore --config and --set");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*gp) return run_gen_perms(ov, n, k, objective, pool, pseed, perms_out);
    if (*gd) return run_gen_data(ov, data_out);
    if (*tr) return run_train(ov, stage, resume);
    if (*ev) return run_eval(ckpt, corpus_path, eval_perms, mode, blank, eval_seed, limit, draws, eval_out);
    if (*gc) return run_gradcheck(ov, coords, corrupt);
    if (*ab) return run_ablate(ov, grid, axes, with_finetune, ablate_limit, ablate_out);
    if (*cf) {
      std::cout << serialize_run_config(defaults ? RunConfig{} : ov.load());
      return 0;
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}
