// SPDX-License-Identifier: Apache-2.0
//
// Command-line surface: train | eval-bound | eval-nll | oracle-check |
// probe-variance | complete. Options come from a flat key-value config file
// plus flags; flags win. Exit codes: 0 success, 1 usage/config error,
// 2 check failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vimco/config.hpp"
#include "vimco/data.hpp"
#include "vimco/oracle.hpp"
#include "vimco/train.hpp"

namespace fs = std::filesystem;
using namespace vimco;

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Dataset construction shared by the data-facing commands.
// ---------------------------------------------------------------------------

Dataset build_dataset(const KvConfig& cfg) {
  const std::string source = cfg.get_str("data.source", "synthetic");
  if (source == "synthetic") {
    SplitSizes sizes{cfg.get_int("data.n-train", 2000), cfg.get_int("data.n-valid", 500),
                     cfg.get_int("data.n-test", 500)};
    SyntheticConfig sc;
    sc.rows = cfg.get_int("data.rows", 28);
    sc.cols = cfg.get_int("data.cols", 28);
    sc.n_top_patterns = cfg.get_int("data.prototypes", 5);
    sc.bottoms_per_top = cfg.get_int("data.bottoms-per-top", 2);
    sc.flip_prob = cfg.get_double("data.flip", 0.08);
    return synthetic_dataset(sizes, cfg.get_u32("data.seed", 1), sc);
  }
  if (source == "idx") {
    const std::string path = cfg.get_str("data.images", "");
    if (path.empty()) throw std::invalid_argument("data.images is required for idx input");
    const RawImages img = load_idx_images(path);
    const auto strategy = binarize_from_string(cfg.get_str("data.binarize", "threshold"));
    auto cases = binarize(img, strategy, cfg.get_u32("data.binarize-seed", 1));
    SplitSizes sizes{cfg.get_int("data.n-train", 50000), cfg.get_int("data.n-valid", 10000),
                     cfg.get_int("data.n-test", 0)};
    if (sizes.total() > img.n)
      throw std::invalid_argument("idx file has fewer cases than the configured split");
    cases.resize(static_cast<std::size_t>(sizes.total()));
    return make_dataset(std::move(cases), img.rows, img.cols, sizes);
  }
  if (source == "amat") {
    const int rows = cfg.get_int("data.rows", 28);
    const int cols = cfg.get_int("data.cols", 28);
    std::vector<BitVec> cases;
    SplitSizes sizes;
    for (const auto& [key, n] :
         std::vector<std::pair<std::string, int*>>{{"data.train", &sizes.train},
                                                   {"data.valid", &sizes.valid},
                                                   {"data.test", &sizes.test}}) {
      const std::string path = cfg.get_str(key, "");
      if (path.empty()) continue;
      auto part = load_amat(path);
      *n = static_cast<int>(part.size());
      cases.insert(cases.end(), part.begin(), part.end());
    }
    if (cases.empty()) throw std::invalid_argument("amat input needs at least data.train");
    return make_dataset(std::move(cases), rows, cols, sizes);
  }
  throw std::invalid_argument("unknown data.source: " + source);
}

TrainConfig train_config_from(const KvConfig& cfg) {
  TrainConfig tc;
  tc.estimator = estimator_from_string(cfg.get_str("train.estimator", "vimco"));
  tc.k = cfg.get_int("train.k", 5);
  tc.lr = cfg.get_double("train.lr", 1e-3);
  tc.minibatch = cfg.get_int("train.minibatch", 24);
  tc.epochs = cfg.get_int("train.epochs", 10);
  tc.seed = cfg.get_u32("train.seed", 1);
  tc.mean_kind = mean_kind_from_string(cfg.get_str("train.mean", "geometric"));
  tc.mode = train_mode_from_string(cfg.get_str("train.mode", "generative"));
  tc.latent_sizes = cfg.get_ints("train.layers", {200});
  tc.sweep = cfg.get_doubles("train.sweep", {});
  tc.eval_every = cfg.get_int("train.eval-every", 0);
  tc.eval_draws = cfg.get_int("train.eval-draws", 1);
  tc.log_every = cfg.get_int("train.log-every", 50);
  tc.init_obs_bias = cfg.get_bool("train.init-obs-bias", true);
  tc.normalize_signal = cfg.get_bool("train.normalize-signal", true);
  tc.rws_sleep = cfg.get_bool("train.rws-sleep", false);
  tc.baseline_lr = cfg.get_double("train.baseline-lr", 0.0);
  tc.validate();
  return tc;
}

void write_resolved(const KvConfig& cfg, const fs::path& run_dir) {
  fs::create_directories(run_dir);
  std::ofstream out(run_dir / "config.resolved");
  out << cfg.resolved();
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

int cmd_train(const KvConfig& cfg, const std::string& out_dir) {
  const Dataset data = build_dataset(cfg);
  const TrainConfig base = train_config_from(cfg);
  std::vector<double> rates = base.sweep;
  const bool sweeping = !rates.empty();
  if (rates.empty()) rates.push_back(base.lr);

  for (double rate : rates) {
    TrainConfig tc = base;
    tc.lr = rate;
    tc.sweep.clear();
    KvConfig resolved = cfg;
    resolved.set("train.lr", fmt(rate));
    const fs::path run_dir =
        sweeping ? fs::path(out_dir) / ("lr-" + fmt(rate)) : fs::path(out_dir);
    write_resolved(resolved, run_dir);
    MetricsLog log;
    Trainer trainer(tc, data);
    const auto result = trainer.run(log, run_dir.string());
    std::printf("run %s: best validation bound %s at step %ld\n", run_dir.string().c_str(),
                fmt(result.best_val_bound).c_str(), result.best_step);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// eval-bound / eval-nll
// ---------------------------------------------------------------------------

struct EvalData {
  std::vector<BitVec> obs, ctx;
};

EvalData eval_views(const CheckpointContents& c, const Dataset& data, const std::string& split) {
  EvalData v;
  if (c.mode == TrainMode::Generative) {
    auto s = data.split(split);
    v.obs.assign(s.begin(), s.end());
  } else {
    if (data.rows != c.rows || data.cols != c.cols)
      throw std::invalid_argument("dataset shape does not match the checkpoint");
    SopView sv = sop_view(data);
    const auto all = data.split(split);
    const std::size_t lo = static_cast<std::size_t>(all.data() - data.cases.data());
    for (std::size_t i = 0; i < all.size(); ++i) {
      v.obs.push_back(sv.observations[lo + i]);
      v.ctx.push_back(sv.contexts[lo + i]);
    }
  }
  return v;
}

int cmd_eval(const KvConfig& cfg, const std::string& out_path, bool nll) {
  const std::string ckpt = cfg.get_str("eval.checkpoint", "");
  if (ckpt.empty()) throw std::invalid_argument("--checkpoint is required");
  const CheckpointContents c = load_checkpoint(ckpt);
  const Dataset data = build_dataset(cfg);
  const std::string split = cfg.get_str("eval.split", nll ? "test" : "valid");
  const EvalData v = eval_views(c, data, split);
  const ScoringMode mode =
      c.mode == TrainMode::SopPrior ? ScoringMode::PriorProposal : ScoringMode::LearnedProposal;
  const SbnProposal no_proposal;
  ProposalEval q(c.proposal.has_value() ? *c.proposal : no_proposal, &c.centering);
  const ProposalEval* qp = c.proposal.has_value() ? &q : nullptr;
  Rng rng(cfg.get_u32("eval.seed", 1));

  std::string metric, value;
  if (nll) {
    const int samples = cfg.get_int("eval.samples", 1000);
    metric = "nll";
    value = fmt(eval_nll(c.model, qp, mode, v.obs, v.ctx, samples, rng));
    std::printf("nll %s (split=%s samples=%d)\n", value.c_str(), split.c_str(), samples);
  } else {
    const int k = cfg.get_int("eval.k", c.k);
    const int draws = cfg.get_int("eval.draws", 1);
    metric = "bound";
    value = fmt(eval_bound(c.model, qp, mode, v.obs, v.ctx, k, draws, rng));
    std::printf("bound %s (split=%s k=%d draws=%d)\n", value.c_str(), split.c_str(), k, draws);
  }
  if (!out_path.empty()) {
    std::ofstream out(out_path);
    out << "metric,split,value\n" << metric << ',' << split << ',' << value << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// oracle-check
// ---------------------------------------------------------------------------

int cmd_oracle_check(const KvConfig& cfg, const std::string& out_path) {
  OracleCheckConfig oc;
  oc.seed = cfg.get_u32("oracle.seed", 1);
  oc.instances = cfg.get_int("oracle.instances", 6);
  oc.budget.max_configs = static_cast<std::size_t>(cfg.get_double("oracle.max-configs", 1 << 20));
  oc.budget.max_tuples = static_cast<std::size_t>(cfg.get_double("oracle.max-tuples", 1000000));
  const auto rows = run_oracle_checks(oc);

  std::ostringstream csv;
  csv << "name,expected,actual,abs_err,rel_err,pass\n";
  int failures = 0;
  for (const auto& r : rows) {
    csv << r.name << ',' << fmt(r.expected) << ',' << fmt(r.actual) << ',' << fmt(r.abs_err)
        << ',' << fmt(r.rel_err) << ',' << (r.pass ? 1 : 0) << '\n';
    if (!r.pass) ++failures;
  }
  if (out_path.empty()) {
    std::cout << csv.str();
  } else {
    std::ofstream out(out_path);
    out << csv.str();
  }
  std::fprintf(stderr, "oracle-check: %zu checks, %d failed\n", rows.size(), failures);
  return failures == 0 ? 0 : 2;
}

// ---------------------------------------------------------------------------
// probe-variance
// ---------------------------------------------------------------------------

int cmd_probe_variance(const KvConfig& cfg, const std::string& out_path) {
  const std::vector<int> k_list = cfg.get_ints("probe.k-list", {2, 5, 10});
  const int instances = cfg.get_int("probe.instances", 8);
  const std::uint64_t seed = cfg.get_u32("probe.seed", 1);

  std::ostringstream csv;
  csv << "estimator,k,metric,step,value\n";

  // exact gradient variance over random enumerable instances, sized so the
  // K-tuple enumeration stays inside the default budget
  const OracleBudget budget;
  for (int k : k_list) {
    const int max_bits = std::max(
        1, static_cast<int>(std::log2(static_cast<double>(budget.max_tuples)) / k));
    std::map<std::string, double> var_sum;
    for (int inst = 0; inst < instances; ++inst) {
      auto pick = [&](std::uint64_t base) {
        for (std::uint64_t salt = 0;; ++salt) {
          auto toy = detail::random_oracle_toy(base + salt * 7919, false, false);
          int bits = 0;
          for (int s : toy.sizes) bits += s;
          if (bits <= max_bits) return toy;
        }
      };
      auto toy = pick(seed * 4096 + static_cast<std::uint64_t>(inst));
      ProposalEval q(toy.proposal);
      ExhaustiveTable table(toy.model, &q, ScoringMode::LearnedProposal, toy.x, nullptr, {});
      const BaselineVals bl{exact_bound(table, k), 0.0};
      var_sum["naive"] += estimator_moments(table, EstimatorKind::Naive, k).var_sum();
      var_sum["nvil"] += estimator_moments(table, EstimatorKind::Nvil, k, MeanKind::Geometric, &bl)
                             .var_sum();
      if (k >= 2)
        var_sum["vimco"] += estimator_moments(table, EstimatorKind::Vimco, k).var_sum();
      var_sum["rws-wake"] += estimator_moments(table, EstimatorKind::RwsWake, k).var_sum();
    }
    for (const auto& [name, total] : var_sum)
      csv << name << ',' << k << ",exact_theta_var_sum,," << fmt(total / instances) << '\n';
  }

  // empirical smoothed signal magnitude during a short training run
  const int steps = cfg.get_int("probe.steps", 400);
  if (steps > 0) {
    SyntheticConfig sc;
    sc.rows = cfg.get_int("data.rows", 28);
    sc.cols = cfg.get_int("data.cols", 28);
    const int n_cases = cfg.get_int("probe.cases", 960);
    Dataset data = synthetic_dataset({n_cases, std::max(n_cases / 8, 24), 0},
                                     cfg.get_u32("data.seed", 1), sc);
    for (EstimatorKind kind : {EstimatorKind::Vimco, EstimatorKind::Nvil}) {
      for (int k : k_list) {
        if (kind == EstimatorKind::Vimco && k < 2) continue;
        TrainConfig tc;
        tc.estimator = kind;
        tc.k = k;
        tc.lr = cfg.get_double("train.lr", 1e-3);
        tc.latent_sizes = cfg.get_ints("train.layers", {200});
        tc.minibatch = cfg.get_int("train.minibatch", 24);
        tc.seed = cfg.get_u32("train.seed", 1);
        const int steps_per_epoch = (data.sizes.train + tc.minibatch - 1) / tc.minibatch;
        tc.epochs = std::max(1, (steps + steps_per_epoch - 1) / steps_per_epoch);
        tc.log_every = cfg.get_int("train.log-every", 25);
        MetricsLog log;
        Trainer trainer(tc, data);
        trainer.run(log);
        for (const auto& r : log.rows)
          if (r.metric == "signal_rms")
            csv << to_string(kind) << ',' << k << ",signal_rms," << r.step << ','
                << fmt(r.value) << '\n';
      }
    }
  }

  if (out_path.empty()) {
    std::cout << csv.str();
  } else {
    std::ofstream out(out_path);
    out << csv.str();
  }
  return 0;
}

// ---------------------------------------------------------------------------
// complete
// ---------------------------------------------------------------------------

void write_pgm(const std::string& path, const std::vector<double>& pixels, int width,
               int height) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "P5\n" << width << " " << height << "\n255\n";
  for (double p : pixels) {
    const double clamped = std::min(1.0, std::max(0.0, p));
    const unsigned char b = static_cast<unsigned char>(std::lround(clamped * 255.0));
    out.write(reinterpret_cast<const char*>(&b), 1);
  }
}

int cmd_complete(const KvConfig& cfg, const std::string& out_path) {
  const std::string ckpt = cfg.get_str("complete.checkpoint", "");
  if (ckpt.empty()) throw std::invalid_argument("--checkpoint is required");
  const CheckpointContents c = load_checkpoint(ckpt);
  if (c.mode == TrainMode::Generative)
    throw std::invalid_argument("completions need a structured prediction checkpoint");
  const Dataset data = build_dataset(cfg);
  if (data.rows != c.rows || data.cols != c.cols)
    throw std::invalid_argument("dataset shape does not match the checkpoint");
  const int n_cases = cfg.get_int("complete.cases", 8);
  const int n_comp = cfg.get_int("complete.completions", 5);
  const std::string split = cfg.get_str("complete.split", "test");
  const auto cases = data.split(split);
  if (static_cast<int>(cases.size()) < n_cases)
    throw std::invalid_argument("split has fewer cases than requested");
  SopView sv = sop_view(data);
  const std::size_t lo = static_cast<std::size_t>(cases.data() - data.cases.data());

  const int rows = data.rows, cols = data.cols;
  const int half = rows / 2;
  const int width = n_cases * cols;
  const int height = (n_comp + 1) * rows;
  std::vector<double> grid(static_cast<std::size_t>(width) * height, 0.0);
  auto put_pixel = [&](int gr, int gc, double v) {
    grid[static_cast<std::size_t>(gr) * width + static_cast<std::size_t>(gc)] = v;
  };

  Rng root(cfg.get_u32("complete.seed", 1));
  for (int ci = 0; ci < n_cases; ++ci) {
    const BitVec& full = data.cases[lo + static_cast<std::size_t>(ci)];
    const BitVec& ctx = sv.contexts[lo + static_cast<std::size_t>(ci)];
    // top row of the grid: the original image
    for (int r = 0; r < rows; ++r)
      for (int col = 0; col < cols; ++col)
        put_pixel(r, ci * cols + col, full[static_cast<std::size_t>(r * cols + col)]);
    // remaining rows: original top half + model bottom-half means
    for (int comp = 1; comp <= n_comp; ++comp) {
      Rng rng = root.split(static_cast<std::uint64_t>(ci), static_cast<std::uint64_t>(comp));
      const PriorSample dream = sample_prior(c.model, rng, &ctx);
      for (int r = 0; r < half; ++r)
        for (int col = 0; col < cols; ++col)
          put_pixel(comp * rows + r, ci * cols + col,
                    ctx[static_cast<std::size_t>(r * cols + col)]);
      for (int r = half; r < rows; ++r)
        for (int col = 0; col < cols; ++col)
          put_pixel(comp * rows + r, ci * cols + col,
                    dream.obs_means[(r - half) * cols + col]);
    }
  }
  const std::string path = out_path.empty() ? "completions.pgm" : out_path;
  write_pgm(path, grid, width, height);
  std::printf("wrote %s (%d x %d)\n", path.c_str(), width, height);
  return 0;
}

// ---------------------------------------------------------------------------

struct FlagSpec {
  std::string flag;
  std::string key;
  std::string help;
};

void add_flags(CLI::App* sub, const std::vector<FlagSpec>& specs,
               std::map<std::string, std::string>& store) {
  for (const auto& spec : specs)
    sub->add_option_function<std::string>(
        spec.flag, [&store, key = spec.key](const std::string& v) { store[key] = v; }, spec.help);
}

const std::vector<FlagSpec> kDataFlags = {
    {"--data", "data.source", "dataset source: synthetic | idx | amat"},
    {"--data-seed", "data.seed", "seed for synthetic data / stochastic binarization"},
    {"--n-train", "data.n-train", "training cases"},
    {"--n-valid", "data.n-valid", "validation cases"},
    {"--n-test", "data.n-test", "test cases"},
    {"--rows", "data.rows", "image rows"},
    {"--cols", "data.cols", "image columns"},
    {"--images", "data.images", "idx image file"},
    {"--binarize", "data.binarize", "threshold | stochastic | fixed-file"},
    {"--amat-train", "data.train", "pre-binarized text matrix (train)"},
    {"--amat-valid", "data.valid", "pre-binarized text matrix (valid)"},
    {"--amat-test", "data.test", "pre-binarized text matrix (test)"},
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-sample variational training for sigmoid belief networks"};
  app.require_subcommand(1);

  std::string config_path, out_path;
  std::map<std::string, std::string> overrides;

  auto* train_cmd = app.add_subcommand("train", "train a model and keep the best checkpoint");
  auto* eval_bound_cmd = app.add_subcommand("eval-bound", "multi-sample bound on a split");
  auto* eval_nll_cmd = app.add_subcommand("eval-nll", "importance-sampled NLL on a split");
  auto* oracle_cmd = app.add_subcommand("oracle-check", "exact-enumeration verification suite");
  auto* probe_cmd = app.add_subcommand("probe-variance", "estimator variance and signal probes");
  auto* complete_cmd = app.add_subcommand("complete", "half-image completions from a checkpoint");

  for (auto* sub : {train_cmd, eval_bound_cmd, eval_nll_cmd, oracle_cmd, probe_cmd, complete_cmd}) {
    sub->add_option("--config", config_path, "key-value config file (flags override it)");
    sub->add_option("--out", out_path, "output path (run directory or file)");
  }
  for (auto* sub : {train_cmd, eval_bound_cmd, eval_nll_cmd, complete_cmd, probe_cmd})
    add_flags(sub, kDataFlags, overrides);

  add_flags(train_cmd,
            {{"--estimator", "train.estimator", "naive | nvil | vimco | rws-wake | rws-sleep"},
             {"--k", "train.k", "samples per case in the objective"},
             {"--lr", "train.lr", "learning rate"},
             {"--mode", "train.mode", "generative | sop-prior | sop-learned"},
             {"--epochs", "train.epochs", "training epochs"},
             {"--minibatch", "train.minibatch", "minibatch size"},
             {"--seed", "train.seed", "training seed"},
             {"--mean", "train.mean", "geometric | arithmetic | learned"},
             {"--layers", "train.layers", "latent layer sizes, deepest first (e.g. 200,200,200)"},
             {"--sweep", "train.sweep", "comma-separated learning rates; one run dir per rate"},
             {"--eval-every", "train.eval-every", "steps between validation scores (0 = per epoch)"},
             {"--eval-draws", "train.eval-draws", "sample-set draws per case when scoring"},
             {"--log-every", "train.log-every", "step cadence for metrics rows"},
             {"--init-obs-bias", "train.init-obs-bias", "seed observation bias from pixel means"},
             {"--normalize-signal", "train.normalize-signal", "variance-normalize the nvil signal"},
             {"--rws-sleep", "train.rws-sleep", "add sleep updates to the wake estimator"},
             {"--baseline-lr", "train.baseline-lr", "baseline net learning rate (0 = follow --lr)"}},
            overrides);

  for (auto* sub : {eval_bound_cmd, eval_nll_cmd})
    add_flags(sub,
              {{"--checkpoint", "eval.checkpoint", "checkpoint archive"},
               {"--split", "eval.split", "train | valid | test"},
               {"--seed", "eval.seed", "evaluation seed"},
               {"--k", "eval.k", "samples per case (eval-bound)"},
               {"--draws", "eval.draws", "sample-set draws per case (eval-bound)"},
               {"--samples", "eval.samples", "proposal samples per case (eval-nll)"}},
              overrides);

  add_flags(oracle_cmd,
            {{"--seed", "oracle.seed", "instance seed"},
             {"--instances", "oracle.instances", "number of random instances"},
             {"--max-configs", "oracle.max-configs", "latent configuration budget"},
             {"--max-tuples", "oracle.max-tuples", "tuple enumeration budget"}},
            overrides);

  add_flags(probe_cmd,
            {{"--k-list", "probe.k-list", "comma-separated sample counts"},
             {"--instances", "probe.instances", "enumerable instances per k"},
             {"--seed", "probe.seed", "instance seed"},
             {"--steps", "probe.steps", "training steps for the empirical probe (0 = skip)"},
             {"--cases", "probe.cases", "synthetic training cases for the empirical probe"},
             {"--lr", "train.lr", "learning rate for the empirical probe"},
             {"--layers", "train.layers", "latent layer sizes for the empirical probe"},
             {"--minibatch", "train.minibatch", "minibatch size for the empirical probe"},
             {"--seed-train", "train.seed", "training seed for the empirical probe"}},
            overrides);

  add_flags(complete_cmd,
            {{"--checkpoint", "complete.checkpoint", "structured prediction checkpoint"},
             {"--cases", "complete.cases", "number of contexts to complete"},
             {"--completions", "complete.completions", "completions per context"},
             {"--split", "complete.split", "split to draw contexts from"},
             {"--seed", "complete.seed", "completion seed"}},
            overrides);

  CLI11_PARSE(app, argc, argv);

  try {
    KvConfig cfg;
    if (!config_path.empty()) cfg = KvConfig::from_file(config_path);
    for (const auto& [k, v] : overrides) cfg.set(k, v);

    if (train_cmd->parsed()) return cmd_train(cfg, out_path.empty() ? "run" : out_path);
    if (eval_bound_cmd->parsed()) return cmd_eval(cfg, out_path, /*nll=*/false);
    if (eval_nll_cmd->parsed()) return cmd_eval(cfg, out_path, /*nll=*/true);
    if (oracle_cmd->parsed()) return cmd_oracle_check(cfg, out_path);
    if (probe_cmd->parsed()) return cmd_probe_variance(cfg, out_path);
    if (complete_cmd->parsed()) return cmd_complete(cfg, out_path);
  } catch (const OracleError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
