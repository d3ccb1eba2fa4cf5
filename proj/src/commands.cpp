// SPDX-License-Identifier: Apache-2.0
#include "gld/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <iterator>
#include <memory>
#include <sstream>

#include <fmt/format.h>

#include "CLI11.hpp"

#include "gld/errors.hpp"
#include "gld/graph.hpp"
#include "gld/gw_oracle.hpp"
#include "gld/losses.hpp"
#include "gld/parallel.hpp"
#include "gld/random.hpp"

namespace gld {

namespace fs = std::filesystem;
using nlohmann::json;

std::string fnv1a_hex(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return fmt::format("{:016x}", h);
}

namespace {

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

std::string dump(const json& doc) { return doc.dump(2) + "\n"; }

}  // namespace

std::string file_digest(const fs::path& path) { return "fnv1a64:" + fnv1a_hex(read_bytes(path)); }

json RunManifest::to_json() const {
  json digests = json::array();
  for (const auto& [role, path] : inputs) {
    digests.push_back({{"role", role}, {"path", path.generic_string()}, {"digest", file_digest(path)}});
  }
  return {{"command", command},
          {"config", config},
          {"seed", seed},
          {"tool_version", kToolVersion},
          {"input_digests", digests}};
}

fs::path manifest_path(const fs::path& out) {
  fs::path p = out;
  p += ".manifest.json";
  return p;
}

void emit(const GlobalOptions& g, const RunManifest& manifest, const std::string& text) {
  if (g.out.empty()) {
    std::cout << text;
    return;
  }
  write_text(g.out, text);
  write_text(manifest_path(g.out), dump(manifest.to_json()));
}

int guarded(const char* command, const std::function<int()>& body) {
  try {
    return body();
  } catch (const FormatError& e) {
    std::cerr << command << ": format error: " << e.what() << "\n";
    return kExitFormat;
  } catch (const IoError& e) {
    std::cerr << command << ": io error: " << e.what() << "\n";
    return kExitFormat;
  } catch (const ValidationError& e) {
    std::cerr << command << ": invalid input: " << e.what() << "\n";
    return kExitFormat;
  } catch (const json::exception& e) {
    std::cerr << command << ": format error: " << e.what() << "\n";
    return kExitFormat;
  } catch (const ShapeError& e) {
    std::cerr << command << ": shape error: " << e.what() << "\n";
    return kExitParameter;
  } catch (const ParameterError& e) {
    std::cerr << command << ": parameter error: " << e.what() << "\n";
    return kExitParameter;
  } catch (const EmptySelectionError& e) {
    std::cerr << command << ": parameter error: " << e.what() << "\n";
    return kExitParameter;
  } catch (const std::exception& e) {
    std::cerr << command << ": internal error: " << e.what() << "\n";
    return kExitFailed;
  }
}

// ---------------------------------------------------------------------------
// compute

int cmd_compute(const GlobalOptions& g, const ComputeOptions& o) {
  if (o.sources.empty()) throw ParameterError("compute needs at least one --source");
  LossConfig cfg;
  RunManifest manifest{"compute", {}, g.seed, {}};
  if (o.config) {
    std::ifstream in(*o.config);
    if (!in) throw IoError("cannot open " + o.config->string());
    json doc;
    try {
      doc = json::parse(in);
    } catch (const json::parse_error& e) {
      throw FormatError(o.config->string() + ": " + e.what());
    }
    cfg = parse_loss_config(doc);
    manifest.inputs.push_back({"config", *o.config});
  }
  if (g.dtype) cfg.dtype = *g.dtype;

  const LogitTensor pivot = LogitTensor::from_tensor(read_tensor(o.pivot));
  manifest.inputs.push_back({"pivot", o.pivot});
  std::vector<LogitTensor> sources;
  for (const auto& path : o.sources) {
    sources.push_back(LogitTensor::from_tensor(read_tensor(path)));
    manifest.inputs.push_back({"source", path});
  }
  std::optional<Targets> targets;
  if (o.targets) {
    targets = Targets::from_tensor(read_tensor(*o.targets));
    manifest.inputs.push_back({"targets", *o.targets});
  }

  const FusionLoss result = infigfusion_loss(pivot, sources, targets, cfg);
  manifest.config = to_json(cfg);
  if (o.grad_out) {
    write_tensor(result.grad.to_tensor(), *o.grad_out);
    manifest.config["grad_out"] = o.grad_out->generic_string();
  }
  emit(g, manifest, dump(to_json(result.report)));
  return kExitOk;
}

// ---------------------------------------------------------------------------
// verify-bound

namespace {

std::string bound_row(const BoundCheckRecord& r, std::uint64_t seed) {
  return fmt::format("{},{},{},{},{},{},{},{}\n", r.n, r.m, r.gw_uniform, r.approx_uniform,
                     r.abs_err(), r.bound, r.identity_residual, seed);
}

}  // namespace

int cmd_verify_bound(const GlobalOptions& g, const VerifyBoundOptions& o) {
  if (o.n_min < 1 || o.m_min < 1 || o.n_min > o.n_max || o.m_min > o.m_max) {
    throw ParameterError("verify-bound needs 1 <= min <= max for n and m");
  }
  std::vector<BoundCheckRecord> records(o.trials);
  parallel_for(o.trials, g.threads, [&](std::size_t i) {
    Rng rng(g.seed + i);
    const std::size_t n = rng.between(o.n_min, o.n_max);
    const std::size_t m = rng.between(o.m_min, o.m_max);
    const Matrix c = random_row_stochastic(n, rng);
    const Matrix d = random_row_stochastic(m, rng);
    records[i] = check_bound(c, d);
  });
  std::string csv = "n,m,gw_uniform,approx_uniform,abs_err,bound,identity_residual,seed\n";
  bool ok = true;
  for (std::size_t i = 0; i < records.size(); ++i) {
    ok = ok && records[i].holds() && records[i].identity_residual <= o.residual_tol;
    csv += bound_row(records[i], g.seed + i);
  }
  if (o.inject_one_hot) {
    const BoundCheckRecord r = check_bound(one_hot_matrix(2), one_hot_matrix(2));
    ok = ok && r.holds() && r.identity_residual <= o.residual_tol;
    csv += bound_row(r, g.seed);
  }
  RunManifest manifest{"verify-bound",
                       {{"trials", o.trials},
                        {"n_range", {o.n_min, o.n_max}},
                        {"m_range", {o.m_min, o.m_max}},
                        {"inject_one_hot", o.inject_one_hot},
                        {"residual_tol", o.residual_tol}},
                       g.seed,
                       {}};
  emit(g, manifest, csv);
  if (!ok) std::cerr << "verify-bound: bound or identity violated\n";
  return ok ? kExitOk : kExitFailed;
}

// ---------------------------------------------------------------------------
// gradcheck

int cmd_gradcheck(const GlobalOptions& g, const GradcheckConfig& o) {
  const GradcheckReport report = run_gradcheck(o, g.seed, g.threads);
  json cfg = {{"instances", o.instances}, {"max_batch", o.max_batch},
              {"max_length", o.max_length}, {"max_vocab", o.max_vocab},
              {"max_k", o.max_k},           {"h", o.h},
              {"threshold", o.threshold},   {"tie_gap", o.tie_gap},
              {"logit_scale", o.logit_scale}, {"mode", to_string(o.mode)},
              {"corrupt_gradient", o.corrupt_gradient}};
  emit(g, RunManifest{"gradcheck", cfg, g.seed, {}}, gradcheck_csv(report));
  for (const auto& s : report.summaries) {
    std::cerr << fmt::format("gradcheck {}: checked {} excluded {} failed {} max_rel_err {:.3g}\n",
                             to_string(s.loss), s.checked, s.excluded, s.failures, s.max_rel_err);
  }
  return report.all_pass() ? kExitOk : kExitFailed;
}

// ---------------------------------------------------------------------------
// lipschitz

LipschitzGrid lipschitz_grid(const LipschitzOptions& o, std::uint64_t seed, std::size_t threads) {
  LipschitzGrid grid;
  for (std::size_t d : o.dims) {
    for (double r : o.ranges) {
      const LipschitzRecord gw =
          estimate_lipschitz(LossKind::GwAppendix, d, r, o.lambda, o.samples, seed, threads);
      const LipschitzRecord w1 =
          estimate_lipschitz(LossKind::W1Simplex, d, r, o.lambda, o.samples, seed, threads);
      const LipschitzRecord kl =
          estimate_lipschitz(LossKind::KlSoftmax, d, r, o.lambda, o.samples, seed, threads);
      grid.bounds_hold = grid.bounds_hold && gw.bound_holds() && kl.bound_holds();
      grid.ordering_holds = grid.ordering_holds &&
                            gw.empirical_max_grad_norm < w1.empirical_max_grad_norm &&
                            w1.empirical_max_grad_norm < kl.empirical_max_grad_norm;
      grid.records.push_back(gw);
      grid.records.push_back(w1);
      grid.records.push_back(kl);
    }
  }
  return grid;
}

std::string lipschitz_csv(const LipschitzGrid& grid) {
  std::string csv = "loss_kind,D,R,lambda,samples,seed,empirical_max,theoretical_bound\n";
  for (const auto& r : grid.records) {
    csv += fmt::format("{},{},{},{},{},{},{},{}\n", to_string(r.loss_kind), r.d, r.r, r.lambda,
                       r.samples, r.seed, r.empirical_max_grad_norm, r.theoretical_bound);
  }
  return csv;
}

int cmd_lipschitz(const GlobalOptions& g, const LipschitzOptions& o) {
  if (o.samples == 0) throw ParameterError("lipschitz needs --samples >= 1");
  const LipschitzGrid grid = lipschitz_grid(o, g.seed, g.threads);
  json cfg = {{"D", o.dims}, {"R", o.ranges}, {"lambda", o.lambda}, {"samples", o.samples}};
  emit(g, RunManifest{"lipschitz", cfg, g.seed, {}}, lipschitz_csv(grid));
  if (!grid.bounds_hold) std::cerr << "lipschitz: a gradient bound is violated\n";
  if (!grid.ordering_holds) std::cerr << "lipschitz: ordering gw < w1 < kl does not hold\n";
  return grid.bounds_hold && grid.ordering_holds ? kExitOk : kExitFailed;
}

// ---------------------------------------------------------------------------
// benchmark

namespace {

struct TimedCase {
  std::string path;
  std::size_t n = 0;
  std::function<void()> fn;
  std::size_t iters = 1;
  std::vector<double> samples;
};

// Each case runs in batches of `iters` calls, sized so a batch takes at least
// min_seconds. Repeats go round-robin over all cases, so slow drift of the
// machine hits every size alike.
void time_cases(std::vector<TimedCase>& cases, std::size_t repeats, double min_seconds) {
  using clock = std::chrono::steady_clock;
  auto batch = [](TimedCase& c) {
    const auto t0 = clock::now();
    for (std::size_t i = 0; i < c.iters; ++i) c.fn();
    return std::chrono::duration<double>(clock::now() - t0).count();
  };
  for (auto& c : cases) {
    while (batch(c) < min_seconds && c.iters < (std::size_t{1} << 24)) c.iters *= 2;
  }
  for (std::size_t r = 0; r < std::max<std::size_t>(repeats, 1); ++r)
    for (auto& c : cases) c.samples.push_back(batch(c) / static_cast<double>(c.iters));
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t mid = v.size() / 2;
  return v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  Matrix m(rows, cols);
  for (double& x : m.data()) x = rng.normal();
  return m;
}

volatile double g_sink = 0.0;

}  // namespace

std::vector<BenchmarkRow> run_benchmark(const BenchmarkOptions& o, std::uint64_t seed) {
  std::vector<std::size_t> sorted_n = o.sorted_n;
  if (sorted_n.empty())
    for (std::size_t e = 10; e <= 17; ++e) sorted_n.push_back(std::size_t{1} << e);
  if (o.length == 0) throw ParameterError("benchmark needs --length >= 1");

  std::vector<TimedCase> cases;
  for (std::size_t n : sorted_n) {
    if (n == 0) throw ParameterError("benchmark sizes must be positive");
    // A pool of distinct inputs, cycled, so branch predictors cannot learn
    // one fixed sort order at small n.
    Rng rng(seed + n);
    const std::size_t pool = std::max<std::size_t>(4, (std::size_t{1} << 16) / n);
    auto zp = std::make_shared<std::vector<Matrix>>();
    for (std::size_t i = 0; i < pool; ++i) zp->push_back(random_matrix(o.length, n, rng));
    auto sf = std::make_shared<NodeFeatures>(
        make_features(factored_row_means(random_matrix(o.length, n, rng))));
    auto next = std::make_shared<std::size_t>(0);
    cases.push_back({"sorted", n, [zp, sf, next] {
                       const NodeFeatures pf = make_features(factored_row_means((*zp)[*next]));
                       *next = (*next + 1) % zp->size();
                       g_sink = g_sink + gld_pairwise(*sf, pf).loss;
                     }, 1, {}});
  }
  for (std::size_t n : o.quad_n) {
    if (n == 0) throw ParameterError("benchmark sizes must be positive");
    Rng rng(seed + n);
    auto c = std::make_shared<Matrix>(gram_matrix(random_matrix(o.length, n, rng)));
    auto d = std::make_shared<Matrix>(gram_matrix(random_matrix(o.length, n, rng)));
    auto plan = std::make_shared<TransportPlan>(uniform_plan(n, n));
    cases.push_back({"quadruple", n, [c, d, plan] { g_sink = g_sink + gw_cost(*c, *d, *plan); }, 1, {}});
  }
  time_cases(cases, o.repeats, o.min_batch_seconds);

  std::vector<BenchmarkRow> rows;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const double m = median(cases[i].samples);
    double ratio = 0.0;
    if (i > 0 && cases[i - 1].path == cases[i].path) ratio = m / rows.back().median_seconds;
    rows.push_back({cases[i].path, cases[i].n, o.repeats, cases[i].iters, m, ratio});
  }
  return rows;
}

std::string benchmark_csv(const std::vector<BenchmarkRow>& rows) {
  std::string csv = "path,n,repeats,iterations,median_seconds,ratio\n";
  for (const auto& r : rows) {
    csv += fmt::format("{},{},{},{},{:.6e},{:.4f}\n", r.path, r.n, r.repeats, r.iterations,
                       r.median_seconds, r.ratio);
  }
  return csv;
}

int cmd_benchmark(const GlobalOptions& g, const BenchmarkOptions& o) {
  const auto rows = run_benchmark(o, g.seed);
  json cfg = {{"sorted_n", o.sorted_n}, {"quad_n", o.quad_n}, {"repeats", o.repeats},
              {"length", o.length},     {"min_batch_seconds", o.min_batch_seconds}};
  emit(g, RunManifest{"benchmark", cfg, g.seed, {}}, benchmark_csv(rows));
  return kExitOk;
}

// ---------------------------------------------------------------------------
// graph-export

int cmd_graph_export(const GlobalOptions& g, const GraphExportOptions& o) {
  const SparsifyMode mode = parse_sparsify_mode(o.mode);
  const Normalization norm = parse_normalization(o.normalization);
  if (o.format != "json" && o.format != "dot") {
    throw ParameterError("--format must be json or dot, got '" + o.format + "'");
  }
  const LogitTensor z = LogitTensor::from_tensor(read_tensor(o.tensor));
  const CoActivationGraph graph = build_graph(sparsify(z, o.sample, o.k, mode), norm);
  const NodeFeatures features = degree_features(graph);
  const std::size_t n = graph.size();

  std::string text;
  if (o.format == "json") {
    json c = json::array();
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = graph.c.row(i);
      c.push_back(std::vector<double>(row.begin(), row.end()));
    }
    text = dump({{"sample", o.sample},
                 {"k", o.k},
                 {"mode", to_string(mode)},
                 {"normalization", to_string(norm)},
                 {"node_ids", graph.node_ids},
                 {"c", c},
                 {"features", features.f}});
  } else {
    text = "graph coactivation {\n";
    for (std::size_t i = 0; i < n; ++i) {
      text += fmt::format("  v{} [degree={}];\n", graph.node_ids[i], features.f[i]);
    }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        text += fmt::format("  v{} -- v{} [weight={}];\n", graph.node_ids[i], graph.node_ids[j],
                            graph.c(i, j));
      }
    text += "}\n";
  }
  RunManifest manifest{"graph-export",
                       {{"sample", o.sample},
                        {"k", o.k},
                        {"mode", to_string(mode)},
                        {"normalization", to_string(norm)},
                        {"format", o.format}},
                       g.seed,
                       {{"tensor", o.tensor}}};
  emit(g, manifest, text);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// distribution-sweep

int cmd_distribution_sweep(const GlobalOptions& g, const SweepConfig& o) {
  const SweepReport rep = wd_gwd_distribution_sweep(o, g.seed, g.threads);
  json cfg = {{"pairs", o.pairs}, {"batch", o.batch}, {"length", o.length},
              {"vocab", o.vocab}, {"top_k", o.top_k}, {"steps", o.steps},
              {"lr", o.lr},       {"scale", o.scale}, {"bins", o.bins},
              {"mode", to_string(o.mode)}};
  emit(g, RunManifest{"distribution-sweep", cfg, g.seed, {}}, histogram_csv(rep));
  std::cerr << fmt::format(
      "distribution-sweep: mean uld {} -> {}, mean gld {} -> {} (delta {})\n",
      rep.mean_uld_before(), rep.mean_uld_after(), rep.mean_gld_before(), rep.mean_gld_after(),
      rep.mean_gld_after() - rep.mean_gld_before());
  return kExitOk;
}

// ---------------------------------------------------------------------------
// fixtures

namespace {

// Values on a 1/16 grid so every entry is exact in float32.
LogitTensor grid_logits(std::size_t b, std::size_t l, std::size_t d, Rng& rng, DType dtype) {
  std::vector<double> data(b * l * d);
  for (double& x : data) x = std::round(2.0 * rng.normal() * 16.0) / 16.0;
  return LogitTensor(b, l, d, dtype, std::move(data));
}

}  // namespace

int cmd_fixtures(const GlobalOptions& g) {
  if (g.out.empty()) throw ParameterError("fixtures needs --out <directory>");
  fs::create_directories(g.out);
  Rng rng(g.seed);
  const LogitTensor pivot = grid_logits(2, 4, 8, rng, DType::Float32);
  const LogitTensor source_a = grid_logits(2, 4, 8, rng, DType::Float32);
  const LogitTensor source_b = grid_logits(2, 4, 6, rng, DType::Float64);
  Targets targets;
  targets.batch = 2;
  targets.length = 4;
  for (std::size_t i = 0; i < 8; ++i) {
    targets.ids.push_back(static_cast<std::int64_t>(rng.index(8)));
    targets.mask.push_back(1);
  }
  targets.ids[3] = -1;
  targets.mask[3] = 0;

  write_tensor(pivot.to_tensor(), g.out / "pivot.lgt");
  write_tensor(source_a.to_tensor(), g.out / "source_a.lgt");
  write_tensor(source_b.to_tensor(), g.out / "source_b.lgt");
  write_tensor(targets.to_tensor(), g.out / "targets.lgt");
  LossConfig cfg;
  cfg.top_k = 4;
  write_text(g.out / "config.json", dump(to_json(cfg)));
  LossConfig zero;
  zero.lambda_sft = 0.0;
  write_text(g.out / "config_no_sft.json", dump(to_json(zero)));
  RunManifest manifest{"fixtures", {{"files", {"pivot.lgt", "source_a.lgt", "source_b.lgt",
                                               "targets.lgt", "config.json",
                                               "config_no_sft.json"}}},
                       g.seed, {}};
  write_text(g.out / "fixtures.manifest.json", dump(manifest.to_json()));
  return kExitOk;
}

// ---------------------------------------------------------------------------
// command line

namespace {

template <class T>
std::string join(const std::vector<T>& v) {
  return fmt::format("{}", fmt::join(v, ","));
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"gldkit: structure-aware distillation losses and their reference checks"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  GlobalOptions g;
  std::string dtype_text;
  std::string out_text;
  app.add_option("--seed", g.seed, "64-bit seed for every random draw")->default_val(0);
  app.add_option("--threads", g.threads, "worker threads")->default_val(1)
      ->check(CLI::PositiveNumber);
  app.add_option("--dtype", dtype_text, "gradient dtype")->check(CLI::IsMember({"f32", "f64"}));
  app.add_option("--out", out_text, "output file (directory for fixtures)");

  ComputeOptions compute;
  std::string pivot, targets, config, grad_out;
  std::vector<std::string> sources;
  auto* c_compute = app.add_subcommand("compute", "evaluate the fusion loss on tensor files");
  c_compute->add_option("--pivot", pivot, "pivot logits (LGT1)")->required();
  c_compute->add_option("--source", sources, "source logits (LGT1), repeatable")->required();
  c_compute->add_option("--targets", targets, "target ids (LGT1 [B, L], negative = masked)");
  c_compute->add_option("--config", config, "loss config JSON");
  c_compute->add_option("--grad-out", grad_out, "write the pivot gradient here (LGT1)");

  VerifyBoundOptions vb;
  auto* c_bound = app.add_subcommand("verify-bound", "uniform-plan error bound sweep");
  c_bound->add_option("--trials", vb.trials)->default_val(vb.trials);
  c_bound->add_option("--n-min", vb.n_min)->default_val(vb.n_min);
  c_bound->add_option("--n-max", vb.n_max)->default_val(vb.n_max);
  c_bound->add_option("--m-min", vb.m_min)->default_val(vb.m_min);
  c_bound->add_option("--m-max", vb.m_max)->default_val(vb.m_max);
  c_bound->add_flag("--inject-one-hot", vb.inject_one_hot, "append the one-hot 2x2 pair");
  c_bound->add_option("--residual-tol", vb.residual_tol)->default_val(vb.residual_tol);

  GradcheckConfig gc;
  std::string gc_mode = "mask";
  auto* c_grad = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  c_grad->add_option("--instances", gc.instances)->default_val(gc.instances);
  c_grad->add_option("--max-batch", gc.max_batch)->default_val(gc.max_batch);
  c_grad->add_option("--max-length", gc.max_length)->default_val(gc.max_length);
  c_grad->add_option("--max-vocab", gc.max_vocab)->default_val(gc.max_vocab);
  c_grad->add_option("--max-k", gc.max_k)->default_val(gc.max_k);
  c_grad->add_option("--step", gc.h, "finite-difference step")->default_val(gc.h);
  c_grad->add_option("--threshold", gc.threshold)->default_val(gc.threshold);
  c_grad->add_option("--mode", gc_mode)->check(CLI::IsMember({"mask", "gather"}));
  c_grad->add_flag("--corrupt-gradient", gc.corrupt_gradient, "test hook: break the gradient")
      ->group("");

  LipschitzOptions lp;
  auto* c_lip = app.add_subcommand("lipschitz", "empirical gradient-norm sweep");
  c_lip->add_option("--D", lp.dims, "vocab sizes")->delimiter(',')->default_str(join(lp.dims));
  c_lip->add_option("--R", lp.ranges, "logit ranges")->delimiter(',')->default_str(join(lp.ranges));
  c_lip->add_option("--lambda", lp.lambda)->default_val(lp.lambda);
  c_lip->add_option("--samples", lp.samples)->default_val(lp.samples);

  BenchmarkOptions bm;
  auto* c_bench = app.add_subcommand("benchmark", "sorted pipeline vs quadruple-loop timing");
  c_bench->add_option("--sorted-n", bm.sorted_n, "sizes for the sorted path")->delimiter(',');
  c_bench->add_option("--quad-n", bm.quad_n, "sizes for gw_cost")->delimiter(',')
      ->default_str(join(bm.quad_n));
  c_bench->add_option("--repeats", bm.repeats)->default_val(bm.repeats);
  c_bench->add_option("--length", bm.length)->default_val(bm.length);

  GraphExportOptions ge;
  std::string ge_tensor;
  auto* c_graph = app.add_subcommand("graph-export", "dump one sample's co-activation graph");
  c_graph->add_option("--tensor", ge_tensor)->required();
  c_graph->add_option("--sample", ge.sample)->default_val(ge.sample);
  c_graph->add_option("--k", ge.k)->default_val(ge.k);
  c_graph->add_option("--mode", ge.mode)->default_val(ge.mode);
  c_graph->add_option("--normalization", ge.normalization)->default_val(ge.normalization);
  c_graph->add_option("--format", ge.format)->default_val(ge.format);

  SweepConfig sw;
  std::string sw_mode = "mask";
  auto* c_sweep = app.add_subcommand("distribution-sweep", "ULD/GLD histograms before and after ULD descent");
  c_sweep->add_option("--pairs", sw.pairs)->default_val(sw.pairs);
  c_sweep->add_option("--batch", sw.batch)->default_val(sw.batch);
  c_sweep->add_option("--length", sw.length)->default_val(sw.length);
  c_sweep->add_option("--vocab", sw.vocab)->default_val(sw.vocab);
  c_sweep->add_option("--k", sw.top_k)->default_val(sw.top_k);
  c_sweep->add_option("--steps", sw.steps)->default_val(sw.steps);
  c_sweep->add_option("--lr", sw.lr)->default_val(sw.lr);
  c_sweep->add_option("--scale", sw.scale)->default_val(sw.scale);
  c_sweep->add_option("--bins", sw.bins)->default_val(sw.bins);
  c_sweep->add_option("--mode", sw_mode)->check(CLI::IsMember({"mask", "gather"}));

  auto* c_fix = app.add_subcommand("fixtures", "write the shipped test tensors");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitParameter;
  }

  if (!dtype_text.empty()) g.dtype = dtype_text == "f32" ? DType::Float32 : DType::Float64;
  g.out = out_text;

  const CLI::App* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();
  return guarded(name.c_str(), [&]() -> int {
    if (sub == c_compute) {
      compute.pivot = pivot;
      for (const auto& s : sources) compute.sources.emplace_back(s);
      if (!targets.empty()) compute.targets = fs::path(targets);
      if (!config.empty()) compute.config = fs::path(config);
      if (!grad_out.empty()) compute.grad_out = fs::path(grad_out);
      return cmd_compute(g, compute);
    }
    if (sub == c_bound) return cmd_verify_bound(g, vb);
    if (sub == c_grad) {
      gc.mode = parse_sparsify_mode(gc_mode);
      return cmd_gradcheck(g, gc);
    }
    if (sub == c_lip) return cmd_lipschitz(g, lp);
    if (sub == c_bench) return cmd_benchmark(g, bm);
    if (sub == c_graph) {
      ge.tensor = ge_tensor;
      return cmd_graph_export(g, ge);
    }
    if (sub == c_sweep) {
      sw.mode = parse_sparsify_mode(sw_mode);
      return cmd_distribution_sweep(g, sw);
    }
    if (sub == c_fix) return cmd_fixtures(g);
    return kExitFailed;
  });
}

}  // namespace gld
