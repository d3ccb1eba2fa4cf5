// SPDX-License-Identifier: Apache-2.0
//
// The gldkit subcommands as plain functions. Each returns a process exit code:
//   0 success, 1 failed check or internal error, 2 bad input file, 3 bad
//   shape or parameter.
// Every file written to --out gets a sibling <out>.manifest.json.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "gld/gradcheck.hpp"
#include "gld/stability.hpp"
#include "gld/tensor.hpp"

namespace gld {

inline constexpr const char* kToolVersion = "0.1.0";

enum ExitCode : int { kExitOk = 0, kExitFailed = 1, kExitFormat = 2, kExitParameter = 3 };

struct GlobalOptions {
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::optional<DType> dtype;
  std::filesystem::path out;  // empty: standard output, no manifest
};

/// 64-bit FNV-1a of a byte string, as 16 lowercase hex digits.
std::string fnv1a_hex(std::span<const std::uint8_t> bytes);
std::string file_digest(const std::filesystem::path& path);

struct RunManifest {
  std::string command;
  nlohmann::json config;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::filesystem::path>> inputs;  // (role, path)

  nlohmann::json to_json() const;
};

std::filesystem::path manifest_path(const std::filesystem::path& out);

/// Writes `text` to g.out (or stdout) plus the manifest.
void emit(const GlobalOptions& g, const RunManifest& manifest, const std::string& text);

/// Runs `body` and maps library exceptions to exit codes, printing the
/// message to standard error.
int guarded(const char* command, const std::function<int()>& body);

// ---------------------------------------------------------------------------

struct ComputeOptions {
  std::filesystem::path pivot;
  std::vector<std::filesystem::path> sources;
  std::optional<std::filesystem::path> targets;
  std::optional<std::filesystem::path> config;
  std::optional<std::filesystem::path> grad_out;
};
int cmd_compute(const GlobalOptions& g, const ComputeOptions& o);

struct VerifyBoundOptions {
  std::size_t trials = 1000;
  std::size_t n_min = 2, n_max = 16;
  std::size_t m_min = 2, m_max = 16;
  bool inject_one_hot = false;
  double residual_tol = 1e-9;
};
int cmd_verify_bound(const GlobalOptions& g, const VerifyBoundOptions& o);

int cmd_gradcheck(const GlobalOptions& g, const GradcheckConfig& o);

struct LipschitzOptions {
  std::vector<std::size_t> dims = {128, 1024, 8192};
  std::vector<double> ranges = {5.0, 10.0};
  double lambda = 1.0;
  std::size_t samples = 1000;
};

struct LipschitzGrid {
  std::vector<LipschitzRecord> records;  // kinds vary fastest: gw, w1, kl
  bool bounds_hold = true;
  bool ordering_holds = true;
};
LipschitzGrid lipschitz_grid(const LipschitzOptions& o, std::uint64_t seed, std::size_t threads);
std::string lipschitz_csv(const LipschitzGrid& grid);
int cmd_lipschitz(const GlobalOptions& g, const LipschitzOptions& o);

struct BenchmarkOptions {
  std::vector<std::size_t> sorted_n;  // default 2^10 .. 2^17
  std::vector<std::size_t> quad_n = {8, 16, 32, 64};
  std::size_t repeats = 11;
  std::size_t length = 8;
  double min_batch_seconds = 0.05;
};

struct BenchmarkRow {
  std::string path;  // sorted | quadruple
  std::size_t n = 0;
  std::size_t repeats = 0;
  std::size_t iterations = 0;  // calls per timed batch
  double median_seconds = 0.0;
  double ratio = 0.0;  // against the previous n on the same path; 0 for the first
};
std::vector<BenchmarkRow> run_benchmark(const BenchmarkOptions& o, std::uint64_t seed);
std::string benchmark_csv(const std::vector<BenchmarkRow>& rows);
int cmd_benchmark(const GlobalOptions& g, const BenchmarkOptions& o);

struct GraphExportOptions {
  std::filesystem::path tensor;
  std::size_t sample = 0;
  std::size_t k = 10;
  std::string mode = "mask";
  std::string normalization = "raw";
  std::string format = "json";
};
int cmd_graph_export(const GlobalOptions& g, const GraphExportOptions& o);

int cmd_distribution_sweep(const GlobalOptions& g, const SweepConfig& o);

/// Writes the shipped fixture tensors and config into g.out (a directory).
int cmd_fixtures(const GlobalOptions& g);

/// Full command line, argv[0] included.
int run_cli(int argc, const char* const* argv);

}  // namespace gld
