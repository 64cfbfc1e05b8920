#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "stitch/explorer.hpp"
#include "stitch/graph.hpp"
#include "stitch/planner.hpp"

namespace stitch {

struct RunConfig {
  std::string graph_path;
  std::string device_config_path;  // empty -> env var / built-in defaults
  int k = 3;
  int beam_width = 3;
  std::string output_dir = "out";
  bool emit_dot = false;
  bool run_sim = false;
  bool run_baseline = false;
  uint64_t seed = 0;
};

// Writes plan.json, kernels/*.stitch and report.txt into cfg.output_dir,
// plus graph.dot / sim_report.txt / baseline detail on request. Returns 0 on
// success; nonzero with module-tagged diagnostics on stderr otherwise.
int run_pipeline(const RunConfig& cfg);

// machine-readable dump; stable field order so identical inputs give
// byte-identical bytes
std::string plan_to_json(const CompGraph& g, const FusionPlan& plan,
                         const std::map<std::string, KernelPlan>& kernels, int stitched_kernels,
                         int baseline_kernels, uint64_t seed);

// DOT rendering with one cluster per fusion pattern
std::string graph_to_dot(const CompGraph& g, const FusionPlan& plan);

}  // namespace stitch
