#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stitch/device.hpp"
#include "stitch/graph.hpp"
#include "stitch/planner.hpp"

namespace stitch {

// fast score function: f = t_reduced_mem + t_reduced_calls - t_penalty
struct DeltaScore {
  double t_reduced_mem = 0.0;
  double t_reduced_calls = 0.0;
  double t_penalty = 0.0;
  double f = 0.0;
};

// top-k patterns rooted at one producer vertex
struct CandidatePatternSet {
  int vertex = -1;
  std::vector<FusionPattern> patterns;  // descending score
};

// machine model plus search-time memo state and instrumentation
struct CostModels {
  MachineModel machine;
  mutable int64_t delta_evaluate_calls = 0;
  mutable std::map<std::string, bool> probe_memo;
  mutable std::map<std::string, std::optional<KernelPlan>> plan_memo;

  // full plan, memoized by pattern key; nullptr when infeasible
  const KernelPlan* plan_for(const FusionPattern& p, const CompGraph& g) const;
};

DeltaScore delta_evaluate(const FusionPattern& p, const CompGraph& g, const CostModels& models);

// structural checks plus, for patterns stitching a reduction to in-pattern
// consumers, a memoized first-feasible planning probe
bool pattern_probe_ok(const FusionPattern& p, const CompGraph& g, const CostModels& models);

// approximate DP: recursive halving over consumers, (k+1)-way choice per
// consumer at the leaves, top-k x top-k unions at the merges
CandidatePatternSet pattern_reduction(int vertex,
                                      const std::vector<const CandidatePatternSet*>& consumers,
                                      int k, const CompGraph& g, const CostModels& models);

// per-vertex candidate sets, visiting the topological list from last to first
std::map<int, CandidatePatternSet> explore_candidates(const CompGraph& g, int k,
                                                      const CostModels& models);

// packs disconnected entry chains behind a virtual producer (kernel packing)
std::vector<FusionPattern> remote_fusion(const CompGraph& g,
                                         const std::map<int, CandidatePatternSet>& candidates,
                                         int k, const CostModels& models);

// width buffer sets over the topological vertex order; the empty plan is
// always among the returned candidates
std::vector<FusionPlan> beam_search_plan(const CompGraph& g,
                                         const std::map<int, CandidatePatternSet>& candidates,
                                         const std::vector<FusionPattern>& remote, int width,
                                         const CostModels& models);

// re-score candidates with the full latency evaluator over all kernels
// (fused, unfused-singleton, opaque) plus per-kernel launch overhead
FusionPlan select_final_plan(const std::vector<FusionPlan>& plans, const CompGraph& g,
                             const CostModels& models,
                             std::vector<std::string>* warnings = nullptr);

// end-to-end: candidates -> remote packing -> beam -> final selection
FusionPlan explore_fusion_plan(const CompGraph& g, const CostModels& models,
                               std::vector<std::string>* warnings = nullptr);

}  // namespace stitch
