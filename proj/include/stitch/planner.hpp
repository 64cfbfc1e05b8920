#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stitch/device.hpp"
#include "stitch/graph.hpp"
#include "stitch/program.hpp"
#include "stitch/schedule.hpp"

namespace stitch {

// Partition of a pattern into schedule groups. Group roots are the sub-roots
// plus every externally visible output vertex; each vertex belongs to the
// group of the nearest root at-or-below it toward the outputs.
struct Grouping {
  std::vector<int> sub_roots;   // sorted; Reductions always, Expensive optional
  std::vector<int> roots;       // externally visible outputs, sorted
  std::map<int, int> group_of;  // vertex -> owning group root

  std::vector<int> group_roots() const;  // sub_roots ∪ roots, sorted
};

struct AllocationEntry {
  int64_t offset = 0;
  int64_t size = 0;
  int reused_from = -1;  // donor vertex, or -1 for a fresh extent
};

struct AllocationMap {
  std::map<int, AllocationEntry> slots;  // vertex -> placement
  int64_t total = 0;                     // peak footprint in bytes
};

// producer-group -> consumer-group boundary, kept for post-hoc rechecks
struct GroupBoundary {
  int producer = -1;
  int consumer_root = -1;
  std::string producer_template;
  std::string consumer_template;
};

struct KernelPlan {
  FusionPattern pattern;
  Grouping grouping;
  std::map<int, std::string> per_op_schedule;  // vertex -> template id
  LaunchDims launch;
  AllocationMap shmem_alloc;
  int64_t scratch_bytes = 0;  // block-reduction staging, after shmem_alloc
  int regs_per_thread = 0;
  double occupancy_value = 0.0;
  double estimated_cycles = 0.0;
  std::map<std::string, int64_t> instr_histogram;  // per thread
  std::vector<GroupBoundary> boundaries;
  StitchedProgram program;

  int64_t shmem_total() const { return shmem_alloc.total + scratch_bytes; }
};

// optional knobs for probing / property tests
struct PlanConstraints {
  std::optional<CompositionScheme> force_scheme;
  bool first_feasible = false;  // stop at the first workable candidate
};

// Cartesian enumeration over non-output Expensive vertices in/out of the
// sub-root set; Reductions always in. Capped; largest tensors enumerated
// first, the rest default to non-sub-root.
std::vector<Grouping> enumerate_groupings(const FusionPattern& p, const CompGraph& g,
                                          int cap = 64);

// every vertex inherits its group root's chosen template
std::map<int, std::string> propagate_schedules(const Grouping& grouping,
                                               const std::map<int, std::string>& root_choice,
                                               const CompGraph& g);

// block sizes {64..1024} with grid = ceil(max parallel extent / block),
// capped at 8 x sm_count
std::vector<LaunchDims> enumerate_launch_dims(const FusionPattern& p, const CompGraph& g,
                                              const DeviceSpec& dev);

// liveness-based reuse over a topological traversal. `requests` iterated in
// ascending vertex id; reuse requires every reader of the donor to be fully
// emitted before the requester. When `grouping` is given, readers are the
// group roots of the donor's consumers (matches kernel emission order).
AllocationMap allocate_shared_memory(const FusionPattern& p,
                                     const std::map<int, int64_t>& requests, const CompGraph& g,
                                     const Grouping* grouping = nullptr);

// max simultaneously-live thread-local values plus the configured overhead
int estimate_register_usage(const StitchedProgram& prog, int overhead);

// per-thread scheduled-op histogram: loop trip counts multiplied through,
// guards ignored (lockstep SIMT issue)
std::map<std::string, int64_t> count_instructions(const StitchedProgram& prog);

// exhaustive (grouping x schedules x launch dims) argmin under the latency
// evaluator; nullopt when no candidate survives locality/resource checks
std::optional<KernelPlan> plan_kernel(const FusionPattern& p, const CompGraph& g,
                                      const MachineModel& m,
                                      const PlanConstraints* constraints = nullptr);

std::string emit_kernel_text(const KernelPlan& k);

}  // namespace stitch
