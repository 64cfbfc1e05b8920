#pragma once

#include "stitch/graph.hpp"

namespace stitch {

// Rule-based reference fuser modeled on conservative production behavior:
// greedy maximal fusion of Light/ShapeOp producer chains, with Reduction and
// Expensive ops admitted only as the tail of a kernel (never as an interior
// producer). Every fusable vertex ends up in exactly one pattern, singletons
// included.
FusionPlan run_baseline(const CompGraph& g);

// kernels launched for a plan: patterns + unfused fusable singletons + opaque
int kernel_count(const CompGraph& g, const FusionPlan& plan);

}  // namespace stitch
