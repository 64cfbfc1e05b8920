#pragma once

#include <string>
#include <vector>

#include "stitch/device.hpp"
#include "stitch/expr.hpp"
#include "stitch/graph.hpp"

namespace stitch {

// One statement of the abstract stitched-kernel program. Statements execute
// in SIMT lockstep over all threads of the launch; guards mask side effects.
struct Stmt {
  enum Kind {
    Loop,        // loop <var> <trip>
    EndLoop,     // endloop
    ISet,        // iset r = expr           (index calculation)
    FConst,      // fconst r = value
    FMove,       // fmove r = s
    FOp,         // fop <kind> r = s...
    GLoad,       // gload r = tensor[expr]
    GStore,      // gstore tensor[expr] = s
    SLoad,       // sload r = shm[expr]     (byte offset)
    SStore,      // sstore shm[expr] = s
    RegSet,      // regset r[slot] = s      (thread-local register array)
    RegRead,     // regread r = s[slot]
    Shuffle,     // shuffle_from_lane0 r = s[slot]
    WarpReduce,  // warp_reduce <sum|max> r = s  (lane-ascending pairwise)
    Accum,       // accum <sum|max> r = s
    Barrier,     // barrier
    Comment,     // # text
  };
  Kind kind;
  std::string dst;
  ExprP dst_slot;
  std::vector<std::string> srcs;
  ExprP src_slot;
  std::string op;  // fop kind, or "sum"/"max"
  ExprP idx;       // memory index / loop trip count
  BExprP guard;
  std::string tensor;
  double cval = 0.0;
  std::string loop_var;
  std::string text;  // comments
};

struct TensorBinding {
  std::string name;
  TensorShape shape;
};

struct StitchedProgram {
  LaunchDims launch;
  int64_t shmem_bytes = 0;  // total per block, scratch included
  std::vector<TensorBinding> inputs;
  std::vector<TensorBinding> outputs;
  std::vector<Stmt> stmts;
};

std::string emit_program_text(const StitchedProgram& p);
StitchedProgram parse_program_text(const std::string& text);  // throws on bad grammar

}  // namespace stitch
