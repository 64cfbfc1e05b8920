#include "stitch/schedule.hpp"

#include <algorithm>
#include <stdexcept>

namespace stitch {

const char* scheme_name(CompositionScheme s) {
  switch (s) {
    case CompositionScheme::KernelPacking: return "packing";
    case CompositionScheme::ThreadComposition: return "thread";
    case CompositionScheme::WarpComposition: return "warp";
    case CompositionScheme::BlockComposition: return "block";
  }
  return "?";
}

const char* placement_name(OutputPlacement p) {
  switch (p) {
    case OutputPlacement::ThreadRegister: return "thread_register";
    case OutputPlacement::WarpLane0Register: return "warp_lane0_register";
    case OutputPlacement::SharedMemory: return "shared_memory";
    case OutputPlacement::GlobalMemory: return "global_memory";
  }
  return "?";
}

namespace {

ScheduleTemplate make_tpl(const char* id, OpClass cls, CompositionScheme sch,
                          OutputPlacement pl, ReuseScope rs, const char* mapping) {
  return ScheduleTemplate{id, cls, sch, pl, rs, mapping};
}

// Light/ShapeOp roots additionally get row-aligned warp/block mappings so a
// group rooted at one can iterate in the same row split as the reduction it
// reads; without these, any reduce -> elementwise boundary would force a
// single-block launch.
const std::vector<ScheduleTemplate>& light_tpls() {
  static const std::vector<ScheduleTemplate> t = {
      make_tpl("light_thread", OpClass::LightElementwise, CompositionScheme::ThreadComposition,
               OutputPlacement::ThreadRegister, ReuseScope::None,
               "element e -> thread e mod T, grid-stride loop"),
      make_tpl("light_warp", OpClass::LightElementwise, CompositionScheme::WarpComposition,
               OutputPlacement::WarpLane0Register, ReuseScope::Warp,
               "row r -> warp r mod W, lanes stride the row"),
      make_tpl("light_block", OpClass::LightElementwise, CompositionScheme::BlockComposition,
               OutputPlacement::SharedMemory, ReuseScope::Block,
               "row r -> block r mod G, threads stride the row"),
  };
  return t;
}

const std::vector<ScheduleTemplate>& expensive_tpls() {
  static const std::vector<ScheduleTemplate> t = {
      make_tpl("expensive_thread", OpClass::ExpensiveElementwise,
               CompositionScheme::ThreadComposition, OutputPlacement::ThreadRegister,
               ReuseScope::None, "element e -> thread e mod T, grid-stride loop"),
      make_tpl("expensive_warp", OpClass::ExpensiveElementwise,
               CompositionScheme::WarpComposition, OutputPlacement::WarpLane0Register,
               ReuseScope::Warp, "element e -> warp e mod W, computed by lane 0"),
      make_tpl("expensive_block", OpClass::ExpensiveElementwise,
               CompositionScheme::BlockComposition, OutputPlacement::SharedMemory,
               ReuseScope::Block, "element e -> block e mod G, stored to shared memory"),
  };
  return t;
}

const std::vector<ScheduleTemplate>& reduce_tpls() {
  static const std::vector<ScheduleTemplate> t = {
      make_tpl("reduce_thread", OpClass::Reduction, CompositionScheme::ThreadComposition,
               OutputPlacement::ThreadRegister, ReuseScope::None,
               "row r -> thread r mod T, serial in-row accumulation"),
      make_tpl("reduce_warp", OpClass::Reduction, CompositionScheme::WarpComposition,
               OutputPlacement::WarpLane0Register, ReuseScope::Warp,
               "row r -> warp r mod W, lanes stride the row, lane-0 result"),
      make_tpl("reduce_block", OpClass::Reduction, CompositionScheme::BlockComposition,
               OutputPlacement::SharedMemory, ReuseScope::Block,
               "row r -> block r mod G, threads stride the row, shared-memory result"),
  };
  return t;
}

const std::vector<ScheduleTemplate>& shape_tpls() {
  static const std::vector<ScheduleTemplate> t = {
      make_tpl("shape_thread", OpClass::ShapeOp, CompositionScheme::ThreadComposition,
               OutputPlacement::ThreadRegister, ReuseScope::None,
               "index rewrite in consumer's thread context"),
      make_tpl("shape_warp", OpClass::ShapeOp, CompositionScheme::WarpComposition,
               OutputPlacement::WarpLane0Register, ReuseScope::Warp,
               "row r -> warp r mod W, lanes stride the row"),
      make_tpl("shape_block", OpClass::ShapeOp, CompositionScheme::BlockComposition,
               OutputPlacement::SharedMemory, ReuseScope::Block,
               "row r -> block r mod G, threads stride the row"),
  };
  return t;
}

}  // namespace

const std::vector<ScheduleTemplate>& schedules_for(OpClass cls) {
  switch (cls) {
    case OpClass::LightElementwise: return light_tpls();
    case OpClass::ExpensiveElementwise: return expensive_tpls();
    case OpClass::Reduction: return reduce_tpls();
    case OpClass::ShapeOp: return shape_tpls();
    case OpClass::Opaque: break;
  }
  throw std::invalid_argument("no schedule templates for opaque ops");
}

const ScheduleTemplate& template_by_id(const std::string& id) {
  for (OpClass c : {OpClass::LightElementwise, OpClass::ExpensiveElementwise, OpClass::Reduction,
                    OpClass::ShapeOp})
    for (const auto& t : schedules_for(c))
      if (t.id == id) return t;
  throw std::invalid_argument("unknown schedule template: " + id);
}

int64_t reader_thread(const ScheduleTemplate& consumer, int64_t row, int64_t pos,
                      const LaunchDims& ld, const DeviceSpec& dev) {
  int64_t T = ld.total_threads();
  switch (consumer.scheme) {
    case CompositionScheme::KernelPacking:
    case CompositionScheme::ThreadComposition:
      if (consumer.op_class == OpClass::Reduction) return row % T;  // serial row
      return (row * 1 + pos) % T;  // row_len==1 for elementwise views used here
    case CompositionScheme::WarpComposition: {
      int64_t W = T / dev.warp_size;
      int64_t warp = row % W;
      if (consumer.op_class == OpClass::ExpensiveElementwise)
        return warp * dev.warp_size;  // lane 0 computes
      return warp * dev.warp_size + pos % dev.warp_size;
    }
    case CompositionScheme::BlockComposition: {
      int64_t blk = row % ld.grid;
      if (consumer.op_class == OpClass::ExpensiveElementwise) return blk * ld.block;
      return blk * ld.block + pos % ld.block;
    }
  }
  return 0;
}

int64_t producer_owner_thread(int64_t elem, const LaunchDims& ld) {
  return elem % ld.total_threads();
}
int64_t producer_owner_warp(int64_t elem, const LaunchDims& ld, const DeviceSpec& dev) {
  return elem % (ld.total_threads() / dev.warp_size);
}
int64_t producer_owner_block(int64_t elem, const LaunchDims& ld) { return elem % ld.grid; }

namespace {

// iterate read events, with deterministic stride sampling above the cap
template <typename F>
void for_each_event(const ConsumerIteration& it, int64_t cap, F&& f) {
  int64_t total = it.rows * it.row_len;
  int64_t stride = total <= cap ? 1 : (total + cap - 1) / cap;
  for (int64_t e = 0; e < total; e += stride) f(e / it.row_len, e % it.row_len);
  if (stride > 1) f(it.rows - 1, it.row_len - 1);  // always probe the tail
}

}  // namespace

LocalityRequirement required_locality(const ScheduleTemplate& producer,
                                      const ScheduleTemplate& consumer,
                                      const ConsumerIteration& it, const NeededElemFn& needed,
                                      const LaunchDims& ld, const DeviceSpec& dev,
                                      int64_t enumeration_cap) {
  bool thread_ok = true, warp_ok = true, block_ok = true;
  bool shared_producer = producer.output_placement == OutputPlacement::SharedMemory;
  for_each_event(it, enumeration_cap, [&](int64_t row, int64_t pos) {
    int64_t p = needed(row, pos);
    if (p < 0) return;
    int64_t t = reader_thread(consumer, row, pos, ld, dev);
    if (shared_producer) {
      // value lives in the owning block's shared memory; only block
      // containment is meaningful
      thread_ok = warp_ok = false;
      if (producer_owner_block(p, ld) != t / ld.block) block_ok = false;
      return;
    }
    // where the producer mapping places the value (lane-0 thread for warps)
    int64_t owner_t = producer.output_placement == OutputPlacement::WarpLane0Register
                          ? producer_owner_warp(p, ld, dev) * dev.warp_size
                          : producer_owner_thread(p, ld);
    if (owner_t != t) thread_ok = false;
    if (owner_t / dev.warp_size != t / dev.warp_size) warp_ok = false;
    if (owner_t / ld.block != t / ld.block) block_ok = false;
  });
  if (thread_ok) return {LocalityRequirement::Thread, "producer values are thread-local"};
  if (warp_ok) return {LocalityRequirement::Warp, "producer values stay within the warp"};
  if (block_ok) return {LocalityRequirement::Block, "producer values stay within the block"};
  return {LocalityRequirement::CrossBlock, "reads cross block boundaries"};
}

bool locality_compatible(const ScheduleTemplate& producer, const ScheduleTemplate& consumer,
                         const ConsumerIteration& it, const NeededElemFn& needed,
                         const LaunchDims& ld, const DeviceSpec& dev, int64_t enumeration_cap) {
  // Thread-composition boundary from a light producer means re-computation,
  // which is always legal.
  if (producer.op_class == OpClass::LightElementwise &&
      producer.scheme == CompositionScheme::ThreadComposition)
    return true;
  LocalityRequirement req =
      required_locality(producer, consumer, it, needed, ld, dev, enumeration_cap);
  switch (producer.output_placement) {
    case OutputPlacement::ThreadRegister: return req.scope == LocalityRequirement::Thread;
    case OutputPlacement::WarpLane0Register:
      return req.scope == LocalityRequirement::Thread || req.scope == LocalityRequirement::Warp;
    case OutputPlacement::SharedMemory: return req.scope == LocalityRequirement::Block;
    case OutputPlacement::GlobalMemory: return true;
  }
  return false;
}

ConsumerIteration row_view(const TensorShape& s) {
  ConsumerIteration it;
  if (s.rank() == 0) return it;
  it.row_len = s.dims.back();
  it.rows = s.element_count() / it.row_len;
  return it;
}

}  // namespace stitch
