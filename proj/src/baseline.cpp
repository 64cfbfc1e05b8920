#include "stitch/baseline.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <vector>

namespace stitch {

namespace {

struct Kernels {
  std::map<int, int> parent;
  std::map<int, bool> has_tail;  // kernel already ends in a Reduction/Expensive

  int find(int v) {
    while (parent[v] != v) v = parent[v] = parent[parent[v]];
    return v;
  }
};

}  // namespace

FusionPlan run_baseline(const CompGraph& g) {
  Kernels k;
  std::map<int, std::vector<int>> members;
  for (const auto& n : g.nodes) {
    if (!is_fusable(n)) continue;
    k.parent[n.id] = n.id;
    OpClass c = classify_op(n);
    k.has_tail[n.id] = c == OpClass::Reduction || c == OpClass::ExpensiveElementwise;
    members[n.id] = {n.id};
  }

  auto consumers = g.consumer_lists();
  for (int u : topo_sort(g)) {
    const OpNode& nu = g.node(u);
    if (!is_fusable(nu)) continue;
    OpClass cu = classify_op(nu);
    if (cu != OpClass::LightElementwise && cu != OpClass::ShapeOp) continue;  // producers only
    for (int c : consumers[static_cast<size_t>(u)]) {
      if (!is_fusable(g.node(c))) continue;
      int ru = k.find(u), rc = k.find(c);
      if (ru == rc) continue;
      if (k.has_tail[ru]) continue;  // tail already closed this kernel
      OpClass cc = classify_op(g.node(c));
      bool c_is_tail = cc == OpClass::Reduction || cc == OpClass::ExpensiveElementwise;
      // a tail op may join only while still alone (it terminates the fusion)
      if (k.has_tail[rc] && !(c_is_tail && members[rc].size() == 1)) continue;
      FusionPattern merged;
      merged.vertices = members[ru];
      merged.vertices.insert(merged.vertices.end(), members[rc].begin(), members[rc].end());
      std::sort(merged.vertices.begin(), merged.vertices.end());
      if (contraction_creates_cycle(g, merged)) continue;
      k.parent[rc] = ru;
      k.has_tail[ru] = k.has_tail[ru] || k.has_tail[rc];
      members[ru].insert(members[ru].end(), members[rc].begin(), members[rc].end());
      members.erase(rc);
    }
  }

  FusionPlan plan;
  for (auto& [root, verts] : members) {
    FusionPattern p;
    std::sort(verts.begin(), verts.end());
    p.vertices = verts;
    p.producer = verts.front();
    plan.patterns.push_back(std::move(p));
  }
  std::sort(plan.patterns.begin(), plan.patterns.end(),
            [](const FusionPattern& a, const FusionPattern& b) {
              return a.vertices < b.vertices;
            });
  return plan;
}

int kernel_count(const CompGraph& g, const FusionPlan& plan) {
  std::set<int> covered;
  for (const auto& p : plan.patterns)
    covered.insert(p.vertices.begin(), p.vertices.end());
  int count = static_cast<int>(plan.patterns.size());
  for (const auto& n : g.nodes) {
    if (covered.count(n.id)) continue;
    if (is_fusable(n) || classify_op(n) == OpClass::Opaque) ++count;
  }
  return count;
}

}  // namespace stitch
