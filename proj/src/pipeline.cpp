#include "stitch/pipeline.hpp"

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "stitch/baseline.hpp"
#include "stitch/parser.hpp"
#include "stitch/sim.hpp"

namespace stitch {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

std::string plan_to_json(const CompGraph& g, const FusionPlan& plan,
                         const std::map<std::string, KernelPlan>& kernels, int stitched_kernels,
                         int baseline_kernels, uint64_t seed) {
  json j;
  j["total_score"] = plan.total_score;
  j["stitched_kernels"] = stitched_kernels;
  j["baseline_kernels"] = baseline_kernels;
  j["seed"] = seed;
  j["patterns"] = json::array();
  for (const auto& p : plan.patterns) {
    json jp;
    jp["key"] = p.key();
    jp["producer"] = g.node(p.producer).name;
    jp["remote"] = p.remote;
    jp["score"] = p.score;
    json names = json::array();
    for (int v : p.vertices) names.push_back(g.node(v).name);
    jp["vertices"] = names;
    auto it = kernels.find(p.key());
    if (it != kernels.end()) {
      const KernelPlan& k = it->second;
      jp["launch"] = {{"grid", k.launch.grid}, {"block", k.launch.block}};
      jp["shmem_bytes"] = k.shmem_total();
      jp["regs_per_thread"] = k.regs_per_thread;
      jp["occupancy"] = k.occupancy_value;
      jp["estimated_cycles"] = k.estimated_cycles;
      json sched;
      for (const auto& [v, tpl] : k.per_op_schedule) sched[g.node(v).name] = tpl;
      jp["schedule"] = sched;
    }
    j["patterns"].push_back(jp);
  }
  return j.dump(2) + "\n";
}

std::string graph_to_dot(const CompGraph& g, const FusionPlan& plan) {
  std::ostringstream out;
  out << "digraph stitched {\n  rankdir=TB;\n  node [shape=box, fontname=\"monospace\"];\n";
  std::set<int> covered;
  for (size_t i = 0; i < plan.patterns.size(); ++i) {
    const auto& p = plan.patterns[i];
    out << "  subgraph cluster_" << i << " {\n    label=\"pattern " << i << "  f="
        << fmt(p.score) << "\";\n    style=rounded;\n";
    for (int v : p.vertices) {
      covered.insert(v);
      const OpNode& n = g.node(v);
      out << "    \"" << n.name << "\" [label=\"" << n.name << "\\n" << kind_name(n.kind)
          << " " << n.shape.str() << "\"];\n";
    }
    out << "  }\n";
  }
  for (const auto& n : g.nodes) {
    if (covered.count(n.id)) continue;
    out << "  \"" << n.name << "\" [label=\"" << n.name << "\\n" << kind_name(n.kind) << " "
        << n.shape.str() << "\"";
    if (!is_fusable(n) && classify_op(n) != OpClass::Opaque) out << ", style=dashed";
    out << "];\n";
  }
  for (const auto& n : g.nodes)
    for (int o : n.operands)
      out << "  \"" << g.node(o).name << "\" -> \"" << n.name << "\";\n";
  out << "}\n";
  return out.str();
}

int run_pipeline(const RunConfig& cfg) {
  CompGraph g;
  try {
    g = parse_graph(slurp(cfg.graph_path));
  } catch (const ParseError& e) {
    std::cerr << "[parser] " << e.code << ": " << e.what();
    if (e.line) std::cerr << " (line " << e.line << ")";
    std::cerr << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "[pipeline] " << e.what() << "\n";
    return 1;
  }

  try {
    CostModels models;
    models.machine = cfg.device_config_path.empty() ? machine_model_from_env()
                                                    : load_machine_model(cfg.device_config_path);
    models.machine.search.k = cfg.k;
    models.machine.search.beam_width = cfg.beam_width;

    std::vector<std::string> warnings;
    FusionPlan plan = explore_fusion_plan(g, models, &warnings);

    std::map<std::string, KernelPlan> kernels;
    for (const auto& p : plan.patterns) {
      const KernelPlan* k = models.plan_for(p, g);
      if (!k) {
        std::cerr << "[planner] no feasible kernel for pattern " << p.key() << "\n";
        return 1;
      }
      kernels[p.key()] = *k;
    }

    FusionPlan base = run_baseline(g);
    int stitched = kernel_count(g, plan);
    int baseline = kernel_count(g, base);

    fs::create_directories(fs::path(cfg.output_dir) / "kernels");
    spit(fs::path(cfg.output_dir) / "plan.json",
         plan_to_json(g, plan, kernels, stitched, baseline, cfg.seed));

    for (size_t i = 0; i < plan.patterns.size(); ++i) {
      const auto& p = plan.patterns[i];
      char idx[16];
      std::snprintf(idx, sizeof idx, "k%03zu", i);
      spit(fs::path(cfg.output_dir) / "kernels" /
               (std::string(idx) + "_" + g.node(p.producer).name + ".stitch"),
           emit_kernel_text(kernels.at(p.key())));
    }

    std::ostringstream rep;
    rep << "fusion report\n";
    rep << "graph: " << cfg.graph_path << "\n";
    rep << "nodes: " << g.num_nodes() << "  outputs: " << g.outputs.size() << "\n\n";
    rep << "patterns: " << plan.patterns.size() << "  total score: " << fmt(plan.total_score)
        << "\n";
    for (size_t i = 0; i < plan.patterns.size(); ++i) {
      const auto& p = plan.patterns[i];
      DeltaScore d = delta_evaluate(p, g, models);
      const KernelPlan& k = kernels.at(p.key());
      rep << "[" << i << "] pattern " << p.key() << (p.remote ? " (remote)" : "") << "\n";
      rep << "    vertices:";
      for (int v : p.vertices) rep << " " << g.node(v).name;
      rep << "\n";
      rep << "    f = " << fmt(d.f) << "  (mem " << fmt(d.t_reduced_mem) << " + calls "
          << fmt(d.t_reduced_calls) << " - penalty " << fmt(d.t_penalty) << ")\n";
      rep << "    launch grid " << k.launch.grid << " block " << k.launch.block << "  occupancy "
          << fmt(k.occupancy_value) << "  regs " << k.regs_per_thread << "  shmem "
          << k.shmem_total() << "\n";
      rep << "    estimated cycles " << fmt(k.estimated_cycles) << "\n";
      rep << "    schedule:";
      for (const auto& [v, tpl] : k.per_op_schedule) rep << " " << g.node(v).name << ":" << tpl;
      rep << "\n";
    }
    rep << "\nkernel counts: stitched " << stitched << "  baseline " << baseline << "\n";
    if (cfg.run_baseline) {
      rep << "\nbaseline patterns: " << base.patterns.size() << "\n";
      for (size_t i = 0; i < base.patterns.size(); ++i) {
        rep << "[" << i << "]";
        for (int v : base.patterns[i].vertices) rep << " " << g.node(v).name;
        rep << "\n";
      }
    }
    for (const auto& w : warnings) rep << "warning: " << w << "\n";
    spit(fs::path(cfg.output_dir) / "report.txt", rep.str());

    if (cfg.emit_dot)
      spit(fs::path(cfg.output_dir) / "graph.dot", graph_to_dot(g, plan));

    if (cfg.run_sim) {
      TensorMap inputs = random_inputs(g, cfg.seed);
      TensorMap want = eval_reference(g, inputs);
      TensorMap got = eval_plan(g, plan, kernels, inputs);
      CompareReport cr = compare(got, want, 1e-4, 1e-5);
      std::ostringstream sr;
      sr << "sim comparison: " << (cr.pass ? "pass" : "fail") << "\n";
      sr << "seed: " << cfg.seed << "\n";
      sr << "max abs err: " << fmt(cr.max_abs) << "\nmax rel err: " << fmt(cr.max_rel) << "\n";
      if (!cr.pass) sr << cr.message << "\n";
      spit(fs::path(cfg.output_dir) / "sim_report.txt", sr.str());
      if (!cr.pass) {
        std::cerr << "[sim] comparison failed: " << cr.message << "\n";
        return 2;
      }
    }
  } catch (const SimFault& e) {
    std::cerr << "[sim] " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "[pipeline] " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace stitch
