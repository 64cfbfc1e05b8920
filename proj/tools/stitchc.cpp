#include <CLI11.hpp>

#include "stitch/pipeline.hpp"

int main(int argc, char** argv) {
  stitch::RunConfig cfg;
  CLI::App app{"fusion stitching compiler driver"};
  app.add_option("--graph", cfg.graph_path, "input graph file")->required();
  app.add_option("--device-config", cfg.device_config_path,
                 "device config file (default: $STITCH_DEVICE_CONFIG or built-ins)");
  app.add_option("--k", cfg.k, "candidate patterns kept per vertex")->check(CLI::PositiveNumber);
  app.add_option("--beam-width", cfg.beam_width, "beam width for plan search")
      ->check(CLI::PositiveNumber);
  app.add_option("--out", cfg.output_dir, "output directory");
  app.add_flag("--emit-dot", cfg.emit_dot, "write graph.dot clustered by pattern");
  app.add_flag("--run-sim", cfg.run_sim, "execute plan vs reference on random inputs");
  app.add_flag("--run-baseline", cfg.run_baseline, "include baseline pattern detail in report");
  app.add_option("--seed", cfg.seed, "seed for simulated inputs");
  CLI11_PARSE(app, argc, argv);
  return stitch::run_pipeline(cfg);
}
