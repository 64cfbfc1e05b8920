#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "stitch/device.hpp"

namespace stitch {

MachineModel default_machine_model() {
  MachineModel m;
  // m.dev defaults are a V100-like profile (see docs/formats.md)
  auto& c = m.cpi.cycles;
  for (const char* k : {"add", "sub", "mul", "div", "max", "min"}) c[k] = 4.0;
  for (const char* k : {"exp", "tanh", "log", "rsqrt", "power"}) c[k] = 32.0;
  c["reduce_step"] = 8.0;
  c["shared_access"] = 30.0;
  c["shuffle"] = 5.0;
  c["index_calc"] = 4.0;
  // global access latency is carried by the memory model, not the CPI table
  m.memlat.curves[MemTransition::GlobalToRegister] = {{4096, 2200}, {1 << 20, 560000}};
  m.memlat.curves[MemTransition::GlobalToShared] = {{4096, 2000}, {1 << 20, 500000}};
  m.memlat.curves[MemTransition::SharedToRegister] = {{4096, 250}, {1 << 20, 64000}};
  return m;
}

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<MemLatencyModel::Point> parse_curve(const std::string& v, const std::string& key) {
  // "4096:2048, 1048576:524288"
  std::vector<MemLatencyModel::Point> pts;
  std::istringstream is(v);
  std::string item;
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    size_t colon = item.find(':');
    if (colon == std::string::npos)
      throw std::runtime_error("bad memlat point '" + item + "' for " + key);
    MemLatencyModel::Point p{std::stoll(item.substr(0, colon)), std::stod(item.substr(colon + 1))};
    if (p.bytes == 0) continue;  // (0,0) is implicit
    if (!pts.empty() && p.bytes <= pts.back().bytes)
      throw std::runtime_error("memlat breakpoints must be strictly increasing: " + key);
    if (!pts.empty() && p.cycles < pts.back().cycles)
      throw std::runtime_error("memlat curve must be monotone non-decreasing: " + key);
    pts.push_back(p);
  }
  if (pts.empty()) throw std::runtime_error("empty memlat curve: " + key);
  return pts;
}

}  // namespace

MachineModel load_machine_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open device config: " + path);
  MachineModel m = default_machine_model();
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[' && line.back() == ']') {
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    try {
      if (section == "device") {
        auto& d = m.dev;
        if (key == "sm_count") d.sm_count = std::stoi(val);
        else if (key == "max_warps_per_sm") d.max_warps_per_sm = std::stoi(val);
        else if (key == "max_threads_per_block") d.max_threads_per_block = std::stoi(val);
        else if (key == "warp_size") d.warp_size = std::stoi(val);
        else if (key == "shared_mem_per_sm") d.shared_mem_per_sm = std::stoll(val);
        else if (key == "shared_mem_per_block_limit") d.shared_mem_per_block_limit = std::stoll(val);
        else if (key == "registers_per_sm") d.registers_per_sm = std::stoll(val);
        else if (key == "max_blocks_per_sm") d.max_blocks_per_sm = std::stoi(val);
        else if (key == "global_mem_bandwidth") d.global_mem_bandwidth = std::stoll(val);
        else throw std::runtime_error("unknown device key: " + key);
      } else if (section == "cpi") {
        double v = std::stod(val);
        if (v <= 0) throw std::runtime_error("CPI must be > 0: " + key);
        m.cpi.cycles[key] = v;
      } else if (section == "memlat") {
        if (key == "global_to_register")
          m.memlat.curves[MemTransition::GlobalToRegister] = parse_curve(val, key);
        else if (key == "global_to_shared")
          m.memlat.curves[MemTransition::GlobalToShared] = parse_curve(val, key);
        else if (key == "shared_to_register")
          m.memlat.curves[MemTransition::SharedToRegister] = parse_curve(val, key);
        else throw std::runtime_error("unknown memlat key: " + key);
      } else if (section == "costs") {
        auto& c = m.costs;
        if (key == "context_switch_cycles") c.context_switch_cycles = std::stod(val);
        else if (key == "register_overhead") c.register_overhead = std::stoi(val);
        else if (key == "delta_fixed_registers") c.delta_fixed_registers = std::stoi(val);
        else if (key == "opaque_kernel_cycles") c.opaque_kernel_cycles = std::stod(val);
        else if (key == "ceil_waves") c.ceil_waves = (val == "true" || val == "1");
        else throw std::runtime_error("unknown costs key: " + key);
      } else if (section == "search") {
        auto& s = m.search;
        if (key == "k") s.k = std::stoi(val);
        else if (key == "beam_width") s.beam_width = std::stoi(val);
        else if (key == "max_pattern_size") s.max_pattern_size = std::stoi(val);
        else if (key == "grouping_cap") s.grouping_cap = std::stoi(val);
        else if (key == "candidate_cap") s.candidate_cap = std::stoi(val);
        else if (key == "reverse_beam_order") s.reverse_beam_order = (val == "true" || val == "1");
        else throw std::runtime_error("unknown search key: " + key);
      } else {
        throw std::runtime_error("unknown section: [" + section + "]");
      }
    } catch (const std::invalid_argument&) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": bad value for " + key);
    }
  }
  return m;
}

MachineModel machine_model_from_env() {
  const char* p = std::getenv("STITCH_DEVICE_CONFIG");
  if (p && *p) return load_machine_model(p);
  return default_machine_model();
}

}  // namespace stitch
