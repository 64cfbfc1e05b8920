#pragma once

#include <stdexcept>
#include <string>

#include "stitch/graph.hpp"

namespace stitch {

// Raised for malformed graph files and invalid graphs. `code` matches the
// diagnostic codes used by validate_graph where applicable.
struct ParseError : std::runtime_error {
  ParseError(std::string code_, const std::string& msg, int line_ = 0, int col_ = 0)
      : std::runtime_error(msg), code(std::move(code_)), line(line_), col(col_) {}
  std::string code;
  int line = 0, col = 0;
};

// Parse the textual graph format (see docs/formats.md). Shapes are inferred
// where omitted; the returned graph passes validate_graph.
CompGraph parse_graph(const std::string& text);

// Canonical text form; parse_graph(serialize_graph(g)) preserves nodes,
// edges and shapes.
std::string serialize_graph(const CompGraph& g);

}  // namespace stitch
