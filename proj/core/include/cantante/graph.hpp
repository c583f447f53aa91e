#pragma once

#include <string>

#include <nlohmann/json_fwd.hpp>

#include "cantante/types.hpp"

namespace cantante {

/// Parses the declarative graph document. Sections: `agents`, `edges`,
/// `entry`, `terminals`, `loop_caps`. Unknown keys are rejected so typos
/// surface at load instead of silently changing topology. Throws
/// std::runtime_error with a descriptive message on schema errors; structural
/// problems beyond the schema are reported by validate_graph.
WorkflowGraph graph_from_json(const nlohmann::json& doc);

WorkflowGraph load_graph_file(const std::string& path);

nlohmann::json graph_to_json(const WorkflowGraph& graph);

}  // namespace cantante
