#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hyper/paramgrid.hpp"

namespace hyper {

struct HardwareSpec {
  std::string profile = "default";
  // Spot hardware is subject to preemption fault injection.
  bool spot = false;
  bool operator==(const HardwareSpec&) const = default;
};

struct ExperimentSpec {
  std::string name;
  // Environment label; recorded, never executed.
  std::string image;
  int workers = 1;
  HardwareSpec hardware;
  std::string command;
  paramgrid::ParameterSpace params;
  // Always resolved: when omitted in YAML it defaults to the discrete
  // product size.
  std::size_t samples = 1;
  std::vector<std::string> depends_on;
  // Dataset name exposed to tasks through HYPER_DATASET_ROOT; may be empty.
  std::string dataset;

  bool operator==(const ExperimentSpec&) const = default;
};

struct Recipe {
  int version = 1;
  std::vector<ExperimentSpec> experiments;
  // Non-fatal findings, e.g. samples exceeding the discrete product.
  std::vector<std::string> warnings;

  const ExperimentSpec* find(std::string_view name) const;
  bool operator==(const Recipe&) const = default;
};

// Parses and validates a YAML recipe. Throws Error(kSyntax) for malformed
// YAML and Error(kValidation) with a field path such as
// "experiments.train.depends_on[0]" for schema violations.
Recipe parse_recipe(std::string_view yaml_text);

// Checks every recipe invariant and fills in warnings; parse_recipe calls
// this, programmatic builders may too.
void validate_recipe(Recipe& recipe);

// Emits YAML that parse_recipe maps back to an equal Recipe.
std::string serialize_recipe(const Recipe& recipe);

// Experiment indices in dependency order (ties by declaration order).
std::vector<std::size_t> topological_order(const Recipe& recipe);

}  // namespace hyper
