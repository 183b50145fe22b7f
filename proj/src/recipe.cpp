#include "hyper/recipe.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <functional>
#include <map>
#include <set>

#include "hyper/error.hpp"

namespace hyper {
namespace {

using paramgrid::ParameterSpec;

bool valid_name(std::string_view name) {
  if (name.empty()) return false;
  return std::all_of(name.begin(), name.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
           c == '_' || c == '-';
  });
}

[[noreturn]] void fail(const std::string& path, const std::string& message) {
  throw Error(ErrorCode::kValidation, path + ": " + message, path);
}

void check_keys(const YAML::Node& map, const std::string& path,
                std::initializer_list<std::string_view> allowed) {
  for (const auto& kv : map) {
    const auto key = kv.first.as<std::string>();
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      fail(path.empty() ? key : path + "." + key, "unknown field");
    }
  }
}

std::string scalar(const YAML::Node& node, const std::string& path) {
  if (!node.IsScalar()) fail(path, "expected a scalar");
  return node.Scalar();
}

long long integer(const YAML::Node& node, const std::string& path) {
  if (!node.IsScalar()) fail(path, "expected an integer");
  try {
    return node.as<long long>();
  } catch (const YAML::BadConversion&) {
    fail(path, "expected an integer, got '" + node.Scalar() + "'");
  }
}

double real(const YAML::Node& node, const std::string& path) {
  if (!node.IsScalar()) fail(path, "expected a number");
  try {
    return node.as<double>();
  } catch (const YAML::BadConversion&) {
    fail(path, "expected a number, got '" + node.Scalar() + "'");
  }
}

bool boolean(const YAML::Node& node, const std::string& path) {
  if (!node.IsScalar()) fail(path, "expected a boolean");
  try {
    return node.as<bool>();
  } catch (const YAML::BadConversion&) {
    fail(path, "expected a boolean, got '" + node.Scalar() + "'");
  }
}

std::vector<std::string> value_list(const YAML::Node& seq, const std::string& path) {
  std::vector<std::string> values;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    values.push_back(scalar(seq[i], path + "[" + std::to_string(i) + "]"));
  }
  return values;
}

ParameterSpec parse_param(const YAML::Node& node, const std::string& path) {
  if (node.IsSequence()) return ParameterSpec::discrete(value_list(node, path));
  if (!node.IsMap()) fail(path, "expected a value list or a mapping with 'values' or 'range'");
  check_keys(node, path, {"values", "range"});
  if (node["values"] && node["range"]) fail(path, "'values' and 'range' are exclusive");
  if (const auto values = node["values"]) {
    if (!values.IsSequence()) fail(path + ".values", "expected a list");
    return ParameterSpec::discrete(value_list(values, path + ".values"));
  }
  if (const auto range = node["range"]) {
    if (!range.IsSequence() || range.size() != 2) fail(path + ".range", "expected [lo, hi]");
    return ParameterSpec::continuous(real(range[0], path + ".range[0]"),
                                     real(range[1], path + ".range[1]"));
  }
  fail(path, "expected 'values' or 'range'");
}

ExperimentSpec parse_experiment(const std::string& name, const YAML::Node& node,
                                const std::string& path, bool& samples_given) {
  if (!node.IsMap()) fail(path, "expected a mapping");
  check_keys(node, path,
             {"image", "workers", "hardware", "command", "params", "samples", "depends_on", "dataset"});
  ExperimentSpec spec;
  spec.name = name;
  if (const auto n = node["image"]) spec.image = scalar(n, path + ".image");
  if (const auto n = node["workers"]) {
    const auto workers = integer(n, path + ".workers");
    if (workers < 1 || workers > 1'000'000) fail(path + ".workers", "must be a positive integer");
    spec.workers = static_cast<int>(workers);
  }
  if (const auto n = node["hardware"]) {
    const std::string hw_path = path + ".hardware";
    if (!n.IsMap()) fail(hw_path, "expected a mapping");
    check_keys(n, hw_path, {"profile", "spot"});
    if (const auto p = n["profile"]) spec.hardware.profile = scalar(p, hw_path + ".profile");
    if (const auto s = n["spot"]) spec.hardware.spot = boolean(s, hw_path + ".spot");
  }
  const auto command = node["command"];
  if (!command) fail(path + ".command", "required field missing");
  spec.command = scalar(command, path + ".command");
  if (const auto n = node["params"]) {
    if (!n.IsMap()) fail(path + ".params", "expected a mapping");
    for (const auto& kv : n) {
      const auto pname = kv.first.as<std::string>();
      spec.params.emplace_back(pname, parse_param(kv.second, path + ".params." + pname));
    }
  }
  samples_given = false;
  if (const auto n = node["samples"]) {
    const auto samples = integer(n, path + ".samples");
    if (samples < 1) fail(path + ".samples", "must be a positive integer");
    spec.samples = static_cast<std::size_t>(samples);
    samples_given = true;
  }
  if (const auto n = node["depends_on"]) {
    if (!n.IsSequence()) fail(path + ".depends_on", "expected a list");
    spec.depends_on = value_list(n, path + ".depends_on");
  }
  if (const auto n = node["dataset"]) spec.dataset = scalar(n, path + ".dataset");
  return spec;
}

// Resolves an omitted samples count and checks per-experiment invariants
// that do not involve other experiments.
void validate_experiment(ExperimentSpec& spec, bool samples_given,
                         std::vector<std::string>& warnings) {
  const std::string path = "experiments." + spec.name;
  if (!valid_name(spec.name)) fail(path, "experiment name must match [A-Za-z0-9_-]+");
  if (spec.workers < 1) fail(path + ".workers", "must be a positive integer");
  if (spec.hardware.profile.empty()) fail(path + ".hardware.profile", "must be non-empty");
  if (spec.command.empty()) fail(path + ".command", "must be non-empty");

  std::set<std::string> seen;
  paramgrid::DiscreteDomains discrete;
  bool has_continuous = false;
  for (const auto& [pname, pspec] : spec.params) {
    const std::string ppath = path + ".params." + pname;
    if (!valid_name(pname)) fail(ppath, "parameter name must match [A-Za-z0-9_-]+");
    if (!seen.insert(pname).second) fail(ppath, "duplicate parameter");
    try {
      pspec.validate(pname);
    } catch (const Error& e) {
      fail(ppath, e.what());
    }
    if (pspec.is_discrete()) {
      discrete.emplace_back(pname, pspec.as_discrete().values);
    } else {
      has_continuous = true;
    }
  }

  std::vector<std::string> names;
  try {
    names = paramgrid::placeholders(spec.command);
  } catch (const Error& e) {
    fail(path + ".command", e.what());
  }
  for (const auto& placeholder : names) {
    if (!seen.count(placeholder)) fail(path + ".command", "unbound placeholder " + placeholder);
  }

  const auto product = paramgrid::cartesian_size(discrete);
  if (!samples_given) {
    if (has_continuous) {
      fail(path + ".samples", "required when continuous parameters are present");
    }
    if (!product || *product > 1'000'000) {
      fail(path + ".samples", "discrete product too large to use as the default");
    }
    spec.samples = static_cast<std::size_t>(*product);
  }
  if (spec.samples < 1) fail(path + ".samples", "must be a positive integer");
  if (!discrete.empty() && !has_continuous && product && spec.samples > *product) {
    warnings.push_back(path + ".samples: " + std::to_string(spec.samples) +
                       " exceeds the " + std::to_string(*product) +
                       " discrete combinations; some will repeat");
  }
}

void validate_graph(const Recipe& recipe) {
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < recipe.experiments.size(); ++i) {
    const auto& name = recipe.experiments[i].name;
    if (!index.emplace(name, i).second) fail("experiments." + name, "duplicate experiment name");
  }
  for (const auto& spec : recipe.experiments) {
    std::set<std::string> deps;
    for (std::size_t d = 0; d < spec.depends_on.size(); ++d) {
      const std::string dpath = spec.name + ".depends_on[" + std::to_string(d) + "]";
      const auto& dep = spec.depends_on[d];
      if (!index.count(dep)) fail("experiments." + dpath, "unknown experiment '" + dep + "'");
      if (!deps.insert(dep).second) fail("experiments." + dpath, "duplicate dependency");
    }
  }

  // Depth-first search with colouring; the first back edge names the cycle.
  enum class Colour { kWhite, kGrey, kBlack };
  std::vector<Colour> colour(recipe.experiments.size(), Colour::kWhite);
  std::vector<std::size_t> stack;
  std::function<void(std::size_t)> visit = [&](std::size_t v) {
    colour[v] = Colour::kGrey;
    stack.push_back(v);
    for (const auto& dep : recipe.experiments[v].depends_on) {
      const std::size_t u = index.at(dep);
      if (colour[u] == Colour::kGrey) {
        std::string cycle;
        auto it = std::find(stack.begin(), stack.end(), u);
        for (; it != stack.end(); ++it) cycle += recipe.experiments[*it].name + " -> ";
        cycle += recipe.experiments[u].name;
        fail("experiments", "dependency cycle: " + cycle);
      }
      if (colour[u] == Colour::kWhite) visit(u);
    }
    stack.pop_back();
    colour[v] = Colour::kBlack;
  };
  for (std::size_t v = 0; v < recipe.experiments.size(); ++v) {
    if (colour[v] == Colour::kWhite) visit(v);
  }
}

void validate_impl(Recipe& recipe, const std::vector<bool>& samples_given) {
  if (recipe.version != 1) fail("version", "unsupported recipe version");
  if (recipe.experiments.empty()) fail("experiments", "at least one experiment is required");
  recipe.warnings.clear();
  for (std::size_t i = 0; i < recipe.experiments.size(); ++i) {
    validate_experiment(recipe.experiments[i], samples_given[i], recipe.warnings);
  }
  validate_graph(recipe);
}

}  // namespace

const ExperimentSpec* Recipe::find(std::string_view name) const {
  for (const auto& e : experiments) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

Recipe parse_recipe(std::string_view yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(yaml_text));
  } catch (const YAML::Exception& e) {
    throw Error(ErrorCode::kSyntax, e.what());
  }
  if (!root.IsMap()) throw Error(ErrorCode::kSyntax, "recipe must be a YAML mapping");

  Recipe recipe;
  std::vector<bool> samples_given;
  try {
    check_keys(root, "", {"version", "experiments"});
    if (const auto v = root["version"]) recipe.version = static_cast<int>(integer(v, "version"));
    const auto experiments = root["experiments"];
    if (!experiments) fail("experiments", "required field missing");
    if (!experiments.IsMap()) fail("experiments", "expected a mapping of name to experiment");
    for (const auto& kv : experiments) {
      const auto name = kv.first.as<std::string>();
      bool given = false;
      recipe.experiments.push_back(
          parse_experiment(name, kv.second, "experiments." + name, given));
      samples_given.push_back(given);
    }
  } catch (const YAML::Exception& e) {
    throw Error(ErrorCode::kSyntax, e.what());
  }
  validate_impl(recipe, samples_given);
  return recipe;
}

void validate_recipe(Recipe& recipe) {
  validate_impl(recipe, std::vector<bool>(recipe.experiments.size(), true));
}

std::string serialize_recipe(const Recipe& recipe) {
  YAML::Emitter out;
  out << YAML::BeginMap;
  out << YAML::Key << "version" << YAML::Value << recipe.version;
  out << YAML::Key << "experiments" << YAML::Value << YAML::BeginMap;
  for (const auto& e : recipe.experiments) {
    out << YAML::Key << e.name << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "image" << YAML::Value << YAML::DoubleQuoted << e.image;
    out << YAML::Key << "workers" << YAML::Value << e.workers;
    out << YAML::Key << "hardware" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "profile" << YAML::Value << YAML::DoubleQuoted << e.hardware.profile;
    out << YAML::Key << "spot" << YAML::Value << e.hardware.spot;
    out << YAML::EndMap;
    out << YAML::Key << "command" << YAML::Value << YAML::DoubleQuoted << e.command;
    if (!e.params.empty()) {
      out << YAML::Key << "params" << YAML::Value << YAML::BeginMap;
      for (const auto& [pname, pspec] : e.params) {
        out << YAML::Key << pname << YAML::Value;
        if (pspec.is_discrete()) {
          out << YAML::Flow << YAML::BeginSeq;
          for (const auto& v : pspec.as_discrete().values) out << YAML::DoubleQuoted << v;
          out << YAML::EndSeq;
        } else {
          const auto& c = pspec.as_continuous();
          out << YAML::Flow << YAML::BeginMap << YAML::Key << "range" << YAML::Value
              << YAML::Flow << YAML::BeginSeq << paramgrid::format_real(c.lo)
              << paramgrid::format_real(c.hi) << YAML::EndSeq << YAML::EndMap;
        }
      }
      out << YAML::EndMap;
    }
    out << YAML::Key << "samples" << YAML::Value << e.samples;
    if (!e.depends_on.empty()) {
      out << YAML::Key << "depends_on" << YAML::Value << YAML::Flow << YAML::BeginSeq;
      for (const auto& d : e.depends_on) out << YAML::DoubleQuoted << d;
      out << YAML::EndSeq;
    }
    if (!e.dataset.empty()) {
      out << YAML::Key << "dataset" << YAML::Value << YAML::DoubleQuoted << e.dataset;
    }
    out << YAML::EndMap;
  }
  out << YAML::EndMap << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

std::vector<std::size_t> topological_order(const Recipe& recipe) {
  const std::size_t n = recipe.experiments.size();
  std::vector<std::size_t> remaining(n, 0);
  std::vector<std::vector<std::size_t>> successors(n);
  for (std::size_t v = 0; v < n; ++v) {
    for (const auto& dep : recipe.experiments[v].depends_on) {
      for (std::size_t u = 0; u < n; ++u) {
        if (recipe.experiments[u].name == dep) {
          successors[u].push_back(v);
          ++remaining[v];
        }
      }
    }
  }
  std::vector<std::size_t> order;
  std::vector<bool> done(n, false);
  while (order.size() < n) {
    bool progressed = false;
    for (std::size_t v = 0; v < n; ++v) {
      if (done[v] || remaining[v] != 0) continue;
      done[v] = true;
      order.push_back(v);
      for (auto s : successors[v]) --remaining[s];
      progressed = true;
      break;
    }
    if (!progressed) throw Error(ErrorCode::kValidation, "dependency cycle", "experiments");
  }
  return order;
}

}  // namespace hyper
