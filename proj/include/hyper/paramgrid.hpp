#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace hyper::paramgrid {

struct Discrete {
  std::vector<std::string> values;
  bool operator==(const Discrete&) const = default;
};

struct Continuous {
  double lo = 0.0;
  double hi = 1.0;
  bool operator==(const Continuous&) const = default;
};

// A parameter is sampled either from a finite class of values or from a
// closed real interval.
struct ParameterSpec {
  std::variant<Discrete, Continuous> domain;

  static ParameterSpec discrete(std::vector<std::string> values) {
    return {Discrete{std::move(values)}};
  }
  static ParameterSpec continuous(double lo, double hi) { return {Continuous{lo, hi}}; }

  bool is_discrete() const { return std::holds_alternative<Discrete>(domain); }
  bool is_continuous() const { return std::holds_alternative<Continuous>(domain); }
  const Discrete& as_discrete() const { return std::get<Discrete>(domain); }
  const Continuous& as_continuous() const { return std::get<Continuous>(domain); }

  // Throws EmptyDomain / BadRange / Validation for malformed specs.
  void validate(std::string_view name) const;

  bool operator==(const ParameterSpec&) const = default;
};

// Declaration-ordered parameter space; order fixes the Cartesian product
// enumeration and the binding order of every assignment.
using ParameterSpace = std::vector<std::pair<std::string, ParameterSpec>>;

using Value = std::variant<std::string, double>;

// One binding per parameter, in declaration order.
struct ParameterAssignment {
  std::vector<std::pair<std::string, Value>> bindings;

  const Value* find(std::string_view name) const;
  bool operator==(const ParameterAssignment&) const = default;
};

using DiscreteAssignment = std::vector<std::pair<std::string, std::string>>;
using DiscreteDomains = std::vector<std::pair<std::string, std::vector<std::string>>>;

// Shortest decimal string that parses back to exactly `v`.
std::string format_real(double v);

// Discrete values verbatim, reals via format_real.
std::string format_value(const Value& v);

// Product of all discrete domains, first-declared parameter varying slowest.
// An empty map yields one empty assignment.
std::vector<DiscreteAssignment> cartesian(const DiscreteDomains& discrete);

// Product size without materialising it; nullopt on overflow.
std::optional<std::uint64_t> cartesian_size(const DiscreteDomains& discrete);

// n draws from `pool` such that per-item occurrence counts differ by at most
// one: floor(n/|pool|) shuffled full copies followed by the prefix of one more
// shuffled copy. Deterministic for a given seed.
std::vector<DiscreteAssignment> sample_minimal_repetition(
    const std::vector<DiscreteAssignment>& pool, std::size_t n, std::uint64_t seed);

// n independent uniform draws from [lo, hi].
std::vector<double> sample_continuous(const ParameterSpec& spec, std::size_t n,
                                      std::uint64_t seed);

// Full expansion: minimal-repetition sample of the discrete product, with
// each continuous parameter's n draws shuffled and zipped index-wise.
std::vector<ParameterAssignment> expand(const ParameterSpace& params, std::size_t n,
                                        std::uint64_t seed);

// Names referenced as {{name}} in `tmpl`, in first-occurrence order.
std::vector<std::string> placeholders(std::string_view tmpl);

// Substitutes every {{name}}; throws UnboundPlaceholder when a name has no
// binding and Validation when a placeholder is left unterminated.
std::string render(std::string_view tmpl, const ParameterAssignment& assignment);

}  // namespace hyper::paramgrid
