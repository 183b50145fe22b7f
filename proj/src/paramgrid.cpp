#include "hyper/paramgrid.hpp"

#include <charconv>
#include <cmath>
#include <numeric>

#include "hyper/error.hpp"
#include "hyper/rng.hpp"

namespace hyper::paramgrid {
namespace {

constexpr std::uint64_t kDiscreteStream = 1;
constexpr std::uint64_t kContinuousStreamBase = 1000;

bool is_name_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
         c == '_' || c == '-';
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
  return s;
}

// Calls on_text for literal runs and on_name for each placeholder.
template <typename OnText, typename OnName>
void scan_template(std::string_view tmpl, OnText on_text, OnName on_name) {
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    const std::size_t open = tmpl.find("{{", pos);
    if (open == std::string_view::npos) {
      on_text(tmpl.substr(pos));
      return;
    }
    on_text(tmpl.substr(pos, open - pos));
    const std::size_t close = tmpl.find("}}", open + 2);
    if (close == std::string_view::npos) {
      throw Error(ErrorCode::kValidation,
                  "unterminated placeholder at offset " + std::to_string(open));
    }
    const std::string_view name = trim(tmpl.substr(open + 2, close - open - 2));
    if (name.empty()) {
      throw Error(ErrorCode::kValidation, "empty placeholder at offset " + std::to_string(open));
    }
    for (char c : name) {
      if (!is_name_char(c)) {
        throw Error(ErrorCode::kValidation,
                    "invalid placeholder name '" + std::string(name) + "'");
      }
    }
    on_name(name);
    pos = close + 2;
  }
}

}  // namespace

void ParameterSpec::validate(std::string_view name) const {
  if (const auto* d = std::get_if<Discrete>(&domain)) {
    if (d->values.empty()) {
      throw Error(ErrorCode::kEmptyDomain, "parameter '" + std::string(name) + "' has no values");
    }
    for (std::size_t i = 0; i < d->values.size(); ++i) {
      for (std::size_t j = 0; j < i; ++j) {
        if (d->values[i] == d->values[j]) {
          throw Error(ErrorCode::kValidation, "parameter '" + std::string(name) +
                                                  "' repeats value '" + d->values[i] + "'");
        }
      }
    }
    return;
  }
  const auto& c = std::get<Continuous>(domain);
  if (!std::isfinite(c.lo) || !std::isfinite(c.hi) || !(c.lo < c.hi)) {
    throw Error(ErrorCode::kBadRange, "parameter '" + std::string(name) + "' range [" +
                                          format_real(c.lo) + ", " + format_real(c.hi) +
                                          "] requires lo < hi");
  }
}

const Value* ParameterAssignment::find(std::string_view name) const {
  for (const auto& [key, value] : bindings) {
    if (key == name) return &value;
  }
  return nullptr;
}

std::string format_real(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

std::string format_value(const Value& v) {
  if (const auto* s = std::get_if<std::string>(&v)) return *s;
  return format_real(std::get<double>(v));
}

std::optional<std::uint64_t> cartesian_size(const DiscreteDomains& discrete) {
  std::uint64_t total = 1;
  for (const auto& [name, values] : discrete) {
    if (values.empty()) return 0;
    if (total > std::numeric_limits<std::uint64_t>::max() / values.size()) return std::nullopt;
    total *= values.size();
  }
  return total;
}

std::vector<DiscreteAssignment> cartesian(const DiscreteDomains& discrete) {
  for (const auto& [name, values] : discrete) {
    if (values.empty()) {
      throw Error(ErrorCode::kEmptyDomain, "parameter '" + name + "' has no values");
    }
  }
  const auto size = cartesian_size(discrete);
  if (!size || *size > (std::uint64_t{1} << 32)) {
    throw Error(ErrorCode::kInvalidArgument, "Cartesian product too large to enumerate");
  }

  std::vector<DiscreteAssignment> out;
  out.reserve(*size);
  std::vector<std::size_t> digits(discrete.size(), 0);
  for (std::uint64_t row = 0; row < *size; ++row) {
    DiscreteAssignment a;
    a.reserve(discrete.size());
    for (std::size_t i = 0; i < discrete.size(); ++i) {
      a.emplace_back(discrete[i].first, discrete[i].second[digits[i]]);
    }
    out.push_back(std::move(a));
    // Odometer increment, last parameter fastest.
    for (std::size_t i = discrete.size(); i-- > 0;) {
      if (++digits[i] < discrete[i].second.size()) break;
      digits[i] = 0;
    }
  }
  return out;
}

std::vector<DiscreteAssignment> sample_minimal_repetition(
    const std::vector<DiscreteAssignment>& pool, std::size_t n, std::uint64_t seed) {
  if (pool.empty()) {
    throw Error(ErrorCode::kEmptyDomain, "cannot sample from an empty pool");
  }
  Xoshiro256 rng(seed);
  std::vector<std::size_t> order(pool.size());
  std::vector<DiscreteAssignment> out;
  out.reserve(n);
  while (out.size() < n) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(order));
    const std::size_t take = std::min(pool.size(), n - out.size());
    for (std::size_t i = 0; i < take; ++i) out.push_back(pool[order[i]]);
  }
  return out;
}

std::vector<double> sample_continuous(const ParameterSpec& spec, std::size_t n,
                                      std::uint64_t seed) {
  if (!spec.is_continuous()) {
    throw Error(ErrorCode::kInvalidArgument, "sample_continuous requires a continuous spec");
  }
  spec.validate("<continuous>");
  const auto& range = spec.as_continuous();
  Xoshiro256 rng(seed);
  std::vector<double> out(n);
  for (auto& v : out) v = rng.uniform(range.lo, range.hi);
  return out;
}

std::vector<ParameterAssignment> expand(const ParameterSpace& params, std::size_t n,
                                        std::uint64_t seed) {
  DiscreteDomains discrete;
  for (const auto& [name, spec] : params) {
    spec.validate(name);
    if (spec.is_discrete()) discrete.emplace_back(name, spec.as_discrete().values);
  }

  const auto discrete_rows =
      sample_minimal_repetition(cartesian(discrete), n, derive_seed(seed, kDiscreteStream));

  // Continuous columns keyed by declaration index.
  std::vector<std::vector<double>> columns(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].second.is_continuous()) continue;
    const std::uint64_t tag = kContinuousStreamBase + 2 * i;
    columns[i] = sample_continuous(params[i].second, n, derive_seed(seed, tag));
    Xoshiro256 matcher(derive_seed(seed, tag + 1));
    matcher.shuffle(std::span<double>(columns[i]));
  }

  std::vector<ParameterAssignment> out(n);
  for (std::size_t row = 0; row < n; ++row) {
    auto& bindings = out[row].bindings;
    bindings.reserve(params.size());
    std::size_t discrete_index = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i].second.is_discrete()) {
        bindings.emplace_back(params[i].first, discrete_rows[row][discrete_index++].second);
      } else {
        bindings.emplace_back(params[i].first, columns[i][row]);
      }
    }
  }
  return out;
}

std::vector<std::string> placeholders(std::string_view tmpl) {
  std::vector<std::string> names;
  scan_template(
      tmpl, [](std::string_view) {},
      [&](std::string_view name) {
        for (const auto& n : names) {
          if (n == name) return;
        }
        names.emplace_back(name);
      });
  return names;
}

std::string render(std::string_view tmpl, const ParameterAssignment& assignment) {
  std::string out;
  out.reserve(tmpl.size());
  scan_template(
      tmpl, [&](std::string_view text) { out.append(text); },
      [&](std::string_view name) {
        const Value* v = assignment.find(name);
        if (v == nullptr) {
          throw Error(ErrorCode::kUnboundPlaceholder, "unbound placeholder " + std::string(name),
                      std::string(name));
        }
        out += format_value(*v);
      });
  return out;
}

}  // namespace hyper::paramgrid
