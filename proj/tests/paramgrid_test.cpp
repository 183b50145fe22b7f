#include "hyper/paramgrid.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "hyper/error.hpp"
#include "hyper/rng.hpp"

namespace hyper::paramgrid {
namespace {

// Independent enumeration of a product by mixed-radix decoding of row
// numbers; does not share code with cartesian().
std::vector<DiscreteAssignment> enumerate_product(const DiscreteDomains& d) {
  std::size_t total = 1;
  for (const auto& [n, v] : d) total *= v.size();
  std::vector<DiscreteAssignment> rows;
  for (std::size_t r = 0; r < total; ++r) {
    DiscreteAssignment a(d.size());
    std::size_t rem = r;
    for (std::size_t i = d.size(); i-- > 0;) {
      a[i] = {d[i].first, d[i].second[rem % d[i].second.size()]};
      rem /= d[i].second.size();
    }
    rows.push_back(a);
  }
  return rows;
}

template <typename T>
std::map<T, int> counts(const std::vector<T>& items) {
  std::map<T, int> c;
  for (const auto& i : items) ++c[i];
  return c;
}

TEST(Xoshiro, MatchesReferenceStream) {
  // Reference values from an independent Python implementation of
  // splitmix64 seeding + xoshiro256**.
  Xoshiro256 rng(42);
  EXPECT_EQ(rng(), 0x15780b2e0c2ec716ULL);
  EXPECT_EQ(rng(), 0x6104d9866d113a7eULL);
  EXPECT_EQ(rng(), 0xae17533239e499a1ULL);
  EXPECT_EQ(rng(), 0xecb8ad4703b360a1ULL);
}

TEST(Cartesian, TwoByTwoInDeclarationOrder) {
  const auto rows = cartesian({{"a", {"1", "2"}}, {"b", {"x", "y"}}});
  const std::vector<DiscreteAssignment> expected = {
      {{"a", "1"}, {"b", "x"}},
      {{"a", "1"}, {"b", "y"}},
      {{"a", "2"}, {"b", "x"}},
      {{"a", "2"}, {"b", "y"}},
  };
  EXPECT_EQ(rows, expected);
}

TEST(Cartesian, TwelveBinaryParametersGive4096) {
  DiscreteDomains d;
  for (int i = 0; i < 12; ++i) d.emplace_back("p" + std::to_string(i), std::vector<std::string>{"lo", "hi"});
  const auto rows = cartesian(d);
  ASSERT_EQ(rows.size(), 4096u);
  EXPECT_EQ(std::set<DiscreteAssignment>(rows.begin(), rows.end()).size(), 4096u);
  EXPECT_EQ(rows, enumerate_product(d));
}

TEST(Cartesian, EmptyMapIsSingletonEmptyAssignment) {
  const auto rows = cartesian({});
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_TRUE(rows[0].empty());
}

TEST(Cartesian, EmptyValueListThrows) {
  try {
    cartesian({{"a", {"1"}}, {"b", {}}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyDomain);
  }
}

TEST(Cartesian, MatchesEnumerationOracleOnMixedRadix) {
  const DiscreteDomains d = {{"a", {"1", "2", "3"}}, {"b", {"x"}}, {"c", {"p", "q"}}, {"d", {"u", "v", "w", "z"}}};
  EXPECT_EQ(cartesian(d), enumerate_product(d));
}

std::vector<DiscreteAssignment> pool_of(std::size_t size) {
  std::vector<std::string> values;
  for (std::size_t i = 0; i < size; ++i) values.push_back(std::to_string(i));
  return cartesian({{"v", values}});
}

TEST(MinimalRepetition, EqualSizeIsPermutation) {
  const auto pool = pool_of(4);
  auto out = sample_minimal_repetition(pool, 4, 7);
  std::sort(out.begin(), out.end());
  auto sorted_pool = pool;
  std::sort(sorted_pool.begin(), sorted_pool.end());
  EXPECT_EQ(out, sorted_pool);
}

TEST(MinimalRepetition, SixFromFourGivesTwoTwoOneOne) {
  const auto out = sample_minimal_repetition(pool_of(4), 6, 11);
  ASSERT_EQ(out.size(), 6u);
  std::vector<int> occ;
  for (const auto& [k, c] : counts(out)) occ.push_back(c);
  std::sort(occ.begin(), occ.end());
  EXPECT_EQ(occ, (std::vector<int>{1, 1, 2, 2}));
}

TEST(MinimalRepetition, FewerThanPoolAreDistinct) {
  const auto out = sample_minimal_repetition(pool_of(4), 3, 3);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(counts(out).size(), 3u);
}

TEST(MinimalRepetition, PropertyCountsBalancedAndDeterministic) {
  Xoshiro256 gen(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t pool_size = 1 + gen.below(64);
    const std::size_t n = 1 + gen.below(256);
    const std::uint64_t seed = gen();
    const auto pool = pool_of(pool_size);
    const auto out = sample_minimal_repetition(pool, n, seed);
    ASSERT_EQ(out.size(), n);
    auto c = counts(out);
    int lo = n >= pool_size ? std::numeric_limits<int>::max() : 0;
    int hi = 0;
    for (const auto& p : pool) {
      const int k = c.count(p) ? c[p] : 0;
      lo = std::min(lo, k);
      hi = std::max(hi, k);
    }
    EXPECT_LE(hi - lo, 1) << "pool=" << pool_size << " n=" << n;
    EXPECT_EQ(hi, static_cast<int>((n + pool_size - 1) / pool_size));
    EXPECT_EQ(out, sample_minimal_repetition(pool, n, seed));
  }
}

TEST(MinimalRepetition, DifferentSeedsUsuallyDiffer) {
  const auto pool = pool_of(32);
  EXPECT_NE(sample_minimal_repetition(pool, 32, 1), sample_minimal_repetition(pool, 32, 2));
}

TEST(Continuous, UniformMeanAndRange) {
  const auto spec = ParameterSpec::continuous(0.0, 1.0);
  const auto values = sample_continuous(spec, 1000, 99);
  ASSERT_EQ(values.size(), 1000u);
  for (double v : values) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / values.size();
  EXPECT_NEAR(mean, 0.5, 0.05);
}

TEST(Continuous, NarrowRangeStaysInBounds) {
  const double lo = 5.0;
  const double hi = std::nextafter(5.0, 6.0);
  for (double v : sample_continuous(ParameterSpec::continuous(lo, hi), 500, 5)) {
    EXPECT_GE(v, lo);
    EXPECT_LE(v, hi);
  }
}

TEST(Continuous, Deterministic) {
  const auto spec = ParameterSpec::continuous(-3.0, 7.5);
  EXPECT_EQ(sample_continuous(spec, 64, 17), sample_continuous(spec, 64, 17));
}

TEST(Continuous, BadRangeRejected) {
  for (auto [lo, hi] : {std::pair{1.0, 1.0}, std::pair{2.0, 1.0}}) {
    try {
      sample_continuous(ParameterSpec::continuous(lo, hi), 3, 1);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kBadRange);
    }
  }
}

TEST(Expand, DiscreteCountsBalanced) {
  const ParameterSpace params = {{"a", ParameterSpec::discrete({"1", "2"})}};
  const auto out = expand(params, 4, 123);
  ASSERT_EQ(out.size(), 4u);
  std::map<std::string, int> c;
  for (const auto& a : out) ++c[format_value(*a.find("a"))];
  EXPECT_EQ(c, (std::map<std::string, int>{{"1", 2}, {"2", 2}}));
}

TEST(Expand, MixedDiscreteAndContinuous) {
  const ParameterSpace params = {{"a", ParameterSpec::discrete({"1", "2"})},
                                 {"lr", ParameterSpec::continuous(0.0, 1.0)}};
  const auto out = expand(params, 4, 7);
  ASSERT_EQ(out.size(), 4u);
  std::multiset<std::string> a_values;
  for (const auto& assignment : out) {
    ASSERT_EQ(assignment.bindings.size(), 2u);
    EXPECT_EQ(assignment.bindings[0].first, "a");
    EXPECT_EQ(assignment.bindings[1].first, "lr");
    a_values.insert(std::get<std::string>(assignment.bindings[0].second));
    const double lr = std::get<double>(assignment.bindings[1].second);
    EXPECT_GE(lr, 0.0);
    EXPECT_LE(lr, 1.0);
  }
  EXPECT_EQ(a_values, (std::multiset<std::string>{"1", "1", "2", "2"}));
}

TEST(Expand, NoParamsGivesEmptyAssignments) {
  const auto out = expand({}, 3, 1);
  ASSERT_EQ(out.size(), 3u);
  for (const auto& a : out) EXPECT_TRUE(a.bindings.empty());
}

TEST(Expand, FullPoolEqualsCartesianAsMultiset) {
  Xoshiro256 gen(77);
  for (int trial = 0; trial < 50; ++trial) {
    ParameterSpace params;
    DiscreteDomains domains;
    const std::size_t nparams = 1 + gen.below(4);
    for (std::size_t p = 0; p < nparams; ++p) {
      std::vector<std::string> values;
      const std::size_t nv = 1 + gen.below(4);
      for (std::size_t v = 0; v < nv; ++v) values.push_back("v" + std::to_string(v));
      params.emplace_back("p" + std::to_string(p), ParameterSpec::discrete(values));
      domains.emplace_back("p" + std::to_string(p), values);
    }
    const auto oracle = enumerate_product(domains);
    const auto out = expand(params, oracle.size(), gen());
    std::multiset<DiscreteAssignment> got;
    for (const auto& a : out) {
      DiscreteAssignment d;
      for (const auto& [k, v] : a.bindings) d.emplace_back(k, std::get<std::string>(v));
      got.insert(d);
    }
    EXPECT_EQ(got, std::multiset<DiscreteAssignment>(oracle.begin(), oracle.end()));
  }
}

TEST(Expand, PropertyLengthRangeAndDeterminism) {
  Xoshiro256 gen(5);
  for (int trial = 0; trial < 100; ++trial) {
    ParameterSpace params;
    const std::size_t nparams = gen.below(5);
    for (std::size_t p = 0; p < nparams; ++p) {
      if (gen.chance(0.5)) {
        params.emplace_back("d" + std::to_string(p), ParameterSpec::discrete({"a", "b", "c"}));
      } else {
        const double lo = gen.uniform(-10, 10);
        params.emplace_back("c" + std::to_string(p), ParameterSpec::continuous(lo, lo + gen.uniform(0.001, 5)));
      }
    }
    const std::size_t n = 1 + gen.below(100);
    const std::uint64_t seed = gen();
    const auto out = expand(params, n, seed);
    ASSERT_EQ(out.size(), n);
    for (const auto& a : out) {
      ASSERT_EQ(a.bindings.size(), params.size());
      for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i].second.is_continuous()) continue;
        const double v = std::get<double>(a.bindings[i].second);
        EXPECT_GE(v, params[i].second.as_continuous().lo);
        EXPECT_LE(v, params[i].second.as_continuous().hi);
      }
    }
    EXPECT_EQ(out, expand(params, n, seed));
  }
}

TEST(Render, SingleSubstitution) {
  ParameterAssignment a{{{"lr", 0.01}}};
  EXPECT_EQ(render("train --lr {{lr}}", a), "train --lr 0.01");
}

TEST(Render, RepeatedPlaceholder) {
  ParameterAssignment a{{{"a", std::string("x")}}};
  EXPECT_EQ(render("run {{a}} {{a}}", a), "run x x");
}

TEST(Render, MissingBinding) {
  ParameterAssignment a{{{"a", std::string("1")}}};
  try {
    render("run {{b}}", a);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUnboundPlaceholder);
    EXPECT_EQ(e.path(), "b");
  }
}

TEST(Render, UnterminatedPlaceholderRejected) {
  EXPECT_THROW(render("run {{a", {}), Error);
}

TEST(Render, RealsRoundTrip) {
  Xoshiro256 gen(1);
  for (int i = 0; i < 1000; ++i) {
    const double v = gen.uniform(-1e6, 1e6) * std::pow(10.0, gen.uniform(-10, 10));
    const std::string s = render("{{x}}", ParameterAssignment{{{"x", v}}});
    EXPECT_EQ(std::stod(s), v) << s;
  }
  EXPECT_EQ(format_real(0.1), "0.1");
  EXPECT_EQ(format_real(3.0), "3");
}

TEST(Placeholders, FirstOccurrenceOrder) {
  EXPECT_EQ(placeholders("{{b}} {{a}} {{ b }}"), (std::vector<std::string>{"b", "a"}));
}

}  // namespace
}  // namespace hyper::paramgrid
