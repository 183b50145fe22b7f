#include "hyper/recipe.hpp"

#include <gtest/gtest.h>

#include <map>
#include <set>

#include "hyper/error.hpp"
#include "hyper/rng.hpp"
#include "hyper/workflow.hpp"

namespace hyper {
namespace {

Error parse_error(const std::string& yaml) {
  try {
    parse_recipe(yaml);
  } catch (const Error& e) {
    return e;
  }
  ADD_FAILURE() << "expected parse failure for:\n" << yaml;
  return Error(ErrorCode::kInvalidArgument, "no error");
}

TEST(ParseRecipe, MinimalDocument) {
  const auto r = parse_recipe(R"(
experiments:
  hello:
    command: "echo hi"
)");
  ASSERT_EQ(r.experiments.size(), 1u);
  EXPECT_EQ(r.experiments[0].name, "hello");
  EXPECT_EQ(r.experiments[0].command, "echo hi");
  EXPECT_TRUE(r.experiments[0].depends_on.empty());
  EXPECT_EQ(r.experiments[0].samples, 1u);
  EXPECT_EQ(r.experiments[0].workers, 1);
}

TEST(ParseRecipe, FullSchema) {
  const auto r = parse_recipe(R"(
version: 1
experiments:
  prep:
    image: "python:3.10"
    workers: 4
    hardware: {profile: cpu-large, spot: true}
    command: "prep --shard {{shard}}"
    params:
      shard: [0, 1, 2]
  train:
    command: "train --lr {{lr}} --bs {{bs}}"
    params:
      bs: {values: [32, 64]}
      lr: {range: [0.0001, 0.1]}
    samples: 8
    depends_on: [prep]
)");
  ASSERT_EQ(r.experiments.size(), 2u);
  const auto& prep = r.experiments[0];
  EXPECT_EQ(prep.image, "python:3.10");
  EXPECT_EQ(prep.workers, 4);
  EXPECT_EQ(prep.hardware.profile, "cpu-large");
  EXPECT_TRUE(prep.hardware.spot);
  EXPECT_EQ(prep.samples, 3u);
  const auto& train = r.experiments[1];
  ASSERT_EQ(train.params.size(), 2u);
  EXPECT_EQ(train.params[0].first, "bs");
  EXPECT_EQ(train.params[1].second.as_continuous().hi, 0.1);
  EXPECT_EQ(train.depends_on, std::vector<std::string>{"prep"});
  EXPECT_TRUE(r.warnings.empty());
}

TEST(ParseRecipe, DanglingDependencyNamesFieldPath) {
  const auto e = parse_error(R"(
experiments:
  B:
    command: "true"
    depends_on: [A]
)");
  EXPECT_EQ(e.code(), ErrorCode::kValidation);
  EXPECT_NE(e.path().find("B.depends_on[0]"), std::string::npos) << e.path();
}

TEST(ParseRecipe, TwoCycleRejected) {
  const auto e = parse_error(R"(
experiments:
  A: {command: "true", depends_on: [B]}
  B: {command: "true", depends_on: [A]}
)");
  EXPECT_EQ(e.code(), ErrorCode::kValidation);
  EXPECT_NE(std::string(e.what()).find("cycle"), std::string::npos);
}

TEST(ParseRecipe, SelfDependencyIsACycle) {
  const auto e = parse_error("experiments:\n  A: {command: x, depends_on: [A]}\n");
  EXPECT_NE(std::string(e.what()).find("cycle"), std::string::npos);
}

TEST(ParseRecipe, UnboundPlaceholder) {
  const auto e = parse_error(R"(
experiments:
  t:
    command: "run --lr {{lr}}"
)");
  EXPECT_EQ(e.code(), ErrorCode::kValidation);
  EXPECT_NE(std::string(e.what()).find("unbound placeholder lr"), std::string::npos);
  EXPECT_EQ(e.path(), "experiments.t.command");
}

TEST(ParseRecipe, NonPositiveCountsRejected) {
  EXPECT_EQ(parse_error("experiments:\n  a: {command: x, workers: 0}\n").path(),
            "experiments.a.workers");
  EXPECT_EQ(parse_error("experiments:\n  a: {command: x, samples: -2}\n").path(),
            "experiments.a.samples");
  EXPECT_EQ(parse_error("experiments:\n  a: {command: x, workers: lots}\n").path(),
            "experiments.a.workers");
}

TEST(ParseRecipe, MalformedYamlIsSyntaxError) {
  EXPECT_EQ(parse_error("experiments: [unclosed\n").code(), ErrorCode::kSyntax);
  EXPECT_EQ(parse_error("just a string").code(), ErrorCode::kSyntax);
}

TEST(ParseRecipe, SchemaViolations) {
  EXPECT_EQ(parse_error("experiments:\n  a: {command: x, colour: red}\n").path(),
            "experiments.a.colour");
  EXPECT_EQ(parse_error("experiments:\n  'bad name': {command: x}\n").path(),
            "experiments.bad name");
  EXPECT_EQ(parse_error("experiments:\n  a: {image: x}\n").path(), "experiments.a.command");
  EXPECT_EQ(parse_error("experiments: {}\n").path(), "experiments");
  EXPECT_EQ(parse_error("version: 2\nexperiments:\n  a: {command: x}\n").path(), "version");
  EXPECT_EQ(parse_error("experiments:\n  a: {command: x, params: {p: []}}\n").path(),
            "experiments.a.params.p");
  EXPECT_EQ(parse_error("experiments:\n  a: {command: x, params: {p: [1, 1]}}\n").path(),
            "experiments.a.params.p");
  EXPECT_EQ(parse_error("experiments:\n  a: {command: x, samples: 2, params: {p: {range: [1, 0]}}}\n").path(),
            "experiments.a.params.p");
}

TEST(ParseRecipe, ContinuousWithoutSamplesRejected) {
  EXPECT_EQ(parse_error("experiments:\n  a: {command: x, params: {lr: {range: [0, 1]}}}\n").path(),
            "experiments.a.samples");
}

TEST(ParseRecipe, OversampledDiscreteWarns) {
  const auto r = parse_recipe("experiments:\n  a: {command: 'x {{p}}', samples: 5, params: {p: [1, 2]}}\n");
  EXPECT_EQ(r.experiments[0].samples, 5u);
  ASSERT_EQ(r.warnings.size(), 1u);
  EXPECT_NE(r.warnings[0].find("experiments.a.samples"), std::string::npos);
}

// Random valid recipes: a DAG over up to 8 experiments with random params.
Recipe random_recipe(Xoshiro256& gen) {
  Recipe r;
  const std::size_t n = 1 + gen.below(8);
  for (std::size_t i = 0; i < n; ++i) {
    ExperimentSpec e;
    e.name = "exp_" + std::to_string(i);
    e.image = gen.chance(0.5) ? "img:" + std::to_string(gen.below(9)) : "";
    e.workers = 1 + static_cast<int>(gen.below(4));
    e.hardware.profile = gen.chance(0.5) ? "gpu" : "cpu-small";
    e.hardware.spot = gen.chance(0.5);
    e.command = "run";
    bool continuous = false;
    for (std::size_t p = 0; p < gen.below(4); ++p) {
      const std::string pname = "p" + std::to_string(p);
      if (gen.chance(0.6)) {
        std::vector<std::string> values;
        for (std::size_t v = 0; v <= gen.below(3); ++v) values.push_back("v " + std::to_string(v) + ":\"q\"");
        e.params.emplace_back(pname, paramgrid::ParameterSpec::discrete(values));
      } else {
        const double lo = gen.uniform(-5, 5);
        e.params.emplace_back(pname, paramgrid::ParameterSpec::continuous(lo, lo + gen.uniform(1e-9, 3)));
        continuous = true;
      }
      e.command += " --" + pname + " {{" + pname + "}}";
    }
    e.samples = 1 + gen.below(6);
    (void)continuous;
    for (std::size_t d = 0; d < i; ++d) {
      if (gen.chance(0.3)) e.depends_on.push_back("exp_" + std::to_string(d));
    }
    if (gen.chance(0.3)) e.dataset = "set-" + std::to_string(gen.below(3));
    r.experiments.push_back(e);
  }
  validate_recipe(r);
  return r;
}

TEST(RecipeProperties, SerializeParseRoundTrip) {
  Xoshiro256 gen(314);
  for (int trial = 0; trial < 200; ++trial) {
    const Recipe r = random_recipe(gen);
    const std::string text = serialize_recipe(r);
    const Recipe back = parse_recipe(text);
    EXPECT_EQ(back, r) << text;
  }
}

TEST(RecipeProperties, TopologicalOrderRespectsEdges) {
  Xoshiro256 gen(99);
  for (int trial = 0; trial < 100; ++trial) {
    const Recipe r = random_recipe(gen);
    const Workflow wf = build_workflow(r, gen());
    const auto order = topological_order(wf);
    ASSERT_EQ(order.size(), wf.experiments.size());
    std::map<std::size_t, std::size_t> pos;
    for (std::size_t i = 0; i < order.size(); ++i) pos[order[i]] = i;
    for (const auto& [from, to] : wf.edges) EXPECT_LT(pos[from], pos[to]);
    EXPECT_EQ(topological_order(r).size(), r.experiments.size());
  }
}

TEST(BuildWorkflow, EdgesMirrorDependencies) {
  const auto r = parse_recipe(R"(
experiments:
  prep: {command: "prep"}
  train: {command: "train", depends_on: [prep]}
)");
  const auto wf = build_workflow(r, 1, "wf-1");
  ASSERT_EQ(wf.edges.size(), 1u);
  EXPECT_EQ(wf.edges[0], (std::pair<std::size_t, std::size_t>{0, 1}));
  EXPECT_EQ(wf.phase, Phase::kProvisioning);
  EXPECT_EQ(wf.experiments[1].tasks[0].id, "wf-1/train/0");
}

TEST(BuildWorkflow, TasksCoverDiscreteProduct) {
  const auto r = parse_recipe(R"(
experiments:
  grid:
    command: "run {{a}} {{b}}"
    params: {a: [1, 2], b: [x, y]}
    samples: 4
)");
  const auto wf = build_workflow(r, 5);
  const auto& tasks = wf.experiments[0].tasks;
  ASSERT_EQ(tasks.size(), 4u);
  std::multiset<std::string> commands;
  for (const auto& t : tasks) {
    commands.insert(t.command);
    EXPECT_EQ(t.state, TaskState::kPending);
  }
  // Brute-force product of the two lists.
  std::multiset<std::string> expected;
  for (const char* a : {"1", "2"}) {
    for (const char* b : {"x", "y"}) expected.insert(std::string("run ") + a + " " + b);
  }
  EXPECT_EQ(commands, expected);
}

TEST(BuildWorkflow, DeterministicPerSeed) {
  const auto r = parse_recipe(R"(
experiments:
  hp:
    command: "fit --lr {{lr}} --depth {{depth}}"
    params: {lr: {range: [0.001, 0.3]}, depth: [3, 5, 7]}
    samples: 10
)");
  const auto a = build_workflow(r, 42);
  const auto b = build_workflow(r, 42);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, build_workflow(r, 43));
  EXPECT_EQ(a.experiments[0].tasks.size(), 10u);
}

TEST(BuildWorkflow, JsonRoundTrip) {
  Xoshiro256 gen(8);
  for (int trial = 0; trial < 30; ++trial) {
    Workflow wf = build_workflow(random_recipe(gen), gen(), "wf-x");
    if (!wf.experiments.empty() && !wf.experiments[0].tasks.empty()) {
      auto& t = wf.experiments[0].tasks[0];
      t.state = TaskState::kRescheduled;
      t.attempts.push_back({1, "n1", Millis{10}, Millis{20}, Outcome::node_lost()});
      t.attempts.push_back({2, "n2", Millis{30}, std::nullopt, std::nullopt});
      wf.experiments[0].released_seq = 3;
    }
    EXPECT_EQ(workflow_from_json(json::parse(to_json(wf).dump())), wf);
  }
}

TEST(Workflow, PhaseOnlyMovesForward) {
  Workflow wf;
  EXPECT_TRUE(wf.advance(Phase::kOrchestrating));
  EXPECT_FALSE(wf.advance(Phase::kProvisioning));
  EXPECT_FALSE(wf.advance(Phase::kOrchestrating));
  EXPECT_TRUE(wf.advance(Phase::kExecuting));
  EXPECT_TRUE(wf.advance(Phase::kFailed));
  EXPECT_FALSE(wf.advance(Phase::kMonitoringComplete));
}

}  // namespace
}  // namespace hyper
