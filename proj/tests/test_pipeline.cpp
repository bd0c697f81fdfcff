#include <doctest.h>

#include "palette/error.hpp"
#include "palette/metrics.hpp"
#include "pipeline_fixtures.hpp"

using namespace palette;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::IoFailure;
}

std::size_t count_prompts_with(const ScriptedMock& m, const std::string& needle) {
  std::size_t n = 0;
  for (const auto& c : m.calls()) n += c.prompt.find(needle) != std::string::npos;
  return n;
}

const std::vector<double> kTable4Pred{0.6049056212210604, 0.3230594648058141, 0.060349139731253465,
                                      0.0116857742428727};

}  // namespace

TEST_CASE("opinion items are truncated to the option count and renormalized") {
  const auto items = fixtures::new_zealand_items();
  REQUIRE(items.size() == 1);
  const auto& it = items[0];
  CHECK(it.id == "nz-freedom-equality");
  CHECK(it.options.size() == 4);
  REQUIRE(it.gold.size() == 4);
  const double s = 0.671 + 0.242 + 0.061;
  CHECK(it.gold[0] == doctest::Approx(0.671 / s).epsilon(1e-12));
  CHECK(it.gold[3] == 0.0);
  CHECK(item_query(it).find("Options:\nA. Freedom\nB. Equality\nC. Don't know\nD. No answer") != std::string::npos);
}

TEST_CASE("item parsing filters by country and rejects bad rows") {
  const std::vector<json> rows{
      {{"question", "Q1?"}, {"options", {"a", "b"}}, {"selections", {{"Chile", {0.5, 0.5}}}}},
      {{"question", "Q2?"}, {"options", {"a", "b"}}, {"selections", {{"Peru", {0.1, 0.9}}}}},
  };
  const auto chile = parse_opinion_items(rows, "Chile");
  REQUIRE(chile.size() == 1);
  CHECK(chile[0].country == "Chile");
  CHECK(chile[0].id == "q1");
  const std::vector<json> bad{{{"question", "Q?"}, {"options", {"a", "b"}}, {"selections", {{"Chile", {-1, 2}}}}}};
  CHECK(code_of([&] { parse_opinion_items(bad, "Chile"); }) == ErrorCode::InvalidItem);
  const std::vector<json> missing{{{"options", {"a", "b"}}}};
  CHECK(code_of([&] { parse_opinion_items(missing); }) == ErrorCode::InvalidItem);
}

TEST_CASE("New Zealand case replays to the recorded distribution") {
  const auto items = fixtures::new_zealand_items();
  auto mocks = fixtures::new_zealand_mocks();
  const auto report = mocks.pipeline().evaluate_country(items, "New Zealand");
  REQUIRE(report.per_question.size() == 1);
  const auto& q = report.per_question[0];
  CHECK(q.answer == "A");
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(q.p_gen[i] - kTable4Pred[i]) < 1e-12);
  CHECK(std::abs(q.s_align - 0.9886511772117591) < 1e-6);
  CHECK(std::abs(report.mean_s_align - 0.9886511772117591) < 1e-6);
  REQUIRE(report.pearson_r.has_value());

  // Each continent agent saw its own perspective prompt; meta got the tagged drafts.
  for (std::size_t i = 0; i < kContinentCount; ++i) {
    const auto calls = mocks.agents[i]->calls();
    REQUIRE(calls.size() == 1);
    CHECK(calls[0].prompt.find(std::string(kContinents[i]) + " culture perspective") != std::string::npos);
    CHECK(calls[0].prompt.find("New Zealand") != std::string::npos);
  }
  const auto meta = mocks.meta->calls();
  REQUIRE(meta.size() == 2);
  CHECK(meta[0].prompt.find("Oceania Culture perspective: From an Oceania perspective") != std::string::npos);
  CHECK(meta[1].prompt.find(meta[0].response) != std::string::npos);
}

TEST_CASE("reports are byte-identical across runs") {
  const auto items = fixtures::new_zealand_items();
  std::string first;
  for (int run = 0; run < 3; ++run) {
    auto mocks = fixtures::new_zealand_mocks();
    const auto text = dump_json(mocks.pipeline().evaluate_country(items, "New Zealand").to_json());
    if (run == 0)
      first = text;
    else
      CHECK(text == first);
  }
  const auto j = json::parse(first);
  for (const char* key : {"country", "per_question", "mean_s_align", "pearson_r", "config_fingerprint"})
    CHECK(j.contains(key));
}

TEST_CASE("a perfect oracle scores 1") {
  const auto items = fixtures::synthetic_items("Japan", 6, 3);
  auto mocks = fixtures::oracle_mocks(items);
  const auto report = mocks.pipeline().evaluate_country(items, "Japan");
  CHECK(std::abs(report.mean_s_align - 1.0) < 1e-12);
  REQUIRE(report.pearson_r.has_value());
  CHECK(std::abs(*report.pearson_r - 1.0) < 1e-12);
  const auto j = json::parse(dump_json(report.to_json()));
  CHECK(j["mean_s_align"] == 1.0);
  CHECK(j["pearson_r"] == 1.0);
}

TEST_CASE("undefined pearson serializes as null") {
  const std::vector<json> rows{
      {{"question", "Flat?"}, {"options", {"a", "b"}}, {"selections", {{"Chile", {0.5, 0.5}}}}}};
  const auto items = parse_opinion_items(rows, "Chile");
  auto mocks = fixtures::oracle_mocks(items);
  const auto report = mocks.pipeline().evaluate_country(items, "Chile");
  CHECK_FALSE(report.pearson_r.has_value());
  CHECK(report.to_json()["pearson_r"].is_null());
}

TEST_CASE("ablation flags change only the intended stage") {
  const auto items = fixtures::new_zealand_items();

  SUBCASE("full pipeline") {
    auto m = fixtures::new_zealand_mocks();
    m.pipeline().run_item(items[0]);
    CHECK(m.agent_calls() == 5);
    CHECK(m.meta->call_count() == 2);
    CHECK(count_prompts_with(*m.meta, "Drafts:") == 1);
  }
  SUBCASE("no regulate: drafts go straight to the final stage") {
    auto m = fixtures::new_zealand_mocks();
    m.pipeline({false, true, false}).run_item(items[0]);
    CHECK(m.agent_calls() == 5);
    REQUIRE(m.meta->call_count() == 1);
    CHECK(count_prompts_with(*m.meta, "Drafts:") == 0);
    CHECK(count_prompts_with(*m.meta, "Africa Culture perspective:") == 1);
  }
  SUBCASE("no draft: the meta agent reasons alone") {
    auto m = fixtures::new_zealand_mocks();
    m.meta->add_rule({"Reason about how people"}, {"Direct reasoning. A. Freedom"});
    m.pipeline({true, false, false}).run_item(items[0]);
    CHECK(m.agent_calls() == 0);
    REQUIRE(m.meta->call_count() == 2);
    CHECK(count_prompts_with(*m.meta, "Reason about how people") == 1);
    CHECK(m.meta->calls()[1].prompt.find("Direct reasoning.") != std::string::npos);
  }
  SUBCASE("no moerges: the unfused meta answers") {
    auto m = fixtures::new_zealand_mocks();
    auto unfused = fixtures::new_zealand_mocks().meta;
    PipelineOptions opts;
    opts.flags.no_moerges = true;
    Pipeline p(m.agent_set(), fixed_meta(m.meta), fixed_meta(unfused), TemplateSet::builtin(), opts);
    p.run_item(items[0]);
    CHECK(m.meta->call_count() == 0);
    CHECK(unfused->call_count() == 2);
    CHECK(m.agent_calls() == 5);
  }
}

TEST_CASE("both draft and regulate disabled is the prompting baseline") {
  const auto items = fixtures::new_zealand_items();
  auto ablated = fixtures::new_zealand_mocks();
  const auto a = ablated.pipeline({true, true, false}).run_item(items[0]);
  auto baseline = fixtures::new_zealand_mocks();
  const auto b = prompting_baseline(*baseline.meta, items[0], TemplateSet::builtin());
  CHECK(ablated.transcript() == baseline.transcript());
  CHECK(a.p_gen == b.p_gen);
  CHECK(ablated.agent_calls() == 0);
  REQUIRE(ablated.meta->call_count() == 1);
  CHECK(ablated.meta->calls()[0].prompt.find("diverse values and perspectives") != std::string::npos);
}

TEST_CASE("flags change the fingerprint") {
  auto m = fixtures::new_zealand_mocks();
  CHECK(m.pipeline().fingerprint() == m.pipeline().fingerprint());
  CHECK(m.pipeline().fingerprint() != m.pipeline({true, false, false}).fingerprint());
}

TEST_CASE("a failing agent aborts the draft stage") {
  const auto items = fixtures::new_zealand_items();
  auto m = fixtures::new_zealand_mocks();
  m.agents[3] = std::make_shared<ScriptedMock>("Europe");
  m.agents[3]->add_rule({""}, {"unused"}, true);
  try {
    m.pipeline().evaluate_country(items, "New Zealand");
    FAIL("expected BackendFailure");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::BackendFailure);
    CHECK(e.context().find("nz-freedom-equality") != std::string::npos);
    CHECK(e.context().find("Europe") != std::string::npos);
  }
  CHECK(m.meta->call_count() == 0);
}

TEST_CASE("echoing agents pass their prompts through unchanged") {
  AgentSet agents;
  for (std::size_t i = 0; i < kContinentCount; ++i) {
    auto a = std::make_shared<ScriptedMock>(std::string(kContinents[i]));
    a->set_echo(true);
    agents[i] = a;
  }
  const CountryQuery cq{"Kenya", "Question: Is tradition important?"};
  const auto d = draft(agents, cq, TemplateSet::builtin());
  for (std::size_t i = 0; i < kContinentCount; ++i) {
    CHECK(d.entries[i].continent == kContinents[i]);
    CHECK(d.entries[i].response ==
          render(TemplateSet::builtin().get("draft"),
                 {{"continent", std::string(kContinents[i])}, {"country", "Kenya"}, {"query", cq.query}}));
  }
  CHECK(d.render().find("Asia Culture perspective: ") != std::string::npos);
}

TEST_CASE("draft validation") {
  Draft d;
  CHECK(code_of([&] { d.validate(); }) == ErrorCode::InvalidDraft);
  for (auto c : kContinents) d.entries.push_back({std::string(c), "x"});
  CHECK_NOTHROW(d.validate());
  std::swap(d.entries[0], d.entries[1]);
  CHECK(code_of([&] { d.validate(); }) == ErrorCode::InvalidDraft);
}

TEST_CASE("unparseable replies are re-prompted, then rejected") {
  const auto item = fixtures::new_zealand_items()[0];
  const auto tmpl = TemplateSet::builtin();

  ScriptedMock never("meta");
  never.set_default("I would rather not say.");
  CHECK(code_of([&] { final_decision(never, std::string("ctx"), item, tmpl); }) ==
        ErrorCode::UnparseableDistribution);
  CHECK(never.call_count() == 4);

  ScriptedMock late("meta");
  late.add_rule({"JSON array"}, {"Mostly freedom.", "[0.7, 0.2, 0.1, 0.0]"});
  const auto d = final_decision(late, std::string("ctx"), item, tmpl);
  CHECK(d.attempts == 2);
  CHECK(d.answer == "A");
  CHECK(d.answer_text == "Freedom");
  const auto calls = late.calls();
  CHECK(calls[1].prompt.find("[assistant]\nMostly freedom.") != std::string::npos);

  ScriptedMock wrong_len("meta");
  wrong_len.set_default("[0.5, 0.5]");
  CHECK(code_of([&] { final_decision(wrong_len, std::nullopt, item, tmpl, 1); }) ==
        ErrorCode::UnparseableDistribution);
  CHECK(wrong_len.call_count() == 2);
}

TEST_CASE("distribution parsing") {
  CHECK(parse_distribution("[0.25, 0.75]", 2) == std::vector<double>{0.25, 0.75});
  CHECK(parse_distribution("Sure: [1, 3] as asked", 2) == std::vector<double>{1, 3});
  CHECK(parse_distribution("[0.1, 0.2, 0.7]", 2) == std::nullopt);
  CHECK(parse_distribution("[-0.1, 1.1]", 2) == std::nullopt);
  CHECK(parse_distribution("none", 2) == std::nullopt);
  CHECK(parse_distribution("[\"a\", \"b\"]", 2) == std::nullopt);
  CHECK(parse_distribution("[0, 0]", 2) == std::vector<double>{0, 0});
}

TEST_CASE("all-zero distributions are rejected") {
  const auto item = fixtures::new_zealand_items()[0];
  ScriptedMock zero("meta");
  zero.set_default("[0, 0, 0, 0]");
  CHECK(code_of([&] { final_decision(zero, std::nullopt, item, TemplateSet::builtin()); }) == ErrorCode::AllZero);
}

TEST_CASE("evaluate_country guards") {
  auto m = fixtures::new_zealand_mocks();
  CHECK(code_of([&] { m.pipeline().evaluate_country({}, "New Zealand"); }) == ErrorCode::EmptyItems);
  const auto items = fixtures::new_zealand_items();
  CHECK(code_of([&] { m.pipeline().evaluate_country(items, "Chile"); }) == ErrorCode::InvalidItem);
}

TEST_CASE("the local reference backend scores options into a distribution") {
  auto model = std::make_shared<const Transformer>(init_model(support::tiny_config(16, 1, 2, 256)));
  LocalReference backend(model, 8);
  const std::vector<std::string> options{"Freedom", "Equality", "Don't know"};
  const auto p = backend.score_options("Which matters more?", options);
  REQUIRE(p.has_value());
  double s = 0;
  for (double v : *p) {
    CHECK(v > 0.0);
    s += v;
  }
  CHECK(std::abs(s - 1.0) < 1e-9);
  CHECK(*p == *backend.score_options("Which matters more?", options));

  const auto item = fixtures::new_zealand_items()[0];
  const auto d = final_decision(backend, std::nullopt, item, TemplateSet::builtin());
  CHECK(d.attempts == 0);
  CHECK(d.p_gen.size() == 4);

  const std::vector<ChatMessage> msgs{{"user", "hello"}};
  CHECK(backend.chat(msgs) == backend.chat(msgs));
}

TEST_CASE("a fused local pipeline is deterministic") {
  const auto base = init_model(support::tiny_config(16, 1, 2, 256));
  const auto experts = support::ffn_experts(base, 5);
  std::vector<std::string> prompts;
  for (auto c : kContinents) prompts.push_back(continent_system_prompt(c));
  GateConfig cfg;
  cfg.gate = init_gate(base, prompts);
  auto provider = std::make_shared<FusedMetaProvider>(base, experts, cfg, 8);
  auto unfused = std::make_shared<LocalReference>(std::make_shared<const Transformer>(base), 8);

  const auto items = fixtures::synthetic_items("Chile", 3, 9);
  auto run = [&] {
    auto m = fixtures::oracle_mocks(items);
    Pipeline p(m.agent_set(), [&](const CountryQuery& cq) { return provider->backend_for(cq); },
               fixed_meta(unfused), TemplateSet::builtin());
    return dump_json(p.evaluate_country(items, "Chile").to_json());
  };
  const auto a = run();
  CHECK(a == run());
  const auto j = json::parse(a);
  for (const auto& q : j["per_question"]) {
    double s = 0;
    for (double v : q["p_gen"]) s += v;
    CHECK(std::abs(s - 1.0) < 1e-6);
  }
}

TEST_CASE("a one-hot gate reproduces the selected expert") {
  const auto base = init_model(support::tiny_config(16, 2, 2, 64));
  const auto experts = support::ffn_experts(base, 11);
  std::vector<double> gate(5, 0.0);
  gate[2] = 1.0;
  const auto fused = moerges_fuse(base, experts, gate);
  const auto ffn = select_ffn(base, kDefaultFfnPattern);
  for (const auto& [name, t] : fused.tensors) {
    if (ffn.contains(name))
      CHECK(bit_equal(t, experts[2].params.at(name)));
    else
      CHECK(bit_equal(t, base.at(name)));
  }
  const Transformer f(fused), e(experts[2].params);
  const Tokens toks{token::kBos, 'k', 'i', 'a', ' ', 'o', 'r', 'a'};
  const auto a = f.forward(toks), b = e.forward(toks);
  for (std::size_t i = 0; i < a.logits.data.size(); ++i) CHECK(std::abs(a.logits.data[i] - b.logits.data[i]) < 1e-5);
}

TEST_CASE("routing is conditioned on the country preamble") {
  const CountryQuery cq{"Chile", "Question: Is work important?"};
  CHECK(route_text(cq, RouteCondition::CountryOnly) == country_preamble("Chile"));
  CHECK(route_text(cq, RouteCondition::FullPrompt) == country_preamble("Chile") + "\n" + cq.query);
}

TEST_CASE("per-country mode fuses once per country") {
  const auto base = init_model(support::tiny_config(16, 1, 2, 256));
  const auto experts = support::ffn_experts(base, 2);
  std::vector<std::string> prompts;
  for (auto c : kContinents) prompts.push_back(continent_system_prompt(c));
  GateConfig cfg;
  cfg.gate = init_gate(base, prompts);

  cfg.mode = GateMode::PerCountry;
  FusedMetaProvider per_country(base, experts, cfg);
  const auto a1 = per_country.model_for({"Chile", "Question: one?"});
  const auto a2 = per_country.model_for({"Chile", "Question: two?"});
  per_country.model_for({"Kenya", "Question: one?"});
  CHECK(a1 == a2);
  CHECK(per_country.builds() == 2);

  cfg.mode = GateMode::PerRequest;
  FusedMetaProvider per_request(base, experts, cfg);
  per_request.model_for({"Chile", "Question: one?"});
  per_request.model_for({"Chile", "Question: one?"});
  CHECK(per_request.builds() == 2);
  const auto g1 = per_request.gate_for({"Chile", "Question: one?"});
  const auto g2 = per_request.gate_for({"Chile", "Question: a rather different question about family?"});
  CHECK(g1.values != g2.values);
  double s = 0;
  for (double v : g1.values) s += v;
  CHECK(std::abs(s - 1.0) < 1e-9);
}
