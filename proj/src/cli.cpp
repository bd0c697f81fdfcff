#include "palette/cli.hpp"

#include <iostream>
#include <memory>
#include <optional>

#include <CLI11.hpp>

#include "palette/align.hpp"
#include "palette/backend.hpp"
#include "palette/error.hpp"
#include "palette/gate.hpp"
#include "palette/http.hpp"
#include "palette/merge.hpp"
#include "palette/metrics.hpp"
#include "palette/pipeline.hpp"
#include "palette/synth.hpp"

#ifndef PALETTE_VERSION
#define PALETTE_VERSION "0.0.0"
#endif
#ifndef PALETTE_GIT_HASH
#define PALETTE_GIT_HASH "unknown"
#endif

namespace palette {

std::string version_string() { return std::string("palette ") + PALETTE_VERSION + " (" + PALETTE_GIT_HASH + ")"; }

namespace {

struct Globals {
  std::uint64_t seed = 42;
};

void write_json(const std::string& path, const json& j, std::ostream& out) {
  const std::string text = dump_json(j) + "\n";
  if (path.empty() || path == "-") {
    out << text;
  } else {
    atomic_write(path, text);
  }
}

// LABEL=PATH, or a bare PATH labelled by position.
std::vector<Expert> load_experts(const std::vector<std::string>& specs) {
  std::vector<Expert> out;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& s = specs[i];
    const auto eq = s.find('=');
    Expert e;
    if (eq == std::string::npos) {
      e.label = specs.size() == kContinentCount ? std::string(kContinents[i]) : "expert" + std::to_string(i);
      e.params = load_checkpoint(s);
    } else {
      e.label = s.substr(0, eq);
      e.params = load_checkpoint(s.substr(eq + 1));
    }
    out.push_back(std::move(e));
  }
  return out;
}

// Experts given for the meta agent, reordered to the fixed continental order.
std::vector<Expert> continent_experts(const std::vector<std::string>& specs) {
  auto experts = load_experts(specs);
  if (experts.size() != kContinentCount) throw Error(ErrorCode::TooFewExperts, "exactly 5 experts are required");
  std::vector<Expert> ordered(kContinentCount);
  std::vector<bool> seen(kContinentCount, false);
  for (auto& e : experts) {
    const auto c = continent_index(e.label);
    if (seen[c]) throw Error(ErrorCode::LabelError, "duplicate expert label", e.label);
    seen[c] = true;
    ordered[c] = std::move(e);
  }
  return ordered;
}

std::vector<double> parse_list_option(const std::vector<std::string>& values) {
  std::vector<double> out;
  for (const auto& v : values) {
    auto part = parse_double_list(v);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

void add_model_init(CLI::App& app, Globals& g, std::ostream&) {
  auto* model = app.add_subcommand("model", "Reference model utilities");
  model->require_subcommand(1);
  auto* init = model->add_subcommand("init", "Write a seeded random reference model");
  auto cfg = std::make_shared<ModelConfig>();
  auto out = std::make_shared<std::string>();
  init->add_option("-o,--out", *out, "Output checkpoint")->required();
  init->add_option("--d-model", cfg->d_model, "Hidden size")->capture_default_str();
  init->add_option("--layers", cfg->n_layers, "Number of layers")->capture_default_str();
  init->add_option("--heads", cfg->n_heads, "Attention heads")->capture_default_str();
  init->add_option("--max-seq", cfg->max_seq, "Context length")->capture_default_str();
  init->add_option("--vocab", cfg->vocab_size, "Vocabulary size")->capture_default_str();
  init->callback([&g, cfg, out] {
    cfg->seed = g.seed;
    save_checkpoint(init_model(*cfg), *out);
  });
}

void add_merge(CLI::App& app, Globals&, std::ostream&) {
  struct Opts {
    std::string method, base, out, ffn_pattern{kDefaultFfnPattern};
    std::vector<std::string> experts, coeffs, gate;
    double density = 0.5, scale = 1.0;
    bool delta_mode = false;
  };
  auto o = std::make_shared<Opts>();
  auto* cmd = app.add_subcommand("merge", "Merge expert checkpoints onto a base");
  cmd->add_option("--method", o->method, "task | ties | stock | moerges")
      ->required()
      ->check(CLI::IsMember({"task", "ties", "stock", "moerges"}));
  cmd->add_option("--base", o->base, "Base checkpoint")->required();
  cmd->add_option("--expert", o->experts, "Expert as LABEL=PATH (repeatable)")->required();
  cmd->add_option("--coeff", o->coeffs, "Task arithmetic coefficients (comma list or repeated)");
  cmd->add_option("--density", o->density, "Ties keep fraction")->capture_default_str();
  cmd->add_option("--scale", o->scale, "Ties scale")->capture_default_str();
  cmd->add_option("--gate", o->gate, "MoErges gate weights g1,...,g5");
  cmd->add_option("--ffn-pattern", o->ffn_pattern, "Glob selecting FFN tensors")->capture_default_str();
  cmd->add_flag("--delta-mode", o->delta_mode, "Fuse base + sum g (expert - base)");
  cmd->add_option("-o,--out", o->out, "Output checkpoint")->required();
  cmd->callback([o] {
    const Checkpoint base = load_checkpoint(o->base);
    const auto experts = load_experts(o->experts);
    Checkpoint merged;
    switch (parse_merge_method(o->method)) {
      case MergeMethod::TaskArithmetic: {
        auto coeffs = parse_list_option(o->coeffs);
        if (coeffs.empty()) coeffs.assign(experts.size(), 1.0 / static_cast<double>(experts.size()));
        merged = task_arithmetic(base, experts, coeffs);
        break;
      }
      case MergeMethod::Ties:
        merged = ties_merge(base, experts, o->density, o->scale);
        break;
      case MergeMethod::ModelStock:
        merged = model_stock(base, experts);
        break;
      case MergeMethod::MoErges: {
        const auto gate = parse_list_option(o->gate);
        if (gate.empty()) throw CLI::RequiredError("--gate");
        merged = moerges_fuse(base, experts, gate, MoErgesOptions{o->ffn_pattern, o->delta_mode});
        break;
      }
    }
    save_checkpoint(merged, o->out);
  });
}

std::vector<std::string> load_system_prompts(const std::string& path) {
  std::vector<std::string> prompts;
  if (path.empty()) {
    for (auto c : kContinents) prompts.push_back(continent_system_prompt(c));
    return prompts;
  }
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("bad prompts file: ") + e.what(), path);
  }
  if (j.is_array()) {
    prompts = j.get<std::vector<std::string>>();
  } else if (j.is_object()) {
    for (auto c : kContinents) {
      if (!j.contains(std::string(c))) throw Error(ErrorCode::LabelError, "prompts file lacks a continent", std::string(c));
      prompts.push_back(j[std::string(c)].get<std::string>());
    }
  } else {
    throw Error(ErrorCode::ParseError, "prompts file must be an array or an object", path);
  }
  return prompts;
}

void add_gate(CLI::App& app, Globals&, std::ostream& out) {
  auto* gate = app.add_subcommand("gate", "Continent gate utilities");
  gate->require_subcommand(1);

  struct InitOpts {
    std::string model, prompts, out;
    bool raw = false;
  };
  auto io = std::make_shared<InitOpts>();
  auto* init = gate->add_subcommand("init", "Initialize W_g from system prompt hidden states");
  init->add_option("--model", io->model, "Base model checkpoint")->required();
  init->add_option("--prompts", io->prompts, "JSON array or {continent: prompt} object");
  init->add_flag("--raw", io->raw, "Keep raw (unnormalized) columns");
  init->add_option("-o,--out", io->out, "Output gate checkpoint")->required();
  init->callback([io] {
    const auto prompts = load_system_prompts(io->prompts);
    GateOptions opts;
    opts.normalize_columns = !io->raw;
    save_checkpoint(gate_to_checkpoint(init_gate(load_checkpoint(io->model), prompts, opts)), io->out);
  });

  struct RouteOpts {
    std::string model, gate, prompt;
    double temperature = 1.0;
  };
  auto ro = std::make_shared<RouteOpts>();
  auto* rt = gate->add_subcommand("route", "Print G(P) for a prompt");
  rt->add_option("--model", ro->model, "Base model checkpoint")->required();
  rt->add_option("--gate", ro->gate, "Gate checkpoint")->required();
  rt->add_option("--prompt", ro->prompt, "Prompt text")->required();
  rt->add_option("--temperature", ro->temperature, "Softmax temperature")->capture_default_str();
  rt->callback([ro, &out] {
    const auto g = route_prompt(load_checkpoint(ro->model), gate_from_checkpoint(load_checkpoint(ro->gate)),
                                ro->prompt, ro->temperature);
    json j = json::object();
    for (std::size_t i = 0; i < g.values.size(); ++i) j[g.labels[i]] = json_number(g.values[i]);
    write_json("", j, out);
  });
}

void add_align(CLI::App& app, Globals& g, std::ostream& out) {
  struct Opts {
    std::string model, data, out, report;
    int toy = 0;
    TrainConfig cfg;
    bool true_odds = false, sum_logprob = false;
  };
  auto o = std::make_shared<Opts>();
  auto* cmd = app.add_subcommand("align", "Preference-align a model on continent pairs");
  cmd->add_option("--model", o->model, "Model checkpoint")->required();
  auto* data = cmd->add_option("--data", o->data, "PreferenceRecord JSONL");
  auto* toy = cmd->add_option("--toy", o->toy, "Use the synthetic toy set with N queries (5N records)");
  data->excludes(toy);
  cmd->add_option("--lambda", o->cfg.lambda, "Contrastive weight")->capture_default_str();
  cmd->add_option("--lr", o->cfg.learning_rate, "Learning rate")->capture_default_str();
  cmd->add_option("--epochs", o->cfg.epochs, "Epochs")->capture_default_str();
  cmd->add_option("--batch-size", o->cfg.batch_size, "Batch size")->capture_default_str();
  cmd->add_option("--momentum", o->cfg.momentum, "SGD momentum")->capture_default_str();
  cmd->add_flag("--true-odds", o->true_odds, "Compare log odds instead of log probabilities");
  cmd->add_flag("--sum-logprob", o->sum_logprob, "Use summed instead of per-token mean log-probabilities");
  cmd->add_option("-o,--out", o->out, "Aligned checkpoint")->required();
  cmd->add_option("--report", o->report, "Training report JSON (stdout when omitted)");
  cmd->callback([o, &g, &out, data, toy] {
    if (data->count() == 0 && toy->count() == 0) throw CLI::RequiredError("--data");
    o->cfg.seed = g.seed;
    o->cfg.ratio = o->true_odds ? RatioMode::Odds : RatioMode::Probability;
    o->cfg.norm = o->sum_logprob ? LogprobNorm::Sum : LogprobNorm::Mean;
    const auto records = o->toy > 0 ? make_toy_preferences(o->toy, g.seed) : load_preference_records(o->data);
    auto result = train(load_checkpoint(o->model), records, o->cfg);
    save_checkpoint(result.params, o->out);
    write_json(o->report, result.report.to_json(), out);
  });
}

struct BackendOpts {
  std::string url, model_name, mock_script, model;
  int max_new_tokens = 64;
};

std::shared_ptr<ModelBackend> make_backend(const std::string& kind, const BackendOpts& o, const json& mock_spec,
                                           const std::string& name) {
  if (kind == "remote") {
    if (o.url.empty()) throw CLI::RequiredError("--url");
    return std::make_shared<RemoteChat>(RemoteChatConfig{o.url, o.model_name.empty() ? "default" : o.model_name});
  }
  if (kind == "mock") return ScriptedMock::from_json(mock_spec, name);
  if (o.model.empty()) throw CLI::RequiredError("--model");
  return std::make_shared<LocalReference>(std::make_shared<const Transformer>(load_checkpoint(o.model)),
                                          o.max_new_tokens);
}

json load_mock_script(const std::string& path) {
  if (path.empty()) throw CLI::RequiredError("--mock-script");
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("bad mock script: ") + e.what(), path);
  }
}

// {"agents": {continent: spec}, "agent": spec, "meta": spec, "meta_unfused": spec}
json mock_section(const json& script, const std::string& key, const std::string& fallback = {}) {
  if (script.contains(key)) return script[key];
  if (!fallback.empty() && script.contains(fallback)) return script[fallback];
  return json::object();
}

void add_eval(CLI::App& app, Globals&, std::ostream& out) {
  struct Opts {
    std::string country, items, meta_backend, agent_backend, gate, base, out, templates, pooling = "concat";
    std::string route_on = "prompt";
    std::vector<std::string> experts;
    BackendOpts backend;
    PipelineFlags flags;
    bool per_country = false;
    double temperature = 1.0;
    int max_reprompts = 3;
  };
  auto o = std::make_shared<Opts>();
  auto* cmd = app.add_subcommand("eval", "Evaluate one country against opinion survey items");
  cmd->add_option("--country", o->country, "Country key in the items' selections")->required();
  cmd->add_option("--items", o->items, "OpinionItem JSONL")->required();
  cmd->add_option("--meta-backend", o->meta_backend, "local | remote | mock")
      ->required()
      ->check(CLI::IsMember({"local", "remote", "mock"}));
  cmd->add_option("--agent-backend", o->agent_backend, "Continent agents' backend (defaults to --meta-backend)")
      ->check(CLI::IsMember({"local", "remote", "mock"}));
  cmd->add_option("--gate", o->gate, "Gate checkpoint (local meta)");
  cmd->add_option("--base", o->base, "Base model (local meta)");
  cmd->add_option("--expert", o->experts, "Continent expert LABEL=PATH, five times (local)");
  cmd->add_option("--url", o->backend.url, "Remote chat base URL");
  cmd->add_option("--model-name", o->backend.model_name, "Remote model name");
  cmd->add_option("--mock-script", o->backend.mock_script, "Mock transcript JSON");
  cmd->add_option("--max-new-tokens", o->backend.max_new_tokens, "Local decode length")->capture_default_str();
  cmd->add_flag("--no-draft", o->flags.no_draft, "Skip the continent drafts");
  cmd->add_flag("--no-regulate", o->flags.no_regulate, "Feed raw drafts to the final decision");
  cmd->add_flag("--no-moerges", o->flags.no_moerges, "Use the unfused base model as meta agent");
  cmd->add_flag("--per-country", o->per_country, "Compute the gate once per country");
  cmd->add_option("--route-on", o->route_on, "prompt | country")->check(CLI::IsMember({"prompt", "country"}));
  cmd->add_option("--temperature", o->temperature, "Gate softmax temperature")->capture_default_str();
  cmd->add_option("--max-reprompts", o->max_reprompts, "Re-prompts on unparseable output")->capture_default_str();
  cmd->add_option("--pearson", o->pooling, "concat | mean")->check(CLI::IsMember({"concat", "mean"}));
  cmd->add_option("--templates", o->templates, "Template directory overriding the builtin set");
  cmd->add_option("-o,--out", o->out, "Report JSON (stdout when omitted)");
  cmd->callback([o, &out] {
    const auto items = load_opinion_items(o->items, o->country);
    const TemplateSet templates = o->templates.empty() ? TemplateSet::builtin() : TemplateSet::with_overrides(o->templates);
    const std::string agent_kind = o->agent_backend.empty() ? o->meta_backend : o->agent_backend;
    json script = json::object();
    if (o->meta_backend == "mock" || agent_kind == "mock") script = load_mock_script(o->backend.mock_script);

    std::vector<Expert> experts;
    auto need_experts = [&] {
      if (experts.empty()) {
        if (o->experts.empty()) throw CLI::RequiredError("--expert");
        experts = continent_experts(o->experts);
      }
    };

    AgentSet agents;
    if (!o->flags.no_draft) {
      for (std::size_t i = 0; i < kContinentCount; ++i) {
        const std::string label(kContinents[i]);
        if (agent_kind == "local") {
          need_experts();
          agents[i] = std::make_shared<LocalReference>(std::make_shared<const Transformer>(experts[i].params),
                                                       o->backend.max_new_tokens);
        } else {
          json spec = script.contains("agents") && script["agents"].contains(label) ? script["agents"][label]
                                                                                  : mock_section(script, "agent");
          agents[i] = make_backend(agent_kind, o->backend, spec, label);
        }
      }
    }

    MetaSource meta, unfused;
    json cfg = {{"meta_backend", o->meta_backend}, {"agent_backend", agent_kind}};
    if (o->meta_backend == "local") {
      if (o->base.empty()) throw CLI::RequiredError("--base");
      Checkpoint base = load_checkpoint(o->base);
      unfused = fixed_meta(std::make_shared<LocalReference>(std::make_shared<const Transformer>(base),
                                                            o->backend.max_new_tokens));
      if (!o->flags.no_moerges) {
        if (o->gate.empty()) throw CLI::RequiredError("--gate");
        need_experts();
        GateConfig gc;
        gc.gate = gate_from_checkpoint(load_checkpoint(o->gate));
        gc.temperature = o->temperature;
        gc.mode = o->per_country ? GateMode::PerCountry : GateMode::PerRequest;
        gc.condition = o->route_on == "country" ? RouteCondition::CountryOnly : RouteCondition::FullPrompt;
        auto provider = std::make_shared<FusedMetaProvider>(base, experts, gc, o->backend.max_new_tokens);
        meta = [provider](const CountryQuery& cq) { return provider->backend_for(cq); };
        cfg["gate_mode"] = o->per_country ? "per-country" : "per-request";
        cfg["route_on"] = o->route_on;
        cfg["temperature"] = json_number(o->temperature);
      } else {
        meta = unfused;
      }
      cfg["base"] = fnv1a_hex(read_file(o->base));
    } else {
      meta = fixed_meta(make_backend(o->meta_backend, o->backend, mock_section(script, "meta"), "meta"));
      unfused = fixed_meta(
          make_backend(o->meta_backend, o->backend, mock_section(script, "meta_unfused", "meta"), "meta_unfused"));
      if (o->meta_backend == "remote") cfg["model"] = o->backend.model_name;
    }

    PipelineOptions popts;
    popts.flags = o->flags;
    popts.max_reprompts = o->max_reprompts;
    popts.pooling = o->pooling == "mean" ? PearsonPooling::MeanPerQuestion : PearsonPooling::Concatenate;
    popts.config = cfg;
    Pipeline pipeline(agents, meta, unfused, templates, popts);
    write_json(o->out, pipeline.evaluate_country(items, o->country).to_json(), out);
  });
}

void add_synth(CLI::App& app, Globals& g, std::ostream& out) {
  auto* synth = app.add_subcommand("synth", "Pentachromatic data synthesis");
  synth->require_subcommand(1);

  struct RunOpts {
    std::string queries, backend = "remote", out, templates;
    BackendOpts b;
    SynthConfig cfg;
  };
  auto ro = std::make_shared<RunOpts>();
  auto* run = synth->add_subcommand("run", "Run the four synthesis steps");
  run->add_option("--queries", ro->queries, "Query JSONL {id, query}")->required();
  run->add_option("--backend", ro->backend, "remote | mock | local")->check(CLI::IsMember({"remote", "mock", "local"}));
  run->add_option("--url", ro->b.url, "Remote chat base URL");
  run->add_option("--model-name", ro->b.model_name, "Remote model name");
  run->add_option("--mock-script", ro->b.mock_script, "Mock transcript JSON");
  run->add_option("--model", ro->b.model, "Local model checkpoint");
  run->add_option("--max-rounds", ro->cfg.max_rounds, "Self-judge round cap")->capture_default_str();
  run->add_option("--workers", ro->cfg.workers, "Concurrent cells")->capture_default_str();
  run->add_option("--templates", ro->templates, "Template directory overriding the builtin set");
  run->add_option("--out", ro->out, "Output directory")->required();
  run->callback([ro, &g, &out] {
    ro->cfg.seed = g.seed;
    const auto queries = load_synth_queries(ro->queries);
    const TemplateSet templates =
        ro->templates.empty() ? TemplateSet::builtin() : TemplateSet::with_overrides(ro->templates);
    json script = ro->backend == "mock" ? load_mock_script(ro->b.mock_script) : json::object();
    auto backend = make_backend(ro->backend, ro->b, script, "synth");
    SynthStore store(ro->out);
    const auto records = run_synthesis(*backend, queries, ro->cfg, templates, store);
    write_synth_records(ro->out, records);
    int approved = 0;
    for (const auto& r : records) approved += r.approved ? 1 : 0;
    write_json("", {{"records", records.size()}, {"approved", approved}, {"out", ro->out}}, out);
  });

  struct PairOpts {
    std::vector<std::string> records;
    std::string out;
  };
  auto po = std::make_shared<PairOpts>();
  auto* pairs = synth->add_subcommand("pairs", "Build PreferenceRecord JSONL from synthesis records");
  pairs->add_option("--records", po->records, "Record files or output directories")->required();
  pairs->add_option("-o,--out", po->out, "PreferenceRecord JSONL")->required();
  pairs->callback([po, &out] {
    std::vector<SynthRecord> records;
    for (const auto& p : po->records) {
      std::vector<std::filesystem::path> files;
      if (std::filesystem::is_directory(p)) {
        for (auto c : kContinents) files.push_back(std::filesystem::path(p) / ("records_" + std::string(c) + ".jsonl"));
      } else {
        files.emplace_back(p);
      }
      for (const auto& f : files) {
        auto part = load_synth_records(f);
        records.insert(records.end(), part.begin(), part.end());
      }
    }
    const auto prefs = build_preference_pairs(records);
    atomic_write(po->out, preference_records_jsonl(prefs));
    write_json("", count_pairs(prefs).to_json(), out);
  });

  struct ImportOpts {
    std::string input, out;
  };
  auto imp = std::make_shared<ImportOpts>();
  auto* prism = synth->add_subcommand("import-prism", "Convert PRISM questions to query JSONL");
  prism->add_option("--input", imp->input, "PRISM CSV or JSONL")->required();
  prism->add_option("-o,--out", imp->out, "Query JSONL")->required();
  prism->callback([imp, &out] {
    const auto queries = import_prism(imp->input);
    std::string text;
    for (const auto& q : queries) text += dump_json({{"id", q.id}, {"query", q.query}}, -1) + "\n";
    atomic_write(imp->out, text);
    write_json("", {{"queries", queries.size()}}, out);
  });

  auto n = std::make_shared<std::uint64_t>(0);
  auto* count = synth->add_subcommand("count", "Dataset arithmetic for N queries");
  count->add_option("--queries", *n, "Number of queries")->required();
  count->callback([n, &out] { write_json("", count_pairs(*n).to_json(), out); });
}

void add_metrics(CLI::App& app, Globals&, std::ostream& out) {
  auto* m = app.add_subcommand("metrics", "Evaluation metrics");
  m->require_subcommand(1);

  struct PairOpts {
    std::string a, b;
  };
  auto pa = std::make_shared<PairOpts>();
  auto* al = m->add_subcommand("align", "S_align between two distributions");
  al->add_option("--gen", pa->a, "Generated distribution, comma list")->required();
  al->add_option("--gold", pa->b, "Gold distribution, comma list")->required();
  al->callback([pa, &out] {
    const auto gen = normalize_distribution(parse_double_list(pa->a));
    const auto gold = normalize_distribution(parse_double_list(pa->b));
    write_json("", {{"s_align", json_number(alignment_score(gen, gold))}}, out);
  });

  auto pk = std::make_shared<PairOpts>();
  auto* k = m->add_subcommand("kl", "KL divergence in bits");
  k->add_option("--p", pk->a, "Comma list")->required();
  k->add_option("--q", pk->b, "Comma list")->required();
  k->callback([pk, &out] {
    write_json("", {{"kl_bits", json_number(kl(parse_double_list(pk->a), parse_double_list(pk->b)))}}, out);
  });

  auto pp = std::make_shared<PairOpts>();
  auto* pr = m->add_subcommand("pearson", "Sample Pearson correlation");
  pr->add_option("--x", pp->a, "Comma list")->required();
  pr->add_option("--y", pp->b, "Comma list")->required();
  pr->callback([pp, &out] {
    const auto r = pearson(parse_double_list(pp->a), parse_double_list(pp->b));
    write_json("", {{"pearson_r", r ? json_number(*r) : json(nullptr)}}, out);
  });

  struct SemOpts {
    std::string url, gold, llm;
    int retries = 3;
  };
  auto so = std::make_shared<SemOpts>();
  auto* sem = m->add_subcommand("semantic", "NLI consistency score via a scorer endpoint");
  sem->add_option("--url", so->url, "Scorer base URL")->required();
  sem->add_option("--gold", so->gold, "Gold response")->required();
  sem->add_option("--llm", so->llm, "Model response")->required();
  sem->add_option("--retries", so->retries, "Retries on transient failure")->capture_default_str();
  sem->callback([so, &out] {
    NliScorerEndpoint ep;
    ep.base_url = so->url;
    ep.max_retries = so->retries;
    write_json("", {{"s_semantic", json_number(semantic_score(ep, so->gold, so->llm))}}, out);
  });

  struct ServeOpts {
    int port = 8089;
    std::optional<double> fixed;
  };
  auto sv = std::make_shared<ServeOpts>();
  auto* serve = m->add_subcommand("serve-mock", "Serve the token-overlap mock scorer");
  serve->add_option("--port", sv->port, "Loopback port")->capture_default_str();
  serve->add_option("--fixed-score", sv->fixed, "Always return this score");
  serve->callback([sv] {
    LocalServer server;
    install_mock_scorer(server, sv->fixed);
    log::info("mock scorer on http://127.0.0.1:" + std::to_string(sv->port));
    server.run(sv->port);
  });
}

void print_error(std::ostream& err, std::string_view code, const std::string& message, const std::string& context) {
  err << dump_json({{"code", code}, {"message", message}, {"context", context}}, -1) << "\n";
}

}  // namespace

int dispatch(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cultural alignment toolkit: merging, gating, preference training, evaluation and data synthesis",
               "palette"};
  app.require_subcommand(1);
  app.set_version_flag("--version", version_string());
  app.set_config("--config", "", "TOML/INI file with option defaults");
  Globals g;
  app.add_option("--seed", g.seed, "Seed for every seeded component")->capture_default_str();
  bool verbose = false, quiet = false;
  auto* vflag = app.add_flag("-v,--verbose", verbose, "Log progress");
  app.add_flag("-q,--quiet", quiet, "Suppress warnings")->excludes(vflag);
  app.fallthrough();

  add_model_init(app, g, out);
  add_merge(app, g, out);
  add_gate(app, g, out);
  add_align(app, g, out);
  add_eval(app, g, out);
  add_synth(app, g, out);
  add_metrics(app, g, out);

  std::vector<std::string> argv_store;
  argv_store.emplace_back("palette");
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : argv_store) argv.push_back(s.data());

  // Flags are bound before subcommand callbacks run, so the sink sees them.
  struct SinkGuard {
    log::Sink previous;
    ~SinkGuard() { log::set_sink(std::move(previous)); }
  } guard{log::set_sink([&](std::string_view level, std::string_view message) {
    if (quiet || (level == "info" && !verbose)) return;
    err << "[" << level << "] " << message << "\n";
  })};
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, err, err);
    return 1;
  } catch (const Error& e) {
    print_error(err, to_string(e.code()), e.what(), e.context());
    return 2;
  } catch (const std::exception& e) {
    print_error(err, "RuntimeError", e.what(), "");
    return 2;
  }
  return 0;
}

}  // namespace palette
