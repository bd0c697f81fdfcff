#include "palette/synth.hpp"

#include <algorithm>
#include <future>
#include <set>

#include "palette/error.hpp"
#include "palette/gate.hpp"

namespace palette {

std::vector<SynthQuery> load_synth_queries(const std::filesystem::path& path) {
  std::vector<SynthQuery> out;
  std::set<std::string> seen;
  for (const auto& row : read_jsonl(path)) {
    SynthQuery q;
    try {
      q.id = row.at("id").is_string() ? row["id"].get<std::string>() : row["id"].dump();
      q.query = row.at("query").get<std::string>();
    } catch (const json::exception& e) {
      throw Error(ErrorCode::ParseError, std::string("bad query row: ") + e.what(), path.string());
    }
    if (q.query.empty()) throw Error(ErrorCode::EmptyPrompt, "empty query", q.id);
    if (!seen.insert(q.id).second) throw Error(ErrorCode::ParseError, "duplicate query id", q.id);
    out.push_back(std::move(q));
  }
  return out;
}

namespace {

// RFC 4180 records: quoted fields may hold commas, quotes and newlines.
std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      if (any || !field.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
      }
      row.clear();
      field.clear();
      any = false;
    } else {
      field.push_back(c);
      any = true;
    }
  }
  if (quoted) throw Error(ErrorCode::ParseError, "unterminated quoted CSV field");
  if (any || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

const std::vector<std::string> kIdColumns = {"conversation_id", "id", "question_id"};
const std::vector<std::string> kTextColumns = {"opening_prompt", "query", "question", "prompt"};

}  // namespace

std::vector<SynthQuery> import_prism(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  std::vector<SynthQuery> out;
  const auto first = text.find_first_not_of(" \t\r\n");
  const bool jsonl = path.extension() == ".jsonl" || path.extension() == ".json" ||
                     (first != std::string::npos && text[first] == '{');
  if (jsonl) {
    std::size_t n = 0;
    for (const auto& row : read_jsonl(path)) {
      ++n;
      SynthQuery q;
      for (const auto& c : kIdColumns)
        if (row.contains(c) && !row[c].is_null()) {
          q.id = row[c].is_string() ? row[c].get<std::string>() : row[c].dump();
          break;
        }
      for (const auto& c : kTextColumns)
        if (row.contains(c) && row[c].is_string()) {
          q.query = row[c].get<std::string>();
          break;
        }
      if (q.id.empty()) q.id = "prism-" + std::to_string(n);
      if (!q.query.empty()) out.push_back(std::move(q));
    }
    return out;
  }
  const auto rows = parse_csv(text);
  if (rows.empty()) return out;
  const auto& header = rows.front();
  auto find_col = [&](const std::vector<std::string>& names) -> std::ptrdiff_t {
    for (const auto& n : names) {
      auto it = std::find(header.begin(), header.end(), n);
      if (it != header.end()) return it - header.begin();
    }
    return -1;
  };
  const auto id_col = find_col(kIdColumns);
  const auto text_col = find_col(kTextColumns);
  if (text_col < 0) throw Error(ErrorCode::ParseError, "no question column in CSV header", path.string());
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (static_cast<std::ptrdiff_t>(row.size()) <= text_col || row[text_col].empty()) continue;
    SynthQuery q;
    q.query = row[text_col];
    q.id = id_col >= 0 && static_cast<std::ptrdiff_t>(row.size()) > id_col && !row[id_col].empty()
               ? row[id_col]
               : "prism-" + std::to_string(r);
    out.push_back(std::move(q));
  }
  return out;
}

void SynthConfig::validate() const {
  if (max_rounds < 1) throw Error(ErrorCode::BadConfig, "max_rounds must be >= 1");
  if (workers < 1) throw Error(ErrorCode::BadConfig, "workers must be >= 1");
}

json SynthRecord::to_json() const {
  return {{"id", id},
          {"query", query},
          {"continent", continent},
          {"base_response", base_response},
          {"feedback", feedback},
          {"aggregated", aggregated},
          {"final", final_response},
          {"rounds_used", rounds_used},
          {"approved", approved}};
}

SynthRecord SynthRecord::from_json(const json& j) {
  SynthRecord r;
  try {
    r.id = j.at("id").get<std::string>();
    r.query = j.value("query", std::string{});
    r.continent = j.at("continent").get<std::string>();
    r.base_response = j.value("base_response", std::string{});
    r.feedback = j.value("feedback", std::string{});
    r.aggregated = j.value("aggregated", std::string{});
    r.final_response = j.at("final").get<std::string>();
    r.rounds_used = j.value("rounds_used", 0);
    r.approved = j.value("approved", false);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("bad synth record: ") + e.what());
  }
  return r;
}

namespace {

std::string call(ModelBackend& backend, const std::string& prompt, const std::string& label) {
  const std::vector<ChatMessage> msgs = {{"user", prompt}};
  try {
    return backend.chat(msgs);
  } catch (const Error& e) {
    throw Error(ErrorCode::BackendFailure, e.what(), label);
  } catch (const std::exception& e) {
    throw Error(ErrorCode::BackendFailure, e.what(), label);
  }
}

std::string through(const StepCache& cache, const std::string& step, const std::function<std::string()>& produce) {
  return cache ? cache(step, produce) : produce();
}

void require_text(const std::string& value, const char* what) {
  if (value.empty()) throw Error(ErrorCode::EmptyPrompt, std::string(what) + " is empty");
}

std::string render_examples(std::span<const Exemplar> exemplars) {
  if (exemplars.empty()) return "(none)";
  std::string out;
  for (const auto& e : exemplars) {
    if (!out.empty()) out += "\n";
    out += "Question: " + e.question + " Answer: " + e.answer;
  }
  return out;
}

}  // namespace

std::string generate_response(ModelBackend& backend, const std::string& query, const std::string& continent,
                              std::span<const Exemplar> exemplars, const TemplateSet& templates) {
  require_text(query, "query");
  (void)continent_index(continent);
  const auto prompt = render(templates.get("synth_generate"),
                             {{"continent", continent}, {"query", query}, {"examples", render_examples(exemplars)}});
  return call(backend, prompt, continent);
}

std::string cross_feedback(ModelBackend& backend, const std::string& response, const std::string& continent,
                           std::span<const std::string> other_continents, const TemplateSet& templates) {
  require_text(response, "response");
  const auto target = continent_index(continent);
  std::set<std::string> given(other_continents.begin(), other_continents.end());
  std::set<std::string> expected;
  for (std::size_t i = 0; i < kContinentCount; ++i)
    if (i != target) expected.emplace(kContinents[i]);
  if (other_continents.size() != 4 || given != expected)
    throw Error(ErrorCode::LabelError, "other continents must be the four non-target labels", continent);
  std::string others;
  for (const auto& c : other_continents) others += (others.empty() ? "" : ", ") + c;
  const auto prompt = render(templates.get("synth_feedback"),
                             {{"continent", continent}, {"other_continents", others}, {"response", response}});
  return call(backend, prompt, continent);
}

std::string aggregate(ModelBackend& backend, const std::string& query, const std::string& base_response,
                      const std::string& feedback, const std::string& continent, const TemplateSet& templates) {
  require_text(query, "query");
  require_text(base_response, "base response");
  require_text(feedback, "feedback");
  (void)continent_index(continent);
  const auto prompt =
      render(templates.get("synth_aggregate"),
             {{"continent", continent}, {"query", query}, {"response", base_response}, {"feedback", feedback}});
  return call(backend, prompt, continent);
}

Verdict parse_verdict(std::string_view reply) {
  if (reply.find("[Revise]") != std::string_view::npos) return Verdict::Revise;
  if (reply.find("[Approved]") != std::string_view::npos) return Verdict::Approved;
  return Verdict::Ambiguous;
}

JudgeOutcome self_judge_refine(ModelBackend& backend, const std::string& query, const std::string& response,
                               const std::string& continent, int max_rounds, const TemplateSet& templates,
                               const StepCache& cache) {
  if (max_rounds < 1) throw Error(ErrorCode::BadConfig, "max_rounds must be >= 1");
  require_text(response, "response");
  (void)continent_index(continent);
  JudgeOutcome out;
  std::string current = response;
  for (int round = 1; round <= max_rounds; ++round) {
    out.rounds_used = round;
    const auto prompt = render(templates.get("synth_judge"),
                               {{"continent", continent}, {"query", query}, {"response", current}});
    const std::string tag = std::to_string(round);
    const std::string reply = through(cache, "judge_" + tag, [&] { return call(backend, prompt, continent); });
    const Verdict v = parse_verdict(reply);
    if (v == Verdict::Approved) {
      out.approved = true;
      break;
    }
    std::string feedback = reply;
    if (v == Verdict::Revise) {
      auto rest = reply.substr(reply.find("[Revise]") + 8);
      const auto b = rest.find_first_not_of(" \t\r\n:");
      rest = b == std::string::npos ? std::string{} : rest.substr(b);
      if (!rest.empty()) feedback = rest;
    } else {
      log::warn("AmbiguousVerdict: judge reply for " + continent + " has no marker, treated as revise");
    }
    current = through(cache, "refine_" + tag,
                      [&] { return aggregate(backend, query, current, feedback, continent, templates); });
  }
  out.final_response = current;
  return out;
}

SynthStore::SynthStore(const std::filesystem::path& dir) : path_(dir / "steps.jsonl") {
  std::filesystem::create_directories(dir);
  if (std::filesystem::exists(path_)) {
    for (const auto& row : read_jsonl(path_)) {
      try {
        done_[key(row.at("id").get<std::string>(), row.at("continent").get<std::string>(),
                  row.at("step").get<std::string>())] = row.at("output").get<std::string>();
      } catch (const json::exception& e) {
        throw Error(ErrorCode::ParseError, std::string("bad step log row: ") + e.what(), path_.string());
      }
    }
  }
  out_.open(path_, std::ios::app | std::ios::binary);
  if (!out_) throw Error(ErrorCode::IoFailure, "cannot open step log", path_.string());
}

std::string SynthStore::key(const std::string& id, const std::string& continent, const std::string& step) {
  return id + '\x1f' + continent + '\x1f' + step;
}

std::optional<std::string> SynthStore::get(const std::string& id, const std::string& continent,
                                           const std::string& step) const {
  std::lock_guard lock(mu_);
  auto it = done_.find(key(id, continent, step));
  if (it == done_.end()) return std::nullopt;
  return it->second;
}

void SynthStore::put(const std::string& id, const std::string& continent, const std::string& step,
                     const std::string& output) {
  const json row = {{"id", id}, {"continent", continent}, {"step", step}, {"output", output}};
  std::lock_guard lock(mu_);
  out_ << dump_json(row, -1) << '\n';
  out_.flush();
  if (!out_) throw Error(ErrorCode::IoFailure, "cannot append to step log", path_.string());
  done_[key(id, continent, step)] = output;
}

std::size_t SynthStore::size() const {
  std::lock_guard lock(mu_);
  return done_.size();
}

namespace {

SynthRecord synthesize_cell(ModelBackend& backend, const SynthQuery& q, const std::string& continent,
                            const SynthConfig& config, const TemplateSet& templates, SynthStore& store) {
  const StepCache cache = [&](const std::string& step, const std::function<std::string()>& produce) {
    if (auto hit = store.get(q.id, continent, step)) return *hit;
    std::string out = produce();
    store.put(q.id, continent, step, out);
    return out;
  };
  std::vector<std::string> others;
  for (auto c : kContinents)
    if (c != continent) others.emplace_back(c);

  // Templates are rendered up front so a bad template fails before any call.
  for (const char* name : {"synth_generate", "synth_feedback", "synth_aggregate", "synth_judge"}) {
    TemplateValues probe;
    for (const auto& p : placeholders(templates.get(name))) probe[p] = "x";
    (void)render(templates.get(name), probe);
  }

  SynthRecord r;
  r.id = q.id;
  r.query = q.query;
  r.continent = continent;
  r.base_response = cache("generate", [&] {
    return generate_response(backend, q.query, continent, config.exemplars, templates);
  });
  r.feedback = cache("feedback", [&] { return cross_feedback(backend, r.base_response, continent, others, templates); });
  r.aggregated = cache("aggregate", [&] {
    return aggregate(backend, q.query, r.base_response, r.feedback, continent, templates);
  });
  auto judged = self_judge_refine(backend, q.query, r.aggregated, continent, config.max_rounds, templates, cache);
  r.final_response = judged.final_response;
  r.rounds_used = judged.rounds_used;
  r.approved = judged.approved;
  return r;
}

}  // namespace

std::vector<SynthRecord> run_synthesis(ModelBackend& backend, std::span<const SynthQuery> queries,
                                       const SynthConfig& config, const TemplateSet& templates, SynthStore& store) {
  config.validate();
  const std::size_t cells = queries.size() * kContinentCount;
  std::vector<SynthRecord> out(cells);
  auto work = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t i = begin; i < cells; i += stride)
      out[i] = synthesize_cell(backend, queries[i / kContinentCount], std::string(kContinents[i % kContinentCount]),
                               config, templates, store);
  };
  if (config.workers == 1) {
    work(0, 1);
    return out;
  }
  std::vector<std::future<void>> futures;
  for (int w = 0; w < config.workers; ++w)
    futures.push_back(std::async(std::launch::async, work, static_cast<std::size_t>(w),
                                 static_cast<std::size_t>(config.workers)));
  std::optional<Error> failure;
  for (auto& f : futures) {
    try {
      f.get();
    } catch (const Error& e) {
      if (!failure) failure = e;
    }
  }
  if (failure) throw *failure;
  return out;
}

void write_synth_records(const std::filesystem::path& dir, std::span<const SynthRecord> records) {
  std::filesystem::create_directories(dir);
  for (auto c : kContinents) {
    std::string text;
    for (const auto& r : records)
      if (r.continent == c) text += dump_json(r.to_json(), -1) + "\n";
    atomic_write(dir / ("records_" + std::string(c) + ".jsonl"), text);
  }
}

std::vector<SynthRecord> load_synth_records(const std::filesystem::path& path) {
  std::vector<SynthRecord> out;
  for (const auto& row : read_jsonl(path)) out.push_back(SynthRecord::from_json(row));
  return out;
}

std::vector<PreferenceRecord> build_preference_pairs(std::span<const SynthRecord> records) {
  std::vector<std::string> order;
  std::map<std::string, std::array<const SynthRecord*, kContinentCount>> grouped;
  for (const auto& r : records) {
    const auto c = continent_index(r.continent);
    auto [it, fresh] = grouped.try_emplace(r.id);
    if (fresh) {
      it->second.fill(nullptr);
      order.push_back(r.id);
    }
    if (it->second[c])
      throw Error(ErrorCode::IncompleteQuery, "duplicate " + r.continent + " record", r.id);
    it->second[c] = &r;
  }
  std::vector<PreferenceRecord> out;
  out.reserve(order.size() * kContinentCount);
  for (const auto& id : order) {
    const auto& cells = grouped.at(id);
    for (std::size_t c = 0; c < kContinentCount; ++c)
      if (!cells[c]) throw Error(ErrorCode::IncompleteQuery, "missing " + std::string(kContinents[c]) + " record", id);
    for (std::size_t c = 0; c < kContinentCount; ++c) {
      PreferenceRecord p;
      p.query = cells[c]->query;
      p.continent = std::string(kContinents[c]);
      p.preferred = cells[c]->final_response;
      for (std::size_t k = 0; k < kContinentCount; ++k)
        if (k != c) p.rejected.push_back(cells[k]->final_response);
      out.push_back(std::move(p));
    }
  }
  return out;
}

json PairCounts::to_json() const {
  json pc = json::object();
  for (const auto& [k, v] : per_continent) pc[k] = v;
  return {{"queries", queries},
          {"preference_records", preference_records},
          {"rejections_per_record", rejections_per_record},
          {"rejection_pairs_per_continent", rejection_pairs_per_continent},
          {"rejection_pairs_total", rejection_pairs_total},
          {"qa_pairs", qa_pairs},
          {"per_continent", pc}};
}

PairCounts count_pairs(std::uint64_t n) {
  PairCounts p;
  p.queries = n;
  p.preference_records = kContinentCount * n;
  p.rejection_pairs_per_continent = 4 * n;
  p.rejection_pairs_total = kContinentCount * 4 * n;
  p.qa_pairs = kContinentCount * n;
  for (auto c : kContinents) p.per_continent[std::string(c)] = 4 * n;
  return p;
}

PairCounts count_pairs(std::span<const PreferenceRecord> records) {
  PairCounts p;
  p.preference_records = records.size();
  p.qa_pairs = records.size();
  p.queries = records.size() / kContinentCount;
  for (auto c : kContinents) p.per_continent[std::string(c)] = 0;
  for (const auto& r : records) {
    p.per_continent[r.continent] += r.rejected.size();
    p.rejection_pairs_total += r.rejected.size();
  }
  std::uint64_t lo = p.per_continent.begin()->second;
  for (const auto& [k, v] : p.per_continent) lo = std::min(lo, v);
  p.rejection_pairs_per_continent = lo;
  return p;
}

}  // namespace palette
