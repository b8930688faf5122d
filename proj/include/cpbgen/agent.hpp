#pragma once

// Code-generation pipeline: prompt assembly, model gateway, code extraction,
// deployment under the harness and validation, one trial at a time.

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "cpbgen/fault_catalog.hpp"
#include "cpbgen/knowledge_base.hpp"
#include "cpbgen/recorded_run.hpp"
#include "cpbgen/taxonomy.hpp"
#include "httplib.h"
#include "json.hpp"

namespace cpbgen::agent {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Scenarios

struct ScenarioConfig {
  std::string scenario_id = "custom";
  std::string model_id;
  bool include_baseline_code = true;
  bool include_examples = true;
  int trials = 20;
  Protocol proto = Protocol::Stp;
};

inline constexpr std::string_view kModelA = "gemini-2.5-flash";
inline constexpr std::string_view kModelB = "gemini-2.0-flash";

/// S1..S4, case-insensitive.
inline ScenarioConfig preset(std::string_view id, Protocol proto) {
  std::string up(id);
  for (auto& c : up) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  ScenarioConfig cfg;
  cfg.scenario_id = up;
  cfg.proto = proto;
  cfg.model_id = std::string(kModelA);
  if (up == "S1") return cfg;
  if (up == "S2") {
    cfg.include_baseline_code = false;
    return cfg;
  }
  if (up == "S3") {
    cfg.include_examples = false;
    return cfg;
  }
  if (up == "S4") {
    cfg.model_id = std::string(kModelB);
    return cfg;
  }
  throw Error(Errc::ConfigError, "unknown scenario '" + std::string(id) + "' (expected S1..S4)");
}

// ---------------------------------------------------------------------------
// Protocol descriptions

struct ProtocolDescription {
  Protocol proto = Protocol::Stp;
  std::string body;
  std::string examples_section;  // starts with the "## Examples" heading, or empty
};

inline constexpr std::string_view kExamplesHeading = "## Examples";

inline std::string trim_right(std::string s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
  return s;
}

inline ProtocolDescription split_description(Protocol proto, std::string_view text) {
  ProtocolDescription d;
  d.proto = proto;
  std::size_t at = std::string_view::npos;
  for (std::size_t pos = 0; (pos = text.find(kExamplesHeading, pos)) != std::string_view::npos; ++pos) {
    if (pos == 0 || text[pos - 1] == '\n') {
      at = pos;
      break;
    }
  }
  if (at == std::string_view::npos) {
    d.body = trim_right(std::string(text)) + "\n";
    return d;
  }
  d.body = trim_right(std::string(text.substr(0, at))) + "\n";
  d.examples_section = trim_right(std::string(text.substr(at))) + "\n";
  return d;
}

inline ProtocolDescription load_description(Protocol proto, const std::filesystem::path& dir = data_dir() / "descriptions") {
  return split_description(proto, read_file(dir / (std::string(to_string(proto)) + ".md")));
}

// ---------------------------------------------------------------------------
// Prompt

struct PromptSection {
  std::string name;  // preamble, description, examples, baseline, contract
  std::string text;  // ends with "\n"
};

struct PromptBundle {
  std::vector<PromptSection> sections;

  bool has(std::string_view name) const {
    return std::any_of(sections.begin(), sections.end(), [&](const auto& s) { return s.name == name; });
  }
  const PromptSection* section(std::string_view name) const {
    for (const auto& s : sections) {
      if (s.name == name) return &s;
    }
    return nullptr;
  }
  /// Sections separated by one blank line; removing a section removes
  /// exactly its text plus one "\n".
  std::string text() const {
    std::string out;
    for (std::size_t i = 0; i < sections.size(); ++i) {
      if (i) out += "\n";
      out += sections[i].text;
    }
    return out;
  }
};

inline constexpr const char* kEnvNames[] = {"CPB_PROTOCOL",     "CPB_LISTEN_HOST",  "CPB_LISTEN_PORT",
                                            "CPB_FORWARD_HOST", "CPB_FORWARD_PORT", "CPB_THRESHOLD"};

inline std::string preamble_text(Protocol proto) {
  return "You write customized processing blocks (CPBs) that run inside a mobile network user plane.\n"
         "A CPB is a small TCP server that receives packets of a custom protocol and acts on them.\n"
         "Write the CPB for the protocol \"" +
         std::string(to_string(proto)) + "\" described below.\n";
}

inline std::string contract_text(std::string_view wire_format_doc) {
  std::string out = "## Output requirements\n\n";
  out += "- One self-contained Python 3 program, standard library only.\n";
  out += "- Take all configuration from these environment variables:";
  for (const char* n : kEnvNames) out += std::string(" ") + n;
  out += ".\n";
  out += "  CPB_FORWARD_HOST and CPB_FORWARD_PORT are empty when the protocol has no receiver.\n";
  out += "- Listen on CPB_LISTEN_HOST:CPB_LISTEN_PORT. When CPB_FORWARD_PORT is set, open one connection\n"
         "  to CPB_FORWARD_HOST:CPB_FORWARD_PORT at startup and send forwarded frames on it.\n";
  out += "- Serve any number of connections until the process is terminated.\n";
  out += "- Reply with the program in a single fenced code block.\n\n";
  out += trim_right(std::string(wire_format_doc)) + "\n";
  return out;
}

inline std::string baseline_text(const std::vector<kb::Resource>& resources) {
  std::string out = "## Baseline code\n\nStart from this code. Protocol logic goes where it says HOLE.\n";
  for (const auto& r : resources) {
    out += "\n```python\n" + trim_right(r.content) + "\n```\n";
  }
  return out;
}

/// Pure: same inputs give byte-identical prompts. `baseline` is ignored when
/// the scenario excludes baseline code.
inline PromptBundle compose_prompt(const ProtocolDescription& desc, const ScenarioConfig& cfg,
                                   const std::vector<kb::Resource>& baseline, std::string_view wire_format_doc) {
  if (cfg.include_baseline_code && baseline.empty()) {
    throw Error(Errc::MissingBaseline, "scenario " + cfg.scenario_id + " needs baseline code but none was given");
  }
  PromptBundle b;
  b.sections.push_back({"preamble", preamble_text(desc.proto)});
  b.sections.push_back({"description", desc.body});
  if (cfg.include_examples && !desc.examples_section.empty()) b.sections.push_back({"examples", desc.examples_section});
  if (cfg.include_baseline_code) b.sections.push_back({"baseline", baseline_text(baseline)});
  b.sections.push_back({"contract", contract_text(wire_format_doc)});
  return b;
}

inline constexpr std::string_view kBaselineTag = "baseline";
inline constexpr std::string_view kWireFormatId = "wire-format-doc";

/// Fetches what the scenario asks for from the store, then composes.
inline PromptBundle compose_from_kb(const ProtocolDescription& desc, const ScenarioConfig& cfg,
                                    const kb::KnowledgeBase& store) {
  std::vector<kb::Resource> baseline;
  if (cfg.include_baseline_code) {
    for (const auto& info : store.list()) {
      if (std::find(info.tags.begin(), info.tags.end(), kBaselineTag) != info.tags.end())
        baseline.push_back(store.get(info.id));
    }
  }
  return compose_prompt(desc, cfg, baseline, store.get(kWireFormatId).content);
}

// ---------------------------------------------------------------------------
// Code extraction

struct ExtractedCode {
  std::string source;
  std::string language;  // fence info string, lower case; empty if none
};

/// The fenced block if there is one, the longest if there are several.
/// Unfenced text counts as code only if it opens like a program.
inline ExtractedCode extract_code(std::string_view response) {
  std::vector<ExtractedCode> blocks;
  std::istringstream in{std::string(response)};
  std::string line;
  std::optional<ExtractedCode> open;
  while (std::getline(in, line)) {
    auto first = line.find_first_not_of(" \t");
    bool fence = first != std::string::npos && line.compare(first, 3, "```") == 0;
    if (!open && fence) {
      ExtractedCode c;
      c.language = line.substr(first + 3);
      c.language.erase(std::remove_if(c.language.begin(), c.language.end(), [](unsigned char ch) { return std::isspace(ch); }),
                       c.language.end());
      for (auto& ch : c.language) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
      open = std::move(c);
    } else if (open && fence) {
      blocks.push_back(std::move(*open));
      open.reset();
    } else if (open) {
      open->source += line + "\n";
    }
  }
  if (open) blocks.push_back(std::move(*open));  // unterminated fence runs to the end

  std::erase_if(blocks, [](const auto& b) { return b.source.find_first_not_of(" \t\r\n") == std::string::npos; });
  if (!blocks.empty()) {
    auto best = std::max_element(blocks.begin(), blocks.end(),
                                 [](const auto& a, const auto& b) { return a.source.size() < b.source.size(); });
    return *best;
  }

  std::string text(response);
  auto start = text.find_first_not_of(" \t\r\n");
  if (start != std::string::npos) {
    text = trim_right(text.substr(start)) + "\n";
    static constexpr std::string_view kOpeners[] = {"#!", "import ", "from ", "def ", "class ", "async def "};
    for (auto o : kOpeners) {
      if (text.rfind(o, 0) == 0) return {text, ""};
    }
  }
  throw Error(Errc::NoCodeBlock, "response contains no fenced code block");
}

/// Interpreter command line for an extracted program.
inline std::vector<std::string> runner_for(const ExtractedCode& code, const std::filesystem::path& source_path) {
  const auto& lang = code.language;
  bool shell = lang == "sh" || lang == "bash" || lang == "shell" ||
               (lang.empty() && (code.source.rfind("#!/bin/sh", 0) == 0 || code.source.rfind("#!/bin/bash", 0) == 0));
  if (shell) return {"sh", source_path.string()};
  return {"python3", source_path.string()};
}

// ---------------------------------------------------------------------------
// Gateways

struct ModelReply {
  std::string text;
  std::string model;
  int prompt_tokens = -1;
  int completion_tokens = -1;
  int attempts = 1;
};

class Gateway {
 public:
  virtual ~Gateway() = default;
  /// `user` tags the request (e.g. "trial-3").
  virtual ModelReply complete(const std::string& prompt, const std::string& model, const std::string& user) = 0;
};

struct GatewayConfig {
  std::string base_url;  // e.g. https://host/v1
  std::string api_key;
  std::string default_model;
  int retries = 2;
  std::chrono::milliseconds backoff{500};
  std::chrono::seconds timeout{120};
};

/// MODEL_API_BASE and MODEL_API_KEY are required; MODEL_ID is the model used
/// when a scenario does not name one.
inline GatewayConfig gateway_config_from_env() {
  auto get = [](const char* name) -> std::string {
    const char* v = std::getenv(name);
    return v ? v : "";
  };
  GatewayConfig g;
  g.base_url = get("MODEL_API_BASE");
  g.api_key = get("MODEL_API_KEY");
  g.default_model = get("MODEL_ID");
  if (g.base_url.empty()) throw Error(Errc::ConfigError, "MODEL_API_BASE is not set");
  if (g.api_key.empty()) throw Error(Errc::ConfigError, "MODEL_API_KEY is not set");
  return g;
}

namespace detail {

inline std::pair<std::string, std::string> split_base(const std::string& base) {
  auto scheme = base.find("://");
  if (scheme == std::string::npos) throw Error(Errc::ConfigError, "gateway URL needs a scheme: " + base);
  auto slash = base.find('/', scheme + 3);
  std::string origin = slash == std::string::npos ? base : base.substr(0, slash);
  std::string prefix = slash == std::string::npos ? "" : base.substr(slash);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {origin, prefix};
}

inline int count_words(std::string_view s) {
  int n = 0;
  bool in = false;
  for (unsigned char c : s) {
    bool w = !std::isspace(c);
    if (w && !in) ++n;
    in = w;
  }
  return n;
}

}  // namespace detail

inline json chat_request(const std::string& prompt, const std::string& model, const std::string& user) {
  return json{{"model", model}, {"messages", json::array({{{"role", "user"}, {"content", prompt}}})}, {"user", user}};
}

/// Chat-completion endpoint: POST {base}/chat/completions.
class HttpGateway : public Gateway {
 public:
  explicit HttpGateway(GatewayConfig cfg) : cfg_(std::move(cfg)) {}

  ModelReply complete(const std::string& prompt, const std::string& model, const std::string& user) override {
    auto [origin, prefix] = detail::split_base(cfg_.base_url);
    std::string use_model = model.empty() ? cfg_.default_model : model;
    if (use_model.empty()) throw Error(Errc::ConfigError, "no model id (set MODEL_ID)");
    auto body = chat_request(prompt, use_model, user).dump();

    httplib::Client client(origin);
    client.set_connection_timeout(std::chrono::seconds(10));
    client.set_read_timeout(cfg_.timeout);
    httplib::Headers headers{{"Authorization", "Bearer " + cfg_.api_key}};

    std::string last_error;
    for (int attempt = 1; attempt <= cfg_.retries + 1; ++attempt) {
      if (attempt > 1) std::this_thread::sleep_for(cfg_.backoff * (1 << (attempt - 2)));
      auto res = client.Post(prefix + "/chat/completions", headers, body, "application/json");
      if (!res) {
        last_error = "transport error: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status >= 500) {
        last_error = "HTTP " + std::to_string(res->status);
        continue;
      }
      if (res->status != 200) {
        throw Error(Errc::GatewayError, "HTTP " + std::to_string(res->status) + " after " + std::to_string(attempt) +
                                            " attempt(s): " + res->body.substr(0, 200));
      }
      try {
        auto j = json::parse(res->body);
        ModelReply r;
        const auto& content = j.at("choices").at(0).at("message").at("content");
        r.text = content.is_null() ? "" : content.get<std::string>();
        r.model = j.value("model", use_model);
        if (j.contains("usage")) {
          r.prompt_tokens = j["usage"].value("prompt_tokens", -1);
          r.completion_tokens = j["usage"].value("completion_tokens", -1);
        }
        r.attempts = attempt;
        return r;
      } catch (const json::exception& e) {
        throw Error(Errc::GatewayError, std::string("malformed response: ") + e.what());
      }
    }
    throw Error(Errc::GatewayError, last_error + " after " + std::to_string(cfg_.retries + 1) + " attempts");
  }

 private:
  GatewayConfig cfg_;
};

// ---------------------------------------------------------------------------
// Mock gateway

/// Expands "golden*15,faulty-cve*5" into 20 items.
inline std::vector<std::string> parse_schedule(std::string_view text) {
  std::vector<std::string> out;
  std::string s(text);
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) {
    part.erase(std::remove_if(part.begin(), part.end(), [](unsigned char c) { return std::isspace(c); }), part.end());
    if (part.empty()) continue;
    int count = 1;
    if (auto star = part.find('*'); star != std::string::npos) {
      try {
        std::size_t used = 0;
        count = std::stoi(part.substr(star + 1), &used);
        if (used != part.size() - star - 1) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw Error(Errc::ConfigError, "bad repeat count in schedule item '" + part + "'");
      }
      if (count < 1) throw Error(Errc::ConfigError, "repeat count must be positive in '" + part + "'");
      part = part.substr(0, star);
    }
    for (int i = 0; i < count; ++i) out.push_back(part);
  }
  if (out.empty()) throw Error(Errc::ConfigError, "empty mock schedule");
  return out;
}

/// Full id, or a short name completed with the protocol prefix ("cve" ->
/// "stp-cve-threshold").
inline const faults::ShippedFault& resolve_fault(Protocol proto, std::string_view name) {
  for (const auto& f : faults::shipped_faults()) {
    if (f.id == name) return f;
  }
  auto prefix = std::string(to_string(proto)) + "-" + std::string(name);
  for (const auto& f : faults::shipped_faults()) {
    if (f.proto == proto && (f.id == prefix || f.id.rfind(prefix + "-", 0) == 0)) return f;
  }
  throw Error(Errc::ConfigError, "no " + std::string(to_string(proto)) + " fault matches '" + std::string(name) + "'");
}

inline std::string shell_quote(std::string_view s) {
  std::string out = "'";
  for (char c : s) out += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return out + "'";
}

/// Canned reply for one schedule item. `cpbgen` is the binary whose
/// oracle-run subcommand stands in for generated programs.
struct MockReply {
  int status = 200;
  std::string content;
};

inline MockReply mock_reply(std::string_view item, Protocol proto, const std::filesystem::path& cpbgen) {
  auto program = [&](const std::string& extra) {
    return "Here is the CPB.\n\n```sh\n#!/bin/sh\nexec " + shell_quote(cpbgen.string()) + " oracle-run" + extra +
           "\n```\n";
  };
  if (item == "golden") return {200, program("")};
  if (item.rfind("faulty-", 0) == 0) return {200, program(" --fault " + resolve_fault(proto, item.substr(7)).id)};
  if (item == "no-code") return {200, "I am not able to write that program."};
  if (item == "empty") return {200, ""};
  if (item == "http-500") return {500, ""};
  if (item == "syntax-error") return {200, "```sh\nif then fi\n```\n"};
  if (item == "hang") return {200, "```sh\nexec sleep 600\n```\n"};
  throw Error(Errc::ConfigError, "unknown mock schedule item '" + std::string(item) + "'");
}

/// Local chat-completion server replaying a schedule. Request "user":
/// "trial-k" selects item k (1-based, wrapping); otherwise calls are counted.
class MockGateway {
 public:
  MockGateway(std::vector<std::string> schedule, Protocol proto, std::filesystem::path cpbgen)
      : schedule_(std::move(schedule)), proto_(proto), cpbgen_(std::move(cpbgen)) {
    for (const auto& item : schedule_) mock_reply(item, proto_, cpbgen_);  // reject bad items up front
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) { handle(req, res); });
    port_ = server_.bind_to_any_port("127.0.0.1");
    if (port_ <= 0) throw Error(Errc::BindFailure, "mock gateway could not bind");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~MockGateway() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }
  MockGateway(const MockGateway&) = delete;
  MockGateway& operator=(const MockGateway&) = delete;

  std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }

  GatewayConfig client_config(std::chrono::milliseconds backoff = std::chrono::milliseconds(50)) const {
    GatewayConfig g;
    g.base_url = base_url();
    g.api_key = "mock";
    g.default_model = "mock-model";
    g.backoff = backoff;
    g.timeout = std::chrono::seconds(10);
    return g;
  }

  std::vector<json> requests() const {
    std::lock_guard lock(mu_);
    return requests_;
  }

 private:
  void handle(const httplib::Request& req, httplib::Response& res) {
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::exception&) {
      res.status = 400;
      return;
    }
    std::size_t index;
    {
      std::lock_guard lock(mu_);
      requests_.push_back(body);
      index = calls_++;
    }
    auto user = body.value("user", "");
    if (user.rfind("trial-", 0) == 0) {
      try {
        index = static_cast<std::size_t>(std::stoi(user.substr(6)) - 1);
      } catch (const std::exception&) {
      }
    }
    auto reply = mock_reply(schedule_[index % schedule_.size()], proto_, cpbgen_);
    res.status = reply.status;
    if (reply.status != 200) return;
    std::string prompt;
    if (body.contains("messages") && !body["messages"].empty()) prompt = body["messages"].back().value("content", "");
    int pt = detail::count_words(prompt);
    int ct = detail::count_words(reply.content);
    json out{{"id", "mock-" + std::to_string(index + 1)},
             {"object", "chat.completion"},
             {"model", body.value("model", "mock-model")},
             {"choices", json::array({{{"index", 0},
                                       {"message", {{"role", "assistant"}, {"content", reply.content}}},
                                       {"finish_reason", "stop"}}})},
             {"usage", {{"prompt_tokens", pt}, {"completion_tokens", ct}, {"total_tokens", pt + ct}}}};
    res.set_content(out.dump(), "application/json");
  }

  std::vector<std::string> schedule_;
  Protocol proto_;
  std::filesystem::path cpbgen_;
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
  mutable std::mutex mu_;
  std::vector<json> requests_;
  std::size_t calls_ = 0;
};

// ---------------------------------------------------------------------------
// Generation

struct GenerationResult {
  std::string raw;
  ExtractedCode code;
  std::string model;
  int prompt_tokens = -1;
  int completion_tokens = -1;
  int attempts = 1;
};

inline GenerationResult generate(const PromptBundle& bundle, Gateway& gateway, const std::string& model,
                                 const std::string& user) {
  auto reply = gateway.complete(bundle.text(), model, user);
  GenerationResult g;
  g.raw = reply.text;
  g.model = reply.model;
  g.prompt_tokens = reply.prompt_tokens;
  g.completion_tokens = reply.completion_tokens;
  g.attempts = reply.attempts;
  if (g.raw.find_first_not_of(" \t\r\n") == std::string::npos) throw Error(Errc::EmptyResponse, "model returned no text");
  g.code = extract_code(g.raw);
  return g;
}

// ---------------------------------------------------------------------------
// Trials

/// File names inside workdir/<scenario>/<proto>/trial-<k>/.
namespace files {
inline constexpr std::string_view kPrompt = "prompt.txt";
inline constexpr std::string_view kResponse = "response.txt";
inline constexpr std::string_view kSource = "cpb-source";
inline constexpr std::string_view kGeneration = "generation.json";
inline constexpr std::string_view kLabels = "labels.jsonl";
inline constexpr std::string_view kReport = "report.csv";
}  // namespace files

inline std::filesystem::path cell_dir(const std::filesystem::path& workdir, const ScenarioConfig& cfg) {
  return workdir / cfg.scenario_id / std::string(to_string(cfg.proto));
}

inline std::filesystem::path trial_dir(const std::filesystem::path& cell, int k) {
  return cell / ("trial-" + std::to_string(k));
}

/// Upstream failures (gateway, extraction, launch plumbing) become an
/// Executes failure with the error as cause; the trial still counts.
inline taxonomy::TrialRecord run_trial(const ProtocolDescription& desc, const ScenarioConfig& cfg,
                                       const harness::TrafficScript& script, Gateway& gateway,
                                       const kb::KnowledgeBase& store, const std::filesystem::path& dir, int k,
                                       harness::TrafficOptions opts = {}) {
  taxonomy::TrialRecord rec;
  rec.scenario_id = cfg.scenario_id;
  rec.proto = cfg.proto;
  rec.trial = k;
  auto trial_id = cfg.scenario_id + "/" + std::string(to_string(cfg.proto)) + "/trial-" + std::to_string(k);
  std::filesystem::create_directories(dir);

  auto bundle = compose_from_kb(desc, cfg, store);
  write_file(dir / files::kPrompt, bundle.text());

  std::string source;
  try {
    auto gen = generate(bundle, gateway, cfg.model_id, "trial-" + std::to_string(k));
    write_file(dir / files::kResponse, gen.raw);
    write_file(dir / files::kSource, gen.code.source);
    write_file(dir / files::kGeneration, json{{"model", gen.model},
                                              {"attempts", gen.attempts},
                                              {"prompt_tokens", gen.prompt_tokens},
                                              {"completion_tokens", gen.completion_tokens},
                                              {"language", gen.code.language}}
                                             .dump(2) + "\n");
    source = gen.code.source;
    auto argv = runner_for(gen.code, std::filesystem::absolute(dir / files::kSource));
    auto launcher = harness::external_launcher(argv, cfg.proto, script.threshold, opts.timeout, dir, dir);
    rec.verdict = record_run(script, launcher, dir, trial_id, opts);
  } catch (const Error& e) {
    if (e.code() == Errc::IoError) throw;
    rec.cause = e.what();
    validator::CheckFailure f;
    f.check = validator::Check::Executes;
    f.detail = "no run: " + std::string(e.what());
    rec.verdict = validator::Verdict{trial_id, {f}, {validator::Check::Binds, validator::Check::FormatConformance,
                                                     validator::Check::ProtocolLogic}};
    validator::write_verdict(dir / validator::files::kVerdict, rec.verdict);
  }
  taxonomy::attach_heuristics(rec, source);
  return rec;
}

/// Sequential trials 1..cfg.trials under workdir/<scenario>/<proto>/, then
/// labels.jsonl and report.csv for the cell.
inline std::vector<taxonomy::TrialRecord> run_scenario(const ProtocolDescription& desc, const ScenarioConfig& cfg,
                                                       const harness::TrafficScript& script, Gateway& gateway,
                                                       const kb::KnowledgeBase& store,
                                                       const std::filesystem::path& workdir,
                                                       harness::TrafficOptions opts = {}) {
  if (script.proto != cfg.proto) throw Error(Errc::ConfigError, "script protocol does not match the scenario");
  auto cell = cell_dir(workdir, cfg);
  std::vector<taxonomy::TrialRecord> out;
  for (int k = 1; k <= cfg.trials; ++k) out.push_back(run_trial(desc, cfg, script, gateway, store, trial_dir(cell, k), k, opts));
  taxonomy::write_labels(cell / files::kLabels, out);
  write_file(cell / files::kReport, taxonomy::export_report(taxonomy::aggregate(out, cfg.trials)));
  return out;
}

}  // namespace cpbgen::agent
