#include <unistd.h>

#include <atomic>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cpbgen/cpbgen.hpp"

namespace fs = std::filesystem;
using namespace cpbgen;

namespace {

constexpr int kOk = 0;
constexpr int kFail = 1;
constexpr int kUsage = 2;

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

std::string env_or(const char* name, std::string fallback = {}) {
  const char* v = std::getenv(name);
  return v && *v ? v : fallback;
}

fs::path self_path() {
  std::error_code ec;
  auto p = fs::read_symlink("/proc/self/exe", ec);
  return ec ? fs::path("cpbgen") : p;
}

fs::path default_script(Protocol proto) {
  static const char* names[] = {"stp-basic.json", "cc-congested.json", "pubsub-basic.json"};
  return data_dir() / "scripts" / names[static_cast<int>(proto)];
}

void print_verdict(const validator::Verdict& v) {
  std::cout << v.outcome();
  if (!v.trial_id.empty()) std::cout << " " << v.trial_id;
  std::cout << "\n";
  for (const auto& f : v.failures) {
    std::cout << "  " << validator::to_string(f.check) << ": " << f.detail << "\n";
    for (const auto& d : f.divergences) std::cout << "    " << d.describe() << " [" << d.hint << "]\n";
  }
  for (auto c : v.skipped) std::cout << "  " << validator::to_string(c) << ": skipped\n";
}

const std::vector<std::string> kProtoNames{"stp", "cc", "pubsub"};

// oracle-run: serve the reference (or a shipped fault) on the endpoints in
// the CPB_* environment until SIGTERM.
int oracle_run(const std::string& proto_flag, const std::string& fault_id, int threshold_flag) {
  auto proto = parse_protocol(proto_flag.empty() ? env_or("CPB_PROTOCOL") : proto_flag);
  harness::EndpointConfig cfg;
  cfg.listen.host = env_or("CPB_LISTEN_HOST", "127.0.0.1");
  auto listen_port = env_or("CPB_LISTEN_PORT");
  if (listen_port.empty()) throw Error(Errc::ConfigError, "CPB_LISTEN_PORT is not set");
  cfg.listen = net::Address::parse(cfg.listen.host + ":" + listen_port);
  if (auto fwd = env_or("CPB_FORWARD_PORT"); !fwd.empty())
    cfg.forward = net::Address::parse(env_or("CPB_FORWARD_HOST", "127.0.0.1") + ":" + fwd);
  cfg.validate(proto);

  core::OracleConfig oc;
  int threshold = threshold_flag >= 0 ? threshold_flag : std::stoi(env_or("CPB_THRESHOLD", "5"));
  if (threshold < 0 || threshold > 255) throw Error(Errc::ConfigError, "threshold must be 0..255");
  oc.threshold = static_cast<std::uint8_t>(threshold);

  core::Behavior behavior = core::Behavior(proto, oc);
  if (!fault_id.empty()) {
    const auto& f = faults::find_fault(fault_id);
    if (f.proto != proto) throw Error(Errc::ConfigError, "fault " + f.id + " is for " + std::string(to_string(f.proto)));
    behavior = faults::behavior_for(f, oc);
  }

  std::signal(SIGTERM, on_signal);
  std::signal(SIGINT, on_signal);
  harness::OracleServer server(proto, cfg, behavior);
  while (!g_stop && server.alive()) ::usleep(5000);
  if (!server.alive()) {
    std::cerr << server.stderr_text() << std::flush;
    return server.wait();
  }
  server.stop();
  return kOk;
}

int traffic_run(const fs::path& script_path, const fs::path& workdir, const std::string& proto_flag,
                const std::string& fault_id, int threshold, const std::vector<std::string>& command) {
  auto script = harness::load_script(script_path);
  if (!proto_flag.empty() && parse_protocol(proto_flag) != script.proto)
    throw Error(Errc::ConfigError, "--proto " + proto_flag + " does not match the script");
  if (threshold >= 0) script.threshold = static_cast<std::uint8_t>(threshold);
  harness::Launcher launcher;
  if (!command.empty()) {
    if (!fault_id.empty()) throw Error(Errc::ConfigError, "--fault and a command are exclusive");
    launcher = harness::external_launcher(command, script.proto, script.threshold, std::chrono::milliseconds(30000),
                                          workdir, fs::current_path());
  } else if (!fault_id.empty()) {
    const auto& f = faults::find_fault(fault_id);
    if (f.proto != script.proto) throw Error(Errc::ConfigError, "fault " + f.id + " does not match the script");
    launcher = harness::oracle_launcher(faults::behavior_for(f, script.oracle_config()));
  } else {
    launcher = harness::oracle_launcher(core::Behavior(script.proto, script.oracle_config()));
  }
  auto v = record_run(script, launcher, workdir, script.name);
  print_verdict(v);
  return v.pass() ? kOk : kFail;
}

int validate_cmd(const fs::path& workdir, const std::string& proto_flag) {
  auto script = harness::load_script(workdir / validator::files::kScript);
  if (!proto_flag.empty() && parse_protocol(proto_flag) != script.proto)
    throw Error(Errc::ConfigError, "--proto " + proto_flag + " does not match " + (workdir / "script.json").string());
  auto v = validator::validate_dir(workdir, workdir.filename().string());
  validator::write_verdict(workdir / validator::files::kVerdict, v);
  print_verdict(v);
  return v.pass() ? kOk : kFail;
}

int scenario_run(const std::string& scenario_flag, const std::string& proto_flag, const std::string& script_flag,
                 const fs::path& workdir, int trials, const std::string& gateway_flag, int threshold) {
  std::vector<std::string> scenarios;
  if (scenario_flag == "all") scenarios = {"S1", "S2", "S3", "S4"};
  else scenarios = {scenario_flag};
  std::vector<Protocol> protos;
  if (proto_flag == "all") protos.assign(std::begin(kAllProtocols), std::end(kAllProtocols));
  else protos = {parse_protocol(proto_flag)};
  if (!script_flag.empty() && protos.size() != 1) throw Error(Errc::ConfigError, "--script needs a single --proto");

  bool live = gateway_flag == "live";
  std::string schedule;
  if (!live) {
    if (gateway_flag.rfind("mock:", 0) != 0) throw Error(Errc::ConfigError, "--gateway must be live or mock:<schedule>");
    schedule = gateway_flag.substr(5);
  }
  std::optional<agent::GatewayConfig> live_cfg;
  if (live) live_cfg = agent::gateway_config_from_env();

  auto store = kb::KnowledgeBase::load_default();
  std::vector<taxonomy::TrialRecord> all;
  for (auto proto : protos) {
    auto script = harness::load_script(script_flag.empty() ? default_script(proto) : fs::path(script_flag));
    if (script.proto != proto) throw Error(Errc::ConfigError, "script protocol does not match --proto");
    if (threshold >= 0) script.threshold = static_cast<std::uint8_t>(threshold);
    auto desc = agent::load_description(proto);
    std::unique_ptr<agent::MockGateway> mock;
    if (!live) mock = std::make_unique<agent::MockGateway>(agent::parse_schedule(schedule), proto, self_path());
    agent::HttpGateway gateway(live ? *live_cfg : mock->client_config());
    for (const auto& id : scenarios) {
      auto cfg = agent::preset(id, proto);
      cfg.trials = trials;
      auto records = agent::run_scenario(desc, cfg, script, gateway, store, workdir);
      for (const auto& r : records) {
        std::cerr << r.scenario_id << "/" << to_string(r.proto) << " trial-" << r.trial << " " << r.verdict.outcome();
        if (auto c = r.verdict.first_failed()) std::cerr << " (" << validator::to_string(*c) << ")";
        std::cerr << "\n";
      }
      all.insert(all.end(), records.begin(), records.end());
    }
  }
  std::cout << taxonomy::export_report(taxonomy::aggregate(all, trials));
  bool ok = std::all_of(all.begin(), all.end(), [](const auto& r) { return r.pass(); });
  return ok ? kOk : kFail;
}

int report_cmd(const fs::path& workdir, int trials, const fs::path& out) {
  std::vector<taxonomy::TrialRecord> all;
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(workdir)) {
    if (e.is_regular_file() && e.path().filename() == agent::files::kLabels) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw Error(Errc::NotFound, "no labels.jsonl under " + workdir.string());
  for (const auto& f : files) {
    auto t = taxonomy::read_labels(f);
    all.insert(all.end(), t.begin(), t.end());
  }
  auto csv = taxonomy::export_report(taxonomy::aggregate(all, trials));
  if (!out.empty()) write_file(out, csv);
  std::cout << csv;
  return kOk;
}

int fixtures_check(const fs::path& dir, bool run, const fs::path& workdir) {
  auto manifest = fixtures::load_manifest(dir);
  auto problems = fixtures::check_invariants(manifest);
  for (const auto& p : problems) std::cout << "manifest: " << p << "\n";
  bool ok = problems.empty();
  if (run) {
    std::vector<harness::TrafficScript> scripts;
    for (auto p : kAllProtocols) scripts.push_back(harness::load_script(default_script(p)));
    auto outcomes = fixtures::run_all(manifest, scripts, workdir.empty() ? fs::path("fixtures-out") : workdir);
    for (const auto& o : outcomes) {
      std::cout << (o.as_expected ? "ok   " : "BAD  ") << o.fixture_id << " " << o.script << " "
                << o.verdict.outcome();
      if (!o.note.empty()) std::cout << " (" << o.note << ")";
      std::cout << "\n";
      ok = ok && o.as_expected;
    }
  }
  std::cout << (ok ? "fixtures: ok\n" : "fixtures: FAIL\n");
  return ok ? kOk : kFail;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generate, run and validate customized processing blocks."};
  app.require_subcommand(1);

  std::string proto, fault, scenario = "S1", script, gateway = "mock:golden", kb_dir, fixtures_dir, out;
  std::string workdir;
  int threshold = -1, trials = 20;
  bool run = false;
  std::vector<std::string> command;
  std::string resource_id;

  auto proto_check = CLI::IsMember(kProtoNames);
  auto proto_or_all = CLI::IsMember(std::vector<std::string>{"stp", "cc", "pubsub", "all"});

  auto* oracle = app.add_subcommand("oracle-run", "Serve the reference block on the CPB_* endpoints until SIGTERM");
  oracle->add_option("--proto", proto, "Protocol (default: $CPB_PROTOCOL)")->check(proto_check);
  oracle->add_option("--fault", fault, "Serve this shipped fault instead");
  oracle->add_option("--threshold", threshold, "Threshold (default: $CPB_THRESHOLD)")->check(CLI::Range(0, 255));

  auto* traffic = app.add_subcommand("traffic-run", "Play a script against a block and record a trial directory");
  traffic->add_option("--script", script, "Traffic script (JSON)")->required()->check(CLI::ExistingFile);
  traffic->add_option("--workdir", workdir, "Output directory")->required();
  traffic->add_option("--proto", proto, "Expected protocol of the script")->check(proto_check);
  traffic->add_option("--fault", fault, "Use this shipped fault instead of the reference");
  traffic->add_option("--threshold", threshold, "Override the script threshold")->check(CLI::Range(0, 255));
  traffic->add_option("command", command, "External block command line (after --)");

  auto* validate = app.add_subcommand("validate", "Re-validate a recorded trial directory");
  validate->add_option("--workdir", workdir, "Trial directory")->required()->check(CLI::ExistingDirectory);
  validate->add_option("--proto", proto, "Expected protocol")->check(proto_check);

  auto* scen = app.add_subcommand("scenario-run", "Run generation trials for a scenario");
  scen->add_option("--scenario", scenario, "S1..S4 or all")->capture_default_str();
  scen->add_option("--proto", proto, "Protocol or all")->required()->check(proto_or_all);
  scen->add_option("--script", script, "Traffic script (default: shipped script)")->check(CLI::ExistingFile);
  scen->add_option("--workdir", workdir, "Output root")->default_str("workdir");
  scen->add_option("--trials", trials, "Trials per cell")->capture_default_str()->check(CLI::PositiveNumber);
  scen->add_option("--gateway", gateway, "live | mock:<schedule>")->capture_default_str();
  scen->add_option("--threshold", threshold, "Override the script threshold")->check(CLI::Range(0, 255));

  auto* report = app.add_subcommand("report", "Aggregate labels.jsonl files under a workdir into CSV");
  report->add_option("--workdir", workdir, "Root to search")->required()->check(CLI::ExistingDirectory);
  report->add_option("--trials", trials, "Expected trials per cell")->capture_default_str()->check(CLI::PositiveNumber);
  report->add_option("--out", out, "Also write the CSV here");

  auto* kb_list = app.add_subcommand("kb-list", "List knowledge-base resources");
  kb_list->add_option("--kb", kb_dir, "Knowledge-base directory");

  auto* kb_get = app.add_subcommand("kb-get", "Print one knowledge-base resource");
  kb_get->add_option("id", resource_id, "Resource id")->required();
  kb_get->add_option("--kb", kb_dir, "Knowledge-base directory");

  auto* fx = app.add_subcommand("fixtures-check", "Check a fixture manifest and optionally run the fixtures");
  fx->add_option("--fixtures", fixtures_dir, "Directory holding manifest.json")->default_str("<data>/fixtures");
  fx->add_flag("--run", run, "Run every fixture under the harness");
  fx->add_option("--workdir", workdir, "Output directory for --run");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n";
    const CLI::App* shown = &app;
    for (const auto* sub : app.get_subcommands()) shown = sub;
    std::cerr << shown->help();
    return kUsage;
  }

  try {
    if (oracle->parsed()) return oracle_run(proto, fault, threshold);
    if (traffic->parsed()) return traffic_run(script, workdir, proto, fault, threshold, command);
    if (validate->parsed()) return validate_cmd(workdir, proto);
    if (scen->parsed()) return scenario_run(scenario, proto, script, workdir.empty() ? "workdir" : workdir, trials, gateway, threshold);
    if (report->parsed()) return report_cmd(workdir, trials, out);
    if (kb_list->parsed() || kb_get->parsed()) {
      auto store = kb_dir.empty() ? kb::KnowledgeBase::load_default() : kb::KnowledgeBase::load(kb_dir);
      if (kb_get->parsed()) {
        std::cout << store.get(resource_id).content;
        return kOk;
      }
      for (const auto& r : store.list()) {
        std::string tags;
        for (const auto& t : r.tags) tags += (tags.empty() ? "" : ",") + t;
        std::cout << r.id << "\t" << tags << "\t" << r.description << "\n";
      }
      return kOk;
    }
    if (fx->parsed()) return fixtures_check(fixtures_dir.empty() ? data_dir() / "fixtures" : fs::path(fixtures_dir), run, workdir);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}
