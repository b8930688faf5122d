#include <gtest/gtest.h>

#include "cpbgen/validator.hpp"
#include "test_support.hpp"

using namespace cpbgen;
using testsupport::cli;
using testsupport::run_command;

namespace {

std::string script_path(const std::string& name) { return (data_dir() / "scripts" / (name + ".json")).string(); }

}  // namespace

TEST(Cli, UnknownProtocolIsUsageError) {
  auto r = run_command(cli() + " scenario-run --scenario S1 --proto ftp");
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.out.find("--proto"), std::string::npos);
  EXPECT_EQ(run_command(cli()).exit_code, 2);
  EXPECT_EQ(run_command(cli() + " frobnicate").exit_code, 2);
}

TEST(Cli, HelpListsEveryFlag) {
  auto r = run_command(cli() + " scenario-run --help");
  EXPECT_EQ(r.exit_code, 0);
  for (auto flag : {"--scenario", "--proto", "--script", "--workdir", "--trials", "--gateway", "--threshold"})
    EXPECT_NE(r.out.find(flag), std::string::npos) << flag;
  auto top = run_command(cli() + " --help");
  for (auto cmd : {"oracle-run", "traffic-run", "validate", "scenario-run", "report", "kb-list", "kb-get", "fixtures-check"})
    EXPECT_NE(top.out.find(cmd), std::string::npos) << cmd;
  auto tr = run_command(cli() + " traffic-run --help");
  for (auto flag : {"--script", "--workdir", "--proto", "--fault", "--threshold"})
    EXPECT_NE(tr.out.find(flag), std::string::npos) << flag;
}

TEST(Cli, TrafficRunThenValidate) {
  auto dir = testsupport::scratch_dir("cli-validate");
  auto run = run_command(cli() + " traffic-run --script " + script_path("stp-basic") + " --workdir " + dir.string());
  EXPECT_EQ(run.exit_code, 0) << run.out;
  auto v = run_command(cli() + " validate --proto stp --workdir " + dir.string());
  EXPECT_EQ(v.exit_code, 0) << v.out;
  EXPECT_EQ(v.out.rfind("PASS", 0), 0u);
  EXPECT_EQ(run_command(cli() + " validate --proto cc --workdir " + dir.string()).exit_code, 2);
}

TEST(Cli, FaultyRunExitsOne) {
  auto dir = testsupport::scratch_dir("cli-faulty");
  auto r = run_command(cli() + " traffic-run --script " + script_path("pubsub-basic") + " --workdir " + dir.string() +
                       " --fault pubsub-icms-missing-fanout");
  EXPECT_EQ(r.exit_code, 1) << r.out;
  EXPECT_NE(r.out.find("ProtocolLogic"), std::string::npos);
  EXPECT_EQ(run_command(cli() + " validate --workdir " + dir.string()).exit_code, 1);
}

TEST(Cli, TrafficRunWithExternalCommand) {
  auto dir = testsupport::scratch_dir("cli-external");
  auto r = run_command(cli() + " traffic-run --script " + script_path("cc-congested") + " --workdir " + dir.string() +
                       " -- " + cli() + " oracle-run");
  EXPECT_EQ(r.exit_code, 0) << r.out;
}

TEST(Cli, CorruptRunDirectoryIsReported) {
  auto dir = testsupport::scratch_dir("cli-corrupt");
  write_file(dir / "script.json", read_file(script_path("stp-basic")));
  write_file(dir / "run.log", "not json\n");
  write_file(dir / "run-result.json", "{}");
  auto r = run_command(cli() + " validate --workdir " + dir.string());
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.out.find("CorruptLog"), std::string::npos);
}

TEST(Cli, MockScenarioRunReportsTwentyOfTwenty) {
  auto dir = testsupport::scratch_dir("cli-scenario");
  auto r = run_command(cli() + " scenario-run --scenario s1 --proto pubsub --gateway mock:golden --trials 20 --workdir " +
                       dir.string());
  EXPECT_EQ(r.exit_code, 0) << r.out;
  EXPECT_NE(r.out.find("S1,pubsub,pass_rate,,20,20"), std::string::npos) << r.out;
  auto rep = run_command(cli() + " report --workdir " + dir.string());
  EXPECT_EQ(rep.exit_code, 0);
  EXPECT_EQ(rep.out, "scenario,proto,row,label,count,trials\nS1,pubsub,pass_rate,,20,20\n");
}

TEST(Cli, MockScenarioWithFailuresExitsOne) {
  auto dir = testsupport::scratch_dir("cli-scenario-fail");
  auto r = run_command(cli() + " scenario-run --scenario S4 --proto cc --gateway mock:faulty-cve --trials 2 --workdir " +
                       dir.string());
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_NE(r.out.find("S4,cc,error,CVE:constant-value-error,2,2"), std::string::npos) << r.out;
  EXPECT_EQ(run_command(cli() + " scenario-run --proto cc --gateway bogus --workdir " + dir.string()).exit_code, 2);
  EXPECT_EQ(run_command(cli() + " scenario-run --proto cc --gateway mock:what --workdir " + dir.string()).exit_code, 2);
}

TEST(Cli, KnowledgeBaseCommands) {
  auto list = run_command(cli() + " kb-list");
  EXPECT_EQ(list.exit_code, 0);
  EXPECT_NE(list.out.find("baseline-socket-skeleton"), std::string::npos);
  auto get = run_command(cli() + " kb-get wire-format-doc");
  EXPECT_EQ(get.exit_code, 0);
  EXPECT_EQ(get.out, read_file(data_dir() / "kb" / "resources" / "wire-format.md"));
  EXPECT_EQ(run_command(cli() + " kb-get missing").exit_code, 2);
}

TEST(Cli, OracleRunWithoutEnvironmentIsConfigError) {
  auto r = run_command("env -u CPB_LISTEN_PORT " + cli() + " oracle-run --proto stp");
  EXPECT_EQ(r.exit_code, 2);
}

TEST(Cli, FixturesCheckWithoutManifest) {
  auto dir = testsupport::scratch_dir("cli-nofixtures");
  EXPECT_EQ(run_command(cli() + " fixtures-check --fixtures " + dir.string()).exit_code, 2);
}
