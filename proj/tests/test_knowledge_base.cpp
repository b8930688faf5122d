#include <gtest/gtest.h>

#include <regex>

#include "cpbgen/agent.hpp"
#include "cpbgen/knowledge_base.hpp"
#include "test_support.hpp"

using namespace cpbgen;

namespace {

std::filesystem::path make_kb(const std::string& tag, const std::string& manifest) {
  auto dir = testsupport::scratch_dir(tag);
  write_file(dir / "manifest.json", manifest);
  write_file(dir / "a.txt", "alpha");
  return dir;
}

Errc load_error(const std::filesystem::path& dir) {
  try {
    kb::KnowledgeBase::load(dir);
  } catch (const Error& e) {
    return e.code();
  }
  return Errc::IoError;
}

}  // namespace

TEST(KnowledgeBase, ShippedManifestHasTheCoreResources) {
  auto store = kb::KnowledgeBase::load_default();
  std::vector<std::string> ids;
  for (const auto& r : store.list()) ids.push_back(r.id);
  for (const char* id : {"baseline-socket-skeleton", "wire-format-doc", "logging-conventions"}) {
    EXPECT_NE(std::find(ids.begin(), ids.end(), id), ids.end()) << id;
  }
  EXPECT_EQ(store.get("baseline-socket-skeleton").content,
            read_file(data_dir() / "kb" / "resources" / "baseline_socket_skeleton.py"));
}

TEST(KnowledgeBase, ReadsAreStable) {
  auto store = kb::KnowledgeBase::load_default();
  auto a = store.get("wire-format-doc").content;
  auto b = store.get("wire-format-doc").content;
  EXPECT_EQ(a, b);
  EXPECT_EQ(store.hash("wire-format-doc"), kb::content_hash(a));
  auto again = kb::KnowledgeBase::load_default();
  EXPECT_EQ(again.hash("wire-format-doc"), store.hash("wire-format-doc"));
}

TEST(KnowledgeBase, Fnv1aKnownValues) {
  EXPECT_EQ(kb::content_hash(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(kb::content_hash("a"), 0xaf63dc4c8601ec8cULL);
}

TEST(KnowledgeBase, UnknownIdIsNotFound) {
  auto store = kb::KnowledgeBase::load_default();
  try {
    store.get("no-such-thing");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::NotFound);
  }
}

TEST(KnowledgeBase, EmptyManifestFileIsEmptyStore) {
  auto dir = make_kb("kb-empty", "");
  EXPECT_EQ(kb::KnowledgeBase::load(dir).size(), 0u);
}

TEST(KnowledgeBase, CorruptManifests) {
  EXPECT_EQ(load_error(make_kb("kb-dup", R"({"resources":[{"id":"x","path":"a.txt"},{"id":"x","path":"a.txt"}]})")),
            Errc::ManifestCorrupt);
  EXPECT_EQ(load_error(make_kb("kb-missing", R"({"resources":[{"id":"x","path":"nope.txt"}]})")), Errc::ManifestCorrupt);
  EXPECT_EQ(load_error(make_kb("kb-syntax", "{")), Errc::ManifestCorrupt);
  EXPECT_EQ(load_error(make_kb("kb-shape", R"({"things":[]})")), Errc::ManifestCorrupt);
  EXPECT_EQ(load_error(testsupport::scratch_dir("kb-none")), Errc::ManifestCorrupt);
}

TEST(KnowledgeBase, ListKeepsManifestOrder) {
  auto dir = make_kb("kb-order", R"({"resources":[{"id":"z","path":"a.txt","tags":["t"]},{"id":"a","path":"a.txt"}]})");
  auto list = kb::KnowledgeBase::load(dir).list();
  ASSERT_EQ(list.size(), 2u);
  EXPECT_EQ(list[0].id, "z");
  EXPECT_EQ(list[0].tags, std::vector<std::string>{"t"});
  EXPECT_EQ(list[1].id, "a");
}

TEST(WireFormatDoc, DiscriminantTableMatchesTheCodec) {
  auto doc = kb::KnowledgeBase::load_default().get("wire-format-doc").content;
  std::map<std::string, std::uint8_t> table;
  std::regex row(R"(\|\s*[a-z,]+\s*\|\s*([A-Z]+)\s*\|\s*0x([0-9a-fA-F]{2})\s*\|)");
  for (std::sregex_iterator it(doc.begin(), doc.end(), row), end; it != end; ++it) {
    table[(*it)[1]] = static_cast<std::uint8_t>(std::stoi((*it)[2], nullptr, 16));
  }
  std::map<std::string, wire::Packet> samples{
      {"DATA", wire::DataPacket{1, {}}},
      {"CONTROL", wire::ControlPacket{true}},
      {"SUBSCRIBE", wire::subscribe("t")},
      {"UNSUBSCRIBE", wire::unsubscribe("t")},
      {"PUBLISH", wire::publish("t", {})},
      {"ACK", wire::ack(wire::ControlType::Subscribe, "t")},
  };
  ASSERT_EQ(table.size(), samples.size());
  for (const auto& [name, packet] : samples) EXPECT_EQ(wire::encode(packet).front(), table.at(name)) << name;
}

TEST(WireFormatDoc, WorkedExamplesMatchTheCodec) {
  auto doc = kb::KnowledgeBase::load_default().get("wire-format-doc").content;
  auto spaced = [](const Bytes& b) {
    std::string out;
    for (std::size_t i = 0; i < b.size(); ++i) out += (i ? " " : "") + to_hex(std::span(&b[i], 1));
    return out;
  };
  EXPECT_NE(doc.find(spaced(wire::encode(wire::DataPacket{7, to_bytes("a")}))), std::string::npos);
  EXPECT_NE(doc.find(spaced(wire::encode(wire::publish("t", to_bytes("hi"))))), std::string::npos);
}

// The skeleton binds and runs with its holes empty; filling the admission
// hole with the threshold rule is enough to pass.
class BaselineSkeleton : public ::testing::Test {
 protected:
  void SetUp() override {
    if (!testsupport::have_python3()) GTEST_SKIP() << "python3 not available";
  }

  validator::Verdict run(const std::string& source, const harness::TrafficScript& script) {
    auto dir = testsupport::scratch_dir("skeleton");
    write_file(dir / "cpb.py", source);
    auto launch = harness::external_launcher({"python3", (dir / "cpb.py").string()}, script.proto, script.threshold,
                                             std::chrono::milliseconds(20000), dir, dir);
    harness::TrafficOptions opts;
    opts.timeout = std::chrono::milliseconds(20000);
    return record_run(script, launch, dir / "trial", "", opts);
  }

  std::string skeleton() { return kb::KnowledgeBase::load_default().get("baseline-socket-skeleton").content; }
};

TEST_F(BaselineSkeleton, HolesUnfilledBindsButFailsLogic) {
  for (auto name : {"stp-basic", "pubsub-basic"}) {
    auto v = run(skeleton(), harness::load_script(data_dir() / "scripts" / (std::string(name) + ".json")));
    EXPECT_FALSE(v.failed(validator::Check::Executes)) << name << validator::to_json(v).dump(2);
    EXPECT_FALSE(v.failed(validator::Check::Binds)) << name;
    EXPECT_EQ(v.first_failed(), validator::Check::ProtocolLogic) << name;
  }
}

TEST_F(BaselineSkeleton, StpCompletionPasses) {
  auto src = skeleton();
  std::string hole = "    # HOLE: admission decision for a DATA packet (stp, cc).\n    pass\n";
  auto at = src.find(hole);
  ASSERT_NE(at, std::string::npos);
  src.replace(at, hole.size(), "    if priority >= state.threshold:\n        state.forward(encode_data(priority, payload))\n");
  auto v = run(src, harness::load_script(data_dir() / "scripts" / "stp-basic.json"));
  EXPECT_TRUE(v.pass()) << validator::to_json(v).dump(2);
}

TEST_F(BaselineSkeleton, WrongPortEnvironmentFailsBinds) {
  auto script = harness::load_script(data_dir() / "scripts" / "stp-basic.json");
  auto dir = testsupport::scratch_dir("skeleton-port");
  write_file(dir / "cpb.py", skeleton());
  auto other = net::pick_free_port();
  harness::Launcher launch = [&](const harness::EndpointConfig& cfg, harness::EventLog& log) -> std::unique_ptr<harness::CpbHandle> {
    auto shifted = cfg;
    shifted.listen.port = other;
    return harness::spawn_external_cpb({"python3", (dir / "cpb.py").string()}, script.proto, shifted, script.threshold,
                                       std::chrono::milliseconds(20000), &log, dir, dir);
  };
  auto v = record_run(script, launch, dir / "trial");
  EXPECT_EQ(v.first_failed(), validator::Check::Binds);
}
