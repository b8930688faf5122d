#include <gtest/gtest.h>

#include <functional>
#include <random>
#include <set>

#include "cpbgen/cpb_core.hpp"

using namespace cpbgen;
using namespace cpbgen::core;
using wire::ControlPacket;
using wire::ControlType;
using wire::DataPacket;

namespace {

DataPacket data(std::uint8_t prio, std::string payload = "p") { return {prio, to_bytes(payload)}; }

bool is_forward(const Action& a) { return std::holds_alternative<Forward>(a); }
bool is_discard(const Action& a) { return std::holds_alternative<Discard>(a); }

taxonomy::ErrorType type(taxonomy::ErrorSubtype s) { return taxonomy::make_error_type(s); }

// Enumerates every sequence over `alphabet` of length 0..max_len.
template <typename T, typename F>
void for_each_sequence(const std::vector<T>& alphabet, std::size_t max_len, F&& visit) {
  std::vector<T> seq;
  std::function<void()> rec = [&] {
    visit(seq);
    if (seq.size() == max_len) return;
    for (const auto& sym : alphabet) {
      seq.push_back(sym);
      rec();
      seq.pop_back();
    }
  };
  rec();
}

}  // namespace

TEST(StpStep, AdmissionExamples) {
  auto r = stp_step(StpState{5, {}}, data(7));
  ASSERT_EQ(r.actions.size(), 1u);
  EXPECT_TRUE(is_forward(r.actions[0]));
  EXPECT_EQ(std::get<Forward>(r.actions[0]).destination, kReceiverRole);

  r = stp_step(StpState{5, {}}, data(3));
  ASSERT_EQ(r.actions.size(), 1u);
  EXPECT_EQ(std::get<Discard>(r.actions[0]).reason, DiscardReason::BelowThreshold);

  for (int p = 0; p < 256; ++p) {
    auto any = stp_step(StpState{0, {}}, data(static_cast<std::uint8_t>(p)));
    EXPECT_TRUE(is_forward(any.actions.at(0)));
  }
}

TEST(StpStep, QueueDrainsImmediately) {
  auto r = stp_step(StpState{5, {}}, data(9));
  EXPECT_TRUE(r.state.tx_queue.empty());
}

// Forwarded packets must be exactly the order-preserving subsequence of
// inputs with priority >= threshold.
TEST(StpProperty, FcfsExhaustive) {
  const std::vector<std::uint8_t> alphabet{0, 4, 5, 9};
  std::size_t checked = 0;
  for_each_sequence(alphabet, 6, [&](const std::vector<std::uint8_t>& prios) {
    std::vector<Input> inputs;
    std::vector<DataPacket> expected;
    for (std::size_t i = 0; i < prios.size(); ++i) {
      auto pkt = data(prios[i], "m" + std::to_string(i));
      inputs.push_back({"transmitter-1", pkt});
      if (prios[i] >= 5) expected.push_back(pkt);
    }
    auto trace = expected_trace(Protocol::Stp, {5, false}, inputs);
    std::vector<DataPacket> forwarded;
    for (const auto& t : trace) {
      if (auto* f = std::get_if<Forward>(&t.action)) forwarded.push_back(f->packet);
    }
    ASSERT_EQ(forwarded, expected);
    ASSERT_EQ(trace.size(), prios.size());
    ++checked;
  });
  EXPECT_EQ(checked, 1u + 4 + 16 + 64 + 256 + 1024 + 4096);
}

TEST(CcStep, Examples) {
  auto r = cc_step(CcState{5, true, {}}, data(2));
  EXPECT_EQ(std::get<Discard>(r.actions.at(0)).reason, DiscardReason::BelowThresholdCongested);

  r = cc_step(CcState{5, true, {}}, data(5));
  EXPECT_TRUE(is_forward(r.actions.at(0)));

  r = cc_step(CcState{5, true, {}}, ControlPacket{false});
  EXPECT_TRUE(r.actions.empty());
  EXPECT_FALSE(r.state.congested);
  r = cc_step(r.state, data(2));
  EXPECT_TRUE(is_forward(r.actions.at(0)));

  EXPECT_FALSE(CcState{}.congested);
}

TEST(CcStep, PubSubInputIsProtocolMismatch) {
  try {
    cc_step(CcState{}, wire::subscribe("t"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ProtocolMismatch);
  }
}

TEST(CcTrace, DiscardForwardForward) {
  std::vector<Input> inputs{{"controller", ControlPacket{true}},
                            {"transmitter-1", data(2, "a")},
                            {"transmitter-1", data(7, "b")},
                            {"controller", ControlPacket{false}},
                            {"transmitter-1", data(2, "c")}};
  auto trace = expected_trace(Protocol::Cc, {}, inputs);
  ASSERT_EQ(trace.size(), 3u);
  EXPECT_TRUE(is_discard(trace[0].action));
  EXPECT_TRUE(is_forward(trace[1].action));
  EXPECT_TRUE(is_forward(trace[2].action));
  EXPECT_EQ(trace[0].input_index, 1u);
  EXPECT_EQ(trace[2].input_index, 4u);
}

// Decisions depend only on (priority class, latest congestion flag). The
// rule table below is the independent oracle.
TEST(CcProperty, MarkovExhaustive) {
  enum Sym { Ctrl0, Ctrl1, Low, High };
  const std::vector<Sym> alphabet{Ctrl0, Ctrl1, Low, High};
  std::size_t sequences = 0;
  for_each_sequence(alphabet, 6, [&](const std::vector<Sym>& seq) {
    if (seq.size() != 6) return;
    ++sequences;
    std::vector<Input> inputs;
    std::vector<bool> expect_forward;
    bool flag = false;
    for (std::size_t i = 0; i < seq.size(); ++i) {
      switch (seq[i]) {
        case Ctrl0: inputs.push_back({"controller", ControlPacket{false}}); flag = false; break;
        case Ctrl1: inputs.push_back({"controller", ControlPacket{true}}); flag = true; break;
        case Low:
          inputs.push_back({"transmitter-1", data(3, std::to_string(i))});
          expect_forward.push_back(!flag);
          break;
        case High:
          inputs.push_back({"transmitter-1", data(8, std::to_string(i))});
          expect_forward.push_back(true);
          break;
      }
    }
    auto trace = expected_trace(Protocol::Cc, {5, false}, inputs);
    ASSERT_EQ(trace.size(), expect_forward.size());
    for (std::size_t i = 0; i < trace.size(); ++i) ASSERT_EQ(is_forward(trace[i].action), expect_forward[i]);
  });
  EXPECT_EQ(sequences, 4096u);
}

TEST(BrokerStep, FanoutExample) {
  BrokerState s;
  std::vector<Action> all;
  for (auto [client, msg] : std::vector<std::pair<std::string, wire::PubSubMessage>>{
           {"A", wire::subscribe("t")}, {"B", wire::subscribe("t")}, {"C", wire::publish("t", to_bytes("x"))}}) {
    auto r = broker_step(std::move(s), client, msg);
    s = std::move(r.state);
    all.insert(all.end(), r.actions.begin(), r.actions.end());
  }
  ASSERT_EQ(all.size(), 4u);
  EXPECT_EQ(std::get<SendAck>(all[0]), (SendAck{"A", ControlType::Subscribe, "t"}));
  EXPECT_EQ(std::get<SendAck>(all[1]), (SendAck{"B", ControlType::Subscribe, "t"}));
  EXPECT_EQ(std::get<Deliver>(all[2]).client, "A");
  EXPECT_EQ(std::get<Deliver>(all[3]).client, "B");
}

TEST(BrokerStep, PublishWithoutSubscribers) {
  auto r = broker_step(BrokerState{}, "C", wire::publish("t", to_bytes("x")));
  EXPECT_TRUE(r.actions.empty());
}

TEST(BrokerStep, DuplicateSubscribeIsIdempotentButAcked) {
  auto r1 = broker_step(BrokerState{}, "A", wire::subscribe("t"));
  auto r2 = broker_step(r1.state, "A", wire::subscribe("t"));
  EXPECT_EQ(r1.state, r2.state);
  EXPECT_EQ(r2.actions.size(), 1u);
  auto r3 = broker_step(BrokerState{}, "A", wire::unsubscribe("t"));
  EXPECT_TRUE(r3.state.subscriptions.empty());
  EXPECT_EQ(std::get<SendAck>(r3.actions.at(0)).acked_type, ControlType::Unsubscribe);
}

TEST(BrokerStep, PublisherReceivesOnlyIfSubscribed) {
  auto r = broker_step(BrokerState{}, "A", wire::subscribe("t"));
  auto p = broker_step(r.state, "A", wire::publish("t", {}));
  ASSERT_EQ(p.actions.size(), 1u);
  EXPECT_EQ(std::get<Deliver>(p.actions[0]).client, "A");
  auto q = broker_step(r.state, "B", wire::publish("t", {}));
  EXPECT_EQ(std::get<Deliver>(q.actions.at(0)).client, "A");
}

TEST(BrokerStep, InboundAckIsProtocolMismatch) {
  try {
    broker_step(BrokerState{}, "A", wire::ack(ControlType::Subscribe, "t"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ProtocolMismatch);
  }
}

// Subscriptions derived independently from the raw event history: a client
// is subscribed iff its latest (un)subscribe on the topic was SUBSCRIBE, and
// subscribers are ordered by when that subscription began.
TEST(BrokerProperty, FoldLaw) {
  std::mt19937_64 rng(99);
  const std::vector<std::string> clients{"c1", "c2", "c3", "c4", "c5"};
  const std::vector<std::string> topics{"t1", "t2", "t3", "t4"};
  for (int script = 0; script < 300; ++script) {
    struct Ev {
      std::string client;
      wire::PubSubMessage msg;
    };
    std::vector<Ev> history;
    Behavior broker(Protocol::PubSub);
    int n = std::uniform_int_distribution<int>(1, 30)(rng);
    for (int i = 0; i < n; ++i) {
      const auto& c = clients[rng() % clients.size()];
      const auto& t = topics[rng() % topics.size()];
      int k = static_cast<int>(rng() % 3);
      auto msg = k == 0 ? wire::subscribe(t) : k == 1 ? wire::unsubscribe(t) : wire::publish(t, to_bytes(std::to_string(i)));

      auto subscribers_now = [&](const std::string& topic) {
        std::vector<std::pair<std::size_t, std::string>> started;
        for (const auto& cl : clients) {
          std::optional<std::size_t> since;
          for (std::size_t h = 0; h < history.size(); ++h) {
            if (history[h].client != cl || history[h].msg.topic != topic) continue;
            if (history[h].msg.type == ControlType::Subscribe && !since) since = h;
            if (history[h].msg.type == ControlType::Unsubscribe) since.reset();
          }
          if (since) started.push_back({*since, cl});
        }
        std::sort(started.begin(), started.end());
        std::vector<std::string> out;
        for (auto& s : started) out.push_back(s.second);
        return out;
      };

      auto expected_receivers = subscribers_now(t);
      auto actions = broker.step(c, msg);
      history.push_back({c, msg});

      if (msg.type == ControlType::Publish) {
        std::vector<std::string> got;
        for (auto& a : actions) got.push_back(std::get<Deliver>(a).client);
        ASSERT_EQ(got, expected_receivers);
      } else {
        ASSERT_EQ(actions.size(), 1u);
        ASSERT_EQ(std::get<SendAck>(actions[0]), (SendAck{c, msg.type, t}));
      }
      for (const auto& topic : topics) {
        auto want = subscribers_now(topic);
        const auto& subs = broker.broker_state()->subscriptions;
        auto it = subs.find(topic);
        ASSERT_EQ(it == subs.end() ? std::vector<std::string>{} : it->second, want);
      }
    }
  }
}

TEST(MakeFaulty, UnknownSiteIsRejected) {
  try {
    make_faulty(Protocol::Stp, {type(taxonomy::ErrorSubtype::MissingCondition), "congestion-gate"});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::UnknownFaultSite);
  }
  try {
    make_faulty(Protocol::Cc, {type(taxonomy::ErrorSubtype::UndefinedName), "congestion-gate"});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::UnknownFaultSite);
  }
}

TEST(MakeFaulty, FieldOrderFaultSwapsPublishLayout) {
  auto faulty = make_faulty(Protocol::PubSub, {type(taxonomy::ErrorSubtype::IncorrectArithmeticOperation), "publish-encode"});
  faulty.step("A", wire::subscribe("t"));
  auto actions = faulty.step("B", wire::publish("t", to_bytes("hi")));
  ASSERT_EQ(actions.size(), 1u);
  EXPECT_EQ(faulty.render(actions[0]), from_hex("030001" "00000002" "74" "6869"));
  Behavior oracle(Protocol::PubSub);
  EXPECT_EQ(oracle.render(actions[0]), from_hex("03000174000000026869"));
}

// Differs from the oracle exactly on {congested and below threshold}.
TEST(MakeFaulty, MissingCongestionCheck) {
  for (bool congested : {false, true}) {
    for (int p = 0; p < 256; ++p) {
      auto pkt = data(static_cast<std::uint8_t>(p));
      auto faulty = make_faulty(Protocol::Cc, {type(taxonomy::ErrorSubtype::MissingCondition), "congestion-gate"});
      Behavior oracle(Protocol::Cc);
      faulty.step("controller", ControlPacket{congested});
      oracle.step("controller", ControlPacket{congested});
      bool differs = faulty.step("tx", pkt) != oracle.step("tx", pkt);
      EXPECT_EQ(differs, congested && p < 5) << "p=" << p;
    }
  }
}

TEST(MakeFaulty, ThresholdConstantShiftsPivot) {
  std::set<int> differing;
  for (int p = 0; p < 256; ++p) {
    auto faulty = make_faulty(Protocol::Stp, {type(taxonomy::ErrorSubtype::ConstantValueError), "threshold"});
    Behavior oracle(Protocol::Stp);
    auto pkt = data(static_cast<std::uint8_t>(p));
    if (faulty.step("tx", pkt) != oracle.step("tx", pkt)) differing.insert(p);
  }
  EXPECT_EQ(differing, (std::set<int>{5}));
}

TEST(MakeFaulty, WrongTargetSendsBackToSource) {
  auto faulty = make_faulty(Protocol::Cc, {type(taxonomy::ErrorSubtype::IncorrectMethodCallTarget), "forward-send"});
  auto actions = faulty.step("transmitter-2", data(9));
  EXPECT_EQ(std::get<Forward>(actions.at(0)).destination, "transmitter-2");
}

TEST(MakeFaulty, UndefinedNameThrowsReferenceFault) {
  auto faulty = make_faulty(Protocol::PubSub, {type(taxonomy::ErrorSubtype::UndefinedName), "unsubscribe-handler"});
  faulty.step("A", wire::subscribe("t"));
  try {
    faulty.step("A", wire::unsubscribe("t"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ReferenceFault);
    EXPECT_NE(std::string(e.what()).find("is not defined"), std::string::npos);
  }
}

TEST(FaultSites, EveryFamilyIsRepresented) {
  std::set<taxonomy::ErrorFamily> families;
  for (const auto& s : fault_sites()) families.insert(taxonomy::make_error_type(s.subtype).family);
  EXPECT_EQ(families.size(), 7u);
}
