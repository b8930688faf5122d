#include <gtest/gtest.h>

#include <random>

#include "cpbgen/wire.hpp"
#include "generators.hpp"

using namespace cpbgen;
using namespace cpbgen::wire;

namespace {

// Layout computed independently with Python's struct module:
//   struct.pack('!BH', 3, 1) + b't' + struct.pack('!I', 2) + b'hi'
const Bytes kPublishTHi = from_hex("03000174000000026869");

}  // namespace

TEST(WireEncode, PublishMatchesIndependentLayout) {
  EXPECT_EQ(encode(publish("t", to_bytes("hi"))), kPublishTHi);
}

TEST(WireEncode, EmptyDataPacketIsFourOctets) {
  EXPECT_EQ(encode(DataPacket{0, {}}), (Bytes{0x01, 0x00, 0x00, 0x00}));
}

TEST(WireEncode, ControlPacketIsTwoOctets) {
  EXPECT_EQ(encode(ControlPacket{true}), (Bytes{0x02, 0x01}));
  EXPECT_EQ(encode(ControlPacket{false}), (Bytes{0x02, 0x00}));
}

TEST(WireEncode, AckEchoesTopic) {
  EXPECT_EQ(encode(ack(ControlType::Unsubscribe, "ab")), from_hex("0402000261" "62"));
}

TEST(WireEncode, OverflowingFieldsAreRejected) {
  try {
    encode(DataPacket{1, Bytes(70000, 0)});
    FAIL() << "expected EncodingOverflow";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::EncodingOverflow);
  }
  try {
    encode(subscribe(std::string(70000, 'x')));
    FAIL() << "expected EncodingOverflow";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::EncodingOverflow);
  }
}

TEST(WireEncode, AckOfPublishIsInvalid) {
  try {
    encode(ack(ControlType::Publish, "t"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::InvalidField);
  }
}

TEST(WireDecode, PublishExampleRoundTrips) {
  auto r = decode(kPublishTHi, Protocol::PubSub);
  ASSERT_TRUE(r.ok());
  EXPECT_EQ(r.consumed, 10u);
  EXPECT_EQ(std::get<PubSubMessage>(*r.packet), publish("t", to_bytes("hi")));
}

TEST(WireDecode, EmptyInputNeedsMoreData) {
  for (auto family : kAllProtocols) {
    EXPECT_EQ(decode({}, family).status, DecodeStatus::NeedMoreData);
  }
}

TEST(WireDecode, PayloadLenBeforeTopicFailsAtTopicOctet) {
  // type | topic_len | payload_len | topic | payload
  Bytes wrong = from_hex("030001" "00000002" "74" "6869");
  auto r = decode(wrong, Protocol::PubSub);
  EXPECT_EQ(r.status, DecodeStatus::MalformedTopic);
  EXPECT_EQ(r.error_offset, 3u);

  // Only the header has arrived: still a deterministic failure.
  auto partial = decode(std::span(wrong).first(4), Protocol::PubSub);
  EXPECT_EQ(partial.status, DecodeStatus::MalformedTopic);
  EXPECT_EQ(partial.error_offset, 3u);
}

TEST(WireDecode, ErrorsAreClassified) {
  EXPECT_EQ(decode(from_hex("05"), Protocol::PubSub).status, DecodeStatus::UnknownDiscriminant);
  EXPECT_EQ(decode(from_hex("02"), Protocol::Stp).status, DecodeStatus::UnknownDiscriminant);
  EXPECT_EQ(decode(from_hex("0202"), Protocol::Cc).status, DecodeStatus::InvalidField);
  EXPECT_EQ(decode(from_hex("0403000174"), Protocol::PubSub).status, DecodeStatus::UnknownDiscriminant);
  EXPECT_EQ(decode(from_hex("010000"), Protocol::PubSub).status, DecodeStatus::MalformedTopic);
  EXPECT_EQ(decode(from_hex("010401"), Protocol::PubSub).status, DecodeStatus::LengthMismatch);
  // topic_len = 1025 exceeds the frame policy
  EXPECT_EQ(decode(from_hex("010401"), Protocol::PubSub).error_offset, 1u);
  // payload_len = 2^20 + 1
  EXPECT_EQ(decode(from_hex("03000174" "00100001"), Protocol::PubSub).status, DecodeStatus::LengthMismatch);
  // invalid UTF-8 continuation
  EXPECT_EQ(decode(from_hex("010002c328"), Protocol::PubSub).status, DecodeStatus::MalformedTopic);
  // overlong encoding of '/'
  EXPECT_EQ(decode(from_hex("010002c0af"), Protocol::PubSub).status, DecodeStatus::MalformedTopic);
}

TEST(WireDecode, PartialMultiOctetTopicIsNotAnError) {
  Bytes euro = encode(subscribe("\xe2\x82\xac"));
  for (std::size_t k = 0; k < euro.size(); ++k) {
    EXPECT_TRUE(decode(std::span(euro).first(k), Protocol::PubSub).incomplete()) << "prefix " << k;
  }
}

TEST(WireDecode, DiscriminantTotality) {
  for (auto family : kAllProtocols) {
    for (int octet = 0; octet < 256; ++octet) {
      Bytes frame{static_cast<std::uint8_t>(octet)};
      frame.resize(16, 0x41);
      auto r = decode(frame, family);
      bool assigned = false;
      if (family == Protocol::Stp) assigned = octet == kDataType;
      if (family == Protocol::Cc) assigned = octet == kDataType || octet == kControlType;
      if (family == Protocol::PubSub) assigned = octet >= 1 && octet <= 4;
      bool leading_octet_rejected = r.status == DecodeStatus::UnknownDiscriminant && r.error_offset == 0;
      EXPECT_EQ(leading_octet_rejected, !assigned) << "family " << to_string(family) << " octet " << octet;
    }
  }
}

TEST(WireProperty, RoundTripAndPrefixSafety) {
  std::mt19937_64 rng(20240611);
  for (auto family : kAllProtocols) {
    for (int i = 0; i < 2000; ++i) {
      auto packet = testgen::random_packet(rng, family);
      auto bytes = encode(packet);
      auto r = decode(bytes, family);
      ASSERT_TRUE(r.ok()) << describe(packet);
      ASSERT_EQ(*r.packet, packet);
      ASSERT_EQ(r.consumed, bytes.size());
      for (std::size_t k = 0; k < bytes.size(); k += 1 + bytes.size() / 40) {
        ASSERT_TRUE(decode(std::span(bytes).first(k), family).incomplete()) << describe(packet) << " k=" << k;
      }
    }
  }
}

TEST(WireProperty, ArbitraryInputNeverThrows) {
  std::mt19937_64 rng(7);
  for (auto family : kAllProtocols) {
    for (int i = 0; i < 5000; ++i) {
      auto junk = testgen::random_bytes(rng, 40);
      auto r = decode(junk, family);
      if (r.ok()) {
        EXPECT_LE(r.consumed, junk.size());
      }
    }
  }
}

TEST(StreamDecoder, ReassemblesFramesAcrossChunks) {
  Bytes stream;
  std::vector<Packet> sent{subscribe("news"), publish("news", to_bytes("hello")), ack(ControlType::Subscribe, "x")};
  for (const auto& p : sent) {
    auto b = encode(p);
    stream.insert(stream.end(), b.begin(), b.end());
  }
  StreamDecoder dec(Protocol::PubSub);
  std::vector<Packet> got;
  for (std::size_t i = 0; i < stream.size(); i += 3) {
    auto end = std::min(stream.size(), i + 3);
    for (auto& f : dec.feed(std::span(stream).subspan(i, end - i))) got.push_back(f.packet);
  }
  EXPECT_EQ(got, sent);
  EXPECT_TRUE(dec.pending().empty());
  EXPECT_FALSE(dec.take_failure());
}

TEST(StreamDecoder, ReportsFailureOnceAndStops) {
  StreamDecoder dec(Protocol::Stp);
  auto good = encode(DataPacket{3, to_bytes("a")});
  auto frames = dec.feed(good);
  EXPECT_EQ(frames.size(), 1u);
  EXPECT_TRUE(dec.feed(from_hex("09ff")).empty());
  auto failure = dec.take_failure();
  ASSERT_TRUE(failure);
  EXPECT_EQ(failure->status, DecodeStatus::UnknownDiscriminant);
  EXPECT_EQ(failure->stream_offset, good.size());
  EXPECT_FALSE(dec.take_failure());
  EXPECT_TRUE(dec.feed(good).empty());
}
