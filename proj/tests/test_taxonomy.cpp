#include <gtest/gtest.h>

#include "cpbgen/taxonomy.hpp"
#include "test_support.hpp"

using namespace cpbgen;
using namespace cpbgen::taxonomy;
using validator::Check;
using validator::CheckFailure;
using validator::Verdict;

namespace {

Verdict failing(CheckFailure f) {
  Verdict v;
  v.failures.push_back(std::move(f));
  return v;
}

TrialRecord trial(std::string scenario, Protocol proto, int k, bool pass, std::vector<ErrorType> op_labels = {}) {
  TrialRecord t;
  t.scenario_id = std::move(scenario);
  t.proto = proto;
  t.trial = k;
  if (!pass) {
    CheckFailure f;
    f.check = Check::ProtocolLogic;
    t.verdict = failing(f);
  }
  for (const auto& l : op_labels) t = record_label(t, l);
  return t;
}

const ErrorType kCve = make_error_type(ErrorSubtype::ConstantValueError);
const ErrorType kIcmsMulti = make_error_type(ErrorSubtype::MissingMultipleStatements);

}  // namespace

TEST(Suggest, PassHasNoSuggestion) { EXPECT_TRUE(suggest_labels(Verdict{}).empty()); }

TEST(Suggest, FieldOrderFailureIsIncorrectArithmeticOperation) {
  CheckFailure f;
  f.check = Check::FormatConformance;
  f.swapped_publish_layout = true;
  auto s = suggest_labels(failing(f));
  ASSERT_FALSE(s.empty());
  EXPECT_EQ(format(s.front().type), "O/CE:incorrect-arithmetic-operation");
  EXPECT_EQ(s.front().confidence, Confidence::High);
}

TEST(Suggest, UndefinedIdentifierIsReferenceError) {
  CheckFailure f;
  f.check = Check::Executes;
  f.stderr_tail = "Traceback (most recent call last):\nNameError: name 'remove_subscription' is not defined\n";
  auto absent = suggest_labels(failing(f), "def handle():\n    remove_subscription(t)\n");
  ASSERT_EQ(absent.size(), 1u);
  EXPECT_EQ(format(absent[0].type), "RE:undefined-name");
  EXPECT_EQ(absent[0].confidence, Confidence::High);
  auto present = suggest_labels(failing(f), "def remove_subscription(t):\n    pass\n");
  EXPECT_EQ(present[0].confidence, Confidence::Medium);
}

TEST(Suggest, ThresholdBoundaryPrefersConstantValueError) {
  CheckFailure f;
  f.check = Check::ProtocolLogic;
  validator::Divergence d;
  d.role = "receiver";
  d.kind = validator::DivergenceKind::Missing;
  d.expected = wire::DataPacket{5, {}};
  d.hint = validator::site::kThresholdBoundary;
  f.divergences.push_back(d);
  auto top = top_suggestions(suggest_labels(failing(f)));
  ASSERT_EQ(top.size(), 1u);
  EXPECT_EQ(top[0].type, kCve);
}

TEST(Suggest, NeverCertain) {
  // Confidence is an ordinal hint; labels from operators win in reports.
  auto t = trial("S2", Protocol::Stp, 1, false);
  t.labels.push_back({kCve, LabelSource::Heuristic});
  t = record_label(t, kIcmsMulti);
  EXPECT_EQ(t.effective_labels(), std::vector<ErrorType>{kIcmsMulti});
}

TEST(RecordLabel, PassingTrialRejectsLabels) {
  auto t = trial("S1", Protocol::Cc, 1, true);
  try {
    record_label(t, kCve);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::LabelOnPass);
  }
}

TEST(RecordLabel, MultipleLabelsAreRetained) {
  auto t = trial("S2", Protocol::Cc, 1, false, {kCve, make_error_type(ErrorSubtype::IncorrectMethodCallTarget)});
  EXPECT_EQ(t.effective_labels().size(), 2u);
}

TEST(Aggregate, AllPassingCell) {
  std::vector<TrialRecord> trials;
  for (int k = 1; k <= 20; ++k) trials.push_back(trial("S1", Protocol::Stp, k, true));
  auto r = aggregate(trials);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0].pass_count, 20);
  EXPECT_TRUE(r[0].composition.empty());
}

TEST(Aggregate, SingleConstantValueFailure) {
  std::vector<TrialRecord> trials;
  for (int k = 1; k <= 20; ++k) trials.push_back(trial("S2", Protocol::Stp, k, k != 7, k == 7 ? std::vector{kCve} : std::vector<ErrorType>{}));
  auto r = aggregate(trials);
  EXPECT_EQ(r[0].pass_count, 19);
  EXPECT_EQ(r[0].composition, (std::map<ErrorType, int>{{kCve, 1}}));
}

TEST(Aggregate, IncompleteCellThrows) {
  std::vector<TrialRecord> trials;
  for (int k = 1; k <= 19; ++k) trials.push_back(trial("S4", Protocol::PubSub, k, true));
  EXPECT_THROW(aggregate(trials), Error);
  trials.push_back(trial("S4", Protocol::PubSub, 19, true));  // duplicate index
  try {
    aggregate(trials);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::IncompleteScenario);
  }
}

TEST(Aggregate, ConservationOverRandomCells) {
  std::mt19937 rng(3);
  for (int round = 0; round < 50; ++round) {
    std::vector<TrialRecord> trials;
    std::map<ErrorType, int> label_multiset;
    int fails = 0;
    auto all = all_error_types();
    for (int k = 1; k <= 20; ++k) {
      bool pass = rng() % 3 == 0;
      std::vector<ErrorType> labels;
      if (!pass) {
        ++fails;
        for (unsigned n = rng() % 3; n > 0; --n) labels.push_back(all[rng() % all.size()]);
        for (const auto& l : labels) ++label_multiset[l];
      }
      trials.push_back(trial("S3", Protocol::Cc, k, pass, labels));
    }
    auto r = aggregate(trials).at(0);
    EXPECT_EQ(r.pass_count + fails, 20);
    EXPECT_EQ(r.composition, label_multiset);
  }
}

TEST(Report, CsvRowsMatchAggregation) {
  std::vector<TrialRecord> trials;
  for (int k = 1; k <= 20; ++k) trials.push_back(trial("S1", Protocol::Stp, k, true));
  for (int k = 1; k <= 20; ++k) trials.push_back(trial("S2", Protocol::Stp, k, k != 1, k == 1 ? std::vector{kCve} : std::vector<ErrorType>{}));
  for (int k = 1; k <= 20; ++k) trials.push_back(trial("S4", Protocol::PubSub, k, k > 6, k <= 6 ? std::vector{kIcmsMulti} : std::vector<ErrorType>{}));
  auto csv = export_report(aggregate(trials));
  EXPECT_EQ(csv,
            "scenario,proto,row,label,count,trials\n"
            "S1,stp,pass_rate,,20,20\n"
            "S2,stp,pass_rate,,19,20\n"
            "S2,stp,error,CVE:constant-value-error,1,20\n"
            "S4,pubsub,pass_rate,,14,20\n"
            "S4,pubsub,error,IC/MS:missing-multiple-statements,6,20\n");
}

TEST(LabelFile, RoundTrips) {
  auto dir = testsupport::scratch_dir("labels");
  std::vector<TrialRecord> trials{trial("S1", Protocol::Stp, 1, true), trial("S2", Protocol::Cc, 2, false, {kCve})};
  trials[1].labels.insert(trials[1].labels.begin(), Label{kIcmsMulti, LabelSource::Heuristic});
  write_labels(dir / "labels.jsonl", trials);
  auto back = read_labels(dir / "labels.jsonl");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_TRUE(back[0].pass());
  EXPECT_FALSE(back[1].pass());
  EXPECT_EQ(back[1].labels, trials[1].labels);
  EXPECT_EQ(back[1].verdict.first_failed(), Check::ProtocolLogic);
}

TEST(LabelFile, LabelsOnPassingTrialAreRejected) {
  auto dir = testsupport::scratch_dir("labels-bad");
  write_file(dir / "labels.jsonl",
             R"({"scenario":"S1","proto":"stp","trial":1,"outcome":"PASS","labels":[{"type":"CVE:constant-value-error","source":"operator"}]})"
             "\n");
  EXPECT_THROW(read_labels(dir / "labels.jsonl"), Error);
}

TEST(Taxonomy, EveryTypeRoundTripsThroughItsTextForm) {
  for (const auto& t : all_error_types()) EXPECT_EQ(parse_error_type(format(t)), t);
  EXPECT_THROW(parse_error_type("CVE:missing-condition"), Error);
}
