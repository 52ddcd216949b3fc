#include "printloop/agent.hpp"

#include <gtest/gtest.h>

using namespace printloop;
using namespace printloop::agent;

TEST(Report, ParseFencedBlock) {
    const auto r = parse_report(R"(Here is my analysis.
```report
layer: 9
no_failures: false
observations: seams and strands
failure: layer_separation | severity=high | evidence=seams | region=nozzle raised
failure: Stringing | severity=low | evidence=strands
failure: stringing | severity=high | evidence=duplicate is dropped
failure: layer shift | severity=high | evidence=not a supported mode
quality_note: poor
```
)");
    EXPECT_EQ(r.layer_index, 8);
    EXPECT_FALSE(r.no_failures);
    ASSERT_EQ(r.failures.size(), 2u);
    EXPECT_EQ(r.failures[0].mode, FailureMode::layer_separation);
    EXPECT_EQ(r.failures[0].severity, Severity::high);
    EXPECT_EQ(*r.failures[0].region_hint, "nozzle raised");
    EXPECT_EQ(r.failures[1].mode, FailureMode::stringing_oozing);
    EXPECT_EQ(r.failures[1].severity, Severity::low);
    EXPECT_EQ(r.quality_note, "poor");
}

TEST(Report, MissingFieldsAreFormatErrors) {
    EXPECT_THROW(parse_report("```report\nlayer: 1\n```"), FormatError);
    EXPECT_THROW(parse_report("```report\nno_failures: true\n```"), FormatError);
    EXPECT_THROW(parse_report("```report\nlayer: x\nno_failures: true\n```"), FormatError);
    EXPECT_THROW(parse_report("```report\nlayer: 1\nno_failures: maybe\n```"), FormatError);
}

TEST(Report, ContradictoryVerdictTrustsList) {
    const auto r = parse_report("```report\nlayer: 2\nno_failures: true\nfailure: warping | severity=low\n```");
    EXPECT_FALSE(r.no_failures);
    EXPECT_TRUE(r.has(FailureMode::warping));
}

TEST(Report, FormatParseRoundTrip) {
    FailureReport r;
    r.layer_index = 4;
    r.observations = "gaps";
    r.no_failures = false;
    r.failures = {{FailureMode::under_extrusion, "gaps between lines", Severity::medium, {}},
                  {FailureMode::bed_adhesion, "loose edge", Severity::high, std::string("front left")}};
    r.quality_note = "fair";
    const auto back = parse_report(format_report(r));
    EXPECT_EQ(back.to_json(), r.to_json());
    EXPECT_EQ(FailureReport::from_json(r.to_json()).to_json(), r.to_json());
}

TEST(Report, ValidateInvariants) {
    FailureReport r;
    r.no_failures = false;
    EXPECT_THROW(r.validate(), FormatError);
    r.failures = {{FailureMode::warping, "", Severity::low, {}}, {FailureMode::warping, "", Severity::low, {}}};
    EXPECT_THROW(r.validate(), FormatError);
    r.failures.pop_back();
    EXPECT_NO_THROW(r.validate());
}

TEST(Plan, ParseAndFormat) {
    const auto p = parse_plan(R"(```plan
frame: causal_chaining
step: goal=raise flow | target=gcode:M221 S110 | expect=extrude_factor 1.10
step: goal=read retraction | target=query:firmware_retraction | expect=retract_length
```)");
    EXPECT_EQ(p.reasoning_frame, "causal_chaining");
    ASSERT_EQ(p.steps.size(), 2u);
    EXPECT_EQ(p.steps[0].target, "gcode:M221 S110");
    EXPECT_EQ(p.steps[1].expected_observation, "retract_length");
    const auto again = parse_plan(format_plan(p));
    EXPECT_EQ(again.to_json(), p.to_json());
    EXPECT_EQ(ActionPlan::from_json(p.to_json()).to_json(), p.to_json());
}

TEST(Plan, Errors) {
    EXPECT_THROW(parse_plan("nothing useful here"), FormatError);
    EXPECT_THROW(parse_plan("```plan\nstep: goal=x\n```"), FormatError);
    EXPECT_TRUE(parse_plan("```plan\nnote: no parameter change indicated\n```").steps.empty());
}

TEST(Plan, CheckTarget) {
    const auto c = printer::EndpointCatalog::moonraker_default();
    EXPECT_FALSE(check_target(c, "query:gcode_move"));
    EXPECT_FALSE(check_target(c, "query:extruder:target,temperature"));
    EXPECT_FALSE(check_target(c, "gcode:M221 S110"));
    EXPECT_FALSE(check_target(c, "gcode:M221 S110\nM220 S75"));
    EXPECT_FALSE(check_target(c, "endpoint:server.info"));
    EXPECT_TRUE(check_target(c, "query:secret_object"));
    EXPECT_TRUE(check_target(c, "gcode:M112"));
    EXPECT_TRUE(check_target(c, "gcode:M221 S110\nFIRMWARE_RESTART"));
    EXPECT_TRUE(check_target(c, "gcode:G28"));
    EXPECT_TRUE(check_target(c, "endpoint:machine.shutdown"));
    EXPECT_TRUE(check_target(c, "endpoint:no.such.endpoint"));
    EXPECT_TRUE(check_target(c, "M221 S110"));
    EXPECT_TRUE(check_target(c, "gcode:   "));
    EXPECT_TRUE(check_target(c, "shell:rm"));
}

TEST(Frames, RankingByKeywordOverlap) {
    EXPECT_EQ(frame_catalog().size(), 3u);
    EXPECT_NE(find_frame("causal_chaining"), nullptr);
    EXPECT_EQ(find_frame("astrology"), nullptr);
    EXPECT_EQ(rank_frames(PlanKind::information, {FailureMode::stringing_oozing}).front(), "diagnostic_questioning");
    EXPECT_EQ(rank_frames(PlanKind::solution, {FailureMode::stringing_oozing}).front(), "parameter_effect_table");
    EXPECT_EQ(rank_frames(PlanKind::solution, {FailureMode::under_extrusion, FailureMode::layer_separation}).front(),
              "causal_chaining");
    EXPECT_EQ(rank_frames(PlanKind::solution, {}).size(), 3u);
}

TEST(React, ParseSteps) {
    const auto s = parse_react("```react\nthought: read flow first\naction: query gcode_move\n```");
    EXPECT_EQ(s.thought, "read flow first");
    EXPECT_EQ(s.action, "query gcode_move");
    EXPECT_EQ(parse_react("```react\nthought: done\naction: finish\n```").action, "finish");
    EXPECT_THROW(parse_react("```react\nthought: hmm\n```"), FormatError);
    EXPECT_THROW(parse_react("```react\naction: finish\n```"), FormatError);
}

TEST(React, TraceJsonRoundTrip) {
    ReActTrace t;
    t.iterations = {{"a", "query gcode_move", "ok"}, {"b", "finish", ""}};
    t.outcome = ReActOutcome::exhausted;
    EXPECT_EQ(ReActTrace::from_json(t.to_json()).to_json(), t.to_json());
}

TEST(Severity, Names) {
    EXPECT_EQ(severity_from_string("Moderate"), Severity::medium);
    EXPECT_EQ(severity_from_string("severe"), Severity::high);
    EXPECT_THROW(severity_from_string("extreme"), FormatError);
}

TEST(FailureModes, NamesAndAliases) {
    for (const auto m : kAllFailureModes) EXPECT_EQ(failure_mode_from_string(to_string(m)), m);
    EXPECT_EQ(failure_mode_from_alias("Blobs"), FailureMode::blobs_zits);
    EXPECT_EQ(failure_mode_from_alias("extrusion inconsistency"), FailureMode::inconsistent_extrusion);
    EXPECT_FALSE(failure_mode_from_alias("layer shift").has_value());
    EXPECT_FALSE(failure_mode_from_string("layer_shift").has_value());
}
