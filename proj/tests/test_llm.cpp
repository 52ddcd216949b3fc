#include "printloop/agent.hpp"
#include "printloop/llm.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <algorithm>

using namespace printloop;
using namespace printloop::llm;

namespace {

Observation obs_of(std::initializer_list<std::pair<const std::string, std::string>> entries) {
    return Observation(entries);
}

ChatRequest request_with(const std::string& schema, const std::vector<std::pair<std::string, std::string>>& entries) {
    ChatRequest r;
    r.system_prompt = "you are a test";
    r.response_schema_hint = schema;
    r.turns.push_back({"user", "look at this\n" + format_observation(entries), {}});
    return r;
}

std::vector<std::string> plan_targets(const std::string& text) {
    std::vector<std::string> out;
    for (const auto& s : agent::parse_plan(text).steps) out.push_back(s.target);
    return out;
}

bool contains(const std::vector<std::string>& v, const std::string& s) {
    return std::find(v.begin(), v.end(), s) != v.end();
}

class FakeTransport : public printer::Transport {
public:
    printer::HttpResponse reply;
    std::vector<printer::HttpRequest> seen;
    bool fail = false;
    printer::HttpResponse send(const printer::HttpRequest& r) override {
        seen.push_back(r);
        if (fail) throw printer::TransportError("connection refused");
        return reply;
    }
};

class CountingBackend : public Backend {
public:
    int calls = 0;
    ChatResponse complete(const ChatRequest&) override {
        ++calls;
        return {"```report\nlayer: 1\nno_failures: true\n```\n", "stop", {10, 5}, 12.5};
    }
    std::string name() const override { return "counting"; }
};

}  // namespace

TEST(Tokens, Estimates) {
    ChatRequest r;
    EXPECT_EQ(estimate_tokens(r), 0);
    r.system_prompt = std::string(300, 'x');
    EXPECT_EQ(estimate_tokens(r), 100);
    r.system_prompt = std::string(301, 'x');
    EXPECT_EQ(estimate_tokens(r), 101);

    ChatRequest img;
    img.turns.push_back({"user", "", {ImagePart{}, ImagePart{}}});
    EXPECT_EQ(estimate_tokens(img), 2200);
}

TEST(Tokens, BudgetGateStopsBeforeTransport) {
    auto fake = std::make_shared<FakeTransport>();
    RemoteOptions opts;
    opts.api_key = "k";
    RemoteBackend remote(opts, fake);
    ChatRequest r;
    r.system_prompt = std::string(128001 * 3, 'x');
    EXPECT_THROW(check_budget(r), BudgetError);
    EXPECT_THROW(remote.complete(r), BudgetError);
    EXPECT_TRUE(fake->seen.empty());

    OracleBackend oracle;
    EXPECT_THROW(oracle.complete(r), BudgetError);
}

TEST(Observation, FormatAndFind) {
    const auto req = request_with("report", {{"layer", "3"}, {"failure", "stringing"}, {"failure", "blobs"}});
    const auto obs = find_observation(req);
    ASSERT_TRUE(obs.has_value());
    EXPECT_EQ(obs->find("layer")->second, "3");
    EXPECT_EQ(obs->count("failure"), 2u);

    ChatRequest none;
    none.turns.push_back({"user", "no block here", {}});
    EXPECT_FALSE(find_observation(none).has_value());
}

TEST(Observation, LastBlockWins) {
    ChatRequest r;
    r.turns.push_back({"user", format_observation({{"layer", "1"}}), {}});
    r.turns.push_back({"assistant", "ok", {}});
    r.turns.push_back({"user", format_observation({{"layer", "2"}}), {}});
    EXPECT_EQ(find_observation(r)->find("layer")->second, "2");
}

TEST(Oracle, SeverityLabels) {
    EXPECT_EQ(oracle::severity_label(0.3), "low");
    EXPECT_EQ(oracle::severity_label(0.5), "medium");
    EXPECT_EQ(oracle::severity_label(0.69), "medium");
    EXPECT_EQ(oracle::severity_label(0.7), "high");
}

TEST(Oracle, DetectReportsModesAtThreshold) {
    const auto text = oracle::detect(obs_of({{"layer", "4"},
                                             {"severity.stringing_oozing", "0.7"},
                                             {"severity.under_extrusion", "0.29"},
                                             {"severity.warping", "0.3"}}));
    const auto report = agent::parse_report(text);
    EXPECT_FALSE(report.no_failures);
    EXPECT_TRUE(report.has(FailureMode::stringing_oozing));
    EXPECT_TRUE(report.has(FailureMode::warping));
    EXPECT_FALSE(report.has(FailureMode::under_extrusion));
    EXPECT_EQ(report.layer_index, 3);
    for (const auto& f : report.failures) {
        if (f.mode == FailureMode::stringing_oozing) {
            EXPECT_EQ(f.severity, agent::Severity::high);
        }
    }
}

TEST(Oracle, DetectCleanLayer) {
    const auto report = agent::parse_report(
        oracle::detect(obs_of({{"layer", "1"}, {"severity.stringing_oozing", "0.1"}, {"severity.warping", "0"}})));
    EXPECT_TRUE(report.no_failures);
    EXPECT_TRUE(report.failures.empty());
}

TEST(Oracle, DetectWithoutSeveritiesIsError) {
    EXPECT_THROW(oracle::detect(obs_of({{"layer", "1"}})), BackendError);
}

TEST(Oracle, FirstFlowStepIs105) {
    const auto targets = plan_targets(oracle::plan(obs_of({{"kind", "solution"},
                                                           {"failure", "under_extrusion"},
                                                           {"param.flow_factor", "1.0"},
                                                           {"param.print_speed", "120"},
                                                           {"nominal.speed", "120"}})));
    ASSERT_EQ(targets.size(), 1u);
    EXPECT_EQ(targets[0], "gcode:M221 S105");
}

TEST(Oracle, SecondFlowStepIs110ThenStops) {
    auto targets = plan_targets(oracle::plan(
        obs_of({{"kind", "solution"}, {"failure", "inconsistent_extrusion"}, {"param.flow_factor", "1.05"}})));
    EXPECT_TRUE(contains(targets, "gcode:M221 S110"));
    targets = plan_targets(oracle::plan(
        obs_of({{"kind", "solution"}, {"failure", "under_extrusion"}, {"param.flow_factor", "1.10"}})));
    EXPECT_TRUE(targets.empty());
}

TEST(Oracle, SpeedReducedOnlyAboveNominal) {
    auto targets = plan_targets(oracle::plan(obs_of({{"kind", "solution"},
                                                     {"failure", "under_extrusion"},
                                                     {"param.flow_factor", "0.75"},
                                                     {"param.print_speed", "170"},
                                                     {"param.speed_factor", "1.0"},
                                                     {"nominal.speed", "120"}})));
    EXPECT_TRUE(contains(targets, "gcode:M221 S105"));
    EXPECT_TRUE(contains(targets, "gcode:M220 S75"));

    targets = plan_targets(oracle::plan(obs_of({{"kind", "solution"},
                                                {"failure", "under_extrusion"},
                                                {"param.flow_factor", "0.75"},
                                                {"param.print_speed", "100"},
                                                {"param.speed_factor", "1.0"},
                                                {"nominal.speed", "120"}})));
    EXPECT_FALSE(contains(targets, "gcode:M220 S75"));
}

TEST(Oracle, RetractionZAndBedRules) {
    const auto targets = plan_targets(oracle::plan(obs_of({{"kind", "solution"},
                                                           {"failure", "stringing_oozing"},
                                                           {"failure", "layer_separation"},
                                                           {"failure", "warping"},
                                                           {"cue.z", "raised"},
                                                           {"param.retraction_length", "1.0"},
                                                           {"param.retraction_speed", "50"},
                                                           {"param.bed_target", "60"}})));
    EXPECT_TRUE(contains(targets, "gcode:SET_RETRACTION RETRACT_LENGTH=1.500 RETRACT_SPEED=55.0"));
    EXPECT_TRUE(contains(targets, "gcode:SET_GCODE_OFFSET Z_ADJUST=-0.050 MOVE=1"));
    EXPECT_TRUE(contains(targets, "gcode:M140 S65"));

    const auto lowered = plan_targets(oracle::plan(
        obs_of({{"kind", "solution"}, {"failure", "layer_separation"}, {"cue.z", "lowered"}})));
    EXPECT_TRUE(contains(lowered, "gcode:SET_GCODE_OFFSET Z_ADJUST=0.050 MOVE=1"));
}

TEST(Oracle, TpuAdhesionRaisesNozzleTo220) {
    const auto targets = plan_targets(oracle::plan(obs_of({{"kind", "solution"},
                                                           {"failure", "bed_adhesion"},
                                                           {"material", "TPU"},
                                                           {"param.nozzle_target", "210"}})));
    EXPECT_TRUE(contains(targets, "gcode:M104 S220"));
    const auto pla = plan_targets(oracle::plan(obs_of(
        {{"kind", "solution"}, {"failure", "bed_adhesion"}, {"material", "PLA"}, {"param.nozzle_target", "210"}})));
    EXPECT_FALSE(contains(pla, "gcode:M104 S220"));
}

TEST(Oracle, InformationPlanForStringing) {
    const auto targets =
        plan_targets(oracle::plan(obs_of({{"kind", "information"}, {"failure", "stringing_oozing"}})));
    EXPECT_TRUE(contains(targets, "query:firmware_retraction"));
    EXPECT_TRUE(contains(targets, "query:extruder"));
    EXPECT_TRUE(contains(targets, "query:fan"));
}

TEST(Oracle, ReactWalksPendingStepsAndAlternatives) {
    auto step = agent::parse_react(oracle::react(obs_of({{"pending", "query:motion_report"}})));
    EXPECT_EQ(step.action, "query motion_report");
    step = agent::parse_react(oracle::react(obs_of({{"pending", "query:motion_report"},
                                                     {"failed", "query:motion_report"},
                                                     {"candidate", "query:motion_report => query:toolhead"}})));
    EXPECT_EQ(step.action, "query toolhead");
    step = agent::parse_react(oracle::react(obs_of({})));
    EXPECT_EQ(step.action, "finish");
}

TEST(Oracle, BackendIsDeterministic) {
    OracleBackend backend;
    const auto req = request_with("report", {{"layer", "2"}, {"severity.stringing_oozing", "0.7"}});
    const auto a = backend.complete(req);
    const auto b = backend.complete(req);
    EXPECT_EQ(a.text, b.text);
    EXPECT_NE(a.text.find("stringing"), std::string::npos);
    EXPECT_EQ(a.finish_reason, "stop");
    EXPECT_GT(a.usage.input_tokens, 0);
}

TEST(Oracle, BackendErrors) {
    OracleBackend backend;
    ChatRequest none;
    none.response_schema_hint = "report";
    none.turns.push_back({"user", "hello", {}});
    EXPECT_THROW(backend.complete(none), BackendError);
    EXPECT_THROW(backend.complete(request_with("poem", {{"layer", "1"}})), BackendError);
}

TEST(Remote, OpenAiBodyCarriesInlineImages) {
    ChatRequest r;
    r.system_prompt = "sys";
    r.temperature = 0.0;
    r.max_output_tokens = 300;
    r.turns.push_back({"user", "describe", {ImagePart{"current/top", "image/png", {1, 2, 3}}}});
    r.turns.push_back({"assistant", "ok", {}});
    const auto j = to_openai_json(r, "gpt-4o");
    EXPECT_EQ(j["model"], "gpt-4o");
    EXPECT_EQ(j["max_tokens"], 300);
    ASSERT_EQ(j["messages"].size(), 3u);
    EXPECT_EQ(j["messages"][0]["role"], "system");
    EXPECT_EQ(j["messages"][1]["content"][1]["image_url"]["url"], "data:image/png;base64,AQID");
    EXPECT_EQ(j["messages"][2]["content"], "ok");
}

TEST(Remote, SendsAuthAndParsesCompletion) {
    auto fake = std::make_shared<FakeTransport>();
    fake->reply = {200,
                   R"({"choices":[{"message":{"content":"hello"},"finish_reason":"stop"}],
                       "usage":{"prompt_tokens":12,"completion_tokens":3}})",
                   "application/json",
                   {}};
    RemoteOptions opts;
    opts.base_url = "https://llm.example/v1/";
    opts.api_key = "secret";
    opts.model = "m";
    RemoteBackend backend(opts, fake);
    const auto r = backend.complete(request_with("report", {{"layer", "1"}}));
    EXPECT_EQ(r.text, "hello");
    EXPECT_EQ(r.usage.input_tokens, 12);
    EXPECT_EQ(r.usage.output_tokens, 3);
    ASSERT_EQ(fake->seen.size(), 1u);
    EXPECT_EQ(fake->seen[0].target, "/v1/chat/completions");
    EXPECT_EQ(fake->seen[0].headers.at("Authorization"), "Bearer secret");
    EXPECT_EQ(nlohmann::json::parse(fake->seen[0].body)["model"], "m");
}

TEST(Remote, SurfacesHttpErrors) {
    auto fake = std::make_shared<FakeTransport>();
    fake->reply = {429, R"({"error":{"message":"rate limited"}})", "application/json", {}};
    RemoteOptions opts;
    opts.api_key = "k";
    RemoteBackend backend(opts, fake);
    try {
        backend.complete(request_with("report", {}));
        FAIL() << "expected BackendError";
    } catch (const BackendError& e) {
        EXPECT_EQ(e.status(), 429);
        EXPECT_NE(e.body().find("rate limited"), std::string::npos);
    }
    fake->reply = {200, "not json", "application/json", {}};
    EXPECT_THROW(backend.complete(request_with("report", {})), BackendError);
    fake->fail = true;
    EXPECT_THROW(backend.complete(request_with("report", {})), BackendError);
}

TEST(Remote, MissingKeyIsErrorBeforeSend) {
    auto fake = std::make_shared<FakeTransport>();
    RemoteBackend backend(RemoteOptions{}, fake);
    EXPECT_THROW(backend.complete(request_with("report", {})), BackendError);
    EXPECT_TRUE(fake->seen.empty());
}

TEST(Fixtures, RequestKeyIsStableAndSensitive) {
    auto a = request_with("report", {{"layer", "1"}});
    auto b = a;
    EXPECT_EQ(request_key(a), request_key(b));
    b.turns[0].images.push_back({"x", "image/png", {9}});
    EXPECT_NE(request_key(a), request_key(b));
    auto c = a;
    c.response_schema_hint = "plan";
    EXPECT_NE(request_key(a), request_key(c));
}

TEST(Fixtures, RecordThenReplay) {
    test_support::TempDir dir("fixtures");
    auto inner = std::make_shared<CountingBackend>();
    const auto req = request_with("report", {{"layer", "1"}});

    FixtureBackend recorder(dir.str(), inner);
    const auto first = recorder.complete(req);
    EXPECT_EQ(inner->calls, 1);

    FixtureBackend replay(dir.str());
    const auto again = replay.complete(req);
    EXPECT_EQ(again.text, first.text);
    EXPECT_EQ(again.usage.input_tokens, 10);
    EXPECT_DOUBLE_EQ(again.latency_ms, 12.5);
    EXPECT_EQ(inner->calls, 1);

    EXPECT_THROW(replay.complete(request_with("report", {{"layer", "2"}})), BackendError);
}
