#include "printloop/agent.hpp"
#include "printloop/sim.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <algorithm>

using namespace printloop;
using namespace printloop::agent;

namespace {

struct Rig {
    std::shared_ptr<sim::VirtualPrinter> printer;
    std::unique_ptr<printer::PrinterClient> client;
    llm::OracleBackend oracle;
    std::unique_ptr<Pipeline> pipeline;
    StateDictionary state;

    explicit Rig(sim::Scenario s, llm::Backend* backend = nullptr, AgentConfig config = {}) {
        printer = std::make_shared<sim::VirtualPrinter>(s);
        printer->load_job(sim::plan_checkpoints(s));
        printer::ClientOptions opts;
        opts.sleep = [](std::chrono::milliseconds) {};
        client = std::make_unique<printer::PrinterClient>(std::make_shared<sim::SimTransport>(printer),
                                                          printer::EndpointCatalog::moonraker_default(), opts);
        config.part_description = s.part_description;
        config.material = std::string(sim::to_string(s.material));
        config.nominal_speed_mm_s = s.nominal.speed_mm_s;
        pipeline = std::make_unique<Pipeline>(backend ? *backend : oracle, *client, config);
    }

    CapturedImages capture() {
        CapturedImages images;
        for (const auto cam : {printer::Camera::top, printer::Camera::front}) {
            const auto snap = client->capture_snapshot(cam);
            EXPECT_TRUE(snap.result.ok()) << snap.result.message;
            images.now.push_back({"current/" + std::string(printer::to_string(cam)), "image/png", snap.bytes});
            if (cam == printer::Camera::top) images.annotations = snap.annotations;
        }
        return images;
    }

    CheckpointRecord& checkpoint() {
        const auto ev = printer->current_event();
        CheckpointRecord r;
        r.checkpoint = ev->checkpoint;
        r.layer_index = ev->layer_index;
        r.segment_index = ev->segment_index;
        state.checkpoints.push_back(r);
        auto& rec = state.checkpoints.back();
        pipeline->run_checkpoint(state, rec, capture());
        return rec;
    }
};

sim::Scenario scenario(int layers, double flow, double speed) {
    sim::Scenario s;
    s.part_description = "test box";
    s.layers = layers;
    s.render = {96, 96, {8, 8, 88, 88}};
    s.nominal = {1.0, 120.0, 200.0, 60.0};
    s.initial.base_speed_mm_s = speed;
    s.initial.nozzle_target = 200.0;
    s.initial.flow_factor = flow;
    return s;
}

// Replies to every request with the same text.
class ScriptedBackend : public llm::Backend {
public:
    std::map<std::string, std::vector<std::string>> replies;  // schema -> queue (last one repeats)
    std::map<std::string, int> calls;
    llm::ChatResponse complete(const llm::ChatRequest& r) override {
        auto& q = replies.at(r.response_schema_hint);
        const int i = calls[r.response_schema_hint]++;
        return {q[std::min<std::size_t>(i, q.size() - 1)], "stop", {}, 0.0};
    }
    std::string name() const override { return "scripted"; }
};

}  // namespace

TEST(Pipeline, NominalLayerGoesStraightToHandoff) {
    Rig rig(scenario(3, 1.0, 120.0));
    const auto& rec = rig.checkpoint();
    EXPECT_TRUE(rec.report->no_failures);
    EXPECT_EQ(rec.module_sequence, (std::vector<std::string>{"detector", "handoff"}));
    EXPECT_TRUE(rec.resumed);
    EXPECT_FALSE(rec.degraded);
    EXPECT_NE(rec.commentary.find("no action taken"), std::string::npos);
    EXPECT_TRUE(rig.printer->command_log().empty());
    EXPECT_EQ(rig.printer->current_event()->checkpoint, 2);
}

TEST(Pipeline, UnderExtrusionFullCycle) {
    Rig rig(scenario(3, 0.75, 170.0));
    const auto& rec = rig.checkpoint();
    EXPECT_TRUE(rec.report->has(FailureMode::under_extrusion));
    EXPECT_EQ(rec.module_sequence.size(), 6u);
    EXPECT_TRUE(sequence_satisfies_contract(rec.module_sequence, true, rec.degraded));
    EXPECT_FALSE(rec.degraded);
    EXPECT_DOUBLE_EQ(rec.gathered_info.at("flow_factor"), 0.75);
    EXPECT_NEAR(rig.printer->commanded().flow_factor, 1.05, 1e-12);
    EXPECT_NEAR(rig.printer->commanded().speed_factor, 0.75, 1e-12);
    ASSERT_FALSE(rec.executed_actions.empty());
    for (const auto& a : rec.executed_actions) EXPECT_EQ(a.status, printer::ApiStatus::ok);
    for (const auto& v : rec.verifications) EXPECT_TRUE(v.ok) << v.parameter;
    EXPECT_NE(rec.commentary.find("flow 75% → 105%"), std::string::npos) << rec.commentary;
    EXPECT_NE(rec.commentary.find("speed 100% → 75%"), std::string::npos) << rec.commentary;
    for (const auto m : kAllModules) {
        EXPECT_NE(rec.status(m), ModuleStatus::pending) << to_string(m);
    }
    // Every executed parameter change reached the printer and was read back.
    const auto log = rig.printer->command_log();
    for (const auto& a : rec.executed_actions) {
        EXPECT_NE(std::find(log.begin(), log.end(), a.command), log.end()) << a.command;
        for (const auto& e : a.expectations) {
            EXPECT_TRUE(std::any_of(rec.verifications.begin(), rec.verifications.end(),
                                    [&](const Verification& v) { return v.parameter == e.parameter; }));
        }
    }
}

TEST(Pipeline, CorrectedDefectIsNotReportedAgain) {
    Rig rig(scenario(3, 0.75, 170.0));
    rig.checkpoint();
    const auto& second = rig.checkpoint();
    EXPECT_FALSE(second.report->has(FailureMode::under_extrusion));
    EXPECT_TRUE(second.report->no_failures);
}

TEST(Pipeline, FlowSecondStepTo110) {
    Rig rig(scenario(3, 1.05, 120.0));
    rig.printer->inject_perturbation(2, sim::PerturbationKind::flow_loss, 0.15);
    rig.checkpoint();
    const auto& rec = rig.checkpoint();
    EXPECT_TRUE(rec.report->has(FailureMode::under_extrusion));
    EXPECT_NEAR(rig.printer->commanded().flow_factor, 1.10, 1e-12);
    EXPECT_NE(rec.commentary.find("flow 105% → 110%"), std::string::npos) << rec.commentary;
}

TEST(Pipeline, AbsentObjectFallsBackToAlternative) {
    auto s = scenario(2, 1.0, 120.0);
    s.absent_objects = {"motion_report"};
    Rig rig(s);
    CheckpointRecord rec;
    rec.checkpoint = 1;
    ActionPlan plan;
    plan.steps.push_back({"read toolhead position", "query:motion_report", "live_position"});
    const auto trace = rig.pipeline->execute(PlanKind::information, plan, rec);
    EXPECT_EQ(trace.outcome, ReActOutcome::completed);
    ASSERT_EQ(trace.iterations.size(), 2u);
    EXPECT_EQ(trace.iterations[0].action, "query motion_report");
    EXPECT_NE(trace.iterations[0].observation.find("absent"), std::string::npos);
    EXPECT_EQ(trace.iterations[1].action, "query toolhead");
    EXPECT_EQ(trace.iterations[1].observation.rfind("ok", 0), 0u);
}

TEST(Pipeline, InformationPlanOfThreeQueries) {
    Rig rig(scenario(2, 1.0, 120.0));
    CheckpointRecord rec;
    rec.checkpoint = 1;
    ActionPlan plan;
    plan.steps = {{"flow", "query:gcode_move:extrude_factor", ""},
                  {"retraction", "query:firmware_retraction:retract_length", ""},
                  {"fan", "query:fan", ""}};
    const auto trace = rig.pipeline->execute(PlanKind::information, plan, rec);
    EXPECT_EQ(trace.outcome, ReActOutcome::completed);
    EXPECT_EQ(trace.iterations.size(), 3u);
    EXPECT_EQ(rec.gathered_info.size(), 3u);
    EXPECT_DOUBLE_EQ(rec.gathered_info.at("retraction_length"), 2.0);
}

TEST(Pipeline, SolutionStepSetsFlow) {
    Rig rig(scenario(2, 1.05, 120.0));
    CheckpointRecord rec;
    rec.checkpoint = 1;
    ActionPlan plan;
    plan.steps = {{"raise flow", "gcode:M221 S110", "extrude_factor 1.10"}};
    const auto trace = rig.pipeline->execute(PlanKind::solution, plan, rec);
    EXPECT_EQ(trace.outcome, ReActOutcome::completed);
    ASSERT_EQ(rec.executed_actions.size(), 1u);
    EXPECT_EQ(rec.executed_actions[0].command, "M221 S110");
    EXPECT_EQ(rec.executed_actions[0].status, printer::ApiStatus::ok);
    EXPECT_DOUBLE_EQ(*rec.executed_actions[0].expectations[0].before, 1.05);
    EXPECT_DOUBLE_EQ(rig.printer->commanded().flow_factor, 1.10);
}

TEST(Pipeline, HandoffReissuesDroppedCommandOnce) {
    Rig rig(scenario(2, 1.05, 120.0));
    CheckpointRecord rec;
    rec.checkpoint = 1;
    rig.printer->drop_next_commands(1);
    ActionPlan plan;
    plan.steps = {{"raise flow", "gcode:M221 S110", ""}};
    rig.pipeline->execute(PlanKind::solution, plan, rec);
    EXPECT_DOUBLE_EQ(rig.printer->commanded().flow_factor, 1.05);
    rig.pipeline->handoff(rec);
    ASSERT_EQ(rec.verifications.size(), 1u);
    EXPECT_TRUE(rec.verifications[0].ok);
    EXPECT_TRUE(rec.verifications[0].reissued);
    EXPECT_DOUBLE_EQ(rig.printer->commanded().flow_factor, 1.10);
    const auto log = rig.printer->command_log();
    EXPECT_EQ(std::count(log.begin(), log.end(), "M221 S110"), 2);
    EXPECT_NE(rec.commentary.find("flow 105% → 110%"), std::string::npos);
    EXPECT_TRUE(rec.resumed);
}

TEST(Pipeline, InjectedFaultDegradesAndResumesUnchanged) {
    Rig rig(scenario(3, 0.75, 170.0));
    rig.pipeline->set_fault_plan([](int, ModuleId m) { return m == ModuleId::info_executor; });
    const auto& rec = rig.checkpoint();
    EXPECT_TRUE(rec.degraded);
    EXPECT_EQ(rec.status(ModuleId::info_executor), ModuleStatus::failed);
    EXPECT_EQ(rec.module_sequence,
              (std::vector<std::string>{"detector", "info_planner", "info_executor", "handoff"}));
    EXPECT_TRUE(sequence_satisfies_contract(rec.module_sequence, true, true));
    EXPECT_NE(rec.commentary.find("no action taken"), std::string::npos);
    EXPECT_TRUE(rec.resumed);
    EXPECT_DOUBLE_EQ(rig.printer->commanded().flow_factor, 0.75);
}

TEST(Pipeline, DetectorGarbageIsRetriedThenDegrades) {
    ScriptedBackend backend;
    backend.replies["report"] = {"I think it looks fine?"};
    Rig rig(scenario(2, 0.75, 120.0), &backend);
    const auto& rec = rig.checkpoint();
    EXPECT_EQ(backend.calls["report"], 2);
    EXPECT_EQ(rec.status(ModuleId::detector), ModuleStatus::failed);
    EXPECT_TRUE(rec.degraded);
    EXPECT_EQ(rec.module_sequence, (std::vector<std::string>{"detector", "handoff"}));
    EXPECT_TRUE(rec.resumed);
}

TEST(Pipeline, DeniedPlanIsRegeneratedOnce) {
    ScriptedBackend backend;
    backend.replies["report"] = {"```report\nlayer: 1\nno_failures: false\nfailure: warping | severity=high\n```"};
    backend.replies["frame"] = {"```frame\nframe: diagnostic_questioning\n```"};
    backend.replies["plan"] = {"```plan\nstep: goal=reset | target=gcode:FIRMWARE_RESTART | expect=none\n```"};
    Rig rig(scenario(2, 1.0, 120.0), &backend);
    const auto& rec = rig.checkpoint();
    EXPECT_EQ(backend.calls["plan"], 2);
    EXPECT_EQ(rec.status(ModuleId::info_planner), ModuleStatus::failed);
    EXPECT_EQ(rig.printer->shutdown_count(), 0);
    EXPECT_TRUE(rig.printer->command_log().empty());
    EXPECT_TRUE(rec.resumed);
}

TEST(Pipeline, ReactLoopIsBounded) {
    ScriptedBackend backend;
    backend.replies["react"] = {"```react\nthought: again\naction: query nonexistent_object\n```"};
    AgentConfig config;
    config.max_react_iters = 5;
    Rig rig(scenario(2, 1.0, 120.0), &backend, config);
    CheckpointRecord rec;
    rec.checkpoint = 1;
    ActionPlan plan;
    plan.steps = {{"x", "query:gcode_move", ""}};
    const auto trace = rig.pipeline->execute(PlanKind::information, plan, rec);
    EXPECT_EQ(trace.outcome, ReActOutcome::exhausted);
    EXPECT_EQ(trace.iterations.size(), 5u);
    for (const auto& it : trace.iterations) {
        EXPECT_FALSE(it.thought.empty());
        EXPECT_FALSE(it.action.empty());
        EXPECT_FALSE(it.observation.empty());
    }
}

TEST(Pipeline, DetectPreconditions) {
    Rig rig(scenario(2, 1.0, 120.0));
    CheckpointRecord rec;
    rec.part_description = "box";
    EXPECT_THROW(rig.pipeline->detect(rec, {}), std::invalid_argument);
    rec.part_description = "  ";
    EXPECT_THROW(rig.pipeline->detect(rec, rig.capture()), std::invalid_argument);
}

TEST(Pipeline, PreviousImagesAreAttachedAfterFirstCheckpoint) {
    class Spy : public llm::Backend {
    public:
        llm::OracleBackend inner;
        std::vector<std::size_t> image_counts;
        llm::ChatResponse complete(const llm::ChatRequest& r) override {
            if (r.response_schema_hint == "report") image_counts.push_back(r.turns[0].images.size());
            return inner.complete(r);
        }
        std::string name() const override { return "spy"; }
    } spy;
    Rig rig(scenario(3, 1.0, 120.0), &spy);
    auto first = rig.capture();
    CheckpointRecord a;
    a.checkpoint = 1;
    rig.state.checkpoints.push_back(a);
    rig.pipeline->run_checkpoint(rig.state, rig.state.checkpoints.back(), first);
    auto second = rig.capture();
    second.previous = first.now;
    for (auto& p : second.previous) p.label = "previous/" + p.label.substr(p.label.find('/') + 1);
    CheckpointRecord b;
    b.checkpoint = 2;
    b.layer_index = 1;
    rig.state.checkpoints.push_back(b);
    rig.pipeline->run_checkpoint(rig.state, rig.state.checkpoints.back(), second);
    EXPECT_EQ(spy.image_counts, (std::vector<std::size_t>{2, 4}));
}

TEST(Pipeline, ExpectationsAndDescriptions) {
    using gcode::Parameter;
    const std::map<std::string, double> before = {{"flow_factor", 1.05}, {"z_offset", -0.05},
                                                  {"retraction_length", 1.0}, {"retraction_speed", 50.0},
                                                  {"nozzle_target", 210.0}};
    auto e = expectations_for({Parameter::flow_factor, 1.10}, before);
    ASSERT_EQ(e.size(), 1u);
    EXPECT_EQ(describe_change(e[0]), "flow 105% → 110%");
    e = expectations_for({Parameter::z_offset, -0.05}, before);
    EXPECT_NEAR(e[0].expected, -0.10, 1e-12);
    e = expectations_for({Parameter::retraction, 1.5, 55.0}, before);
    ASSERT_EQ(e.size(), 2u);
    EXPECT_EQ(describe_change(e[1]), "retraction speed 50 mm/s → 55 mm/s");
    e = expectations_for({Parameter::nozzle_temp, 220.0}, before);
    EXPECT_EQ(describe_change(e[0]), "nozzle 210 °C → 220 °C");
    EXPECT_EQ(object_for_parameter("retraction_speed"), "firmware_retraction");
    EXPECT_EQ(object_for_parameter("z_offset"), "gcode_move");
    EXPECT_THROW(object_for_parameter("mood"), std::invalid_argument);
}
