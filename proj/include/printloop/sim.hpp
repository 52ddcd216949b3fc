#pragma once

#include "printloop/failure_mode.hpp"
#include "printloop/gcode.hpp"
#include "printloop/image.hpp"
#include "printloop/printer.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

namespace printloop::sim {

enum class Material { pla, tpu, other };

std::string_view to_string(Material m);
Material material_from_string(std::string_view s);

struct Nominal {
    double flow_factor = 1.0;
    double speed_mm_s = 120.0;
    double nozzle_temp = 190.0;
    double bed_temp = 60.0;
};

/// True process state used by the defect model (what the part experiences,
/// which can differ from what the firmware reports).
struct ProcessState {
    double flow_factor = 1.0;
    double speed_mm_s = 120.0;
    double nozzle_temp = 190.0;
    double bed_temp = 60.0;
    double retraction_length = 2.0;
    double retraction_speed = 40.0;
    double pressure_advance = 0.05;
    double z_offset_error = 0.0;
    bool first_layer = false;
};

/// Frozen defect model: linear clamps encoding the causal directions
/// (flow -> under/over extrusion, speed -> inconsistency, heat and weak
/// retraction -> stringing, z error -> adhesion/separation, cold bed -> warping).
DefectSeverities compute_severities(const ProcessState& state, const Nominal& nominal);

/// Same model driven from a queried snapshot; missing fields fall back to nominal.
DefectSeverities compute_severities(const printer::PrinterSnapshot& params, const Nominal& nominal,
                                    double z_offset_error = 0.0, bool first_layer = false);

struct RenderSpec {
    int width = 512;
    int height = 512;
    PixelRect footprint{51, 51, 461, 461};
};

struct RenderedLayer {
    GrayImage binary;     // 255 occupied, 0 empty
    GrayImage decorated;  // shaded, with strands/blobs; same occupancy inside the footprint
    PixelRect footprint;
    double gap_fraction = 0.0;
    double ground_truth_occupancy = 1.0;
};

/// Fraction of footprint pixels carved out as gaps.
double gap_fraction(const DefectSeverities& severities);

RenderedLayer render_layer_image(const DefectSeverities& severities, std::uint64_t seed, const RenderSpec& spec = {});

enum class PerturbationKind { z_shift, flow_loss, temp_drift };

std::string_view to_string(PerturbationKind k);
PerturbationKind perturbation_kind_from_string(std::string_view s);

struct Perturbation {
    int layer = 0;  // 1-based layer number; applied before that layer prints
    PerturbationKind kind = PerturbationKind::z_shift;
    double magnitude = 0.0;
};

/// Commanded (firmware-visible) parameters.
struct Commanded {
    double flow_factor = 1.0;
    double speed_factor = 1.0;
    double base_speed_mm_s = 120.0;
    double nozzle_target = 190.0;
    double bed_target = 60.0;
    double fan = 1.0;
    double z_offset = 0.0;
    double pressure_advance = 0.05;
    double retraction_length = 2.0;
    double retraction_speed = 40.0;
    double acceleration = 3000.0;
};

/// Hidden disturbances that never appear in the API command log.
struct Hidden {
    double z_error = 0.0;
    double flow_loss = 0.0;
    double temp_drift = 0.0;
};

struct CheckpointSlot {
    int layer_index = 0;  // 0-based
    int segment_index = 0;
    PixelRect footprint;
};

struct Scenario {
    std::string name = "scenario";
    Material material = Material::pla;
    std::string part_description = "test part";
    std::uint64_t seed = 1;
    Nominal nominal;
    Commanded initial;
    double initial_z_error = 0.0;
    std::vector<Perturbation> perturbations;
    int layers = 1;
    int segments = 1;
    gcode::Granularity granularity = gcode::Granularity::per_layer;
    double layer_height = 0.35;
    std::optional<std::string> gcode_path;
    std::vector<std::string> absent_objects;
    RenderSpec render;
};

/// Reads the sectioned key-value scenario format.
Scenario load_scenario(const std::string& path);
Scenario parse_scenario(const std::string& text, const std::string& base_dir = ".");

struct CheckpointEvent {
    int checkpoint = 0;  // 1-based ordinal
    int layer_index = 0;
    int segment_index = 0;
    DefectSeverities severities;
    RenderedLayer top;
    GrayImage front;
    nlohmann::json metadata;
};

class SimError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Deterministic, wire-compatible printer. Thread-safe; request handling and
/// checkpoint stepping are serialized against each other.
class VirtualPrinter {
public:
    VirtualPrinter();
    explicit VirtualPrinter(const Scenario& scenario);

    /// Loads checkpoint slots and starts printing up to the first checkpoint.
    void load_job(std::vector<CheckpointSlot> slots);
    bool job_loaded() const;

    CheckpointEvent step_checkpoint();
    void inject_perturbation(int layer, PerturbationKind kind, double magnitude);

    /// Moonraker-compatible request handling (the HTTP service and the
    /// in-process transport both call this).
    printer::HttpResponse handle(const printer::HttpRequest& request);

    // Fault injection
    void fail_next_requests(int n);
    void drop_next_commands(int n);
    void set_camera_available(bool available);
    /// Consumes one pending injected connection failure, if any.
    bool take_transport_failure();

    ProcessState true_state() const;
    Commanded commanded() const;
    Hidden hidden() const;
    std::optional<CheckpointEvent> current_event() const;
    std::vector<std::string> command_log() const;
    int shutdown_count() const;
    bool complete() const;
    bool paused() const;

    nlohmann::json save_state() const;
    void restore_state(const nlohmann::json& state);

private:
    CheckpointEvent step_locked();
    ProcessState true_state_locked() const;
    nlohmann::json status_locked(const std::vector<std::pair<std::string, std::string>>& query) const;
    std::optional<std::string> apply_line_locked(const std::string& line);
    void apply_perturbations_locked(int layer_number);

    mutable std::shared_mutex mutex_;
    Scenario scenario_;
    Commanded commanded_;
    Hidden hidden_;
    std::vector<Perturbation> pending_;
    std::vector<CheckpointSlot> slots_;
    std::size_t cursor_ = 0;  // number of checkpoints reached
    int applied_through_layer_ = 0;
    bool loaded_ = false;
    bool paused_ = false;
    bool complete_ = false;
    int shutdowns_ = 0;
    int fail_requests_ = 0;
    int drop_commands_ = 0;
    bool camera_available_ = true;
    std::vector<std::string> command_log_;
    std::vector<double> layer_gap_history_;
    std::optional<CheckpointEvent> event_;
};

/// Builds checkpoint slots for a scenario (from its G-code file when given).
std::vector<CheckpointSlot> plan_checkpoints(const Scenario& scenario);

/// In-process transport over a shared simulator.
class SimTransport : public printer::Transport {
public:
    explicit SimTransport(std::shared_ptr<VirtualPrinter> printer) : printer_(std::move(printer)) {}
    printer::HttpResponse send(const printer::HttpRequest& request) override;

private:
    std::shared_ptr<VirtualPrinter> printer_;
};

/// Serves a simulator over HTTP on localhost.
class SimServer {
public:
    explicit SimServer(std::shared_ptr<VirtualPrinter> printer);
    ~SimServer();
    SimServer(const SimServer&) = delete;
    SimServer& operator=(const SimServer&) = delete;

    /// Binds to `port` (0 = ephemeral) and serves on a background thread.
    int start(int port = 0);
    void stop();
    std::string base_url() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace printloop::sim
