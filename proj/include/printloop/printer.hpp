#pragma once

#include "printloop/image.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace printloop::printer {

// ---------------------------------------------------------------------------
// Wire layer

struct HttpRequest {
    std::string method;  // "GET" | "POST"
    std::string target;  // path plus query string
    std::string body;
    std::string content_type = "application/json";
    std::map<std::string, std::string> headers;
};

struct HttpResponse {
    int status = 0;
    std::string body;
    std::string content_type;
    std::map<std::string, std::string> headers;
};

/// Connection-level failure (no HTTP response was obtained).
class TransportError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

class Transport {
public:
    virtual ~Transport() = default;
    virtual HttpResponse send(const HttpRequest& request) = 0;
};

struct HttpTransportOptions {
    std::string base_url;  // e.g. http://printer.local:7125
    std::string api_key;   // sent as X-Api-Key when non-empty
    std::chrono::milliseconds connect_timeout{2000};
    std::chrono::milliseconds read_timeout{10000};
};

std::shared_ptr<Transport> make_http_transport(HttpTransportOptions options);

/// Records every request that reaches the wrapped transport.
class RecordingTransport : public Transport {
public:
    explicit RecordingTransport(std::shared_ptr<Transport> inner) : inner_(std::move(inner)) {}

    HttpResponse send(const HttpRequest& request) override;
    std::vector<HttpRequest> requests() const;
    void clear();

private:
    std::shared_ptr<Transport> inner_;
    mutable std::mutex mutex_;
    std::vector<HttpRequest> requests_;
};

// ---------------------------------------------------------------------------
// Domain types

struct TempPair {
    double target = 0.0;
    double actual = 0.0;
};

/// Either field may be missing when only part of the object was queried.
struct Retraction {
    std::optional<double> length;  // mm
    std::optional<double> speed;   // mm/s
};

struct Position {
    double x = 0.0, y = 0.0, z = 0.0;
};

/// Typed view over queried printer objects. Fields not covered by the
/// query stay empty.
struct PrinterSnapshot {
    std::optional<double> flow_factor;   // 1.0 = 100 %
    std::optional<double> speed_factor;  // 1.0 = 100 %
    std::optional<double> print_speed;   // mm/s, current requested feed
    std::optional<TempPair> nozzle_temp;
    std::optional<TempPair> bed_temp;
    std::optional<double> fan;  // 0..1
    std::optional<double> z_offset;
    std::optional<double> pressure_advance;
    std::optional<Retraction> retraction;
    std::optional<Position> position;
    std::optional<int> layer_index;  // 0-based
    std::optional<bool> paused;
    std::optional<std::string> print_state;

    /// Builds a snapshot from a Moonraker `status` object.
    static PrinterSnapshot from_status(const nlohmann::json& status);
    /// Flat `parameter name -> value` view used by the agents.
    std::map<std::string, double> flatten() const;
    /// Throws std::domain_error when a present field violates its range.
    void validate() const;
};

enum class ApiStatus { ok, denied, transport_error, printer_error };

std::string_view to_string(ApiStatus status);

struct ApiResult {
    ApiStatus status = ApiStatus::ok;
    nlohmann::json body;
    std::string message;
    double latency_ms = 0.0;
    int attempts = 0;
    /// Set for accepted no-ops (e.g. resume while not paused).
    bool warning = false;

    bool ok() const { return status == ApiStatus::ok; }
};

struct EndpointInfo {
    std::string id;
    std::string method;
    std::string path;
    std::string description;
};

struct Exclusion {
    std::string id;
    std::string reason;
};

struct ObjectInfo {
    std::string id;
    std::string description;
};

struct EndpointCatalog {
    std::vector<EndpointInfo> allowed;
    std::vector<Exclusion> excluded;
    /// G-code commands / macros that never reach the printer.
    std::vector<Exclusion> denied_commands;
    std::vector<ObjectInfo> objects;

    static EndpointCatalog moonraker_default();
    static EndpointCatalog from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;

    const EndpointInfo* find_allowed(std::string_view id) const;
    const Exclusion* find_excluded(std::string_view id) const;
    const ObjectInfo* find_object(std::string_view id) const;
    /// Throws std::logic_error when an id is both allowed and excluded.
    void validate() const;
};

struct GuardVerdict {
    bool allowed = true;
    std::string reason;

    static GuardVerdict allow() { return {}; }
    static GuardVerdict deny(std::string why) { return {false, std::move(why)}; }
};

/// Decides whether an endpoint id, object id or G-code script may be sent.
/// Every line of a multi-line script is checked.
GuardVerdict guard(const EndpointCatalog& catalog, std::string_view endpoint_or_command);

struct QueryResult {
    ApiResult result;
    PrinterSnapshot snapshot;
    /// Requested objects the printer did not report.
    std::vector<std::string> absent;
    nlohmann::json status;
};

enum class Camera { top, front };

std::string_view to_string(Camera camera);

struct ImageMeta {
    int width = 0;
    int height = 0;
    std::string format;
};

struct SnapshotResult {
    ApiResult result;
    std::vector<std::uint8_t> bytes;
    ImageMeta meta;
    /// Simulator-provided metadata (null against real printers).
    nlohmann::json annotations;
};

struct ClientOptions {
    int max_attempts = 3;
    std::chrono::milliseconds backoff{200};
    int max_image_edge = 1024;
    std::function<void(std::chrono::milliseconds)> sleep;  // injectable for tests
};

class PrinterClient {
public:
    explicit PrinterClient(std::shared_ptr<Transport> transport,
                           EndpointCatalog catalog = EndpointCatalog::moonraker_default(),
                           ClientOptions options = {});

    QueryResult query_objects(const std::vector<std::string>& names);
    ApiResult run_gcode(std::string_view script);
    ApiResult pause();
    ApiResult resume();
    SnapshotResult capture_snapshot(Camera camera);
    ApiResult server_info();

    GuardVerdict guard(std::string_view endpoint_or_command) const;
    const EndpointCatalog& catalog() const { return catalog_; }

private:
    ApiResult call(const HttpRequest& request, HttpResponse* raw = nullptr);
    ApiResult paused_state(bool& paused);

    std::shared_ptr<Transport> transport_;
    EndpointCatalog catalog_;
    ClientOptions options_;
    std::mutex command_lane_;
};

/// Percent-encodes a query-string component.
std::string url_encode(std::string_view s);
/// Splits "path?query" into path and decoded key/value pairs (in order).
std::pair<std::string, std::vector<std::pair<std::string, std::string>>> split_target(std::string_view target);

}  // namespace printloop::printer
