#pragma once

// HTTP control service. Sessions are created from uploaded assets, steered
// by control patches applied at frame boundaries, and streamed frame by
// frame as length-delimited JSON messages ("<bytes>\n<json>\n").
//
//   POST /v1/assets?kind=audio|weights|identity|phonemes|poses   body: file
//   POST /v1/sessions                                           body: JSON
//   GET  /v1/sessions/{id}
//   PUT  /v1/sessions/{id}/controls                             body: merge patch
//   POST /v1/sessions/{id}/transport       {"action": "play"|"pause"|"seek", "frame": n}
//   GET  /v1/sessions/{id}/stream[?pace=off]
//   GET  /v1/meta/{phonemes|emotions|regions}[?session=id]

#include <memory>
#include <string>

#include "kpanim/config.hpp"

namespace kpanim {

struct ServiceOptions {
    SessionConfig config;
    /// Stream cadence in messages per second.
    double fps = kFramesPerSecond;
};

class ControlService {
public:
    explicit ControlService(ServiceOptions options = {});
    ~ControlService();
    ControlService(const ControlService&) = delete;
    ControlService& operator=(const ControlService&) = delete;

    /// Binds the listening socket; port 0 picks a free port. Returns the bound port.
    int bind(const std::string& host, int port);
    /// Serves requests until stop(). Requires a successful bind().
    void run();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// One stream message frame: decimal byte length, newline, JSON, newline.
std::string frame_message(const std::string& json_text);

} // namespace kpanim
