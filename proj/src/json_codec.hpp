#pragma once

// JSON mapping of the data model, shared by the file readers, the CLI and
// the service. Every reader rejects unknown keys and reports the offending
// path in a FormatError.

#include <initializer_list>
#include <string>
#include <string_view>

#include <json.hpp>

#include "kpanim/io.hpp"

namespace kpanim::codec {

using json = nlohmann::json;

void check_object(const json& j, std::string_view ctx);
void check_keys(const json& j, std::initializer_list<std::string_view> allowed, std::string_view ctx);
const json& require(const json& j, std::string_view key, std::string_view ctx);

double get_number(const json& j, std::string_view ctx);
Index get_index(const json& j, std::string_view ctx);
std::uint64_t get_u64(const json& j, std::string_view ctx);
std::string get_string(const json& j, std::string_view ctx);
Eigen::VectorXd get_vector(const json& j, std::string_view ctx, Index expected = -1);

json to_json(const Eigen::Ref<const Eigen::MatrixXd>& m);
json to_json(const PoseD& p);
PoseD pose_from_json(const json& j, std::string_view ctx);

json to_json(const EmotionSpec& e);
EmotionSpec emotion_from_json(const json& j, std::string_view ctx);

json to_json(const ModelDims& d);
ModelDims dims_from_json(const json& j, const std::string& ctx, ModelDims base = {});

json to_json(const ControlSchedule& s);
ControlSchedule schedule_from_json(const json& j, const ScheduleDefaults& defaults);

/// Parses one JSON value; syntax errors become FormatError with `ctx`.
json parse(std::string_view text, std::string_view ctx);

} // namespace kpanim::codec
