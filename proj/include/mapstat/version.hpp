#pragma once

namespace mapstat {

inline constexpr const char* tool_name = "mapstat";
inline constexpr const char* tool_version = "0.1.0";
inline constexpr int manifest_schema_version = 1;

}  // namespace mapstat
