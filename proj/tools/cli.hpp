#pragma once

#include <iosfwd>
#include <string>

#include <nlohmann/json.hpp>

namespace zp::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;

// Hex SHA-256 of the canonical (sorted-key, compact) serialization of `j`.
std::string config_hash(const nlohmann::json& j);

int cli_main(int argc, char** argv, std::ostream& out, std::ostream& err);
int cli_main(int argc, char** argv);

}  // namespace zp::cli
