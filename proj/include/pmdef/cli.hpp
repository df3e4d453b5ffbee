#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace pmdef {

// args[0] is the program name. Returns 0 on success, 1 on usage or validation
// errors and 2 on runtime failures.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(const std::vector<std::string>& args);

// Lower-case hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

// Artifact names are relative to the output directory.
nlohmann::json make_manifest(const std::string& command, const nlohmann::json& config, std::uint64_t seed,
                             const std::filesystem::path& output_dir, const std::vector<std::string>& artifacts);

}  // namespace pmdef
