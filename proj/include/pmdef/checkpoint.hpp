#pragma once

#include <filesystem>
#include <optional>

#include "pmdef/model.hpp"
#include "pmdef/probe.hpp"

namespace pmdef {

inline constexpr std::string_view kCheckpointMagic = "PMDEF001";

void save_checkpoint(const Model& model, const std::filesystem::path& path, const HiddenProbe* probe = nullptr);
std::vector<char> encode_checkpoint(const Model& model, const HiddenProbe* probe = nullptr);

// Throws MagicError, TruncationError, LengthMismatchError or
// SpecMismatchError depending on what is wrong with the file.
Model load_checkpoint(const std::filesystem::path& path);
// Also requires the stored spec to equal `expected`.
Model load_checkpoint(const std::filesystem::path& path, const ModelSpec& expected);
std::optional<HiddenProbe> load_probe(const std::filesystem::path& path);

}  // namespace pmdef
