#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

namespace defocus {

// Command entry points behind the CLI and the C API. Each takes a fully
// merged JSON config (unknown keys rejected), performs the run, writes its
// outputs, and returns a machine-readable summary. Errors surface as the
// library exception types.
nlohmann::json run_gen(const nlohmann::json& config);
nlohmann::json run_fit(const nlohmann::json& config);
nlohmann::json run_render(const nlohmann::json& config);
nlohmann::json run_depth(const nlohmann::json& config);
nlohmann::json run_eval_psf(const nlohmann::json& config);
nlohmann::json run_eval_depth(const nlohmann::json& config);
nlohmann::json run_ablate(const nlohmann::json& config);
nlohmann::json run_mosaic(const nlohmann::json& config);

// FNV-1a 64 over the file bytes, as 16 hex digits; used for provenance
// records in reports.
std::string file_hash_hex(const std::filesystem::path& path);

}  // namespace defocus
