#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "pathscan/trajectory.hpp"

namespace pathscan {

inline constexpr const char* kToolVersion = "pathscan 0.1.0";

// Trajectory JSONL: one sample per line,
//   {"wsi","reader","expertise","x","y","mag","t_ms"}.
// Samples are grouped by (wsi, reader) in order of first appearance.
// Malformed lines raise kFormat errors that name the line number.
std::vector<RawTrajectory> read_trajectories(std::istream& in);
std::vector<RawTrajectory> read_trajectories(const std::filesystem::path& path);
void write_trajectories(std::ostream& out, const std::vector<RawTrajectory>& trajs);

// Scanpath JSONL: one scanpath per line with a "fixations" array of
// {x, y, mag, dur_ms}. `meta` is attached verbatim under "meta" when not null.
nlohmann::json scanpath_to_json(const Scanpath& sp, const nlohmann::json& meta = nullptr);
Scanpath scanpath_from_json(const nlohmann::json& j);
std::vector<Scanpath> read_scanpaths(std::istream& in);
std::vector<Scanpath> read_scanpaths(const std::filesystem::path& path);
void write_scanpaths(std::ostream& out, const std::vector<Scanpath>& sps,
                     const nlohmann::json& meta = nullptr);

nlohmann::json to_json(const SimplifyParams& p);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace pathscan
