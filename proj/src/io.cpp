#include "pathscan/io.hpp"

#include <fstream>
#include <map>
#include <sstream>
#include <utility>

#include "pathscan/error.hpp"

namespace pathscan {

using nlohmann::json;

namespace {

[[noreturn]] void line_error(std::size_t line, const std::string& what) {
  fail(ErrorKind::kFormat, "line " + std::to_string(line) + ": " + what);
}

template <typename T>
T require(const json& rec, const char* key, std::size_t line) {
  auto it = rec.find(key);
  if (it == rec.end()) line_error(line, std::string("missing field '") + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    line_error(line, std::string("bad type for field '") + key + "'");
  }
}

bool blank(const std::string& s) { return s.find_first_not_of(" \t\r\n") == std::string::npos; }

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kInvalidInput, "cannot open " + path.string());
  return in;
}

}  // namespace

std::vector<RawTrajectory> read_trajectories(std::istream& in) {
  std::vector<RawTrajectory> out;
  std::map<std::pair<std::string, std::string>, std::size_t> index;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (blank(text)) continue;
    json rec;
    try {
      rec = json::parse(text);
    } catch (const json::parse_error& e) {
      line_error(line, std::string("invalid JSON: ") + e.what());
    }
    if (!rec.is_object()) line_error(line, "record is not an object");
    const auto wsi = require<std::string>(rec, "wsi", line);
    const auto reader = require<std::string>(rec, "reader", line);
    const auto expertise_s = require<std::string>(rec, "expertise", line);
    ViewportSample s;
    s.x = require<double>(rec, "x", line);
    s.y = require<double>(rec, "y", line);
    const int mag = require<int>(rec, "mag", line);
    if (!MagLevel::valid_factor(mag)) {
      line_error(line, "magnification " + std::to_string(mag) + " not in {1,2,4,10,20,40}");
    }
    s.mag = MagLevel::from_factor(mag);
    s.t_ms = require<double>(rec, "t_ms", line);
    if (s.t_ms < 0.0) line_error(line, "negative t_ms");
    Expertise ex;
    try {
      ex = expertise_from_string(expertise_s);
    } catch (const Error& e) {
      line_error(line, e.what());
    }
    auto key = std::make_pair(wsi, reader);
    auto it = index.find(key);
    if (it == index.end()) {
      it = index.emplace(key, out.size()).first;
      out.push_back(RawTrajectory{wsi, reader, ex, {}});
    }
    out[it->second].samples.push_back(s);
  }
  return out;
}

std::vector<RawTrajectory> read_trajectories(const std::filesystem::path& path) {
  std::ifstream in = open_in(path);
  return read_trajectories(in);
}

void write_trajectories(std::ostream& out, const std::vector<RawTrajectory>& trajs) {
  for (const RawTrajectory& t : trajs) {
    for (const ViewportSample& s : t.samples) {
      json rec = {{"wsi", t.wsi_id},       {"reader", t.reader_id},
                  {"expertise", to_string(t.expertise)},
                  {"x", s.x},              {"y", s.y},
                  {"mag", s.mag.factor()}, {"t_ms", s.t_ms}};
      out << rec.dump() << '\n';
    }
  }
}

json scanpath_to_json(const Scanpath& sp, const json& meta) {
  json fix = json::array();
  for (const Fixation& f : sp.fixations) {
    fix.push_back({{"x", f.x}, {"y", f.y}, {"mag", f.mag.factor()}, {"dur_ms", f.dur_ms}});
  }
  json j = {{"wsi", sp.wsi_id}, {"reader", sp.reader_id}, {"fixations", std::move(fix)}};
  if (!meta.is_null()) j["meta"] = meta;
  return j;
}

Scanpath scanpath_from_json(const json& j) {
  Scanpath sp;
  try {
    sp.wsi_id = j.at("wsi").get<std::string>();
    sp.reader_id = j.at("reader").get<std::string>();
    for (const json& f : j.at("fixations")) {
      const int mag = f.at("mag").get<int>();
      if (!MagLevel::valid_factor(mag)) {
        fail(ErrorKind::kFormat, "magnification " + std::to_string(mag) + " not supported");
      }
      sp.fixations.push_back({f.at("x").get<double>(), f.at("y").get<double>(),
                              MagLevel::from_factor(mag), f.value("dur_ms", 0.0)});
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, std::string("bad scanpath record: ") + e.what());
  }
  return sp;
}

std::vector<Scanpath> read_scanpaths(std::istream& in) {
  std::vector<Scanpath> out;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (blank(text)) continue;
    try {
      out.push_back(scanpath_from_json(json::parse(text)));
    } catch (const json::parse_error& e) {
      line_error(line, std::string("invalid JSON: ") + e.what());
    } catch (const Error& e) {
      line_error(line, e.what());
    }
  }
  return out;
}

std::vector<Scanpath> read_scanpaths(const std::filesystem::path& path) {
  std::ifstream in = open_in(path);
  return read_scanpaths(in);
}

void write_scanpaths(std::ostream& out, const std::vector<Scanpath>& sps, const json& meta) {
  for (const Scanpath& sp : sps) out << scanpath_to_json(sp, meta).dump() << '\n';
}

json to_json(const SimplifyParams& p) {
  return {{"th_angle", p.th_angle},
          {"th_time_ms", p.th_time_ms},
          {"th_dist", p.th_dist},
          {"dist_unit", p.dist_unit == DistanceUnit::kLevel0Pixels ? "level0_px" : "viewport_fraction"},
          {"viewport_width_1x", p.viewport_width_1x},
          {"max_fixations", p.max_fixations},
          {"literal_dispersion_branch", p.literal_dispersion_branch}};
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in = open_in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kInvalidInput, "cannot write " + path.string());
  out << text;
}

}  // namespace pathscan
