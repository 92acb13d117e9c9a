#pragma once

#include <string>

#include <json.hpp>

#include "pathscan/synth.hpp"
#include "pathscan/trajectory.hpp"

namespace pathscan {

// SVG 1.1 drawing of a scanpath over its grade map: one rect per grade cell,
// a polyline through the fixations, and a numbered marker per fixation whose
// colour and size encode the magnification. `meta` goes into <metadata>.
std::string render_svg(const Scanpath& sp, const GradeMap& gm,
                       const nlohmann::json& meta = nlohmann::json::object(),
                       double width_px = 640.0);

std::string xml_escape(const std::string& s);

}  // namespace pathscan
