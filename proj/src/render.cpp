#include "pathscan/render.hpp"

#include <array>
#include <cstdio>
#include <sstream>

#include "pathscan/error.hpp"

namespace pathscan {

namespace {

constexpr std::array<const char*, kNumGrades> kGradeFill{"#ffffff", "#cfe8cf", "#f6e08a",
                                                         "#f2a65a", "#d9534f"};
constexpr std::array<const char*, kNumMags> kMagColor{"#1f77b4", "#17becf", "#2ca02c",
                                                      "#9467bd", "#e377c2", "#8c564b"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

std::string xml_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string render_svg(const Scanpath& sp, const GradeMap& gm, const nlohmann::json& meta,
                       double width_px) {
  if (gm.rows == 0 || gm.cols == 0) fail(ErrorKind::kInvalidInput, "empty grade map");
  if (!(width_px > 0.0)) fail(ErrorKind::kInvalidConfig, "render width must be positive");
  const WsiBounds b = gm.bounds();
  const double s = width_px / b.width;
  const double h = b.height * s;
  const double legend = 24.0;

  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\" standalone=\"no\"?>\n"
     << "<!DOCTYPE svg PUBLIC \"-//W3C//DTD SVG 1.1//EN\" "
        "\"http://www.w3.org/Graphics/SVG/1.1/DTD/svg11.dtd\">\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << num(width_px)
     << "\" height=\"" << num(h + legend) << "\" viewBox=\"0 0 " << num(width_px) << ' '
     << num(h + legend) << "\">\n"
     << "<title>" << xml_escape(sp.wsi_id + (sp.reader_id.empty() ? "" : " / " + sp.reader_id))
     << "</title>\n"
     << "<metadata>" << xml_escape(meta.dump()) << "</metadata>\n";

  os << "<g id=\"grades\" stroke=\"none\">\n";
  const double cs = gm.cell_size * s;
  for (std::size_t r = 0; r < gm.rows; ++r) {
    for (std::size_t c = 0; c < gm.cols; ++c) {
      const Grade g = gm.at(r, c);
      if (g == Grade::kBackground) continue;
      os << "<rect x=\"" << num(static_cast<double>(c) * cs) << "\" y=\""
         << num(static_cast<double>(r) * cs) << "\" width=\"" << num(cs) << "\" height=\""
         << num(cs) << "\" fill=\"" << kGradeFill[static_cast<std::size_t>(g)] << "\"/>\n";
    }
  }
  os << "</g>\n";

  if (!sp.fixations.empty()) {
    os << "<polyline id=\"path\" fill=\"none\" stroke=\"#333333\" stroke-width=\"1.5\" "
          "stroke-opacity=\"0.7\" points=\"";
    for (std::size_t i = 0; i < sp.fixations.size(); ++i) {
      os << (i ? " " : "") << num(sp.fixations[i].x * s) << ',' << num(sp.fixations[i].y * s);
    }
    os << "\"/>\n";
  }

  os << "<g id=\"fixations\" font-family=\"sans-serif\" font-size=\"9\" text-anchor=\"middle\">\n";
  for (std::size_t i = 0; i < sp.fixations.size(); ++i) {
    const Fixation& f = sp.fixations[i];
    const auto m = static_cast<std::size_t>(f.mag.index());
    const double radius = 10.0 - 1.2 * static_cast<double>(m);
    os << "<circle cx=\"" << num(f.x * s) << "\" cy=\"" << num(f.y * s) << "\" r=\""
       << num(radius) << "\" fill=\"" << kMagColor[m] << "\" fill-opacity=\"0.8\" "
       << "stroke=\"#000000\" stroke-width=\"0.5\"><title>" << (i + 1) << ": " << f.mag.factor()
       << "X</title></circle>\n"
       << "<text x=\"" << num(f.x * s) << "\" y=\"" << num(f.y * s + 3.0)
       << "\" fill=\"#ffffff\">" << (i + 1) << "</text>\n";
  }
  os << "</g>\n";

  os << "<g id=\"legend\" font-family=\"sans-serif\" font-size=\"10\">\n";
  for (std::size_t m = 0; m < kNumMags; ++m) {
    const double x = 8.0 + static_cast<double>(m) * 56.0;
    os << "<circle cx=\"" << num(x) << "\" cy=\"" << num(h + 12.0) << "\" r=\"5\" fill=\""
       << kMagColor[m] << "\"/>\n"
       << "<text x=\"" << num(x + 8.0) << "\" y=\"" << num(h + 16.0) << "\">"
       << kMagFactors[m] << "X</text>\n";
  }
  os << "</g>\n</svg>\n";
  return os.str();
}

}  // namespace pathscan
