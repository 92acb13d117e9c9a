#include "pathscan/corpus.hpp"

#include <cstdio>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include <zlib.h>

#include "pathscan/error.hpp"
#include "pathscan/io.hpp"

namespace pathscan {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// File-backed grids where present, synthetic grids otherwise.
class CorpusFeatureProvider : public FeatureProvider {
 public:
  CorpusFeatureProvider(fs::path dir, std::map<std::string, WsiBounds> bounds,
                        std::map<std::string, GradeMap> maps, const CorpusFeatureSettings& s)
      : dir_(dir), files_(dir, std::move(bounds)) {
    if (!maps.empty()) {
      synth_ = std::make_unique<SyntheticFeatureProvider>(std::move(maps), s.dim, s.seed,
                                                          GridLayout{s.base_cols_1x});
    }
  }

  const FeatureGrid& grid(const std::string& wsi_id, MagLevel mag) const override {
    if (fs::exists(dir_ / FileFeatureProvider::file_name(wsi_id, mag)) || !synth_) {
      return files_.grid(wsi_id, mag);
    }
    return synth_->grid(wsi_id, mag);
  }

 private:
  fs::path dir_;
  FileFeatureProvider files_;
  std::unique_ptr<SyntheticFeatureProvider> synth_;
};

template <typename T>
T field(const json& j, const char* key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    fail(ErrorKind::kFormat, where + ": missing or bad field '" + key + "'");
  }
}

}  // namespace

std::string file_crc32(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kInvalidInput, "cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08lx", static_cast<unsigned long>(crc));
  return buf;
}

Corpus Corpus::open(const fs::path& root) {
  Corpus c;
  c.root_ = root;
  const fs::path mpath = root / "manifest.json";
  if (!fs::exists(mpath)) fail(ErrorKind::kInvalidInput, "no manifest.json in " + root.string());
  try {
    c.manifest_ = json::parse(read_text_file(mpath));
  } catch (const json::parse_error& e) {
    fail(ErrorKind::kFormat, "bad manifest: " + std::string(e.what()));
  }
  const std::string where = mpath.string();
  const json feat = c.manifest_.value("features", json::object());
  c.feat_.dim = feat.value("dim", c.feat_.dim);
  c.feat_.seed = feat.value("seed", c.feat_.seed);
  c.feat_.base_cols_1x = feat.value("base_cols_1x", c.feat_.base_cols_1x);
  c.feat_.stored_factors = feat.value("stored_factors", std::vector<int>{});
  if (!c.manifest_.contains("slides") || !c.manifest_["slides"].is_array()) {
    fail(ErrorKind::kFormat, where + ": missing slides array");
  }
  std::set<std::string> seen;
  for (const json& s : c.manifest_["slides"]) {
    CorpusSlide slide;
    slide.id = field<std::string>(s, "id", where);
    if (!seen.insert(slide.id).second) fail(ErrorKind::kFormat, where + ": duplicate slide " + slide.id);
    slide.test = field<std::string>(s, "split", where) == "test";
    slide.bounds = {field<double>(s, "width", where), field<double>(s, "height", where)};
    if (!(slide.bounds.width > 0.0) || !(slide.bounds.height > 0.0)) {
      fail(ErrorKind::kFormat, where + ": slide " + slide.id + " has non-positive size");
    }
    slide.map_file = s.value("map", std::string());
    c.slides_.push_back(slide);
  }
  std::map<std::string, GradeMap> maps;
  for (const CorpusSlide& s : c.slides_) {
    if (!s.map_file.empty() && fs::exists(root / s.map_file)) maps[s.id] = load_grade_map(root / s.map_file);
  }
  c.provider_ = std::make_shared<CorpusFeatureProvider>(root / "features", c.bounds(),
                                                        std::move(maps), c.feat_);
  return c;
}

const CorpusSlide& Corpus::slide(const std::string& id) const {
  for (const CorpusSlide& s : slides_) {
    if (s.id == id) return s;
  }
  fail(ErrorKind::kInvalidInput, "slide '" + id + "' is not in the corpus");
}

bool Corpus::has_slide(const std::string& id) const {
  for (const CorpusSlide& s : slides_) {
    if (s.id == id) return true;
  }
  return false;
}

std::vector<std::string> Corpus::ids(std::optional<bool> test) const {
  std::vector<std::string> out;
  for (const CorpusSlide& s : slides_) {
    if (!test || s.test == *test) out.push_back(s.id);
  }
  return out;
}

std::map<std::string, WsiBounds> Corpus::bounds() const {
  std::map<std::string, WsiBounds> out;
  for (const CorpusSlide& s : slides_) out[s.id] = s.bounds;
  return out;
}

std::map<std::string, GradeMap> Corpus::load_maps() const {
  std::map<std::string, GradeMap> out;
  for (const CorpusSlide& s : slides_) {
    if (!s.map_file.empty()) out[s.id] = load_grade_map(root_ / s.map_file);
  }
  return out;
}

const FeatureProvider& Corpus::features() const { return *provider_; }

std::vector<Scanpath> Corpus::load_scanpaths() const { return read_scanpaths(scanpaths_path()); }

void write_corpus(const fs::path& root, const SyntheticCorpus& corpus,
                  const CorpusFeatureSettings& feat, const SimplifyParams& simplify_params,
                  const json& config) {
  fs::create_directories(root / "maps");
  fs::create_directories(root / "features");
  std::map<std::string, GradeMap> maps;
  for (std::size_t i = 0; i < corpus.wsi_ids.size(); ++i) maps[corpus.wsi_ids[i]] = corpus.maps[i];
  const SyntheticFeatureProvider provider(maps, feat.dim, feat.seed, GridLayout{feat.base_cols_1x});

  std::vector<std::string> files;
  json slides = json::array();
  for (std::size_t i = 0; i < corpus.wsi_ids.size(); ++i) {
    const std::string& id = corpus.wsi_ids[i];
    const std::string map_file = "maps/" + id + ".txt";
    save_grade_map(root / map_file, corpus.maps[i]);
    files.push_back(map_file);
    for (int f : feat.stored_factors) {
      const std::string ffile = "features/" + FileFeatureProvider::file_name(id, MagLevel::from_factor(f)).string();
      save_features(root / ffile, provider.grid(id, MagLevel::from_factor(f)));
      files.push_back(ffile);
    }
    const WsiBounds b = corpus.maps[i].bounds();
    slides.push_back({{"id", id},
                      {"split", corpus.is_test[i] ? "test" : "train"},
                      {"width", b.width},
                      {"height", b.height},
                      {"map", map_file}});
  }

  {
    std::ofstream out(root / "trajectories.jsonl", std::ios::binary);
    write_trajectories(out, corpus.trajectories);
  }
  files.push_back("trajectories.jsonl");

  std::vector<Scanpath> sps;
  for (const RawTrajectory& t : corpus.trajectories) {
    SimplifyParams p = simplify_params;
    p.viewport_width_1x = corpus.map(t.wsi_id).bounds().width;
    sps.push_back(simplify(t, p));
  }
  {
    std::ofstream out(root / "scanpaths.jsonl", std::ios::binary);
    write_scanpaths(out, sps, {{"tool_version", kToolVersion}, {"simplify", to_json(simplify_params)}});
  }
  files.push_back("scanpaths.jsonl");

  json checksums = json::object();
  for (const std::string& f : files) checksums[f] = file_crc32(root / f);
  const json manifest = {{"tool_version", kToolVersion},
                         {"config", config},
                         {"features",
                          {{"dim", feat.dim},
                           {"seed", feat.seed},
                           {"base_cols_1x", feat.base_cols_1x},
                           {"stored_factors", feat.stored_factors}}},
                         {"slides", slides},
                         {"checksums", checksums}};
  write_text_file(root / "manifest.json", manifest.dump(2) + "\n");
}

}  // namespace pathscan
