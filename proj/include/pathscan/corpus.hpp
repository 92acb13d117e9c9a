#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pathscan/features.hpp"
#include "pathscan/synth.hpp"
#include "pathscan/trajectory.hpp"

namespace pathscan {

// Corpus directory:
//   manifest.json          slides, splits, feature settings, file checksums
//   maps/<id>.txt          grade maps (+ .json sidecar)
//   features/<id>_<f>x.psft
//   trajectories.jsonl     raw viewport samples
//   scanpaths.jsonl        simplified scanpaths
struct CorpusSlide {
  std::string id;
  bool test = false;
  WsiBounds bounds;
  std::string map_file;  // relative to the corpus root; empty if none
};

struct CorpusFeatureSettings {
  std::size_t dim = 32;
  std::uint64_t seed = 7;
  std::size_t base_cols_1x = 8;
  std::vector<int> stored_factors{1, 2, 4, 10};
};

class Corpus {
 public:
  static Corpus open(const std::filesystem::path& root);

  const std::filesystem::path& root() const { return root_; }
  const nlohmann::json& manifest() const { return manifest_; }
  const std::vector<CorpusSlide>& slides() const { return slides_; }
  const CorpusSlide& slide(const std::string& id) const;
  bool has_slide(const std::string& id) const;
  std::vector<std::string> ids(std::optional<bool> test = std::nullopt) const;
  std::map<std::string, WsiBounds> bounds() const;

  std::map<std::string, GradeMap> load_maps() const;
  // Reads stored feature files and falls back to the synthetic featurizer
  // over the grade maps for levels that were not written.
  const FeatureProvider& features() const;
  const CorpusFeatureSettings& feature_settings() const { return feat_; }

  std::filesystem::path trajectories_path() const { return root_ / "trajectories.jsonl"; }
  std::filesystem::path scanpaths_path() const { return root_ / "scanpaths.jsonl"; }
  std::vector<Scanpath> load_scanpaths() const;

 private:
  std::filesystem::path root_;
  nlohmann::json manifest_;
  std::vector<CorpusSlide> slides_;
  CorpusFeatureSettings feat_;
  std::shared_ptr<FeatureProvider> provider_;
};

// Writes a synthetic corpus. Scanpaths are simplified with `simplify` using
// each slide's width as the 1X viewport width. `config` is echoed into the
// manifest.
void write_corpus(const std::filesystem::path& root, const SyntheticCorpus& corpus,
                  const CorpusFeatureSettings& feat, const SimplifyParams& simplify_params,
                  const nlohmann::json& config);

// CRC32 of a file's bytes as 8 lowercase hex digits.
std::string file_crc32(const std::filesystem::path& path);

}  // namespace pathscan
