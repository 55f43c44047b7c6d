#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "matchdet/geometry.hpp"
#include "matchdet/matchhead.hpp"
#include "matchdet/minidet.hpp"
#include "matchdet/params.hpp"
#include "matchdet/synthdata.hpp"
#include "matchdet/types.hpp"

namespace matchdet::io {

// JSON wire formats. Kept as strings here so the JSON library stays an
// implementation detail of the core.

/// 9 numbers, row-major.
std::string homography_to_json(const geo::Homography& h);
geo::Homography homography_from_json(std::string_view text);

/// [{"x1":..,"y1":..,"x2":..,"y2":..,"class":..}, ...]
std::string boxes_to_json(std::span<const BBox> boxes);
std::vector<BBox> boxes_from_json(std::string_view text);

/// {"h":..,"w":..,"values":[...]}
std::string weight_map_to_json(const WeightMap& map);
WeightMap weight_map_from_json(std::string_view text);

/// {"theta":..,"tau":..,"matches":[{"i":..,"j":..,"p":..},...]}
std::string match_set_to_json(const match::MatchSet& matches, double tau);
match::MatchSet match_set_from_json(std::string_view text, double* tau = nullptr);

/// Boxes plus "score".
std::string detections_to_json(std::span<const det::Detection> detections);
std::vector<det::Detection> detections_from_json(std::string_view text);

/// Flat list of named matrices with shapes.
void save_checkpoint(const ParamStore& store, const std::filesystem::path& path);
ParamStore load_checkpoint(const std::filesystem::path& path);

/// Little-endian f64 blob with an 8-byte magic and u32 shape header.
void write_matrix_blob(const std::filesystem::path& path, const num::Matrix& m);
num::Matrix read_matrix_blob(const std::filesystem::path& path);

/// Dataset manifest: JSON lines, one sample per line, grids stored as
/// path-addressed matrix blobs next to the manifest.
void save_dataset(const std::filesystem::path& dir,
                  std::span<const synth::SceneSample> samples);
std::vector<synth::SceneSample> load_dataset(const std::filesystem::path& manifest);

}  // namespace matchdet::io
