#include "matchdet/io.hpp"

#include <json.hpp>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace matchdet::io {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {
json box_to_json_obj(const BBox& b) {
  return json{{"x1", b.x1}, {"y1", b.y1}, {"x2", b.x2}, {"y2", b.y2},
              {"class", b.class_id}};
}

BBox box_from_json_obj(const json& j) {
  BBox b{j.at("x1").get<double>(), j.at("y1").get<double>(),
         j.at("x2").get<double>(), j.at("y2").get<double>(),
         j.at("class").get<int>()};
  return b;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}
}  // namespace

std::string homography_to_json(const geo::Homography& h) {
  return json(h.coeffs()).dump();
}

geo::Homography homography_from_json(std::string_view text) {
  json j = json::parse(text);
  if (!j.is_array() || j.size() != 9)
    throw std::invalid_argument("homography json must be an array of 9 numbers");
  std::array<double, 9> coeffs;
  for (int i = 0; i < 9; ++i) coeffs[i] = j[i].get<double>();
  return geo::Homography(coeffs);
}

std::string boxes_to_json(std::span<const BBox> boxes) {
  json arr = json::array();
  for (const BBox& b : boxes) arr.push_back(box_to_json_obj(b));
  return arr.dump();
}

std::vector<BBox> boxes_from_json(std::string_view text) {
  json arr = json::parse(text);
  std::vector<BBox> boxes;
  for (const json& j : arr) boxes.push_back(box_from_json_obj(j));
  return boxes;
}

std::string weight_map_to_json(const WeightMap& map) {
  return json{{"h", map.h}, {"w", map.w}, {"values", map.values}}.dump();
}

WeightMap weight_map_from_json(std::string_view text) {
  json j = json::parse(text);
  WeightMap map;
  map.h = j.at("h").get<int>();
  map.w = j.at("w").get<int>();
  map.values = j.at("values").get<std::vector<double>>();
  if (static_cast<int>(map.values.size()) != map.h * map.w)
    throw std::invalid_argument("weight map json: value count mismatch");
  return map;
}

std::string match_set_to_json(const match::MatchSet& matches, double tau) {
  json pairs = json::array();
  for (const auto& m : matches.pairs)
    pairs.push_back(json{{"i", m.i}, {"j", m.j}, {"p", m.p}});
  return json{{"theta", matches.theta}, {"tau", tau}, {"matches", pairs}}.dump();
}

match::MatchSet match_set_from_json(std::string_view text, double* tau) {
  json j = json::parse(text);
  match::MatchSet out;
  out.theta = j.at("theta").get<double>();
  if (tau) *tau = j.at("tau").get<double>();
  for (const json& m : j.at("matches"))
    out.pairs.push_back({m.at("i").get<int>(), m.at("j").get<int>(),
                         m.at("p").get<double>()});
  return out;
}

std::string detections_to_json(std::span<const det::Detection> detections) {
  json arr = json::array();
  for (const auto& d : detections) {
    json obj = box_to_json_obj(d.box);
    obj["score"] = d.score;
    arr.push_back(obj);
  }
  return arr.dump();
}

std::vector<det::Detection> detections_from_json(std::string_view text) {
  json arr = json::parse(text);
  std::vector<det::Detection> out;
  for (const json& j : arr)
    out.push_back({box_from_json_obj(j), j.at("score").get<double>()});
  return out;
}

void save_checkpoint(const ParamStore& store, const std::filesystem::path& path) {
  ordered_json arr = ordered_json::array();
  for (int i = 0; i < store.count(); ++i) {
    const auto& entry = store.at(i);
    arr.push_back(ordered_json{{"name", entry.name},
                               {"rows", entry.value.rows()},
                               {"cols", entry.value.cols()},
                               {"data", entry.value.values()}});
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << arr.dump(1) << '\n';
}

ParamStore load_checkpoint(const std::filesystem::path& path) {
  json arr = json::parse(read_file(path));
  ParamStore store;
  for (const json& j : arr) {
    store.add(j.at("name").get<std::string>(),
              num::Matrix(j.at("rows").get<int>(), j.at("cols").get<int>(),
                          j.at("data").get<std::vector<double>>()));
  }
  return store;
}

namespace {
constexpr char kBlobMagic[8] = {'M', 'D', 'F', '8', 'v', '1', 0, 0};

void write_u32(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::ifstream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}
}  // namespace

void write_matrix_blob(const std::filesystem::path& path, const num::Matrix& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kBlobMagic, 8);
  write_u32(out, static_cast<std::uint32_t>(m.rows()));
  write_u32(out, static_cast<std::uint32_t>(m.cols()));
  for (std::size_t i = 0; i < m.size(); ++i) {
    double v = m.data()[i];
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    unsigned char b[8];
    for (int k = 0; k < 8; ++k) b[k] = static_cast<unsigned char>(bits >> (8 * k));
    out.write(reinterpret_cast<const char*>(b), 8);
  }
}

num::Matrix read_matrix_blob(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (std::memcmp(magic, kBlobMagic, 8) != 0)
    throw std::runtime_error("bad matrix blob magic in " + path.string());
  int rows = static_cast<int>(read_u32(in));
  int cols = static_cast<int>(read_u32(in));
  std::vector<double> data(static_cast<std::size_t>(rows) * cols);
  for (double& v : data) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t bits = 0;
    for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(b[k]) << (8 * k);
    std::memcpy(&v, &bits, 8);
  }
  if (!in) throw std::runtime_error("truncated matrix blob " + path.string());
  return num::Matrix(rows, cols, std::move(data));
}

void save_dataset(const std::filesystem::path& dir,
                  std::span<const synth::SceneSample> samples) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.jsonl", std::ios::binary);
  if (!manifest) throw std::runtime_error("cannot write manifest in " + dir.string());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const synth::SceneSample& s = samples[i];
    std::string ref_name = "sample" + std::to_string(i) + "_ref.mdf8";
    std::string tgt_name = "sample" + std::to_string(i) + "_tgt.mdf8";
    write_matrix_blob(dir / ref_name, s.ref_grid.values);
    write_matrix_blob(dir / tgt_name, s.tgt_grid.values);

    ordered_json matches = ordered_json::array();
    for (const auto& [a, b] : s.gt_matches) matches.push_back(ordered_json::array({a, b}));
    ordered_json boxes_r = ordered_json::array(), boxes_t = ordered_json::array();
    for (const BBox& b : s.boxes_r) boxes_r.push_back(box_to_json_obj(b));
    for (const BBox& b : s.boxes_t) boxes_t.push_back(box_to_json_obj(b));
    ordered_json line{{"h", s.ref_grid.h},
                      {"w", s.ref_grid.w},
                      {"ref", ref_name},
                      {"tgt", tgt_name},
                      {"h_gt", s.h_gt.coeffs()},
                      {"boxes_r", boxes_r},
                      {"boxes_t", boxes_t},
                      {"gt_matches", matches},
                      {"dropped_boxes", s.dropped_boxes}};
    manifest << line.dump() << '\n';
  }
}

std::vector<synth::SceneSample> load_dataset(const std::filesystem::path& manifest) {
  std::ifstream in(manifest, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + manifest.string());
  std::filesystem::path dir = manifest.parent_path();
  std::vector<synth::SceneSample> samples;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    synth::SceneSample s;
    int h = j.at("h").get<int>(), w = j.at("w").get<int>();
    s.ref_grid = FeatureGrid(h, w, read_matrix_blob(dir / j.at("ref").get<std::string>()));
    s.tgt_grid = FeatureGrid(h, w, read_matrix_blob(dir / j.at("tgt").get<std::string>()));
    std::array<double, 9> coeffs;
    for (int i = 0; i < 9; ++i) coeffs[i] = j.at("h_gt")[i].get<double>();
    s.h_gt = geo::Homography(coeffs);
    for (const json& b : j.at("boxes_r")) s.boxes_r.push_back(box_from_json_obj(b));
    for (const json& b : j.at("boxes_t")) s.boxes_t.push_back(box_from_json_obj(b));
    for (const json& m : j.at("gt_matches"))
      s.gt_matches.emplace_back(m[0].get<int>(), m[1].get<int>());
    s.dropped_boxes = j.at("dropped_boxes").get<int>();
    samples.push_back(std::move(s));
  }
  return samples;
}

}  // namespace matchdet::io
