#pragma once

// Dataset export: a raw little-endian float64 feature block, a JSON manifest
// with shape, class list and generator seed, and a labels CSV for eyeballing.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "ffkit/checkpoint.hpp"
#include "ffkit/data.hpp"

namespace ffkit {

inline void save_dataset(const Dataset& data, const std::filesystem::path& dir,
                         const std::optional<SyntheticSpec>& origin = std::nullopt) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream os(dir / "features.bin", std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(os), ErrorKind::io, "cannot write '" + (dir / "features.bin").string() + "'");
    for (double v : data.features) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      detail::put_u64(os, bits);
    }
    require(static_cast<bool>(os), ErrorKind::io, "write failed in '" + dir.string() + "'");
  }
  std::vector<std::size_t> present;
  const auto counts = data.class_counts();
  for (std::size_t c = 0; c < counts.size(); ++c)
    if (counts[c] > 0) present.push_back(c);
  nlohmann::json manifest{{"format", "ffkit-dataset"},
                          {"version", 1},
                          {"split", std::string(to_string(data.split))},
                          {"size", data.size()},
                          {"dim", data.dim},
                          {"num_classes", data.num_classes},
                          {"classes", present},
                          {"labels", data.labels}};
  if (origin) manifest["generator"] = synthetic_to_json(*origin);
  std::ofstream ms(dir / "manifest.json", std::ios::trunc);
  ms << manifest.dump(2) << '\n';
  std::ofstream ls(dir / "labels.csv", std::ios::trunc);
  ls << "index,label\n";
  for (std::size_t i = 0; i < data.size(); ++i) ls << i << ',' << data.labels[i] << '\n';
  require(static_cast<bool>(ms) && static_cast<bool>(ls), ErrorKind::io, "write failed in '" + dir.string() + "'");
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  const std::string where = "dataset '" + dir.string() + "'";
  std::ifstream ms(dir / "manifest.json");
  require(static_cast<bool>(ms), ErrorKind::io, where + ": cannot read manifest.json");
  Dataset out;
  try {
    const auto m = nlohmann::json::parse(ms);
    require(m.at("format") == "ffkit-dataset" && m.at("version") == 1, ErrorKind::io, where + ": unknown format");
    out.dim = m.at("dim").get<std::size_t>();
    out.num_classes = m.at("num_classes").get<std::size_t>();
    out.split = m.at("split").get<std::string>() == "test" ? Split::test : Split::train;
    out.labels = m.at("labels").get<std::vector<std::size_t>>();
    require(out.labels.size() == m.at("size").get<std::size_t>(), ErrorKind::io, where + ": label count mismatch");
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::io, where + ": malformed manifest (" + e.what() + ")");
  }
  for (auto y : out.labels) require(y < out.num_classes, ErrorKind::io, where + ": label out of range");

  std::ifstream fs(dir / "features.bin", std::ios::binary);
  require(static_cast<bool>(fs), ErrorKind::io, where + ": cannot read features.bin");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(fs)), std::istreambuf_iterator<char>());
  require(bytes.size() == 8 * out.dim * out.labels.size(), ErrorKind::io, where + ": feature block has the wrong size");
  out.features.resize(out.dim * out.labels.size());
  for (std::size_t i = 0; i < out.features.size(); ++i) {
    const std::uint64_t bits = detail::get_u64(bytes.data() + 8 * i);
    std::memcpy(&out.features[i], &bits, sizeof bits);
  }
  return out;
}

}  // namespace ffkit
