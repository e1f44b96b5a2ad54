#pragma once

// Single-file checkpoints.
//
// Layout: 8-byte magic "FFCKPT01", u64 little-endian manifest length, the
// manifest as JSON text, then every array as raw little-endian float64 in
// manifest order. Offsets in the manifest count doubles from the start of the
// array section.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ffkit/adapters.hpp"
#include "ffkit/data.hpp"
#include "ffkit/model.hpp"

namespace ffkit {

inline constexpr char kCheckpointMagic[8] = {'F', 'F', 'C', 'K', 'P', 'T', '0', '1'};
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  MicroTransformer model;
  nlohmann::json metadata = nlohmann::json::object();
};

inline nlohmann::json geometry_to_json(const ModelGeometry& g) {
  return {{"input_dim", g.input_dim}, {"tokens", g.tokens}, {"d_model", g.d_model}, {"d_ff", g.d_ff},
          {"heads", g.heads},         {"blocks", g.blocks}, {"classes", g.classes}};
}

inline ModelGeometry geometry_from_json(const nlohmann::json& j) {
  ModelGeometry g;
  g.input_dim = j.at("input_dim").get<std::size_t>();
  g.tokens = j.at("tokens").get<std::size_t>();
  g.d_model = j.at("d_model").get<std::size_t>();
  g.d_ff = j.at("d_ff").get<std::size_t>();
  g.heads = j.at("heads").get<std::size_t>();
  g.blocks = j.at("blocks").get<std::size_t>();
  g.classes = j.at("classes").get<std::size_t>();
  return g;
}

inline nlohmann::json synthetic_to_json(const SyntheticSpec& s) {
  return {{"classes", s.classes}, {"dim", s.dim},     {"per_class", s.per_class},
          {"margin", s.margin},   {"noise", s.noise}, {"seed", s.seed}};
}

inline SyntheticSpec synthetic_from_json(const nlohmann::json& j) {
  SyntheticSpec s;
  s.classes = j.at("classes").get<std::size_t>();
  s.dim = j.at("dim").get<std::size_t>();
  s.per_class = j.at("per_class").get<std::size_t>();
  s.margin = j.at("margin").get<double>();
  s.noise = j.at("noise").get<double>();
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

namespace detail {

inline void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t get_u64(const unsigned char* b) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
  return s;
}

struct ArrayRef {
  std::string name;
  Tensor tensor;
};

inline std::vector<ArrayRef> checkpoint_arrays(const MicroTransformer& model) {
  std::vector<ArrayRef> out;
  for (const auto& p : model.parameters()) out.push_back({p.name, p.tensor});
  for (const auto& a : model.adapters()) {
    out.push_back({a.B.name(), a.B});
    out.push_back({a.A.name(), a.A});
  }
  return out;
}

}  // namespace detail

inline void save_checkpoint(const MicroTransformer& model, const std::filesystem::path& path,
                            const nlohmann::json& metadata = nlohmann::json::object()) {
  nlohmann::json manifest;
  manifest["format"] = "ffkit-checkpoint";
  manifest["version"] = kCheckpointVersion;
  manifest["geometry"] = geometry_to_json(model.geometry());
  manifest["seed"] = model.seed();
  manifest["classes"] = model.geometry().classes;
  manifest["checksum"] = detail::hex64(model.checksum());
  nlohmann::json mask = nlohmann::json::object();
  for (const auto& [name, frozen] : model.freeze_mask()) mask[name] = frozen;
  manifest["freeze_mask"] = mask;

  const auto arrays = detail::checkpoint_arrays(model);
  nlohmann::json arr = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& a : arrays) {
    arr.push_back({{"name", a.name}, {"shape", a.tensor.shape()}, {"offset", offset}, {"count", a.tensor.numel()}});
    offset += a.tensor.numel();
  }
  manifest["arrays"] = arr;

  nlohmann::json adapters = nlohmann::json::array();
  for (const auto& a : model.adapters()) {
    adapters.push_back({{"task_id", a.task_id},
                        {"block", a.site.block},
                        {"site", std::string(to_string(a.site.kind))},
                        {"rank", a.rank},
                        {"b", a.B.name()},
                        {"a", a.A.name()},
                        {"trainable", a.B.requires_grad()}});
  }
  manifest["adapters"] = adapters;
  nlohmann::json grouping = nlohmann::json::object();
  for (const auto& [t, g] : model.adapter_grouping()) grouping[std::to_string(t)] = std::string(to_string(g));
  manifest["adapter_grouping"] = grouping;
  manifest["merged_tasks"] = model.merged_tasks();
  manifest["metadata"] = metadata;

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(os), ErrorKind::io, "cannot open '" + path.string() + "' for writing");
  const std::string text = manifest.dump();
  os.write(kCheckpointMagic, 8);
  detail::put_u64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& a : arrays) {
    for (double v : a.tensor.data()) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      detail::put_u64(os, bits);
    }
  }
  require(static_cast<bool>(os), ErrorKind::io, "write failed for '" + path.string() + "'");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), ErrorKind::io, "cannot open checkpoint '" + path.string() + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  const std::string where = "checkpoint '" + path.string() + "'";
  require(bytes.size() >= 16 && std::memcmp(bytes.data(), kCheckpointMagic, 8) == 0, ErrorKind::io,
          where + ": bad magic");
  const std::uint64_t mlen = detail::get_u64(bytes.data() + 8);
  require(mlen <= bytes.size() - 16, ErrorKind::io, where + ": truncated manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(mlen));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::io, where + ": manifest is not valid JSON (" + e.what() + ")");
  }
  const std::size_t data_start = 16 + mlen;
  const std::size_t n_doubles = (bytes.size() - data_start) / 8;
  require((bytes.size() - data_start) % 8 == 0, ErrorKind::io, where + ": array section is not a multiple of 8 bytes");

  Checkpoint ck;
  try {
    require(manifest.at("version").get<int>() == kCheckpointVersion, ErrorKind::io, where + ": unsupported version");
    const ModelGeometry g = geometry_from_json(manifest.at("geometry"));
    MicroTransformer model(g, manifest.at("seed").get<std::uint64_t>());

    std::map<std::string, std::pair<Shape, std::vector<double>>> arrays;
    for (const auto& a : manifest.at("arrays")) {
      const auto offset = a.at("offset").get<std::size_t>();
      const auto count = a.at("count").get<std::size_t>();
      const auto shape = a.at("shape").get<Shape>();
      require(numel(shape) == count && offset + count <= n_doubles, ErrorKind::io,
              where + ": array '" + a.at("name").get<std::string>() + "' out of bounds");
      std::vector<double> values(count);
      for (std::size_t i = 0; i < count; ++i) {
        const std::uint64_t bits = detail::get_u64(bytes.data() + data_start + 8 * (offset + i));
        std::memcpy(&values[i], &bits, sizeof bits);
      }
      arrays[a.at("name").get<std::string>()] = {shape, std::move(values)};
    }
    for (auto& p : model.parameters()) {
      auto it = arrays.find(p.name);
      require(it != arrays.end(), ErrorKind::io, where + ": missing array '" + p.name + "'");
      require(it->second.first == p.tensor.shape(), ErrorKind::io, where + ": shape mismatch for '" + p.name + "'");
      p.tensor.assign(it->second.second);
    }
    for (const auto& a : manifest.at("adapters")) {
      LoRAPair pair;
      pair.task_id = a.at("task_id").get<int>();
      pair.site = Site{a.at("block").get<std::size_t>(), parse_site_kind(a.at("site").get<std::string>())};
      pair.rank = a.at("rank").get<std::size_t>();
      auto load = [&](const std::string& name) {
        auto it = arrays.find(name);
        require(it != arrays.end(), ErrorKind::io, where + ": missing adapter array '" + name + "'");
        Tensor t(it->second.first, it->second.second, a.value("trainable", false));
        t.set_name(name);
        return t;
      };
      pair.B = load(a.at("b").get<std::string>());
      pair.A = load(a.at("a").get<std::string>());
      model.adapters().push_back(pair);
    }
    for (const auto& [t, g2] : manifest.at("adapter_grouping").items())
      model.adapter_grouping()[std::stoi(t)] = parse_grouping(g2.get<std::string>());
    model.merged_tasks() = manifest.at("merged_tasks").get<std::vector<int>>();
    std::map<std::string, bool> mask;
    for (const auto& [name, frozen] : manifest.at("freeze_mask").items()) mask[name] = frozen.get<bool>();
    model.apply_freeze_mask(mask);
    require(detail::hex64(model.checksum()) == manifest.at("checksum").get<std::string>(), ErrorKind::io,
            where + ": checksum mismatch");
    ck.model = std::move(model);
    ck.metadata = manifest.value("metadata", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::io, where + ": malformed manifest (" + e.what() + ")");
  }
  return ck;
}

}  // namespace ffkit
