#include "dackgr/checkpoint.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <vector>

namespace dackgr {
namespace {

constexpr const char* kFormat = "dackgr-checkpoint";

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i)
      std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
    return v;
  }
}

std::string precision_name(Precision p) {
  return p == Precision::kFloat32 ? "float32" : "float64";
}

Precision parse_precision(const std::string& s) {
  if (s == "float32") return Precision::kFloat32;
  if (s == "float64") return Precision::kFloat64;
  throw CheckpointError("unknown precision '" + s + "'");
}

void write_blob(const std::filesystem::path& path, const Tensor& t,
                Precision precision) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write " + path.string());
  for (double v : t.values()) {
    if (precision == Precision::kFloat32) {
      const float f = to_little(static_cast<float>(v));
      out.write(reinterpret_cast<const char*>(&f), sizeof f);
    } else {
      const double d = to_little(v);
      out.write(reinterpret_cast<const char*>(&d), sizeof d);
    }
  }
  if (!out) throw CheckpointError("short write to " + path.string());
}

void read_blob(const std::filesystem::path& path, Tensor& t,
               Precision precision) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read " + path.string());
  const std::size_t width = precision == Precision::kFloat32 ? 4 : 8;
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes != t.size() * width) {
    throw CheckpointError(path.string() + ": expected " +
                          std::to_string(t.size() * width) + " bytes, found " +
                          std::to_string(bytes));
  }
  in.seekg(0);
  for (auto& v : t.values()) {
    if (precision == Precision::kFloat32) {
      float f;
      in.read(reinterpret_cast<char*>(&f), sizeof f);
      v = to_little(f);
    } else {
      double d;
      in.read(reinterpret_cast<char*>(&d), sizeof d);
      v = to_little(d);
    }
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir,
                     std::span<const Parameter* const> params,
                     const CheckpointInfo& info) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = kFormat;
  manifest["version"] = 1;
  manifest["precision"] = precision_name(info.precision);
  manifest["seed"] = info.seed;
  manifest["step"] = info.step;
  manifest["extra"] = info.extra;
  auto entries = nlohmann::json::array();
  for (std::size_t i = 0; i < params.size(); ++i) {
    char file[32];
    std::snprintf(file, sizeof file, "param_%04zu.bin", i);
    write_blob(dir / file, params[i]->value, info.precision);
    entries.push_back({{"name", params[i]->name},
                       {"shape", params[i]->value.shape()},
                       {"file", file}});
  }
  manifest["parameters"] = entries;
  std::ofstream out(dir / "manifest.json");
  if (!out) throw CheckpointError("cannot write manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
}

CheckpointInfo load_checkpoint(const std::filesystem::path& dir,
                               std::span<Parameter* const> params) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw CheckpointError("no manifest.json in " + dir.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("bad manifest in " + dir.string() + ": " + e.what());
  }
  if (manifest.value("format", "") != kFormat)
    throw CheckpointError(dir.string() + " is not a checkpoint directory");
  CheckpointInfo info;
  info.precision = parse_precision(manifest.at("precision"));
  info.seed = manifest.at("seed");
  info.step = manifest.at("step");
  info.extra = manifest.value("extra", nlohmann::json::object());

  std::map<std::string, nlohmann::json> by_name;
  for (const auto& e : manifest.at("parameters"))
    by_name[e.at("name").get<std::string>()] = e;
  for (Parameter* p : params) {
    auto it = by_name.find(p->name);
    if (it == by_name.end())
      throw CheckpointError("parameter '" + p->name + "' missing from " +
                            dir.string());
    const Shape shape = it->second.at("shape").get<Shape>();
    if (shape != p->value.shape()) {
      throw CheckpointError("parameter '" + p->name + "' has shape " +
                            shape_string(shape) + " in checkpoint, expected " +
                            shape_string(p->value.shape()));
    }
    read_blob(dir / it->second.at("file").get<std::string>(), p->value,
              info.precision);
  }
  return info;
}

}  // namespace dackgr
