#pragma once

// Checkpoint container:
//
//   bytes 0..7   magic "PSDPACK1"
//   bytes 8..15  header length N, uint64 little-endian
//   next N bytes UTF-8 JSON header:
//                  {"format_version": 1, "model": {...ModelConfig...},
//                   "metadata": {...}, "tensors": [{"name", "shape"}, ...]}
//   remainder    float64 little-endian payload of every tensor, in header order
//
// Values are stored as raw IEEE-754 bytes, so a save/load round trip is exact.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "projsdpa/model/config.hpp"
#include "projsdpa/model/params.hpp"

namespace projsdpa::model {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'P', 'S', 'D', 'P', 'A', 'C', 'K', '1'};
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  TransformerParams params;
  nlohmann::json metadata = nlohmann::json::object();
};

inline void save_checkpoint(const std::filesystem::path& path,
                            const ModelConfig& config,
                            const TransformerParams& params,
                            const nlohmann::json& metadata = nlohmann::json::object()) {
  nlohmann::json header;
  header["format_version"] = kCheckpointVersion;
  header["model"] = to_json(config);
  header["metadata"] = metadata;
  header["tensors"] = nlohmann::json::array();
  params.for_each([&](const std::string& name, const Parameter& p) {
    header["tensors"].push_back({{"name", name}, {"shape", p.value.shape()}});
  });
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  const std::uint64_t n = text.size();
  out.write(reinterpret_cast<const char*>(&n), sizeof n);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  params.for_each([&](const std::string&, const Parameter& p) {
    out.write(reinterpret_cast<const char*>(p.value.raw()),
              static_cast<std::streamsize>(p.value.size() * sizeof(double)));
  });
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  char magic[sizeof kCheckpointMagic];
  std::uint64_t n = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&n), sizeof n);
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw DataError(path.string() + " is not a checkpoint file");
  if (n > (std::uint64_t{1} << 32)) throw DataError("checkpoint header too large");
  std::string text(n, '\0');
  in.read(text.data(), static_cast<std::streamsize>(n));
  if (!in) throw DataError("truncated checkpoint header in " + path.string());

  nlohmann::json header;
  Checkpoint ck;
  try {
    header = nlohmann::json::parse(text);
    if (header.at("format_version").get<int>() != kCheckpointVersion)
      throw ConfigError("unsupported checkpoint version");
    ck.config = model_config_from_json(header.at("model"));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed checkpoint header: ") + e.what());
  }
  ck.config.validate();
  ck.metadata = header.value("metadata", nlohmann::json::object());
  ck.params = TransformerParams::init(ck.config);

  const auto& tensors = header.at("tensors");
  std::size_t idx = 0;
  ck.params.for_each([&](const std::string& name, Parameter& p) {
    if (idx >= tensors.size() || tensors[idx].at("name") != name ||
        tensors[idx].at("shape").get<Shape>() != p.value.shape()) {
      throw ConfigError("checkpoint tensor layout does not match its config at '" +
                        name + "'");
    }
    ++idx;
    in.read(reinterpret_cast<char*>(p.value.raw()),
            static_cast<std::streamsize>(p.value.size() * sizeof(double)));
    if (!in) throw DataError("truncated checkpoint payload at '" + name + "'");
  });
  if (idx != tensors.size())
    throw ConfigError("checkpoint lists more tensors than its config defines");
  return ck;
}

}  // namespace projsdpa::model
