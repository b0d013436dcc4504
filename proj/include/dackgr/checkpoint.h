#ifndef DACKGR_CHECKPOINT_H_
#define DACKGR_CHECKPOINT_H_

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>

#include "dackgr/autodiff.h"
#include "json.hpp"

namespace dackgr {

enum class Precision { kFloat32, kFloat64 };

struct CheckpointInfo {
  Precision precision = Precision::kFloat64;
  std::uint64_t seed = 0;
  std::int64_t step = 0;
  nlohmann::json extra = nlohmann::json::object();
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Writes `dir/manifest.json` (names, shapes, precision, seed, step, extra)
// plus one raw little-endian blob per parameter.
void save_checkpoint(const std::filesystem::path& dir,
                     std::span<const Parameter* const> params,
                     const CheckpointInfo& info);

// Restores parameters by name. Every requested parameter must be present
// with a matching shape.
CheckpointInfo load_checkpoint(const std::filesystem::path& dir,
                               std::span<Parameter* const> params);

}  // namespace dackgr

#endif  // DACKGR_CHECKPOINT_H_
