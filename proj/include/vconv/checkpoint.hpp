#pragma once

#include <cstdint>
#include <string>

#include "vconv/model.hpp"
#include "vconv/rng.hpp"

namespace vconv {

// Sectioned binary container: magic "VCCK", format version, config
// fingerprint, training step, RNG state, then a tensor directory
// (name/shape/dtype/offset) followed by raw little-endian float64 data.
// Parameters round-trip bit-exactly; Adam moments are not persisted.
inline constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  uint32_t version = 0;
  uint64_t fingerprint = 0;
  int64_t step = 0;
  std::string rng_state;
  int tensor_count = 0;
};

void save_checkpoint(const std::string& path, const Model& model, const Rng& rng);

// Loads into a model already built from a config. The stored fingerprint
// must match config_fingerprint(model->cfg) unless force is set; every
// stored tensor must exist with the same shape, and vice versa.
CheckpointMeta load_checkpoint(const std::string& path, Model* model, Rng* rng,
                               bool force = false);

// Header + directory only; no tensor data is read.
CheckpointMeta peek_checkpoint(const std::string& path);

}  // namespace vconv
