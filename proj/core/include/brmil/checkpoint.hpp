#pragma once

#include <string>
#include <utility>
#include <vector>

#include "brmil/params.hpp"
#include "brmil/tensor.hpp"

namespace brmil {

/// Versioned binary checkpoint: magic + format version + a JSON metadata
/// blob + named tensors as little-endian 64-bit floats.
struct Checkpoint {
  std::string meta;  // JSON text, producer-defined
  std::vector<std::pair<std::string, Tensor>> tensors;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckp);
Checkpoint load_checkpoint(const std::string& path);

/// Copies values from a loaded checkpoint into an existing ParamSet; every
/// parameter must be present with a matching shape.
void restore_params(ParamSet& params, const Checkpoint& ckp, const std::string& prefix);

/// Snapshot of a ParamSet under a name prefix.
void collect_params(Checkpoint& ckp, const ParamSet& params, const std::string& prefix);

}  // namespace brmil
