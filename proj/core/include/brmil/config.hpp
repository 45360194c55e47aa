#pragma once

// Flat configuration: one `key = value` per line, `#` starts a comment, keys
// are dotted with the owning module's prefix (encoder.*, selector.*,
// aggregator.*, loss.*, distill.*, stage1.*, stage2.*, stage3.*, synth.*,
// bench.*) plus the top-level `seed` and `threads`. Later assignments win.

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "brmil/bench.hpp"
#include "brmil/losses.hpp"
#include "brmil/model.hpp"
#include "brmil/synthetic.hpp"
#include "brmil/training.hpp"

namespace brmil {

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Last assignment per key wins, matching file order.
std::map<std::string, std::string> parse_config_text(const std::string& text);
std::map<std::string, std::string> parse_config_file(const std::string& path);

/// Every tunable of every module in one place. Subcommands use the slices
/// they need; validate() checks all of them up front.
struct GlobalConfig {
  PairModelConfig model;
  LossConfig loss;
  DistillConfig distill;
  StageConfig stage1;
  StageConfig stage2;
  StageConfig stage3;
  SynthSpec synth;
  BenchConfig bench;
  std::uint64_t seed = 2020;
  int threads = 1;

  GlobalConfig();

  /// Applies recognized keys; throws ConfigError naming the first unknown
  /// key or unparsable value.
  void apply(const std::map<std::string, std::string>& kv);
  void apply_one(const std::string& key, const std::string& value);

  /// Threads the top-level seed into every per-module seed field.
  void reseed(std::uint64_t s);

  void validate() const;

  /// Round trip: every recognized key with its current value.
  std::map<std::string, std::string> dump() const;
};

}  // namespace brmil
