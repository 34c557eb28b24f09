#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "vmos/appearance.hpp"
#include "vmos/association.hpp"
#include "vmos/features.hpp"
#include "vmos/heads.hpp"
#include "vmos/memory.hpp"

namespace vmos {

struct ProposalConfig {
  double sigma = 10.0;  // center heatmap target spread, pixels
  std::size_t nms_window = 7;
  double heatmap_threshold = 0.1;
  std::size_t top_k = 50;
  double foreground_threshold = 0.5;
  std::size_t min_area = 0;  // proposals below this many pixels are discarded

  friend bool operator==(const ProposalConfig&, const ProposalConfig&) = default;
};

/// Every tunable of the pipeline. Serializes to JSON and back without loss.
struct PipelineConfig {
  FeatureConfig features;
  HeadConfig heads;
  ProposalConfig proposals;
  AssociationConfig association;
  MemoryConfig memory;
  AppearanceConfig appearance;
  HeadTrainConfig training;
  std::uint64_t seed = 0;  // tracker initialization and guidance-module weights

  void validate() const;

  friend bool operator==(const PipelineConfig&, const PipelineConfig&) = default;
};

std::string config_to_json(const PipelineConfig& config);
/// Missing keys keep their defaults; unknown keys and bad values are errors.
PipelineConfig config_from_json(std::string_view text);

PipelineConfig load_config(const std::filesystem::path& path);
void save_config(const PipelineConfig& config, const std::filesystem::path& path);

}  // namespace vmos
