#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vmos/eval.hpp"
#include "vmos/features.hpp"
#include "vmos/heads.hpp"
#include "vmos/mask.hpp"
#include "vmos/sgm.hpp"
#include "vmos/synthetic.hpp"

namespace vmos {

// Binary PPM (P6, maxval 255). Values are rounded to 8 bits on write.
void write_ppm(const std::filesystem::path& path, const Frame& frame);
Frame read_ppm(const std::filesystem::path& path);

// Binary PGM (P5) with gray level = instance id; 16-bit when an id exceeds 255.
void write_pgm(const std::filesystem::path& path, const InstanceMask& mask);
InstanceMask read_pgm(const std::filesystem::path& path);

/// Per-video index: frame and mask files in order plus id -> track mapping.
struct Manifest {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::string> frame_files;  // relative to the manifest directory
  std::vector<std::string> mask_files;
  std::map<std::uint32_t, std::uint32_t> tracks;
  std::vector<std::map<std::uint32_t, double>> track_scores;  // per frame, optional
};

void write_manifest(const std::filesystem::path& dir, const Manifest& manifest);
Manifest read_manifest(const std::filesystem::path& dir);

/// Writes frames/, masks/ and manifest.json (frames omitted when empty).
void write_video(const std::filesystem::path& dir, const std::vector<Frame>& frames, const TrackSet& masks,
                 const std::vector<std::map<std::uint32_t, double>>& track_scores = {});

/// Reads frames (if listed) and masks (if listed). Missing files are DataErrors.
struct VideoData {
  std::vector<Frame> frames;
  TrackSet masks;
};
VideoData read_video(const std::filesystem::path& dir, std::optional<std::size_t> max_frames = {});

/// Trained proposal network: decoder heads plus the two guidance modules.
struct ModelBundle {
  HeadParams heads;
  SgmParams sgm_salient;
  SgmParams sgm_instance;
};

/// Little-endian layout: u64 header length, JSON header (tensor names,
/// shapes and element offsets), then float64 values.
void save_model(const std::filesystem::path& path, const ModelBundle& model);
ModelBundle load_model(const std::filesystem::path& path);

std::string report_to_json(const MetricReport& report);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace vmos
