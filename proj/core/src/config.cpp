#include "vmos/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "vmos/errors.hpp"

namespace vmos {

namespace {

using nlohmann::json;

// Reads the known keys of one object and rejects anything else.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw DataError("config: " + path_ + " must be an object");
  }
  ~Reader() = default;

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->get<T>();
    } catch (const json::exception& e) {
      throw DataError("config: bad value for " + path_ + "." + key + ": " + e.what());
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw DataError("config: unknown key " + path_ + "." + it.key());
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json to_j(const FeatureConfig& c) {
  return {{"stride", c.stride}, {"channels", c.channels}, {"box_radii", c.box_radii}};
}
void from_j(const json& j, FeatureConfig& c) {
  Reader r(j, "features");
  r.get("stride", c.stride);
  r.get("channels", c.channels);
  r.get("box_radii", c.box_radii);
  r.finish();
}

json to_j(const HeadConfig& c) {
  return {{"feature_channels", c.feature_channels},
          {"low_channels", c.low_channels},
          {"width", c.width},
          {"head_stride", c.head_stride}};
}
void from_j(const json& j, HeadConfig& c) {
  Reader r(j, "heads");
  r.get("feature_channels", c.feature_channels);
  r.get("low_channels", c.low_channels);
  r.get("width", c.width);
  r.get("head_stride", c.head_stride);
  r.finish();
}

json to_j(const ProposalConfig& c) {
  return {{"sigma", c.sigma},
          {"nms_window", c.nms_window},
          {"heatmap_threshold", c.heatmap_threshold},
          {"top_k", c.top_k},
          {"foreground_threshold", c.foreground_threshold},
          {"min_area", c.min_area}};
}
void from_j(const json& j, ProposalConfig& c) {
  Reader r(j, "proposals");
  r.get("sigma", c.sigma);
  r.get("nms_window", c.nms_window);
  r.get("heatmap_threshold", c.heatmap_threshold);
  r.get("top_k", c.top_k);
  r.get("foreground_threshold", c.foreground_threshold);
  r.get("min_area", c.min_area);
  r.finish();
}

json to_j(const AssociationConfig& c) {
  return {{"th_reid", c.th_reid},
          {"iou_gate", c.iou_gate},
          {"new_target_iou", c.new_target_iou},
          {"mask_threshold", c.mask_threshold},
          {"retire_after", c.retire_after}};
}
void from_j(const json& j, AssociationConfig& c) {
  Reader r(j, "association");
  r.get("th_reid", c.th_reid);
  r.get("iou_gate", c.iou_gate);
  r.get("new_target_iou", c.new_target_iou);
  r.get("mask_threshold", c.mask_threshold);
  r.get("retire_after", c.retire_after);
  r.finish();
}

json to_j(const MemoryConfig& c) {
  return {{"gamma", c.gamma}, {"capacity", c.capacity}, {"update_period", c.update_period}};
}
void from_j(const json& j, MemoryConfig& c) {
  Reader r(j, "memory");
  r.get("gamma", c.gamma);
  r.get("capacity", c.capacity);
  r.get("update_period", c.update_period);
  r.finish();
}

json to_j(const AppearanceConfig& c) {
  return {{"hidden", c.hidden},         {"stride", c.stride},
          {"lambda1", c.lambda1},       {"lambda2", c.lambda2},
          {"damping", c.damping},       {"iters_init", c.iters_init},
          {"iters_update", c.iters_update}, {"iters_cg", c.iters_cg},
          {"relu", c.relu},             {"w2_init_scale", c.w2_init_scale}};
}
void from_j(const json& j, AppearanceConfig& c) {
  Reader r(j, "appearance");
  r.get("hidden", c.hidden);
  r.get("stride", c.stride);
  r.get("lambda1", c.lambda1);
  r.get("lambda2", c.lambda2);
  r.get("damping", c.damping);
  r.get("iters_init", c.iters_init);
  r.get("iters_update", c.iters_update);
  r.get("iters_cg", c.iters_cg);
  r.get("relu", c.relu);
  r.get("w2_init_scale", c.w2_init_scale);
  r.finish();
}

json to_j(const HeadTrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"momentum", c.momentum},     {"weight_decay", c.weight_decay},
          {"epochs", c.epochs},               {"batch_size", c.batch_size}, {"poly_schedule", c.poly_schedule},
          {"seed", c.seed}};
}
void from_j(const json& j, HeadTrainConfig& c) {
  Reader r(j, "training");
  r.get("learning_rate", c.learning_rate);
  r.get("momentum", c.momentum);
  r.get("weight_decay", c.weight_decay);
  r.get("epochs", c.epochs);
  r.get("batch_size", c.batch_size);
  r.get("poly_schedule", c.poly_schedule);
  r.get("seed", c.seed);
  r.finish();
}

template <typename T>
void read_section(Reader& r, const char* key, T& out) {
  if (const json* j = r.child(key)) from_j(*j, out);
}

bool unit_open(double v) { return v > 0.0 && v < 1.0; }
bool unit_closed(double v) { return v >= 0.0 && v <= 1.0; }

}  // namespace

void PipelineConfig::validate() const {
  require(features.stride >= 4 && features.stride % 4 == 0, "config: feature stride must be a positive multiple of 4");
  require(features.channels >= 1, "config: feature channels must be positive");
  require(heads.feature_channels == features.channels && heads.low_channels == features.channels,
          "config: head channels must equal the feature channels");
  require(heads.width >= 1 && heads.head_stride == 4, "config: heads need a positive width and head stride 4");
  require(proposals.sigma > 0.0, "config: sigma must be positive");
  require(proposals.nms_window % 2 == 1, "config: nms window must be odd");
  require(unit_closed(proposals.heatmap_threshold), "config: heatmap threshold must lie in [0, 1]");
  require(proposals.top_k >= 1, "config: top_k must be positive");
  require(unit_open(proposals.foreground_threshold), "config: foreground threshold must lie in (0, 1)");
  require(association.th_reid >= 0.0 && association.th_reid <= 2.0, "config: th_reid must lie in [0, 2]");
  require(unit_closed(association.iou_gate), "config: iou_gate must lie in [0, 1]");
  require(unit_closed(association.new_target_iou), "config: new_target_iou must lie in [0, 1]");
  require(unit_open(association.mask_threshold), "config: mask threshold must lie in (0, 1)");
  require(association.retire_after >= 1, "config: retire_after must be positive");
  require(unit_open(memory.gamma), "config: gamma must lie in (0, 1)");
  require(memory.capacity >= 2 && memory.update_period >= 1, "config: memory capacity >= 2 and period >= 1");
  require(appearance.hidden >= 1 && appearance.stride >= 1, "config: appearance sizes must be positive");
  require(appearance.lambda1 >= 0.0 && appearance.lambda2 >= 0.0 && appearance.damping >= 0.0,
          "config: regularization and damping must be nonnegative");
  require(appearance.iters_init >= 1 && appearance.iters_update >= 1, "config: GN iterations must be positive");
  require(training.learning_rate > 0.0 && training.momentum >= 0.0 && training.momentum < 1.0,
          "config: bad optimizer settings");
  require(training.batch_size >= 1, "config: batch size must be positive");
}

std::string config_to_json(const PipelineConfig& c) {
  json j = {{"features", to_j(c.features)},       {"heads", to_j(c.heads)},
            {"proposals", to_j(c.proposals)},     {"association", to_j(c.association)},
            {"memory", to_j(c.memory)},           {"appearance", to_j(c.appearance)},
            {"training", to_j(c.training)},       {"seed", c.seed}};
  return j.dump(2) + "\n";
}

PipelineConfig config_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("config: invalid JSON: ") + e.what());
  }
  PipelineConfig c;
  Reader r(j, "config");
  read_section(r, "features", c.features);
  read_section(r, "heads", c.heads);
  read_section(r, "proposals", c.proposals);
  read_section(r, "association", c.association);
  read_section(r, "memory", c.memory);
  read_section(r, "appearance", c.appearance);
  read_section(r, "training", c.training);
  r.get("seed", c.seed);
  r.finish();
  try {
    c.validate();
  } catch (const ContractError& e) {
    throw DataError(e.what());
  }
  return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("config: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str());
}

void save_config(const PipelineConfig& config, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("config: cannot write " + path.string());
  out << config_to_json(config);
}

}  // namespace vmos
