#include "vmos/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "vmos/errors.hpp"

namespace vmos {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return in;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

// Next whitespace-delimited header token, skipping '#' comments.
std::string netpbm_token(std::istream& in, const fs::path& path) {
  std::string tok;
  int c = 0;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
      if (!tok.empty()) break;
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  if (tok.empty()) throw DataError("truncated header in " + path.string());
  return tok;
}

std::size_t netpbm_number(std::istream& in, const fs::path& path) {
  const std::string tok = netpbm_token(in, path);
  if (!std::all_of(tok.begin(), tok.end(), [](char ch) { return ch >= '0' && ch <= '9'; }) || tok.size() > 9)
    throw DataError("bad header field '" + tok + "' in " + path.string());
  return static_cast<std::size_t>(std::stoul(tok));
}

std::string frame_name(std::size_t t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%04zu.ppm", t);
  return buf;
}

std::string mask_name(std::size_t t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "mask_%04zu.pgm", t);
  return buf;
}

void put_u64_le(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64_le(const unsigned char* b) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

struct NamedArray {
  std::string name;
  std::vector<std::size_t> shape;
  std::span<double> values;
};

std::vector<NamedArray> model_arrays(ModelBundle& m) {
  std::vector<NamedArray> out;
  for (auto& b : parameter_blocks(m.heads)) out.push_back({b.name, b.shape, b.values});
  auto add_sgm = [&](const std::string& prefix, SgmParams& p) {
    out.push_back({prefix + ".fc1.weight", {p.hidden, 2 * p.channels}, std::span<double>(p.fc1_weight)});
    out.push_back({prefix + ".fc1.bias", {p.hidden}, std::span<double>(p.fc1_bias)});
    out.push_back({prefix + ".fc2.weight", {2 * p.channels, p.hidden}, std::span<double>(p.fc2_weight)});
    out.push_back({prefix + ".fc2.bias", {2 * p.channels}, std::span<double>(p.fc2_bias)});
  };
  add_sgm("sgm_salient", m.sgm_salient);
  add_sgm("sgm_instance", m.sgm_instance);
  return out;
}

constexpr const char* kModelFormat = "vmos-model";
constexpr int kModelVersion = 1;

}  // namespace

void write_ppm(const fs::path& path, const Frame& frame) {
  frame.validate();
  auto out = open_out(path);
  out << "P6\n" << frame.width << " " << frame.height << "\n255\n";
  std::vector<unsigned char> buf(frame.rgb.size());
  for (std::size_t i = 0; i < buf.size(); ++i)
    buf[i] = static_cast<unsigned char>(std::lround(std::clamp(frame.rgb[i], 0.0, 1.0) * 255.0));
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw DataError("write failed: " + path.string());
}

Frame read_ppm(const fs::path& path) {
  auto in = open_in(path);
  if (netpbm_token(in, path) != "P6") throw DataError("not a binary PPM: " + path.string());
  const std::size_t w = netpbm_number(in, path);
  const std::size_t h = netpbm_number(in, path);
  const std::size_t maxval = netpbm_number(in, path);
  if (maxval != 255 || w == 0 || h == 0) throw DataError("unsupported PPM layout in " + path.string());
  Frame f(h, w);
  std::vector<unsigned char> buf(h * w * 3);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (in.gcount() != static_cast<std::streamsize>(buf.size())) throw DataError("truncated PPM: " + path.string());
  for (std::size_t i = 0; i < buf.size(); ++i) f.rgb[i] = buf[i] / 255.0;
  return f;
}

void write_pgm(const fs::path& path, const InstanceMask& mask) {
  const std::uint32_t top = mask.labels.empty() ? 0 : *std::max_element(mask.labels.begin(), mask.labels.end());
  if (top > 65535) throw ContractError("write_pgm: id " + std::to_string(top) + " does not fit in 16 bits");
  const bool wide = top > 255;
  auto out = open_out(path);
  out << "P5\n" << mask.width << " " << mask.height << "\n" << (wide ? 65535 : 255) << "\n";
  std::vector<unsigned char> buf;
  buf.reserve(mask.labels.size() * (wide ? 2 : 1));
  for (std::uint32_t v : mask.labels) {
    if (wide) buf.push_back(static_cast<unsigned char>(v >> 8));
    buf.push_back(static_cast<unsigned char>(v & 0xff));
  }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw DataError("write failed: " + path.string());
}

InstanceMask read_pgm(const fs::path& path) {
  auto in = open_in(path);
  if (netpbm_token(in, path) != "P5") throw DataError("not a binary PGM: " + path.string());
  const std::size_t w = netpbm_number(in, path);
  const std::size_t h = netpbm_number(in, path);
  const std::size_t maxval = netpbm_number(in, path);
  if (maxval == 0 || maxval > 65535 || w == 0 || h == 0) throw DataError("unsupported PGM layout in " + path.string());
  const bool wide = maxval > 255;
  InstanceMask m(h, w);
  std::vector<unsigned char> buf(h * w * (wide ? 2 : 1));
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (in.gcount() != static_cast<std::streamsize>(buf.size())) throw DataError("truncated PGM: " + path.string());
  for (std::size_t i = 0; i < h * w; ++i)
    m.labels[i] = wide ? (static_cast<std::uint32_t>(buf[2 * i]) << 8) | buf[2 * i + 1] : buf[i];
  return m;
}

void write_manifest(const fs::path& dir, const Manifest& m) {
  json tracks = json::array();
  for (const auto& [id, track] : m.tracks) tracks.push_back({{"id", id}, {"track", track}});
  json j = {{"format", "vmos-video"}, {"version", 1},         {"height", m.height},
            {"width", m.width},       {"frames", m.frame_files}, {"masks", m.mask_files},
            {"tracks", tracks}};
  if (!m.track_scores.empty()) {
    json scores = json::array();
    for (const auto& frame : m.track_scores) {
      json f = json::object();
      for (const auto& [id, s] : frame) f[std::to_string(id)] = s;
      scores.push_back(f);
    }
    j["track_scores"] = scores;
  }
  write_text(dir / "manifest.json", j.dump(2) + "\n");
}

Manifest read_manifest(const fs::path& dir) {
  Manifest m;
  try {
    const json j = json::parse(read_text(dir / "manifest.json"));
    if (j.value("format", std::string()) != "vmos-video") throw DataError("manifest: unexpected format");
    m.height = j.at("height").get<std::size_t>();
    m.width = j.at("width").get<std::size_t>();
    m.frame_files = j.value("frames", std::vector<std::string>{});
    m.mask_files = j.value("masks", std::vector<std::string>{});
    for (const auto& t : j.value("tracks", json::array()))
      m.tracks[t.at("id").get<std::uint32_t>()] = t.at("track").get<std::uint32_t>();
    if (j.contains("track_scores")) {
      for (const auto& f : j["track_scores"]) {
        std::map<std::uint32_t, double> frame;
        for (auto it = f.begin(); it != f.end(); ++it)
          frame[static_cast<std::uint32_t>(std::stoul(it.key()))] = it.value().get<double>();
        m.track_scores.push_back(std::move(frame));
      }
    }
  } catch (const json::exception& e) {
    throw DataError("manifest in " + dir.string() + ": " + e.what());
  }
  return m;
}

void write_video(const fs::path& dir, const std::vector<Frame>& frames, const TrackSet& masks,
                 const std::vector<std::map<std::uint32_t, double>>& track_scores) {
  require(frames.empty() || masks.empty() || frames.size() == masks.size(), "write_video: frame/mask count mismatch");
  Manifest m;
  if (!frames.empty()) {
    m.height = frames[0].height;
    m.width = frames[0].width;
  } else if (!masks.empty()) {
    m.height = masks[0].height;
    m.width = masks[0].width;
  }
  for (std::size_t t = 0; t < frames.size(); ++t) {
    m.frame_files.push_back("frames/" + frame_name(t));
    write_ppm(dir / m.frame_files.back(), frames[t]);
  }
  for (std::size_t t = 0; t < masks.size(); ++t) {
    m.mask_files.push_back("masks/" + mask_name(t));
    write_pgm(dir / m.mask_files.back(), masks[t]);
    for (std::uint32_t id : masks[t].ids()) m.tracks[id] = id;
  }
  m.track_scores = track_scores;
  fs::create_directories(dir);
  write_manifest(dir, m);
}

VideoData read_video(const fs::path& dir, std::optional<std::size_t> max_frames) {
  const Manifest m = read_manifest(dir);
  VideoData v;
  const auto limit = [&](std::size_t n) { return max_frames ? std::min(n, *max_frames) : n; };
  for (std::size_t t = 0; t < limit(m.frame_files.size()); ++t) {
    Frame f = read_ppm(dir / m.frame_files[t]);
    if (f.height != m.height || f.width != m.width) throw DataError("frame size differs from manifest: " + m.frame_files[t]);
    v.frames.push_back(std::move(f));
  }
  for (std::size_t t = 0; t < limit(m.mask_files.size()); ++t) {
    InstanceMask mk = read_pgm(dir / m.mask_files[t]);
    if (mk.height != m.height || mk.width != m.width) throw DataError("mask size differs from manifest: " + m.mask_files[t]);
    v.masks.push_back(std::move(mk));
  }
  return v;
}

void save_model(const fs::path& path, const ModelBundle& model) {
  model.heads.validate();
  model.sgm_salient.validate();
  model.sgm_instance.validate();
  ModelBundle copy = model;
  const auto arrays = model_arrays(copy);
  json tensors = json::array();
  std::size_t offset = 0;
  for (const auto& a : arrays) {
    tensors.push_back({{"name", a.name}, {"shape", a.shape}, {"offset", offset}});
    offset += a.values.size();
  }
  const json header = {{"format", kModelFormat},
                       {"version", kModelVersion},
                       {"head_config",
                        {{"feature_channels", model.heads.config.feature_channels},
                         {"low_channels", model.heads.config.low_channels},
                         {"width", model.heads.config.width},
                         {"head_stride", model.heads.config.head_stride}}},
                       {"sgm_hidden", model.sgm_salient.hidden},
                       {"count", offset},
                       {"tensors", tensors}};
  const std::string text = header.dump();
  auto out = open_out(path);
  put_u64_le(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& a : arrays) {
    for (double v : a.values) put_u64_le(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw DataError("write failed: " + path.string());
}

ModelBundle load_model(const fs::path& path) {
  const std::string bytes = read_text(path);
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 8) throw DataError("model file too short: " + path.string());
  const std::uint64_t hlen = get_u64_le(raw);
  if (hlen > bytes.size() - 8) throw DataError("model header length exceeds file: " + path.string());
  ModelBundle m;
  try {
    const json header = json::parse(bytes.substr(8, hlen));
    if (header.at("format").get<std::string>() != kModelFormat || header.at("version").get<int>() != kModelVersion)
      throw DataError("unsupported model format in " + path.string());
    const auto& hc = header.at("head_config");
    HeadConfig cfg;
    cfg.feature_channels = hc.at("feature_channels").get<std::size_t>();
    cfg.low_channels = hc.at("low_channels").get<std::size_t>();
    cfg.width = hc.at("width").get<std::size_t>();
    cfg.head_stride = hc.at("head_stride").get<std::size_t>();
    const auto hidden = header.at("sgm_hidden").get<std::size_t>();
    m.heads = HeadParams::zeros(cfg);
    m.sgm_salient = SgmParams::zeros(cfg.feature_channels, hidden);
    m.sgm_instance = SgmParams::zeros(cfg.feature_channels, hidden);
    const std::size_t count = header.at("count").get<std::size_t>();
    if (bytes.size() - 8 - hlen != count * 8) throw DataError("model payload size mismatch in " + path.string());
    const unsigned char* payload = raw + 8 + hlen;
    auto arrays = model_arrays(m);
    const auto& tensors = header.at("tensors");
    if (tensors.size() != arrays.size()) throw DataError("model tensor count mismatch in " + path.string());
    for (std::size_t i = 0; i < arrays.size(); ++i) {
      const auto& t = tensors[i];
      if (t.at("name").get<std::string>() != arrays[i].name ||
          t.at("shape").get<std::vector<std::size_t>>() != arrays[i].shape)
        throw DataError("model tensor '" + t.at("name").get<std::string>() + "' does not match the expected layout");
      const auto off = t.at("offset").get<std::size_t>();
      if (off + arrays[i].values.size() > count) throw DataError("model tensor out of range in " + path.string());
      for (std::size_t k = 0; k < arrays[i].values.size(); ++k)
        arrays[i].values[k] = std::bit_cast<double>(get_u64_le(payload + 8 * (off + k)));
    }
  } catch (const json::exception& e) {
    throw DataError("model header in " + path.string() + ": " + e.what());
  }
  try {
    m.heads.validate();
  } catch (const ContractError& e) {
    throw DataError(std::string("model file holds invalid parameters: ") + e.what());
  }
  return m;
}

std::string report_to_json(const MetricReport& r) {
  auto stats = [](const SeriesStats& s) { return json{{"mean", s.mean}, {"recall", s.recall}, {"decay", s.decay}}; };
  json tracks = json::array();
  for (const auto& t : r.tracks) {
    tracks.push_back({{"gt_id", t.gt_id}, {"pred_id", t.pred_id}, {"J", stats(t.j_stats)}, {"F", stats(t.f_stats)}});
  }
  json j = {{"tracks", tracks}, {"J_mean", r.j_mean}, {"F_mean", r.f_mean}, {"JF_mean", r.jf_mean}};
  if (r.ap) j["AP"] = {{"AP", r.ap->ap}, {"AP50", r.ap->ap50}, {"AP75", r.ap->ap75}};
  return j.dump(2) + "\n";
}

std::string read_text(const fs::path& path) {
  auto in = open_in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  auto out = open_out(path);
  out << text;
  if (!out) throw DataError("write failed: " + path.string());
}

}  // namespace vmos
