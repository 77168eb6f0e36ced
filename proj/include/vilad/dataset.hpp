#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vilad/annotate.hpp"
#include "vilad/binary_io.hpp"
#include "vilad/codec.hpp"
#include "vilad/distill.hpp"
#include "vilad/errors.hpp"
#include "vilad/grid_io.hpp"
#include "vilad/image.hpp"
#include "vilad/sim.hpp"

// Supervision dataset on disk:
//   <out>/index.json
//   <out>/frames/<id>.png        every frame used as a current or history image
//   <out>/maps/<id>.agrid        A_VLM rendered from the oracle's likelihoods
//   <out>/pretrained/<id>.agrid  A_pretrained for the same frame
namespace vilad::dataset {

using json = nlohmann::json;

inline constexpr int kIndexVersion = 1;

/// One candidate frame from a source, with whatever the source knows about it.
struct SourceFrame {
  ImageFrame frame;
  std::optional<annotate::SceneTruth> truth;  // absent for plain images
  AttentionMap a_pre;
  std::size_t episode = 0;  // history windows never cross episodes
  std::string scene_context;  // overrides the source-wide context when set
};

struct Source {
  std::string description;
  std::string scene_context;
  std::vector<SourceFrame> frames;
};

struct ReplayConfig {
  sim::EpisodeConfig episode;
  sim::PolicySpec policy = sim::PolicySpec::parse("synth:ground_truth_social");
  int stride = 2;            // keep every k-th control tick
  std::size_t max_trials = 64;
  std::uint64_t seed = 0;
};

/// Drives the scenario with a planner policy and keeps rendered frames, robot-frame ground
/// truth and a pretrained-like attention map, until `records` windows of `history` + 1
/// frames are available. Trials are re-jittered with consecutive seeds.
inline Source replay_source(const sim::ScenarioSpec& scenario, std::size_t records, int history, const ReplayConfig& cfg) {
  if (cfg.stride < 1) throw ConfigError("replay stride must be at least 1");
  Source src;
  src.description = "scenario:" + scenario.id;
  src.scene_context = "scenario " + scenario.id + (scenario.darkened ? ", dim indoor lighting" : "");
  std::size_t windows = 0;
  for (std::size_t trial = 0; trial < cfg.max_trials && windows < records; ++trial) {
    sim::EpisodeConfig ec = cfg.episode;
    ec.trial_seed = cfg.seed + trial;
    const sim::World world(sim::instantiate(scenario, ec.trial_seed), ec.sim);
    sim::PlannerController controller(cfg.policy, ec);
    std::size_t kept = 0;
    std::size_t tick = 0;
    sim::run_episode(world, controller, ec, cfg.policy.name(), [&](const sim::WorldState& s, const sim::Decision&) {
      if (tick++ % static_cast<std::size_t>(cfg.stride) != 0 || windows >= records) return;
      SourceFrame f{sim::render_frame(world, s, ec.camera), world.truth(s, ec.camera),
                    sim::synth_attention(world, s, ec.camera, sim::AttentionMode::PretrainedLike, ec.synth), trial};
      f.frame.sequence_id = src.frames.size();
      src.frames.push_back(std::move(f));
      if (++kept > static_cast<std::size_t>(history)) ++windows;
    });
  }
  if (windows < records)
    throw SourceError("scenario " + scenario.id + " yielded " + std::to_string(windows) + " frame windows, " +
                      std::to_string(records) + " requested");
  return src;
}

/// Concatenation; episodes are renumbered so no window spans two parts.
inline Source merge_sources(const std::vector<Source>& parts) {
  Source out;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    out.description += (out.description.empty() ? "" : "+") + p.description;
    std::size_t last = 0;
    for (auto f : p.frames) {
      last = std::max(last, f.episode);
      f.episode += offset;
      if (f.scene_context.empty()) f.scene_context = p.scene_context;
      out.frames.push_back(std::move(f));
    }
    offset += last + 1;
  }
  return out;
}

/// PNG files in name order, one continuous sequence. Each `<stem>.png` needs a matching
/// `<stem>.agrid` holding its pretrained attention map.
inline Source directory_source(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw SourceError("image directory not found: " + dir.string());
  std::vector<std::filesystem::path> pngs;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") pngs.push_back(e.path());
  std::sort(pngs.begin(), pngs.end());
  Source src;
  src.description = "directory:" + dir.filename().string();
  for (const auto& p : pngs) {
    auto grid = p;
    grid.replace_extension(".agrid");
    if (!std::filesystem::exists(grid)) throw SourceError("no pretrained map " + grid.string() + " for " + p.string());
    SourceFrame f{{read_png(p), 0.0, src.frames.size()}, std::nullopt, load_grid(grid), 0};
    src.frames.push_back(std::move(f));
  }
  return src;
}

struct BuildConfig {
  int history = 2;  // n
  std::size_t count = 10;  // m
  std::size_t grid_width = 32;
  std::size_t grid_height = 24;
  std::uint64_t seed = 0;
  annotate::PromptTemplate prompt = annotate::PromptTemplate::standard();

  void validate() const {
    if (history < 0) throw ConfigError("history length must be non-negative");
    if (count < 1) throw ConfigError("dataset needs at least one record");
    if (grid_width < 3 || grid_height < 1) throw ConfigError("supervision grid must be at least 3 x 1");
  }
};

struct Record {
  std::string id;
  std::string frame;                 // paths relative to the dataset root
  std::vector<std::string> history;  // oldest first
  annotate::FrontierAnnotation annotation;
  std::string map;
  std::string pretrained;
  std::string sha256;
};

struct Dataset {
  std::filesystem::path root;
  std::string oracle;
  std::string source;
  int history = 0;
  std::size_t grid_width = 0;
  std::size_t grid_height = 0;
  std::uint64_t seed = 0;
  std::vector<Record> records;
};

inline json annotation_json(const annotate::FrontierAnnotation& a) {
  return {{"left", a.p_left}, {"center", a.p_center}, {"right", a.p_right}, {"rationale", a.rationale}};
}

inline std::string frame_id(std::size_t k) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06zu", k);
  return buf;
}

/// Hash over everything a record points at, in a fixed order.
inline std::string record_hash(const std::filesystem::path& root, const Record& r) {
  Sha256 h;
  for (const auto& rel : r.history) h.update(binary::read_file(root / rel));
  h.update(binary::read_file(root / r.frame));
  h.update(binary::read_file(root / r.map));
  h.update(binary::read_file(root / r.pretrained));
  h.update(annotation_json(r.annotation).dump());
  return h.hex();
}

inline json to_json(const Dataset& d) {
  json records = json::array();
  for (const auto& r : d.records)
    records.push_back({{"id", r.id},
                       {"frame", r.frame},
                       {"history", r.history},
                       {"annotation", annotation_json(r.annotation)},
                       {"map", r.map},
                       {"pretrained", r.pretrained},
                       {"sha256", r.sha256}});
  return {{"format", "vilad-dataset"},
          {"version", kIndexVersion},
          {"oracle", d.oracle},
          {"source", d.source},
          {"history", d.history},
          {"grid", {{"width", d.grid_width}, {"height", d.grid_height}}},
          {"seed", d.seed},
          {"count", d.records.size()},
          {"records", records}};
}

/// Annotates the first `count` frame windows of the source and writes the dataset.
inline Dataset build_dataset(const Source& src, annotate::AnnotationOracle& oracle, const BuildConfig& cfg,
                             const std::filesystem::path& out) {
  cfg.validate();
  const auto n = static_cast<std::size_t>(cfg.history);
  std::vector<std::size_t> current;  // frame indices that can end a window
  for (std::size_t k = n; k < src.frames.size() && current.size() < cfg.count; ++k)
    if (src.frames[k - n].episode == src.frames[k].episode) current.push_back(k);
  if (current.size() < cfg.count)
    throw SourceError(src.description + ": " + std::to_string(src.frames.size()) + " frames give " +
                      std::to_string(current.size()) + " windows of " + std::to_string(n + 1) + ", " +
                      std::to_string(cfg.count) + " requested");

  for (const char* sub : {"frames", "maps", "pretrained"}) std::filesystem::create_directories(out / sub);
  Dataset d{out, oracle.name(), src.description, cfg.history, cfg.grid_width, cfg.grid_height, cfg.seed, {}};
  std::vector<bool> written(src.frames.size(), false);
  auto frame_path = [&](std::size_t k) {
    const std::string rel = "frames/" + frame_id(k) + ".png";
    if (!written[k]) {
      write_png(src.frames[k].frame.image, out / rel);
      written[k] = true;
    }
    return rel;
  };
  for (std::size_t r = 0; r < current.size(); ++r) {
    const std::size_t k = current[r];
    const SourceFrame& f = src.frames[k];
    if (f.a_pre.width() != cfg.grid_width || f.a_pre.height() != cfg.grid_height)
      throw SourceError("pretrained map of frame " + frame_id(k) + " is " + std::to_string(f.a_pre.width()) + "x" +
                        std::to_string(f.a_pre.height()) + ", grid is " + std::to_string(cfg.grid_width) + "x" +
                        std::to_string(cfg.grid_height));
    Record rec;
    rec.id = frame_id(k);
    for (std::size_t h = k - n; h < k; ++h) rec.history.push_back(frame_path(h));
    rec.frame = frame_path(k);

    const auto marked = annotate::mark_frontiers(f.frame);
    const std::string& context = f.scene_context.empty() ? src.scene_context : f.scene_context;
    annotate::AnnotationRequest req{&marked.frame, &cfg.prompt, f.truth ? &*f.truth : nullptr, context, r};
    rec.annotation = oracle.annotate(req);
    rec.annotation.validate();

    rec.map = "maps/" + rec.id + ".agrid";
    save_grid(annotate::likelihood_to_map(rec.annotation, cfg.grid_width, cfg.grid_height), out / rec.map);
    rec.pretrained = "pretrained/" + rec.id + ".agrid";
    save_grid(f.a_pre.with_role(MapRole::Pretrained), out / rec.pretrained);
    rec.sha256 = record_hash(out, rec);
    d.records.push_back(std::move(rec));
  }
  binary::write_text(out / "index.json", to_json(d).dump(2) + "\n");
  return d;
}

inline Dataset load_dataset(const std::filesystem::path& root) {
  const auto index = root / "index.json";
  if (!std::filesystem::exists(index)) throw SourceError("no dataset index at " + index.string());
  Dataset d;
  d.root = root;
  try {
    const json j = json::parse(binary::read_text(index));
    if (j.at("format") != "vilad-dataset") throw ValidationError("not a dataset index: " + index.string());
    if (j.at("version").get<int>() != kIndexVersion) throw ValidationError("unsupported dataset index version");
    d.oracle = j.at("oracle").get<std::string>();
    d.source = j.value("source", std::string{});
    d.history = j.at("history").get<int>();
    d.grid_width = j.at("grid").at("width").get<std::size_t>();
    d.grid_height = j.at("grid").at("height").get<std::size_t>();
    d.seed = j.value("seed", std::uint64_t{0});
    for (const auto& r : j.at("records")) {
      Record rec;
      rec.id = r.at("id").get<std::string>();
      rec.frame = r.at("frame").get<std::string>();
      rec.history = r.at("history").get<std::vector<std::string>>();
      const auto& a = r.at("annotation");
      rec.annotation = {a.at("left").get<double>(), a.at("center").get<double>(), a.at("right").get<double>(),
                        a.value("rationale", std::string{})};
      rec.map = r.at("map").get<std::string>();
      rec.pretrained = r.at("pretrained").get<std::string>();
      rec.sha256 = r.at("sha256").get<std::string>();
      d.records.push_back(std::move(rec));
    }
  } catch (const json::exception& e) {
    throw ValidationError(index.string() + ": " + e.what());
  }
  return d;
}

/// Structural checks plus a full re-hash of every record.
inline void validate(const Dataset& d) {
  if (d.records.empty()) throw ValidationError("dataset has no records");
  for (const auto& r : d.records) {
    if (r.history.size() != static_cast<std::size_t>(d.history))
      throw ValidationError("record " + r.id + " has " + std::to_string(r.history.size()) + " history frames, index says " +
                            std::to_string(d.history));
    r.annotation.validate();
    for (const auto* rel : {&r.map, &r.pretrained}) {
      std::optional<AttentionMap> m;
      try {
        m = load_grid(d.root / *rel);
      } catch (const std::exception& e) {
        throw ValidationError("record " + r.id + ": " + *rel + ": " + e.what());
      }
      if (m->width() != d.grid_width || m->height() != d.grid_height)
        throw ValidationError("record " + r.id + ": " + *rel + " does not match the dataset grid");
    }
    for (const auto& rel : r.history)
      if (!std::filesystem::exists(d.root / rel)) throw ValidationError("record " + r.id + ": missing " + rel);
    if (!std::filesystem::exists(d.root / r.frame)) throw ValidationError("record " + r.id + ": missing " + r.frame);
    if (record_hash(d.root, r) != r.sha256) throw ValidationError("record " + r.id + ": content hash mismatch");
  }
}

/// Training tuples for a model whose history and grid match the dataset.
inline std::vector<distill::TrainingSample> training_samples(const Dataset& d, const distill::ModelConfig& cfg) {
  if (cfg.history != d.history)
    throw ConfigError("model history " + std::to_string(cfg.history) + " does not match dataset history " +
                      std::to_string(d.history));
  if (static_cast<std::size_t>(cfg.grid_width) != d.grid_width || static_cast<std::size_t>(cfg.grid_height) != d.grid_height)
    throw ConfigError("model grid does not match the dataset grid");
  std::vector<distill::TrainingSample> out;
  out.reserve(d.records.size());
  for (const auto& r : d.records) {
    std::vector<ImageFrame> frames;
    for (const auto& rel : r.history) frames.push_back({read_png(d.root / rel), 0.0, 0});
    frames.push_back({read_png(d.root / r.frame), 0.0, 0});
    out.push_back({r.id, distill::prepare_input(distill::ImageSequence::from_frames(frames, cfg), cfg),
                   load_grid(d.root / r.pretrained), load_grid(d.root / r.map)});
  }
  return out;
}

}  // namespace vilad::dataset
