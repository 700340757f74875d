#pragma once

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "ammsm/rng.hpp"
#include "ammsm/serialize.hpp"

// Synthetic micro-motion data: a procedural face-like onset image plus a
// ground-truth flow field built from class-specific Gaussian displacement
// bumps anchored at fixed landmark windows, a rigid global drift distractor
// that dominates the class motion, and white noise. Landmark anchors sit at
// known window coordinates so the "correct" sparse mask is known a priori.

namespace ammsm {

struct SyntheticSpec {
  Index n_subjects = 10;
  Index n_classes = 3;
  Index samples_per_subject_per_class = 6;
  Index resolution = 64;
  double motion_amplitude = 0.4;      // px
  double distractor_amplitude = 0.6;  // px
  double noise_std = 0.05;            // px
  std::uint64_t seed = 0;

  void validate() const {
    require_config(n_subjects > 0 && samples_per_subject_per_class > 0, "SyntheticSpec: counts must be positive");
    require_config(n_classes == 3 || n_classes == 5, "SyntheticSpec: class count must be 3 or 5");
    require_config(resolution > 0 && resolution % 16 == 0,
                   "SyntheticSpec: resolution must be a positive multiple of 16, got " + std::to_string(resolution));
    require_config(motion_amplitude >= 0 && distractor_amplitude >= 0 && noise_std >= 0,
                   "SyntheticSpec: amplitudes must be non-negative");
  }
};

struct Sample {
  Tensor<float> onset;  // [R,R,3] in [0,1]
  Tensor<float> flow;   // [R,R,2] px displacement
  Index label = 0;
  Index subject = 0;
  std::string id;
};

struct Dataset {
  Index n_classes = 3;
  std::vector<Sample> samples;
};

namespace synth_detail {

struct LandmarkMove {
  double cx, cy;  // center in normalized [0,1] image coords
  double dx, dy;  // unit displacement direction
};

// Landmarks sit at the centers of fixed 16 px windows (for resolution 64:
// brows in windows (1,1),(1,2), mouth corners in (2,1),(2,2) of the 4x4
// stage-1 window grid).
inline const LandmarkMove kBrowL{0.375, 0.375, 0.0, -1.0};
inline const LandmarkMove kBrowR{0.625, 0.375, 0.0, -1.0};
inline const LandmarkMove kMouthL{0.375, 0.625, 0.0, -1.0};
inline const LandmarkMove kMouthR{0.625, 0.625, 0.0, -1.0};

inline std::vector<LandmarkMove> class_template(Index n_classes, Index cls) {
  auto with_dir = [](LandmarkMove m, double dx, double dy) {
    const double n = std::sqrt(dx * dx + dy * dy);
    m.dx = dx / n;
    m.dy = dy / n;
    return m;
  };
  if (n_classes == 3) {
    switch (cls) {
      case 0:  // positive: mouth corners pulled up and outward
        return {with_dir(kMouthL, -0.3, -1.0), with_dir(kMouthR, 0.3, -1.0)};
      case 1:  // negative: brows drawn down and inward
        return {with_dir(kBrowL, 0.3, 1.0), with_dir(kBrowR, -0.3, 1.0)};
      default:  // surprise: brows up, mouth opens
        return {with_dir(kBrowL, 0.0, -1.0), with_dir(kBrowR, 0.0, -1.0), with_dir(kMouthL, 0.0, 1.0),
                with_dir(kMouthR, 0.0, 1.0)};
    }
  }
  switch (cls) {
    case 0:  // happiness
      return {with_dir(kMouthL, -0.3, -1.0), with_dir(kMouthR, 0.3, -1.0)};
    case 1:  // depression: mouth corners down
      return {with_dir(kMouthL, -0.3, 1.0), with_dir(kMouthR, 0.3, 1.0)};
    case 2:  // disgust: brows down-in
      return {with_dir(kBrowL, 0.3, 1.0), with_dir(kBrowR, -0.3, 1.0)};
    case 3:  // surprise
      return {with_dir(kBrowL, 0.0, -1.0), with_dir(kBrowR, 0.0, -1.0), with_dir(kMouthL, 0.0, 1.0),
              with_dir(kMouthR, 0.0, 1.0)};
    default:  // others: asymmetric brow raise + mouth twitch
      return {with_dir(kBrowL, 0.0, -1.0), with_dir(kMouthR, 0.4, -1.0)};
  }
}

struct SubjectGeom {
  double head_cx, head_cy, head_rx, head_ry;
  double jitter_x, jitter_y;  // landmark offset, px at resolution scale
  double tint;
};

inline SubjectGeom subject_geometry(const SyntheticSpec& spec, Index subject) {
  Rng rng = Rng(spec.seed).fork(1000 + static_cast<std::uint64_t>(subject));
  SubjectGeom g;
  g.head_cx = 0.50 + rng.uniform(-0.02, 0.02);
  g.head_cy = 0.52 + rng.uniform(-0.02, 0.02);
  g.head_rx = 0.32 + rng.uniform(-0.02, 0.02);
  g.head_ry = 0.40 + rng.uniform(-0.02, 0.02);
  g.jitter_x = rng.uniform(-2.0, 2.0);
  g.jitter_y = rng.uniform(-2.0, 2.0);
  g.tint = rng.uniform(-0.06, 0.06);
  return g;
}

}  // namespace synth_detail

// Stage-1 window coordinates (row, col) of the class's landmark anchors in
// the ceil(R/16) x ceil(R/16) grid; ground truth for mask-recovery checks.
inline std::vector<std::pair<Index, Index>> class_landmark_windows(const SyntheticSpec& spec, Index cls) {
  std::vector<std::pair<Index, Index>> out;
  const double r = static_cast<double>(spec.resolution);
  for (const auto& lm : synth_detail::class_template(spec.n_classes, cls)) {
    const Index wy = static_cast<Index>(lm.cy * r) / 16;
    const Index wx = static_cast<Index>(lm.cx * r) / 16;
    if (std::find(out.begin(), out.end(), std::make_pair(wy, wx)) == out.end()) out.emplace_back(wy, wx);
  }
  return out;
}

inline std::vector<Sample> generate_dataset(const SyntheticSpec& spec) {
  spec.validate();
  const Index r = spec.resolution;
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(spec.n_subjects * spec.n_classes * spec.samples_per_subject_per_class));
  Index sample_index = 0;
  for (Index subject = 0; subject < spec.n_subjects; ++subject) {
    const auto geom = synth_detail::subject_geometry(spec, subject);
    for (Index cls = 0; cls < spec.n_classes; ++cls) {
      const auto tmpl = synth_detail::class_template(spec.n_classes, cls);
      for (Index k = 0; k < spec.samples_per_subject_per_class; ++k, ++sample_index) {
        Rng rng = Rng(spec.seed).fork(static_cast<std::uint64_t>(sample_index));
        Sample s;
        s.label = cls;
        s.subject = subject;
        s.id = "s" + std::to_string(subject) + "_c" + std::to_string(cls) + "_k" + std::to_string(k);

        // onset: flat background, elliptical head, eye dots, mouth bar
        s.onset = Tensor<float>({r, r, 3});
        auto po = s.onset.data();
        const double skin[3] = {0.75 + geom.tint, 0.62 + geom.tint, 0.55 + geom.tint};
        for (Index y = 0; y < r; ++y) {
          for (Index x = 0; x < r; ++x) {
            const double nx = (static_cast<double>(x) / r - geom.head_cx) / geom.head_rx;
            const double ny = (static_cast<double>(y) / r - geom.head_cy) / geom.head_ry;
            const bool head = nx * nx + ny * ny <= 1.0;
            for (Index c = 0; c < 3; ++c)
              po[(y * r + x) * 3 + c] = static_cast<float>(head ? skin[c] : 0.15);
          }
        }
        auto draw_disk = [&](double cx, double cy, double rad, double shade) {
          for (Index y = 0; y < r; ++y)
            for (Index x = 0; x < r; ++x) {
              const double dx = static_cast<double>(x) - cx * r, dy = static_cast<double>(y) - cy * r;
              if (dx * dx + dy * dy <= rad * rad)
                for (Index c = 0; c < 3; ++c) po[(y * r + x) * 3 + c] = static_cast<float>(shade);
            }
        };
        draw_disk(0.375, 0.40, 0.035 * r, 0.12);  // eyes
        draw_disk(0.625, 0.40, 0.035 * r, 0.12);
        for (Index y = static_cast<Index>(0.63 * r); y < static_cast<Index>(0.67 * r); ++y)
          for (Index x = static_cast<Index>(0.40 * r); x < static_cast<Index>(0.60 * r); ++x)
            for (Index c = 0; c < 3; ++c) po[(y * r + x) * 3 + c] = 0.25f;

        // flow: class bumps + rigid drift + noise; per-sample intensity jitter
        // spans weak to pronounced expressions
        s.flow = Tensor<float>({r, r, 2}, 0.0f);
        auto pf = s.flow.data();
        const double amp = spec.motion_amplitude * rng.uniform(0.35, 1.35);
        const double sigma = 3.5;
        for (const auto& lm : tmpl) {
          const double cx = lm.cx * r + geom.jitter_x + rng.uniform(-1.0, 1.0);
          const double cy = lm.cy * r + geom.jitter_y + rng.uniform(-1.0, 1.0);
          for (Index y = 0; y < r; ++y)
            for (Index x = 0; x < r; ++x) {
              const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
              const double g = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
              if (g < 1e-4) continue;
              pf[(y * r + x) * 2 + 0] += static_cast<float>(amp * g * lm.dx);
              pf[(y * r + x) * 2 + 1] += static_cast<float>(amp * g * lm.dy);
            }
        }
        const double theta = rng.uniform(0.0, 6.283185307179586);
        const double drift = spec.distractor_amplitude * rng.uniform(0.85, 1.15);
        const float drift_x = static_cast<float>(drift * std::cos(theta));
        const float drift_y = static_cast<float>(drift * std::sin(theta));
        for (Index i = 0; i < r * r; ++i) {
          pf[i * 2 + 0] += drift_x + static_cast<float>(rng.normal(0.0, spec.noise_std));
          pf[i * 2 + 1] += drift_y + static_cast<float>(rng.normal(0.0, spec.noise_std));
        }
        out.push_back(std::move(s));
      }
    }
  }
  return out;
}

// Dataset directory layout: manifest.json plus one AMMT file per tensor.
inline void write_dataset(const std::vector<Sample>& samples, const std::filesystem::path& dir, Index n_classes) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["version"] = 1;
  manifest["n_classes"] = n_classes;
  manifest["samples"] = nlohmann::json::array();
  for (const auto& s : samples) {
    const std::string onset_name = s.id + "_onset.ammt";
    const std::string flow_name = s.id + "_flow.ammt";
    write_ammt(dir / onset_name, s.onset);
    write_ammt(dir / flow_name, s.flow);
    manifest["samples"].push_back({{"id", s.id},
                                   {"subject", s.subject},
                                   {"label", s.label},
                                   {"onset", onset_name},
                                   {"flow", flow_name}});
  }
  std::ofstream os(dir / "manifest.json");
  if (!os) throw FormatError("cannot write " + (dir / "manifest.json").string());
  os << manifest.dump(2) << "\n";
}

inline Dataset read_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream is(manifest_path);
  if (!is) throw FormatError("missing manifest: " + manifest_path.string());
  nlohmann::json manifest;
  try {
    is >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
  Dataset ds;
  try {
    ds.n_classes = manifest.at("n_classes").get<Index>();
    for (const auto& e : manifest.at("samples")) {
      Sample s;
      s.id = e.at("id").get<std::string>();
      s.subject = e.at("subject").get<Index>();
      s.label = e.at("label").get<Index>();
      const auto onset_path = dir / e.at("onset").get<std::string>();
      const auto flow_path = dir / e.at("flow").get<std::string>();
      if (!std::filesystem::exists(onset_path)) throw FormatError("manifest references missing file: " + onset_path.string());
      if (!std::filesystem::exists(flow_path)) throw FormatError("manifest references missing file: " + flow_path.string());
      s.onset = read_ammt<float>(onset_path);
      s.flow = read_ammt<float>(flow_path);
      require(s.label >= 0 && s.label < ds.n_classes,
              "dataset: label out of range in sample " + s.id);
      ds.samples.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
  return ds;
}

inline Index count_subjects(const Dataset& ds) {
  std::vector<Index> ids;
  for (const auto& s : ds.samples)
    if (std::find(ids.begin(), ids.end(), s.subject) == ids.end()) ids.push_back(s.subject);
  return static_cast<Index>(ids.size());
}

}  // namespace ammsm
