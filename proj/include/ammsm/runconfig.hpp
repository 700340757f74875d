#pragma once

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "ammsm/harness.hpp"

// One flat JSON run-config with full defaulting, overridable by --set
// key=value flags (dotted paths). No environment-variable configuration:
// a run is fully captured by one file plus its overrides.

namespace ammsm {

struct RunConfig {
  std::string dataset_dir;
  std::string output_dir = "out";
  std::uint64_t seed = 42;
  std::string precision = "f32";  // f32 | f64
  Index workers = 1;

  struct Model {
    std::string preset = "desk";  // desk | paper
    std::vector<Index> layers;    // optional explicit override of the preset
    std::vector<Index> channels;
    Index d_state = 16;
    Index heads = 2;
    Index magnifier_base = 16;
    Index spatial_base = 16;
    Index n_classes = 3;
    bool amm_enabled = true;
    bool sa_enabled = true;
    double alpha_min = 1.0;
    double alpha_max = 4.0;
  } model;

  TrainSchedule train;

  struct Search {
    GaParams ga;
    double val_fraction = 0.2;
    Index val_cap = 32;
  } search;

  SyntheticSpec synth;

  struct Bench {
    Index resolution = 256;
    Index batches = 20;
    Index warmup = 5;
    std::vector<double> sparsity_levels{0.5};
  } bench;

  ModelConfig model_config() const {
    ModelConfig mc;
    mc.stages = model.preset == "paper" ? StageConfig::paper() : StageConfig::desk();
    if (!model.layers.empty()) mc.stages.layers = model.layers;
    if (!model.channels.empty()) mc.stages.channels = model.channels;
    mc.stages.d_state = model.d_state;
    mc.stages.heads = model.heads;
    mc.n_classes = model.n_classes;
    mc.magnifier_base = model.magnifier_base;
    mc.spatial_base = model.spatial_base;
    mc.amm_enabled = model.amm_enabled;
    mc.sa_enabled = model.sa_enabled;
    mc.alpha_min = model.alpha_min;
    mc.alpha_max = model.alpha_max;
    return mc;
  }

  PipelineOptions pipeline_options() const {
    PipelineOptions po;
    po.model = model_config();
    po.sched = train;
    po.ga = search.ga;
    po.val_fraction = search.val_fraction;
    po.val_cap = search.val_cap;
    return po;
  }

  void validate() const {
    require_config(precision == "f32" || precision == "f64", "config: precision must be f32 or f64");
    require_config(workers >= 1, "config: workers must be >= 1");
    model_config().validate();
    train.validate();
    search.ga.validate();
    require_config(search.val_fraction > 0 && search.val_fraction < 1, "config: val_fraction outside (0,1)");
    synth.validate();
    require_config(bench.resolution % 16 == 0, "config: bench.resolution must be a multiple of 16");
  }
};

namespace detail {

template <typename T>
void get_to_if(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

}  // namespace detail

inline RunConfig runconfig_from_json(const nlohmann::json& j) {
  RunConfig c;
  try {
    detail::get_to_if(j, "dataset_dir", c.dataset_dir);
    detail::get_to_if(j, "output_dir", c.output_dir);
    detail::get_to_if(j, "seed", c.seed);
    detail::get_to_if(j, "precision", c.precision);
    detail::get_to_if(j, "workers", c.workers);
    if (j.contains("model")) {
      const auto& m = j.at("model");
      detail::get_to_if(m, "preset", c.model.preset);
      detail::get_to_if(m, "layers", c.model.layers);
      detail::get_to_if(m, "channels", c.model.channels);
      detail::get_to_if(m, "d_state", c.model.d_state);
      detail::get_to_if(m, "heads", c.model.heads);
      detail::get_to_if(m, "magnifier_base", c.model.magnifier_base);
      detail::get_to_if(m, "spatial_base", c.model.spatial_base);
      detail::get_to_if(m, "n_classes", c.model.n_classes);
      detail::get_to_if(m, "amm_enabled", c.model.amm_enabled);
      detail::get_to_if(m, "sa_enabled", c.model.sa_enabled);
      detail::get_to_if(m, "alpha_min", c.model.alpha_min);
      detail::get_to_if(m, "alpha_max", c.model.alpha_max);
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      detail::get_to_if(t, "adaptive_epochs", c.train.adaptive_epochs);
      detail::get_to_if(t, "finetune_epochs", c.train.finetune_epochs);
      detail::get_to_if(t, "lr", c.train.lr);
      detail::get_to_if(t, "weight_decay", c.train.weight_decay);
      detail::get_to_if(t, "batch_size", c.train.batch_size);
      detail::get_to_if(t, "cosine", c.train.cosine);
    }
    if (j.contains("search")) {
      const auto& s = j.at("search");
      detail::get_to_if(s, "population", c.search.ga.population);
      detail::get_to_if(s, "generations", c.search.ga.generations);
      detail::get_to_if(s, "elite", c.search.ga.elite);
      detail::get_to_if(s, "tournament", c.search.ga.tournament);
      detail::get_to_if(s, "mutation_rate", c.search.ga.mutation_rate);
      detail::get_to_if(s, "val_fraction", c.search.val_fraction);
      detail::get_to_if(s, "val_cap", c.search.val_cap);
    }
    if (j.contains("synth")) {
      const auto& s = j.at("synth");
      detail::get_to_if(s, "n_subjects", c.synth.n_subjects);
      detail::get_to_if(s, "n_classes", c.synth.n_classes);
      detail::get_to_if(s, "samples_per_subject_per_class", c.synth.samples_per_subject_per_class);
      detail::get_to_if(s, "resolution", c.synth.resolution);
      detail::get_to_if(s, "motion_amplitude", c.synth.motion_amplitude);
      detail::get_to_if(s, "distractor_amplitude", c.synth.distractor_amplitude);
      detail::get_to_if(s, "noise_std", c.synth.noise_std);
      detail::get_to_if(s, "seed", c.synth.seed);
    }
    if (j.contains("bench")) {
      const auto& b = j.at("bench");
      detail::get_to_if(b, "resolution", c.bench.resolution);
      detail::get_to_if(b, "batches", c.bench.batches);
      detail::get_to_if(b, "warmup", c.bench.warmup);
      detail::get_to_if(b, "sparsity_levels", c.bench.sparsity_levels);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

inline nlohmann::json runconfig_to_json(const RunConfig& c) {
  nlohmann::json j;
  j["dataset_dir"] = c.dataset_dir;
  j["output_dir"] = c.output_dir;
  j["seed"] = c.seed;
  j["precision"] = c.precision;
  j["workers"] = c.workers;
  j["model"] = {{"preset", c.model.preset},
                {"layers", c.model.layers},
                {"channels", c.model.channels},
                {"d_state", c.model.d_state},
                {"heads", c.model.heads},
                {"magnifier_base", c.model.magnifier_base},
                {"spatial_base", c.model.spatial_base},
                {"n_classes", c.model.n_classes},
                {"amm_enabled", c.model.amm_enabled},
                {"sa_enabled", c.model.sa_enabled},
                {"alpha_min", c.model.alpha_min},
                {"alpha_max", c.model.alpha_max}};
  j["train"] = {{"adaptive_epochs", c.train.adaptive_epochs}, {"finetune_epochs", c.train.finetune_epochs},
                {"lr", c.train.lr},                           {"weight_decay", c.train.weight_decay},
                {"batch_size", c.train.batch_size},           {"cosine", c.train.cosine}};
  j["search"] = {{"population", c.search.ga.population},   {"generations", c.search.ga.generations},
                 {"elite", c.search.ga.elite},             {"tournament", c.search.ga.tournament},
                 {"mutation_rate", c.search.ga.mutation_rate}, {"val_fraction", c.search.val_fraction},
                 {"val_cap", c.search.val_cap}};
  j["synth"] = {{"n_subjects", c.synth.n_subjects},
                {"n_classes", c.synth.n_classes},
                {"samples_per_subject_per_class", c.synth.samples_per_subject_per_class},
                {"resolution", c.synth.resolution},
                {"motion_amplitude", c.synth.motion_amplitude},
                {"distractor_amplitude", c.synth.distractor_amplitude},
                {"noise_std", c.synth.noise_std},
                {"seed", c.synth.seed}};
  j["bench"] = {{"resolution", c.bench.resolution},
                {"batches", c.bench.batches},
                {"warmup", c.bench.warmup},
                {"sparsity_levels", c.bench.sparsity_levels}};
  return j;
}

// Applies --set key=value overrides (dotted JSON paths) onto a parsed config
// document. Values parse as JSON when possible, else as strings.
inline void apply_override(nlohmann::json& doc, const std::string& kv) {
  const auto eq = kv.find('=');
  require_config(eq != std::string::npos && eq > 0, "--set expects key=value, got '" + kv + "'");
  const std::string path = kv.substr(0, eq);
  const std::string raw = kv.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::exception&) {
    value = raw;
  }
  nlohmann::json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    require_config(!key.empty(), "--set: empty path segment in '" + path + "'");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      break;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

inline RunConfig load_runconfig(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path.string());
  nlohmann::json doc;
  try {
    is >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  for (const auto& kv : overrides) apply_override(doc, kv);
  return runconfig_from_json(doc);
}

}  // namespace ammsm
