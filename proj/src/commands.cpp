#include "ammsm/commands.hpp"

#include <fstream>
#include <iostream>

namespace ammsm {

namespace {

nlohmann::json confusion_json(const ConfusionMatrix& cm) {
  nlohmann::json rows = nlohmann::json::array();
  for (Index i = 0; i < cm.n_classes; ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Index j = 0; j < cm.n_classes; ++j) row.push_back(cm.at(i, j));
    rows.push_back(row);
  }
  return rows;
}

void write_confusion_csv(const std::filesystem::path& path, const ConfusionMatrix& cm) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot write " + path.string());
  os << "true\\pred";
  for (Index j = 0; j < cm.n_classes; ++j) os << "," << j;
  os << "\n";
  for (Index i = 0; i < cm.n_classes; ++i) {
    os << i;
    for (Index j = 0; j < cm.n_classes; ++j) os << "," << cm.at(i, j);
    os << "\n";
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot write " + path.string());
  os << text;
}

template <typename S>
void run_pipeline(const RunConfig& config) {
  const Dataset ds = read_dataset(config.dataset_dir);
  require_config(ds.n_classes == config.model.n_classes,
                 "run: dataset has " + std::to_string(ds.n_classes) + " classes but config expects " +
                     std::to_string(config.model.n_classes));
  const PipelineOptions opt = config.pipeline_options();
  std::vector<FoldArtifacts> artifacts;
  const TrainFn trainer = make_pipeline_trainer<S>(opt, &artifacts);
  const LosoResult res = run_loso(ds, trainer, config.seed, config.workers);

  const std::filesystem::path out_dir(config.output_dir);
  std::filesystem::create_directories(out_dir);
  nlohmann::json report;
  report["dataset"] = {{"dir", config.dataset_dir},
                       {"n_classes", ds.n_classes},
                       {"n_samples", ds.samples.size()},
                       {"n_subjects", count_subjects(ds)}};
  report["config"] = runconfig_to_json(config);
  report["per_fold"] = nlohmann::json::array();
  for (std::size_t f = 0; f < res.folds.size(); ++f) {
    const auto& fold = res.folds[f];
    nlohmann::json fj;
    fj["subject"] = fold.subject;
    fj["confusion"] = confusion_json(fold.cm);
    // per-fold metrics are diagnostics; the pooled matrix is the result
    fj["uf1"] = uf1(fold.cm, /*exclude_empty=*/true);
    fj["uar"] = uar(fold.cm, /*exclude_empty=*/true);
    fj["extra"] = fold.extra;
    report["per_fold"].push_back(fj);

    const auto fold_dir = out_dir / ("fold_" + std::to_string(fold.subject));
    std::filesystem::create_directories(fold_dir);
    const auto& art = artifacts[f];
    write_text(fold_dir / "best_config.json", art.best.to_json().dump(2) + "\n");
    std::string log_lines;
    for (const auto& e : art.search_log) log_lines += e.dump() + "\n";
    write_text(fold_dir / "search_log.jsonl", log_lines);
    write_checkpoint(fold_dir / "model.ammt", art.checkpoint);
  }
  report["pooled"] = {{"uf1", res.uf1_pooled}, {"uar", res.uar_pooled}, {"confusion", confusion_json(res.pooled)}};
  report["bench"] = nlohmann::json::array();  // populated by the bench command
  write_text(out_dir / "report.json", report.dump(2) + "\n");
  write_confusion_csv(out_dir / "confusion.csv", res.pooled);
  std::cout << "run: pooled UF1 " << res.uf1_pooled << ", UAR " << res.uar_pooled << " over " << res.folds.size()
            << " folds -> " << (out_dir / "report.json").string() << "\n";
}

}  // namespace

void cmd_synth(const RunConfig& config) {
  require_config(!config.dataset_dir.empty(), "synth: dataset_dir must be set");
  const auto samples = generate_dataset(config.synth);
  write_dataset(samples, config.dataset_dir, config.synth.n_classes);
  std::cout << "synth: wrote " << samples.size() << " samples (" << config.synth.n_subjects << " subjects x "
            << config.synth.n_classes << " classes x " << config.synth.samples_per_subject_per_class
            << ") to " << config.dataset_dir << "\n";
}

void cmd_run(const RunConfig& config) {
  require_config(!config.dataset_dir.empty(), "run: dataset_dir must be set");
  if (!std::filesystem::exists(std::filesystem::path(config.dataset_dir) / "manifest.json"))
    throw ConfigError("run: dataset not found at " + config.dataset_dir);
  if (config.precision == "f64")
    run_pipeline<double>(config);
  else
    run_pipeline<float>(config);
}

void cmd_bench(const RunConfig& config) {
  StageConfig sc = config.model_config().stages;
  std::vector<std::pair<std::string, std::vector<double>>> variants;
  variants.emplace_back("dense", std::vector<double>{});
  for (double s : config.bench.sparsity_levels) {
    std::ostringstream name;
    name << "s=" << s;
    variants.emplace_back(name.str(), std::vector<double>(static_cast<std::size_t>(sc.ratio_slots()), s));
  }
  const auto rows =
      bench_backbone(sc, config.bench.resolution, variants, config.bench.batches, config.bench.warmup, config.seed);

  const std::filesystem::path out_dir(config.output_dir);
  std::filesystem::create_directories(out_dir);
  nlohmann::json report;
  report["config"] = runconfig_to_json(config);
  report["rows"] = nlohmann::json::array();
  std::string csv = "name,flops_total,flops_ssd,wall_ms_median\n";
  for (const auto& r : rows) {
    report["rows"].push_back({{"name", r.name},
                              {"ratios", r.ratios},
                              {"flops_total", r.flops_total},
                              {"flops_ssd", r.flops_ssd},
                              {"wall_ms_median", r.wall_ms_median}});
    csv += r.name + "," + std::to_string(r.flops_total) + "," + std::to_string(r.flops_ssd) + "," +
           std::to_string(r.wall_ms_median) + "\n";
    std::cout << "bench: " << r.name << " flops " << r.flops_total / 1e6 << "M (ssd " << r.flops_ssd / 1e6
              << "M) median " << r.wall_ms_median << " ms\n";
  }
  write_text(out_dir / "bench.json", report.dump(2) + "\n");
  write_text(out_dir / "bench.csv", csv);
}

void cmd_eval(const RunConfig& config, const std::string& checkpoint_path) {
  require_config(!checkpoint_path.empty(), "eval: --checkpoint must be set");
  const Dataset ds = read_dataset(config.dataset_dir);
  const std::filesystem::path ckpt(checkpoint_path);
  const auto params = read_checkpoint<float>(ckpt / "model.ammt");
  std::ifstream bc(ckpt / "best_config.json");
  if (!bc) throw FormatError("eval: missing " + (ckpt / "best_config.json").string());
  nlohmann::json bj;
  try {
    bc >> bj;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("eval: " + std::string(e.what()));
  }
  const Candidate best = Candidate::from_json(bj);

  Rng rng(config.seed);
  auto model = AmmsmModel<float>::make(config.model_config(), rng);
  model.visit_params([&](const std::string& name, Tensor<float>& t) {
    auto it = params.find(name);
    if (it == params.end()) throw FormatError("eval: checkpoint missing parameter " + name);
    require(it->second.shape() == t.shape(), "eval: checkpoint shape mismatch for " + name);
    std::copy(it->second.data().begin(), it->second.data().end(), t.data().begin());
  });

  ConfusionMatrix cm(ds.n_classes);
  for (const auto& s : ds.samples) cm.add(s.label, model.predict(s.flow, s.onset, best.alpha, best.ratios));
  const std::filesystem::path out_dir(config.output_dir);
  std::filesystem::create_directories(out_dir);
  nlohmann::json report;
  report["checkpoint"] = checkpoint_path;
  report["uf1"] = uf1(cm, true);
  report["uar"] = uar(cm, true);
  report["confusion"] = confusion_json(cm);
  write_text(out_dir / "eval.json", report.dump(2) + "\n");
  std::cout << "eval: UF1 " << report["uf1"] << ", UAR " << report["uar"] << " over " << ds.samples.size()
            << " samples\n";
}

int run_command(const std::string& command, const std::string& config_path,
                const std::vector<std::string>& overrides, const std::string& checkpoint_path) {
  try {
    const RunConfig config = load_runconfig(config_path, overrides);
    if (command == "synth")
      cmd_synth(config);
    else if (command == "run")
      cmd_run(config);
    else if (command == "bench")
      cmd_bench(config);
    else if (command == "eval")
      cmd_eval(config, checkpoint_path);
    else
      throw ConfigError("unknown command: " + command);
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "error (config): " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "error (format): " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace ammsm
