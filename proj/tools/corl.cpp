#include <cstdlib>
#include <fstream>
#include <iostream>
#include <numeric>

#include "CLI11.hpp"
#include "corl/config.hpp"
#include "corl/io.hpp"
#include "corl/visualize.hpp"
#include "json.hpp"

using namespace corl;
using json = nlohmann::ordered_json;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 2;
constexpr int kAbort = 3;
constexpr int kFormat = 4;

void write_text(const std::filesystem::path& path, const std::string& text) {
  io::write_file(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

LabeledDataset open_dataset(const std::string& path) {
  if (path.empty()) throw ConfigError("dataset", "no dataset path given");
  if (!std::filesystem::exists(path)) throw ConfigError("dataset", "no such file " + path);
  return load_dataset(path);
}

json metrics_line(const EpochMetrics& m) {
  json j{{"epoch", m.epoch},         {"L_class", m.class_loss}, {"L_cluster", m.cluster_loss},
         {"L_sparse", m.sparse_loss}, {"L_total", m.total_loss}, {"train_acc", m.train_acc},
         {"lr", m.lr},               {"steps", m.steps}};
  if (m.val_acc) j["val_acc"] = *m.val_acc;
  return j;
}

struct TrainArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

int cmd_train(const TrainArgs& a) {
  RunConfig cfg = load_config(a.config);
  if (a.seed) cfg.train.seed = *a.seed;
  if (!a.out.empty()) cfg.out = a.out;
  if (cfg.out.empty()) throw ConfigError("out", "no output directory given");
  cfg.validate();
  const LabeledDataset data = open_dataset(cfg.dataset);
  const std::filesystem::path out = cfg.out;
  std::filesystem::create_directories(out);
  write_text(out / "config.txt", format_config(cfg));
  std::ofstream log(out / "metrics.jsonl", std::ios::trunc);
  const TrainResult r = train(data, cfg.model, cfg.train, [&](const EpochMetrics& m) {
    const std::string line = metrics_line(m).dump();
    log << line << "\n" << std::flush;
    std::cerr << line << "\n";
  });
  save_checkpoint(out / "final.ckpt", r.final_checkpoint);
  save_checkpoint(out / "best.ckpt", r.best_checkpoint);
  std::cout << "wrote " << (out / "final.ckpt").string() << " and " << (out / "best.ckpt").string() << "\n";
  return kOk;
}

struct EvalArgs {
  std::string ckpt, data, split = "test", report;
  EvalOptions options;
};

std::string format_accuracy(const EvalResult& r) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f ± %.2f", 100.0 * r.mean_accuracy, 100.0 * r.ci95);
  return buf;
}

int cmd_eval(const EvalArgs& a) {
  const Checkpoint ckpt = load_checkpoint(a.ckpt);
  const LabeledDataset data = open_dataset(a.data);
  const Split split = parse_split(a.split);
  const EvalResult r = evaluate(ckpt, data, split, a.options);
  std::cout << "ACC " << format_accuracy(r) << "\n";
  const json report{{"checkpoint", a.ckpt},
                    {"dataset", a.data},
                    {"split", a.split},
                    {"way", a.options.way},
                    {"shot", a.options.shot},
                    {"queries", a.options.queries},
                    {"tasks", a.options.tasks},
                    {"seed", a.options.seed},
                    {"mean_accuracy", r.mean_accuracy},
                    {"ci95", r.ci95},
                    {"task_count", r.task_count},
                    {"task_accuracies", r.task_accuracies}};
  const std::string path = a.report.empty() ? a.ckpt + ".eval.json" : a.report;
  write_text(path, report.dump(2) + "\n");
  return kOk;
}

struct VisualizeArgs {
  std::string ckpt, data, out;
  std::vector<Index> components;
  Index topk = 9;
  double threshold_frac = 0.5;
};

int cmd_visualize(const VisualizeArgs& a) {
  const Checkpoint ckpt = load_checkpoint(a.ckpt);
  const LabeledDataset data = open_dataset(a.data);
  std::vector<Index> comps = a.components;
  if (comps.empty()) {
    comps.resize(static_cast<std::size_t>(ckpt.model.dict_size));
    std::iota(comps.begin(), comps.end(), Index{0});
  }
  const std::vector<Mosaic> mosaics = build_mosaics(ckpt, data, comps, a.topk, a.threshold_frac);
  for (const Mosaic& m : mosaics) {
    if (static_cast<Index>(m.patches.size()) < a.topk) {
      std::cerr << "warning: component " << m.component << " has only " << m.patches.size()
                << " patches at or above the threshold\n";
    }
  }
  write_mosaics(a.out, data, mosaics, a.topk);
  std::cout << "wrote " << mosaics.size() << " mosaics to " << a.out << "\n";
  return kOk;
}

struct SynthArgs {
  std::string spec, out;
  std::optional<std::uint64_t> seed;
};

int cmd_synth(const SynthArgs& a) {
  SynthSpec spec = a.spec.empty() ? SynthSpec{} : load_synth_spec(a.spec);
  if (a.seed) spec.seed = *a.seed;
  const SynthDataset d = generate_synthetic(spec);
  save_dataset(a.out, d.data);
  // glyph boxes per image, for checking visualizations against ground truth
  json boxes = json::array();
  for (const auto& per_image : d.boxes) {
    json img = json::array();
    for (const GlyphBox& b : per_image) img.push_back({{"part", b.part}, {"row", b.row}, {"col", b.col}, {"size", b.size}});
    boxes.push_back(std::move(img));
  }
  write_text(a.out + ".boxes.json", json{{"spec", format_synth_spec(spec)}, {"boxes", boxes}}.dump() + "\n");
  std::cout << "wrote " << d.data.size() << " images to " << a.out << "\n";
  return kOk;
}

// Maps library exceptions onto the documented exit codes.
int guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const TrainingAbort& e) {
    std::cerr << "training aborted: " << e.what() << "\n";
    return kAbort;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kFormat;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const DimensionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"corl: compositional few-shot training and evaluation"};
  app.require_subcommand(1);
  app.fallthrough();  // --threads may follow the subcommand
  Index threads = 1;
  app.add_option("--threads", threads, "evaluation threads")->envname("CORL_THREADS")->check(CLI::PositiveNumber);

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "meta-train a model from a config file");
  train_cmd->add_option("config", ta.config, "config file")->required();
  train_cmd->add_option("--seed", ta.seed, "overrides the config seed");
  train_cmd->add_option("--out", ta.out, "output directory (overrides the config)");

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "episodic evaluation of a checkpoint");
  eval_cmd->add_option("--ckpt", ea.ckpt)->required();
  eval_cmd->add_option("--data", ea.data)->required();
  eval_cmd->add_option("--split", ea.split)->check(CLI::IsMember({"train", "val", "test"}))->capture_default_str();
  eval_cmd->add_option("--n-way", ea.options.way)->capture_default_str();
  eval_cmd->add_option("--k-shot", ea.options.shot)->capture_default_str();
  eval_cmd->add_option("--queries", ea.options.queries)->capture_default_str();
  eval_cmd->add_option("--tasks", ea.options.tasks)->capture_default_str();
  eval_cmd->add_option("--seed", ea.options.seed)->capture_default_str();
  eval_cmd->add_option("--report", ea.report, "JSON report path (default: <ckpt>.eval.json)");

  VisualizeArgs va;
  auto* vis_cmd = app.add_subcommand("visualize", "top activating patches per dictionary component");
  vis_cmd->add_option("--ckpt", va.ckpt)->required();
  vis_cmd->add_option("--data", va.data)->required();
  vis_cmd->add_option("--components", va.components, "component ids (default: all)")->delimiter(',');
  vis_cmd->add_option("--topk", va.topk)->capture_default_str();
  vis_cmd->add_option("--threshold-frac", va.threshold_frac)->capture_default_str();
  vis_cmd->add_option("--out", va.out)->required();

  SynthArgs sa;
  auto* synth_cmd = app.add_subcommand("synth", "render a synthetic part-composition dataset");
  synth_cmd->add_option("--spec", sa.spec, "spec file (default spec if omitted)");
  synth_cmd->add_option("--seed", sa.seed, "overrides the spec seed");
  synth_cmd->add_option("--out", sa.out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }
  ea.options.threads = threads;

  if (*train_cmd) return guarded([&] { return cmd_train(ta); });
  if (*eval_cmd) return guarded([&] { return cmd_eval(ea); });
  if (*vis_cmd) return guarded([&] { return cmd_visualize(va); });
  return guarded([&] { return cmd_synth(sa); });
}
