#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "property_suite.hpp"
#include "rotinv/cloud_io.hpp"
#include "rotinv/config.hpp"
#include "rotinv/errors.hpp"
#include "rotinv/dataset.hpp"
#include "rotinv/experiment.hpp"
#include "rotinv/export.hpp"
#include "rotinv/optim.hpp"

namespace fs = std::filesystem;
using namespace rotinv;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::string protocol = "zso3";
  std::vector<std::string> sets;
  bool desk = false;
};

void add_common(CLI::App* app, Common& c, bool with_protocol = true) {
  app->add_option("--config", c.config, "key = value configuration file");
  app->add_option("--seed", c.seed, "model and training seed");
  app->add_option("--out", c.out, "output directory");
  if (with_protocol)
    app->add_option("--protocol", c.protocol, "rotation protocol")
        ->check(CLI::IsMember({"zz", "zso3", "so3so3"}));
  app->add_option("--set", c.sets, "extra key=value overrides, applied after the file");
  app->add_flag("--desk", c.desk, "start from the reduced single-core profile");
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.desk ? desk_profile() : RunConfig{};
  if (!c.config.empty()) cfg = load_config(c.config, cfg);
  for (const auto& kv : c.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got " + kv);
    apply_config_key(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (c.seed) apply_config_key(cfg, "seed", std::to_string(*c.seed));
  cfg.model.validate();
  return cfg;
}

SyntheticDataset dataset_for(const RunConfig& cfg, const std::string& dir) {
  return dir.empty() ? generate_dataset(cfg.data) : load_dataset(dir);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

std::uint64_t rotation_seed(const SyntheticDataset& data) { return data.spec.seed ^ 0x726f74ull; }

net::Model load_model(const RunConfig& cfg, const std::string& checkpoint) {
  net::Model model(cfg.model);
  if (!checkpoint.empty()) load_checkpoint(checkpoint, model.params());
  return model;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rotation-invariant point cloud classification with learned local reference frames"};
  app.require_subcommand(1);

  Common gen_c, train_c, eval_c, ablate_c, perturb_c, export_c, check_c;
  std::string train_data, eval_data, eval_ckpt, ablate_data, perturb_data, perturb_ckpt, export_ckpt,
      export_cloud;
  std::vector<std::string> ablate_rows{"t4r1", "t4r2", "t4r3", "t4r4", "t4r5", "t4r6"};
  std::optional<std::uint64_t> export_rotate;
  bool check_quick = false;
  double export_segment = 0.05;

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic shape dataset");
  add_common(gen, gen_c, false);

  auto* train = app.add_subcommand("train", "train one configuration and evaluate it");
  add_common(train, train_c);
  train->add_option("--data", train_data, "dataset directory from gen-data (default: generate)");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint under a protocol");
  add_common(eval, eval_c);
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint from train")->required();
  eval->add_option("--data", eval_data, "dataset directory");

  auto* ablate = app.add_subcommand("ablate", "train a grid of named rows on shared data and seeds");
  add_common(ablate, ablate_c);
  ablate->add_option("--rows", ablate_rows, "preset rows")->delimiter(',');
  ablate->add_option("--data", ablate_data, "dataset directory");

  auto* perturb = app.add_subcommand("perturb", "noise and point-dropout sweep of a trained model");
  add_common(perturb, perturb_c);
  perturb->add_option("--checkpoint", perturb_ckpt, "checkpoint (default: train first)");
  perturb->add_option("--data", perturb_data, "dataset directory");

  auto* exportf = app.add_subcommand("export-frames", "write the frame field of one cloud as CSV and PLY");
  add_common(exportf, export_c, false);
  exportf->add_option("--checkpoint", export_ckpt, "checkpoint (default: fresh weights)");
  exportf->add_option("--cloud", export_cloud, "point cloud file (.xyz text or .lcpc; default: first test cloud)");
  exportf->add_option("--rotate", export_rotate, "rotate the cloud by a random rotation with this seed");
  exportf->add_option("--segment", export_segment, "drawn axis length");

  auto* check = app.add_subcommand("check", "run the property suite; nonzero exit on any failure");
  add_common(check, check_c, false);
  check->add_flag("--quick", check_quick, "skip the training criteria");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      RunConfig cfg = resolve(gen_c);
      if (gen_c.seed) cfg.data.seed = *gen_c.seed;
      const auto data = generate_dataset(cfg.data);
      save_dataset(gen_c.out, data);
      std::cout << "wrote " << data.train.size() << " train and " << data.test.size() << " test clouds to "
                << gen_c.out << "; descriptor 1-NN accuracy " << descriptor_baseline_accuracy(data) << "\n";
      return 0;
    }

    if (*train) {
      const RunConfig cfg = resolve(train_c);
      const auto data = dataset_for(cfg, train_data);
      fs::create_directories(train_c.out);
      std::ofstream diag(fs::path(train_c.out) / "diagnostics.jsonl");
      TrainedRun run = train_and_evaluate(cfg, Protocol::parse(train_c.protocol), data, &diag);
      save_checkpoint(fs::path(train_c.out) / "model.lckp", run.model.params());
      write_text(fs::path(train_c.out) / "config.txt", to_config_text(cfg));
      write_text(fs::path(train_c.out) / "report.json", run.report.to_json() + "\n");
      write_text(fs::path(train_c.out) / "summary.csv", summary_csv({run.report}));
      std::cout << summary_csv({run.report});
      if (run.report.diverged) {
        std::cerr << run.report.message << "\n";
        return 2;
      }
      return 0;
    }

    if (*eval) {
      const RunConfig cfg = resolve(eval_c);
      const auto data = dataset_for(cfg, eval_data);
      const net::Model model = load_model(cfg, eval_ckpt);
      const Protocol protocol = Protocol::parse(eval_c.protocol);
      std::ostringstream csv;
      csv << "protocol,repeat,accuracy,consistency_axis1,consistency_axis2\n";
      for (std::size_t r = 0; r < std::max<std::size_t>(1, cfg.train.repeats); ++r) {
        const auto ev = evaluate(model, data.test, protocol.test, rotation_seed(data), r);
        csv << protocol.name() << ',' << r << ',' << ev.accuracy << ',' << ev.consistency_axis1 << ','
            << ev.consistency_axis2 << '\n';
      }
      fs::create_directories(eval_c.out);
      write_text(fs::path(eval_c.out) / "eval.csv", csv.str());
      std::cout << csv.str();
      return 0;
    }

    if (*ablate) {
      const RunConfig cfg = resolve(ablate_c);
      const auto data = dataset_for(cfg, ablate_data);
      const auto reports = run_ablation_grid(ablate_rows, cfg, Protocol::parse(ablate_c.protocol), data);
      fs::create_directories(ablate_c.out);
      std::ofstream jsonl(fs::path(ablate_c.out) / "reports.jsonl");
      for (const auto& r : reports) jsonl << r.to_json() << '\n';
      write_text(fs::path(ablate_c.out) / "summary.csv", summary_csv(reports));
      std::cout << summary_csv(reports);
      return 0;
    }

    if (*perturb) {
      const RunConfig cfg = resolve(perturb_c);
      const auto data = dataset_for(cfg, perturb_data);
      const Protocol protocol = Protocol::parse(perturb_c.protocol);
      std::optional<net::Model> model;
      if (perturb_ckpt.empty()) model.emplace(train_and_evaluate(cfg, protocol, data).model);
      else model.emplace(load_model(cfg, perturb_ckpt));
      const auto drops = scaled_drops({0, 100, 200, 300}, data.test.front().size());
      const auto rows = run_perturbation_sweep(*model, data.test, protocol.test, rotation_seed(data),
                                               cfg.train.repeats, {0.0, 0.01, 0.02, 0.03}, drops);
      std::ostringstream csv;
      csv << "sigma,dropped,accuracy\n";
      for (const auto& r : rows) csv << r.sigma << ',' << r.dropped << ',' << r.accuracy << '\n';
      fs::create_directories(perturb_c.out);
      write_text(fs::path(perturb_c.out) / "perturbation.csv", csv.str());
      std::cout << csv.str();
      return 0;
    }

    if (*exportf) {
      const RunConfig cfg = resolve(export_c);
      PointCloud cloud = export_cloud.empty() ? generate_dataset(cfg.data).test.front()
                                              : center_and_scale(io::read_cloud(export_cloud));
      if (export_rotate) {
        Rng rng(*export_rotate);
        cloud = apply_rotation(cloud, sample_rotation_so3(rng));
      }
      const net::Model model = load_model(cfg, export_ckpt);
      const auto files = export_frame_field(model, cloud, fs::path(export_c.out) / "frames", export_segment);
      std::cout << "wrote " << files.csv.string() << " and " << files.ply.string() << "\n";
      return 0;
    }

    if (*check) {
      checks::SuiteOptions opts;
      if (!check_c.config.empty() || !check_c.sets.empty()) {
        Common c = check_c;
        c.desk = true;
        c.seed.reset();
        opts.profile = resolve(c);
      }
      if (check_c.seed) opts.seed = *check_c.seed;
      opts.include_training = !check_quick;
      opts.log = &std::cout;
      fs::create_directories(check_c.out);
      std::ofstream reports(fs::path(check_c.out) / "training_reports.jsonl");
      opts.reports = &reports;
      const auto results = checks::run_suite(opts);
      std::ostringstream summary;
      bool ok = true;
      for (const auto& r : results) {
        summary << checks::format_result(r) << '\n';
        ok = ok && r.passed;
      }
      write_text(fs::path(check_c.out) / "check.txt", summary.str());
      std::cout << (ok ? "all criteria passed\n" : "some criteria failed\n");
      return ok ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
