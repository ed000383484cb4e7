// Command-line front end: data generation, both training stages, evaluation,
// ablation presets, mesh export and the full-model gradient check.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "mvhand/harness.hpp"

using namespace mvhand;
using namespace mvhand::harness;
namespace fs = std::filesystem;

namespace {

struct ConfigArgs {
  std::string file;
  std::vector<std::string> sets;

  void attach(CLI::App* app) {
    app->add_option("--config", file, "key = value configuration file")->check(CLI::ExistingFile);
    app->add_option("--set", sets, "override one key (key=value), repeatable");
  }
  ExperimentConfig load() const {
    ExperimentConfig cfg = file.empty() ? ExperimentConfig{} : ExperimentConfig::load(file);
    for (const auto& s : sets) cfg.set(s);
    cfg.validate();
    return cfg;
  }
};

Dataset load_split(const std::string& path, const char* key) {
  if (path.empty()) throw ConfigError(std::string("no dataset given (set ") + key + ")");
  return read_dataset(path);
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  f << text;
  if (!f) throw std::runtime_error("cannot write " + path.string());
}

/// A trained model of either kind, restored from a checkpoint directory.
struct LoadedModel {
  CheckpointInfo info;
  std::unique_ptr<Svr<float>> svr;
  std::unique_ptr<Mvr<float>> mvr;

  explicit LoadedModel(const fs::path& dir, const ExperimentConfig* expected = nullptr) {
    const auto c = TensorContainer::read(dir);
    info = checkpoint_info(c);
    if (expected) require_structure(c, *expected);
    if (info.model == "svr") {
      svr = std::make_unique<Svr<float>>(info.config.model, hand_template());
      load_parameters(c, svr->parameters());
    } else {
      mvr = std::make_unique<Mvr<float>>(info.config.model, hand_template());
      load_parameters(c, mvr->parameters());
    }
  }

  metrics::MetricReport evaluate(const Dataset& data, const metrics::MetricOptions& o, int limit) {
    return svr ? evaluate_svr(*svr, data, o, limit) : evaluate_mvr(*mvr, data, o, limit);
  }

  /// World-frame prediction for the sample's fixed target view.
  Matrix<double> world_vertices(const MultiViewSample& s) {
    ad::Graph<float> g;
    const int t = s.target_view;
    const auto out = svr ? svr->forward(g, s.images[t], {false, {}}).output
                         : mvr->forward(g, s.images, t, {false, {}}).output;
    const Matrix<double> r = out.rotation.value().cast<double>();
    return out.vertices.value().cast<double>() * r.transpose();
  }
};

std::string pck_csv(const metrics::MetricReport& rep, const metrics::MetricOptions& o) {
  std::vector<double> j, v, pj, pv;
  for (const auto& s : rep.samples) {
    j.insert(j.end(), s.joint_errors.begin(), s.joint_errors.end());
    v.insert(v.end(), s.vertex_errors.begin(), s.vertex_errors.end());
    pj.insert(pj.end(), s.pa_joint_errors.begin(), s.pa_joint_errors.end());
    pv.insert(pv.end(), s.pa_vertex_errors.begin(), s.pa_vertex_errors.end());
  }
  const auto cj = metrics::pck_curve(j, o.auc_max, o.auc_steps), cv = metrics::pck_curve(v, o.auc_max, o.auc_steps),
             cpj = metrics::pck_curve(pj, o.auc_max, o.auc_steps),
             cpv = metrics::pck_curve(pv, o.auc_max, o.auc_steps);
  std::ostringstream os;
  os.precision(9);
  os << "tau,joint,vertex,pa_joint,pa_vertex\n";
  for (std::size_t i = 0; i < cj.size(); ++i)
    os << cj[i].first << "," << cj[i].second << "," << cv[i].second << "," << cpj[i].second << "," << cpv[i].second
       << "\n";
  return os.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-view to single-view hand mesh reconstruction"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "render a synthetic multi-view dataset split");
  ConfigArgs gen_cfg;
  gen_cfg.attach(gen);
  std::string gen_out, gen_split = "train";
  std::optional<int> gen_count, gen_views, gen_size;
  std::optional<std::uint64_t> gen_seed;
  std::optional<double> occ_min, occ_max, occ_other;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--split", gen_split, "split name stored in the manifest");
  gen->add_option("--count", gen_count, "number of samples (data.count)");
  gen->add_option("--views", gen_views, "views per sample (synth.views)");
  gen->add_option("--image-size", gen_size, "image side in pixels (synth.image_size)");
  gen->add_option("--seed", gen_seed, "base seed (data.seed)");
  gen->add_option("--occ-target-min", occ_min, "minimum target-view occlusion");
  gen->add_option("--occ-target-max", occ_max, "maximum target-view occlusion (0 disables)");
  gen->add_option("--occ-other-max", occ_other, "maximum occlusion of the other views");

  // train-mvr / train-svr
  auto* tm = app.add_subcommand("train-mvr", "stage 1: train the multi-view model");
  auto* ts = app.add_subcommand("train-svr", "stage 2: train the single-view model against a frozen teacher");
  ConfigArgs train_cfg;
  std::string resume, teacher_path, out_override;
  int stop_after = -1;
  bool quiet = false, init_from_mvr = false, cache_teacher = false, no_sima = false;
  for (auto* sub : {tm, ts}) {
    train_cfg.attach(sub);
    sub->add_option("--out", out_override, "output directory (train.out_dir)");
    sub->add_option("--resume", resume, "checkpoint directory of an interrupted run")->check(CLI::ExistingDirectory);
    sub->add_option("--stop-after", stop_after, "stop after this many iterations and save 'last'");
    sub->add_flag("--quiet", quiet, "no progress output");
  }
  ts->add_option("--teacher", teacher_path, "multi-view checkpoint directory")->check(CLI::ExistingDirectory);
  ts->add_flag("--init-from-mvr", init_from_mvr, "initialize the shared trunk from the teacher");
  ts->add_flag("--cache-teacher", cache_teacher, "precompute teacher features once per (sample, view)");
  ts->add_flag("--no-sima", no_sima, "train without the distillation terms");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  ConfigArgs eval_cfg;
  eval_cfg.attach(ev);
  std::string ckpt, data_path, report_path, per_sample_path, pck_path;
  int limit = 0;
  ev->add_option("--checkpoint", ckpt, "checkpoint directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--data", data_path, "dataset directory (default: data.test of the checkpoint config)");
  ev->add_option("--out", report_path, "write the JSON report here instead of stdout");
  ev->add_option("--per-sample", per_sample_path, "CSV of per-sample errors");
  ev->add_option("--pck-curve", pck_path, "CSV of (tau, PCK) pairs");
  ev->add_option("--limit", limit, "evaluate only the first samples");

  // ablate
  auto* ab = app.add_subcommand("ablate", "train and evaluate every variant of an ablation preset");
  ConfigArgs ablate_cfg;
  ablate_cfg.attach(ab);
  std::string preset, csv_path;
  ab->add_option("--preset", preset, "preset name")->required()->check(CLI::IsMember(ablation_presets()));
  ab->add_option("--out", csv_path, "CSV output (default: stdout)");
  ab->add_flag("--quiet", quiet, "no progress output");

  // export-mesh
  auto* ex = app.add_subcommand("export-mesh", "write predicted and ground-truth meshes of one sample as OBJ");
  std::string ex_ckpt, ex_data, ex_out;
  int ex_sample = 0;
  ex->add_option("--checkpoint", ex_ckpt, "checkpoint directory")->required()->check(CLI::ExistingDirectory);
  ex->add_option("--data", ex_data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  ex->add_option("--sample", ex_sample, "sample index");
  ex->add_option("--out", ex_out, "output directory")->required();

  // grad-check
  auto* gc = app.add_subcommand("grad-check", "finite-difference check of the full single-view training loss");
  std::uint64_t gc_seed = 17;
  double gc_eps = 1e-5, gc_tol = 1e-4;
  gc->add_option("--seed", gc_seed, "sample seed");
  gc->add_option("--eps", gc_eps, "central-difference step");
  gc->add_option("--tolerance", gc_tol, "maximum accepted relative error");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      ExperimentConfig cfg = gen_cfg.load();
      if (gen_count) cfg.data_count = *gen_count;
      if (gen_views) cfg.synth.views = *gen_views;
      if (gen_size) cfg.synth.image_size = *gen_size;
      if (gen_seed) cfg.data_seed = *gen_seed;
      if (occ_min) cfg.synth.occ_target_min = *occ_min;
      if (occ_max) cfg.synth.occ_target_max = *occ_max;
      if (occ_other) cfg.synth.occ_other_max = *occ_other;
      const auto data = generate_dataset(hand_template(), cfg.data_seed, cfg.data_count, cfg.synth);
      write_dataset(data, gen_out, gen_split);
      std::cout << "wrote " << data.size() << " samples to " << gen_out << "\n";
    } else if (*tm || *ts) {
      ExperimentConfig cfg = train_cfg.load();
      if (!out_override.empty()) cfg.out_dir = out_override;
      if (*ts) {
        if (init_from_mvr) cfg.init_from_mvr = true;
        if (cache_teacher) cfg.cache_teacher = true;
        if (no_sima) cfg.sima = false;
      }
      const auto train = load_split(cfg.train_data, "data.train");
      Dataset val;
      if (!cfg.val_data.empty()) val = read_dataset(cfg.val_data);
      TrainOptions opts;
      opts.resume_from = resume;
      opts.stop_after = stop_after;
      opts.verbose = !quiet;
      TrainSummary summary;
      if (*tm) {
        Mvr<float> model(cfg.model, hand_template());
        summary = train_mvr(cfg, model, train, val.empty() ? nullptr : &val, opts);
      } else {
        std::unique_ptr<LoadedModel> teacher;
        if (!teacher_path.empty()) {
          teacher = std::make_unique<LoadedModel>(teacher_path);
          if (!teacher->mvr) throw CheckpointError(teacher_path + " is not a multi-view checkpoint");
        } else if (cfg.sima || cfg.init_from_mvr) {
          throw ConfigError("--teacher is required unless sima.enabled=false");
        }
        Svr<float> model(cfg.model, hand_template());
        if (cfg.init_from_mvr && resume.empty()) init_svr_from_mvr(model, *teacher->mvr);
        summary = train_svr(cfg, model, teacher ? teacher->mvr.get() : nullptr, train, val.empty() ? nullptr : &val,
                            opts);
      }
      std::cout << "trained " << summary.iterations << " iterations in " << summary.seconds << " s";
      if (summary.best_iteration >= 0)
        std::cout << "; best val VPE " << summary.best_val_vpe << " mm at " << summary.best_iteration;
      std::cout << "\n";
    } else if (*ev) {
      std::optional<ExperimentConfig> expected;
      if (!eval_cfg.file.empty() || !eval_cfg.sets.empty()) expected = eval_cfg.load();
      LoadedModel m(ckpt, expected ? &*expected : nullptr);
      const ExperimentConfig& cfg = expected ? *expected : m.info.config;
      const auto data = load_split(data_path.empty() ? cfg.test_data : data_path, "data.test or --data");
      const auto opts = metric_options(cfg);
      const auto rep = m.evaluate(data, opts, limit);
      auto j = rep.to_json();
      j["model"] = m.info.model;
      j["checkpoint_iteration"] = m.info.iteration;
      j["config_hash"] = m.info.config.config_hash();
      if (report_path.empty())
        std::cout << j.dump(2) << "\n";
      else
        write_text(report_path, j.dump(2) + "\n");
      if (!per_sample_path.empty()) write_text(per_sample_path, rep.per_sample_csv());
      if (!pck_path.empty()) write_text(pck_path, pck_csv(rep, opts));
    } else if (*ab) {
      const ExperimentConfig cfg = ablate_cfg.load();
      const auto train = load_split(cfg.train_data, "data.train");
      const auto test = load_split(cfg.test_data, "data.test");
      const auto csv = ablation_csv(run_ablation(preset, cfg, train, test, !quiet));
      if (csv_path.empty())
        std::cout << csv;
      else
        write_text(csv_path, csv);
    } else if (*ex) {
      LoadedModel m(ex_ckpt);
      const auto data = read_dataset(ex_data);
      if (ex_sample < 0 || ex_sample >= static_cast<int>(data.size()))
        throw std::out_of_range("sample index " + std::to_string(ex_sample) + " outside the dataset");
      const auto& s = data[ex_sample];
      const Matrix<double> r = s.gt_rotation[s.target_view].cast<double>();
      fs::create_directories(ex_out);
      write_obj(fs::path(ex_out) / "pred.obj", m.world_vertices(s), hand_template().faces);
      write_obj(fs::path(ex_out) / "gt.obj", s.gt_vertices_canonical.cast<double>() * r.transpose(),
                hand_template().faces);
      std::cout << "wrote pred.obj and gt.obj to " << ex_out << "\n";
    } else if (*gc) {
      recon::ModelConfig mc;
      mc.image_size = 32;
      mc.encoder = {3, 4, 4};
      mc.c_i = 4;
      mc.c_j = 3;
      mc.c_v = 4;
      mc.c_o = 2;
      mc.decoder = {4, 3};
      mc.ofe_width = 3;
      mc.regressor_hidden = 4;
      mc.views = 1;
      mc.seed = 5;
      const auto res = svr_total_grad_check(mc, gc_seed, gc_eps);
      std::cout << res.coordinates << " coordinates, max relative error " << res.max_relative_error << " at "
                << res.worst << " (analytic " << res.worst_analytic << ", numeric " << res.worst_numeric << ")\n";
      return res.max_relative_error < gc_tol ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
