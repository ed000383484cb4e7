#include "mvhand/harness.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <numeric>
#include <sstream>

namespace mvhand::harness {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

const HandTemplate& hand_template() {
  static const HandTemplate t = build_template();
  return t;
}

// ---- optimizer ----------------------------------------------------------------

void Adam::step(const ParamsF& params, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  const float step = static_cast<float>(lr / c1);
  const float b1 = static_cast<float>(b1_), b2 = static_cast<float>(b2_);
  const float inv_c2 = static_cast<float>(1.0 / c2), eps = static_cast<float>(eps_);
  for (auto* p : params) {
    auto& mm = m[p->name];
    auto& vv = v[p->name];
    if (mm.size() == 0) {
      mm = Matrix<float>::Zero(p->value.rows(), p->value.cols());
      vv = Matrix<float>::Zero(p->value.rows(), p->value.cols());
    }
    if (p->grad.size() == p->value.size()) {
      mm = b1 * mm + (1.0f - b1) * p->grad;
      vv = b2 * vv + (1.0f - b2) * p->grad.cwiseAbs2();
    } else {
      mm *= b1;
      vv *= b2;
    }
    p->value.array() -= step * mm.array() / ((vv.array() * inv_c2).sqrt() + eps);
    p->grad.resize(0, 0);
  }
}

double learning_rate(const ExperimentConfig& cfg, int iteration) {
  const bool decayed = iteration >= static_cast<int>(std::floor(cfg.decay_at * cfg.iterations));
  return decayed ? cfg.lr * cfg.decay_factor : cfg.lr;
}

// ---- schedule -----------------------------------------------------------------

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a ^ (b + 0x9E3779B97F4A7C15ULL + (a << 6) + (a >> 2));
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

Schedule::Schedule(const Dataset& data, std::uint64_t seed, int batch, TargetViewPolicy policy)
    : data_(&data), seed_(seed), batch_(batch), policy_(policy) {
  if (data.empty()) throw TrainingError("training set is empty");
}

const std::vector<int>& Schedule::permutation(std::int64_t epoch) const {
  auto it = perms_.find(epoch);
  if (it != perms_.end()) return it->second;
  if (perms_.size() > 4) perms_.erase(perms_.begin());
  std::vector<int> p(data_->size());
  std::iota(p.begin(), p.end(), 0);
  Rng rng(mix(seed_, static_cast<std::uint64_t>(epoch)));
  for (int i = static_cast<int>(p.size()) - 1; i > 0; --i) std::swap(p[i], p[uniform_int(rng, i + 1)]);
  return perms_.emplace(epoch, std::move(p)).first->second;
}

std::vector<BatchItem> Schedule::batch(int iteration) const {
  const std::int64_t n = static_cast<std::int64_t>(data_->size());
  std::vector<BatchItem> out;
  for (int b = 0; b < batch_; ++b) {
    const std::int64_t k = static_cast<std::int64_t>(iteration) * batch_ + b;
    const std::int64_t epoch = k / n;
    BatchItem item;
    item.sample = permutation(epoch)[k % n];
    const auto& s = (*data_)[item.sample];
    if (policy_ == TargetViewPolicy::kFixed) {
      item.view = s.target_view;
    } else {
      Rng rng(mix(mix(seed_, static_cast<std::uint64_t>(epoch)), static_cast<std::uint64_t>(item.sample) + 1));
      item.view = uniform_int(rng, s.views());
    }
    out.push_back(item);
  }
  return out;
}

// ---- checkpoints --------------------------------------------------------------------

namespace {

std::vector<float> row_major(const Matrix<float>& m) {
  std::vector<float> out;
  out.reserve(m.size());
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) out.push_back(m(r, c));
  return out;
}

Matrix<float> from_entry(const TensorEntry& e) {
  if (e.dtype != DType::kFloat32 || e.shape.size() != 2)
    throw CheckpointError("tensor '" + e.name + "' is not a float32 matrix");
  Matrix<float> m(e.shape[0], e.shape[1]);
  std::size_t i = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = e.f32[i++];
  return m;
}

nlohmann::json config_json(const ExperimentConfig& cfg) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : cfg.entries()) j[k] = v;
  return j;
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig cfg;
  for (auto it = j.begin(); it != j.end(); ++it) cfg.set(it.key(), it.value().get<std::string>());
  return cfg;
}

}  // namespace

void save_checkpoint(const fs::path& dir, const CheckpointInfo& info, const ParamsF& params, const Adam* adam) {
  TensorContainer c;
  c.meta["kind"] = "checkpoint";
  c.meta["model"] = info.model;
  c.meta["stage"] = info.stage;
  c.meta["iteration"] = info.iteration;
  c.meta["best_val_vpe"] = info.best_val_vpe;
  c.meta["best_iteration"] = info.best_iteration;
  c.meta["config"] = config_json(info.config);
  c.meta["config_hash"] = info.config.config_hash();
  c.meta["structural_hash"] = info.config.structural_hash();
  c.meta["parameter_hash"] = parameter_hash(params);
  for (auto* p : params) c.add_f32("param/" + p->name, {p->value.rows(), p->value.cols()}, row_major(p->value));
  if (adam) {
    c.meta["adam_steps"] = adam->steps();
    for (const auto& [name, m] : adam->m) c.add_f32("adam.m/" + name, {m.rows(), m.cols()}, row_major(m));
    for (const auto& [name, v] : adam->v) c.add_f32("adam.v/" + name, {v.rows(), v.cols()}, row_major(v));
  }
  fs::create_directories(dir);
  c.write(dir);
}

CheckpointInfo checkpoint_info(const TensorContainer& c) {
  if (c.meta.value("kind", "") != "checkpoint") throw CheckpointError("not a checkpoint container");
  CheckpointInfo info;
  info.model = c.meta.at("model").get<std::string>();
  info.stage = c.meta.at("stage").get<int>();
  info.iteration = c.meta.at("iteration").get<int>();
  info.best_val_vpe = c.meta.value("best_val_vpe", -1.0);
  info.best_iteration = c.meta.value("best_iteration", -1);
  info.config = config_from_json(c.meta.at("config"));
  if (info.config.config_hash() != c.meta.at("config_hash").get<std::string>())
    throw CheckpointError("checkpoint config does not match its recorded hash");
  return info;
}

void load_parameters(const TensorContainer& c, const ParamsF& params) {
  for (auto* p : params) {
    const std::string key = "param/" + p->name;
    if (!c.contains(key)) throw CheckpointError("checkpoint has no parameter '" + p->name + "'");
    Matrix<float> m = from_entry(c.at(key));
    if (m.rows() != p->value.rows() || m.cols() != p->value.cols())
      throw CheckpointError("parameter '" + p->name + "' has shape " + std::to_string(m.rows()) + "x" +
                            std::to_string(m.cols()) + " in the checkpoint, expected " +
                            std::to_string(p->value.rows()) + "x" + std::to_string(p->value.cols()));
    p->value = std::move(m);
  }
}

void restore_adam(const TensorContainer& c, Adam& adam) {
  adam.m.clear();
  adam.v.clear();
  adam.t_ = c.meta.value("adam_steps", std::int64_t{0});
  for (const auto& e : c.entries()) {
    if (e.name.rfind("adam.m/", 0) == 0) adam.m[e.name.substr(7)] = from_entry(e);
    if (e.name.rfind("adam.v/", 0) == 0) adam.v[e.name.substr(7)] = from_entry(e);
  }
}

void require_structure(const TensorContainer& c, const ExperimentConfig& cfg) {
  const auto stored = c.meta.value("structural_hash", std::string());
  if (stored != cfg.structural_hash())
    throw CheckpointError("checkpoint structure " + stored + " does not match the configuration (" +
                          cfg.structural_hash() + ")");
}

std::string parameter_hash(const ParamsF& params) {
  std::uint64_t h = fnv1a("params");
  for (auto* p : params) {
    h = fnv1a(p->name + ":" + std::to_string(p->value.rows()) + "x" + std::to_string(p->value.cols()), h);
    h = fnv1a(std::string_view(reinterpret_cast<const char*>(p->value.data()), sizeof(float) * p->value.size()), h);
  }
  return hex64(h);
}

// ---- evaluation ---------------------------------------------------------------------

metrics::MetricOptions metric_options(const ExperimentConfig& cfg) {
  metrics::MetricOptions o;
  o.occlusion_threshold = cfg.occlusion_threshold;
  o.auc_max = cfg.auc_max;
  o.auc_steps = cfg.auc_steps;
  o.rigid_pa = cfg.rigid_pa;
  return o;
}

namespace {

void add_prediction(metrics::Evaluator& ev, const MultiViewSample& s, int view, const Matrix<float>& vertices,
                    const Matrix<float>& rotation) {
  const auto& tpl = hand_template();
  const Matrix<double> r = rotation.cast<double>();
  const Matrix<double> gt_r = s.gt_rotation[view].cast<double>();
  const Matrix<double> pred_v = vertices.cast<double>() * r.transpose();
  const Matrix<double> pred_j = regress_joints(tpl, vertices.cast<double>()) * r.transpose();
  const Matrix<double> gt_v = s.gt_vertices_canonical.cast<double>() * gt_r.transpose();
  const Matrix<double> gt_j = s.gt_joints3d_canonical.cast<double>() * gt_r.transpose();
  ev.add(pred_v, gt_v, pred_j, gt_j, s.occlusion_fraction[view]);
}

int eval_count(const Dataset& data, int limit) {
  return limit > 0 ? std::min<int>(limit, static_cast<int>(data.size())) : static_cast<int>(data.size());
}

}  // namespace

metrics::MetricReport evaluate_svr(Svr<float>& model, const Dataset& data, const metrics::MetricOptions& options,
                                   int limit) {
  metrics::Evaluator ev(options);
  for (int i = 0; i < eval_count(data, limit); ++i) {
    const auto& s = data[i];
    ad::Graph<float> g;
    auto r = model.forward(g, s.images[s.target_view], {false, {}});
    add_prediction(ev, s, s.target_view, r.output.vertices.value(), r.output.rotation.value());
  }
  return ev.finish();
}

metrics::MetricReport evaluate_mvr(Mvr<float>& model, const Dataset& data, const metrics::MetricOptions& options,
                                   int limit) {
  metrics::Evaluator ev(options);
  for (int i = 0; i < eval_count(data, limit); ++i) {
    const auto& s = data[i];
    ad::Graph<float> g;
    auto r = model.forward(g, s.images, s.target_view, {false, {}});
    add_prediction(ev, s, s.target_view, r.output.vertices.value(), r.output.rotation.value());
  }
  return ev.finish();
}

// ---- training -------------------------------------------------------------------------

namespace {

losses::ReconTarget target_for(const MultiViewSample& s, int view, const std::vector<int>& views_2d) {
  losses::ReconTarget t;
  t.vertices = s.gt_vertices_canonical.cast<double>();
  t.joints = s.gt_joints3d_canonical.cast<double>();
  t.rotation = s.gt_rotation[view].cast<double>();
  for (int k : views_2d) t.joints2d.push_back(s.gt_joints2d[k].cast<double>());
  return t;
}

void check_dataset(const ExperimentConfig& cfg, const Dataset& data, bool multi_view) {
  for (const auto& s : data) {
    if (s.cam.image_size != cfg.model.image_size)
      throw TrainingError("dataset image size " + std::to_string(s.cam.image_size) + " does not match model.image_size " +
                          std::to_string(cfg.model.image_size));
    if (multi_view && s.views() != cfg.model.views)
      throw TrainingError("dataset has " + std::to_string(s.views()) + " views, model.views is " +
                          std::to_string(cfg.model.views));
  }
}

/// Everything a stage needs besides the per-sample loss.
class Run {
 public:
  Run(const ExperimentConfig& cfg, std::string model_kind, int stage, const ParamsF& params, const Dataset& train,
      const TrainOptions& options)
      : cfg_(cfg),
        kind_(std::move(model_kind)),
        stage_(stage),
        params_(params),
        train_(train),
        options_(options),
        schedule_(train, cfg.seed, cfg.batch, cfg.target_view),
        adam_(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps) {
    cfg_.validate();
    if (!options.resume_from.empty()) {
      const auto c = TensorContainer::read(options.resume_from);
      const auto info = checkpoint_info(c);
      require_structure(c, cfg_);
      if (info.model != kind_ || info.stage != stage_)
        throw CheckpointError("cannot resume a " + kind_ + " run from a " + info.model + " checkpoint");
      load_parameters(c, params_);
      restore_adam(c, adam_);
      start_ = info.iteration;
      best_vpe_ = info.best_val_vpe;
      best_iteration_ = info.best_iteration;
    }
    if (!cfg_.out_dir.empty()) {
      fs::create_directories(cfg_.out_dir);
      cfg_.save(fs::path(cfg_.out_dir) / "config.txt");
      const auto mode = start_ > 0 ? std::ios::app : std::ios::trunc;
      log_.open(fs::path(cfg_.out_dir) / "train.jsonl", std::ios::out | mode);
      eval_log_.open(fs::path(cfg_.out_dir) / "eval.jsonl", std::ios::out | mode);
    }
  }

  int start() const { return start_; }
  int end() const {
    return options_.stop_after >= 0 ? std::min(cfg_.iterations, options_.stop_after) : cfg_.iterations;
  }
  std::vector<BatchItem> batch(int it) const { return schedule_.batch(it); }

  /// Adam step plus logging for one finished batch.
  void finish_step(int it, const losses::LossReport& mean) {
    if (!std::isfinite(mean.total)) throw TrainingError("non-finite loss at iteration " + std::to_string(it));
    adam_.step(params_, learning_rate(cfg_, it));
    summary_.loss.push_back(mean.total);
    if (log_) {
      nlohmann::json j;
      j["stage"] = stage_;
      j["iter"] = it + 1;
      j["lr"] = learning_rate(cfg_, it);
      j["config_hash"] = cfg_.config_hash();
      j["loss"] = mean.to_json();
      log_ << j.dump() << "\n";
    }
    if (options_.on_step) options_.on_step(it + 1, mean);
    if (options_.verbose && ((it + 1) % 100 == 0 || it == 0))
      std::fprintf(stderr, "[%s] iter %d loss %.3f\n", kind_.c_str(), it + 1, mean.total);
  }

  /// Records a validation result and writes `best` when it improves.
  void record_eval(int iteration, const metrics::MetricReport& report) {
    const double vpe = report.all.vpe;
    if (best_vpe_ < 0 || vpe < best_vpe_) {
      best_vpe_ = vpe;
      best_iteration_ = iteration;
      if (!cfg_.out_dir.empty()) save("best", iteration);
    }
    if (eval_log_) {
      nlohmann::json j;
      j["stage"] = stage_;
      j["iter"] = iteration;
      j["config_hash"] = cfg_.config_hash();
      j["val"] = report.all.to_json();
      j["best_val_vpe"] = best_vpe_;
      eval_log_ << j.dump() << "\n";
    }
    if (options_.verbose) std::fprintf(stderr, "[%s] iter %d val VPE %.3f mm\n", kind_.c_str(), iteration, vpe);
  }

  void save(const std::string& name, int iteration) {
    CheckpointInfo info{kind_, stage_, iteration, best_vpe_, best_iteration_, cfg_};
    save_checkpoint(fs::path(cfg_.out_dir) / name, info, params_, &adam_);
  }

  /// Writes the offending batch and its losses, then throws.
  [[noreturn]] void nan_abort(int it, const std::vector<BatchItem>& items,
                              const std::vector<losses::LossReport>& reports) {
    std::string where;
    if (!cfg_.out_dir.empty()) {
      const fs::path dir = fs::path(cfg_.out_dir) / "nan_dump";
      fs::create_directories(dir);
      nlohmann::json j;
      j["iteration"] = it + 1;
      j["config_hash"] = cfg_.config_hash();
      for (std::size_t i = 0; i < items.size(); ++i) {
        nlohmann::json e;
        e["sample"] = items[i].sample;
        e["view"] = items[i].view;
        if (i < reports.size()) e["loss"] = reports[i].to_json();
        j["batch"].push_back(e);
      }
      std::ofstream(dir / "batch.json") << j.dump(2) << "\n";
      Dataset samples;
      for (const auto& item : items) samples.push_back(train_[item.sample]);
      write_dataset(samples, dir / "samples", "nan-batch");
      where = " (batch written to " + dir.string() + ")";
    }
    throw TrainingError("non-finite loss at iteration " + std::to_string(it + 1) + where);
  }

  TrainSummary finish(int iterations_done) {
    summary_.iterations = iterations_done;
    summary_.best_val_vpe = best_vpe_;
    summary_.best_iteration = best_iteration_;
    if (!cfg_.out_dir.empty()) save("last", iterations_done);
    return summary_;
  }

  bool eval_due(int done) const {
    return cfg_.eval_every > 0 && (done % cfg_.eval_every == 0 || done == cfg_.iterations);
  }
  bool checkpoint_due(int done) const {
    return !cfg_.out_dir.empty() && cfg_.checkpoint_every > 0 && done % cfg_.checkpoint_every == 0;
  }

  TrainSummary summary_;

 private:
  ExperimentConfig cfg_;
  std::string kind_;
  int stage_;
  ParamsF params_;
  const Dataset& train_;
  TrainOptions options_;
  Schedule schedule_;
  Adam adam_;
  int start_ = 0;
  double best_vpe_ = -1;
  int best_iteration_ = -1;
  std::ofstream log_, eval_log_;
};

}  // namespace

TrainSummary train_mvr(const ExperimentConfig& cfg, Mvr<float>& model, const Dataset& train, const Dataset* val,
                       const TrainOptions& options) {
  const auto t0 = Clock::now();
  check_dataset(cfg, train, true);
  if (val) check_dataset(cfg, *val, true);
  const auto params = model.parameters();
  Run run(cfg, "mvr", 1, params, train, options);
  const auto& tpl = hand_template();
  const auto metric_opts = metric_options(cfg);
  const float inv_b = 1.0f / static_cast<float>(cfg.batch);

  int it = run.start();
  for (; it < run.end(); ++it) {
    const auto items = run.batch(it);
    nn::zero_grads(params);
    losses::LossReport mean;
    std::vector<losses::LossReport> reports;
    for (const auto& item : items) {
      const auto& s = train[item.sample];
      ad::Graph<float> g;
      auto r = model.forward(g, s.images, item.view, {true, {}});
      losses::ReconPrediction<float> pred{r.output.vertices, r.output.rotation, r.joints2d};
      auto terms = losses::recon_loss(tpl, pred, target_for(s, item.view, r.order));
      reports.push_back(terms.report({cfg.beta, cfg.gamma}));
      if (!std::isfinite(reports.back().total)) run.nan_abort(it, items, reports);
      g.backward(terms.total);
      g.accumulate_parameter_grads(inv_b);
      mean += reports.back();
    }
    mean *= 1.0 / cfg.batch;
    run.finish_step(it, mean);
    const int done = it + 1;
    if (val && run.eval_due(done)) run.record_eval(done, evaluate_mvr(model, *val, metric_opts, cfg.val_samples));
    if (run.checkpoint_due(done)) run.save("last", done);
  }
  auto summary = run.finish(it);
  summary.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return summary;
}

namespace {

/// Teacher features for one (sample, view), as plain values.
struct TeacherFeatures {
  Matrix<float> f_v, f_v_last, f_j, f_o, f_o_hat;
};

TeacherFeatures teacher_features(Mvr<float>& teacher, const MultiViewSample& s, int view,
                                 const sima::DistillPlan& plan) {
  ad::Graph<float> g;
  auto r = teacher.forward(g, s.images, view, {false, {}});
  TeacherFeatures t;
  if (plan.shape == sima::ShapeTarget::kVertex)
    t.f_v = r.fused.f_v.value();
  else
    t.f_v_last = r.fused.f_v_last.value();
  switch (plan.orient) {
    case sima::OrientTarget::kNone: break;
    case sima::OrientTarget::kJoint: t.f_j = r.fused.f_j.value(); break;
    case sima::OrientTarget::kOrientRaw: t.f_o = r.fused.f_o.value(); break;
    case sima::OrientTarget::kOrientEnhanced: t.f_o_hat = r.fused.f_o_hat.value(); break;
  }
  return t;
}

}  // namespace

TrainSummary train_svr(const ExperimentConfig& cfg, Svr<float>& model, Mvr<float>* teacher, const Dataset& train,
                       const Dataset* val, const TrainOptions& options) {
  const auto t0 = Clock::now();
  if (cfg.sima && !teacher) throw TrainingError("single-view training with adaptation needs a teacher model");
  check_dataset(cfg, train, false);
  if (val) check_dataset(cfg, *val, false);
  const auto params = model.parameters();
  Run run(cfg, "svr", 2, params, train, options);
  const auto& tpl = hand_template();
  const auto metric_opts = metric_options(cfg);
  const float inv_b = 1.0f / static_cast<float>(cfg.batch);
  const auto plan = sima::select_distill_targets(cfg.variant);
  const losses::LossWeights weights{cfg.beta, cfg.gamma};

  std::string teacher_hash;
  if (cfg.sima) teacher_hash = parameter_hash(teacher->parameters());
  std::map<std::pair<int, int>, TeacherFeatures> cache;
  auto check_teacher = [&] {
    if (cfg.sima && parameter_hash(teacher->parameters()) != teacher_hash)
      throw TrainingError("teacher parameters changed during single-view training");
  };

  int it = run.start();
  for (; it < run.end(); ++it) {
    const auto items = run.batch(it);
    nn::zero_grads(params);
    losses::LossReport mean;
    std::vector<losses::LossReport> reports;
    for (const auto& item : items) {
      const auto& s = train[item.sample];
      ad::Graph<float> g;
      auto r = model.forward(g, s.images[item.view], {true, {}});
      losses::ReconPrediction<float> pred{r.output.vertices, r.output.rotation, {r.output.joints2d}};
      auto terms = losses::recon_loss(tpl, pred, target_for(s, item.view, {item.view}));
      if (cfg.sima) {
        TeacherFeatures computed;
        const TeacherFeatures* tf = nullptr;
        if (cfg.cache_teacher) {
          const auto key = std::make_pair(item.sample, item.view);
          auto found = cache.find(key);
          if (found == cache.end()) found = cache.emplace(key, teacher_features(*teacher, s, item.view, plan)).first;
          tf = &found->second;
        } else {
          computed = teacher_features(*teacher, s, item.view, plan);
          tf = &computed;
        }
        FeatureBundle<float> tb;
        auto constant = [&g](const Matrix<float>& m) { return m.size() ? g.constant(m) : ad::Var<float>{}; };
        tb.f_v = constant(tf->f_v);
        tb.f_v_last = constant(tf->f_v_last);
        tb.f_j = constant(tf->f_j);
        tb.f_o = constant(tf->f_o);
        tb.f_o_hat = constant(tf->f_o_hat);
        const auto d = sima::distill(plan, r.features, tb, cfg.distill_mse);
        losses::add_distillation(terms, d.se, d.oe, weights);
      }
      reports.push_back(terms.report(weights));
      if (!std::isfinite(reports.back().total)) run.nan_abort(it, items, reports);
      g.backward(terms.total);
      g.accumulate_parameter_grads(inv_b);
      mean += reports.back();
    }
    mean *= 1.0 / cfg.batch;
    run.finish_step(it, mean);
    const int done = it + 1;
    if (val && run.eval_due(done)) {
      check_teacher();
      run.record_eval(done, evaluate_svr(model, *val, metric_opts, cfg.val_samples));
    }
    if (run.checkpoint_due(done)) run.save("last", done);
  }
  check_teacher();
  auto summary = run.finish(it);
  summary.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return summary;
}

void init_svr_from_mvr(Svr<float>& svr, Mvr<float>& mvr) {
  std::map<std::string, const ad::Parameter<float>*> source;
  for (auto* p : mvr.trunk_parameters()) source[p->name] = p;
  for (auto* p : svr.parameters()) {
    auto it = source.find(p->name);
    if (it == source.end() || it->second->value.rows() != p->value.rows() ||
        it->second->value.cols() != p->value.cols())
      throw CheckpointError("multi-view model has no matching parameter '" + p->name + "'");
    p->value = it->second->value;
  }
}

// ---- ablations --------------------------------------------------------------------------

std::vector<std::string> ablation_presets() { return {"fusion-variants", "ofe-variants", "distill-stages"}; }

std::vector<AblationRow> run_ablation(const std::string& preset, const ExperimentConfig& base, const Dataset& train,
                                      const Dataset& test, bool verbose) {
  const auto& tpl = hand_template();
  const auto metric_opts = metric_options(base);
  std::vector<AblationRow> rows;
  TrainOptions opts;
  opts.verbose = verbose;
  auto sub_dir = [&](const std::string& name) {
    return base.out_dir.empty() ? std::string() : (fs::path(base.out_dir) / name).string();
  };
  auto record = [&](const std::string& name, const metrics::MetricReport& rep, double seconds) {
    rows.push_back({name, rep.all, rep.occluded, seconds});
  };

  if (preset == "fusion-variants") {
    for (const char* mode : {"concat", "pool", "attention"}) {
      ExperimentConfig cfg = base;
      cfg.set("fusion.vertex", mode);
      cfg.out_dir = sub_dir(std::string("vff-") + mode);
      Mvr<float> model(cfg.model, tpl);
      const auto s = train_mvr(cfg, model, train, nullptr, opts);
      record(std::string("VFF ") + mode, evaluate_mvr(model, test, metric_opts), s.seconds);
    }
  } else if (preset == "ofe-variants") {
    for (const char* mode : {"off", "concat", "attention"}) {
      ExperimentConfig cfg = base;
      cfg.set("model.ofe", mode);
      cfg.sima = false;
      cfg.out_dir = sub_dir(std::string("ofe-") + mode);
      Svr<float> model(cfg.model, tpl);
      const auto s = train_svr(cfg, model, nullptr, train, nullptr, opts);
      record(std::string("OFE ") + mode, evaluate_svr(model, test, metric_opts), s.seconds);
    }
  } else if (preset == "distill-stages") {
    ExperimentConfig tcfg = base;
    tcfg.out_dir = sub_dir("teacher");
    Mvr<float> teacher(tcfg.model, tpl);
    train_mvr(tcfg, teacher, train, nullptr, opts);
    for (const char* v : {"i", "ii", "iii", "iv", "v"}) {
      ExperimentConfig cfg = base;
      cfg.sima = true;
      cfg.set("sima.variant", v);
      cfg.out_dir = sub_dir(std::string("distill-") + v);
      Svr<float> model(cfg.model, tpl);
      if (cfg.init_from_mvr) init_svr_from_mvr(model, teacher);
      const auto s = train_svr(cfg, model, &teacher, train, nullptr, opts);
      record("(" + std::string(v) + ") " + sima::variant_name(cfg.variant), evaluate_svr(model, test, metric_opts),
             s.seconds);
    }
  } else {
    throw ConfigError("unknown ablation preset '" + preset + "'");
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(4);
  os << "variant,jpe,pa_jpe,vpe,pa_vpe,occluded_vpe,occluded_pa_vpe,count,seconds\n";
  for (const auto& r : rows)
    os << r.variant << "," << r.all.jpe << "," << r.all.pa_jpe << "," << r.all.vpe << "," << r.all.pa_vpe << ","
       << r.occluded.vpe << "," << r.occluded.pa_vpe << "," << r.all.count << "," << r.seconds << "\n";
  return os.str();
}

}  // namespace mvhand::harness
