// Acceptance run: one PASS/FAIL line per criterion. The property suites are
// the matching unit-test cases, run through their test binaries; learning
// sanity and the two directional ablations are trained here from scratch.
//
//   acceptance [--only NAME]... [--json PATH]

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <regex>

#include "mvhand/harness.hpp"

using namespace mvhand;
using namespace mvhand::harness;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
  nlohmann::json data = nlohmann::json::object();
};

// ---- unit-test suites ---------------------------------------------------------------------

struct CaseSet {
  const char* binary;
  std::vector<const char*> cases;
};

/// Runs the named cases of one doctest binary; every case must be found and pass.
bool run_cases(const CaseSet& set, std::string& failure) {
  std::string filter;
  for (const char* c : set.cases) {
    if (!filter.empty()) filter += ',';
    for (const char* p = c; *p; ++p) {
      if (*p == ',') filter += '\\';
      filter += *p;
    }
  }
  const std::string cmd =
      "\"" + (fs::path(MVHAND_TEST_DIR) / set.binary).string() + "\" --no-version --test-case=\"" + filter + "\" 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) {
    failure = std::string("cannot run ") + set.binary;
    return false;
  }
  std::string out;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) out.append(buf, n);
  const int status = pclose(pipe);
  std::smatch m;
  static const std::regex summary(R"(test cases:\s*(\d+)\s*\|\s*(\d+) passed\s*\|\s*(\d+) failed)");
  if (!std::regex_search(out, m, summary)) {
    failure = std::string(set.binary) + ": no summary";
    return false;
  }
  const int found = std::stoi(m[1]), passed = std::stoi(m[2]);
  if (status != 0 || found != static_cast<int>(set.cases.size()) || passed != found) {
    failure = std::string(set.binary) + ": " + std::to_string(passed) + "/" + std::to_string(found) + " passed, " +
              std::to_string(set.cases.size()) + " expected";
    return false;
  }
  return true;
}

Outcome run_suite(const std::vector<CaseSet>& sets, double time_limit = 0) {
  const auto t0 = Clock::now();
  Outcome o;
  o.pass = true;
  std::size_t count = 0;
  for (const auto& s : sets) {
    std::string failure;
    if (!run_cases(s, failure)) {
      o.pass = false;
      o.detail += (o.detail.empty() ? "" : "; ") + failure;
    }
    count += s.cases.size();
  }
  const double seconds = since(t0);
  o.data = {{"cases", count}, {"seconds", seconds}};
  if (time_limit > 0 && seconds >= time_limit) {
    o.pass = false;
    o.detail += (o.detail.empty() ? "" : "; ") + std::string("over the time limit");
  }
  char buf[96];
  std::snprintf(buf, sizeof buf, "%zu cases in %.1f s", count, seconds);
  o.detail = o.detail.empty() ? buf : std::string(buf) + "; " + o.detail;
  return o;
}

Outcome gradient_suite() {
  return run_suite({{"test_autodiff", {"grad_check: polynomial", "every differentiable op passes grad_check"}},
                    {"test_losses", {"every loss passes a finite-difference check"}},
                    {"test_fusion", {"fusion gradients match central differences"}},
                    {"test_sima", {"OFE gradient check"}},
                    {"test_reconstructor",
                     {"hourglass encoder: shape, zero input, gradients",
                      "spiral decoder: zero head, shapes, coarse output, gradients",
                      "orientation encoder: shape, zero input, gradients", "full SVR L_Total gradient check"}}},
                   300.0);
}

Outcome oracle_suite() {
  return run_suite({{"test_metrics",
                     {"F-score", "PCK-AUC", "procrustes recovers an exact similarity",
                      "procrustes is never beaten by random similarity transforms"}},
                    {"test_hand_model", {"forward kinematics matches the matrix-chain oracle"}},
                    {"test_autodiff",
                     {"linear: random case matches double-loop oracle", "conv2d matches direct convolution loops",
                      "attention: single key, saturation and loop oracle",
                      "spiral conv: degenerate, constant and gather oracle"}},
                    {"test_sima", {"OFE attention: matches a three-stage loop oracle"}},
                    {"test_fusion", {"vertex fusion: explicit two-view oracle"}}});
}

Outcome invariant_suite() {
  return run_suite(
      {{"test_reconstructor",
        {"6-D rotation: canonical cases, property sweep, degeneracy", "MVR with one view equals SVR"}},
       {"test_fusion",
        {"vertex fusion: simplex, saturation and permutation invariance",
         "joint fusion: statistics oracle at N=3 and permutation invariance", "vertex fusion: pool and concat variants",
         "vertex fusion: single view and duplicated views"}},
       {"test_metrics",
        {"PA-JPE is invariant to global similarity transforms of the prediction",
         "evaluator: ground truth as prediction, buckets and per-sample PA bound"}},
       {"test_harness", {"adaptation with zero weights is inert; the teacher never changes"}}});
}

Outcome round_trip_suite() {
  return run_suite({{"test_synthdata", {"dataset round-trip is bit-exact", "payload is little-endian float32"}},
                    {"test_hand_model", {"build_template is deterministic"}},
                    {"test_autodiff", {"forward passes are deterministic"}},
                    {"test_harness",
                     {"checkpoint round trip is bit-exact; structure mismatch is rejected",
                      "training is deterministic and logs one line per iteration",
                      "resume reproduces the uninterrupted run bit for bit"}}});
}

// ---- trained experiments ------------------------------------------------------------------

/// The desk-scale model shared by every trained experiment.
ExperimentConfig desk_config() {
  ExperimentConfig c;
  for (const char* kv : {"model.image_size=32", "synth.image_size=32", "model.encoder=16,24,32", "model.c_i=32",
                         "model.c_j=32", "model.c_v=64", "model.c_o=64", "model.decoder=64,32,16",
                         "model.ofe_width=32", "model.regressor_hidden=64", "train.eval_every=0"})
    c.set(kv);
  return c;
}

Outcome learning_sanity() {
  auto cfg = desk_config();
  cfg.batch = 8;
  cfg.iterations = 2000;
  const auto data = generate_dataset(hand_template(), cfg.data_seed, 32, cfg.synth);
  const auto mo = metric_options(cfg);

  Mvr<float> mvr(cfg.model, hand_template());
  const auto sm = train_mvr(cfg, mvr, data, nullptr);
  const double mvr_vpe = evaluate_mvr(mvr, data, mo).all.vpe;

  auto scfg = cfg;
  scfg.sima = false;
  Svr<float> svr(scfg.model, hand_template());
  const auto ss = train_svr(scfg, svr, nullptr, data, nullptr);
  const double svr_vpe = evaluate_svr(svr, data, mo).all.vpe;

  Outcome o;
  o.pass = mvr_vpe < 2.0 && svr_vpe < 4.0 && sm.seconds < 600 && ss.seconds < 600;
  char buf[192];
  std::snprintf(buf, sizeof buf, "MVR train VPE %.3f mm (< 2) in %.0f s; SVR train VPE %.3f mm (< 4) in %.0f s",
                mvr_vpe, sm.seconds, svr_vpe, ss.seconds);
  o.detail = buf;
  o.data = {{"mvr_vpe", mvr_vpe}, {"mvr_seconds", sm.seconds}, {"svr_vpe", svr_vpe}, {"svr_seconds", ss.seconds}};
  return o;
}

// Directional ablations: one occlusion-heavy training set, one held-out set
// with the same occlusion regime, three seeds.
constexpr int kAblationTrain = 2000;
constexpr int kAblationTest = 300;
constexpr int kAblationIterations = 3000;
constexpr double kSimaWeight = 100.0;
constexpr std::uint64_t kSeeds[] = {1, 2, 3};

ExperimentConfig ablation_config(std::uint64_t seed) {
  auto c = desk_config();
  c.batch = 16;
  c.iterations = kAblationIterations;
  c.synth.occ_target_min = 0.5;
  c.synth.occ_target_max = 0.8;
  c.cache_teacher = true;
  c.beta = c.gamma = kSimaWeight;
  c.seed = seed;
  c.model.seed = seed;
  return c;
}

struct AblationData {
  Dataset train, test;
};

const AblationData& ablation_data() {
  static const AblationData d = [] {
    const auto cfg = ablation_config(1);
    return AblationData{generate_dataset(hand_template(), 1, kAblationTrain, cfg.synth),
                        generate_dataset(hand_template(), 999, kAblationTest, cfg.synth)};
  }();
  return d;
}

/// Attention-VFF teachers, shared by both ablations.
std::map<std::uint64_t, std::unique_ptr<Mvr<float>>> g_teachers;
std::map<std::uint64_t, double> g_teacher_vpe;

Mvr<float>& teacher(std::uint64_t seed) {
  auto& t = g_teachers[seed];
  if (!t) {
    const auto cfg = ablation_config(seed);
    t = std::make_unique<Mvr<float>>(cfg.model, hand_template());
    train_mvr(cfg, *t, ablation_data().train, nullptr);
    g_teacher_vpe[seed] = evaluate_mvr(*t, ablation_data().test, metric_options(cfg)).all.vpe;
  }
  return *t;
}

Outcome directional(const char* what, const std::vector<double>& better, const std::vector<double>& worse,
                    bool strict, nlohmann::json data) {
  int wins = 0;
  std::string per_seed;
  for (std::size_t i = 0; i < better.size(); ++i) {
    wins += strict ? better[i] < worse[i] : better[i] <= worse[i];
    char buf[96];
    std::snprintf(buf, sizeof buf, "%s%.2f vs %.2f", i ? ", " : "", better[i], worse[i]);
    per_seed += buf;
  }
  Outcome o;
  o.pass = wins >= 2;
  o.detail = std::string(what) + " " + std::to_string(wins) + "/" + std::to_string(better.size()) + " seeds (" +
             per_seed + " mm)";
  o.data = std::move(data);
  return o;
}

Outcome ablation_a() {
  std::vector<double> sima, plain;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto seed : kSeeds) {
    auto& t = teacher(seed);
    double vpe[2];
    for (const bool on : {true, false}) {
      auto cfg = ablation_config(seed);
      cfg.sima = on;
      Svr<float> svr(cfg.model, hand_template());
      train_svr(cfg, svr, &t, ablation_data().train, nullptr);
      const auto rep = evaluate_svr(svr, ablation_data().test, metric_options(cfg));
      vpe[on ? 0 : 1] = rep.all.vpe;
      rows.push_back({{"seed", seed}, {"sima", on}, {"metrics", rep.all.to_json()}});
    }
    sima.push_back(vpe[0]);
    plain.push_back(vpe[1]);
  }
  return directional("SiMA-on VPE strictly below SiMA-off in", sima, plain, true, {{"runs", rows}});
}

Outcome ablation_b() {
  std::vector<double> attention, concat;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto seed : kSeeds) {
    teacher(seed);
    attention.push_back(g_teacher_vpe[seed]);
    auto cfg = ablation_config(seed);
    cfg.model.vertex_fusion = fusion::Mode::kConcat;
    Mvr<float> m(cfg.model, hand_template());
    train_mvr(cfg, m, ablation_data().train, nullptr);
    concat.push_back(evaluate_mvr(m, ablation_data().test, metric_options(cfg)).all.vpe);
    rows.push_back({{"seed", seed}, {"attention_vpe", attention.back()}, {"concat_vpe", concat.back()}});
  }
  return directional("attention-VFF VPE <= concat-VFF in", attention, concat, false, {{"runs", rows}});
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> only;
  fs::path json_path;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--only" && i + 1 < argc)
      only.push_back(argv[++i]);
    else if (a == "--json" && i + 1 < argc)
      json_path = argv[++i];
    else {
      std::cerr << "usage: acceptance [--only NAME]... [--json PATH]\n";
      return 2;
    }
  }

  const std::vector<std::pair<const char*, Outcome (*)()>> criteria = {
      {"gradient", gradient_suite},   {"oracle", oracle_suite},         {"invariant", invariant_suite},
      {"round-trip", round_trip_suite}, {"learning-sanity", learning_sanity}, {"ablation-a", ablation_a},
      {"ablation-b", ablation_b},
  };
  nlohmann::json report = nlohmann::json::object();
  bool all = true;
  for (const auto& [name, fn] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("error: ") + e.what();
    }
    all = all && o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
    o.data["pass"] = o.pass;
    o.data["detail"] = o.detail;
    o.data["seconds"] = since(t0);
    report[name] = o.data;
  }
  if (!json_path.empty()) std::ofstream(json_path) << report.dump(2) << "\n";
  return all ? 0 : 1;
}
