// Command-line front end: simulation, preprocessing, arrival-angle export,
// training, prediction and the evaluation studies, each writing its outputs
// plus a reproducibility manifest under --out.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "csiloc/eval.hpp"
#include "csiloc/kv_config.hpp"
#include "csiloc/nn/checkpoint.hpp"
#include "csiloc/nn/gradcheck.hpp"
#include "csiloc/rng.hpp"
#include "csiloc/session_io.hpp"
#include "csiloc/sim.hpp"

namespace fs = std::filesystem;
using namespace csiloc;

namespace {

constexpr const char* kToolVersion = "0.1.0";

int missing_file(const std::string& path) {
  std::fprintf(stderr, "missing file: %s\n", path.c_str());
  return 1;
}

// Returns false (and sets rc) when any input file is absent.
bool check_inputs(const std::vector<std::string>& paths, int& rc) {
  for (const auto& p : paths)
    if (!fs::exists(p)) {
      rc = missing_file(p);
      return false;
    }
  return true;
}

struct CommonFlags {
  std::string out;
  uint64_t seed = 1;
  int jobs = 1;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--out", f.out, "output directory")->required();
  cmd->add_option("--seed", f.seed, "master RNG seed");
  cmd->add_option("--jobs", f.jobs, "max parallel runs");
}

// Every pipeline hyperparameter gets a long-form flag so any run is
// reproducible from the manifest alone.
void add_pipeline(CLI::App* cmd, EvalOptions& o) {
  cmd->add_option("--pca-k", o.pca_k, "principal components per feature group");
  cmd->add_option("--hampel-half-window", o.pre.hampel_half_window,
                  "outlier filter half window (packets)");
  cmd->add_option("--hampel-k", o.pre.hampel_k,
                  "outlier threshold in scaled-MAD units");
  cmd->add_flag("--legacy-divisor", o.pre.legacy_divisor,
                "use the F-1 slope divisor in phase detrending");
  cmd->add_option("--aoa-window-packets", o.aoa.window_packets,
                  "packets per arrival-angle covariance window");
  cmd->add_option("--aoa-grid-step-deg", o.aoa.grid_step_deg,
                  "spectrum search grid step (degrees)");
  cmd->add_option("--aoa-smooth-len", o.aoa.smooth_len,
                  "arrival-angle median window (0 = packet_rate/2)");
  cmd->add_option("--window", o.window, "packets per image/sequence sample");
  cmd->add_option("--smooth-packets", o.smooth_packets,
                  "prediction smoothing for per-packet models");
  cmd->add_option("--smooth-windows", o.smooth_windows,
                  "prediction smoothing for per-window models");
}

void add_training(CLI::App* cmd, EvalOptions& o) {
  cmd->add_option("--snn-epochs", o.snn.epochs, "epochs for the dense model");
  cmd->add_option("--cnn-epochs", o.cnn.epochs, "epochs for the image models");
  cmd->add_option("--lstm-epochs", o.lstm.epochs,
                  "epochs for the sequence model");
  auto set_all_int = [&o](int TrainConfig::* field) {
    return [&o, field](int v) {
      o.snn.*field = v;
      o.cnn.*field = v;
      o.lstm.*field = v;
    };
  };
  cmd->add_option_function<int>("--batch-size", set_all_int(&TrainConfig::batch_size),
                                "mini-batch size");
  auto set_all_double = [&o](double TrainConfig::* field) {
    return [&o, field](double v) {
      o.snn.*field = v;
      o.cnn.*field = v;
      o.lstm.*field = v;
    };
  };
  cmd->add_option_function<double>(
      "--learning-rate", set_all_double(&TrainConfig::learning_rate),
      "optimiser step size");
  cmd->add_option_function<double>(
      "--val-fraction", set_all_double(&TrainConfig::val_fraction),
      "held-out validation fraction");
}

void put_pipeline(KvConfig& m, const EvalOptions& o) {
  m.set_int("pca_k", o.pca_k);
  m.set_int("hampel_half_window", o.pre.hampel_half_window);
  m.set_double("hampel_k", o.pre.hampel_k);
  m.set_int("legacy_divisor", o.pre.legacy_divisor ? 1 : 0);
  m.set_int("aoa_window_packets", o.aoa.window_packets);
  m.set_double("aoa_grid_step_deg", o.aoa.grid_step_deg);
  m.set_int("aoa_smooth_len", o.aoa.smooth_len);
  m.set_int("window", o.window);
  m.set_int("smooth_packets", o.smooth_packets);
  m.set_int("smooth_windows", o.smooth_windows);
  m.set_int("snn_epochs", o.snn.epochs);
  m.set_int("cnn_epochs", o.cnn.epochs);
  m.set_int("lstm_epochs", o.lstm.epochs);
  m.set_int("batch_size", o.snn.batch_size);
  m.set_double("learning_rate", o.snn.learning_rate);
  m.set_double("val_fraction", o.snn.val_fraction);
}

void write_manifest(const CommonFlags& common, const std::string& subcommand,
                    KvConfig m) {
  m.set("subcommand", subcommand);
  m.set("tool_version", kToolVersion);
  m.set_int("session_format_version", 1);
  m.set_int("checkpoint_format_version", 1);
  m.set_int("preprocessor_format_version", 1);
  m.set_int("seed", static_cast<long>(common.seed));
  m.set_int("jobs", common.jobs);
  m.write_file(common.out + "/manifest.cfg");
}

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += v[i];
  }
  return out;
}

std::vector<Session> load_sessions(const std::vector<std::string>& paths) {
  std::vector<Session> out;
  out.reserve(paths.size());
  for (const auto& p : paths) out.push_back(load_session(p));
  return out;
}

void save_predictions_csv(const std::string& path, const Dataset& ds,
                          const std::vector<std::array<float, 2>>& pred) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw std::runtime_error("cannot open " + path);
  std::fprintf(f, "timestamp,pred_x,pred_y,truth_x,truth_y,error_m\n");
  for (size_t i = 0; i < pred.size(); ++i)
    std::fprintf(f, "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", ds.timestamps[i],
                 static_cast<double>(pred[i][0]),
                 static_cast<double>(pred[i][1]),
                 static_cast<double>(ds.targets[i][0]),
                 static_cast<double>(ds.targets[i][1]),
                 euclidean_error(pred[i][0], pred[i][1], ds.targets[i][0],
                                 ds.targets[i][1]));
  std::fclose(f);
}

int run_simulate(const CommonFlags& common, const std::string& scene_path,
                 int n_sessions, const std::string& prefix,
                 const KvConfig& overrides) {
  int rc = 0;
  if (!check_inputs({scene_path}, rc)) return rc;
  KvConfig cfg = KvConfig::parse_file(scene_path);
  for (const auto& [key, value] : overrides.entries()) cfg.set(key, value);
  Scene scene = scene_from_config(cfg);

  fs::create_directories(common.out);
  KvConfig m;
  m.set("scene", scene_path);
  m.set_int("sessions", n_sessions);
  m.set("prefix", prefix);
  for (const auto& [key, value] : cfg.entries()) m.set("scene." + key, value);
  for (int i = 0; i < n_sessions; ++i) {
    Session s = simulate_session(scene, derive_seed(common.seed,
                                                    static_cast<uint64_t>(i)));
    std::string path =
        common.out + "/" + prefix + std::to_string(i) + ".csis";
    save_session(s, path);
    std::printf("wrote %s (%d APs, %zu packets/AP)\n", path.c_str(),
                s.ap_count(), s.packets.empty() ? 0 : s.packets[0].size());
  }
  write_manifest(common, "simulate", std::move(m));
  return 0;
}

int run_preprocess(const CommonFlags& common,
                   const std::vector<std::string>& session_paths,
                   const EvalOptions& opt_in) {
  EvalOptions opt = opt_in;
  opt.jobs = common.jobs;
  int rc = 0;
  if (!check_inputs(session_paths, rc)) return rc;
  std::vector<Session> sessions = load_sessions(session_paths);
  std::vector<ConditionedSession> conditioned(sessions.size());
  parallel_for(sessions.size(), opt.jobs, [&](size_t i) {
    conditioned[i] = condition_session(sessions[i], opt.pre);
  });
  std::vector<const ConditionedSession*> ptrs;
  for (const auto& c : conditioned) ptrs.push_back(&c);
  PreprocessorState state = fit_preprocessor(ptrs, opt.pca_k, opt.pre);

  fs::create_directories(common.out);
  save_preprocessor(state, common.out + "/preprocessor.cspp");
  std::printf("wrote %s/preprocessor.cspp (%zu APs)\n", common.out.c_str(),
              state.amp_pca.size());
  KvConfig m;
  m.set("sessions", join(session_paths));
  put_pipeline(m, opt);
  write_manifest(common, "preprocess", std::move(m));
  return 0;
}

int run_aoa(const CommonFlags& common, const std::string& session_path,
            const EvalOptions& opt_in) {
  EvalOptions opt = opt_in;
  opt.jobs = common.jobs;
  int rc = 0;
  if (!check_inputs({session_path}, rc)) return rc;
  Session session = load_session(session_path);
  ArrayGeometry geom = session_geometry(session);
  std::vector<std::vector<AoaPair>> per_ap(session.packets.size());
  parallel_for(per_ap.size(), opt.jobs, [&](size_t a) {
    per_ap[a] =
        estimate_aoa_stream(session.packets[a], geom, session.rate_hz, opt.aoa);
  });
  fs::create_directories(common.out);
  export_aoa_csv(common.out + "/aoa.csv", per_ap);
  std::printf("wrote %s/aoa.csv (%zu APs)\n", common.out.c_str(),
              per_ap.size());
  KvConfig m;
  m.set("session", session_path);
  put_pipeline(m, opt);
  write_manifest(common, "aoa", std::move(m));
  return 0;
}

int run_train(const CommonFlags& common, const std::string& family_name_str,
              const std::vector<std::string>& session_paths,
              const std::string& val_path, const EvalOptions& opt_in) {
  EvalOptions opt = opt_in;
  opt.jobs = common.jobs;
  opt.seed = common.seed;
  Family family = family_from_string(family_name_str);

  int rc = 0;
  std::vector<std::string> all_paths = session_paths;
  if (!val_path.empty()) all_paths.push_back(val_path);
  if (!check_inputs(all_paths, rc)) return rc;

  std::vector<Session> sessions = load_sessions(session_paths);
  int n_aps = sessions[0].ap_count();
  std::vector<PreparedSession> prepared(sessions.size());
  parallel_for(sessions.size(), opt.jobs, [&](size_t i) {
    prepared[i] = prepare_session(sessions[i], opt);
  });
  std::vector<const ConditionedSession*> cond;
  for (const auto& p : prepared) cond.push_back(&p.conditioned);
  PreprocessorState state = fit_preprocessor(cond, opt.pca_k, opt.pre);

  std::vector<Dataset> parts;
  for (const auto& p : prepared)
    parts.push_back(make_dataset(p, family, state, opt));
  Dataset train_all = concat_datasets(parts);

  TrainConfig cfg = opt.config_for(family);
  cfg.seed = common.seed;
  Dataset train_ds, val_ds;
  if (!val_path.empty()) {
    Session val_session = load_session(val_path);
    PreparedSession vp = prepare_session(val_session, opt);
    val_ds = make_dataset(vp, family, state, opt);
    train_ds = std::move(train_all);
  } else {
    auto split = split_train_val(train_all, cfg.val_fraction, cfg.seed);
    train_ds = std::move(split.first);
    val_ds = std::move(split.second);
  }

  auto net = build_family<float>(family, n_aps, derive_seed(common.seed, 2));
  TrainHistory history = train(net, train_ds, val_ds, cfg);

  fs::create_directories(common.out);
  nn::save_net(common.out + "/model.nnck", net);
  save_history_csv(common.out + "/history.csv", history);
  save_preprocessor(state, common.out + "/preprocessor.cspp");
  std::printf("best epoch %d, val MAE %.4f m-per-coordinate\n",
              history.best_epoch, history.best_val);

  KvConfig m;
  m.set("model", family_name_str);
  m.set("sessions", join(session_paths));
  if (!val_path.empty()) m.set("val", val_path);
  put_pipeline(m, opt);
  write_manifest(common, "train", std::move(m));
  return 0;
}

int run_predict(const CommonFlags& common, const std::string& model_path,
                const std::string& pre_path, const std::string& session_path,
                int smooth, const EvalOptions& opt) {
  int rc = 0;
  if (!check_inputs({model_path, pre_path, session_path}, rc)) return rc;
  auto net = nn::load_net<float>(model_path);
  Family family = family_from_string(net.family);
  PreprocessorState state = load_preprocessor(pre_path);
  Session session = load_session(session_path);
  PreparedSession prepared = prepare_session(session, opt);
  Dataset ds = make_dataset(prepared, family, state, opt);

  int window = smooth > 0 ? smooth : opt.smoothing_for(family);
  auto pred = predict_smoothed(net, ds, window);
  ErrorReport report = error_report(sample_errors(pred, ds.targets));

  fs::create_directories(common.out);
  save_predictions_csv(common.out + "/predictions.csv", ds, pred);
  save_error_cdf_csv(common.out + "/cdf.csv", report);
  std::printf("mean %.4f m, median %.4f m over %zu samples\n", report.mean,
              report.median, report.errors.size());

  KvConfig m;
  m.set("model_file", model_path);
  m.set("preprocessor", pre_path);
  m.set("session", session_path);
  m.set_int("smooth", window);
  put_pipeline(m, opt);
  write_manifest(common, "predict", std::move(m));
  return 0;
}

int run_evaluate(const CommonFlags& common,
                 const std::vector<std::string>& session_paths,
                 const std::vector<std::string>& family_names,
                 const std::string& pattern_path, const EvalOptions& opt_in) {
  EvalOptions opt = opt_in;
  opt.jobs = common.jobs;
  opt.seed = common.seed;
  int rc = 0;
  std::vector<std::string> all_paths = session_paths;
  if (!pattern_path.empty()) all_paths.push_back(pattern_path);
  if (!check_inputs(all_paths, rc)) return rc;

  std::vector<Session> sessions = load_sessions(session_paths);
  fs::create_directories(common.out);

  for (const auto& name : family_names) {
    Family family = family_from_string(name);
    auto folds = loso_cv(sessions, family, opt);
    save_fold_results_csv(common.out + "/loso_" + name + "_folds.csv", folds);
    std::vector<double> pooled;
    double mean_of_means = 0.0;
    for (const auto& fr : folds) {
      pooled.insert(pooled.end(), fr.model.errors.begin(),
                    fr.model.errors.end());
      mean_of_means += fr.model.mean;
      save_history_csv(common.out + "/loso_" + name + "_fold" +
                           std::to_string(fr.fold) + "_history.csv",
                       fr.history);
    }
    mean_of_means /= static_cast<double>(folds.size());
    save_error_cdf_csv(common.out + "/loso_" + name + "_cdf.csv",
                       error_report(std::move(pooled)));
    std::printf("%s: mean fold error %.4f m\n", name.c_str(), mean_of_means);
  }

  if (!pattern_path.empty()) {
    Session pattern = load_session(pattern_path);
    VelocityResult vr = velocity_generalisation(sessions, pattern, opt);
    std::string path = common.out + "/velocity_summary.csv";
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw std::runtime_error("cannot open " + path);
    std::fprintf(f, "family,mean_m,median_m\n");
    const char* fam[3] = {"snn", "cnn", "lstm"};
    for (int i = 0; i < 3; ++i)
      std::fprintf(f, "%s,%.17g,%.17g\n", fam[i], vr.reports[i].mean,
                   vr.reports[i].median);
    std::fclose(f);
    path = common.out + "/velocity_welch.csv";
    f = std::fopen(path.c_str(), "w");
    if (!f) throw std::runtime_error("cannot open " + path);
    std::fprintf(f, "pair,t,dof,p\n");
    std::fprintf(f, "snn_vs_cnn,%.17g,%.17g,%.17g\n", vr.snn_vs_cnn.t,
                 vr.snn_vs_cnn.dof, vr.snn_vs_cnn.p);
    std::fprintf(f, "snn_vs_lstm,%.17g,%.17g,%.17g\n", vr.snn_vs_lstm.t,
                 vr.snn_vs_lstm.dof, vr.snn_vs_lstm.p);
    std::fclose(f);
    std::printf("velocity: snn %.4f m, cnn %.4f m, lstm %.4f m\n",
                vr.reports[0].mean, vr.reports[1].mean, vr.reports[2].mean);
  }

  KvConfig m;
  m.set("sessions", join(session_paths));
  m.set("families", join(family_names));
  if (!pattern_path.empty()) m.set("pattern", pattern_path);
  put_pipeline(m, opt);
  write_manifest(common, "evaluate", std::move(m));
  return 0;
}

int run_ap_study(const CommonFlags& common,
                 const std::vector<std::string>& session_paths, int n_seeds,
                 const EvalOptions& opt_in) {
  EvalOptions opt = opt_in;
  opt.jobs = common.jobs;
  opt.seed = common.seed;
  int rc = 0;
  if (!check_inputs(session_paths, rc)) return rc;
  std::vector<Session> sessions = load_sessions(session_paths);

  ApStudyResult res = ap_subset_study(sessions, opt, n_seeds);
  fs::create_directories(common.out);
  save_ap_study_csv(common.out + "/ap_study_runs.csv",
                    common.out + "/ap_study_summary.csv", res);
  for (int s = 1; s <= 3; ++s)
    std::printf("%d AP(s): snn %.4f m, cnn %.4f m, lstm %.4f m\n", s,
                res.mean[s - 1][0], res.mean[s - 1][1], res.mean[s - 1][2]);

  KvConfig m;
  m.set("sessions", join(session_paths));
  m.set_int("seeds", n_seeds);
  put_pipeline(m, opt);
  write_manifest(common, "ap-study", std::move(m));
  return 0;
}

int run_ablate(const CommonFlags& common,
               const std::vector<std::string>& session_paths,
               const std::string& test_path, const std::string& mode_name,
               int repeats, const EvalOptions& opt_in) {
  EvalOptions opt = opt_in;
  opt.jobs = common.jobs;
  opt.seed = common.seed;
  int rc = 0;
  std::vector<std::string> all_paths = session_paths;
  all_paths.push_back(test_path);
  if (!check_inputs(all_paths, rc)) return rc;

  std::vector<Session> sessions = load_sessions(session_paths);
  Session test_session = load_session(test_path);
  std::vector<PreparedSession> prepared(sessions.size());
  parallel_for(sessions.size(), opt.jobs, [&](size_t i) {
    prepared[i] = prepare_session(sessions[i], opt);
  });
  PreparedSession test_prep = prepare_session(test_session, opt);

  std::vector<const ConditionedSession*> cond;
  for (const auto& p : prepared) cond.push_back(&p.conditioned);
  PreprocessorState state = fit_preprocessor(cond, opt.pca_k, opt.pre);
  std::vector<Dataset> parts;
  for (const auto& p : prepared)
    parts.push_back(make_dataset(p, Family::kSnn, state, opt));
  Dataset train_ds = concat_datasets(parts);
  Dataset test_ds = make_dataset(test_prep, Family::kSnn, state, opt);

  std::vector<AblationMode> modes;
  if (mode_name == "both")
    modes = {AblationMode::kDropData, AblationMode::kDeactivateFeatures};
  else if (mode_name == "drop-data")
    modes = {AblationMode::kDropData};
  else if (mode_name == "deactivate-features")
    modes = {AblationMode::kDeactivateFeatures};
  else
    throw std::invalid_argument("unknown ablation mode: " + mode_name);

  fs::create_directories(common.out);
  for (AblationMode mode : modes) {
    AblationResult res = ablation_study(train_ds, test_ds, mode, opt, repeats);
    std::string tag = ablation_mode_name(mode);
    save_ablation_csv(common.out + "/ablation_" + tag + "_runs.csv",
                      common.out + "/ablation_" + tag + "_summary.csv", res);
    std::printf("%s: rank correlation %.3f, mean error %.4f -> %.4f m\n",
                tag.c_str(), res.spearman, res.mean_per_rate.front(),
                res.mean_per_rate.back());
  }

  KvConfig m;
  m.set("sessions", join(session_paths));
  m.set("test", test_path);
  m.set("mode", mode_name);
  m.set_int("repeats", repeats);
  put_pipeline(m, opt);
  write_manifest(common, "ablate", std::move(m));
  return 0;
}

int run_gradcheck(const std::string& family_name_str, uint64_t seed,
                  int probes, double step, double threshold, int n_aps,
                  int cols, int window, int hidden) {
  Family family = family_from_string(family_name_str);
  nn::Net<double> net;
  switch (family) {
    case Family::kSnn:
      net = build_snn<double>(n_aps, seed);
      break;
    case Family::kCnn:
      net = build_cnn<double>(n_aps, seed, cols, window);
      break;
    case Family::kDeeperCnn:
      net = build_deeper_cnn<double>(n_aps, seed, cols, window);
      break;
    case Family::kLstm:
      net = build_lstm_model<double>(n_aps, seed, hidden, cols, window);
      break;
  }
  std::vector<int> shape = {1};
  shape.insert(shape.end(), net.input_shape.begin(), net.input_shape.end());
  nn::Tensor<double> x(shape);
  Rng rng(derive_seed(seed, 1));
  for (auto& v : x.v) v = rng.uniform(-1.0, 1.0);

  auto res = nn::gradient_check(net, x, seed, static_cast<size_t>(probes),
                                step);
  std::printf("%s: max relative error %.3g over %zu probes\n",
              family_name_str.c_str(), res.max_rel_err, res.probes);
  return res.max_rel_err < threshold ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"WiFi channel-state localisation toolkit"};
  app.require_subcommand(1);

  // simulate
  auto* sim_cmd = app.add_subcommand("simulate", "synthesise CSI sessions");
  CommonFlags sim_common;
  std::string scene_path, sim_prefix = "session";
  int sim_sessions = 1;
  std::vector<std::pair<std::string, std::string>> sim_overrides_raw;
  add_common(sim_cmd, sim_common);
  sim_cmd->add_option("--scene", scene_path, "scene config (key=value)")
      ->required();
  sim_cmd->add_option("--sessions", sim_sessions, "number of sessions");
  sim_cmd->add_option("--prefix", sim_prefix, "output file prefix");
  std::vector<std::string> sim_set;
  sim_cmd->add_option("--set", sim_set,
                      "override a scene key, e.g. --set rate_hz=100");

  // preprocess
  auto* pre_cmd =
      app.add_subcommand("preprocess", "fit and save the feature pipeline");
  CommonFlags pre_common;
  std::vector<std::string> pre_sessions;
  EvalOptions pre_opt;
  add_common(pre_cmd, pre_common);
  pre_cmd->add_option("--sessions", pre_sessions, "session files")
      ->required()
      ->delimiter(',');
  add_pipeline(pre_cmd, pre_opt);

  // aoa
  auto* aoa_cmd =
      app.add_subcommand("aoa", "export smoothed arrival angles to CSV");
  CommonFlags aoa_common;
  std::string aoa_session;
  EvalOptions aoa_opt;
  add_common(aoa_cmd, aoa_common);
  aoa_cmd->add_option("--session", aoa_session, "session file")->required();
  add_pipeline(aoa_cmd, aoa_opt);

  // train
  auto* train_cmd = app.add_subcommand("train", "train one model");
  CommonFlags train_common;
  std::string train_model, train_val;
  std::vector<std::string> train_sessions;
  EvalOptions train_opt;
  add_common(train_cmd, train_common);
  train_cmd->add_option("--model", train_model, "snn|cnn|deeper-cnn|lstm")
      ->required();
  train_cmd->add_option("--sessions", train_sessions, "training session files")
      ->required()
      ->delimiter(',');
  train_cmd->add_option("--val", train_val, "validation session file");
  add_pipeline(train_cmd, train_opt);
  add_training(train_cmd, train_opt);

  // predict
  auto* predict_cmd =
      app.add_subcommand("predict", "run a trained model over a session");
  CommonFlags predict_common;
  std::string predict_model, predict_pre, predict_session;
  int predict_smooth = 0;
  EvalOptions predict_opt;
  add_common(predict_cmd, predict_common);
  predict_cmd->add_option("--model-file", predict_model, "checkpoint file")
      ->required();
  predict_cmd
      ->add_option("--preprocessor", predict_pre, "preprocessor state file")
      ->required();
  predict_cmd->add_option("--session", predict_session, "session file")
      ->required();
  predict_cmd->add_option("--smooth", predict_smooth,
                          "prediction smoothing window (0 = family default)");
  add_pipeline(predict_cmd, predict_opt);

  // evaluate
  auto* eval_cmd = app.add_subcommand(
      "evaluate", "leave-one-session-out study, optional velocity test");
  CommonFlags eval_common;
  std::vector<std::string> eval_sessions;
  std::vector<std::string> eval_families = {"snn", "cnn", "lstm"};
  std::string eval_pattern;
  EvalOptions eval_opt;
  add_common(eval_cmd, eval_common);
  eval_cmd->add_option("--sessions", eval_sessions, "session files")
      ->required()
      ->delimiter(',');
  eval_cmd->add_option("--families", eval_families, "model families")
      ->delimiter(',');
  eval_cmd->add_option("--pattern", eval_pattern,
                       "non-constant-velocity session for the speed study");
  add_pipeline(eval_cmd, eval_opt);
  add_training(eval_cmd, eval_opt);

  // ap-study
  auto* ap_cmd = app.add_subcommand(
      "ap-study", "accuracy with 1, 2 and 3 access points");
  CommonFlags ap_common;
  std::vector<std::string> ap_sessions;
  int ap_seeds = 3;
  EvalOptions ap_opt;
  add_common(ap_cmd, ap_common);
  ap_cmd->add_option("--sessions", ap_sessions, "session files")
      ->required()
      ->delimiter(',');
  ap_cmd->add_option("--seeds", ap_seeds, "seeds to average over");
  add_pipeline(ap_cmd, ap_opt);
  add_training(ap_cmd, ap_opt);

  // ablate
  auto* ablate_cmd = app.add_subcommand(
      "ablate", "training-data and feature degradation sweeps");
  CommonFlags ablate_common;
  std::vector<std::string> ablate_sessions;
  std::string ablate_test, ablate_mode = "both";
  int ablate_repeats = 20;
  EvalOptions ablate_opt;
  add_common(ablate_cmd, ablate_common);
  ablate_cmd
      ->add_option("--sessions", ablate_sessions, "training session files")
      ->required()
      ->delimiter(',');
  ablate_cmd->add_option("--test", ablate_test, "held-out session file")
      ->required();
  ablate_cmd->add_option("--mode", ablate_mode,
                         "drop-data|deactivate-features|both");
  ablate_cmd->add_option("--repeats", ablate_repeats, "repeats per rate");
  add_pipeline(ablate_cmd, ablate_opt);
  add_training(ablate_cmd, ablate_opt);

  // gradcheck
  auto* grad_cmd = app.add_subcommand(
      "gradcheck", "finite-difference check of model gradients");
  std::string grad_model;
  uint64_t grad_seed = 1;
  int grad_probes = 200, grad_naps = 1, grad_cols = 6, grad_window = 4,
      grad_hidden = 128;
  double grad_step = 1e-4, grad_threshold = 1e-4;
  grad_cmd->add_option("--model", grad_model, "snn|cnn|deeper-cnn|lstm")
      ->required();
  grad_cmd->add_option("--seed", grad_seed, "RNG seed");
  grad_cmd->add_option("--probes", grad_probes, "coordinates to probe");
  grad_cmd->add_option("--step", grad_step, "finite-difference step");
  grad_cmd->add_option("--threshold", grad_threshold, "failure threshold");
  grad_cmd->add_option("--n-aps", grad_naps, "access points");
  grad_cmd->add_option("--cols", grad_cols, "input columns");
  grad_cmd->add_option("--window", grad_window, "packets per sample");
  grad_cmd->add_option("--hidden", grad_hidden, "sequence-model hidden size");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    std::fprintf(stderr, "%s\n", app.help().c_str());
    return 2;
  }

  try {
    if (*sim_cmd) {
      KvConfig overrides;
      for (const auto& kv : sim_set) {
        auto pos = kv.find('=');
        if (pos == std::string::npos)
          throw std::invalid_argument("expected key=value in --set: " + kv);
        overrides.set(kv.substr(0, pos), kv.substr(pos + 1));
      }
      return run_simulate(sim_common, scene_path, sim_sessions, sim_prefix,
                          overrides);
    }
    if (*pre_cmd) return run_preprocess(pre_common, pre_sessions, pre_opt);
    if (*aoa_cmd) return run_aoa(aoa_common, aoa_session, aoa_opt);
    if (*train_cmd)
      return run_train(train_common, train_model, train_sessions, train_val,
                       train_opt);
    if (*predict_cmd)
      return run_predict(predict_common, predict_model, predict_pre,
                         predict_session, predict_smooth, predict_opt);
    if (*eval_cmd)
      return run_evaluate(eval_common, eval_sessions, eval_families,
                          eval_pattern, eval_opt);
    if (*ap_cmd) return run_ap_study(ap_common, ap_sessions, ap_seeds, ap_opt);
    if (*ablate_cmd)
      return run_ablate(ablate_common, ablate_sessions, ablate_test,
                        ablate_mode, ablate_repeats, ablate_opt);
    if (*grad_cmd)
      return run_gradcheck(grad_model, grad_seed, grad_probes, grad_step,
                           grad_threshold, grad_naps, grad_cols, grad_window,
                           grad_hidden);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
