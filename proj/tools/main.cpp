// stmotion: data synthesis, training, evaluation, rollout and benchmarks for
// the spatio-temporal motion transformer.

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iomanip>
#include <limits>
#include <random>

#include "cli_io.hpp"
#include "stmotion/bench.hpp"
#include "stmotion/errors.hpp"
#include "stmotion/metrics.hpp"
#include "stmotion/model.hpp"
#include "stmotion/runtime.hpp"
#include "stmotion/training.hpp"

namespace {

namespace fs = std::filesystem;
namespace st = stmotion;
namespace motion = stmotion::motion;
namespace model = stmotion::model;
namespace metrics = stmotion::metrics;
namespace training = stmotion::training;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;
constexpr std::size_t kGiB = std::size_t{1} << 30;

std::ofstream open_out(const std::string& path, bool binary = false) {
  if (const fs::path parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw st::ConfigError("cannot write " + path);
  return out;
}

// ---- synth -------------------------------------------------------------------

struct SynthArgs {
  std::string skeleton = "default";
  std::size_t frames = 7200;
  double fps = 60;
  std::string spec;
  std::uint64_t seed = 7;
  double noise = 0.001;
  double amplitude = 0.5;
  std::string frequencies = "1,0.5";
  std::string out;
};

int run_synth(const SynthArgs& a) {
  if (a.frames == 0) throw st::ConfigError("--frames must be positive");
  auto skeleton = std::make_shared<const motion::Skeleton>(
      a.skeleton == "default" ? motion::Skeleton::desk() : cli::read_skeleton_text(a.skeleton));
  std::mt19937_64 rng(a.seed);
  std::vector<motion::JointMotion> spec =
      a.spec.empty()
          ? motion::random_periodic_spec(skeleton->joint_count(), cli::parse_number_list(a.frequencies), a.amplitude, rng)
          : cli::read_motion_spec(a.spec, *skeleton);
  motion::MotionSequence seq = [&] {
    try {
      return motion::synth_motion(skeleton, a.frames, a.fps, spec, a.noise, rng);
    } catch (const st::ParameterError& e) {
      throw st::ConfigError(e.what());
    }
  }();
  motion::save_motion(a.out, seq);
  std::cout << "wrote " << a.out << ": T=" << seq.frames() << " N=" << seq.joints() << " fps=" << seq.frame_rate()
            << '\n';
  return kExitOk;
}

// ---- shared model / training options -------------------------------------------

struct ModelArgs {
  model::ModelConfig cfg;
  std::string variant = "st";
  std::string tau = "softmax";
  std::string sharing = "query_separate";

  void add(CLI::App* app) {
    app->add_option("--variant", variant, "st | vanilla_1d | full_2d")->capture_default_str();
    app->add_option("--tau", tau, "softmax | sum")->capture_default_str();
    app->add_option("--sharing", sharing, "query_separate | all_separate | all_shared")->capture_default_str();
    app->add_option("--layers", cfg.layers, "attention blocks")->capture_default_str();
    app->add_option("--heads", cfg.heads, "attention heads")->capture_default_str();
    app->add_option("--embed", cfg.embed, "joint embedding size")->capture_default_str();
    app->add_option("--ff-size", cfg.ff_size, "feed-forward hidden width")->capture_default_str();
    app->add_option("--window", cfg.window, "input window in frames")->capture_default_str();
    app->add_option("--dropout", cfg.dropout, "dropout rate")->capture_default_str();
    app->add_flag("--ff-per-branch", cfg.ff_per_branch, "separate feed-forward and norm per attention branch");
  }

  model::ModelConfig resolve(std::size_t joints) {
    cfg.variant = model::parse_variant(variant);
    cfg.tau = model::parse_tau(tau);
    cfg.sharing = model::parse_sharing(sharing);
    cfg.joints = joints;
    cfg.validate();
    return cfg;
  }
};

// ---- train -------------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string val_data;
  double val_fraction = 0.1;
  std::string out_dir = "run";
  ModelArgs model;
  training::TrainConfig train;
  double memory_budget_gib = 2.0;
};

int run_train(TrainArgs& a) {
  const auto all = cli::load_sequences(a.data);
  std::vector<motion::MotionSequence> train_set, val_set;
  if (a.val_data.empty()) {
    cli::split_tail(all, a.val_fraction, train_set, val_set);
  } else {
    train_set = all;
    val_set = cli::load_sequences(a.val_data);
  }
  const model::ModelConfig cfg = a.model.resolve(all.front().joints());
  for (const auto& s : all)
    if (!(s.skeleton() == all.front().skeleton())) throw st::ConfigError("training files use different skeletons");
  const std::size_t budget = static_cast<std::size_t>(a.memory_budget_gib * static_cast<double>(kGiB));
  const std::size_t need = model::estimate_workspace_elements(cfg, a.train.batch_size) * sizeof(float);
  if (need > budget)
    throw st::ConfigError("configuration needs about " + std::to_string(need >> 20) + " MiB of workspace, budget is " +
                          std::to_string(budget >> 20) + " MiB; reduce --window, --batch or --layers");

  fs::create_directories(a.out_dir);
  const std::string best_path = (fs::path(a.out_dir) / "best.ckpt").string();
  const std::string final_path = (fs::path(a.out_dir) / "final.ckpt").string();
  const std::string history_path = (fs::path(a.out_dir) / "history.csv").string();
  const model::Model init(cfg, a.train.seed);
  std::cout << "training " << model::to_string(cfg.variant) << " model with " << init.parameter_count()
            << " parameters on " << train_set.size() << " sequences\n";
  const training::TrainResult result = training::train(
      init, train_set, val_set, a.train, [&](const model::Model& best, std::size_t step) {
        model::save_checkpoint(best_path, best);
        std::cout << "step " << step << ": new best checkpoint\n";
      });
  {
    std::ofstream out = open_out(history_path);
    training::write_history_csv(out, result.history);
  }
  model::save_checkpoint(final_path, result.last);
  if (val_set.empty()) model::save_checkpoint(best_path, result.best);
  std::cout << "steps=" << result.history.size() << " best_step=" << result.best_step;
  if (std::isfinite(result.best_val_geodesic)) std::cout << " best_val_geodesic=" << result.best_val_geodesic;
  std::cout << (result.stopped_early ? " (early stop)" : "") << '\n';
  return kExitOk;
}

// ---- eval --------------------------------------------------------------------

struct EvalArgs {
  std::string data;
  std::string checkpoint;
  std::string horizons = "100,200,300,400";
  std::string out = "metrics.csv";
  std::size_t max_windows = 256;
  bool self_check = false;
  double seconds = 0;
  std::size_t reference_windows = 2000;
  std::string longterm_out;
  std::uint64_t seed = 1;
};

int run_eval(const EvalArgs& a) {
  const auto seqs = cli::load_sequences(a.data);
  const model::Model net = model::load_checkpoint(a.checkpoint);
  const model::ModelConfig& cfg = net.config();
  if (seqs.front().joints() != cfg.joints)
    throw st::ConfigError("checkpoint expects " + std::to_string(cfg.joints) + " joints, data has " +
                          std::to_string(seqs.front().joints()));
  const double fps = seqs.front().frame_rate();
  const std::vector<double> horizons = cli::parse_number_list(a.horizons);
  std::size_t max_frames = 0;
  for (double h : horizons) max_frames = std::max(max_frames, metrics::ms_to_frames(h, fps));
  const training::HeldOut held = training::held_out_windows(seqs, cfg.window, max_frames, a.max_windows);
  const motion::Skeleton& skeleton = seqs.front().skeleton();

  const st::nd::Tensor pred = a.self_check ? held.targets : model::rollout(net, held.seeds, max_frames);
  const st::nd::Tensor zero = metrics::zero_velocity(held.seeds, max_frames);
  const auto model_rows = metrics::evaluate(pred, held.targets, skeleton, horizons, fps);
  const auto zero_rows = metrics::evaluate(zero, held.targets, skeleton, horizons, fps);
  {
    std::ofstream out = open_out(a.out);
    out << std::setprecision(std::numeric_limits<double>::max_digits10);
    out << "method," << metrics::kReportCsvHeader << '\n';
    for (const auto& [name, rows] : {std::pair{"model", &model_rows}, std::pair{"zero_velocity", &zero_rows}})
      for (const auto& r : *rows)
        out << name << ',' << r.horizon_ms << ',' << r.euler << ',' << r.geodesic << ',' << r.positional_mm << ','
            << r.pck_auc << '\n';
  }
  std::cout << "wrote " << a.out << " (" << held.seeds.dim(0) << " windows)\n";

  if (a.seconds > 0) {
    const std::size_t second = static_cast<std::size_t>(std::llround(fps));
    const std::size_t steps = static_cast<std::size_t>(std::llround(a.seconds * fps));
    std::vector<motion::MotionSequence> reference;
    std::mt19937_64 rng(a.seed);
    std::vector<std::pair<std::size_t, std::size_t>> starts;
    for (std::size_t s = 0; s < seqs.size(); ++s)
      for (std::size_t t = 0; t + second <= seqs[s].frames(); t += second) starts.emplace_back(s, t);
    std::shuffle(starts.begin(), starts.end(), rng);
    for (std::size_t i = 0; i < std::min(a.reference_windows, starts.size()); ++i)
      reference.push_back(seqs[starts[i].first].slice(starts[i].second, second));
    const metrics::PSDistribution ref = metrics::ps_of_windows(reference);
    auto first_seed = [&](const st::nd::Tensor& t) {
      const std::size_t frame = t.numel() / (t.dim(0) * t.dim(1));
      return st::nd::Tensor({1, t.dim(1), t.dim(2), t.dim(3)},
                            std::vector<st::Real>(t.data().begin(), t.data().begin() + static_cast<std::ptrdiff_t>(t.dim(1) * frame)));
    };
    const st::nd::Tensor seed = first_seed(held.seeds);
    auto to_sequence = [&](const st::nd::Tensor& t) {
      return motion::MotionSequence(seqs.front().skeleton_ptr(), fps, t.dim(1),
                                    std::vector<float>(t.data().begin(), t.data().end()));
    };
    const auto model_curve = metrics::longterm_eval(to_sequence(model::rollout(net, seed, steps)), ref);
    const auto zero_curve = metrics::longterm_eval(to_sequence(metrics::zero_velocity(seed, steps)), ref);
    const std::string path = a.longterm_out.empty() ? fs::path(a.out).replace_extension("").string() + "_longterm.csv"
                                                    : a.longterm_out;
    std::ofstream out = open_out(path);
    out << std::setprecision(std::numeric_limits<double>::max_digits10);
    out << "method," << metrics::kLongTermCsvHeader << '\n';
    for (const auto& [name, curve] : {std::pair{"model", &model_curve}, std::pair{"zero_velocity", &zero_curve}})
      for (std::size_t s = 0; s < curve->ps_kld.size(); ++s)
        out << name << ',' << s + 1 << ',' << curve->ps_kld[s] << ',' << curve->ps_entropy[s] << '\n';
    std::cout << "wrote " << path << '\n';
  }
  return kExitOk;
}

// ---- rollout -----------------------------------------------------------------

struct RolloutArgs {
  std::string checkpoint;
  std::string seed_file;
  double seconds = 20;
  std::string out = "rollout.stm";
  std::string dump_attention;
};

int run_rollout(const RolloutArgs& a) {
  const model::Model net = model::load_checkpoint(a.checkpoint);
  const model::ModelConfig& cfg = net.config();
  const motion::MotionSequence seed_seq = motion::load_motion(a.seed_file);
  if (seed_seq.joints() != cfg.joints)
    throw st::ConfigError("checkpoint expects " + std::to_string(cfg.joints) + " joints, seed has " +
                          std::to_string(seed_seq.joints()));
  if (seed_seq.frames() > cfg.window)
    throw st::ConfigError("seed has " + std::to_string(seed_seq.frames()) + " frames, model window is " +
                          std::to_string(cfg.window));
  if (!(a.seconds > 0)) throw st::ConfigError("--seconds must be positive");
  const std::size_t steps = static_cast<std::size_t>(std::llround(a.seconds * seed_seq.frame_rate()));
  const st::nd::Tensor seed = motion::to_tensor(std::span<const motion::MotionSequence>(&seed_seq, 1));

  std::ofstream attention;
  model::AttentionObserver observer;
  if (!a.dump_attention.empty()) {
    attention = open_out(a.dump_attention);
    attention << "step," << model::kAttentionCsvHeader << '\n';
    observer = [&](std::size_t step, const model::AttentionMaps& maps) {
      model::dump_attention(attention, maps, std::to_string(step));
    };
  }
  const st::nd::Tensor frames = model::rollout(net, seed, steps, observer);
  motion::MotionSequence out(seed_seq.skeleton_ptr(), seed_seq.frame_rate(), steps,
                             std::vector<float>(frames.data().begin(), frames.data().end()));
  out.validate();
  motion::save_motion(a.out, out);
  std::cout << "wrote " << a.out << ": " << steps << " frames\n";
  return kExitOk;
}

// ---- bench -------------------------------------------------------------------

struct BenchArgs {
  std::string variant = "both";
  std::string grid;
  std::string out = "bench.csv";
  ModelArgs model;
  std::size_t steps = 1;
  std::uint64_t seed = 1;
  double memory_budget_gib = 2.0;
};

int run_bench(BenchArgs& a) {
  std::vector<model::Variant> variants;
  if (a.variant == "both") {
    variants = {model::Variant::st, model::Variant::full_2d};
  } else {
    variants = {model::parse_variant(a.variant)};
  }
  const auto grid = a.grid.empty() ? st::bench::default_grid() : st::bench::parse_grid(a.grid);
  const std::size_t budget = static_cast<std::size_t>(a.memory_budget_gib * static_cast<double>(kGiB));
  std::vector<st::bench::BenchRow> rows;
  for (const auto& point : grid)
    for (model::Variant v : variants) {
      a.model.variant = model::to_string(v);
      model::ModelConfig cfg = a.model.resolve(motion::Skeleton::desk().joint_count());
      cfg.window = point.window;
      rows.push_back(st::bench::run_point(cfg, point, budget, a.steps, a.seed));
      const auto& r = rows.back();
      std::cout << model::to_string(v) << " L" << point.layers << "-W" << point.window << "-B" << point.batch << ": ";
      if (r.oom) {
        std::cout << "OOM (estimated " << r.estimated_workspace << " elements)\n";
      } else {
        std::cout << r.scores_per_token << " scores/token, peak " << r.peak_workspace << " elements, "
                  << r.seconds_per_step << " s/step\n";
      }
    }
  std::ofstream out = open_out(a.out);
  st::bench::write_bench_csv(out, rows);
  return kExitOk;
}

// Reads `key = value` lines (INI syntax, `#` comments) into option arguments
// placed ahead of the command line, so explicit flags win under TakeLast.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  if (args.empty()) return args;
  std::vector<std::string> rest{args.front()}, injected;
  for (std::size_t i = 1; i < args.size(); ++i) {
    std::string path;
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
    } else {
      rest.push_back(args[i]);
      continue;
    }
    if (!fs::is_regular_file(path)) throw st::ConfigError("cannot read config file " + path);
    for (const CLI::ConfigItem& item : CLI::ConfigINI().from_file(path)) {
      if (!item.parents.empty() && item.parents != std::vector<std::string>{args.front()}) continue;
      std::string name = item.name;
      std::replace(name.begin(), name.end(), '_', '-');
      if (item.inputs.size() == 1 && (item.inputs[0] == "true" || item.inputs[0] == "false")) {
        if (item.inputs[0] == "true") injected.push_back("--" + name);
        continue;
      }
      injected.push_back("--" + name);
      injected.insert(injected.end(), item.inputs.begin(), item.inputs.end());
    }
  }
  rest.insert(rest.begin() + 1, injected.begin(), injected.end());
  return rest;
}

}  // namespace

int main(int argc, char** argv) {
  st::tune_allocator();
  CLI::App app{"Spatio-temporal transformer for skeletal motion prediction"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every command");
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  std::string config_file;

  SynthArgs synth;
  CLI::App* c_synth = app.add_subcommand("synth", "Generate synthetic periodic motion");
  c_synth->add_option("--config", config_file, "`key = value` file; command-line flags take precedence");
  c_synth->add_option("--skeleton", synth.skeleton, "`default` or a skeleton text file")->capture_default_str();
  c_synth->add_option("--frames", synth.frames, "frame count")->capture_default_str();
  c_synth->add_option("--fps", synth.fps, "frame rate")->capture_default_str();
  c_synth->add_option("--spec", synth.spec, "per-joint motion spec file (random spec when omitted)");
  c_synth->add_option("--seed", synth.seed, "random seed")->capture_default_str();
  c_synth->add_option("--noise", synth.noise, "angle noise std (rad)")->capture_default_str();
  c_synth->add_option("--amplitude", synth.amplitude, "max amplitude of random specs (rad)")->capture_default_str();
  c_synth->add_option("--frequencies", synth.frequencies, "frequencies of random specs (Hz)")->capture_default_str();
  c_synth->add_option("--out", synth.out, "output STM1 file")->required();

  TrainArgs train;
  CLI::App* c_train = app.add_subcommand("train", "Train a model");
  c_train->add_option("--config", config_file, "`key = value` file; command-line flags take precedence");
  c_train->add_option("--data", train.data, "comma-separated STM1 files")->required();
  c_train->add_option("--val-data", train.val_data, "held-out STM1 files (default: tail of each sequence)");
  c_train->add_option("--val-fraction", train.val_fraction, "tail fraction held out")->capture_default_str();
  c_train->add_option("--out-dir", train.out_dir, "output directory")->capture_default_str();
  train.model.add(c_train);
  c_train->add_option("--batch", train.train.batch_size, "batch size")->capture_default_str();
  c_train->add_option("--warmup", train.train.warmup, "learning-rate warmup steps")->capture_default_str();
  c_train->add_option("--steps", train.train.max_steps, "maximum training steps")->capture_default_str();
  c_train->add_option("--clip", train.train.max_grad_norm, "global gradient norm limit")->capture_default_str();
  c_train->add_option("--eval-every", train.train.eval_every, "steps between validations")->capture_default_str();
  c_train->add_option("--patience", train.train.patience, "validations without gain before stopping")
      ->capture_default_str();
  c_train->add_option("--reverse-prob", train.train.reverse_prob, "time-reversal probability")->capture_default_str();
  c_train->add_option("--mirror-prob", train.train.mirror_prob, "mirroring probability")->capture_default_str();
  c_train->add_option("--val-horizon", train.train.val_horizon, "validation rollout frames")->capture_default_str();
  c_train->add_option("--val-windows", train.train.val_windows, "validation windows")->capture_default_str();
  c_train->add_option("--threads", train.train.threads, "worker threads (0: ST_MOTION_THREADS)")
      ->capture_default_str();
  c_train->add_option("--seed", train.train.seed, "random seed")->capture_default_str();
  c_train->add_option("--memory-budget", train.memory_budget_gib, "workspace budget in GiB")->capture_default_str();

  EvalArgs eval;
  CLI::App* c_eval = app.add_subcommand("eval", "Evaluate a checkpoint against the zero-velocity baseline");
  c_eval->add_option("--config", config_file, "`key = value` file; command-line flags take precedence");
  c_eval->add_option("--data", eval.data, "comma-separated STM1 files")->required();
  c_eval->add_option("--checkpoint", eval.checkpoint, "model checkpoint")->required();
  c_eval->add_option("--horizons", eval.horizons, "horizons in ms")->capture_default_str();
  c_eval->add_option("--out", eval.out, "metric CSV")->capture_default_str();
  c_eval->add_option("--max-windows", eval.max_windows, "evaluation windows")->capture_default_str();
  c_eval->add_flag("--self-check", eval.self_check, "score the targets against themselves");
  c_eval->add_option("--seconds", eval.seconds, "long-term rollout length for PS metrics (0: skip)")
      ->capture_default_str();
  c_eval->add_option("--reference-windows", eval.reference_windows, "one-second reference clips")
      ->capture_default_str();
  c_eval->add_option("--longterm-out", eval.longterm_out, "long-term CSV (default: <out>_longterm.csv)");
  c_eval->add_option("--seed", eval.seed, "reference sampling seed")->capture_default_str();

  RolloutArgs roll;
  CLI::App* c_roll = app.add_subcommand("rollout", "Autoregressive prediction from a seed sequence");
  c_roll->add_option("--config", config_file, "`key = value` file; command-line flags take precedence");
  c_roll->add_option("--checkpoint", roll.checkpoint, "model checkpoint")->required();
  c_roll->add_option("--seed-file", roll.seed_file, "STM1 seed sequence")->required();
  c_roll->add_option("--seconds", roll.seconds, "prediction length")->capture_default_str();
  c_roll->add_option("--out", roll.out, "output STM1 file")->capture_default_str();
  c_roll->add_option("--dump-attention", roll.dump_attention, "per-step attention CSV");

  BenchArgs bench;
  bench.model.cfg.embed = 16;
  bench.model.cfg.heads = 2;
  bench.model.cfg.ff_size = 32;
  CLI::App* c_bench = app.add_subcommand("bench", "Compare ST and full 2D attention cost");
  c_bench->add_option("--config", config_file, "`key = value` file; command-line flags take precedence");
  c_bench->add_option("--variant", bench.variant, "st | full_2d | both")->capture_default_str();
  c_bench->add_option("--grid", bench.grid, "configurations, e.g. \"L4-W80-B32;L8-W120-B5\"");
  c_bench->add_option("--out", bench.out, "benchmark CSV")->capture_default_str();
  c_bench->add_option("--heads", bench.model.cfg.heads, "attention heads")->capture_default_str();
  c_bench->add_option("--embed", bench.model.cfg.embed, "joint embedding size")->capture_default_str();
  c_bench->add_option("--ff-size", bench.model.cfg.ff_size, "feed-forward hidden width")->capture_default_str();
  c_bench->add_option("--steps", bench.steps, "timed steps per configuration")->capture_default_str();
  c_bench->add_option("--seed", bench.seed, "random seed")->capture_default_str();
  c_bench->add_option("--memory-budget", bench.memory_budget_gib, "workspace budget in GiB")->capture_default_str();

  try {
    std::vector<std::string> args = expand_config({argv + 1, argv + argc});
    std::reverse(args.begin(), args.end());  // CLI11 consumes from the back
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  } catch (const st::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (c_synth->parsed()) return run_synth(synth);
    if (c_train->parsed()) return run_train(train);
    if (c_eval->parsed()) return run_eval(eval);
    if (c_roll->parsed()) return run_rollout(roll);
    if (c_bench->parsed()) return run_bench(bench);
  } catch (const st::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const st::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const st::FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const st::ParameterError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return kExitUsage;
}
