// hepa: pretrain, finetune, evaluate, sweep, labelcurve, gen-synthetic,
// convert-cmapss. Exit codes: 0 ok, 1 runtime failure, 2 config or I/O error.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "hepa/config.hpp"
#include "hepa/errors.hpp"
#include "hepa/io.hpp"
#include "hepa/labelcurve.hpp"
#include "hepa/theory.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hepa;

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(9) << v;
  return os.str();
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : ""; }

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p);
  if (!out) throw LoadError("cannot write '" + p.string() + "'");
  return out;
}

struct Prepared {
  RunConfig rc;
  Dataset data;
  NetworkConfig net;
};

Prepared prepare(const std::string& config_path) {
  Prepared p;
  p.rc = load_run_config(config_path, data_root_from_env());
  p.data = prepare_dataset(p.rc.dataset);
  p.net = p.rc.network;
  p.net.d_in = token_width(p.rc.dataset, p.data.channels.size());
  p.net.K = p.rc.dataset.K;
  return p;
}

void check_compatible(const NetworkConfig& ckpt, const NetworkConfig& want) {
  if (ckpt.d_in != want.d_in || ckpt.K != want.K) {
    throw ConfigError("checkpoint expects token width " + std::to_string(ckpt.d_in) + " and K=" +
                      std::to_string(ckpt.K) + ", the dataset gives " + std::to_string(want.d_in) + " and K=" +
                      std::to_string(want.K));
  }
}

// ---- pretrain ----

struct PretrainArgs {
  std::string config, out = "run";
  std::optional<std::uint64_t> seed;
};

int cmd_pretrain(const PretrainArgs& a) {
  Prepared p = prepare(a.config);
  PretrainConfig pc = p.rc.pretrain;
  if (a.seed) pc.seed = *a.seed;
  fs::create_directories(a.out);
  auto loss = open_out(fs::path(a.out) / "loss.csv");
  loss << "epoch,train_loss,val_l1,val_sigreg\n";
  PretrainResult r = pretrain(p.data, p.rc.dataset, p.net, pc, [&](const EpochRecord& e) {
    loss << e.epoch << ',' << fmt(e.train_loss) << ',' << fmt(e.val_l1) << ',' << fmt(e.val_sigreg) << '\n';
    loss.flush();
    std::cerr << "epoch " << e.epoch << " train " << fmt(e.train_loss) << " val_l1 " << fmt(e.val_l1) << '\n';
  });
  const std::string hash = config_hash(p.rc.source);
  for (const auto& s : r.snapshots) {
    json meta = {{"epoch", s.epoch}, {"epsilon", s.epsilon}, {"seed", pc.seed}, {"config_hash", hash},
                 {"dataset", p.data.name}, {"channels", p.data.channels}};
    const std::string name = s.best ? "best.ckpt" : "snap_e" + std::to_string(s.epoch) + ".ckpt";
    save_checkpoint((fs::path(a.out) / name).string(), s.model, meta);
  }
  std::cout << "best epoch " << r.best_epoch << " epsilon " << fmt(r.best_epsilon) << '\n';
  return 0;
}

// ---- finetune ----

struct FinetuneArgs {
  std::string config, checkpoint, out = "finetune";
  std::optional<double> label_fraction;
  std::optional<std::string> predictor_init, mode;
  std::optional<std::uint64_t> seed;
  bool shuffle_labels = false;
};

void write_rul(const fs::path& path, const ProbabilitySurface& s, const std::vector<double>& tte) {
  auto out = open_out(path);
  out << "episode,t,time_to_event\n";
  for (std::size_t i = 0; i < s.rows.size(); ++i) {
    out << s.rows[i].episode << ',' << s.rows[i].t << ',' << (std::isnan(tte[i]) ? "" : fmt(tte[i])) << '\n';
  }
}

std::vector<double> read_rul(const std::string& path, const ProbabilitySurface& s) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open '" + path + "'");
  std::string line;
  std::getline(in, line);
  std::vector<double> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) f.push_back(c);
    if (f.size() == 2) f.emplace_back();
    const std::size_t i = out.size();
    if (f.size() != 3 || i >= s.rows.size() || f[0] != s.rows[i].episode || f[1] != std::to_string(s.rows[i].t)) {
      throw LoadError("time-to-event row does not match the surface", line_no);
    }
    try {
      out.push_back(f[2].empty() ? std::nan("") : std::stod(f[2]));
    } catch (const std::exception&) {
      throw LoadError("unparsable time to event", line_no);
    }
  }
  if (out.size() != s.rows.size()) throw LoadError("time-to-event file has fewer rows than the surface", line_no);
  return out;
}

struct EvalArgs {
  std::string surface, out = "eval", rul;
  double threshold = 0.5;
  int f1_horizon = 0;
};

MetricReport evaluate_files(const EvalArgs& a, bool emit) {
  ProbabilitySurface s = read_surface(a.surface);
  EvalOptions opts;
  opts.threshold = a.threshold;
  opts.f1_horizon = a.f1_horizon;
  if (!a.rul.empty()) opts.time_to_event = read_rul(a.rul, s);
  MetricReport r = evaluate_surface(s, opts);
  if (emit) {
    fs::create_directories(a.out);
    write_json((fs::path(a.out) / "report.json").string(), to_json(r));
    write_horizon_csv((fs::path(a.out) / "horizons.csv").string(), r.per_horizon);
    open_out(fs::path(a.out) / "horizons.svg") << horizon_svg(r.per_horizon, "per-horizon AUROC: " + s.dataset);
  }
  return r;
}

int cmd_evaluate(const EvalArgs& a) {
  MetricReport r = evaluate_files(a, true);
  std::cout << "h_auroc " << (r.h_auroc ? fmt(*r.h_auroc) : "undefined") << " over " << r.n_valid_horizons
            << " horizons\n";
  return 0;
}

int cmd_finetune(const FinetuneArgs& a) {
  Prepared p = prepare(a.config);
  Checkpoint ck = load_checkpoint(a.checkpoint);
  check_compatible(ck.model.config, p.net);
  FinetuneConfig fc = p.rc.finetune;
  if (a.label_fraction) fc.label_fraction = *a.label_fraction;
  if (a.predictor_init) fc.predictor_init = parse_predictor_init(*a.predictor_init);
  if (a.mode) fc.mode = parse_finetune_mode(*a.mode);
  if (a.seed) fc.seed = *a.seed;
  fc.shuffle_labels = fc.shuffle_labels || a.shuffle_labels;
  fs::create_directories(a.out);
  auto hist = open_out(fs::path(a.out) / "finetune_history.csv");
  hist << "epoch,train_loss,monitor\n";
  FinetuneResult r = predictor_finetune(p.data, p.rc.dataset, ck.model, fc, [&](const FinetuneEpoch& e) {
    hist << e.epoch << ',' << fmt(e.train_loss) << ',' << fmt(e.monitor) << '\n';
    std::cerr << "epoch " << e.epoch << " loss " << fmt(e.train_loss) << " monitor " << fmt(e.monitor) << '\n';
  });
  if (r.test_surface.rows.empty()) throw ConfigError("test split yields no anchors");
  save_checkpoint((fs::path(a.out) / "finetuned.ckpt").string(), r.model,
                  {{"source", a.checkpoint}, {"best_epoch", r.best_epoch}, {"config_hash", config_hash(p.rc.source)}});

  // The report is computed from the written surface so that `hepa evaluate`
  // on the same files reproduces it exactly.
  EvalArgs ev;
  ev.surface = (fs::path(a.out) / "surface.csv").string();
  ev.out = a.out;
  ev.threshold = r.report.threshold;
  ev.f1_horizon = r.report.f1_horizon;
  write_surface(ev.surface, r.test_surface);
  if (p.rc.dataset.lifecycle) {
    ev.rul = (fs::path(a.out) / "time_to_event.csv").string();
    write_rul(ev.rul, r.test_surface, r.test_time_to_event);
  }
  MetricReport report = evaluate_files(ev, true);
  json j = to_json(report);
  j["labeled_episodes"] = r.labeled_episodes;
  j["validation_episodes"] = r.validation_episodes;
  j["trainable_params"] = r.trainable_params;
  j["w_plus"] = r.w_plus;
  j["best_epoch"] = r.best_epoch;
  j["mode"] = to_string(fc.mode);
  j["predictor_init"] = to_string(fc.predictor_init);
  j["label_fraction"] = fc.label_fraction;
  j["seed"] = fc.seed;
  write_json((fs::path(a.out) / "report.json").string(), j);
  std::cout << "labeled episodes " << r.labeled_episodes << ", trainable params " << r.trainable_params
            << ", h_auroc " << (report.h_auroc ? fmt(*report.h_auroc) : "undefined") << '\n';
  return 0;
}

// ---- sweep ----

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  for (std::string tok; std::getline(ss, tok, ',');) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoull(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw ConfigError("bad seed '" + tok + "'");
    }
  }
  if (out.empty()) throw ConfigError("no seeds given");
  return out;
}

struct SweepArgs {
  std::string config, out = "sweep", seeds;
  bool permutation = false;
};

int cmd_sweep(const SweepArgs& a) {
  Prepared p = prepare(a.config);
  SweepOptions opts;
  opts.seeds = a.seeds.empty() ? p.rc.seeds : parse_seeds(a.seeds);
  opts.permutation = a.permutation;
  fs::create_directories(a.out);
  opts.csv_path = (fs::path(a.out) / "sweep.csv").string();
  SweepReport r = run_sweep(p.data, p.rc.dataset, p.net, p.rc.pretrain, p.rc.finetune, opts, [](const SweepPoint& s) {
    std::cerr << "seed " << s.seed << " epoch " << s.epoch << " epsilon " << fmt(s.epsilon) << " h_auroc "
              << fmt(s.h_auroc) << '\n';
  });
  write_json((fs::path(a.out) / "sweep_report.json").string(), to_json(r));
  std::cout << "spearman rho " << fmt(r.spearman_rho) << " p " << fmt(r.p_value) << " n " << r.n << '\n';
  return 0;
}

// ---- labelcurve ----

struct LabelCurveArgs {
  std::string config, out = "labelcurve", seeds, checkpoint;
};

int cmd_labelcurve(const LabelCurveArgs& a) {
  Prepared p = prepare(a.config);
  const auto seeds = a.seeds.empty() ? p.rc.seeds : parse_seeds(a.seeds);
  std::optional<Checkpoint> ck;
  if (!a.checkpoint.empty()) {
    ck = load_checkpoint(a.checkpoint);
    check_compatible(ck->model.config, p.net);
  }
  LabelCurve c = run_label_curve(p.data, p.rc.dataset, p.net, p.rc.pretrain, p.rc.finetune, seeds, p.rc.fractions,
                                 ck ? &ck->model : nullptr, [](const LabelCurvePoint& pt) {
                                   std::cerr << "seed " << pt.seed << " fraction " << fmt(pt.fraction) << " h_auroc "
                                             << fmt(pt.h_auroc) << '\n';
                                 });
  fs::create_directories(a.out);
  auto runs = open_out(fs::path(a.out) / "labelcurve_runs.csv");
  runs << "fraction,seed,labeled_episodes,h_auroc\n";
  for (const auto& pt : c.points) {
    runs << fmt(pt.fraction) << ',' << pt.seed << ',' << pt.labeled_episodes << ',' << fmt(pt.h_auroc) << '\n';
  }
  auto sum = open_out(fs::path(a.out) / "labelcurve.csv");
  sum << "fraction,h_auroc,retention,n_seeds\n";
  for (const auto& s : c.summary) {
    sum << fmt(s.fraction) << ',' << fmt(s.h_auroc) << ',' << fmt(s.retention) << ',' << s.n_seeds << '\n';
    std::cout << "fraction " << fmt(s.fraction) << " h_auroc " << fmt(s.h_auroc) << " retention "
              << fmt(s.retention) << '\n';
  }
  return 0;
}

// ---- gen-synthetic ----

struct GenArgs {
  std::string config, out;
  std::optional<double> beta;
  std::optional<int> episodes, steps, channels;
  std::optional<std::uint64_t> seed;
  bool lifecycle = false;
};

int cmd_gen_synthetic(const GenArgs& a) {
  SyntheticSpec s;
  if (!a.config.empty()) {
    RunConfig rc = load_run_config(a.config, data_root_from_env());
    if (!rc.dataset.synthetic) throw ConfigError("config '" + a.config + "' has no dataset.synthetic section");
    s = *rc.dataset.synthetic;
  }
  if (a.beta) s.beta = *a.beta;
  if (a.episodes) s.n_episodes = *a.episodes;
  if (a.steps) s.steps = *a.steps;
  if (a.channels) s.channels = *a.channels;
  if (a.seed) s.seed = *a.seed;
  s.lifecycle = s.lifecycle || a.lifecycle;
  auto eps = generate_synthetic(s);
  std::vector<std::string> names;
  for (int c = 0; c < s.channels; ++c) names.push_back("x" + std::to_string(c));
  write_csv(a.out, names, eps);
  std::size_t events = 0;
  for (const auto& e : eps) events += e.event_times.size();
  std::cout << eps.size() << " episodes, " << events << " events written to " << a.out << '\n';
  return 0;
}

// ---- convert-cmapss ----

struct CmapssArgs {
  std::string input, out;
  std::vector<int> sensors = kCmapssSensors;
  bool censored = false;
};

int cmd_convert_cmapss(const CmapssArgs& a) {
  auto eps = read_cmapss(a.input, a.sensors, !a.censored);
  std::vector<std::string> names;
  for (int s : a.sensors) names.push_back("s" + std::to_string(s));
  write_csv(a.out, names, eps);
  std::cout << eps.size() << " units written to " << a.out << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Horizon-conditioned event prediction: pretraining, finetuning and evaluation"};
  app.require_subcommand(1);

  PretrainArgs pa;
  auto* pre = app.add_subcommand("pretrain", "self-supervised pretraining; writes best.ckpt, snap_e*.ckpt, loss.csv");
  pre->add_option("--config", pa.config, "run config JSON")->required();
  pre->add_option("--out", pa.out, "output directory");
  pre->add_option("--seed", pa.seed, "override the pretraining seed");

  FinetuneArgs fa;
  auto* ft = app.add_subcommand("finetune", "survival finetuning on a frozen encoder");
  ft->add_option("--config", fa.config, "run config JSON")->required();
  ft->add_option("--checkpoint", fa.checkpoint, "pretrained checkpoint")->required();
  ft->add_option("--out", fa.out, "output directory");
  ft->add_option("--label-fraction", fa.label_fraction, "fraction of train episodes with labels")
      ->check(CLI::Range(0.0, 1.0));
  ft->add_option("--predictor-init", fa.predictor_init, "pretrained or random");
  ft->add_option("--mode", fa.mode, "pred_ft, probe or frozen_multi");
  ft->add_option("--seed", fa.seed, "override the finetuning seed");
  ft->add_flag("--shuffle-labels", fa.shuffle_labels, "permute label rows (chance-level control)");

  EvalArgs ea;
  auto* ev = app.add_subcommand("evaluate", "metrics, per-horizon CSV and SVG for a surface file");
  ev->add_option("--surface", ea.surface, "surface file")->required();
  ev->add_option("--out", ea.out, "output directory");
  ev->add_option("--threshold", ea.threshold, "decision threshold for F1 and PA-F1");
  ev->add_option("--f1-horizon", ea.f1_horizon, "horizon for threshold F1 (0: K)");
  ev->add_option("--rul", ea.rul, "time-to-event CSV (episode,t,time_to_event) for the RMSE projection");

  SweepArgs sa;
  auto* sw = app.add_subcommand("sweep", "snapshot sweep: Spearman correlation of epsilon and h-AUROC");
  sw->add_option("--config", sa.config, "run config JSON")->required();
  sw->add_option("--out", sa.out, "output directory (sweep.csv is resumed)");
  sw->add_option("--seeds", sa.seeds, "comma-separated seeds, e.g. 0,1,2");
  sw->add_flag("--permutation", sa.permutation, "permutation p-value instead of the t approximation");

  LabelCurveArgs la;
  auto* lc = app.add_subcommand("labelcurve", "h-AUROC and retention across label fractions");
  lc->add_option("--config", la.config, "run config JSON")->required();
  lc->add_option("--out", la.out, "output directory");
  lc->add_option("--seeds", la.seeds, "comma-separated seeds");
  lc->add_option("--checkpoint", la.checkpoint, "reuse one pretrained model instead of pretraining per seed");

  GenArgs ga;
  auto* gen = app.add_subcommand("gen-synthetic", "write a synthetic precursor dataset as CSV");
  gen->add_option("--config", ga.config, "run config with dataset.synthetic");
  gen->add_option("--out", ga.out, "output CSV")->required();
  gen->add_option("--beta", ga.beta, "precursor strength");
  gen->add_option("--episodes", ga.episodes, "number of episodes");
  gen->add_option("--steps", ga.steps, "steps per episode");
  gen->add_option("--channels", ga.channels, "channels");
  gen->add_option("--seed", ga.seed, "generator seed");
  gen->add_flag("--lifecycle", ga.lifecycle, "run each episode to a terminal failure");

  CmapssArgs ca;
  auto* cm = app.add_subcommand("convert-cmapss", "convert a native C-MAPSS text file to CSV");
  cm->add_option("--input", ca.input, "e.g. train_FD001.txt")->required();
  cm->add_option("--out", ca.out, "output CSV")->required();
  cm->add_option("--sensors", ca.sensors, "1-based sensor indices to keep")->delimiter(',');
  cm->add_flag("--censored", ca.censored, "no terminal failure (test files)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*pre) return cmd_pretrain(pa);
    if (*ft) return cmd_finetune(fa);
    if (*ev) return cmd_evaluate(ea);
    if (*sw) return cmd_sweep(sa);
    if (*lc) return cmd_labelcurve(la);
    if (*gen) return cmd_gen_synthetic(ga);
    if (*cm) return cmd_convert_cmapss(ca);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const LoadError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
