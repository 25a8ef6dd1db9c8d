// mambapupil: synthesize, encode, augment, train, evaluate and predict.
//
// Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numeric failure.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mambapupil/config.hpp"
#include "mambapupil/synth.hpp"
#include "mambapupil/training.hpp"

using namespace mambapupil;

namespace {

constexpr const char* kConfigEnv = "MAMBAPUPIL_CONFIG";

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Flags shared by every config-driven command. Unset flags leave the
/// config value alone.
struct Overrides {
  std::string config;
  std::vector<std::string> events, labels;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> precision, variant, checkpoint, metrics;
  std::optional<int> epochs, batch_size, bits;
  std::optional<double> pixel_width, pixel_height;
  bool skip_closed = false;
};

void add_config_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("-c,--config", o.config, std::string("Run config JSON (default: $") + kConfigEnv + ")");
  cmd->add_option("--events", o.events, "Event CSV files (t,x,y,p)");
  cmd->add_option("--labels", o.labels, "Label CSV files (t,cx,cy,closed), one per event file");
  cmd->add_option("--seed", o.seed, "Run seed");
  cmd->add_option("--precision", o.precision, "float32 or float64")->check(CLI::IsMember({"float32", "float64"}));
  cmd->add_option("--variant", o.variant, "Model variant")
      ->check(CLI::IsMember({"full", "uni_gru", "no_ssm", "uni_gru_no_ssm"}));
  cmd->add_option("--checkpoint", o.checkpoint, "Checkpoint path");
  cmd->add_option("--epochs", o.epochs, "Training epochs");
  cmd->add_option("--batch-size", o.batch_size, "Batch size");
  cmd->add_option("--bits", o.bits, "Bina-rep bit count");
  cmd->add_option("--pixel-width", o.pixel_width, "Metric pixel space width");
  cmd->add_option("--pixel-height", o.pixel_height, "Metric pixel space height");
  cmd->add_flag("--skip-closed", o.skip_closed, "Exclude closed-eye samples from metrics");
}

RunConfig resolve_config(const Overrides& o) {
  std::string path = o.config;
  if (path.empty()) {
    if (const char* env = std::getenv(kConfigEnv)) path = env;
  }
  RunConfig c = path.empty() ? RunConfig{} : load_run_config(path);
  if (!o.events.empty() || !o.labels.empty()) {
    c.data.events = o.events;
    c.data.labels = o.labels;
  }
  if (o.seed) c.seed = c.train.seed = *o.seed;
  if (o.precision) c.precision = *o.precision;
  if (o.variant) c.model.variant = parse_variant(*o.variant);
  if (o.checkpoint) c.output.checkpoint = *o.checkpoint;
  if (o.metrics) c.output.metrics = *o.metrics;
  if (o.epochs) c.train.epochs = *o.epochs;
  if (o.batch_size) c.train.batch_size = *o.batch_size;
  if (o.bits) c.representation.bits = *o.bits;
  if (o.pixel_width) c.train.pixel_width = *o.pixel_width;
  if (o.pixel_height) c.train.pixel_height = *o.pixel_height;
  if (o.skip_closed) c.train.skip_closed = true;
  c.validate();
  return c;
}

Resolution sensor_of(const RunConfig& c) { return {c.data.sensor_width, c.data.sensor_height}; }

std::vector<Recording> load_recordings(const RunConfig& c, bool need_labels = true) {
  if (c.data.events.empty()) throw UsageError("no input data: pass --events/--labels or set data.events in the config");
  if (need_labels && c.data.labels.size() != c.data.events.size()) {
    throw UsageError("need one label file per event file");
  }
  std::vector<Recording> recs;
  for (std::size_t i = 0; i < c.data.events.size(); ++i) {
    Recording r;
    r.name = c.data.events[i];
    r.events = load_events(c.data.events[i], sensor_of(c));
    if (need_labels) r.labels = load_labels(c.data.labels[i], sensor_of(c), c.data.label_rate_hz);
    recs.push_back(std::move(r));
  }
  return recs;
}

std::ofstream open_out(const std::string& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(path, mode);
  if (!out) throw IoError("cannot write " + path);
  return out;
}

void finish(std::ofstream& out, const std::string& path) {
  out.flush();
  if (!out) throw IoError("failed writing " + path);
}

// ---- synth -----------------------------------------------------------------

struct SynthArgs {
  std::string preset = "mixed";
  std::uint64_t seed = 0;
  double duration_s = 60;
  int label_rate = 100;
  int width = 80, height = 60;
  double noise = 0;
  bool iris = false;
  std::string events_out, labels_out;
};

int cmd_synth(const SynthArgs& a) {
  synth::SceneModel scene;
  scene.resolution = {a.width, a.height};
  scene.noise_events_per_s = a.noise;
  if (a.iris) scene.iris = synth::IrisRing{};
  if (!(a.duration_s > 0)) throw UsageError("--duration must be positive");
  const auto duration = static_cast<std::int64_t>(std::llround(a.duration_s * 1e6));
  for (const auto& path : {a.events_out, a.labels_out}) open_out(path);
  const auto spec = synth::make_preset(a.preset, scene, duration, a.seed);
  const auto data = synth::generate_dataset(spec, scene, a.label_rate, a.seed);
  save_events(a.events_out, data.events);
  save_labels(a.labels_out, data.labels, scene.resolution);
  std::cerr << "wrote " << data.events.events.size() << " events, " << data.labels.samples.size() << " labels\n";
  return kOk;
}

// ---- encode ----------------------------------------------------------------

int cmd_encode(const Overrides& o, const std::string& out_path) {
  const RunConfig c = resolve_config(o);
  if (c.representation.kind != "bina_rep") throw UsageError("encode writes BREP and needs representation.kind = bina_rep");
  const auto recs = load_recordings(c, false);
  if (recs.size() != 1) throw UsageError("encode takes exactly one event file");
  const auto& rc = c.representation;
  auto out = open_out(out_path, std::ios::binary);
  std::size_t n = 0;
  for (const auto& w : window_stream(recs[0].events, rc.window_us, rc.hop_us)) {
    brep::write(out, encode_bina_rep(w, recs[0].events.resolution, rc.bits, rc.height, rc.width));
    ++n;
  }
  finish(out, out_path);
  std::cerr << "wrote " << n << " windows\n";
  return kOk;
}

// ---- augment-preview -------------------------------------------------------

int cmd_augment_preview(const Overrides& o, int start, const std::string& out_path, const std::string& labels_out) {
  const RunConfig c = resolve_config(o);
  const auto recs = load_recordings(c);
  if (recs.size() != 1) throw UsageError("augment-preview takes exactly one recording");
  const auto prep = prepare(recs[0], c.representation);
  const int len = c.train.segments.seq_len;
  if (start < 0 || start + len > prep.size()) {
    throw UsageError("segment [" + std::to_string(start) + "," + std::to_string(start + len) + ") outside the " +
                     std::to_string(prep.size()) + " available windows");
  }
  auto rng = split_rng(c.train.augment.seed ^ c.seed, static_cast<std::uint64_t>(start));
  const auto [reps, centers] =
      augmented_item(prep, Segment{start, start + len}, c.representation, c.train.augment, rng);

  if (!out_path.empty()) {
    auto out = open_out(out_path, std::ios::binary);
    for (const auto& g : reps) brep::write(out, BinaRep{c.representation.bits, g});
    finish(out, out_path);
  }
  if (!labels_out.empty()) {
    auto out = open_out(labels_out);
    out.precision(17);
    for (std::size_t i = 0; i < centers.size(); ++i) out << i << ',' << centers[i].cx << ',' << centers[i].cy << '\n';
    finish(out, labels_out);
  }
  for (std::size_t i = 0; i < centers.size(); ++i) {
    std::cout << "step " << i << " label " << centers[i].cx << ',' << centers[i].cy << '\n';
  }
  return kOk;
}

// ---- train / eval / predict ------------------------------------------------

template <typename T>
int run_train(const RunConfig& c) {
  const auto recs = load_recordings(c);
  std::vector<PreparedSequence> prep;
  for (const auto& r : recs) prep.push_back(prepare(r, c.representation));
  const auto [tr_idx, va_idx] = split_sequences(prep.size(), c.val_fraction);
  std::vector<PreparedSequence> tr, va;
  for (auto i : tr_idx) tr.push_back(prep[i]);
  for (auto i : va_idx) va.push_back(prep[i]);

  auto metrics = open_out(c.output.metrics);
  metrics << kMetricsHeader << '\n';
  MambaPupil<T> model(c.model, c.seed);
  const auto result = train(model, std::span<const PreparedSequence>(tr), std::span<const PreparedSequence>(va),
                            c.train, c.representation, [&](const EpochLog& l) {
                              metrics << format_metrics_row(l) << '\n';
                              metrics.flush();
                              std::cerr << "epoch " << l.epoch << " train_loss " << l.train_loss << " p10 "
                                        << l.metrics.p10 << " p_error " << l.metrics.p_error << '\n';
                            });
  finish(metrics, c.output.metrics);
  checkpoint::write(c.output.checkpoint, result.best_state);
  std::cerr << "best epoch " << result.best_epoch << ", checkpoint " << c.output.checkpoint << '\n';
  return kOk;
}

template <typename T>
MambaPupil<T> load_model(const RunConfig& c) {
  MambaPupil<T> model(c.model, c.seed);
  model.load_state(checkpoint::read(c.output.checkpoint));
  return model;
}

template <typename T>
int run_eval(const RunConfig& c, const std::string& metrics_out, const std::string& predictions_out) {
  auto model = load_model<T>(c);
  const auto recs = load_recordings(c);
  std::vector<PreparedSequence> prep;
  for (const auto& r : recs) prep.push_back(prepare(r, c.representation));
  const auto ev = evaluate(model, std::span<const PreparedSequence>(prep), c.train);
  const nlohmann::ordered_json j = {{"p5", ev.metrics.p5},
                                    {"p10", ev.metrics.p10},
                                    {"p15", ev.metrics.p15},
                                    {"p_error", ev.metrics.p_error},
                                    {"n", ev.metrics.n}};
  const std::string text = j.dump(2) + "\n";
  if (metrics_out.empty()) {
    std::cout << text;
  } else {
    auto out = open_out(metrics_out);
    out << text;
    finish(out, metrics_out);
  }
  if (!predictions_out.empty()) {
    auto out = open_out(predictions_out);
    for (const auto& sp : ev.sequences) write_predictions(out, sp);
    finish(out, predictions_out);
  }
  return kOk;
}

template <typename T>
int run_predict(const RunConfig& c, const std::string& out_path) {
  auto model = load_model<T>(c);
  const auto recs = load_recordings(c, false);
  const auto& rc = c.representation;
  auto out = open_out(out_path);
  for (const auto& r : recs) {
    SequencePrediction sp;
    GridSequence reps;
    for (const auto& w : window_stream(r.events, rc.window_us, rc.hop_us)) {
      reps.push_back(encode(w, r.events.resolution, rc));
      sp.t.push_back(w.t_end);
    }
    sp.pred = predict_windows(model, reps, c.train.segments);
    write_predictions(out, sp);
  }
  finish(out, out_path);
  return kOk;
}

template <template <typename> class Fn, typename... Args>
int dispatch(const RunConfig& c, Args&&... args) {
  if (c.precision == "float64") return Fn<double>::run(c, std::forward<Args>(args)...);
  return Fn<float>::run(c, std::forward<Args>(args)...);
}

template <typename T>
struct Train {
  static int run(const RunConfig& c) { return run_train<T>(c); }
};
template <typename T>
struct Eval {
  static int run(const RunConfig& c, const std::string& m, const std::string& p) { return run_eval<T>(c, m, p); }
};
template <typename T>
struct Predict {
  static int run(const RunConfig& c, const std::string& p) { return run_predict<T>(c, p); }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Event-based pupil tracking toolkit"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic event recording with labels");
  synth_cmd->add_option("--preset", sa.preset, "fixation, saccade, pursuit, blink or mixed")
      ->check(CLI::IsMember({"fixation", "saccade", "pursuit", "blink", "mixed"}));
  synth_cmd->add_option("--seed", sa.seed, "Generator seed");
  synth_cmd->add_option("--duration", sa.duration_s, "Duration in seconds");
  synth_cmd->add_option("--label-rate", sa.label_rate, "Label rate in Hz");
  synth_cmd->add_option("--width", sa.width, "Sensor width");
  synth_cmd->add_option("--height", sa.height, "Sensor height");
  synth_cmd->add_option("--noise", sa.noise, "Background noise events per second");
  synth_cmd->add_flag("--iris", sa.iris, "Render an iris ring around the pupil");
  synth_cmd->add_option("--events-out", sa.events_out, "Event CSV output")->required();
  synth_cmd->add_option("--labels-out", sa.labels_out, "Label CSV output")->required();

  Overrides enc_o;
  std::string enc_out;
  auto* encode_cmd = app.add_subcommand("encode", "Encode an event file into a BREP stream");
  add_config_flags(encode_cmd, enc_o);
  encode_cmd->add_option("-o,--out", enc_out, "BREP output")->required();

  Overrides aug_o;
  int aug_start = 0;
  std::string aug_out, aug_labels;
  auto* aug_cmd = app.add_subcommand("augment-preview", "Apply one sampled augmentation plan to a segment");
  add_config_flags(aug_cmd, aug_o);
  aug_cmd->add_option("--start", aug_start, "First window of the segment");
  aug_cmd->add_option("-o,--out", aug_out, "BREP output of the augmented segment");
  aug_cmd->add_option("--labels-out", aug_labels, "CSV of augmented labels (step,cx,cy)");

  Overrides tr_o;
  std::string dump_config;
  auto* train_cmd = app.add_subcommand("train", "Train a model; writes a checkpoint and a metrics CSV");
  add_config_flags(train_cmd, tr_o);
  train_cmd->add_option("--metrics", tr_o.metrics, "Metrics CSV output");
  train_cmd->add_option("--dump-config", dump_config, "Write the resolved config to this path");

  Overrides ev_o;
  std::string ev_metrics, ev_pred;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint; writes metrics JSON and predictions CSV");
  add_config_flags(eval_cmd, ev_o);
  eval_cmd->add_option("--metrics-out", ev_metrics, "Metrics JSON output (default stdout)");
  eval_cmd->add_option("--predictions-out", ev_pred, "Predictions CSV output (t,cx,cy)");

  Overrides pr_o;
  std::string pr_out;
  auto* predict_cmd = app.add_subcommand("predict", "Predict pupil centers for unlabeled events");
  add_config_flags(predict_cmd, pr_o);
  predict_cmd->add_option("-o,--out", pr_out, "Predictions CSV output (t,cx,cy)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    if (*synth_cmd) return cmd_synth(sa);
    if (*encode_cmd) return cmd_encode(enc_o, enc_out);
    if (*aug_cmd) return cmd_augment_preview(aug_o, aug_start, aug_out, aug_labels);
    if (*train_cmd) {
      const RunConfig c = resolve_config(tr_o);
      if (!dump_config.empty()) {
        auto out = open_out(dump_config);
        out << dump_run_config(c);
        finish(out, dump_config);
      }
      return dispatch<Train>(c);
    }
    if (*eval_cmd) {
      return dispatch<Eval>(resolve_config(ev_o), ev_metrics, ev_pred);
    }
    if (*predict_cmd) {
      return dispatch<Predict>(resolve_config(pr_o), pr_out);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << '\n';
    return kData;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}
