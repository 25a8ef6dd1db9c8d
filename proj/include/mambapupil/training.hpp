#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mambapupil/augmentation.hpp"
#include "mambapupil/checkpoint.hpp"
#include "mambapupil/event_core.hpp"
#include "mambapupil/model.hpp"
#include "mambapupil/optim.hpp"
#include "mambapupil/representations.hpp"

namespace mambapupil {

/// Non-finite loss or prediction.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SegmentSpec {
  int seq_len = 45;
  int train_stride = 5;
  int eval_stride = 45;

  void validate() const {
    if (seq_len < 1) throw std::invalid_argument("segments.seq_len must be >= 1");
    if (train_stride < 1 || train_stride > seq_len) throw std::invalid_argument("segments.train_stride must be in [1, seq_len]");
    if (eval_stride < 1 || eval_stride > seq_len) throw std::invalid_argument("segments.eval_stride must be in [1, seq_len]");
  }
};

struct Segment {
  int start = 0;
  int end = 0;  // exclusive
  friend bool operator==(const Segment&, const Segment&) = default;
};

/// Starts 0, stride, 2*stride, ... while start + seq_len <= n_windows.
inline std::vector<Segment> make_segments(int n_windows, int seq_len, int stride) {
  if (seq_len < 1 || stride < 1) throw std::invalid_argument("segment length and stride must be positive");
  if (n_windows < seq_len) {
    throw std::invalid_argument("sequence of " + std::to_string(n_windows) + " windows is shorter than segment length " +
                                std::to_string(seq_len));
  }
  std::vector<Segment> out;
  for (int s = 0; s + seq_len <= n_windows; s += stride) out.push_back({s, s + seq_len});
  return out;
}

inline std::vector<Segment> make_segments(int n_windows, const SegmentSpec& spec) {
  return make_segments(n_windows, spec.seq_len, spec.train_stride);
}

/// sqrt of the mean squared error over all 2L coordinates.
inline double segment_loss(std::span<const Center> pred, std::span<const Center> label) {
  if (pred.size() != label.size() || pred.empty()) throw std::invalid_argument("segment_loss: shape mismatch");
  double acc = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double dx = pred[i].cx - label[i].cx, dy = pred[i].cy - label[i].cy;
    acc += dx * dx + dy * dy;
  }
  return std::sqrt(acc / (2.0 * static_cast<double>(pred.size())));
}

/// Batched, differentiable form: mean over B of the per-segment loss of
/// (B, L, 2) tensors. `eps` keeps the square-root derivative finite at zero.
template <typename T>
Tensor<T> segment_loss(const Tensor<T>& pred, const Tensor<T>& target, T eps = T(1e-12)) {
  if (pred.shape() != target.shape() || pred.rank() != 3 || pred.dim(2) != 2) {
    throw ShapeError("segment_loss expects equal (B,L,2) shapes, got " + shape_str(pred.shape()) + " and " +
                     shape_str(target.shape()));
  }
  const int b = pred.dim(0), l = pred.dim(1);
  Tensor<T> sq = reshape(square(sub(pred, target)), {b, 2 * l});
  return mean(sqrt(add_scalar(mean_last(sq), eps)));
}

struct TrackingMetrics {
  double p5 = 0;
  double p10 = 0;
  double p15 = 0;
  double p_error = 0;
  std::size_t n = 0;
};

/// Pixel distances after clamping predictions to [0,1] and scaling both
/// coordinates by the pixel space. Thresholds are inclusive.
inline TrackingMetrics compute_metrics(std::span<const Center> pred, std::span<const Center> label,
                                       double pixel_width = 80, double pixel_height = 60) {
  if (pred.size() != label.size()) throw std::invalid_argument("compute_metrics: size mismatch");
  TrackingMetrics m;
  std::size_t c5 = 0, c10 = 0, c15 = 0;
  double total = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double dx = (std::clamp(pred[i].cx, 0.0, 1.0) - label[i].cx) * pixel_width;
    const double dy = (std::clamp(pred[i].cy, 0.0, 1.0) - label[i].cy) * pixel_height;
    const double d = std::sqrt(dx * dx + dy * dy);
    c5 += d <= 5.0;
    c10 += d <= 10.0;
    c15 += d <= 15.0;
    total += d;
    ++m.n;
  }
  if (m.n == 0) return m;
  const auto n = static_cast<double>(m.n);
  m.p5 = static_cast<double>(c5) / n;
  m.p10 = static_cast<double>(c10) / n;
  m.p15 = static_cast<double>(c15) / n;
  m.p_error = total / n;
  return m;
}

struct RepresentationConfig {
  std::string kind = "bina_rep";  // bina_rep | frame | voxel
  int bits = 4;
  int n_bins = 5;
  std::int64_t window_us = 50'000;
  std::int64_t hop_us = 50'000;
  int height = 60;
  int width = 80;
  int out_rate_hz = 20;

  int channels() const { return kind == "voxel" ? n_bins : 2; }

  void validate() const {
    if (kind != "bina_rep" && kind != "frame" && kind != "voxel") {
      throw std::invalid_argument("representation.kind must be bina_rep, frame or voxel");
    }
    if (kind == "bina_rep" && (bits < 1 || bits > 30)) throw std::invalid_argument("representation.bits must be in [1,30]");
    if (kind == "voxel" && n_bins < 1) throw std::invalid_argument("representation.n_bins must be >= 1");
    if (window_us <= 0 || hop_us <= 0) throw std::invalid_argument("representation window and hop must be positive");
    if (height < 1 || width < 1) throw std::invalid_argument("representation size must be positive");
    if (out_rate_hz < 1) throw std::invalid_argument("representation.out_rate_hz must be positive");
  }
};

inline Grid encode(const Window& w, Resolution sensor, const RepresentationConfig& rc) {
  if (rc.kind == "bina_rep") return encode_bina_rep(w, sensor, rc.bits, rc.height, rc.width).grid;
  if (rc.kind == "frame") return encode_frame(w, sensor, rc.height, rc.width).grid;
  return encode_voxel(w, sensor, rc.n_bins, rc.height, rc.width).grid;
}

/// A recording: events plus its label track.
struct Recording {
  std::string name;
  EventStream events;
  LabelTrack labels;
};

/// Windows whose end falls on or before the last label sample.
inline int window_count(const LabelTrack& track, const RepresentationConfig& rc) {
  if (track.samples.empty()) return 0;
  const std::int64_t last = track.samples.back().t;
  if (last < rc.window_us) return 0;
  return static_cast<int>((last - rc.window_us) / rc.hop_us + 1);
}

/// A recording encoded at its nominal window grid, ready for batching.
struct PreparedSequence {
  const Recording* source = nullptr;
  GridSequence reps;
  std::vector<AlignedLabel> labels;
  std::vector<std::int64_t> t_end;

  int size() const { return static_cast<int>(reps.size()); }
};

inline PreparedSequence prepare(const Recording& rec, const RepresentationConfig& rc) {
  rc.validate();
  PreparedSequence p;
  p.source = &rec;
  const int n = window_count(rec.labels, rc);
  const auto windows = window_span(rec.events, 0, rc.window_us, rc.hop_us, static_cast<std::size_t>(n));
  p.labels = align_labels(rec.labels, windows, rc.out_rate_hz);
  for (const auto& w : windows) {
    p.reps.push_back(encode(w, rec.events.resolution, rc));
    p.t_end.push_back(w.t_end);
  }
  return p;
}

/// Encodes `count` windows of a recording starting at `origin`, with labels.
inline std::pair<GridSequence, std::vector<AlignedLabel>> encode_span(const Recording& rec, const RepresentationConfig& rc,
                                                                      std::int64_t origin, int count) {
  const auto windows = window_span(rec.events, origin, rc.window_us, rc.hop_us, static_cast<std::size_t>(count));
  GridSequence reps;
  for (const auto& w : windows) reps.push_back(encode(w, rec.events.resolution, rc));
  return {std::move(reps), align_labels(rec.labels, windows, rc.out_rate_hz)};
}

struct TrainConfig {
  int epochs = 1000;
  int batch_size = 32;
  SegmentSpec segments;
  LrSchedule schedule;
  AugmentConfig augment;
  std::uint64_t seed = 0;
  double pixel_width = 80;
  double pixel_height = 60;
  bool skip_closed = false;

  void validate() const {
    if (epochs < 1) throw std::invalid_argument("train.epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("train.batch_size must be >= 1");
    segments.validate();
    schedule.validate();
    augment.validate();
    if (!(pixel_width > 0) || !(pixel_height > 0)) throw std::invalid_argument("train.pixel_space must be positive");
  }
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  TrackingMetrics metrics;
};

struct SequencePrediction {
  std::vector<std::int64_t> t;
  std::vector<Center> pred;
  std::vector<Center> label;
  std::vector<bool> closed;
};

struct EvalResult {
  double loss = 0;  // mean segment loss over evaluated segments
  TrackingMetrics metrics;
  std::vector<SequencePrediction> sequences;
};

namespace detail {

template <typename T>
Tensor<T> pack_reps(const std::vector<const GridSequence*>& seqs, int start, int len) {
  const Grid& g0 = (*seqs.front())[static_cast<std::size_t>(start)];
  Tensor<T> x({static_cast<int>(seqs.size()), len, g0.channels, g0.height, g0.width});
  auto d = x.data();
  std::size_t k = 0;
  for (const auto* s : seqs)
    for (int t = start; t < start + len; ++t)
      for (double v : (*s)[static_cast<std::size_t>(t)].data) d[k++] = static_cast<T>(v);
  return x;
}

inline void check_finite(double v, const std::string& what) {
  if (!std::isfinite(v)) throw NumericError("non-finite " + what);
}

inline std::vector<Segment> eval_tiling(int n, int L, int stride) {
  std::vector<Segment> segs;
  if (n < L) {
    if (n > 0) segs.push_back({0, n});
  } else {
    segs = make_segments(n, L, stride);
    if (segs.back().end < n) segs.push_back({n - L, n});
  }
  return segs;
}

}  // namespace detail

/// Eval-mode predictions for an unlabeled representation sequence, tiled
/// the same way as evaluate().
template <typename T>
std::vector<Center> predict_windows(MambaPupil<T>& model, const GridSequence& reps, const SegmentSpec& spec) {
  NoGradGuard guard;
  const int n = static_cast<int>(reps.size());
  std::vector<Center> pred(static_cast<std::size_t>(n));
  int covered = 0;
  for (const auto& seg : detail::eval_tiling(n, spec.seq_len, spec.eval_stride)) {
    const int len = seg.end - seg.start;
    Tensor<T> out = model.predict(detail::pack_reps<T>({&reps}, seg.start, len), Mode::eval);
    for (int t = std::max(0, covered - seg.start); t < len; ++t) {
      const Center c{static_cast<double>(out[static_cast<std::size_t>(2 * t)]),
                     static_cast<double>(out[static_cast<std::size_t>(2 * t + 1)])};
      detail::check_finite(c.cx + c.cy, "prediction");
      pred[static_cast<std::size_t>(seg.start + t)] = c;
    }
    covered = std::max(covered, seg.end);
  }
  return pred;
}

/// Eval-mode predictions for every window. Sequences are tiled by
/// non-overlapping segments; a remainder is covered by one extra segment
/// aligned to the end whose already-covered outputs are discarded.
template <typename T>
EvalResult evaluate(MambaPupil<T>& model, std::span<const PreparedSequence> seqs, const TrainConfig& cfg) {
  NoGradGuard guard;
  EvalResult result;
  double loss_sum = 0;
  std::size_t loss_count = 0;
  std::vector<Center> all_pred, all_label;
  const int L = cfg.segments.seq_len;
  for (const auto& s : seqs) {
    SequencePrediction sp;
    const int n = s.size();
    sp.pred.assign(static_cast<std::size_t>(n), Center{});
    const auto segs = detail::eval_tiling(n, L, cfg.segments.eval_stride);
    int covered = 0;
    for (const auto& seg : segs) {
      const int len = seg.end - seg.start;
      Tensor<T> out = model.predict(detail::pack_reps<T>({&s.reps}, seg.start, len), Mode::eval);
      std::vector<Center> pred, label;
      for (int t = 0; t < len; ++t) {
        const Center c{static_cast<double>(out[static_cast<std::size_t>(2 * t)]),
                       static_cast<double>(out[static_cast<std::size_t>(2 * t + 1)])};
        detail::check_finite(c.cx + c.cy, "prediction");
        pred.push_back(c);
        const auto& a = s.labels[static_cast<std::size_t>(seg.start + t)];
        label.push_back({a.cx, a.cy});
        if (seg.start + t >= covered) sp.pred[static_cast<std::size_t>(seg.start + t)] = c;
      }
      covered = std::max(covered, seg.end);
      loss_sum += segment_loss(pred, label);
      ++loss_count;
    }
    for (int t = 0; t < n; ++t) {
      const auto& a = s.labels[static_cast<std::size_t>(t)];
      sp.t.push_back(s.t_end[static_cast<std::size_t>(t)]);
      sp.label.push_back({a.cx, a.cy});
      sp.closed.push_back(a.closed);
      if (cfg.skip_closed && a.closed) continue;
      all_pred.push_back(sp.pred[static_cast<std::size_t>(t)]);
      all_label.push_back({a.cx, a.cy});
    }
    result.sequences.push_back(std::move(sp));
  }
  result.loss = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
  result.metrics = compute_metrics(all_pred, all_label, cfg.pixel_width, cfg.pixel_height);
  return result;
}

struct TrainResult {
  std::vector<EpochLog> log;
  int best_epoch = 0;
  std::vector<checkpoint::Record> best_state;
};

/// One augmented training item: the (possibly re-windowed) sequence slice.
template <typename Rng>
std::pair<GridSequence, CenterSequence> augmented_item(const PreparedSequence& s, const Segment& seg,
                                                       const RepresentationConfig& rc, const AugmentConfig& aug,
                                                       Rng& rng) {
  const int len = seg.end - seg.start;
  const int H = rc.height, W = rc.width;
  const AugmentPlan plan = sample_plan(aug, len, H, W, rng);
  GridSequence reps;
  std::vector<AlignedLabel> labels;
  if (plan.tshift_us != 0) {
    const auto& track = s.source->labels;
    const std::int64_t nominal = static_cast<std::int64_t>(seg.start) * rc.hop_us;
    const std::int64_t lo = track.samples.front().t - rc.window_us;
    const std::int64_t hi = track.samples.back().t - rc.window_us - static_cast<std::int64_t>(len - 1) * rc.hop_us;
    const std::int64_t origin = std::clamp(nominal + plan.tshift_us, std::min(lo, nominal), std::max(hi, nominal));
    std::tie(reps, labels) = encode_span(*s.source, rc, origin, len);
  } else {
    reps.assign(s.reps.begin() + seg.start, s.reps.begin() + seg.end);
    labels.assign(s.labels.begin() + seg.start, s.labels.begin() + seg.end);
  }
  CenterSequence centers;
  for (const auto& a : labels) centers.push_back({a.cx, a.cy});
  return apply_plan(plan, std::move(reps), std::move(centers));
}

/// Segment-batched training with augmentation, Adam and the warm-restart
/// schedule. Validation runs after every epoch; the model ends holding the
/// parameters of the epoch with the lowest validation p_error.
template <typename T>
TrainResult train(MambaPupil<T>& model, std::span<const PreparedSequence> train_set,
                  std::span<const PreparedSequence> val_set, const TrainConfig& cfg, const RepresentationConfig& rc,
                  const std::function<void(const EpochLog&)>& on_epoch = {}) {
  cfg.validate();
  rc.validate();
  struct Item {
    std::size_t seq;
    Segment seg;
  };
  std::vector<Item> items;
  for (std::size_t i = 0; i < train_set.size(); ++i)
    for (const auto& seg : make_segments(train_set[i].size(), cfg.segments)) items.push_back({i, seg});
  if (items.empty()) throw std::invalid_argument("no training segments");

  AdamState<T> adam;
  auto params = model.params().tensors();
  TrainResult result;
  double best = std::numeric_limits<double>::infinity();
  std::vector<std::vector<T>> best_values;
  auto snapshot = [&] {
    std::vector<std::vector<T>> out;
    for (const auto& [_, t] : model.params().entries()) out.emplace_back(t.data().begin(), t.data().end());
    for (const auto& [_, t] : model.buffers().entries()) out.emplace_back(t.data().begin(), t.data().end());
    return out;
  };

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const T lr = static_cast<T>(lr_at(cfg.schedule, epoch - 1));
    auto order_rng = split_rng(cfg.seed, static_cast<std::uint64_t>(epoch));
    std::vector<std::size_t> order(items.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), order_rng);
    model.reseed_dropout(order_rng());

    double loss_sum = 0;
    std::size_t loss_n = 0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size));
      std::vector<GridSequence> reps;
      std::vector<CenterSequence> targets;
      for (std::size_t k = b; k < e; ++k) {
        const Item& it = items[order[k]];
        auto rng = split_rng(cfg.augment.seed ^ cfg.seed, (static_cast<std::uint64_t>(epoch) << 32) | order[k]);
        auto [r, c] = augmented_item(train_set[it.seq], it.seg, rc, cfg.augment, rng);
        reps.push_back(std::move(r));
        targets.push_back(std::move(c));
      }
      std::vector<const GridSequence*> ptrs;
      for (const auto& r : reps) ptrs.push_back(&r);
      const int len = static_cast<int>(reps.front().size());
      Tensor<T> x = detail::pack_reps<T>(ptrs, 0, len);
      Tensor<T> y({static_cast<int>(targets.size()), len, 2});
      std::size_t k = 0;
      for (const auto& seq : targets)
        for (const auto& c : seq) {
          y[k++] = static_cast<T>(c.cx);
          y[k++] = static_cast<T>(c.cy);
        }
      model.params().zero_grad();
      Tensor<T> loss = segment_loss(model.predict(x, Mode::train), y);
      const double lv = static_cast<double>(loss.item());
      if (!std::isfinite(lv)) {
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(b / static_cast<std::size_t>(cfg.batch_size)));
      }
      backward(loss);
      adam_step(params, adam, lr);
      loss_sum += lv * static_cast<double>(e - b);
      loss_n += e - b;
    }

    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_sum / static_cast<double>(loss_n);
    const auto ev = evaluate(model, val_set, cfg);
    log.val_loss = ev.loss;
    log.metrics = ev.metrics;
    detail::check_finite(log.val_loss, "validation loss at epoch " + std::to_string(epoch));
    if (log.metrics.p_error < best || best_values.empty()) {
      best = log.metrics.p_error;
      result.best_epoch = epoch;
      best_values = snapshot();
    }
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);
  }

  std::size_t i = 0;
  for (auto& [_, t] : model.params().entries()) std::copy(best_values[i].begin(), best_values[i].end(), t.data().begin()), ++i;
  for (auto& [_, t] : model.buffers().entries()) std::copy(best_values[i].begin(), best_values[i].end(), t.data().begin()), ++i;
  result.best_state = model.state_records();
  return result;
}

inline std::string format_metrics_row(const EpochLog& l) {
  std::ostringstream os;
  os << std::setprecision(17) << l.epoch << ',' << l.train_loss << ',' << l.val_loss << ',' << l.metrics.p5 << ','
     << l.metrics.p10 << ',' << l.metrics.p15 << ',' << l.metrics.p_error;
  return os.str();
}

inline constexpr const char* kMetricsHeader = "epoch,train_loss,val_loss,p5,p10,p15,p_error";

inline void write_predictions(std::ostream& os, const SequencePrediction& sp) {
  os << std::setprecision(17);
  for (std::size_t i = 0; i < sp.t.size(); ++i) os << sp.t[i] << ',' << sp.pred[i].cx << ',' << sp.pred[i].cy << '\n';
}

/// Sequence-level split: the last quarter (at least one) validates. A single
/// recording is used for both.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_sequences(std::size_t n, double val_fraction = 0.25) {
  std::vector<std::size_t> tr, va;
  if (n == 0) return {tr, va};
  if (n == 1) return {{0}, {0}};
  auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(n) * val_fraction));
  n_val = std::clamp<std::size_t>(n_val, 1, n - 1);
  for (std::size_t i = 0; i < n; ++i) (i < n - n_val ? tr : va).push_back(i);
  return {tr, va};
}

}  // namespace mambapupil
