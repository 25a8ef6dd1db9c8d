#pragma once

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "mambapupil/training.hpp"

// Declarative run configuration (JSON) with field-path diagnostics.
namespace mambapupil {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& path, const std::string& what)
      : std::runtime_error(path + ": " + what), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

struct DataConfig {
  std::vector<std::string> events;
  std::vector<std::string> labels;
  int sensor_width = 80;
  int sensor_height = 60;
  int label_rate_hz = 100;
};

struct OutputConfig {
  std::string checkpoint = "checkpoint.mpck";
  std::string metrics = "metrics.csv";
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string precision = "float32";  // float32 | float64
  DataConfig data;
  RepresentationConfig representation;
  ModelConfig model;
  TrainConfig train;
  double val_fraction = 0.25;
  OutputConfig output;

  void validate() const {
    auto wrap = [](const std::string& path, auto&& fn) {
      try {
        fn();
      } catch (const std::invalid_argument& e) {
        throw ConfigError(path, e.what());
      }
    };
    if (precision != "float32" && precision != "float64") throw ConfigError("precision", "must be float32 or float64");
    if (!data.labels.empty() && data.events.size() != data.labels.size()) {
      throw ConfigError("data.labels", "must pair one-to-one with data.events");
    }
    if (data.sensor_width < 1 || data.sensor_height < 1) throw ConfigError("data.sensor_width", "must be positive");
    if (data.label_rate_hz < 1) throw ConfigError("data.label_rate_hz", "must be positive");
    wrap("representation", [&] { representation.validate(); });
    wrap("model", [&] { model.validate(); });
    wrap("train", [&] { train.validate(); });
    if (!(val_fraction > 0 && val_fraction < 1)) throw ConfigError("train.val_fraction", "must lie in (0,1)");
    if (representation.channels() != model.in_channels) {
      throw ConfigError("model.in_channels", "is " + std::to_string(model.in_channels) + " but representation '" +
                                                 representation.kind + "' yields " +
                                                 std::to_string(representation.channels()) + " channels");
    }
    if (representation.height != model.height || representation.width != model.width) {
      throw ConfigError("model.height", "model resolution must match representation height/width");
    }
    if (data.sensor_width % representation.width != 0 || data.sensor_height % representation.height != 0) {
      throw ConfigError("representation.width", "sensor size must be an integer multiple of the grid");
    }
    if (data.label_rate_hz % representation.out_rate_hz != 0) {
      throw ConfigError("representation.out_rate_hz", "must divide data.label_rate_hz");
    }
  }
};

namespace config_detail {

using nlohmann::json;

inline std::string join(const std::string& base, const std::string& key) { return base.empty() ? key : base + "." + key; }

/// Reads members of one JSON object, rejecting unknown keys.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }
  ~Reader() noexcept(false) {
    if (std::uncaught_exceptions()) return;
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(join(path_, it.key()), "unknown field");
    }
  }

  template <typename V>
  void get(const std::string& key, V& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    const std::string where = join(path_, key);
    try {
      if constexpr (std::is_same_v<V, bool>) {
        if (!it->is_boolean()) throw ConfigError(where, "expected a boolean");
      } else if constexpr (std::is_integral_v<V>) {
        if (!it->is_number_integer()) throw ConfigError(where, "expected an integer");
      } else if constexpr (std::is_floating_point_v<V>) {
        if (!it->is_number()) throw ConfigError(where, "expected a number");
      } else if constexpr (std::is_same_v<V, std::string>) {
        if (!it->is_string()) throw ConfigError(where, "expected a string");
      }
      out = it->template get<V>();
    } catch (const json::exception& e) {
      throw ConfigError(where, e.what());
    }
  }

  template <typename Fn>
  void section(const std::string& key, Fn&& fn) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    Reader sub(*it, join(path_, key));
    fn(sub);
  }

  const std::string& path() const { return path_; }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename V, std::size_t N>
void get_array(Reader& r, const std::string& key, std::array<V, N>& out) {
  std::vector<V> v(out.begin(), out.end());
  r.get(key, v);
  if (v.size() != N) throw ConfigError(join(r.path(), key), "expected " + std::to_string(N) + " entries");
  std::copy(v.begin(), v.end(), out.begin());
}

}  // namespace config_detail

inline RunConfig parse_run_config(const std::string& text, const std::string& source = "<config>") {
  using config_detail::json;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(source, std::string("invalid JSON: ") + e.what());
  }
  RunConfig c;
  {
    config_detail::Reader r(j, "");
    r.get("seed", c.seed);
    r.get("precision", c.precision);
    r.section("data", [&](auto& d) {
      d.get("events", c.data.events);
      d.get("labels", c.data.labels);
      d.get("sensor_width", c.data.sensor_width);
      d.get("sensor_height", c.data.sensor_height);
      d.get("label_rate_hz", c.data.label_rate_hz);
    });
    r.section("representation", [&](auto& s) {
      auto& rc = c.representation;
      s.get("kind", rc.kind);
      s.get("bits", rc.bits);
      s.get("n_bins", rc.n_bins);
      s.get("window_us", rc.window_us);
      s.get("hop_us", rc.hop_us);
      s.get("height", rc.height);
      s.get("width", rc.width);
      s.get("out_rate_hz", rc.out_rate_hz);
    });
    r.section("model", [&](auto& s) {
      auto& m = c.model;
      std::string variant = to_string(m.variant), pooling = to_string(m.pooling);
      s.get("in_channels", m.in_channels);
      config_detail::get_array(s, "conv_channels", m.conv_channels);
      config_detail::get_array(s, "conv_kernels", m.conv_kernels);
      s.get("gru_hidden", m.gru_hidden);
      s.get("ssm_state_dim", m.ssm_state_dim);
      s.get("dropout", m.dropout);
      s.get("height", m.height);
      s.get("width", m.width);
      s.get("variant", variant);
      s.get("pooling", pooling);
      try {
        m.variant = parse_variant(variant);
      } catch (const std::invalid_argument& e) {
        throw ConfigError("model.variant", e.what());
      }
      try {
        m.pooling = parse_pooling(pooling);
      } catch (const std::invalid_argument& e) {
        throw ConfigError("model.pooling", e.what());
      }
    });
    r.section("segments", [&](auto& s) {
      s.get("seq_len", c.train.segments.seq_len);
      s.get("train_stride", c.train.segments.train_stride);
      s.get("eval_stride", c.train.segments.eval_stride);
    });
    r.section("augment", [&](auto& s) {
      auto& a = c.train.augment;
      s.get("prob_flip", a.prob_flip);
      s.get("prob_shift", a.prob_shift);
      s.get("prob_tshift", a.prob_tshift);
      s.get("prob_cutout", a.prob_cutout);
      s.get("flip_axes", a.flip_axes);
      s.get("max_shift_x", a.max_shift_x);
      s.get("max_shift_y", a.max_shift_y);
      s.get("max_tshift_us", a.max_tshift_us);
      s.get("cutout_min_frac", a.cutout_min_frac);
      s.get("cutout_max_frac", a.cutout_max_frac);
      s.get("cutout_per_timestep", a.cutout_per_timestep);
      s.get("seed", a.seed);
    });
    r.section("schedule", [&](auto& s) {
      auto& l = c.train.schedule;
      s.get("lr_max", l.lr_max);
      s.get("lr_min", l.lr_min);
      s.get("cycle_length", l.cycle_length);
      s.get("cycle_mult", l.cycle_mult);
    });
    r.section("train", [&](auto& s) {
      s.get("epochs", c.train.epochs);
      s.get("batch_size", c.train.batch_size);
      s.get("pixel_width", c.train.pixel_width);
      s.get("pixel_height", c.train.pixel_height);
      s.get("skip_closed", c.train.skip_closed);
      s.get("val_fraction", c.val_fraction);
    });
    r.section("output", [&](auto& s) {
      s.get("checkpoint", c.output.checkpoint);
      s.get("metrics", c.output.metrics);
    });
  }
  c.train.seed = c.seed;
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path, "cannot open config file");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str(), path);
}

/// Serializes every field, so a dumped config reproduces the run.
inline std::string dump_run_config(const RunConfig& c) {
  using config_detail::json;
  const auto& rc = c.representation;
  const auto& m = c.model;
  const auto& a = c.train.augment;
  const auto& l = c.train.schedule;
  json j = {
      {"seed", c.seed},
      {"precision", c.precision},
      {"data",
       {{"events", c.data.events},
        {"labels", c.data.labels},
        {"sensor_width", c.data.sensor_width},
        {"sensor_height", c.data.sensor_height},
        {"label_rate_hz", c.data.label_rate_hz}}},
      {"representation",
       {{"kind", rc.kind},
        {"bits", rc.bits},
        {"n_bins", rc.n_bins},
        {"window_us", rc.window_us},
        {"hop_us", rc.hop_us},
        {"height", rc.height},
        {"width", rc.width},
        {"out_rate_hz", rc.out_rate_hz}}},
      {"model",
       {{"in_channels", m.in_channels},
        {"conv_channels", m.conv_channels},
        {"conv_kernels", m.conv_kernels},
        {"gru_hidden", m.gru_hidden},
        {"ssm_state_dim", m.ssm_state_dim},
        {"dropout", m.dropout},
        {"height", m.height},
        {"width", m.width},
        {"variant", to_string(m.variant)},
        {"pooling", to_string(m.pooling)}}},
      {"segments",
       {{"seq_len", c.train.segments.seq_len},
        {"train_stride", c.train.segments.train_stride},
        {"eval_stride", c.train.segments.eval_stride}}},
      {"augment",
       {{"prob_flip", a.prob_flip},
        {"prob_shift", a.prob_shift},
        {"prob_tshift", a.prob_tshift},
        {"prob_cutout", a.prob_cutout},
        {"flip_axes", a.flip_axes},
        {"max_shift_x", a.max_shift_x},
        {"max_shift_y", a.max_shift_y},
        {"max_tshift_us", a.max_tshift_us},
        {"cutout_min_frac", a.cutout_min_frac},
        {"cutout_max_frac", a.cutout_max_frac},
        {"cutout_per_timestep", a.cutout_per_timestep},
        {"seed", a.seed}}},
      {"schedule",
       {{"lr_max", l.lr_max}, {"lr_min", l.lr_min}, {"cycle_length", l.cycle_length}, {"cycle_mult", l.cycle_mult}}},
      {"train",
       {{"epochs", c.train.epochs},
        {"batch_size", c.train.batch_size},
        {"pixel_width", c.train.pixel_width},
        {"pixel_height", c.train.pixel_height},
        {"skip_closed", c.train.skip_closed},
        {"val_fraction", c.val_fraction}}},
      {"output", {{"checkpoint", c.output.checkpoint}, {"metrics", c.output.metrics}}},
  };
  return j.dump(2) + "\n";
}

/// Small configuration that trains in minutes on one core: 40x30 input
/// grid, narrow encoder, centroid pooling.
inline RunConfig desk_config() {
  RunConfig c;
  c.representation.height = 30;
  c.representation.width = 40;
  c.model.height = 30;
  c.model.width = 40;
  c.model.conv_channels = {8, 16, 32};
  c.model.conv_kernels = {5, 3, 3};
  c.model.gru_hidden = 32;
  c.model.ssm_state_dim = 8;
  c.model.pooling = Pooling::average_centroid;
  c.train.batch_size = 8;
  c.train.segments.train_stride = 15;
  return c;
}

}  // namespace mambapupil
