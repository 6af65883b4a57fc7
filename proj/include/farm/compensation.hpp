#pragma once

// Per-channel temperature-drift compensation. Each channel owns a small
// feed-forward network mapping (normalized raw, normalized ambient temperature)
// to a predicted relative bias c; the corrected value is raw / (1 + c).

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "farm/chamber.hpp"
#include "farm/telemetry.hpp"

namespace farm {

enum class Activation : std::uint8_t { linear, tanh };

inline std::string_view to_string(Activation a) { return a == Activation::tanh ? "tanh" : "linear"; }

struct DenseLayer {
  std::size_t inputs = 0;
  std::size_t outputs = 0;
  std::vector<double> w;  // outputs x inputs, row-major
  std::vector<double> b;
  Activation act = Activation::linear;

  DenseLayer() = default;
  DenseLayer(std::size_t in, std::size_t out, Activation a) : inputs(in), outputs(out), w(in * out, 0.0), b(out, 0.0), act(a) {}

  std::size_t parameter_count() const { return w.size() + b.size(); }

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

class Network {
 public:
  Network() = default;
  explicit Network(std::vector<DenseLayer> layers) : layers_(std::move(layers)) { check(); }

  // 2 -> hidden (tanh) -> 1 (linear); all parameters zero.
  static Network standard(std::size_t hidden = 8) {
    return Network({DenseLayer(2, hidden, Activation::tanh), DenseLayer(hidden, 1, Activation::linear)});
  }

  // Single linear layer 2 -> 1.
  static Network linear() { return Network({DenseLayer(2, 1, Activation::linear)}); }

  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& layers() { return layers_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.parameter_count();
    return n;
  }

  // Flattened as [layer0.w, layer0.b, layer1.w, ...].
  std::vector<double> parameters() const {
    std::vector<double> p;
    p.reserve(parameter_count());
    for (const auto& l : layers_) {
      p.insert(p.end(), l.w.begin(), l.w.end());
      p.insert(p.end(), l.b.begin(), l.b.end());
    }
    return p;
  }

  void set_parameters(std::span<const double> p) {
    if (p.size() != parameter_count()) throw std::invalid_argument("parameter vector has wrong size");
    auto it = p.begin();
    for (auto& l : layers_) {
      std::copy_n(it, l.w.size(), l.w.begin());
      it += static_cast<std::ptrdiff_t>(l.w.size());
      std::copy_n(it, l.b.size(), l.b.begin());
      it += static_cast<std::ptrdiff_t>(l.b.size());
    }
  }

  bool all_finite() const {
    for (const auto& l : layers_)
      for (const auto* v : {&l.w, &l.b})
        for (double x : *v)
          if (!std::isfinite(x)) return false;
    return true;
  }

  double evaluate(double x0, double x1) const {
    std::array<double, 2> in = {x0, x1};
    std::vector<double> cur(in.begin(), in.end()), next;
    for (const auto& l : layers_) {
      next.assign(l.outputs, 0.0);
      for (std::size_t o = 0; o < l.outputs; ++o) {
        double z = l.b[o];
        const double* row = &l.w[o * l.inputs];
        for (std::size_t i = 0; i < l.inputs; ++i) z += row[i] * cur[i];
        next[o] = l.act == Activation::tanh ? std::tanh(z) : z;
      }
      cur.swap(next);
    }
    return cur[0];
  }

  friend bool operator==(const Network&, const Network&) = default;

 private:
  void check() const {
    if (layers_.empty()) throw std::invalid_argument("network needs at least one layer");
    if (layers_.front().inputs != 2) throw std::invalid_argument("network input dimension must be 2");
    if (layers_.back().outputs != 1) throw std::invalid_argument("network output dimension must be 1");
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& l = layers_[i];
      if (l.w.size() != l.inputs * l.outputs || l.b.size() != l.outputs)
        throw std::invalid_argument("layer parameter shape mismatch");
      if (i + 1 < layers_.size() && layers_[i + 1].inputs != l.outputs)
        throw std::invalid_argument("layer dimensions do not chain");
    }
  }

  std::vector<DenseLayer> layers_;
};

struct Normalization {
  double raw_mean = 0.0;
  double raw_scale = 1.0;
  double tamb_mean = 25.0;
  double tamb_scale = 1.0;

  friend bool operator==(const Normalization&, const Normalization&) = default;
};

struct ChannelModel {
  Channel channel = Channel::co2;
  Normalization norm;
  Network net = Network::standard();
  double train_mse = 0.0;
  double val_mse = 0.0;

  double predict_bias(double raw, double t_amb) const {
    return net.evaluate((raw - norm.raw_mean) / norm.raw_scale, (t_amb - norm.tamb_mean) / norm.tamb_scale);
  }

  friend bool operator==(const ChannelModel&, const ChannelModel&) = default;
};

struct CompModel {
  std::array<std::optional<ChannelModel>, kChannelCount> channels{};

  const std::optional<ChannelModel>& operator[](Channel c) const { return channels[index_of(c)]; }
  std::optional<ChannelModel>& operator[](Channel c) { return channels[index_of(c)]; }

  std::size_t size() const {
    return static_cast<std::size_t>(std::count_if(channels.begin(), channels.end(), [](const auto& m) { return m.has_value(); }));
  }

  friend bool operator==(const CompModel&, const CompModel&) = default;
};

struct Correction {
  Reading reading;
  bool clamped = false;
};

inline Correction correct(const ChannelModel& m, double raw, double t_amb, std::int64_t timestamp = 0) {
  Correction out;
  out.reading = {m.channel, 0.0, timestamp, Quality::fault};
  if (!std::isfinite(raw) || !std::isfinite(t_amb)) return out;
  const double c = m.predict_bias(raw, t_amb);
  if (!std::isfinite(c) || 1.0 + c <= 0.0) return out;
  double v = raw / (1.0 + c);
  const auto& meta = channel_meta(m.channel);
  if (v < meta.min || v > meta.max) {
    v = std::clamp(v, meta.min, meta.max);
    out.clamped = true;
  }
  out.reading.value = v;
  out.reading.quality = Quality::corrected;
  return out;
}

// Corrects one channel; a channel without a model passes through (clamped).
inline Correction forward(const CompModel& model, Channel channel, double raw, double t_amb, std::int64_t timestamp = 0) {
  if (const auto& m = model[channel]) return correct(*m, raw, t_amb, timestamp);
  ChannelModel identity;
  identity.channel = channel;
  identity.net = Network::linear();
  return correct(identity, raw, t_amb, timestamp);
}

// ---------------------------------------------------------------------------
// Calibration data

struct CalibSample {
  Channel channel = Channel::co2;
  double raw = 0.0;
  double t_amb = 25.0;
  double truth = 0.0;

  double target_bias() const { return raw / truth - 1.0; }
};

// Truth ranges the calibration sweep covers, chosen away from zero so that
// relative bias is well defined.
inline constexpr std::array<std::pair<double, double>, kChannelCount> kCalibrationRanges = {{
    {400.0, 2000.0},
    {10.0, 40.0},
    {30.0, 95.0},
    {10.0, 40.0},
    {20.0, 80.0},
    {5.5, 7.5},
    {2000.0, 20000.0},
    {2000.0 / 120.0, 20000.0 / 120.0},
}};

inline std::vector<double> linspace(double lo, double hi, std::size_t n) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = n == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  return v;
}

// Cell centres of an n-point partition of [lo, hi]; never coincides with linspace(lo, hi, n).
inline std::vector<double> midpoints(double lo, double hi, std::size_t n) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = lo + (hi - lo) * (static_cast<double>(i) + 0.5) / static_cast<double>(n);
  return v;
}

struct CalibrationSweep {
  std::vector<double> t_amb_grid;
  std::array<std::vector<double>, kChannelCount> truth_grid;  // all the same length
  SensorParams sensor_params = SensorParams::defaults();
  std::uint64_t seed = 1;

  static CalibrationSweep uniform(std::size_t t_points, std::size_t truth_points, std::uint64_t seed, bool held_out = false) {
    CalibrationSweep s;
    s.seed = seed;
    s.t_amb_grid = held_out ? midpoints(10.0, 40.0, t_points) : linspace(10.0, 40.0, t_points);
    for (Channel c : kAllChannels) {
      auto [lo, hi] = kCalibrationRanges[index_of(c)];
      s.truth_grid[index_of(c)] = held_out ? midpoints(lo, hi, truth_points) : linspace(lo, hi, truth_points);
    }
    return s;
  }
};

// One sense() call per (t_amb, truth index) grid point yields one sample per channel.
inline std::array<std::vector<CalibSample>, kChannelCount> generate_calibration(const CalibrationSweep& sweep) {
  const std::size_t n_truth = sweep.truth_grid[0].size();
  if (sweep.t_amb_grid.empty() || n_truth == 0) throw std::invalid_argument("calibration grids must be non-empty");
  for (const auto& g : sweep.truth_grid)
    if (g.size() != n_truth) throw std::invalid_argument("truth grids must have equal length");

  std::mt19937_64 rng(sweep.seed);
  std::array<std::vector<CalibSample>, kChannelCount> out;
  for (auto& v : out) v.reserve(sweep.t_amb_grid.size() * n_truth);

  for (double t_amb : sweep.t_amb_grid) {
    AmbientConditions amb;
    amb.t_amb = t_amb;
    for (std::size_t k = 0; k < n_truth; ++k) {
      ChamberState s;
      s.co2 = sweep.truth_grid[index_of(Channel::co2)][k];
      s.t_air = sweep.truth_grid[index_of(Channel::air_temp)][k];
      s.rh = sweep.truth_grid[index_of(Channel::air_humidity)][k];
      s.t_soil = sweep.truth_grid[index_of(Channel::soil_temp)][k];
      s.moisture = sweep.truth_grid[index_of(Channel::soil_moisture)][k];
      s.ph_true = sweep.truth_grid[index_of(Channel::ph)][k];
      s.lux = sweep.truth_grid[index_of(Channel::illumination)][k];
      s.radiation = sweep.truth_grid[index_of(Channel::solar_radiation)][k];
      const ReadingSet rs = sense(s, sweep.sensor_params, amb, rng);
      for (Channel c : kAllChannels) {
        const double truth = s.truth(c);
        if (!in_range(c, truth)) throw std::invalid_argument("calibration truth outside plausible range");
        out[index_of(c)].push_back({c, rs[c].value, t_amb, truth});
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loss and gradient

namespace detail {

// Reusable activations for one forward/backward pass.
struct Workspace {
  std::vector<std::vector<double>> act;    // act[0] = input, act[i+1] = output of layer i
  std::vector<std::vector<double>> delta;  // dL/dz per layer
  std::vector<std::size_t> offset;         // first flat parameter index per layer

  explicit Workspace(const Network& net) {
    act.resize(net.layers().size() + 1);
    delta.resize(net.layers().size());
    act[0].assign(2, 0.0);
    std::size_t off = 0;
    for (std::size_t i = 0; i < net.layers().size(); ++i) {
      act[i + 1].assign(net.layers()[i].outputs, 0.0);
      delta[i].assign(net.layers()[i].outputs, 0.0);
      offset.push_back(off);
      off += net.layers()[i].parameter_count();
    }
  }
};

inline double forward_pass(const Network& net, Workspace& ws, double x0, double x1) {
  ws.act[0][0] = x0;
  ws.act[0][1] = x1;
  const auto& layers = net.layers();
  for (std::size_t li = 0; li < layers.size(); ++li) {
    const auto& l = layers[li];
    const auto& in = ws.act[li];
    auto& out = ws.act[li + 1];
    for (std::size_t o = 0; o < l.outputs; ++o) {
      double z = l.b[o];
      const double* row = &l.w[o * l.inputs];
      for (std::size_t i = 0; i < l.inputs; ++i) z += row[i] * in[i];
      out[o] = l.act == Activation::tanh ? std::tanh(z) : z;
    }
  }
  return ws.act.back()[0];
}

// Accumulates d(scale * err^2)/dparams into grad (same layout as Network::parameters()).
inline void backward_pass(const Network& net, Workspace& ws, double dloss_dout, std::span<double> grad) {
  const auto& layers = net.layers();
  for (std::size_t li = layers.size(); li-- > 0;) {
    const auto& l = layers[li];
    auto& d = ws.delta[li];
    const auto& out = ws.act[li + 1];
    if (li + 1 == layers.size()) {
      d[0] = dloss_dout;
    } else {
      const auto& nl = layers[li + 1];
      const auto& nd = ws.delta[li + 1];
      for (std::size_t i = 0; i < l.outputs; ++i) {
        double s = 0.0;
        for (std::size_t o = 0; o < nl.outputs; ++o) s += nl.w[o * nl.inputs + i] * nd[o];
        d[i] = s;
      }
    }
    if (l.act == Activation::tanh)
      for (std::size_t o = 0; o < l.outputs; ++o) d[o] *= 1.0 - out[o] * out[o];

    const auto& in = ws.act[li];
    double* gw = &grad[ws.offset[li]];
    double* gb = gw + l.w.size();
    for (std::size_t o = 0; o < l.outputs; ++o) {
      for (std::size_t i = 0; i < l.inputs; ++i) gw[o * l.inputs + i] += d[o] * in[i];
      gb[o] += d[o];
    }
  }
}

}  // namespace detail

// Normalized network inputs and target for one sample.
struct TrainingPoint {
  double x0;
  double x1;
  double target;
};

inline TrainingPoint to_training_point(const Normalization& n, const CalibSample& s) {
  return {(s.raw - n.raw_mean) / n.raw_scale, (s.t_amb - n.tamb_mean) / n.tamb_scale, s.target_bias()};
}

inline double mse(const Network& net, std::span<const TrainingPoint> pts) {
  if (pts.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& p : pts) {
    const double e = net.evaluate(p.x0, p.x1) - p.target;
    sum += e * e;
  }
  return sum / static_cast<double>(pts.size());
}

inline std::vector<double> gradient(const Network& net, std::span<const TrainingPoint> batch) {
  if (batch.empty()) throw std::invalid_argument("gradient: batch must be non-empty");
  std::vector<double> grad(net.parameter_count(), 0.0);
  detail::Workspace ws(net);
  const double scale = 2.0 / static_cast<double>(batch.size());
  for (const auto& p : batch) {
    const double y = detail::forward_pass(net, ws, p.x0, p.x1);
    detail::backward_pass(net, ws, scale * (y - p.target), grad);
  }
  return grad;
}

// Gradient of mean((c - c*)^2) over raw calibration samples, through the model's normalization.
inline std::vector<double> gradient(const ChannelModel& m, std::span<const CalibSample> batch) {
  std::vector<TrainingPoint> pts;
  pts.reserve(batch.size());
  for (const auto& s : batch) pts.push_back(to_training_point(m.norm, s));
  return gradient(m.net, pts);
}

// ---------------------------------------------------------------------------
// Training

struct TrainHyper {
  double lr = 0.01;
  std::size_t epochs = 200;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;
  double val_fraction = 0.2;
  std::size_t hidden = 8;
};

struct TrainReport {
  Channel channel = Channel::co2;
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  double train_mse = 0.0;
  double val_mse = 0.0;
  std::vector<double> loss_curve;      // training MSE after each epoch
  std::vector<double> val_curve;
  bool monotone = true;                // loss_curve never increased
  bool diverged = false;

  friend bool operator==(const TrainReport&, const TrainReport&) = default;
};

class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, TrainReport r) : std::runtime_error(what), report(std::move(r)) {}
  TrainReport report;
};

inline constexpr std::size_t kMinSamplesPerChannel = 100;

inline Normalization fit_normalization(std::span<const CalibSample> samples) {
  auto stats = [&](auto field) {
    double mean = 0.0;
    for (const auto& s : samples) mean += field(s);
    mean /= static_cast<double>(samples.size());
    double var = 0.0;
    for (const auto& s : samples) var += (field(s) - mean) * (field(s) - mean);
    double sd = std::sqrt(var / static_cast<double>(samples.size()));
    if (!(sd > 1e-12)) sd = 1.0;
    return std::pair{mean, sd};
  };
  auto [rm, rs] = stats([](const CalibSample& s) { return s.raw; });
  auto [tm, ts] = stats([](const CalibSample& s) { return s.t_amb; });
  return {rm, rs, tm, ts};
}

// Hidden layers get seeded uniform weights; the output layer starts at zero so
// an untrained model is the exact identity.
inline void init_weights(Network& net, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  auto& layers = net.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto& l = layers[i];
    const double k = i + 1 == layers.size() ? 0.0 : 1.0 / std::sqrt(static_cast<double>(l.inputs));
    for (double& w : l.w) w = u(rng) * k;
    for (double& b : l.b) b = u(rng) * k;
  }
}

inline std::pair<ChannelModel, TrainReport> train_channel(std::span<const CalibSample> samples, const TrainHyper& hyper) {
  if (samples.size() < kMinSamplesPerChannel)
    throw std::invalid_argument("train: need at least 100 samples per channel");
  if (!(hyper.val_fraction > 0.0 && hyper.val_fraction <= 0.5))
    throw std::invalid_argument("train: val_fraction must be in (0, 0.5]");
  if (hyper.batch_size == 0 || hyper.epochs == 0 || !(hyper.lr > 0.0))
    throw std::invalid_argument("train: batch_size, epochs and lr must be positive");
  const Channel channel = samples.front().channel;
  for (const auto& s : samples) {
    if (s.channel != channel) throw std::invalid_argument("train: samples span several channels");
    if (s.truth == 0.0 || !std::isfinite(s.raw) || !std::isfinite(s.t_amb))
      throw std::invalid_argument("train: sample with zero truth or non-finite input");
  }

  std::mt19937_64 rng(hyper.seed ^ (0x9e3779b97f4a7c15ULL * (index_of(channel) + 1)));

  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(hyper.val_fraction * static_cast<double>(samples.size()))));
  const std::size_t n_train = samples.size() - n_val;

  std::vector<CalibSample> train_raw;
  train_raw.reserve(n_train);
  for (std::size_t i = 0; i < n_train; ++i) train_raw.push_back(samples[order[i]]);

  ChannelModel model;
  model.channel = channel;
  model.norm = fit_normalization(train_raw);
  model.net = Network::standard(hyper.hidden);
  init_weights(model.net, rng);

  std::vector<TrainingPoint> train_pts, val_pts;
  train_pts.reserve(n_train);
  for (const auto& s : train_raw) train_pts.push_back(to_training_point(model.norm, s));
  for (std::size_t i = n_train; i < samples.size(); ++i) val_pts.push_back(to_training_point(model.norm, samples[order[i]]));

  TrainReport report;
  report.channel = channel;

  Network best = model.net;
  double best_val = mse(model.net, val_pts);
  double best_train = mse(model.net, train_pts);

  std::vector<double> params = model.net.parameters();
  std::vector<TrainingPoint> batch;
  batch.reserve(hyper.batch_size);
  for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    std::shuffle(train_pts.begin(), train_pts.end(), rng);
    for (std::size_t start = 0; start < train_pts.size(); start += hyper.batch_size) {
      const std::size_t end = std::min(train_pts.size(), start + hyper.batch_size);
      const auto g = gradient(model.net, std::span<const TrainingPoint>(train_pts.data() + start, end - start));
      for (std::size_t k = 0; k < params.size(); ++k) params[k] -= hyper.lr * g[k];
      model.net.set_parameters(params);
    }
    const double tr = mse(model.net, train_pts);
    const double va = mse(model.net, val_pts);
    report.epochs_run = epoch + 1;
    if (!report.loss_curve.empty() && tr > report.loss_curve.back()) report.monotone = false;
    report.loss_curve.push_back(tr);
    report.val_curve.push_back(va);
    if (!std::isfinite(tr) || !std::isfinite(va) || !model.net.all_finite()) {
      report.diverged = true;
      throw TrainingError("training diverged for channel " + std::string(to_string(channel)), report);
    }
    if (va < best_val) {
      best_val = va;
      best_train = tr;
      best = model.net;
      report.best_epoch = epoch + 1;
    }
  }

  model.net = best;
  model.train_mse = best_train;
  model.val_mse = best_val;
  report.train_mse = best_train;
  report.val_mse = best_val;
  return {std::move(model), std::move(report)};
}

inline std::pair<CompModel, std::vector<TrainReport>> train(const std::array<std::vector<CalibSample>, kChannelCount>& samples,
                                                            const TrainHyper& hyper) {
  CompModel model;
  std::vector<TrainReport> reports;
  for (Channel c : kAllChannels) {
    auto [m, r] = train_channel(samples[index_of(c)], hyper);
    model[c] = std::move(m);
    reports.push_back(std::move(r));
  }
  return {std::move(model), std::move(reports)};
}

// ---------------------------------------------------------------------------
// Evaluation

struct ErrorStats {
  double mean_abs_rel = 0.0;
  double max_abs_rel = 0.0;
};

inline ErrorStats raw_error(std::span<const CalibSample> samples) {
  ErrorStats e;
  for (const auto& s : samples) {
    const double r = std::abs(s.raw / s.truth - 1.0);
    e.mean_abs_rel += r;
    e.max_abs_rel = std::max(e.max_abs_rel, r);
  }
  if (!samples.empty()) e.mean_abs_rel /= static_cast<double>(samples.size());
  return e;
}

inline ErrorStats compensated_error(const CompModel& model, std::span<const CalibSample> samples) {
  ErrorStats e;
  for (const auto& s : samples) {
    const auto c = forward(model, s.channel, s.raw, s.t_amb);
    const double r = c.reading.is_fault() ? 1.0 : std::abs(c.reading.value / s.truth - 1.0);
    e.mean_abs_rel += r;
    e.max_abs_rel = std::max(e.max_abs_rel, r);
  }
  if (!samples.empty()) e.mean_abs_rel /= static_cast<double>(samples.size());
  return e;
}

// ---------------------------------------------------------------------------
// Model file

inline json to_json(const ChannelModel& m) {
  json layers = json::array();
  for (const auto& l : m.net.layers()) {
    json w = json::array();
    for (std::size_t o = 0; o < l.outputs; ++o)
      w.push_back(std::vector<double>(l.w.begin() + static_cast<std::ptrdiff_t>(o * l.inputs),
                                      l.w.begin() + static_cast<std::ptrdiff_t>((o + 1) * l.inputs)));
    layers.push_back({{"w", w}, {"b", l.b}, {"act", to_string(l.act)}});
  }
  return {{"channel", to_string(m.channel)},
          {"norm",
           {{"raw_mean", m.norm.raw_mean},
            {"raw_scale", m.norm.raw_scale},
            {"tamb_mean", m.norm.tamb_mean},
            {"tamb_scale", m.norm.tamb_scale}}},
          {"layers", layers},
          {"train_mse", m.train_mse},
          {"val_mse", m.val_mse}};
}

inline ChannelModel channel_model_from_json(const json& j) {
  ChannelModel m;
  auto c = parse_channel(j.at("channel").get<std::string>());
  if (!c) throw std::invalid_argument("model: unknown channel");
  m.channel = *c;
  const auto& n = j.at("norm");
  m.norm = {n.at("raw_mean").get<double>(), n.at("raw_scale").get<double>(), n.at("tamb_mean").get<double>(),
            n.at("tamb_scale").get<double>()};
  if (!(m.norm.raw_scale > 0.0) || !(m.norm.tamb_scale > 0.0)) throw std::invalid_argument("model: normalization scale must be > 0");
  std::vector<DenseLayer> layers;
  for (const auto& lj : j.at("layers")) {
    const auto& w = lj.at("w");
    const auto b = lj.at("b").get<std::vector<double>>();
    const std::string act = lj.at("act").get<std::string>();
    if (act != "tanh" && act != "linear") throw std::invalid_argument("model: unknown activation " + act);
    if (w.size() != b.size() || w.empty()) throw std::invalid_argument("model: weight rows must match biases");
    DenseLayer l(w[0].size(), b.size(), act == "tanh" ? Activation::tanh : Activation::linear);
    for (std::size_t o = 0; o < l.outputs; ++o) {
      const auto row = w[o].get<std::vector<double>>();
      if (row.size() != l.inputs) throw std::invalid_argument("model: ragged weight matrix");
      std::copy(row.begin(), row.end(), l.w.begin() + static_cast<std::ptrdiff_t>(o * l.inputs));
    }
    l.b = b;
    layers.push_back(std::move(l));
  }
  m.net = Network(std::move(layers));
  if (!m.net.all_finite()) throw std::invalid_argument("model: non-finite parameter");
  m.train_mse = j.value("train_mse", 0.0);
  m.val_mse = j.value("val_mse", 0.0);
  return m;
}

inline json to_json(const CompModel& model) {
  json channels = json::array();
  for (const auto& m : model.channels)
    if (m) channels.push_back(to_json(*m));
  return {{"version", 1}, {"channels", channels}};
}

inline CompModel comp_model_from_json(const json& j) {
  CompModel model;
  for (const auto& cj : j.at("channels")) {
    auto m = channel_model_from_json(cj);
    model[m.channel] = std::move(m);
  }
  return model;
}

inline json to_json(const TrainReport& r) {
  return {{"channel", to_string(r.channel)}, {"epochs_run", r.epochs_run}, {"best_epoch", r.best_epoch},
          {"train_mse", r.train_mse},        {"val_mse", r.val_mse},       {"monotone", r.monotone},
          {"diverged", r.diverged},          {"loss_curve", r.loss_curve}};
}

}  // namespace farm
