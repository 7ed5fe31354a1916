#include "sbp/train.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>

#include "sbp/evt.hpp"
#include "sbp/heads.hpp"
#include "sbp/rng.hpp"

namespace sbp {

namespace {

constexpr std::uint32_t kModelVersion = 1;

struct Windows {
  std::vector<double> z;  // standardized series
  std::vector<std::size_t> train, validation;  // target indices
};

Windows make_windows(std::span<const double> series, const Standardization& st, std::size_t context,
                     double validation_fraction) {
  if (series.size() <= context + 1) throw std::invalid_argument("training series too short for the context length");
  Windows w;
  w.z.reserve(series.size());
  for (double x : series) {
    if (!std::isfinite(x)) throw std::invalid_argument("training series contains non-finite values");
    w.z.push_back(st.apply(x));
  }
  const std::size_t total = series.size() - context;
  std::size_t n_val = static_cast<std::size_t>(std::floor(validation_fraction * static_cast<double>(total)));
  n_val = std::max<std::size_t>(n_val, 1);
  if (n_val >= total) throw std::invalid_argument("training series too short for a validation split");
  for (std::size_t i = 0; i < total; ++i) (i < total - n_val ? w.train : w.validation).push_back(context + i);
  return w;
}

class Adam {
 public:
  explicit Adam(std::size_t size, double lr) : m_(size, 0.0), v_(size, 0.0), lr_(lr) {}

  void step(std::vector<double>& params, const std::vector<double>& grad) {
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = kBeta1 * m_[i] + (1.0 - kBeta1) * grad[i];
      v_[i] = kBeta2 * v_[i] + (1.0 - kBeta2) * grad[i] * grad[i];
      params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + kEpsilon);
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEpsilon = 1e-8;
  std::vector<double> m_, v_;
  double lr_;
  std::uint64_t t_ = 0;
};

struct LossFn {
  HeadKind kind;
  std::span<const double> edges;
  double tail_mass;

  double operator()(std::span<const double> raw, double x, std::span<double> grad) const {
    return kind == HeadKind::Distribution ? sbp_loss(raw, edges, tail_mass, x, grad) : point_loss(raw, x, grad);
  }
};

TrainResult run_training(std::span<const double> series, const TcnConfig& tcn, const TrainConfig& tc, HeadKind kind) {
  tcn.validate();
  tc.validate();
  const Standardization st = Standardization::fit(series);
  const Windows windows = make_windows(series, st, tcn.context_length, tc.validation_fraction);

  std::vector<double> edges;
  if (kind == HeadKind::Distribution) {
    double mean = 0.0;
    for (double z : windows.z) mean += z;
    mean /= static_cast<double>(windows.z.size());
    double var = 0.0;
    for (double z : windows.z) var += (z - mean) * (z - mean);
    double sd = std::sqrt(var / static_cast<double>(windows.z.size()));
    if (!(sd > 0.0)) sd = 1.0;
    edges = BinnedDistribution::linear_edges(mean - tc.bin_span_sigmas * sd, mean + tc.bin_span_sigmas * sd,
                                             tcn.n_bins);
  }
  const std::size_t outputs = kind == HeadKind::Distribution ? tcn.n_bins + 4 : 1;
  const std::uint64_t init_stream = kind == HeadKind::Distribution ? seed_offset::kModelInit : seed_offset::kPointModelInit;
  const std::uint64_t shuffle_stream = kind == HeadKind::Distribution ? seed_offset::kShuffle : seed_offset::kPointShuffle;

  TrainResult result{TrainedModel{kind, ModelParams::glorot(tcn, outputs, init_stream), st, edges, tc.tail_mass}, {}, 0};
  ModelParams& params = result.model.params;
  ModelParams best = params;
  double best_val = std::numeric_limits<double>::infinity();
  const LossFn loss{kind, edges, tc.tail_mass};

  const std::size_t context = tcn.context_length;
  const std::span<const double> z(windows.z);
  std::vector<std::size_t> order = windows.train;
  CounterRng shuffle(derive_seed(tcn.seed, shuffle_stream));
  Adam adam(params.size(), tc.learning_rate);
  std::vector<double> grad(params.size());
  std::vector<double> grad_out(outputs);
  TcnTrace trace;

  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size, ++batch_index) {
      const std::size_t stop = std::min(order.size(), start + tc.batch_size);
      std::fill(grad.begin(), grad.end(), 0.0);
      double batch_loss = 0.0;
      for (std::size_t k = start; k < stop; ++k) {
        const std::size_t t = order[k];
        const auto raw = forward(params, z.subspan(t - context, context), trace);
        batch_loss += loss(raw, z[t], grad_out);
        backward(params, trace, grad_out, grad);
      }
      if (!std::isfinite(batch_loss)) {
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batch_index));
      }
      const double inv = 1.0 / static_cast<double>(stop - start);
      double norm2 = 0.0;
      for (double& g : grad) {
        g *= inv;
        norm2 += g * g;
      }
      const double norm = std::sqrt(norm2);
      if (norm > tc.gradient_clip) {
        const double shrink = tc.gradient_clip / norm;
        for (double& g : grad) g *= shrink;
      }
      adam.step(params.values(), grad);
    }

    double train_loss = 0.0;
    for (std::size_t t : order) train_loss += loss(forward(params, z.subspan(t - context, context), trace), z[t], {});
    train_loss /= static_cast<double>(order.size());
    double val_loss = 0.0;
    for (std::size_t t : windows.validation) val_loss += loss(forward(params, z.subspan(t - context, context), trace), z[t], {});
    val_loss /= static_cast<double>(windows.validation.size());
    if (!std::isfinite(train_loss) || !std::isfinite(val_loss)) {
      throw NumericalError("non-finite evaluation loss at epoch " + std::to_string(epoch));
    }
    result.log.push_back({epoch, train_loss, val_loss});
    if (val_loss < best_val) {
      best_val = val_loss;
      best = params;
      result.best_epoch = epoch;
    }
  }
  if (tc.epochs > 0) params = std::move(best);
  return result;
}

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void put_tensor(std::vector<unsigned char>& out, const std::string& name, const std::vector<std::uint64_t>& dims,
                std::span<const double> data) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  out.insert(out.end(), name.begin(), name.end());
  put_u32(out, static_cast<std::uint32_t>(dims.size()));
  for (auto d : dims) put_u64(out, d);
  for (double v : data) put_u64(out, std::bit_cast<std::uint64_t>(v));
}

class Reader {
 public:
  explicit Reader(std::span<const unsigned char> bytes) : bytes_(bytes) {}
  bool done() const noexcept { return pos_ == bytes_.size(); }
  std::uint64_t uint(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  std::string text(std::size_t n) {
    need(n);
    std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_), bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw std::invalid_argument("model file: truncated");
  }
  std::span<const unsigned char> bytes_;
  std::size_t pos_ = 0;
};

struct RawTensor {
  std::vector<std::uint64_t> dims;
  std::vector<double> data;
};

const RawTensor& require(const std::map<std::string, RawTensor>& tensors, const std::string& name) {
  const auto it = tensors.find(name);
  if (it == tensors.end()) throw std::invalid_argument("model file: missing tensor '" + name + "'");
  return it->second;
}

}  // namespace

Standardization Standardization::fit(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("standardization: empty series");
  Standardization st;
  st.center = empirical_quantile(values, 0.5);
  const double iqr = empirical_quantile(values, 0.75) - empirical_quantile(values, 0.25);
  st.scale = iqr > 0.0 ? iqr / 1.349 : 1.0;
  return st;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || batch_size == 0 || !(gradient_clip > 0.0)) {
    throw std::invalid_argument("train config: learning rate, batch size and clip must be positive");
  }
  if (!(tail_mass > 0.0 && tail_mass < 0.5)) throw std::invalid_argument("train config: q must lie in (0, 0.5)");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw std::invalid_argument("train config: validation fraction must lie in (0, 1)");
  }
  if (!(bin_span_sigmas > 0.0)) throw std::invalid_argument("train config: bin span must be positive");
}

TrainResult train(std::span<const double> series, const TcnConfig& tcn, const TrainConfig& tc) {
  return run_training(series, tcn, tc, HeadKind::Distribution);
}

TrainResult point_forecast_train(std::span<const double> series, const TcnConfig& tcn, const TrainConfig& tc) {
  return run_training(series, tcn, tc, HeadKind::Point);
}

std::string training_log_csv(const std::vector<EpochLog>& log) {
  std::string out = "epoch,train_nll,val_nll\n";
  char line[96];
  for (const auto& e : log) {
    std::snprintf(line, sizeof line, "%zu,%.17g,%.17g\n", e.epoch, e.train_nll, e.val_nll);
    out += line;
  }
  return out;
}

namespace {

std::vector<double> standardized_context(const TrainedModel& model, std::span<const double> context) {
  std::vector<double> z(context.size());
  for (std::size_t i = 0; i < context.size(); ++i) z[i] = model.standardization.apply(context[i]);
  return z;
}

}  // namespace

SplicedBinnedPareto predictive(const TrainedModel& model, std::span<const double> context) {
  if (model.kind != HeadKind::Distribution) throw std::invalid_argument("predictive: not a distribution model");
  const auto raw = forward(model.params, standardized_context(model, context));
  return heads_to_distribution(raw, model.edges, model.tail_mass);
}

double predictive_quantile(const TrainedModel& model, const SplicedBinnedPareto& standardized, double level) {
  return model.standardization.invert(standardized.icdf(level));
}

double point_forecast(const TrainedModel& model, std::span<const double> context) {
  if (model.kind != HeadKind::Point) throw std::invalid_argument("point_forecast: not a point model");
  return model.standardization.invert(forward(model.params, standardized_context(model, context))[0]);
}

std::vector<unsigned char> serialize_model(const TrainedModel& model) {
  std::vector<unsigned char> out{'S', 'B', 'P', 'M'};
  put_u32(out, kModelVersion);
  const TcnConfig& cfg = model.params.config();
  const std::vector<double> config{static_cast<double>(cfg.context_length), static_cast<double>(cfg.channels),
                                   static_cast<double>(cfg.kernel_size),    static_cast<double>(cfg.n_bins),
                                   static_cast<double>(model.params.outputs()),
                                   static_cast<double>(cfg.seed >> 32),     static_cast<double>(cfg.seed & 0xFFFFFFFFULL)};
  std::vector<double> dilations(cfg.dilations.begin(), cfg.dilations.end());
  const double kind = model.kind == HeadKind::Distribution ? 0.0 : 1.0;
  const double standardization[] = {model.standardization.center, model.standardization.scale};
  put_tensor(out, "meta.kind", {1}, std::span<const double>(&kind, 1));
  put_tensor(out, "meta.config", {config.size()}, config);
  put_tensor(out, "meta.dilations", {dilations.size()}, dilations);
  put_tensor(out, "meta.standardization", {2}, standardization);
  put_tensor(out, "meta.edges", {model.edges.size()}, model.edges);
  put_tensor(out, "meta.q", {1}, std::span<const double>(&model.tail_mass, 1));
  const auto& values = model.params.values();
  for (const auto& slot : model.params.slots()) {
    put_tensor(out, slot.name, slot.dims, std::span<const double>(values).subspan(slot.offset, slot.size));
  }
  return out;
}

TrainedModel deserialize_model(std::span<const unsigned char> bytes) {
  Reader in(bytes);
  if (in.text(4) != "SBPM") throw std::invalid_argument("model file: bad magic");
  if (in.uint(4) != kModelVersion) throw std::invalid_argument("model file: unsupported version");
  std::map<std::string, RawTensor> tensors;
  while (!in.done()) {
    const std::string name = in.text(in.uint(4));
    RawTensor t;
    const std::uint64_t rank = in.uint(4);
    std::uint64_t count = 1;
    for (std::uint64_t r = 0; r < rank; ++r) {
      t.dims.push_back(in.uint(8));
      count *= t.dims.back();
    }
    if (count > bytes.size()) throw std::invalid_argument("model file: tensor larger than file");
    t.data.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) t.data.push_back(std::bit_cast<double>(in.uint(8)));
    tensors[name] = std::move(t);
  }

  const auto& config = require(tensors, "meta.config").data;
  if (config.size() != 7) throw std::invalid_argument("model file: bad config tensor");
  TcnConfig cfg;
  cfg.context_length = static_cast<std::size_t>(config[0]);
  cfg.channels = static_cast<std::size_t>(config[1]);
  cfg.kernel_size = static_cast<std::size_t>(config[2]);
  cfg.n_bins = static_cast<std::size_t>(config[3]);
  cfg.seed = (static_cast<std::uint64_t>(config[5]) << 32) | static_cast<std::uint64_t>(config[6]);
  cfg.dilations.clear();
  for (double d : require(tensors, "meta.dilations").data) cfg.dilations.push_back(static_cast<std::size_t>(d));

  const auto& kind = require(tensors, "meta.kind").data;
  const auto& st = require(tensors, "meta.standardization").data;
  const auto& q = require(tensors, "meta.q").data;
  if (kind.size() != 1 || st.size() != 2 || q.size() != 1) throw std::invalid_argument("model file: bad metadata");
  TrainedModel model{kind[0] == 0.0 ? HeadKind::Distribution : HeadKind::Point,
                     ModelParams(cfg, static_cast<std::size_t>(config[4])),
                     {st[0], st[1]},
                     require(tensors, "meta.edges").data,
                     q[0]};
  for (const auto& slot : model.params.slots()) {
    const auto& t = require(tensors, slot.name);
    if (t.dims != slot.dims) throw std::invalid_argument("model file: shape mismatch for '" + slot.name + "'");
    std::copy(t.data.begin(), t.data.end(), model.params.values().begin() + static_cast<std::ptrdiff_t>(slot.offset));
  }
  if (model.kind == HeadKind::Distribution && model.edges.size() != cfg.n_bins + 1) {
    throw std::invalid_argument("model file: edges do not match the bin count");
  }
  return model;
}

void save_model(const TrainedModel& model, const std::filesystem::path& path) {
  const auto bytes = serialize_model(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write model '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for model '" + path.string() + "'");
}

TrainedModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot open model '" + path.string() + "'");
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_model(bytes);
}

}  // namespace sbp
