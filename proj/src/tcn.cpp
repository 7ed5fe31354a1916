#include "sbp/tcn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "sbp/rng.hpp"

namespace sbp {

namespace {

struct ConvShape {
  std::size_t in, out, taps, dilation, length;
};

// out[o][t] = b[o] + sum_i sum_j w[o][i][j] x[i][t - j d] for t in the last `need` positions.
void conv_forward(const ConvShape& s, const double* w, const double* b, const double* x, double* out,
                  std::size_t need) {
  const std::size_t first = s.length - need;
  for (std::size_t o = 0; o < s.out; ++o) {
    double* row = out + o * s.length;
    for (std::size_t t = first; t < s.length; ++t) row[t] = b[o];
    for (std::size_t i = 0; i < s.in; ++i) {
      const double* xi = x + i * s.length;
      const double* wo = w + (o * s.in + i) * s.taps;
      for (std::size_t j = 0; j < s.taps; ++j) {
        const std::size_t shift = j * s.dilation;
        const double wj = wo[j];
        for (std::size_t t = std::max(first, shift); t < s.length; ++t) row[t] += wj * xi[t - shift];
      }
    }
  }
}

void conv_backward(const ConvShape& s, const double* w, const double* x, const double* g_out, std::size_t need,
                   double* g_w, double* g_b, double* g_x) {
  const std::size_t first = s.length - need;
  for (std::size_t o = 0; o < s.out; ++o) {
    const double* go = g_out + o * s.length;
    double sum = 0.0;
    for (std::size_t t = first; t < s.length; ++t) sum += go[t];
    g_b[o] += sum;
    for (std::size_t i = 0; i < s.in; ++i) {
      const double* xi = x + i * s.length;
      double* gxi = g_x ? g_x + i * s.length : nullptr;
      const double* wo = w + (o * s.in + i) * s.taps;
      double* gwo = g_w + (o * s.in + i) * s.taps;
      for (std::size_t j = 0; j < s.taps; ++j) {
        const std::size_t shift = j * s.dilation;
        double acc = 0.0;
        for (std::size_t t = std::max(first, shift); t < s.length; ++t) acc += go[t] * xi[t - shift];
        gwo[j] += acc;
        if (gxi) {
          const double wj = wo[j];
          for (std::size_t t = std::max(first, shift); t < s.length; ++t) gxi[t - shift] += go[t] * wj;
        }
      }
    }
  }
}

void relu_suffix(const std::vector<double>& pre, std::vector<double>& post, std::size_t channels,
                 std::size_t length, std::size_t need) {
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t t = length - need; t < length; ++t) {
      const double v = pre[c * length + t];
      post[c * length + t] = v > 0.0 ? v : 0.0;
    }
  }
}

}  // namespace

std::size_t TcnConfig::receptive_field() const noexcept {
  std::size_t field = 1;
  for (std::size_t d : dilations) field += (kernel_size - 1) * d;
  return field;
}

void TcnConfig::validate() const {
  if (context_length == 0 || channels == 0 || kernel_size == 0) {
    throw std::invalid_argument("TCN config: context, channels and kernel size must be >= 1");
  }
  if (dilations.empty() || dilations.size() % 2 != 0) {
    throw std::invalid_argument("TCN config: dilations must come in pairs (two per residual block)");
  }
  for (std::size_t d : dilations) {
    if (d == 0) throw std::invalid_argument("TCN config: dilations must be >= 1");
  }
  if (receptive_field() > context_length) {
    throw std::invalid_argument("TCN config: receptive field exceeds the context length");
  }
  if (n_bins < 2) throw std::invalid_argument("TCN config: need at least 2 bins");
}

ModelParams::ModelParams(TcnConfig config, std::size_t outputs) : config_(std::move(config)), outputs_(outputs) {
  config_.validate();
  if (outputs_ == 0) throw std::invalid_argument("TCN: head needs at least one output");
  const std::uint64_t c = config_.channels;
  const std::uint64_t k = config_.kernel_size;
  for (std::size_t b = 0; b < config_.blocks(); ++b) {
    const std::string prefix = "block" + std::to_string(b) + ".";
    Block block{};
    block.in_channels = b == 0 ? 1 : config_.channels;
    block.dilation1 = config_.dilations[2 * b];
    block.dilation2 = config_.dilations[2 * b + 1];
    block.w1 = add_slot(prefix + "conv1.weight", {c, block.in_channels, k});
    block.b1 = add_slot(prefix + "conv1.bias", {c});
    block.w2 = add_slot(prefix + "conv2.weight", {c, c, k});
    block.b2 = add_slot(prefix + "conv2.bias", {c});
    block.has_downsample = block.in_channels != config_.channels;
    if (block.has_downsample) {
      block.wd = add_slot(prefix + "downsample.weight", {c, block.in_channels});
      block.bd = add_slot(prefix + "downsample.bias", {c});
    }
    blocks_.push_back(block);
  }
  head_w_ = add_slot("head.weight", {outputs_, c});
  head_b_ = add_slot("head.bias", {outputs_});
  values_.assign(slots_.empty() ? 0 : slots_.back().offset + slots_.back().size, 0.0);
}

std::size_t ModelParams::add_slot(std::string name, std::vector<std::uint64_t> dims) {
  std::size_t size = 1;
  for (auto d : dims) size *= d;
  const std::size_t offset = slots_.empty() ? 0 : slots_.back().offset + slots_.back().size;
  slots_.push_back({std::move(name), std::move(dims), offset, size});
  return offset;
}

ModelParams ModelParams::glorot(TcnConfig config, std::size_t outputs, std::uint64_t stream) {
  ModelParams params(std::move(config), outputs);
  CounterRng rng(derive_seed(params.config_.seed, stream));
  for (const auto& slot : params.slots_) {
    if (slot.dims.size() < 2) continue;  // biases stay zero
    const double taps = slot.dims.size() == 3 ? static_cast<double>(slot.dims[2]) : 1.0;
    const double fan_out = static_cast<double>(slot.dims[0]) * taps;
    const double fan_in = static_cast<double>(slot.dims[1]) * taps;
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    for (std::size_t i = 0; i < slot.size; ++i) {
      params.values_[slot.offset + i] = limit * (2.0 * rng.uniform() - 1.0);
    }
  }
  return params;
}

std::vector<double> forward(const ModelParams& params, std::span<const double> window, TcnTrace& trace) {
  const TcnConfig& cfg = params.config();
  const std::size_t length = cfg.context_length;
  if (window.size() != length) throw std::invalid_argument("TCN forward: window length must equal the context length");
  const std::size_t c = cfg.channels;
  const std::size_t k = cfg.kernel_size;
  const auto& blocks = params.blocks();
  const double* w = params.values().data();

  trace.blocks.resize(blocks.size());
  std::size_t need = 1;
  for (std::size_t b = blocks.size(); b-- > 0;) {
    auto& bt = trace.blocks[b];
    bt.need_out = need;
    bt.need_mid = std::min(length, need + (k - 1) * blocks[b].dilation2);
    bt.need_in = std::min(length, bt.need_mid + (k - 1) * blocks[b].dilation1);
    need = bt.need_in;
  }

  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const auto& blk = blocks[b];
    auto& bt = trace.blocks[b];
    const std::size_t in_c = blk.in_channels;
    bt.input.assign(in_c * length, 0.0);
    if (b == 0) {
      std::copy(window.begin(), window.end(), bt.input.begin());
    } else {
      const auto& prev = trace.blocks[b - 1].output;
      for (std::size_t i = 0; i < in_c * length; ++i) bt.input[i] = prev[i];
    }
    bt.pre1.assign(c * length, 0.0);
    bt.pre2.assign(c * length, 0.0);
    bt.sum.assign(c * length, 0.0);
    bt.output.assign(c * length, 0.0);
    std::vector<double> hidden(c * length, 0.0);

    conv_forward({in_c, c, k, blk.dilation1, length}, w + blk.w1, w + blk.b1, bt.input.data(), bt.pre1.data(),
                 bt.need_mid);
    relu_suffix(bt.pre1, hidden, c, length, bt.need_mid);
    conv_forward({c, c, k, blk.dilation2, length}, w + blk.w2, w + blk.b2, hidden.data(), bt.pre2.data(),
                 bt.need_out);
    relu_suffix(bt.pre2, bt.sum, c, length, bt.need_out);
    if (blk.has_downsample) {
      std::vector<double> residual(c * length, 0.0);
      conv_forward({in_c, c, 1, 1, length}, w + blk.wd, w + blk.bd, bt.input.data(), residual.data(), bt.need_out);
      for (std::size_t o = 0; o < c; ++o) {
        for (std::size_t t = length - bt.need_out; t < length; ++t) bt.sum[o * length + t] += residual[o * length + t];
      }
    } else {
      for (std::size_t o = 0; o < c; ++o) {
        for (std::size_t t = length - bt.need_out; t < length; ++t) bt.sum[o * length + t] += bt.input[o * length + t];
      }
    }
    relu_suffix(bt.sum, bt.output, c, length, bt.need_out);
  }

  const auto& last = trace.blocks.back().output;
  std::vector<double> out(params.outputs());
  for (std::size_t o = 0; o < out.size(); ++o) {
    double acc = w[params.head_bias() + o];
    const double* row = w + params.head_weight() + o * c;
    for (std::size_t i = 0; i < c; ++i) acc += row[i] * last[i * length + length - 1];
    out[o] = acc;
  }
  return out;
}

std::vector<double> forward(const ModelParams& params, std::span<const double> window) {
  TcnTrace trace;
  return forward(params, window, trace);
}

void backward(const ModelParams& params, const TcnTrace& trace, std::span<const double> grad_outputs,
              std::span<double> grad) {
  const TcnConfig& cfg = params.config();
  const std::size_t length = cfg.context_length;
  const std::size_t c = cfg.channels;
  const std::size_t k = cfg.kernel_size;
  const auto& blocks = params.blocks();
  const double* w = params.values().data();
  if (grad.size() != params.size() || grad_outputs.size() != params.outputs()) {
    throw std::invalid_argument("TCN backward: gradient shapes do not match the model");
  }

  std::vector<double> g_out(c * length, 0.0);
  const auto& last = trace.blocks.back().output;
  for (std::size_t o = 0; o < params.outputs(); ++o) {
    const double g = grad_outputs[o];
    grad[params.head_bias() + o] += g;
    double* gw = grad.data() + params.head_weight() + o * c;
    const double* row = w + params.head_weight() + o * c;
    for (std::size_t i = 0; i < c; ++i) {
      gw[i] += g * last[i * length + length - 1];
      g_out[i * length + length - 1] += g * row[i];
    }
  }

  for (std::size_t b = blocks.size(); b-- > 0;) {
    const auto& blk = blocks[b];
    const auto& bt = trace.blocks[b];
    const std::size_t in_c = blk.in_channels;
    const std::size_t out_first = length - bt.need_out;
    const std::size_t mid_first = length - bt.need_mid;

    std::vector<double> g_sum(c * length, 0.0);
    std::vector<double> g_pre2(c * length, 0.0);
    for (std::size_t o = 0; o < c; ++o) {
      for (std::size_t t = out_first; t < length; ++t) {
        const std::size_t i = o * length + t;
        g_sum[i] = bt.sum[i] > 0.0 ? g_out[i] : 0.0;
        g_pre2[i] = bt.pre2[i] > 0.0 ? g_sum[i] : 0.0;
      }
    }

    std::vector<double> hidden(c * length, 0.0);
    for (std::size_t o = 0; o < c; ++o) {
      for (std::size_t t = mid_first; t < length; ++t) {
        const double v = bt.pre1[o * length + t];
        hidden[o * length + t] = v > 0.0 ? v : 0.0;
      }
    }
    std::vector<double> g_hidden(c * length, 0.0);
    conv_backward({c, c, k, blk.dilation2, length}, w + blk.w2, hidden.data(), g_pre2.data(), bt.need_out,
                  grad.data() + blk.w2, grad.data() + blk.b2, g_hidden.data());
    for (std::size_t o = 0; o < c; ++o) {
      for (std::size_t t = mid_first; t < length; ++t) {
        if (!(bt.pre1[o * length + t] > 0.0)) g_hidden[o * length + t] = 0.0;
      }
    }

    const bool need_input_grad = b > 0;
    std::vector<double> g_in(need_input_grad ? in_c * length : 0, 0.0);
    double* g_in_ptr = need_input_grad ? g_in.data() : nullptr;
    conv_backward({in_c, c, k, blk.dilation1, length}, w + blk.w1, bt.input.data(), g_hidden.data(), bt.need_mid,
                  grad.data() + blk.w1, grad.data() + blk.b1, g_in_ptr);
    if (blk.has_downsample) {
      conv_backward({in_c, c, 1, 1, length}, w + blk.wd, bt.input.data(), g_sum.data(), bt.need_out,
                    grad.data() + blk.wd, grad.data() + blk.bd, g_in_ptr);
    } else if (need_input_grad) {
      for (std::size_t o = 0; o < c; ++o) {
        for (std::size_t t = out_first; t < length; ++t) g_in[o * length + t] += g_sum[o * length + t];
      }
    }
    if (need_input_grad) g_out = std::move(g_in);
  }
}

}  // namespace sbp
