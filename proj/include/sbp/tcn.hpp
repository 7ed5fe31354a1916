#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace sbp {

// Dilations are consumed in pairs: each residual block holds two causal
// convolutions, so {1, 2, 4, 8} means two blocks.
struct TcnConfig {
  std::size_t context_length = 64;
  std::size_t channels = 16;
  std::size_t kernel_size = 2;
  std::vector<std::size_t> dilations{1, 2, 4, 8};
  std::size_t n_bins = 100;
  std::uint64_t seed = 7;

  // 1 + sum (kernel_size - 1) * dilation
  std::size_t receptive_field() const noexcept;
  std::size_t blocks() const noexcept { return dilations.size() / 2; }
  // Throws std::invalid_argument.
  void validate() const;
};

struct TensorSlot {
  std::string name;
  std::vector<std::uint64_t> dims;
  std::size_t offset = 0;
  std::size_t size = 0;
};

// All weights live in one flat vector; slots name the tensors inside it.
// Conv weights are [out][in][tap], tap j reading x[t - j * dilation].
class ModelParams {
 public:
  struct Block {
    std::size_t in_channels;
    std::size_t dilation1, dilation2;
    std::size_t w1, b1, w2, b2;
    bool has_downsample;
    std::size_t wd, bd;  // 1x1 residual projection when in_channels != channels
  };

  // Zero weights.
  ModelParams(TcnConfig config, std::size_t outputs);
  // Uniform in +-sqrt(6 / (fan_in + fan_out)) per weight tensor, zero biases,
  // drawn from the stream derive_seed(config.seed, stream).
  static ModelParams glorot(TcnConfig config, std::size_t outputs, std::uint64_t stream);

  const TcnConfig& config() const noexcept { return config_; }
  std::size_t outputs() const noexcept { return outputs_; }
  const std::vector<TensorSlot>& slots() const noexcept { return slots_; }
  const std::vector<Block>& blocks() const noexcept { return blocks_; }
  std::size_t head_weight() const noexcept { return head_w_; }
  std::size_t head_bias() const noexcept { return head_b_; }

  std::vector<double>& values() noexcept { return values_; }
  const std::vector<double>& values() const noexcept { return values_; }
  std::size_t size() const noexcept { return values_.size(); }

 private:
  std::size_t add_slot(std::string name, std::vector<std::uint64_t> dims);

  TcnConfig config_;
  std::size_t outputs_;
  std::vector<TensorSlot> slots_;
  std::vector<Block> blocks_;
  std::size_t head_w_ = 0;
  std::size_t head_b_ = 0;
  std::vector<double> values_;
};

// Activations kept by forward for the backward pass. Arrays are
// [channel][position] over the full window, but only the causal suffix that
// reaches the final position is computed.
struct TcnTrace {
  struct BlockTrace {
    std::size_t need_in = 0, need_mid = 0, need_out = 0;
    std::vector<double> input, pre1, pre2, sum, output;
  };
  std::vector<BlockTrace> blocks;
};

// Raw head outputs for one standardized window of context_length values.
// Throws std::invalid_argument on a wrong window length.
std::vector<double> forward(const ModelParams& params, std::span<const double> window, TcnTrace& trace);
std::vector<double> forward(const ModelParams& params, std::span<const double> window);

// Accumulates d(loss)/d(params) into grad given d(loss)/d(outputs).
void backward(const ModelParams& params, const TcnTrace& trace, std::span<const double> grad_outputs,
              std::span<double> grad);

}  // namespace sbp
