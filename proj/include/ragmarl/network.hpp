#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ragmarl/checkpoint.hpp"
#include "ragmarl/param_store.hpp"
#include "ragmarl/rng.hpp"

namespace ragmarl {

enum class Activation { kGelu, kRelu };
enum class HeadKind { kActor, kCritic };

struct BackboneConfig {
  std::size_t vocab_size = 0;
  std::size_t width = 64;
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t context = 256;
  Activation activation = Activation::kGelu;

  void validate() const;
};

/// Activations kept by Network::forward for the backward pass.
struct ForwardCache {
  struct Layer {
    std::vector<double> x_in;     // T x d residual stream entering the block
    std::vector<double> ln1_hat;  // normalized (pre-affine)
    std::vector<double> ln1_rstd;
    std::vector<double> ln1_out;
    std::vector<double> qkv;      // T x 3d
    std::vector<double> probs;    // heads x T x T, lower triangle used
    std::vector<double> att;      // T x d, heads concatenated
    std::vector<double> mid;      // T x d, after attention residual
    std::vector<double> ln2_hat;
    std::vector<double> ln2_rstd;
    std::vector<double> ln2_out;
    std::vector<double> ff_pre;   // T x 4d
    std::vector<double> ff_act;   // T x 4d
  };

  std::vector<int> tokens;
  std::size_t length = 0;
  std::vector<Layer> layers;
  std::vector<double> x_final;
  std::vector<double> lnf_hat;
  std::vector<double> lnf_rstd;
  std::vector<double> hidden;  // T x d, input to the output head
};

/// Pre-norm causal transformer with either a vocabulary head (actor) or a
/// scalar value head (critic). Backward passes are written by hand.
///
/// Every per-position computation depends only on that row and earlier rows,
/// evaluated in the same order whatever the sequence length, so outputs at
/// position t are bit-identical across prefixes that agree up to t.
class Network {
 public:
  Network(const BackboneConfig& config, HeadKind head);
  Network(const BackboneConfig& config, HeadKind head, RngStream& rng);

  const BackboneConfig& config() const noexcept { return config_; }
  HeadKind head_kind() const noexcept { return head_; }
  std::size_t output_dim() const noexcept {
    return head_ == HeadKind::kActor ? config_.vocab_size : 1;
  }

  ParamStore& store() noexcept { return store_; }
  const ParamStore& store() const noexcept { return store_; }

  /// Throws on empty input, over-long input, or out-of-range token ids.
  void forward(std::span<const int> tokens, ForwardCache& cache) const;

  /// Head output (logits or value) at one position of a finished forward.
  void head_at(const ForwardCache& cache, std::size_t pos,
               std::span<double> out) const;

  /// All head outputs, T x output_dim.
  Tensor outputs(std::span<const int> tokens) const;

  /// Accumulates parameter gradients given d(loss)/d(head output) at the
  /// listed positions; `d_out` is positions.size() x output_dim, row-major.
  void backward(const ForwardCache& cache, std::span<const std::size_t> positions,
                std::span<const double> d_out);

  /// Copies every backbone (non-head) parameter from `other`.
  void copy_backbone_from(const Network& other);

  void append_to(Checkpoint& ckpt, const std::string& prefix,
                 bool with_moments) const;
  static Network from_checkpoint(const Checkpoint& ckpt,
                                 const std::string& prefix);

 private:
  void build();
  void init(RngStream& rng);

  BackboneConfig config_;
  HeadKind head_;
  ParamStore store_;
};

void save_network(const Network& net, const std::filesystem::path& path);
Network load_network(const std::filesystem::path& path);

}  // namespace ragmarl
