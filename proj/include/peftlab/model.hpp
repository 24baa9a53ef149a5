#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "peftlab/box_prompt.hpp"
#include "peftlab/reparam.hpp"
#include "peftlab/rng.hpp"
#include "peftlab/tensor.hpp"

namespace peftlab {

// Every parameter carries exactly one kind tag; the encoder is the
// transformer + conv groups, mirroring an image encoder of transformer
// layers followed by plain convolutions, with a separate box-prompt
// encoder and a lightweight conv mask decoder.
enum class ParamKind { Transformer, Conv, Decoder, Prompt };

std::string kind_name(ParamKind kind);

struct ModelConfig {
    int img_size = 64;
    int patch = 4;
    int width = 32;
    int heads = 2;
    int depth = 2;  // transformer blocks
    int conv_blocks = 2;
    int mlp_ratio = 2;

    int grid() const { return img_size / patch; }
    int tokens() const { return grid() * grid(); }
    void validate() const;
};

struct ParamEntry {
    std::string name;
    ParamKind kind;
    Tensor tensor;
};

struct LoraAttachment {
    Tensor beta;   // d x r, zero-initialized
    Tensor alpha;  // r x k, centered Gaussian (std 0.02)
    int rank = 0;
};

// A weight-matrix position that a fine-tuning strategy may rewrite:
// left as a plain trainable/frozen tensor, replaced by an SVD reparam, or
// (attention projections only) augmented with a parallel low-rank delta.
struct WeightSite {
    std::string name;
    ParamKind kind = ParamKind::Transformer;
    bool attention = false;
    Tensor base;
    std::optional<SvdReparam> reparam;
    std::optional<LoraAttachment> lora;
};

struct AdapterBlock {
    Tensor down;  // width x b
    Tensor up;    // b x width, zero-initialized so the block starts as identity
    int bottleneck = 0;
};

struct TransformerBlock {
    Tensor ln1_gain, ln1_bias, ln2_gain, ln2_bias;
    WeightSite wq, wk, wv, wo;
    Tensor bq, bk, bv, bo;
    WeightSite w1, w2;
    Tensor b1, b2;
    std::optional<AdapterBlock> adapter;
};

struct ConvBlock {
    WeightSite w;  // width x width x 3 x 3
    Tensor b;
};

class SegModel {
  public:
    SegModel(const ModelConfig& cfg, std::uint64_t init_seed);

    // image: (1, 1, S, S) with values in [0, 1]. Deterministic in
    // (parameters, image, prompt).
    Tensor forward(const Tensor& image, const BoxPrompt& prompt) const;

    // Complete, duplicate-free parameter inventory in declaration order.
    // Reparametrized sites contribute U/p/V entries in place of their base
    // weight; LoRA sites contribute the frozen base plus beta/alpha.
    std::vector<ParamEntry> registry() const;

    // Encoder weight-matrix surface for strategy application.
    std::vector<WeightSite*> encoder_sites();
    std::vector<const WeightSite*> encoder_sites() const;

    const ModelConfig& config() const { return cfg_; }

    std::vector<TransformerBlock>& blocks() { return blocks_; }
    const std::vector<TransformerBlock>& blocks() const { return blocks_; }

    void save(const std::filesystem::path& dir) const;
    static SegModel load(const std::filesystem::path& dir);

  private:
    Tensor encode(const Tensor& image) const;
    Tensor decode(const Tensor& features, const BoxPrompt& prompt) const;
    Tensor corner_embedding(int which, double x, double y) const;

    ModelConfig cfg_;

    WeightSite patch_;
    Tensor patch_bias_;
    Tensor pos_embed_;  // tokens x width
    std::vector<TransformerBlock> blocks_;
    std::vector<ConvBlock> convs_;

    Tensor fuse0_w_, fuse0_b_, fuse1_w_, fuse1_b_, out_w_, out_b_;
    Tensor corner0_w_, corner0_b_, corner1_w_, corner1_b_;
};

}  // namespace peftlab
