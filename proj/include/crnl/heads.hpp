#pragma once

// Model heads over the CNN feature map: column average pooling, multirow
// stretching, row attention with per-row CTC, the assembled CRNN in all four
// head variants, and the box-line / text denoising autoencoders.

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "crnl/ctc.hpp"
#include "crnl/layers.hpp"

namespace crnl {

// [b,c,h,w] -> [b,w,c]: mean over the height axis, one feature per column
Tensor cap(const Tensor& x);

// [b,c,h,w] -> [b,h*w,c]: rows concatenated in reading order (row 0 first)
Tensor stretch(const Tensor& x);

// (1/(B*H)) sum of per-row CTC losses
Tensor multirow_ctc_loss(const std::vector<std::vector<Tensor>>& rows,
                         const std::vector<std::vector<LabelSeq>>& labels);

// Two Conv1d branches over the height of the reshaped feature map
// (kernel h-H+1): features get ReLU, the mask branch gets a sigmoid, the
// output is their elementwise product split into H row sequences.
struct RowAttention {
    int64_t h = 0, feat = 0, rows = 0;
    // Eq. reading: the literal mask branch convolves the raw reshaped map;
    // the alternative applies it to the ReLU'd feature branch output.
    bool mask_on_features = false;
    Conv1d feature_conv, mask_conv;

    static RowAttention make(int64_t h, int64_t w, int64_t c, int64_t rows,
                             bool mask_on_features, Rng& rng);

    struct Out {
        Tensor rows;  // [b, H, w*c]
        Tensor mask;  // [b, H, w*c]
    };
    Out forward(const Tensor& x) const;  // x [b,c,h,w], h >= rows
    void collect(const std::string& prefix, ParamList& out) const;
};

// ---------------------------------------------------------------------------

enum class HeadKind { baseline, cap, stretch, attention };
HeadKind head_from_string(const std::string& s);
std::string head_to_string(HeadKind h);

struct CrnnSpec {
    HeadKind head = HeadKind::cap;
    int64_t img_h = 64, img_w = 128;
    std::vector<int64_t> channels = {64, 128, 256};
    std::vector<int> convs_per_block = {1, 2, 2};
    std::vector<std::array<int64_t, 2>> pools = {{2, 2}, {2, 2}, {2, 3}};
    int64_t hidden = 256;
    int lstm_layers = 2;
    int64_t classes = 65;  // including blank
    int64_t rows = 1;      // H for the attention head
    bool mask_on_features = false;

    int64_t feat_h() const;
    int64_t feat_w() const;
    void validate() const;
};

struct CrnnForward {
    std::vector<Tensor> block_acts;             // post-pool activation per block
    Tensor features;                            // final feature map [b,c,h,w]
    BiLstm::Out rnn;                            // recurrent outputs + last states
    std::vector<std::vector<Tensor>> logits;    // [example][row] -> [T,K]
};

class CrnnModel {
  public:
    static CrnnModel make(const CrnnSpec& spec, Rng& rng);

    CrnnForward forward(const Tensor& images) const;  // [b,1,img_h,img_w]
    const CrnnSpec& spec() const { return spec_; }
    ParamList params() const;
    ParamList recurrent_params() const;  // gradient-clipping group
    int64_t param_count() const;

  private:
    struct Block {
        std::vector<Conv2d> convs;
        int64_t pool_h = 1, pool_w = 1;
    };
    CrnnSpec spec_;
    std::vector<Block> blocks_;
    std::optional<RowAttention> attention_;
    BiLstm lstm_;
    Dense proj_;
};

// ---------------------------------------------------------------------------

// Encoder of four stride-2 convs (16,32,64,128, ReLU), decoder of four
// {nearest-upsample x2, conv} stages mirroring the channels, the last one
// linear to a single channel. Input must be square with side % 16 == 0.
class Autoencoder {
  public:
    static Autoencoder make(Rng& rng);

    Tensor forward(const Tensor& img) const;  // [b,1,S,S] -> [b,1,S,S]
    ParamList params() const;
    int64_t param_count() const;

  private:
    std::vector<Conv2d> enc_;
    std::vector<Conv2d> dec_;
};

// clip(v + l, 0, 1); the line estimate is negative where lines sit, so the
// addition erases them (overlap pixels go with the lines).
Tensor compose_clean(const Tensor& v, const Tensor& l);

}  // namespace crnl
