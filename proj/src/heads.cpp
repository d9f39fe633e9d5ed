#include "crnl/heads.hpp"

namespace crnl {

Tensor cap(const Tensor& x) {
    if (x.ndim() != 4) throw ShapeError("cap: expected [b,c,h,w], got " + shape_str(x.shape()));
    // mean over height, then [b,c,w] -> [b,w,c]
    return transpose(mean_over_axis(x, 2), {0, 2, 1});
}

Tensor stretch(const Tensor& x) {
    if (x.ndim() != 4)
        throw ShapeError("stretch: expected [b,c,h,w], got " + shape_str(x.shape()));
    int64_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    // [b,h,w,c] flattens so position r*w+col is row-major reading order
    return reshape(transpose(x, {0, 2, 3, 1}), {b, h * w, c});
}

Tensor multirow_ctc_loss(const std::vector<std::vector<Tensor>>& rows,
                         const std::vector<std::vector<LabelSeq>>& labels) {
    if (rows.empty() || rows.size() != labels.size())
        throw ContractError("multirow_ctc_loss: example count mismatch (" +
                            std::to_string(rows.size()) + " vs " +
                            std::to_string(labels.size()) + ")");
    size_t H = rows[0].size();
    std::vector<Tensor> flat_logits;
    std::vector<LabelSeq> flat_labels;
    for (size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != H || labels[i].size() != H)
            throw ContractError("multirow_ctc_loss: example " + std::to_string(i) + " has " +
                                std::to_string(rows[i].size()) + "/" +
                                std::to_string(labels[i].size()) + " rows, expected " +
                                std::to_string(H));
        for (size_t j = 0; j < H; ++j) {
            flat_logits.push_back(rows[i][j]);
            flat_labels.push_back(labels[i][j]);
        }
    }
    return ctc_loss_batch(flat_logits, flat_labels);  // mean over B*H cells
}

RowAttention RowAttention::make(int64_t h, int64_t w, int64_t c, int64_t rows,
                                bool mask_on_features, Rng& rng) {
    if (rows < 1 || rows > h)
        throw ShapeError("row_attention: H=" + std::to_string(rows) +
                         " must satisfy 1 <= H <= h=" + std::to_string(h));
    RowAttention a;
    a.h = h;
    a.feat = w * c;
    a.rows = rows;
    a.mask_on_features = mask_on_features;
    int64_t kernel = h - rows + 1;
    a.feature_conv = Conv1d::make(a.feat, a.feat, kernel, rng);
    // alternative reading convolves the already length-H feature branch
    a.mask_conv = Conv1d::make(a.feat, a.feat, mask_on_features ? 1 : kernel, rng);
    return a;
}

RowAttention::Out RowAttention::forward(const Tensor& x) const {
    if (x.ndim() != 4)
        throw ShapeError("row_attention: expected [b,c,h,w], got " + shape_str(x.shape()));
    int64_t b = x.dim(0), c = x.dim(1), xh = x.dim(2), w = x.dim(3);
    if (xh < rows)
        throw ShapeError("row_attention: feature height " + std::to_string(xh) +
                         " smaller than H=" + std::to_string(rows));
    if (xh != h || w * c != feat)
        throw ShapeError("row_attention: built for h=" + std::to_string(h) + ", w*c=" +
                         std::to_string(feat) + ", got " + shape_str(x.shape()));
    // view as [h, w*c] rows, make w*c the channel axis for Conv1d over height
    Tensor rows2d = reshape(transpose(x, {0, 2, 3, 1}), {b, h, feat});
    Tensor chan_seq = transpose(rows2d, {0, 2, 1});  // [b, w*c, h]
    Tensor feat_branch = relu(feature_conv.forward(chan_seq));
    Tensor mask_in = mask_on_features ? feat_branch : chan_seq;
    Tensor mask_branch = sigmoid(mask_conv.forward(mask_in));
    Out out;
    out.rows = transpose(mul(feat_branch, mask_branch), {0, 2, 1});  // [b,H,w*c]
    out.mask = transpose(mask_branch, {0, 2, 1});
    return out;
}

void RowAttention::collect(const std::string& prefix, ParamList& out) const {
    feature_conv.collect(prefix + ".feature", out);
    mask_conv.collect(prefix + ".mask", out);
}

// --- CRNN -------------------------------------------------------------------

HeadKind head_from_string(const std::string& s) {
    if (s == "crnn" || s == "baseline") return HeadKind::baseline;
    if (s == "cap") return HeadKind::cap;
    if (s == "stretch") return HeadKind::stretch;
    if (s == "attention") return HeadKind::attention;
    throw ConfigError("unknown head '" + s + "'");
}
std::string head_to_string(HeadKind h) {
    switch (h) {
        case HeadKind::baseline: return "crnn";
        case HeadKind::cap: return "cap";
        case HeadKind::stretch: return "stretch";
        case HeadKind::attention: return "attention";
    }
    return "?";
}

int64_t CrnnSpec::feat_h() const {
    int64_t h = img_h;
    for (const auto& p : pools) h = (h - p[0]) / p[0] + 1;
    return h;
}
int64_t CrnnSpec::feat_w() const {
    int64_t w = img_w;
    for (const auto& p : pools) w = (w - p[1]) / p[1] + 1;
    return w;
}

void CrnnSpec::validate() const {
    if (channels.empty() || channels.size() != convs_per_block.size() ||
        channels.size() != pools.size())
        throw ConfigError("crnn: channels/convs_per_block/pools must have equal length");
    if (classes < 2) throw ConfigError("crnn: need at least blank plus one class");
    if (feat_h() < 1 || feat_w() < 1)
        throw ConfigError("crnn: image " + std::to_string(img_h) + "x" + std::to_string(img_w) +
                          " collapses to nothing under the pooling stack");
    if (head == HeadKind::attention && feat_h() < rows)
        throw ConfigError("crnn: attention head needs feature height >= rows (" +
                          std::to_string(feat_h()) + " < " + std::to_string(rows) + ")");
}

CrnnModel CrnnModel::make(const CrnnSpec& spec, Rng& rng) {
    spec.validate();
    CrnnModel m;
    m.spec_ = spec;
    int64_t in_ch = 1;
    for (size_t bi = 0; bi < spec.channels.size(); ++bi) {
        Block blk;
        for (int ci = 0; ci < spec.convs_per_block[bi]; ++ci) {
            blk.convs.push_back(Conv2d::make(in_ch, spec.channels[bi], 3, 3, 1, 1, 1, 1, rng));
            in_ch = spec.channels[bi];
        }
        blk.pool_h = spec.pools[bi][0];
        blk.pool_w = spec.pools[bi][1];
        m.blocks_.push_back(std::move(blk));
    }
    int64_t c = spec.channels.back();
    if (spec.head == HeadKind::attention)
        m.attention_ = RowAttention::make(spec.feat_h(), spec.feat_w(), c, spec.rows,
                                          spec.mask_on_features, rng);
    m.lstm_ = BiLstm::make(c, spec.hidden, spec.lstm_layers, rng);
    m.proj_ = Dense::make(2 * spec.hidden, spec.classes, rng);
    return m;
}

CrnnForward CrnnModel::forward(const Tensor& images) const {
    if (images.ndim() != 4 || images.dim(1) != 1 || images.dim(2) != spec_.img_h ||
        images.dim(3) != spec_.img_w)
        throw ShapeError("crnn: expected images [b,1," + std::to_string(spec_.img_h) + "," +
                         std::to_string(spec_.img_w) + "], got " + shape_str(images.shape()));
    int64_t b = images.dim(0);

    CrnnForward fwd;
    Tensor x = images;
    for (const auto& blk : blocks_) {
        for (const auto& conv : blk.convs) x = relu(conv.forward(x));
        x = maxpool2d(x, blk.pool_h, blk.pool_w);
        fwd.block_acts.push_back(x);
    }
    fwd.features = x;
    int64_t c = spec_.channels.back(), fh = spec_.feat_h(), fw = spec_.feat_w();

    Tensor seq;          // [T, B', c]
    int64_t groups = 1;  // rows folded into the batch for the attention head
    switch (spec_.head) {
        case HeadKind::baseline: {
            // hand-tuned pooling: collapse the remaining height, keep columns
            Tensor pooled = maxpool2d(x, fh, 1);              // [b,c,1,fw]
            seq = transpose(reshape(pooled, {b, c, fw}), {2, 0, 1});
            break;
        }
        case HeadKind::cap:
            seq = transpose(cap(x), {1, 0, 2});  // [fw, b, c]
            break;
        case HeadKind::stretch:
            seq = transpose(stretch(x), {1, 0, 2});  // [fh*fw, b, c]
            break;
        case HeadKind::attention: {
            auto att = attention_->forward(x);  // rows [b,H,fw*c]
            groups = spec_.rows;
            Tensor r4 = reshape(att.rows, {b, groups, fw, c});
            seq = reshape(transpose(r4, {2, 0, 1, 3}), {fw, b * groups, c});
            break;
        }
    }

    fwd.rnn = lstm_.forward(seq);
    int64_t T = seq.dim(0), bp = seq.dim(1);
    Tensor flat = reshape(fwd.rnn.y, {T * bp, 2 * spec_.hidden});
    Tensor logits = reshape(proj_.forward(flat), {T, bp, spec_.classes});
    Tensor per_ex = transpose(logits, {1, 0, 2});  // [B', T, K]

    fwd.logits.resize(b);
    for (int64_t i = 0; i < b; ++i)
        for (int64_t r = 0; r < groups; ++r)
            fwd.logits[i].push_back(
                reshape(slice(per_ex, 0, i * groups + r, 1), {T, spec_.classes}));
    return fwd;
}

ParamList CrnnModel::params() const {
    ParamList out;
    for (size_t bi = 0; bi < blocks_.size(); ++bi)
        for (size_t ci = 0; ci < blocks_[bi].convs.size(); ++ci)
            blocks_[bi].convs[ci].collect(
                "block" + std::to_string(bi) + ".conv" + std::to_string(ci), out);
    if (attention_) attention_->collect("attention", out);
    lstm_.collect("lstm", out);
    proj_.collect("proj", out);
    return out;
}

ParamList CrnnModel::recurrent_params() const {
    ParamList out;
    lstm_.collect("lstm", out);
    return out;
}

int64_t CrnnModel::param_count() const {
    int64_t n = 0;
    for (const auto& p : params()) n += p.tensor.numel();
    return n;
}

// --- autoencoders ------------------------------------------------------------

Autoencoder Autoencoder::make(Rng& rng) {
    Autoencoder ae;
    int64_t chans[] = {16, 32, 64, 128};
    int64_t in = 1;
    for (int64_t c : chans) {
        ae.enc_.push_back(Conv2d::make(in, c, 3, 3, 2, 2, 1, 1, rng));
        in = c;
    }
    int64_t dec_out[] = {64, 32, 16, 1};
    for (int64_t c : dec_out) {
        ae.dec_.push_back(Conv2d::make(in, c, 3, 3, 1, 1, 1, 1, rng));
        in = c;
    }
    return ae;
}

Tensor Autoencoder::forward(const Tensor& img) const {
    if (img.ndim() != 4 || img.dim(1) != 1)
        throw ShapeError("autoencoder: expected [b,1,S,S], got " + shape_str(img.shape()));
    int64_t s = img.dim(2);
    if (img.dim(3) != s || s % 16 != 0 || s == 0)
        throw ShapeError("autoencoder: input must be square with side divisible by 16, got " +
                         shape_str(img.shape()));
    Tensor x = img;
    for (const auto& conv : enc_) x = relu(conv.forward(x));
    for (size_t i = 0; i < dec_.size(); ++i) {
        x = dec_[i].forward(upsample_nearest(x, 2));
        if (i + 1 < dec_.size()) x = relu(x);  // final conv stays linear
    }
    return x;
}

ParamList Autoencoder::params() const {
    ParamList out;
    for (size_t i = 0; i < enc_.size(); ++i)
        enc_[i].collect("enc" + std::to_string(i), out);
    for (size_t i = 0; i < dec_.size(); ++i)
        dec_[i].collect("dec" + std::to_string(i), out);
    return out;
}

int64_t Autoencoder::param_count() const {
    int64_t n = 0;
    for (const auto& p : params()) n += p.tensor.numel();
    return n;
}

Tensor compose_clean(const Tensor& v, const Tensor& l) {
    if (v.shape() != l.shape())
        throw ShapeError("compose_clean: shapes " + shape_str(v.shape()) + " and " +
                         shape_str(l.shape()) + " differ");
    return clip(add(v, l), 0, 1);
}

}  // namespace crnl
