#pragma once

// Neural building blocks on top of the tensor core: convolutions, pooling,
// nearest upsampling, dense projection and a bidirectional LSTM stack.
// Weight init is uniform [-s, s] with s = sqrt(1/fan_in), zero biases,
// LSTM forget-gate bias 1.

#include <string>
#include <utility>
#include <vector>

#include "crnl/tensor.hpp"

namespace crnl {

struct Param {
    std::string name;
    Tensor tensor;
};
using ParamList = std::vector<Param>;

// raw ops -------------------------------------------------------------------

// x[b,cin,H,W] (*) w[cout,cin,kh,kw], cross-correlation, zero padding.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int64_t sh, int64_t sw,
              int64_t ph, int64_t pw);
// valid 1-D cross-correlation: x[b,ch,L] (*) w[out,in,k] -> [b,out,L-k+1]
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias);
// adjoint of conv2d; w stored [cin,cout,kh,kw], x[b,cin,H,W] -> [b,cout,(H-1)sh+kh-2ph,...]
Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& bias, int64_t sh,
                        int64_t sw, int64_t ph, int64_t pw);
// valid max pooling; gradient goes to the first maximum in row-major window scan
Tensor maxpool2d(const Tensor& x, int64_t ph, int64_t pw, int64_t sh, int64_t sw);
inline Tensor maxpool2d(const Tensor& x, int64_t ph, int64_t pw) {
    return maxpool2d(x, ph, pw, ph, pw);
}
Tensor upsample_nearest(const Tensor& x, int64_t factor);

// layers --------------------------------------------------------------------

struct Conv2d {
    int64_t in_ch = 0, out_ch = 0, kh = 0, kw = 0, sh = 1, sw = 1, ph = 0, pw = 0;
    Tensor w, b;

    static Conv2d make(int64_t in_ch, int64_t out_ch, int64_t kh, int64_t kw, int64_t sh,
                       int64_t sw, int64_t ph, int64_t pw, Rng& rng);
    Tensor forward(const Tensor& x) const { return conv2d(x, w, b, sh, sw, ph, pw); }
    void collect(const std::string& prefix, ParamList& out) const;
};

struct Conv1d {
    int64_t in_ch = 0, out_ch = 0, k = 0;
    Tensor w, b;

    static Conv1d make(int64_t in_ch, int64_t out_ch, int64_t k, Rng& rng);
    Tensor forward(const Tensor& x) const { return conv1d(x, w, b); }
    void collect(const std::string& prefix, ParamList& out) const;
};

struct ConvTranspose2d {
    int64_t in_ch = 0, out_ch = 0, kh = 0, kw = 0, sh = 1, sw = 1, ph = 0, pw = 0;
    Tensor w, b;

    static ConvTranspose2d make(int64_t in_ch, int64_t out_ch, int64_t kh, int64_t kw, int64_t sh,
                                int64_t sw, int64_t ph, int64_t pw, Rng& rng);
    Tensor forward(const Tensor& x) const { return conv_transpose2d(x, w, b, sh, sw, ph, pw); }
    void collect(const std::string& prefix, ParamList& out) const;
};

struct Dense {
    int64_t in = 0, out = 0;
    Tensor w, b;  // w[in,out]

    static Dense make(int64_t in, int64_t out, Rng& rng);
    Tensor forward(const Tensor& x) const;  // x[b,in] -> [b,out]
    void collect(const std::string& prefix, ParamList& out) const;
};

struct LstmState {
    Tensor h;  // [b, hidden]
    Tensor c;  // [b, hidden]
};

struct BiLstm {
    struct DirParams {
        Tensor wx;  // [in, 4h], gate order i,f,g,o
        Tensor wh;  // [h, 4h]
        Tensor b;   // [4h]
    };
    struct Out {
        Tensor y;                            // [T, b, 2h]
        std::vector<LstmState> last_states;  // [layer*2 + dir]
        Tensor last_h_cat() const;           // last layer, fwd|bwd concat -> [b,2h]
        Tensor last_c_cat() const;
    };

    int64_t input = 0, hidden = 0;
    int layers = 0;
    std::vector<DirParams> dirs;  // [layer*2 + dir]

    static BiLstm make(int64_t input, int64_t hidden, int layers, Rng& rng);
    Out forward(const Tensor& x) const;  // x[T,b,f]
    void collect(const std::string& prefix, ParamList& out) const;
    // the gradient-clipping group (recurrent path), see harness
    void collect_recurrent(ParamList& out) const;
};

}  // namespace crnl
