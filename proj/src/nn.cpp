#include "cyclegc/nn.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

namespace cyclegc::nn {

void gemm(bool trans_a, bool trans_b, int m, int n, int kdim, double alpha, const double* a,
          int lda, const double* b, int ldb, double beta, double* c, int ldc) {
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, m, n, kdim, alpha, a, lda, b, ldb, beta, c,
                ldc);
}

void im2col(const double* src, int C, int H, int W, int k, int stride, int outH, int outW,
            double* cols) {
    const std::size_t L = static_cast<std::size_t>(outH) * outW;
    for (int c = 0; c < C; ++c) {
        const double* plane = src + static_cast<std::size_t>(c) * H * W;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                double* row = cols + (static_cast<std::size_t>(c) * k * k + ky * k + kx) * L;
                for (int oy = 0; oy < outH; ++oy) {
                    const double* srow = plane + static_cast<std::size_t>(oy * stride + ky) * W +
                                         kx;
                    double* drow = row + static_cast<std::size_t>(oy) * outW;
                    if (stride == 1) {
                        std::memcpy(drow, srow, sizeof(double) * outW);
                    } else {
                        for (int ox = 0; ox < outW; ++ox) drow[ox] = srow[ox * stride];
                    }
                }
            }
        }
    }
}

void col2im(const double* cols, int C, int H, int W, int k, int stride, int outH, int outW,
            double* dst_acc) {
    const std::size_t L = static_cast<std::size_t>(outH) * outW;
    for (int c = 0; c < C; ++c) {
        double* plane = dst_acc + static_cast<std::size_t>(c) * H * W;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const double* row = cols + (static_cast<std::size_t>(c) * k * k + ky * k + kx) * L;
                for (int oy = 0; oy < outH; ++oy) {
                    double* drow = plane + static_cast<std::size_t>(oy * stride + ky) * W + kx;
                    const double* srow = row + static_cast<std::size_t>(oy) * outW;
                    for (int ox = 0; ox < outW; ++ox) drow[ox * stride] += srow[ox];
                }
            }
        }
    }
}

namespace {

int mirror_index(int i, int n) {
    if (i < 0) return -i;
    if (i >= n) return 2 * n - 2 - i;
    return i;
}

Tensor pad_tensor(const Tensor& x, int p, PadMode mode) {
    if (p == 0) return x;
    Tensor out(x.c, x.h + 2 * p, x.w + 2 * p, 0.0);
    for (int c = 0; c < x.c; ++c) {
        const double* src = x.channel(c);
        double* dst = out.channel(c);
        if (mode == PadMode::Zero) {
            for (int y = 0; y < x.h; ++y)
                std::memcpy(dst + static_cast<std::size_t>(y + p) * out.w + p,
                            src + static_cast<std::size_t>(y) * x.w, sizeof(double) * x.w);
        } else {
            for (int y = 0; y < out.h; ++y) {
                const int sy = mirror_index(y - p, x.h);
                for (int xx = 0; xx < out.w; ++xx) {
                    const int sx = mirror_index(xx - p, x.w);
                    dst[static_cast<std::size_t>(y) * out.w + xx] =
                        src[static_cast<std::size_t>(sy) * x.w + sx];
                }
            }
        }
    }
    return out;
}

Tensor unpad_grad(const Tensor& gp, int p, PadMode mode, int H, int W) {
    if (p == 0) return gp;
    Tensor gx(gp.c, H, W, 0.0);
    for (int c = 0; c < gp.c; ++c) {
        const double* src = gp.channel(c);
        double* dst = gx.channel(c);
        for (int y = 0; y < H; ++y)
            for (int xx = 0; xx < W; ++xx)
                dst[static_cast<std::size_t>(y) * W + xx] =
                    src[static_cast<std::size_t>(y + p) * gp.w + (xx + p)];
        if (mode == PadMode::Reflect) {
            for (int y = 0; y < gp.h; ++y) {
                for (int xx = 0; xx < gp.w; ++xx) {
                    const bool interior = y >= p && y < H + p && xx >= p && xx < W + p;
                    if (interior) continue;
                    const int sy = mirror_index(y - p, H);
                    const int sx = mirror_index(xx - p, W);
                    dst[static_cast<std::size_t>(sy) * W + sx] +=
                        src[static_cast<std::size_t>(y) * gp.w + xx];
                }
            }
        }
    }
    return gx;
}

struct ConvCtx final : LayerCtx {
    std::vector<double> cols;  // im2col of the padded input, reused by backward
    int in_h = 0, in_w = 0, out_h = 0, out_w = 0, pad_h = 0, pad_w = 0;
};

struct ConvTCtx final : LayerCtx {
    Tensor input;
    int out_h = 0, out_w = 0;
};

struct NormCtx final : LayerCtx {
    Tensor xhat;
    std::vector<double> inv;
};

struct ReluCtx final : LayerCtx {
    Tensor input;
};

struct TanhCtx final : LayerCtx {
    Tensor output;
};

struct PoolCtx final : LayerCtx {
    std::vector<std::int32_t> argmax;  // flat input offsets per output element
    int in_h = 0, in_w = 0;
};

struct ResCtx final : LayerCtx {
    CtxPtr c1, n1, r, c2, n2;
};

}  // namespace

// ---- Conv2d ----------------------------------------------------------------

Conv2d::Conv2d(std::string name, int in_ch, int out_ch, int k, int stride, int pad, PadMode mode,
               bool bias)
    : name_(std::move(name)), in_(in_ch), out_(out_ch), k_(k), s_(stride), p_(pad), mode_(mode),
      bias_(bias) {
    w_.name = name_ + ".w";
    w_.resize(static_cast<std::size_t>(out_) * in_ * k_ * k_);
    b_.name = name_ + ".b";
    b_.resize(bias_ ? static_cast<std::size_t>(out_) : 0);
}

std::pair<int, int> Conv2d::out_dims(int h, int w, int k, int stride, int pad) {
    const int oh = (h + 2 * pad - k) / stride + 1;
    const int ow = (w + 2 * pad - k) / stride + 1;
    return {oh, ow};
}

Tensor Conv2d::forward(const Tensor& x, CtxPtr* ctx) const {
    if (x.c != in_) throw std::invalid_argument(name_ + ": channel mismatch");
    auto [oh, ow] = out_dims(x.h, x.w, k_, s_, p_);
    if (oh < 1 || ow < 1) throw std::invalid_argument(name_ + ": input too small");

    Tensor padded = pad_tensor(x, p_, mode_);
    const int K = in_ * k_ * k_;
    const std::size_t L = static_cast<std::size_t>(oh) * ow;
    std::vector<double> cols(static_cast<std::size_t>(K) * L);
    im2col(padded.v.data(), in_, padded.h, padded.w, k_, s_, oh, ow, cols.data());

    Tensor y(out_, oh, ow);
    gemm(false, false, out_, static_cast<int>(L), K, 1.0, w_.w.data(), K, cols.data(),
         static_cast<int>(L), 0.0, y.v.data(), static_cast<int>(L));
    if (bias_)
        for (int o = 0; o < out_; ++o) {
            double* plane = y.channel(o);
            const double b = b_.w[o];
            for (std::size_t i = 0; i < L; ++i) plane[i] += b;
        }

    if (ctx) {
        auto c = std::make_unique<ConvCtx>();
        c->cols = std::move(cols);
        c->in_h = x.h;
        c->in_w = x.w;
        c->out_h = oh;
        c->out_w = ow;
        c->pad_h = padded.h;
        c->pad_w = padded.w;
        *ctx = std::move(c);
    }
    return y;
}

Tensor Conv2d::backward(const LayerCtx& ctx_in, const Tensor& gy) {
    const auto& ctx = static_cast<const ConvCtx&>(ctx_in);
    const int oh = ctx.out_h, ow = ctx.out_w;
    const int K = in_ * k_ * k_;
    const std::size_t L = static_cast<std::size_t>(oh) * ow;
    const std::vector<double>& cols = ctx.cols;

    // dW += gY * colsT ; dB += row sums ; dX = WT * gY scattered back.
    gemm(false, true, out_, K, static_cast<int>(L), 1.0, gy.v.data(), static_cast<int>(L),
         cols.data(), static_cast<int>(L), 1.0, w_.g.data(), K);
    if (bias_)
        for (int o = 0; o < out_; ++o) {
            const double* plane = gy.channel(o);
            double s = 0.0;
            for (std::size_t i = 0; i < L; ++i) s += plane[i];
            b_.g[o] += s;
        }

    std::vector<double> gcols(static_cast<std::size_t>(K) * L);
    gemm(true, false, K, static_cast<int>(L), out_, 1.0, w_.w.data(), K, gy.v.data(),
         static_cast<int>(L), 0.0, gcols.data(), static_cast<int>(L));

    Tensor gpadded(in_, ctx.pad_h, ctx.pad_w, 0.0);
    col2im(gcols.data(), in_, gpadded.h, gpadded.w, k_, s_, oh, ow, gpadded.v.data());
    return unpad_grad(gpadded, p_, mode_, ctx.in_h, ctx.in_w);
}

void Conv2d::collect_params(std::vector<ParamBlock*>& out) {
    out.push_back(&w_);
    if (bias_) out.push_back(&b_);
}

void Conv2d::init(Rng& rng) {
    for (double& v : w_.w) v = 0.02 * rng.normal();
    std::fill(b_.w.begin(), b_.w.end(), 0.0);
}

std::string Conv2d::describe() const {
    std::ostringstream os;
    os << "conv(" << in_ << "," << out_ << ",k" << k_ << ",s" << s_ << ",p" << p_
       << (mode_ == PadMode::Reflect ? ",reflect" : ",zero") << (bias_ ? ",b" : "") << ")";
    return os.str();
}

// ---- ConvTranspose2d -------------------------------------------------------

ConvTranspose2d::ConvTranspose2d(std::string name, int in_ch, int out_ch, int k, int stride,
                                 int pad, int out_pad, bool bias)
    : name_(std::move(name)), in_(in_ch), out_(out_ch), k_(k), s_(stride), p_(pad), op_(out_pad),
      bias_(bias) {
    if (op_ >= s_) throw std::invalid_argument(name_ + ": output padding must be < stride");
    w_.name = name_ + ".w";
    w_.resize(static_cast<std::size_t>(in_) * out_ * k_ * k_);
    b_.name = name_ + ".b";
    b_.resize(bias_ ? static_cast<std::size_t>(out_) : 0);
}

Tensor ConvTranspose2d::forward(const Tensor& x, CtxPtr* ctx) const {
    if (x.c != in_) throw std::invalid_argument(name_ + ": channel mismatch");
    const int oh = (x.h - 1) * s_ - 2 * p_ + k_ + op_;
    const int ow = (x.w - 1) * s_ - 2 * p_ + k_ + op_;
    if (oh < 1 || ow < 1) throw std::invalid_argument(name_ + ": input too small");

    const int K = out_ * k_ * k_;
    const std::size_t L = static_cast<std::size_t>(x.h) * x.w;
    std::vector<double> cols(static_cast<std::size_t>(K) * L);
    // cols = W^T X with W stored [in][out*k*k].
    gemm(true, false, K, static_cast<int>(L), in_, 1.0, w_.w.data(), K, x.v.data(),
         static_cast<int>(L), 0.0, cols.data(), static_cast<int>(L));

    Tensor padded(out_, oh + 2 * p_, ow + 2 * p_, 0.0);
    col2im(cols.data(), out_, padded.h, padded.w, k_, s_, x.h, x.w, padded.v.data());
    Tensor y = unpad_grad(padded, p_, PadMode::Zero, oh, ow);
    if (bias_)
        for (int o = 0; o < out_; ++o) {
            double* plane = y.channel(o);
            const double b = b_.w[o];
            for (std::size_t i = 0; i < y.plane(); ++i) plane[i] += b;
        }

    if (ctx) {
        auto c = std::make_unique<ConvTCtx>();
        c->input = x;
        c->out_h = oh;
        c->out_w = ow;
        *ctx = std::move(c);
    }
    return y;
}

Tensor ConvTranspose2d::backward(const LayerCtx& ctx_in, const Tensor& gy) {
    const auto& ctx = static_cast<const ConvTCtx&>(ctx_in);
    const Tensor& x = ctx.input;
    const int K = out_ * k_ * k_;
    const std::size_t L = static_cast<std::size_t>(x.h) * x.w;

    const Tensor gyp = pad_tensor(gy, p_, PadMode::Zero);
    std::vector<double> gcols(static_cast<std::size_t>(K) * L);
    im2col(gyp.v.data(), out_, gyp.h, gyp.w, k_, s_, x.h, x.w, gcols.data());

    Tensor gx(in_, x.h, x.w);
    gemm(false, false, in_, static_cast<int>(L), K, 1.0, w_.w.data(), K, gcols.data(),
         static_cast<int>(L), 0.0, gx.v.data(), static_cast<int>(L));
    gemm(false, true, in_, K, static_cast<int>(L), 1.0, x.v.data(), static_cast<int>(L),
         gcols.data(), static_cast<int>(L), 1.0, w_.g.data(), K);
    if (bias_)
        for (int o = 0; o < out_; ++o) {
            const double* plane = gy.channel(o);
            double s = 0.0;
            for (std::size_t i = 0; i < gy.plane(); ++i) s += plane[i];
            b_.g[o] += s;
        }
    return gx;
}

void ConvTranspose2d::collect_params(std::vector<ParamBlock*>& out) {
    out.push_back(&w_);
    if (bias_) out.push_back(&b_);
}

void ConvTranspose2d::init(Rng& rng) {
    for (double& v : w_.w) v = 0.02 * rng.normal();
    std::fill(b_.w.begin(), b_.w.end(), 0.0);
}

std::string ConvTranspose2d::describe() const {
    std::ostringstream os;
    os << "convT(" << in_ << "," << out_ << ",k" << k_ << ",s" << s_ << ",p" << p_ << ",op" << op_
       << (bias_ ? ",b" : "") << ")";
    return os.str();
}

// ---- InstanceNorm ----------------------------------------------------------

Tensor InstanceNorm::forward(const Tensor& x, CtxPtr* ctx) const {
    if (x.c != ch_) throw std::invalid_argument("instance_norm: channel mismatch");
    Tensor y(x.c, x.h, x.w);
    std::vector<double> inv(static_cast<std::size_t>(x.c));
    const std::size_t n = x.plane();
    for (int c = 0; c < x.c; ++c) {
        const double* src = x.channel(c);
        double* dst = y.channel(c);
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += src[i];
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = src[i] - mean;
            var += d * d;
        }
        var /= static_cast<double>(n);
        const double iv = 1.0 / std::sqrt(var + eps_);
        inv[static_cast<std::size_t>(c)] = iv;
        for (std::size_t i = 0; i < n; ++i) dst[i] = (src[i] - mean) * iv;
    }
    if (ctx) {
        auto c = std::make_unique<NormCtx>();
        c->xhat = y;
        c->inv = std::move(inv);
        *ctx = std::move(c);
    }
    return y;
}

Tensor InstanceNorm::backward(const LayerCtx& ctx_in, const Tensor& gy) {
    const auto& ctx = static_cast<const NormCtx&>(ctx_in);
    Tensor gx(gy.c, gy.h, gy.w);
    const std::size_t n = gy.plane();
    for (int c = 0; c < gy.c; ++c) {
        const double* g = gy.channel(c);
        const double* xh = ctx.xhat.channel(c);
        double* dst = gx.channel(c);
        double gmean = 0.0, gxmean = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            gmean += g[i];
            gxmean += g[i] * xh[i];
        }
        gmean /= static_cast<double>(n);
        gxmean /= static_cast<double>(n);
        const double iv = ctx.inv[static_cast<std::size_t>(c)];
        for (std::size_t i = 0; i < n; ++i) dst[i] = iv * (g[i] - gmean - xh[i] * gxmean);
    }
    return gx;
}

std::string InstanceNorm::describe() const {
    std::ostringstream os;
    os << "inorm(" << ch_ << ")";
    return os.str();
}

// ---- Activations -----------------------------------------------------------

Tensor ReLU::forward(const Tensor& x, CtxPtr* ctx) const {
    Tensor y(x.c, x.h, x.w);
    for (std::size_t i = 0; i < x.size(); ++i) y.v[i] = x.v[i] > 0.0 ? x.v[i] : slope_ * x.v[i];
    if (ctx) {
        auto c = std::make_unique<ReluCtx>();
        c->input = x;
        *ctx = std::move(c);
    }
    return y;
}

Tensor ReLU::backward(const LayerCtx& ctx_in, const Tensor& gy) {
    const auto& ctx = static_cast<const ReluCtx&>(ctx_in);
    Tensor gx(gy.c, gy.h, gy.w);
    for (std::size_t i = 0; i < gy.size(); ++i)
        gx.v[i] = ctx.input.v[i] > 0.0 ? gy.v[i] : slope_ * gy.v[i];
    return gx;
}

std::string ReLU::describe() const {
    std::ostringstream os;
    os << (slope_ == 0.0 ? "relu" : "lrelu(0.2)");
    return os.str();
}

Tensor Tanh::forward(const Tensor& x, CtxPtr* ctx) const {
    Tensor y(x.c, x.h, x.w);
    for (std::size_t i = 0; i < x.size(); ++i) y.v[i] = std::tanh(x.v[i]);
    if (ctx) {
        auto c = std::make_unique<TanhCtx>();
        c->output = y;
        *ctx = std::move(c);
    }
    return y;
}

Tensor Tanh::backward(const LayerCtx& ctx_in, const Tensor& gy) {
    const auto& ctx = static_cast<const TanhCtx&>(ctx_in);
    Tensor gx(gy.c, gy.h, gy.w);
    for (std::size_t i = 0; i < gy.size(); ++i)
        gx.v[i] = gy.v[i] * (1.0 - ctx.output.v[i] * ctx.output.v[i]);
    return gx;
}

std::string Tanh::describe() const { return "tanh"; }

Tensor MaxPool2::forward(const Tensor& x, CtxPtr* ctx) const {
    if (x.h % 2 != 0 || x.w % 2 != 0)
        throw std::invalid_argument("maxpool2: dimensions must be even");
    const int oh = x.h / 2, ow = x.w / 2;
    Tensor y(x.c, oh, ow);
    std::vector<std::int32_t> arg(static_cast<std::size_t>(x.c) * oh * ow);
    for (int c = 0; c < x.c; ++c) {
        const double* src = x.channel(c);
        double* dst = y.channel(c);
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                int best = (2 * oy) * x.w + 2 * ox;
                double bv = src[best];
                const int cand[3] = {(2 * oy) * x.w + 2 * ox + 1, (2 * oy + 1) * x.w + 2 * ox,
                                     (2 * oy + 1) * x.w + 2 * ox + 1};
                for (int k = 0; k < 3; ++k)
                    if (src[cand[k]] > bv) {
                        bv = src[cand[k]];
                        best = cand[k];
                    }
                dst[static_cast<std::size_t>(oy) * ow + ox] = bv;
                arg[static_cast<std::size_t>(c) * oh * ow + static_cast<std::size_t>(oy) * ow +
                    ox] = best;
            }
        }
    }
    if (ctx) {
        auto c = std::make_unique<PoolCtx>();
        c->argmax = std::move(arg);
        c->in_h = x.h;
        c->in_w = x.w;
        *ctx = std::move(c);
    }
    return y;
}

Tensor MaxPool2::backward(const LayerCtx& ctx_in, const Tensor& gy) {
    const auto& ctx = static_cast<const PoolCtx&>(ctx_in);
    Tensor gx(gy.c, ctx.in_h, ctx.in_w, 0.0);
    const std::size_t per = gy.plane();
    for (int c = 0; c < gy.c; ++c) {
        const double* g = gy.channel(c);
        double* dst = gx.channel(c);
        for (std::size_t i = 0; i < per; ++i)
            dst[ctx.argmax[static_cast<std::size_t>(c) * per + i]] += g[i];
    }
    return gx;
}

std::string MaxPool2::describe() const { return "maxpool2"; }

// ---- ResBlock ---------------------------------------------------------------

ResBlock::ResBlock(std::string name, int channels)
    : conv1_(name + ".c1", channels, channels, 3, 1, 1, PadMode::Reflect, true),
      conv2_(name + ".c2", channels, channels, 3, 1, 1, PadMode::Reflect, true),
      norm1_(channels), norm2_(channels), relu_(0.0) {}

Tensor ResBlock::forward(const Tensor& x, CtxPtr* ctx) const {
    auto c = ctx ? std::make_unique<ResCtx>() : nullptr;
    Tensor t = conv1_.forward(x, c ? &c->c1 : nullptr);
    t = norm1_.forward(t, c ? &c->n1 : nullptr);
    t = relu_.forward(t, c ? &c->r : nullptr);
    t = conv2_.forward(t, c ? &c->c2 : nullptr);
    t = norm2_.forward(t, c ? &c->n2 : nullptr);
    for (std::size_t i = 0; i < t.size(); ++i) t.v[i] += x.v[i];
    if (ctx) *ctx = std::move(c);
    return t;
}

Tensor ResBlock::backward(const LayerCtx& ctx_in, const Tensor& gy) {
    const auto& ctx = static_cast<const ResCtx&>(ctx_in);
    Tensor g = norm2_.backward(*ctx.n2, gy);
    g = conv2_.backward(*ctx.c2, g);
    g = relu_.backward(*ctx.r, g);
    g = norm1_.backward(*ctx.n1, g);
    g = conv1_.backward(*ctx.c1, g);
    for (std::size_t i = 0; i < g.size(); ++i) g.v[i] += gy.v[i];
    return g;
}

void ResBlock::collect_params(std::vector<ParamBlock*>& out) {
    conv1_.collect_params(out);
    conv2_.collect_params(out);
}

void ResBlock::init(Rng& rng) {
    conv1_.init(rng);
    conv2_.init(rng);
}

std::string ResBlock::describe() const {
    return "res[" + conv1_.describe() + ";" + conv2_.describe() + "]";
}

// ---- Sequential -------------------------------------------------------------

Tensor Sequential::forward(const Tensor& x, SeqTape* tape) const {
    Tensor cur = x;
    if (tape) {
        tape->ctx.clear();
        tape->ctx.resize(layers_.size());
    }
    for (std::size_t i = 0; i < layers_.size(); ++i)
        cur = layers_[i]->forward(cur, tape ? &tape->ctx[i] : nullptr);
    return cur;
}

Tensor Sequential::backward(const SeqTape& tape, const Tensor& gy) {
    if (tape.ctx.size() != layers_.size())
        throw std::invalid_argument("sequential: tape does not match network");
    Tensor g = gy;
    for (std::size_t i = layers_.size(); i-- > 0;) g = layers_[i]->backward(*tape.ctx[i], g);
    return g;
}

void Sequential::collect_params(std::vector<ParamBlock*>& out) {
    for (auto& l : layers_) l->collect_params(out);
}

void Sequential::init(Rng& rng) {
    for (auto& l : layers_) l->init(rng);
}

std::string Sequential::describe() const {
    std::string s;
    for (const auto& l : layers_) {
        s += l->describe();
        s += "|";
    }
    return s;
}

// ---- Softmax / cross entropy ------------------------------------------------

Tensor softmax_channels(const Tensor& logits) {
    Tensor p(logits.c, logits.h, logits.w);
    const std::size_t n = logits.plane();
    for (std::size_t i = 0; i < n; ++i) {
        double mx = logits.v[i];
        for (int c = 1; c < logits.c; ++c) mx = std::max(mx, logits.v[c * n + i]);
        double sum = 0.0;
        for (int c = 0; c < logits.c; ++c) {
            const double e = std::exp(logits.v[c * n + i] - mx);
            p.v[c * n + i] = e;
            sum += e;
        }
        for (int c = 0; c < logits.c; ++c) p.v[c * n + i] /= sum;
    }
    return p;
}

double cross_entropy_logits(const Tensor& logits, const std::vector<int>& target,
                            Tensor* glogits) {
    const std::size_t n = logits.plane();
    if (target.size() != n) throw std::invalid_argument("cross_entropy: target size mismatch");
    if (glogits) *glogits = Tensor(logits.c, logits.h, logits.w, 0.0);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const int t = target[i];
        if (t < 0 || t >= logits.c)
            throw InvalidDataError("cross_entropy: class id out of range");
        double mx = logits.v[i];
        for (int c = 1; c < logits.c; ++c) mx = std::max(mx, logits.v[c * n + i]);
        double sum = 0.0;
        for (int c = 0; c < logits.c; ++c) sum += std::exp(logits.v[c * n + i] - mx);
        const double lse = mx + std::log(sum);
        loss += lse - logits.v[static_cast<std::size_t>(t) * n + i];
        if (glogits) {
            for (int c = 0; c < logits.c; ++c) {
                const double p = std::exp(logits.v[c * n + i] - lse);
                glogits->v[c * n + i] = (p - (c == t ? 1.0 : 0.0)) / static_cast<double>(n);
            }
        }
    }
    return loss / static_cast<double>(n);
}

// ---- Adam --------------------------------------------------------------------

void Adam::bind(const std::vector<ParamBlock*>& blocks) {
    m_.resize(blocks.size());
    v_.resize(blocks.size());
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        m_[i].assign(blocks[i]->w.size(), 0.0);
        v_[i].assign(blocks[i]->w.size(), 0.0);
    }
}

void Adam::step(const std::vector<ParamBlock*>& blocks, double lr) {
    if (m_.empty()) bind(blocks);
    if (m_.size() != blocks.size()) throw std::invalid_argument("adam: block count changed");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        auto& blk = *blocks[i];
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < blk.w.size(); ++j) {
            const double g = blk.g[j];
            m[j] = beta1_ * m[j] + (1.0 - beta1_) * g;
            v[j] = beta2_ * v[j] + (1.0 - beta2_) * g * g;
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            blk.w[j] -= lr * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

void Adam::serialize(std::vector<double>& m_out, std::vector<double>& v_out) const {
    m_out.clear();
    v_out.clear();
    for (const auto& m : m_) m_out.insert(m_out.end(), m.begin(), m.end());
    for (const auto& v : v_) v_out.insert(v_out.end(), v.begin(), v.end());
}

void Adam::deserialize(const std::vector<double>& m_in, const std::vector<double>& v_in, long t) {
    // Shapes are re-derived on the next step; here both flats must match the
    // already-laid-out m_/v_ created by a prior step or stay pending.
    if (m_.empty())
        throw std::invalid_argument("adam: deserialize requires layout (call after binding)");
    std::size_t off = 0;
    for (auto& m : m_) {
        if (off + m.size() > m_in.size()) throw FormatError("adam: moment blob too short");
        std::copy(m_in.begin() + off, m_in.begin() + off + m.size(), m.begin());
        off += m.size();
    }
    if (off != m_in.size()) throw FormatError("adam: moment blob size mismatch");
    off = 0;
    for (auto& v : v_) {
        std::copy(v_in.begin() + off, v_in.begin() + off + v.size(), v.begin());
        off += v.size();
    }
    t_ = t;
}

}  // namespace cyclegc::nn
