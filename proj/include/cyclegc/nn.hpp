#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "cyclegc/common.hpp"
#include "cyclegc/tensor.hpp"

namespace cyclegc::nn {

/// One named parameter vector and its gradient accumulator.
struct ParamBlock {
    std::string name;
    std::vector<double> w;
    std::vector<double> g;

    void resize(std::size_t n) {
        w.assign(n, 0.0);
        g.assign(n, 0.0);
    }
    void zero_grad() { std::fill(g.begin(), g.end(), 0.0); }
};

/// Per-application activation record. Forward fills one, backward consumes
/// it, so the same network instance can run forward several times before any
/// backward pass (the cycle path applies each generator twice per step).
struct LayerCtx {
    virtual ~LayerCtx() = default;
};
using CtxPtr = std::unique_ptr<LayerCtx>;

class Layer {
public:
    virtual ~Layer() = default;

    /// ctx == nullptr runs inference only (no activation saved).
    virtual Tensor forward(const Tensor& x, CtxPtr* ctx) const = 0;

    /// Accumulates parameter gradients and returns the input gradient.
    virtual Tensor backward(const LayerCtx& ctx, const Tensor& gy) = 0;

    virtual void collect_params(std::vector<ParamBlock*>& out) {}
    virtual void init(Rng& rng) {}

    /// Stable architecture string, input to the checkpoint fingerprint.
    virtual std::string describe() const = 0;
};

enum class PadMode { Zero, Reflect };

class Conv2d : public Layer {
public:
    Conv2d(std::string name, int in_ch, int out_ch, int k, int stride, int pad,
           PadMode mode = PadMode::Zero, bool bias = true);

    Tensor forward(const Tensor& x, CtxPtr* ctx) const override;
    Tensor backward(const LayerCtx& ctx, const Tensor& gy) override;
    void collect_params(std::vector<ParamBlock*>& out) override;
    void init(Rng& rng) override;
    std::string describe() const override;

    static std::pair<int, int> out_dims(int h, int w, int k, int stride, int pad);

private:
    std::string name_;
    int in_, out_, k_, s_, p_;
    PadMode mode_;
    bool bias_;
    ParamBlock w_, b_;
};

class ConvTranspose2d : public Layer {
public:
    ConvTranspose2d(std::string name, int in_ch, int out_ch, int k, int stride, int pad,
                    int out_pad, bool bias = true);

    Tensor forward(const Tensor& x, CtxPtr* ctx) const override;
    Tensor backward(const LayerCtx& ctx, const Tensor& gy) override;
    void collect_params(std::vector<ParamBlock*>& out) override;
    void init(Rng& rng) override;
    std::string describe() const override;

private:
    std::string name_;
    int in_, out_, k_, s_, p_, op_;
    bool bias_;
    ParamBlock w_, b_;
};

/// Per-instance, per-channel normalization without learned affine terms.
class InstanceNorm : public Layer {
public:
    explicit InstanceNorm(int channels, double eps = 1e-5) : ch_(channels), eps_(eps) {}
    Tensor forward(const Tensor& x, CtxPtr* ctx) const override;
    Tensor backward(const LayerCtx& ctx, const Tensor& gy) override;
    std::string describe() const override;

private:
    int ch_;
    double eps_;
};

class ReLU : public Layer {
public:
    explicit ReLU(double slope = 0.0) : slope_(slope) {}
    Tensor forward(const Tensor& x, CtxPtr* ctx) const override;
    Tensor backward(const LayerCtx& ctx, const Tensor& gy) override;
    std::string describe() const override;

private:
    double slope_;  // 0 = plain ReLU, 0.2 = discriminator leaky units
};

class Tanh : public Layer {
public:
    Tensor forward(const Tensor& x, CtxPtr* ctx) const override;
    Tensor backward(const LayerCtx& ctx, const Tensor& gy) override;
    std::string describe() const override;
};

class MaxPool2 : public Layer {
public:
    Tensor forward(const Tensor& x, CtxPtr* ctx) const override;
    Tensor backward(const LayerCtx& ctx, const Tensor& gy) override;
    std::string describe() const override;
};

/// Residual block: x + IN(conv(ReLU(IN(conv(x))))), reflect-padded 3x3 convs.
class ResBlock : public Layer {
public:
    ResBlock(std::string name, int channels);
    Tensor forward(const Tensor& x, CtxPtr* ctx) const override;
    Tensor backward(const LayerCtx& ctx, const Tensor& gy) override;
    void collect_params(std::vector<ParamBlock*>& out) override;
    void init(Rng& rng) override;
    std::string describe() const override;

private:
    Conv2d conv1_, conv2_;
    InstanceNorm norm1_, norm2_;
    ReLU relu_;
};

struct SeqTape {
    std::vector<CtxPtr> ctx;
};

class Sequential {
public:
    void add(std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); }

    Tensor forward(const Tensor& x, SeqTape* tape) const;
    Tensor backward(const SeqTape& tape, const Tensor& gy);

    void collect_params(std::vector<ParamBlock*>& out);
    void init(Rng& rng);
    std::string describe() const;
    std::size_t num_layers() const { return layers_.size(); }

private:
    std::vector<std::unique_ptr<Layer>> layers_;
};

/// Channel-wise softmax; per-pixel outputs sum to 1.
Tensor softmax_channels(const Tensor& logits);

/// Cross entropy from logits against an integer target map, averaged over
/// pixels. Fills glogits (softmax - onehot, averaged) when non-null.
double cross_entropy_logits(const Tensor& logits, const std::vector<int>& target,
                            Tensor* glogits);

// im2col primitives, shared by the conv layers and exercised directly in
// tests. cols has (C*k*k) rows and (outH*outW) columns.
void im2col(const double* src, int C, int H, int W, int k, int stride, int outH, int outW,
            double* cols);
void col2im(const double* cols, int C, int H, int W, int k, int stride, int outH, int outW,
            double* dst_acc);

void gemm(bool trans_a, bool trans_b, int m, int n, int kdim, double alpha, const double* a,
          int lda, const double* b, int ldb, double beta, double* c, int ldc);

/// Adam with configurable moment coefficients; one instance per network.
class Adam {
public:
    Adam(double beta1, double beta2, double eps = 1e-8)
        : beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(const std::vector<ParamBlock*>& blocks, double lr);

    /// Sizes the moment buffers to the given blocks without stepping.
    void bind(const std::vector<ParamBlock*>& blocks);

    long t() const { return t_; }
    void serialize(std::vector<double>& m_out, std::vector<double>& v_out) const;
    void deserialize(const std::vector<double>& m_in, const std::vector<double>& v_in, long t);

private:
    double beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

}  // namespace cyclegc::nn
