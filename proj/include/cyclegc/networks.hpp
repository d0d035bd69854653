#pragma once

#include <map>
#include <string>
#include <vector>

#include "cyclegc/nn.hpp"

namespace cyclegc {

enum class Direction { MRtoCT, CTtoMR };

struct GeneratorConfig {
    int base_width = 64;  // stem width; downsampling doubles it twice
    int res_blocks = 9;
};

struct DiscriminatorConfig {
    int base_width = 64;
};

struct UNetConfig {
    int base_width = 64;  // 4 pooling levels double it to 16x at the bottom
    int in_channels = 2;
    int n_classes = 5;
};

/// 9-residual-block encoder/decoder translator. Operates on the internal
/// [-1,1] range; output is tanh-bounded and matches the input shape for any
/// H, W divisible by 4.
class Generator {
public:
    explicit Generator(GeneratorConfig cfg = {}, Direction dir = Direction::MRtoCT);

    Tensor forward(const Tensor& x, nn::SeqTape* tape = nullptr) const;
    Tensor backward(const nn::SeqTape& tape, const Tensor& gy);

    const std::vector<nn::ParamBlock*>& blocks() const { return blocks_; }
    void zero_grad();
    void init_params(std::uint64_t seed);
    std::size_t param_count() const;
    std::vector<double> flatten() const;
    void load_flat(const std::vector<double>& flat);
    std::uint64_t arch_hash() const;
    std::string describe() const;
    Direction direction() const { return dir_; }
    const GeneratorConfig& config() const { return cfg_; }

private:
    GeneratorConfig cfg_;
    Direction dir_;
    nn::Sequential net_;
    std::vector<nn::ParamBlock*> blocks_;
};

/// PatchGAN score map. The layer stack (4x4 kernels, strides 2,2,2,1,1 with
/// unit padding) has a 70x70 theoretical receptive field; a 256x256 input
/// yields a 30x30 map.
class Discriminator {
public:
    explicit Discriminator(DiscriminatorConfig cfg = {});

    Tensor forward(const Tensor& x, nn::SeqTape* tape = nullptr) const;
    Tensor backward(const nn::SeqTape& tape, const Tensor& gy);

    const std::vector<nn::ParamBlock*>& blocks() const { return blocks_; }
    void zero_grad();
    void init_params(std::uint64_t seed);
    std::size_t param_count() const;
    std::vector<double> flatten() const;
    void load_flat(const std::vector<double>& flat);
    std::uint64_t arch_hash() const;
    std::string describe() const;
    const DiscriminatorConfig& config() const { return cfg_; }

    /// Theoretical receptive field of one output unit, from the stride and
    /// kernel arithmetic of the stack.
    static int receptive_field();
    /// Score-map dimensions for a given input; throws std::invalid_argument
    /// when the input cannot produce a non-empty map.
    static std::pair<int, int> map_dims(int h, int w);

private:
    DiscriminatorConfig cfg_;
    nn::Sequential net_;
    std::vector<nn::ParamBlock*> blocks_;
};

/// Two-channel 2D U-Net: 4 pooling levels, skip concatenation, per-pixel
/// class logits. Channel 0 is always the CT-domain image, channel 1 the
/// MR-domain image.
class UNet {
public:
    explicit UNet(UNetConfig cfg = {});

    struct Tape;

    /// Logits (C, H, W); H and W must be divisible by 16.
    Tensor forward_logits(const Tensor& x, Tape* tape = nullptr) const;
    /// Softmax probabilities; per-pixel sums are 1 within 1e-6.
    Tensor forward(const Tensor& x) const;
    Tensor backward(const Tape& tape, const Tensor& glogits);

    const std::vector<nn::ParamBlock*>& blocks() const { return blocks_; }
    void zero_grad();
    void init_params(std::uint64_t seed);
    std::size_t param_count() const;
    std::vector<double> flatten() const;
    void load_flat(const std::vector<double>& flat);
    std::uint64_t arch_hash() const;
    std::string describe() const;
    const UNetConfig& config() const { return cfg_; }

    struct Tape {
        std::vector<nn::SeqTape> enc;      // per level
        std::vector<nn::CtxPtr> pool;      // per level
        nn::SeqTape bottom;
        std::vector<nn::CtxPtr> up;        // per level (convT)
        std::vector<nn::SeqTape> dec;      // per level
        nn::SeqTape head;
        std::vector<int> skip_channels;    // for concat backward split
    };

private:
    UNetConfig cfg_;
    static constexpr int kLevels = 4;
    std::vector<nn::Sequential> enc_;      // kLevels encoder stages
    nn::Sequential bottom_;
    std::vector<std::unique_ptr<nn::ConvTranspose2d>> up_;
    std::vector<nn::Sequential> dec_;
    nn::Sequential head_;
    nn::MaxPool2 pool_;
    std::vector<nn::ParamBlock*> blocks_;
};

// ---- Checkpoint container ---------------------------------------------------
//
// Single-file container: magic, version, JSON manifest, then raw little-endian
// double sections in manifest order. Loading refuses on architecture-hash
// mismatch.

class BlobWriter {
public:
    std::string manifest_json;  // must contain a "sections" array when written
    void add_section(const std::string& name, const std::vector<double>& data);
    void write(const std::string& path) const;
    std::vector<std::pair<std::string, std::vector<double>>> sections;
};

class BlobReader {
public:
    static BlobReader read(const std::string& path);
    std::string manifest_json;
    std::map<std::string, std::vector<double>> sections;
    const std::vector<double>& section(const std::string& name) const;
};

}  // namespace cyclegc
