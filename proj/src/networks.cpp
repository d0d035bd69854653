#include "cyclegc/networks.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace cyclegc {

using nn::Conv2d;
using nn::ConvTranspose2d;
using nn::InstanceNorm;
using nn::MaxPool2;
using nn::PadMode;
using nn::ReLU;
using nn::ResBlock;
using nn::Tanh;

namespace {

std::vector<double> flatten_blocks(const std::vector<nn::ParamBlock*>& blocks) {
    std::vector<double> flat;
    for (const auto* b : blocks) flat.insert(flat.end(), b->w.begin(), b->w.end());
    return flat;
}

void load_blocks(const std::vector<nn::ParamBlock*>& blocks, const std::vector<double>& flat) {
    std::size_t off = 0;
    for (auto* b : blocks) {
        if (off + b->w.size() > flat.size())
            throw FormatError("parameter blob too short for architecture");
        std::copy(flat.begin() + off, flat.begin() + off + b->w.size(), b->w.begin());
        off += b->w.size();
    }
    if (off != flat.size()) throw FormatError("parameter blob size mismatch");
}

std::size_t count_blocks(const std::vector<nn::ParamBlock*>& blocks) {
    std::size_t n = 0;
    for (const auto* b : blocks) n += b->w.size();
    return n;
}

}  // namespace

// ---- Generator ---------------------------------------------------------------

Generator::Generator(GeneratorConfig cfg, Direction dir) : cfg_(cfg), dir_(dir) {
    const int w = cfg_.base_width;
    net_.add(std::make_unique<Conv2d>("g.stem", 1, w, 7, 1, 3, PadMode::Reflect));
    net_.add(std::make_unique<InstanceNorm>(w));
    net_.add(std::make_unique<ReLU>());
    net_.add(std::make_unique<Conv2d>("g.down1", w, 2 * w, 3, 2, 1));
    net_.add(std::make_unique<InstanceNorm>(2 * w));
    net_.add(std::make_unique<ReLU>());
    net_.add(std::make_unique<Conv2d>("g.down2", 2 * w, 4 * w, 3, 2, 1));
    net_.add(std::make_unique<InstanceNorm>(4 * w));
    net_.add(std::make_unique<ReLU>());
    for (int i = 0; i < cfg_.res_blocks; ++i)
        net_.add(std::make_unique<ResBlock>("g.res" + std::to_string(i), 4 * w));
    net_.add(std::make_unique<ConvTranspose2d>("g.up1", 4 * w, 2 * w, 3, 2, 1, 1));
    net_.add(std::make_unique<InstanceNorm>(2 * w));
    net_.add(std::make_unique<ReLU>());
    net_.add(std::make_unique<ConvTranspose2d>("g.up2", 2 * w, w, 3, 2, 1, 1));
    net_.add(std::make_unique<InstanceNorm>(w));
    net_.add(std::make_unique<ReLU>());
    net_.add(std::make_unique<Conv2d>("g.head", w, 1, 7, 1, 3, PadMode::Reflect));
    net_.add(std::make_unique<Tanh>());
    net_.collect_params(blocks_);
}

Tensor Generator::forward(const Tensor& x, nn::SeqTape* tape) const {
    if (x.c != 1) throw std::invalid_argument("generator: expects a single-channel image");
    if (x.h % 4 != 0 || x.w % 4 != 0)
        throw std::invalid_argument("generator: H and W must be divisible by 4");
    if (x.h < 8 || x.w < 8) throw std::invalid_argument("generator: input too small");
    return net_.forward(x, tape);
}

Tensor Generator::backward(const nn::SeqTape& tape, const Tensor& gy) {
    return net_.backward(tape, gy);
}

void Generator::zero_grad() {
    for (auto* b : blocks_) b->zero_grad();
}

void Generator::init_params(std::uint64_t seed) {
    Rng rng(seed);
    net_.init(rng);
}

std::size_t Generator::param_count() const { return count_blocks(blocks_); }
std::vector<double> Generator::flatten() const { return flatten_blocks(blocks_); }
void Generator::load_flat(const std::vector<double>& flat) { load_blocks(blocks_, flat); }

std::string Generator::describe() const {
    std::ostringstream os;
    os << "generator(w" << cfg_.base_width << ",r" << cfg_.res_blocks << ","
       << (dir_ == Direction::MRtoCT ? "mr2ct" : "ct2mr") << "):" << net_.describe();
    return os.str();
}

std::uint64_t Generator::arch_hash() const { return fnv1a64(describe()); }

// ---- Discriminator -------------------------------------------------------------

Discriminator::Discriminator(DiscriminatorConfig cfg) : cfg_(cfg) {
    const int w = cfg_.base_width;
    net_.add(std::make_unique<Conv2d>("d.c1", 1, w, 4, 2, 1));
    net_.add(std::make_unique<ReLU>(0.2));
    net_.add(std::make_unique<Conv2d>("d.c2", w, 2 * w, 4, 2, 1));
    net_.add(std::make_unique<InstanceNorm>(2 * w));
    net_.add(std::make_unique<ReLU>(0.2));
    net_.add(std::make_unique<Conv2d>("d.c3", 2 * w, 4 * w, 4, 2, 1));
    net_.add(std::make_unique<InstanceNorm>(4 * w));
    net_.add(std::make_unique<ReLU>(0.2));
    net_.add(std::make_unique<Conv2d>("d.c4", 4 * w, 8 * w, 4, 1, 1));
    net_.add(std::make_unique<InstanceNorm>(8 * w));
    net_.add(std::make_unique<ReLU>(0.2));
    net_.add(std::make_unique<Conv2d>("d.c5", 8 * w, 1, 4, 1, 1));
    net_.collect_params(blocks_);
}

int Discriminator::receptive_field() {
    static const int ks[5] = {4, 4, 4, 4, 4};
    static const int ss[5] = {2, 2, 2, 1, 1};
    int rf = 1, jump = 1;
    for (int i = 0; i < 5; ++i) {
        rf += (ks[i] - 1) * jump;
        jump *= ss[i];
    }
    return rf;
}

std::pair<int, int> Discriminator::map_dims(int h, int w) {
    static const int ks[5] = {4, 4, 4, 4, 4};
    static const int ss[5] = {2, 2, 2, 1, 1};
    int ch = h, cw = w;
    for (int i = 0; i < 5; ++i) {
        ch = (ch + 2 - ks[i]) / ss[i] + 1;
        cw = (cw + 2 - ks[i]) / ss[i] + 1;
        if (ch < 1 || cw < 1)
            throw std::invalid_argument(
                "discriminator: input smaller than one receptive field unit");
    }
    return {ch, cw};
}

Tensor Discriminator::forward(const Tensor& x, nn::SeqTape* tape) const {
    if (x.c != 1) throw std::invalid_argument("discriminator: expects a single-channel image");
    map_dims(x.h, x.w);  // validates the input size
    return net_.forward(x, tape);
}

Tensor Discriminator::backward(const nn::SeqTape& tape, const Tensor& gy) {
    return net_.backward(tape, gy);
}

void Discriminator::zero_grad() {
    for (auto* b : blocks_) b->zero_grad();
}

void Discriminator::init_params(std::uint64_t seed) {
    Rng rng(seed);
    net_.init(rng);
}

std::size_t Discriminator::param_count() const { return count_blocks(blocks_); }
std::vector<double> Discriminator::flatten() const { return flatten_blocks(blocks_); }
void Discriminator::load_flat(const std::vector<double>& flat) { load_blocks(blocks_, flat); }

std::string Discriminator::describe() const {
    std::ostringstream os;
    os << "patchgan(w" << cfg_.base_width << "):" << net_.describe();
    return os.str();
}

std::uint64_t Discriminator::arch_hash() const { return fnv1a64(describe()); }

// ---- UNet ----------------------------------------------------------------------

namespace {
std::unique_ptr<nn::Sequential> make_stage(const std::string& name, int in_ch, int out_ch) {
    auto s = std::make_unique<nn::Sequential>();
    s->add(std::make_unique<Conv2d>(name + ".a", in_ch, out_ch, 3, 1, 1));
    s->add(std::make_unique<ReLU>());
    s->add(std::make_unique<Conv2d>(name + ".b", out_ch, out_ch, 3, 1, 1));
    s->add(std::make_unique<ReLU>());
    return s;
}
}  // namespace

UNet::UNet(UNetConfig cfg) : cfg_(cfg) {
    const int w = cfg_.base_width;
    int in_ch = cfg_.in_channels;
    for (int i = 0; i < kLevels; ++i) {
        const int out_ch = w << i;
        enc_.push_back(std::move(*make_stage("u.enc" + std::to_string(i), in_ch, out_ch)));
        in_ch = out_ch;
    }
    bottom_ = std::move(*make_stage("u.bottom", w << (kLevels - 1), w << kLevels));
    for (int i = kLevels - 1; i >= 0; --i) {
        const int hi = w << (i + 1);
        const int lo = w << i;
        up_.push_back(std::make_unique<ConvTranspose2d>("u.up" + std::to_string(i), hi, lo, 2, 2,
                                                        0, 0));
        dec_.push_back(std::move(*make_stage("u.dec" + std::to_string(i), 2 * lo, lo)));
    }
    head_.add(std::make_unique<Conv2d>("u.head", w, cfg_.n_classes, 1, 1, 0));

    for (auto& e : enc_) e.collect_params(blocks_);
    bottom_.collect_params(blocks_);
    for (std::size_t i = 0; i < up_.size(); ++i) {
        up_[i]->collect_params(blocks_);
        dec_[i].collect_params(blocks_);
    }
    head_.collect_params(blocks_);
}

Tensor UNet::forward_logits(const Tensor& x, Tape* tape) const {
    if (x.c != cfg_.in_channels)
        throw std::invalid_argument("unet: channel count mismatch");
    if (x.h % 16 != 0 || x.w % 16 != 0)
        throw std::invalid_argument("unet: H and W must be divisible by 16");

    if (tape) {
        tape->enc.clear();
        tape->enc.resize(kLevels);
        tape->pool.clear();
        tape->pool.resize(kLevels);
        tape->up.clear();
        tape->up.resize(kLevels);
        tape->dec.clear();
        tape->dec.resize(kLevels);
        tape->skip_channels.clear();
    }

    std::vector<Tensor> skips;
    Tensor cur = x;
    for (int i = 0; i < kLevels; ++i) {
        Tensor s = enc_[i].forward(cur, tape ? &tape->enc[i] : nullptr);
        cur = pool_.forward(s, tape ? &tape->pool[i] : nullptr);
        skips.push_back(std::move(s));
    }
    cur = bottom_.forward(cur, tape ? &tape->bottom : nullptr);

    // up_/dec_ are stored top-down (deepest first); skips are bottom-up.
    for (int j = 0; j < kLevels; ++j) {
        const int level = kLevels - 1 - j;
        Tensor u = up_[static_cast<std::size_t>(j)]->forward(
            cur, tape ? &tape->up[static_cast<std::size_t>(j)] : nullptr);
        const Tensor& skip = skips[static_cast<std::size_t>(level)];
        if (u.h != skip.h || u.w != skip.w)
            throw std::invalid_argument("unet: skip dimensions disagree");
        Tensor cat(u.c + skip.c, u.h, u.w);
        std::copy(u.v.begin(), u.v.end(), cat.v.begin());
        std::copy(skip.v.begin(), skip.v.end(), cat.v.begin() + static_cast<std::ptrdiff_t>(u.size()));
        if (tape) tape->skip_channels.push_back(u.c);
        cur = dec_[static_cast<std::size_t>(j)].forward(cat,
                                                        tape ? &tape->dec[static_cast<std::size_t>(j)]
                                                             : nullptr);
    }
    return head_.forward(cur, tape ? &tape->head : nullptr);
}

Tensor UNet::forward(const Tensor& x) const { return nn::softmax_channels(forward_logits(x)); }

Tensor UNet::backward(const Tape& tape, const Tensor& glogits) {
    Tensor gcur = head_.backward(tape.head, glogits);
    std::vector<Tensor> gskips(kLevels);
    for (int j = kLevels - 1; j >= 0; --j) {
        const int level = kLevels - 1 - j;
        Tensor gcat = dec_[static_cast<std::size_t>(j)].backward(tape.dec[static_cast<std::size_t>(j)], gcur);
        const int uc = tape.skip_channels[static_cast<std::size_t>(j)];
        Tensor gu(uc, gcat.h, gcat.w);
        Tensor gskip(gcat.c - uc, gcat.h, gcat.w);
        std::copy(gcat.v.begin(), gcat.v.begin() + static_cast<std::ptrdiff_t>(gu.size()),
                  gu.v.begin());
        std::copy(gcat.v.begin() + static_cast<std::ptrdiff_t>(gu.size()), gcat.v.end(),
                  gskip.v.begin());
        gskips[static_cast<std::size_t>(level)] = std::move(gskip);
        gcur = up_[static_cast<std::size_t>(j)]->backward(*tape.up[static_cast<std::size_t>(j)], gu);
    }
    gcur = bottom_.backward(tape.bottom, gcur);
    for (int i = kLevels - 1; i >= 0; --i) {
        Tensor gs = pool_.backward(*tape.pool[static_cast<std::size_t>(i)], gcur);
        const Tensor& extra = gskips[static_cast<std::size_t>(i)];
        for (std::size_t k = 0; k < gs.size(); ++k) gs.v[k] += extra.v[k];
        gcur = enc_[static_cast<std::size_t>(i)].backward(tape.enc[static_cast<std::size_t>(i)], gs);
    }
    return gcur;
}

void UNet::zero_grad() {
    for (auto* b : blocks_) b->zero_grad();
}

void UNet::init_params(std::uint64_t seed) {
    Rng rng(seed);
    for (auto& e : enc_) e.init(rng);
    bottom_.init(rng);
    for (std::size_t i = 0; i < up_.size(); ++i) {
        up_[i]->init(rng);
        dec_[i].init(rng);
    }
    head_.init(rng);
}

std::size_t UNet::param_count() const { return count_blocks(blocks_); }
std::vector<double> UNet::flatten() const { return flatten_blocks(blocks_); }
void UNet::load_flat(const std::vector<double>& flat) { load_blocks(blocks_, flat); }

std::string UNet::describe() const {
    std::ostringstream os;
    os << "unet(w" << cfg_.base_width << ",in" << cfg_.in_channels << ",c" << cfg_.n_classes
       << ",lv" << kLevels << "):";
    for (const auto& e : enc_) os << e.describe();
    os << bottom_.describe();
    for (std::size_t i = 0; i < up_.size(); ++i) os << up_[i]->describe() << dec_[i].describe();
    os << head_.describe();
    return os.str();
}

std::uint64_t UNet::arch_hash() const { return fnv1a64(describe()); }

// ---- Blob container --------------------------------------------------------------

namespace {
constexpr char kMagic[8] = {'C', 'G', 'C', 'K', 'P', 'T', '0', '1'};
}

void BlobWriter::add_section(const std::string& name, const std::vector<double>& data) {
    sections.emplace_back(name, data);
}

void BlobWriter::write(const std::string& path) const {
    nlohmann::json manifest;
    try {
        manifest = manifest_json.empty() ? nlohmann::json::object()
                                         : nlohmann::json::parse(manifest_json);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint manifest is not valid JSON: ") + e.what());
    }
    nlohmann::json secs = nlohmann::json::array();
    for (const auto& [name, data] : sections)
        secs.push_back({{"name", name}, {"count", data.size()}});
    manifest["sections"] = secs;
    const std::string mbytes = manifest.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open checkpoint for writing: " + path);
    out.write(kMagic, sizeof(kMagic));
    const std::uint64_t mlen = mbytes.size();
    out.write(reinterpret_cast<const char*>(&mlen), sizeof(mlen));
    out.write(mbytes.data(), static_cast<std::streamsize>(mbytes.size()));
    for (const auto& [name, data] : sections)
        out.write(reinterpret_cast<const char*>(data.data()),
                  static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!out) throw FormatError("short write on checkpoint: " + path);
}

BlobReader BlobReader::read(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw FormatError("not a checkpoint file (bad magic): " + path);
    std::uint64_t mlen = 0;
    in.read(reinterpret_cast<char*>(&mlen), sizeof(mlen));
    if (!in || mlen > (1ULL << 30)) throw FormatError("corrupt checkpoint manifest: " + path);
    std::string mbytes(mlen, '\0');
    in.read(mbytes.data(), static_cast<std::streamsize>(mlen));
    if (!in) throw FormatError("truncated checkpoint manifest: " + path);

    BlobReader r;
    r.manifest_json = mbytes;
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(mbytes);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("corrupt checkpoint manifest JSON: ") + e.what());
    }
    for (const auto& s : manifest.at("sections")) {
        const std::string name = s.at("name").get<std::string>();
        const std::uint64_t count = s.at("count").get<std::uint64_t>();
        std::vector<double> data(count);
        in.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(count * sizeof(double)));
        if (!in) throw FormatError("truncated checkpoint section " + name + ": " + path);
        r.sections.emplace(name, std::move(data));
    }
    return r;
}

const std::vector<double>& BlobReader::section(const std::string& name) const {
    auto it = sections.find(name);
    if (it == sections.end()) throw FormatError("checkpoint lacks section: " + name);
    return it->second;
}

}  // namespace cyclegc
