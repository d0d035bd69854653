#include "cyclegc/segmentation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

#include <json.hpp>

using nlohmann::json;

namespace cyclegc {

SegTrainConfig SegTrainConfig::profile_config(const std::string& name) {
    SegTrainConfig c;
    if (name == "paper") {
        c.profile = "paper";
    } else if (name == "desk") {
        c.profile = "desk";
        c.iterations = 2000;
        c.base_width = 8;
    } else {
        throw std::invalid_argument("unknown profile: " + name);
    }
    return c;
}

void SegTrainConfig::validate() const {
    if (iterations < 1 || lr < 0.0 || batch_size < 1 || base_width < 1 || n_classes < 2)
        throw std::invalid_argument("seg config: non-positive field");
}

namespace {

void require_ct_domain(Modality m, const char* who) {
    if (m != Modality::CT && m != Modality::SynthCT)
        throw std::invalid_argument(std::string(who) + ": channel 0 must be CT-domain");
}

void require_mr_domain(Modality m, const char* who) {
    if (m != Modality::MR && m != Modality::SynthMR)
        throw std::invalid_argument(std::string(who) + ": channel 1 must be MR-domain");
}

SegStack make_stack(const Tensor& ch0, Modality m0, const Tensor& ch1, Modality m1,
                    const char* who) {
    require_ct_domain(m0, who);
    require_mr_domain(m1, who);
    if (!(ch0.c == 1 && ch1.c == 1 && ch0.h == ch1.h && ch0.w == ch1.w))
        throw std::invalid_argument(std::string(who) + ": channel dimensions disagree");
    SegStack s;
    s.x = Tensor(2, ch0.h, ch0.w);
    std::copy(ch0.v.begin(), ch0.v.end(), s.x.v.begin());
    std::copy(ch1.v.begin(), ch1.v.end(), s.x.v.begin() + static_cast<std::ptrdiff_t>(ch0.size()));
    s.ch0 = m0;
    s.ch1 = m1;
    return s;
}

}  // namespace

std::vector<std::pair<SegStack, LabelGrid>> build_training_pairs(
    const std::vector<std::pair<ImageGrid, LabelGrid>>& labeled_ct, const Generator& g_mr) {
    if (g_mr.direction() != Direction::CTtoMR)
        throw std::invalid_argument("build_training_pairs: generator must map CT to MR");
    std::vector<std::pair<SegStack, LabelGrid>> out;
    out.reserve(labeled_ct.size());
    for (const auto& [ct, labels] : labeled_ct) {
        if (ct.h != labels.h || ct.w != labels.w)
            throw std::invalid_argument("build_training_pairs: image/label size mismatch");
        const Tensor ct_t = image_to_tensor(ct);
        const Tensor synth_mr = g_mr.forward(ct_t);
        out.emplace_back(make_stack(ct_t, Modality::CT, synth_mr, Modality::SynthMR,
                                    "build_training_pairs"),
                         labels);
    }
    return out;
}

std::vector<SegStack> build_inference_pairs(const std::vector<ImageGrid>& mr,
                                            const Generator& g_ct) {
    if (g_ct.direction() != Direction::MRtoCT)
        throw std::invalid_argument("build_inference_pairs: generator must map MR to CT");
    std::vector<SegStack> out;
    out.reserve(mr.size());
    for (const auto& m : mr) {
        const Tensor mr_t = image_to_tensor(m);
        const Tensor synth_ct = g_ct.forward(mr_t);
        out.push_back(
            make_stack(synth_ct, Modality::SynthCT, mr_t, Modality::MR, "build_inference_pairs"));
    }
    return out;
}

UNet train_segmenter(const std::vector<std::pair<SegStack, LabelGrid>>& pairs,
                     const SegTrainConfig& config, SegTrainResult* result) {
    config.validate();
    if (pairs.empty()) throw std::invalid_argument("train_segmenter: no training pairs");
    for (const auto& [stack, labels] : pairs) {
        require_ct_domain(stack.ch0, "train_segmenter");
        require_mr_domain(stack.ch1, "train_segmenter");
        for (int v : labels.classes)
            if (v < 0 || v >= config.n_classes)
                throw InvalidDataError("train_segmenter: class id outside [0, C)");
    }

    UNet net(UNetConfig{config.base_width, 2, config.n_classes});
    net.init_params(mix_seed(config.seed, 0x0E6));
    nn::Adam adam(0.9, 0.999);

    Rng data_rng(mix_seed(config.seed, 0xDA7A5E6));
    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t cursor = order.size();

    if (result) *result = SegTrainResult{};
    for (long it = 0; it < config.iterations; ++it) {
        net.zero_grad();
        double loss_acc = 0.0;
        for (int b = 0; b < config.batch_size; ++b) {
            if (cursor >= order.size()) {
                data_rng.shuffle(order);
                cursor = 0;
            }
            const auto& [stack, labels] = pairs[order[cursor++]];
            UNet::Tape tape;
            const Tensor logits = net.forward_logits(stack.x, &tape);
            Tensor glogits;
            const double loss = nn::cross_entropy_logits(logits, labels.classes, &glogits);
            if (!std::isfinite(loss))
                throw TrainingDivergedError("segmentation training diverged", LossBreakdown{});
            if (config.batch_size > 1)
                for (double& v : glogits.v) v /= static_cast<double>(config.batch_size);
            net.backward(tape, glogits);
            loss_acc += loss / static_cast<double>(config.batch_size);
        }
        adam.step(net.blocks(), config.lr);
        if (result) {
            if (it == 0) result->first_loss = loss_acc;
            result->last_loss = loss_acc;
            if (it % 100 == 0 || it == config.iterations - 1)
                result->loss_log.emplace_back(it, loss_acc);
        }
    }
    return net;
}

LabelGrid segment(const UNet& u, const SegStack& stack,
                  const std::vector<std::string>& class_names) {
    require_ct_domain(stack.ch0, "segment");
    require_mr_domain(stack.ch1, "segment");
    const Tensor probs = u.forward(stack.x);
    LabelGrid out(stack.x.h, stack.x.w, class_names);
    const std::size_t n = probs.plane();
    for (std::size_t i = 0; i < n; ++i) {
        int best = 0;
        double bv = probs.v[i];
        for (int c = 1; c < probs.c; ++c) {
            const double v = probs.v[static_cast<std::size_t>(c) * n + i];
            if (v > bv) {  // strict: ties keep the lower class index
                bv = v;
                best = c;
            }
        }
        out.classes[i] = best;
    }
    return out;
}

MetricReport evaluate_segmentation(const std::vector<LabelGrid>& preds,
                                   const std::vector<LabelGrid>& truths) {
    if (preds.size() != truths.size())
        throw std::invalid_argument("evaluate_segmentation: count mismatch");
    MetricReport report;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const int n_classes = std::max(preds[i].num_classes(), truths[i].num_classes());
        for (int c = 1; c < n_classes; ++c) {
            std::string cname = c < truths[i].num_classes() ? truths[i].class_names[static_cast<std::size_t>(c)]
                                                            : "class" + std::to_string(c);
            report.add("item" + std::to_string(i), "dice_" + cname,
                       dice(preds[i], truths[i], c));
        }
    }
    return report;
}

double foreground_mean_dice(const std::vector<LabelGrid>& preds,
                            const std::vector<LabelGrid>& truths) {
    const MetricReport r = evaluate_segmentation(preds, truths);
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& item : r.per_item) {
        s += item.value;
        ++n;
    }
    return n == 0 ? 0.0 : s / static_cast<double>(n);
}

void save_unet(const UNet& u, const SegTrainConfig& config, const std::string& path) {
    BlobWriter w;
    json manifest;
    manifest["kind"] = "unet_checkpoint";
    manifest["version"] = 1;
    manifest["arch"] = {{"unet", u.arch_hash()}};
    manifest["config"] = {{"iterations", config.iterations},
                          {"lr", config.lr},
                          {"batch_size", config.batch_size},
                          {"seed", config.seed},
                          {"base_width", config.base_width},
                          {"n_classes", config.n_classes},
                          {"profile", config.profile},
                          {"adam_betas", {0.9, 0.999}}};
    w.add_section("params/unet", u.flatten());
    w.manifest_json = manifest.dump();
    w.write(path);
}

UNet load_unet(const std::string& path) {
    const BlobReader r = BlobReader::read(path);
    const json manifest = json::parse(r.manifest_json);
    if (manifest.value("kind", "") != "unet_checkpoint")
        throw FormatError("not a unet checkpoint: " + path);
    const auto& cfg = manifest.at("config");
    UNet net(UNetConfig{cfg.at("base_width").get<int>(), 2, cfg.at("n_classes").get<int>()});
    if (manifest.at("arch").at("unet").get<std::uint64_t>() != net.arch_hash())
        throw FormatError("unet checkpoint architecture mismatch (refusing to load)");
    net.load_flat(r.section("params/unet"));
    return net;
}

}  // namespace cyclegc
