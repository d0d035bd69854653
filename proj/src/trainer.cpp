#include "cyclegc/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace cyclegc {

namespace {
constexpr double kAdamBeta1 = 0.5;  // adversarial-training convention
constexpr double kAdamBeta2 = 0.999;
}  // namespace

TrainConfig TrainConfig::profile_config(const std::string& name) {
    TrainConfig c;
    if (name == "paper") {
        c.profile = "paper";
    } else if (name == "desk") {
        c.profile = "desk";
        c.total_iterations = 2000;
        c.fixed_phase_iterations = 1000;
        c.checkpoint_interval = 500;
        c.gen_base_width = 8;
        c.disc_base_width = 8;
    } else {
        throw std::invalid_argument("unknown profile: " + name);
    }
    return c;
}

void TrainConfig::validate() const {
    if (total_iterations < 0 || fixed_phase_iterations < 0 || base_lr < 0.0 || batch_size < 1 ||
        checkpoint_interval < 1 || pool_capacity < 0)
        throw std::invalid_argument("train config: negative or zero-sized field");
    if (fixed_phase_iterations > total_iterations)
        throw std::invalid_argument("train config: fixed phase exceeds total iterations");
    if (weights.lambda_cycle < 0.0 || weights.lambda_gc < 0.0)
        throw std::invalid_argument("train config: loss weights must be non-negative");
}

double lr_at(const TrainConfig& config, long iteration) {
    if (iteration < 0 || iteration > config.total_iterations)
        throw std::invalid_argument("lr_at: iteration out of range");
    if (iteration <= config.fixed_phase_iterations) return config.base_lr;
    const double span =
        static_cast<double>(config.total_iterations - config.fixed_phase_iterations);
    return config.base_lr *
           (static_cast<double>(config.total_iterations - iteration) / span);
}

Tensor ImagePool::sample(const Tensor& fresh, Rng& rng) {
    if (capacity_ <= 0) return fresh;
    if (static_cast<int>(buf_.size()) < capacity_) {
        buf_.push_back(fresh);
        return fresh;
    }
    if (rng.uniform() < 0.5) return fresh;
    const int idx = rng.uniform_int(0, capacity_ - 1);
    Tensor out = buf_[static_cast<std::size_t>(idx)];
    buf_[static_cast<std::size_t>(idx)] = fresh;
    return out;
}

SynthesisTrainState::SynthesisTrainState(const TrainConfig& cfg)
    : config(cfg),
      g_ct(GeneratorConfig{cfg.gen_base_width, 9}, Direction::MRtoCT),
      g_mr(GeneratorConfig{cfg.gen_base_width, 9}, Direction::CTtoMR),
      d_ct(DiscriminatorConfig{cfg.disc_base_width}),
      d_mr(DiscriminatorConfig{cfg.disc_base_width}),
      adam_g_ct(kAdamBeta1, kAdamBeta2),
      adam_g_mr(kAdamBeta1, kAdamBeta2),
      adam_d_ct(kAdamBeta1, kAdamBeta2),
      adam_d_mr(kAdamBeta1, kAdamBeta2),
      pool_ct(cfg.pool_capacity),
      pool_mr(cfg.pool_capacity),
      rng(mix_seed(cfg.seed, 0x7EA1)) {
    config.validate();
}

void SynthesisTrainState::init_params() {
    g_ct.init_params(mix_seed(config.seed, 1));
    g_mr.init_params(mix_seed(config.seed, 2));
    d_ct.init_params(mix_seed(config.seed, 3));
    d_mr.init_params(mix_seed(config.seed, 4));
}

namespace {

void check_internal_range(const TensorBatch& batch, const char* who) {
    for (const auto& t : batch)
        for (double v : t.v)
            if (!(v >= -1.0 - 1e-9 && v <= 1.0 + 1e-9))
                throw InvalidDataError(std::string(who) +
                                       ": batch not in the internal [-1,1] range");
}

void check_finite(const LossBreakdown& b) {
    if (!std::isfinite(b.adv_ct) || !std::isfinite(b.adv_mr) || !std::isfinite(b.cycle) ||
        !std::isfinite(b.gc) || !std::isfinite(b.total))
        throw TrainingDivergedError("training diverged: non-finite loss", b);
}

}  // namespace

LossBreakdown train_step(SynthesisTrainState& state, const TensorBatch& ct_batch,
                         const TensorBatch& mr_batch) {
    if (ct_batch.empty() || mr_batch.empty())
        throw std::invalid_argument("train_step: empty batch");
    check_internal_range(ct_batch, "train_step(ct)");
    check_internal_range(mr_batch, "train_step(mr)");
    if (state.iteration >= state.config.total_iterations)
        throw std::invalid_argument("train_step: schedule exhausted");

    const double lr = lr_at(state.config, state.iteration);
    const double lambda_cycle = state.config.weights.lambda_cycle;
    const double lambda_gc = state.config.weights.lambda_gc;
    const std::size_t bx = ct_batch.size();
    const std::size_t by = mr_batch.size();

    // ---- forward ----
    std::vector<nn::SeqTape> tape_gmr_x(bx), tape_gct_xm(bx);  // x -> fake_mr -> rec_ct
    std::vector<nn::SeqTape> tape_gct_y(by), tape_gmr_yc(by);  // y -> fake_ct -> rec_mr
    TensorBatch fake_mr(bx), rec_ct(bx), fake_ct(by), rec_mr(by);
    for (std::size_t i = 0; i < bx; ++i) {
        fake_mr[i] = state.g_mr.forward(ct_batch[i], &tape_gmr_x[i]);
        rec_ct[i] = state.g_ct.forward(fake_mr[i], &tape_gct_xm[i]);
    }
    for (std::size_t j = 0; j < by; ++j) {
        fake_ct[j] = state.g_ct.forward(mr_batch[j], &tape_gct_y[j]);
        rec_mr[j] = state.g_mr.forward(fake_ct[j], &tape_gmr_yc[j]);
    }

    std::vector<nn::SeqTape> tape_dmr(bx), tape_dct(by);
    TensorBatch scores_mr(bx), scores_ct(by);
    for (std::size_t i = 0; i < bx; ++i)
        scores_mr[i] = state.d_mr.forward(fake_mr[i], &tape_dmr[i]);
    for (std::size_t j = 0; j < by; ++j)
        scores_ct[j] = state.d_ct.forward(fake_ct[j], &tape_dct[j]);

    // ---- generator losses ----
    TensorBatch g_scores_mr, g_scores_ct;
    const double adv_mr = adv_loss_generator(scores_mr, &g_scores_mr);
    const double adv_ct = adv_loss_generator(scores_ct, &g_scores_ct);

    TensorBatch g_rec_ct, g_rec_mr;
    const double cyc = cycle_loss(ct_batch, rec_ct, mr_batch, rec_mr, &g_rec_ct, &g_rec_mr);

    TensorBatch g_fake_mr_gc, g_fake_ct_gc;
    double gc = 0.0;
    if (lambda_gc > 0.0) {
        gc = gc_loss(ct_batch, fake_mr, mr_batch, fake_ct, &g_fake_mr_gc, &g_fake_ct_gc);
    } else {
        // Value still logged for the baseline arm; no gradient path.
        gc = gc_loss(ct_batch, fake_mr, mr_batch, fake_ct);
    }

    const LossBreakdown breakdown =
        total_loss(adv_ct, adv_mr, cyc, gc, state.config.weights);
    check_finite(breakdown);

    // ---- generator backward ----
    state.g_ct.zero_grad();
    state.g_mr.zero_grad();

    for (std::size_t i = 0; i < bx; ++i) {
        // Adversarial gradient reaches fake_mr through the (frozen) D_MR.
        Tensor g_fake = state.d_mr.backward(tape_dmr[i], g_scores_mr[i]);
        if (lambda_gc > 0.0)
            for (std::size_t k = 0; k < g_fake.size(); ++k)
                g_fake.v[k] += lambda_gc * g_fake_mr_gc[i].v[k];
        // Cycle gradient flows back through G_CT into fake_mr.
        Tensor g_rec = g_rec_ct[i];
        for (double& v : g_rec.v) v *= lambda_cycle;
        Tensor g_from_cycle = state.g_ct.backward(tape_gct_xm[i], g_rec);
        for (std::size_t k = 0; k < g_fake.size(); ++k) g_fake.v[k] += g_from_cycle.v[k];
        state.g_mr.backward(tape_gmr_x[i], g_fake);
    }
    for (std::size_t j = 0; j < by; ++j) {
        Tensor g_fake = state.d_ct.backward(tape_dct[j], g_scores_ct[j]);
        if (lambda_gc > 0.0)
            for (std::size_t k = 0; k < g_fake.size(); ++k)
                g_fake.v[k] += lambda_gc * g_fake_ct_gc[j].v[k];
        Tensor g_rec = g_rec_mr[j];
        for (double& v : g_rec.v) v *= lambda_cycle;
        Tensor g_from_cycle = state.g_mr.backward(tape_gmr_yc[j], g_rec);
        for (std::size_t k = 0; k < g_fake.size(); ++k) g_fake.v[k] += g_from_cycle.v[k];
        state.g_ct.backward(tape_gct_y[j], g_fake);
    }
    state.adam_g_ct.step(state.g_ct.blocks(), lr);
    state.adam_g_mr.step(state.g_mr.blocks(), lr);

    // ---- discriminator steps on pool-sampled fakes ----
    auto disc_step = [&](Discriminator& d, nn::Adam& adam, ImagePool& pool,
                         const TensorBatch& real, const TensorBatch& fakes) {
        TensorBatch pooled;
        pooled.reserve(fakes.size());
        for (const auto& f : fakes) pooled.push_back(pool.sample(f, state.rng));
        std::vector<nn::SeqTape> tr(real.size()), tf(pooled.size());
        TensorBatch sr(real.size()), sf(pooled.size());
        for (std::size_t i = 0; i < real.size(); ++i) sr[i] = d.forward(real[i], &tr[i]);
        for (std::size_t i = 0; i < pooled.size(); ++i) sf[i] = d.forward(pooled[i], &tf[i]);
        TensorBatch gr, gf;
        const double loss = adv_loss_discriminator(sr, sf, &gr, &gf);
        if (!std::isfinite(loss))
            throw TrainingDivergedError("training diverged: non-finite discriminator loss",
                                        LossBreakdown{});
        d.zero_grad();
        for (std::size_t i = 0; i < real.size(); ++i) d.backward(tr[i], gr[i]);
        for (std::size_t i = 0; i < pooled.size(); ++i) d.backward(tf[i], gf[i]);
        adam.step(d.blocks(), lr);
        return loss;
    };
    disc_step(state.d_mr, state.adam_d_mr, state.pool_mr, mr_batch, fake_mr);
    disc_step(state.d_ct, state.adam_d_ct, state.pool_ct, ct_batch, fake_ct);

    ++state.iteration;
    return breakdown;
}

std::vector<ImageGrid> synthesize_volume(const Generator& g, const std::vector<ImageGrid>& volume) {
    const Modality out_mod =
        g.direction() == Direction::MRtoCT ? Modality::SynthCT : Modality::SynthMR;
    std::vector<ImageGrid> out;
    out.reserve(volume.size());
    for (const auto& slice : volume) {
        ImageGrid s = tensor_to_image(g.forward(image_to_tensor(slice)), out_mod);
        s.mask = slice.mask;
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<ImageGrid> synthesize_volume(const std::function<Tensor(const Tensor&)>& fn,
                                         const std::vector<ImageGrid>& volume,
                                         Modality out_modality) {
    std::vector<ImageGrid> out;
    out.reserve(volume.size());
    for (const auto& slice : volume) {
        ImageGrid s = tensor_to_image(fn(image_to_tensor(slice)), out_modality);
        s.mask = slice.mask;
        out.push_back(std::move(s));
    }
    return out;
}

// ---- checkpointing -----------------------------------------------------------

namespace {

json config_to_json(const TrainConfig& c) {
    json j;
    j["total_iterations"] = c.total_iterations;
    j["fixed_phase_iterations"] = c.fixed_phase_iterations;
    j["base_lr"] = c.base_lr;
    j["batch_size"] = c.batch_size;
    j["lambda_cycle"] = c.weights.lambda_cycle;
    j["lambda_gc"] = c.weights.lambda_gc;
    j["seed"] = c.seed;
    j["checkpoint_interval"] = c.checkpoint_interval;
    j["gen_base_width"] = c.gen_base_width;
    j["disc_base_width"] = c.disc_base_width;
    j["pool_capacity"] = c.pool_capacity;
    j["profile"] = c.profile;
    return j;
}

void add_adam(BlobWriter& w, const std::string& prefix, const nn::Adam& adam) {
    std::vector<double> m, v;
    adam.serialize(m, v);
    w.add_section(prefix + "/m", m);
    w.add_section(prefix + "/v", v);
}

void add_pool(BlobWriter& w, json& manifest_pools, const std::string& name,
              const ImagePool& pool) {
    json meta = json::array();
    int idx = 0;
    for (const auto& t : pool.buffer()) {
        meta.push_back({{"c", t.c}, {"h", t.h}, {"w", t.w}});
        w.add_section("pool/" + name + "/" + std::to_string(idx), t.v);
        ++idx;
    }
    manifest_pools[name] = meta;
}

std::vector<Tensor> read_pool(const BlobReader& r, const json& manifest_pools,
                              const std::string& name) {
    std::vector<Tensor> out;
    if (!manifest_pools.contains(name)) return out;
    int idx = 0;
    for (const auto& meta : manifest_pools[name]) {
        Tensor t(meta.at("c").get<int>(), meta.at("h").get<int>(), meta.at("w").get<int>());
        t.v = r.section("pool/" + name + "/" + std::to_string(idx));
        ++idx;
        out.push_back(std::move(t));
    }
    return out;
}

}  // namespace

void save_state(const SynthesisTrainState& state, const std::string& path) {
    BlobWriter w;
    json manifest;
    manifest["kind"] = "synthesis_checkpoint";
    manifest["version"] = 1;
    manifest["iteration"] = state.iteration;
    manifest["config"] = config_to_json(state.config);
    manifest["arch"] = {{"g_ct", state.g_ct.arch_hash()},
                        {"g_mr", state.g_mr.arch_hash()},
                        {"d_ct", state.d_ct.arch_hash()},
                        {"d_mr", state.d_mr.arch_hash()}};
    manifest["adam_t"] = {{"g_ct", state.adam_g_ct.t()},
                          {"g_mr", state.adam_g_mr.t()},
                          {"d_ct", state.adam_d_ct.t()},
                          {"d_mr", state.adam_d_mr.t()}};
    manifest["rng"] = state.rng.serialize();
    json pools = json::object();

    w.add_section("params/g_ct", state.g_ct.flatten());
    w.add_section("params/g_mr", state.g_mr.flatten());
    w.add_section("params/d_ct", state.d_ct.flatten());
    w.add_section("params/d_mr", state.d_mr.flatten());
    add_adam(w, "adam/g_ct", state.adam_g_ct);
    add_adam(w, "adam/g_mr", state.adam_g_mr);
    add_adam(w, "adam/d_ct", state.adam_d_ct);
    add_adam(w, "adam/d_mr", state.adam_d_mr);
    add_pool(w, pools, "ct", state.pool_ct);
    add_pool(w, pools, "mr", state.pool_mr);
    manifest["pools"] = pools;

    w.manifest_json = manifest.dump();
    w.write(path);
}

void load_state(SynthesisTrainState& state, const std::string& path) {
    const BlobReader r = BlobReader::read(path);
    const json manifest = json::parse(r.manifest_json);
    if (manifest.value("kind", "") != "synthesis_checkpoint")
        throw FormatError("not a synthesis checkpoint: " + path);

    const auto check_arch = [&](const char* name, std::uint64_t expect) {
        const std::uint64_t got = manifest.at("arch").at(name).get<std::uint64_t>();
        if (got != expect)
            throw FormatError(std::string("checkpoint architecture mismatch for ") + name +
                              " (refusing to load)");
    };
    check_arch("g_ct", state.g_ct.arch_hash());
    check_arch("g_mr", state.g_mr.arch_hash());
    check_arch("d_ct", state.d_ct.arch_hash());
    check_arch("d_mr", state.d_mr.arch_hash());

    state.g_ct.load_flat(r.section("params/g_ct"));
    state.g_mr.load_flat(r.section("params/g_mr"));
    state.d_ct.load_flat(r.section("params/d_ct"));
    state.d_mr.load_flat(r.section("params/d_mr"));

    const auto load_adam = [&](nn::Adam& adam, const std::vector<nn::ParamBlock*>& blocks,
                               const std::string& prefix, const char* tname) {
        adam.bind(blocks);
        adam.deserialize(r.section(prefix + "/m"), r.section(prefix + "/v"),
                         manifest.at("adam_t").at(tname).get<long>());
    };
    load_adam(state.adam_g_ct, state.g_ct.blocks(), "adam/g_ct", "g_ct");
    load_adam(state.adam_g_mr, state.g_mr.blocks(), "adam/g_mr", "g_mr");
    load_adam(state.adam_d_ct, state.d_ct.blocks(), "adam/d_ct", "d_ct");
    load_adam(state.adam_d_mr, state.d_mr.blocks(), "adam/d_mr", "d_mr");

    state.pool_ct.restore(read_pool(r, manifest.at("pools"), "ct"));
    state.pool_mr.restore(read_pool(r, manifest.at("pools"), "mr"));
    state.rng.deserialize(manifest.at("rng").get<std::string>());
    state.iteration = manifest.at("iteration").get<long>();
}

TrainConfig config_from_checkpoint(const std::string& path) {
    const BlobReader r = BlobReader::read(path);
    const json manifest = json::parse(r.manifest_json);
    const json& c = manifest.at("config");
    TrainConfig cfg;
    cfg.total_iterations = c.at("total_iterations").get<long>();
    cfg.fixed_phase_iterations = c.at("fixed_phase_iterations").get<long>();
    cfg.base_lr = c.at("base_lr").get<double>();
    cfg.batch_size = c.at("batch_size").get<int>();
    cfg.weights.lambda_cycle = c.at("lambda_cycle").get<double>();
    cfg.weights.lambda_gc = c.at("lambda_gc").get<double>();
    cfg.seed = c.at("seed").get<std::uint64_t>();
    cfg.checkpoint_interval = c.at("checkpoint_interval").get<long>();
    cfg.gen_base_width = c.at("gen_base_width").get<int>();
    cfg.disc_base_width = c.at("disc_base_width").get<int>();
    cfg.pool_capacity = c.at("pool_capacity").get<int>();
    cfg.profile = c.value("profile", "paper");
    return cfg;
}

void load_generators(const std::string& path, Generator& g_ct, Generator& g_mr) {
    const BlobReader r = BlobReader::read(path);
    const json manifest = json::parse(r.manifest_json);
    const std::uint64_t hct = manifest.at("arch").at("g_ct").get<std::uint64_t>();
    const std::uint64_t hmr = manifest.at("arch").at("g_mr").get<std::uint64_t>();
    if (hct != g_ct.arch_hash() || hmr != g_mr.arch_hash())
        throw FormatError("checkpoint generator architecture mismatch (refusing to load)");
    g_ct.load_flat(r.section("params/g_ct"));
    g_mr.load_flat(r.section("params/g_mr"));
}

// ---- full loop -----------------------------------------------------------------

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

class EpochSampler {
public:
    EpochSampler(std::size_t n) : order_(n), cursor_(n) {
        std::iota(order_.begin(), order_.end(), 0);
    }
    std::size_t next(Rng& rng) {
        if (cursor_ >= order_.size()) {
            rng.shuffle(order_);
            cursor_ = 0;
        }
        return order_[cursor_++];
    }

private:
    std::vector<std::size_t> order_;
    std::size_t cursor_;
};

}  // namespace

TrainResult run_training(const TrainConfig& config, const std::vector<ImageGrid>& ct_dataset,
                         const std::vector<ImageGrid>& mr_dataset, const std::string& out_dir,
                         const TrainCallbacks& callbacks, const std::string& resume_checkpoint) {
    config.validate();
    if (ct_dataset.empty() || mr_dataset.empty())
        throw std::invalid_argument("run_training: empty dataset");

    fs::create_directories(out_dir);
    SynthesisTrainState state(config);
    if (resume_checkpoint.empty()) {
        state.init_params();
    } else {
        load_state(state, resume_checkpoint);
    }

    std::vector<Tensor> ct_tensors, mr_tensors;
    ct_tensors.reserve(ct_dataset.size());
    mr_tensors.reserve(mr_dataset.size());
    for (const auto& g : ct_dataset) ct_tensors.push_back(image_to_tensor(g));
    for (const auto& g : mr_dataset) mr_tensors.push_back(image_to_tensor(g));

    // The samplers replay deterministically: after a resume the loop below
    // re-draws iterations 0..k-1 so the stream position matches the original
    // run at iteration k (the checkpoint stores the state RNG, which drives
    // only the pools; data order is a separate stream keyed by the seed).
    Rng data_rng(mix_seed(config.seed, 0xDA7A));
    EpochSampler ct_sampler(ct_tensors.size());
    EpochSampler mr_sampler(mr_tensors.size());

    const std::string log_path = (fs::path(out_dir) / "train_log.csv").string();
    std::ofstream log;
    if (state.iteration == 0) {
        log.open(log_path);
        log << "iteration,adv_ct,adv_mr,cycle,gc,total,lr\n";
    } else {
        log.open(log_path, std::ios::app);
    }

    TrainResult result;
    result.log_path = log_path;

    auto draw_batch = [&](EpochSampler& sampler, const std::vector<Tensor>& pool) {
        TensorBatch batch;
        for (int b = 0; b < config.batch_size; ++b)
            batch.push_back(pool[sampler.next(data_rng)]);
        return batch;
    };

    for (long it = 0; it < config.total_iterations; ++it) {
        const TensorBatch ct_batch = draw_batch(ct_sampler, ct_tensors);
        const TensorBatch mr_batch = draw_batch(mr_sampler, mr_tensors);
        if (it < state.iteration) continue;  // replay for resume determinism

        const double lr = lr_at(config, it);
        const LossBreakdown b = train_step(state, ct_batch, mr_batch);
        log << it << "," << fmt_double(b.adv_ct) << "," << fmt_double(b.adv_mr) << ","
            << fmt_double(b.cycle) << "," << fmt_double(b.gc) << "," << fmt_double(b.total) << ","
            << fmt_double(lr) << "\n";
        result.last = b;
        if (callbacks.on_step) callbacks.on_step(it, b, lr);

        if (state.iteration % config.checkpoint_interval == 0 ||
            state.iteration == config.total_iterations) {
            char name[64];
            std::snprintf(name, sizeof(name), "ckpt_%08ld.bin", state.iteration);
            const std::string path = (fs::path(out_dir) / name).string();
            save_state(state, path);
            result.checkpoint_paths.push_back(path);
            if (callbacks.on_checkpoint) callbacks.on_checkpoint(state.iteration, path);
        }
    }
    log.flush();

    if (result.checkpoint_paths.empty() ||
        state.iteration != config.total_iterations) {
        const std::string path = (fs::path(out_dir) / "ckpt_final.bin").string();
        save_state(state, path);
        result.checkpoint_paths.push_back(path);
    }
    result.final_checkpoint = result.checkpoint_paths.back();
    return result;
}

}  // namespace cyclegc
