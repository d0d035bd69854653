#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "cyclegc/experiment.hpp"
#include "cyclegc/imaging.hpp"
#include "cyclegc/metrics.hpp"
#include "cyclegc/phantom.hpp"
#include "cyclegc/segmentation.hpp"
#include "cyclegc/trainer.hpp"

namespace py = pybind11;
using namespace cyclegc;

namespace {

using DArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using IArray = py::array_t<int, py::array::c_style | py::array::forcecast>;

ImageGrid grid_from_array(const DArray& arr, Modality modality,
                          const py::object& mask = py::none()) {
    if (arr.ndim() != 2) throw std::invalid_argument("expected a 2D array");
    ImageGrid g(static_cast<int>(arr.shape(0)), static_cast<int>(arr.shape(1)), modality);
    std::copy(arr.data(), arr.data() + arr.size(), g.px.begin());
    if (!mask.is_none()) {
        const IArray m = mask.cast<IArray>();
        if (m.ndim() != 2 || m.shape(0) != arr.shape(0) || m.shape(1) != arr.shape(1))
            throw std::invalid_argument("mask shape must match the image");
        g.mask.resize(g.px.size());
        for (py::ssize_t i = 0; i < m.size(); ++i)
            g.mask[static_cast<std::size_t>(i)] = m.data()[i] ? 1 : 0;
    }
    return g;
}

DArray array_from_grid(const ImageGrid& g) {
    DArray arr({g.h, g.w});
    std::copy(g.px.begin(), g.px.end(), arr.mutable_data());
    return arr;
}

LabelGrid labels_from_array(const IArray& arr) {
    if (arr.ndim() != 2) throw std::invalid_argument("expected a 2D label array");
    LabelGrid l(static_cast<int>(arr.shape(0)), static_cast<int>(arr.shape(1)),
                phantom_class_names());
    std::copy(arr.data(), arr.data() + arr.size(), l.classes.begin());
    return l;
}

IArray array_from_labels(const LabelGrid& l) {
    IArray arr({l.h, l.w});
    std::copy(l.classes.begin(), l.classes.end(), arr.mutable_data());
    return arr;
}

TensorBatch batch_from_list(const py::list& images) {
    TensorBatch out;
    for (const auto& item : images) {
        const DArray a = item.cast<DArray>();
        if (a.ndim() != 2) throw std::invalid_argument("expected 2D arrays");
        Tensor t(1, static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
        std::copy(a.data(), a.data() + a.size(), t.v.begin());
        out.push_back(std::move(t));
    }
    return out;
}

py::dict sample_to_dict(const PhantomSample& s) {
    py::dict d;
    d["ct"] = array_from_grid(s.ct);
    d["mr"] = array_from_grid(s.mr);
    d["labels"] = array_from_labels(s.labels);
    d["subject_id"] = s.subject_id;
    d["pose"] = s.pose;
    return d;
}

TrainConfig config_from_kwargs(const py::kwargs& kw) {
    TrainConfig cfg = TrainConfig::profile_config(
        kw.contains("profile") ? kw["profile"].cast<std::string>() : "desk");
    auto get_long = [&](const char* name, long& field) {
        if (kw.contains(name)) field = kw[name].cast<long>();
    };
    auto get_int = [&](const char* name, int& field) {
        if (kw.contains(name)) field = kw[name].cast<int>();
    };
    get_long("total_iterations", cfg.total_iterations);
    get_long("fixed_phase_iterations", cfg.fixed_phase_iterations);
    get_long("checkpoint_interval", cfg.checkpoint_interval);
    get_int("batch_size", cfg.batch_size);
    get_int("gen_base_width", cfg.gen_base_width);
    get_int("disc_base_width", cfg.disc_base_width);
    get_int("pool_capacity", cfg.pool_capacity);
    if (kw.contains("base_lr")) cfg.base_lr = kw["base_lr"].cast<double>();
    if (kw.contains("lambda_cycle")) cfg.weights.lambda_cycle = kw["lambda_cycle"].cast<double>();
    if (kw.contains("lambda_gc")) cfg.weights.lambda_gc = kw["lambda_gc"].cast<double>();
    if (kw.contains("seed")) cfg.seed = kw["seed"].cast<std::uint64_t>();
    return cfg;
}

std::pair<Generator, Generator> generators_from_checkpoint(const std::string& path) {
    const TrainConfig cfg = config_from_checkpoint(path);
    Generator g_ct(GeneratorConfig{cfg.gen_base_width, 9}, Direction::MRtoCT);
    Generator g_mr(GeneratorConfig{cfg.gen_base_width, 9}, Direction::CTtoMR);
    load_generators(path, g_ct, g_mr);
    return {std::move(g_ct), std::move(g_mr)};
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Unpaired cross-modality image synthesis with a gradient-consistency loss";

    py::register_exception<InvalidDataError>(m, "InvalidDataError", PyExc_ValueError);
    py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);

    // ---- phantom ----
    m.def(
        "generate_phantom",
        [](std::uint64_t seed, int h, int w, double jitter, int sample_index) {
            return sample_to_dict(generate_phantom(seed, {h, w}, jitter, sample_index));
        },
        py::arg("subject_seed"), py::arg("h") = 64, py::arg("w") = 64,
        py::arg("pose_jitter") = 0.0, py::arg("sample_index") = 0);

    m.def(
        "make_unpaired_split",
        [](int n_subjects, std::uint64_t seed, int size, double jitter, int slices_per_subject,
           int max_ct, int max_mr) {
            SplitOptions opts;
            opts.size = {size, size};
            opts.pose_jitter = jitter;
            opts.slices_per_subject = slices_per_subject;
            opts.max_ct_slices = max_ct;
            opts.max_mr_slices = max_mr;
            const UnpairedSplit s = make_unpaired_split(n_subjects, seed, opts);
            py::dict d;
            py::list ct, mr, test;
            for (const auto& g : s.ct_train) ct.append(array_from_grid(g));
            for (const auto& g : s.mr_train) mr.append(array_from_grid(g));
            for (const auto& p : s.paired_test) test.append(sample_to_dict(p));
            d["ct_train"] = ct;
            d["mr_train"] = mr;
            d["paired_test"] = test;
            d["ct_subjects"] = s.ct_subjects;
            d["mr_subjects"] = s.mr_subjects;
            d["test_subjects"] = s.test_subjects;
            return d;
        },
        py::arg("n_subjects"), py::arg("split_seed"), py::arg("size") = 64,
        py::arg("pose_jitter") = 4.0, py::arg("slices_per_subject") = 4,
        py::arg("max_ct_slices") = -1, py::arg("max_mr_slices") = -1);

    // ---- imaging ----
    m.def(
        "normalize_ct",
        [](const DArray& raw) {
            std::vector<double> v(raw.data(), raw.data() + raw.size());
            return array_from_grid(
                normalize_ct(v, static_cast<int>(raw.shape(0)), static_cast<int>(raw.shape(1))));
        },
        py::arg("raw_hu"));
    m.def(
        "normalize_mr",
        [](const DArray& raw) {
            std::vector<double> v(raw.data(), raw.data() + raw.size());
            return array_from_grid(
                normalize_mr(v, static_cast<int>(raw.shape(0)), static_cast<int>(raw.shape(1))));
        },
        py::arg("raw"));

    // ---- metrics ----
    m.def(
        "ncc",
        [](const DArray& a, const DArray& b, const py::object& mask) {
            return ncc(grid_from_array(a, Modality::CT, mask), grid_from_array(b, Modality::CT));
        },
        py::arg("a"), py::arg("b"), py::arg("mask") = py::none());
    m.def(
        "gradient_correlation",
        [](const DArray& a, const DArray& b, const py::object& mask) {
            return gradient_correlation(grid_from_array(a, Modality::CT, mask),
                                        grid_from_array(b, Modality::CT));
        },
        py::arg("a"), py::arg("b"), py::arg("mask") = py::none());
    m.def(
        "mae",
        [](const DArray& a, const DArray& b, const py::object& mask) {
            return mae(grid_from_array(a, Modality::CT, mask), grid_from_array(b, Modality::CT));
        },
        py::arg("a"), py::arg("b"), py::arg("mask") = py::none());
    m.def(
        "psnr",
        [](const DArray& a, const DArray& b, const py::object& mask) {
            return psnr(grid_from_array(a, Modality::CT, mask), grid_from_array(b, Modality::CT));
        },
        py::arg("a"), py::arg("b"), py::arg("mask") = py::none());
    m.def(
        "mutual_information",
        [](const DArray& a, const DArray& b, int bins, const py::object& mask) {
            return mutual_information(grid_from_array(a, Modality::CT, mask),
                                      grid_from_array(b, Modality::CT), bins);
        },
        py::arg("a"), py::arg("b"), py::arg("bins") = 64, py::arg("mask") = py::none());
    m.def(
        "dice",
        [](const IArray& p, const IArray& g, int class_id) {
            return dice(labels_from_array(p), labels_from_array(g), class_id);
        },
        py::arg("pred"), py::arg("truth"), py::arg("class_id"));

    // ---- losses ----
    m.def(
        "adv_loss_discriminator",
        [](const py::list& real, const py::list& fake) {
            return adv_loss_discriminator(batch_from_list(real), batch_from_list(fake));
        },
        py::arg("real_scores"), py::arg("fake_scores"));
    m.def(
        "adv_loss_generator",
        [](const py::list& fake) { return adv_loss_generator(batch_from_list(fake)); },
        py::arg("fake_scores"));
    m.def(
        "cycle_loss",
        [](const py::list& x, const py::list& xr, const py::list& y, const py::list& yr) {
            return cycle_loss(batch_from_list(x), batch_from_list(xr), batch_from_list(y),
                              batch_from_list(yr));
        },
        py::arg("x"), py::arg("x_reconstructed"), py::arg("y"), py::arg("y_reconstructed"));
    m.def(
        "gc_loss",
        [](const py::list& x, const py::list& xs, const py::list& y, const py::list& ys) {
            return gc_loss(batch_from_list(x), batch_from_list(xs), batch_from_list(y),
                           batch_from_list(ys));
        },
        py::arg("x"), py::arg("x_synth_mr"), py::arg("y"), py::arg("y_synth_ct"));
    m.def(
        "total_loss",
        [](double adv_ct, double adv_mr, double cycle, double gc, double lambda_cycle,
           double lambda_gc) {
            const LossBreakdown b =
                total_loss(adv_ct, adv_mr, cycle, gc, LossWeights{lambda_cycle, lambda_gc});
            py::dict d;
            d["adv_ct"] = b.adv_ct;
            d["adv_mr"] = b.adv_mr;
            d["cycle"] = b.cycle;
            d["gc"] = b.gc;
            d["total"] = b.total;
            return d;
        },
        py::arg("adv_ct"), py::arg("adv_mr"), py::arg("cycle"), py::arg("gc"),
        py::arg("lambda_cycle") = 3.0, py::arg("lambda_gc") = 0.3);

    // ---- trainer ----
    m.def(
        "lr_at",
        [](long iteration, long total, long fixed, double base_lr) {
            TrainConfig cfg;
            cfg.total_iterations = total;
            cfg.fixed_phase_iterations = fixed;
            cfg.base_lr = base_lr;
            return lr_at(cfg, iteration);
        },
        py::arg("iteration"), py::arg("total_iterations") = 200000,
        py::arg("fixed_phase_iterations") = 100000, py::arg("base_lr") = 2e-4);

    m.def(
        "train_synthesis",
        [](const py::list& ct, const py::list& mr, const std::string& out_dir,
           const py::kwargs& kw) {
            const TrainConfig cfg = config_from_kwargs(kw);
            std::vector<ImageGrid> ct_grids, mr_grids;
            for (const auto& item : ct)
                ct_grids.push_back(grid_from_array(item.cast<DArray>(), Modality::CT));
            for (const auto& item : mr)
                mr_grids.push_back(grid_from_array(item.cast<DArray>(), Modality::MR));
            const TrainResult r = run_training(cfg, ct_grids, mr_grids, out_dir);
            py::dict d;
            d["final_checkpoint"] = r.final_checkpoint;
            d["log_path"] = r.log_path;
            d["last_total"] = r.last.total;
            return d;
        },
        py::arg("ct_images"), py::arg("mr_images"), py::arg("out_dir"));

    m.def(
        "synthesize",
        [](const std::string& checkpoint, const py::list& images, const std::string& direction) {
            auto [g_ct, g_mr] = generators_from_checkpoint(checkpoint);
            const bool to_ct = direction == "mr2ct";
            if (!to_ct && direction != "ct2mr")
                throw std::invalid_argument("direction must be mr2ct or ct2mr");
            std::vector<ImageGrid> grids;
            for (const auto& item : images)
                grids.push_back(
                    grid_from_array(item.cast<DArray>(), to_ct ? Modality::MR : Modality::CT));
            const auto out = synthesize_volume(to_ct ? g_ct : g_mr, grids);
            py::list result;
            for (const auto& g : out) result.append(array_from_grid(g));
            return result;
        },
        py::arg("checkpoint"), py::arg("images"), py::arg("direction"));

    // ---- segmentation ----
    m.def(
        "train_segmenter",
        [](const py::list& ct_images, const py::list& label_maps, const std::string& checkpoint,
           const std::string& model_out, const py::kwargs& kw) {
            SegTrainConfig cfg = SegTrainConfig::profile_config(
                kw.contains("profile") ? kw["profile"].cast<std::string>() : "desk");
            if (kw.contains("iterations")) cfg.iterations = kw["iterations"].cast<long>();
            if (kw.contains("lr")) cfg.lr = kw["lr"].cast<double>();
            if (kw.contains("seed")) cfg.seed = kw["seed"].cast<std::uint64_t>();
            if (kw.contains("base_width")) cfg.base_width = kw["base_width"].cast<int>();

            auto [g_ct, g_mr] = generators_from_checkpoint(checkpoint);
            std::vector<std::pair<ImageGrid, LabelGrid>> labeled;
            for (std::size_t i = 0; i < ct_images.size(); ++i)
                labeled.emplace_back(grid_from_array(ct_images[i].cast<DArray>(), Modality::CT),
                                     labels_from_array(label_maps[i].cast<IArray>()));
            const auto pairs = build_training_pairs(labeled, g_mr);
            SegTrainResult log;
            const UNet net = train_segmenter(pairs, cfg, &log);
            save_unet(net, cfg, model_out);
            py::dict d;
            d["model"] = model_out;
            d["first_loss"] = log.first_loss;
            d["last_loss"] = log.last_loss;
            return d;
        },
        py::arg("ct_images"), py::arg("label_maps"), py::arg("checkpoint"), py::arg("model_out"));

    m.def(
        "segment_mr",
        [](const std::string& model_path, const std::string& checkpoint, const py::list& mr) {
            const UNet net = load_unet(model_path);
            auto [g_ct, g_mr] = generators_from_checkpoint(checkpoint);
            std::vector<ImageGrid> grids;
            for (const auto& item : mr)
                grids.push_back(grid_from_array(item.cast<DArray>(), Modality::MR));
            const auto stacks = build_inference_pairs(grids, g_ct);
            py::list out;
            for (const auto& s : stacks)
                out.append(array_from_labels(segment(net, s, phantom_class_names())));
            return out;
        },
        py::arg("model"), py::arg("checkpoint"), py::arg("mr_images"));

    // ---- experiment ----
    m.def(
        "run_experiment",
        [](const std::string& plan_json, bool force) {
            const ExperimentResult r = run_experiment(ExperimentPlan::from_json(plan_json), force);
            py::dict d;
            d["output_dir"] = r.output_dir;
            d["comparison_csv"] = r.comparison_csv;
            d["per_item_csv"] = r.per_item_csv;
            return d;
        },
        py::arg("plan_json"), py::arg("force") = false);
    m.def("report_figures", &report_figures, py::arg("experiment_dir"), py::arg("out_dir"));

    m.attr("CLASS_NAMES") = phantom_class_names();
    m.attr("__version__") = "0.1.0";
}
