#include "cyclegc/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace cyclegc {

std::string to_string(Modality m) {
    switch (m) {
        case Modality::CT: return "CT";
        case Modality::MR: return "MR";
        case Modality::SynthCT: return "SYNTH_CT";
        case Modality::SynthMR: return "SYNTH_MR";
    }
    return "CT";
}

Modality modality_from_string(const std::string& s) {
    if (s == "CT") return Modality::CT;
    if (s == "MR") return Modality::MR;
    if (s == "SYNTH_CT") return Modality::SynthCT;
    if (s == "SYNTH_MR") return Modality::SynthMR;
    throw FormatError("unknown modality: " + s);
}

ImageGrid normalize_range(const std::vector<double>& raw, int h, int w, double lo, double hi,
                          Modality modality) {
    if (static_cast<std::size_t>(h) * w != raw.size())
        throw std::invalid_argument("normalize_range: size mismatch");
    ImageGrid g(h, w, modality);
    g.intensity_range = {lo, hi};
    const double scale = 255.0 / (hi - lo);
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const double v = raw[i];
        if (!std::isfinite(v)) throw InvalidDataError("normalize: non-finite intensity");
        g.px[i] = std::min(255.0, std::max(0.0, (v - lo) * scale));
    }
    return g;
}

ImageGrid normalize_ct(const std::vector<double>& raw, int h, int w) {
    return normalize_range(raw, h, w, -150.0, 350.0, Modality::CT);
}

ImageGrid normalize_mr(const std::vector<double>& raw, int h, int w) {
    return normalize_range(raw, h, w, 0.0, 100.0, Modality::MR);
}

std::vector<double> denormalize(const ImageGrid& g) {
    const double lo = g.intensity_range.first, hi = g.intensity_range.second;
    std::vector<double> raw(g.px.size());
    for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = lo + g.px[i] / 255.0 * (hi - lo);
    return raw;
}

namespace {

std::string index_name(const char* prefix, int i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s_%04d.png", prefix, i);
    return buf;
}

json load_meta(const std::string& dir) {
    const fs::path meta_path = fs::path(dir) / "meta.json";
    std::ifstream in(meta_path);
    if (!in) throw FormatError("missing meta.json in " + dir);
    json meta;
    try {
        in >> meta;
    } catch (const json::exception& e) {
        throw FormatError("malformed meta.json in " + dir + ": " + e.what());
    }
    if (!meta.contains("samples") || !meta["samples"].is_array())
        throw FormatError("meta.json lacks a samples array: " + dir);
    return meta;
}

}  // namespace

void save_dataset(const std::string& dir, const std::vector<PhantomSample>& samples,
                  const std::vector<std::uint64_t>& seeds) {
    fs::create_directories(dir);
    json meta;
    meta["format_version"] = 1;
    meta["class_names"] =
        samples.empty() ? phantom_class_names() : samples.front().labels.class_names;
    json items = json::array();
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        const int idx = static_cast<int>(i);
        write_png16((fs::path(dir) / index_name("ct", idx)).string(), s.ct);
        write_png16((fs::path(dir) / index_name("mr", idx)).string(), s.mr);
        write_png_labels((fs::path(dir) / index_name("lbl", idx)).string(), s.labels);
        if (s.ct.has_mask())
            write_png_mask((fs::path(dir) / index_name("msk", idx)).string(), s.ct.mask, s.ct.h,
                           s.ct.w);
        json item;
        item["index"] = idx;
        item["subject_id"] = s.subject_id;
        item["seed"] = i < seeds.size() ? seeds[i] : 0;
        item["pose"] = s.pose;
        items.push_back(item);
    }
    meta["samples"] = items;
    std::ofstream out(fs::path(dir) / "meta.json");
    out << meta.dump(2) << "\n";
}

std::vector<PhantomSample> load_dataset(const std::string& dir) {
    const json meta = load_meta(dir);
    std::vector<std::string> class_names = phantom_class_names();
    if (meta.contains("class_names")) class_names = meta["class_names"].get<std::vector<std::string>>();

    std::vector<PhantomSample> samples;
    int h = -1, w = -1;
    for (const auto& item : meta["samples"]) {
        const int idx = item.at("index").get<int>();
        PhantomSample s;
        s.ct = read_png16((fs::path(dir) / index_name("ct", idx)).string(), Modality::CT);
        s.mr = read_png16((fs::path(dir) / index_name("mr", idx)).string(), Modality::MR);
        s.labels = read_png_labels((fs::path(dir) / index_name("lbl", idx)).string(), class_names);
        s.subject_id = item.value("subject_id", 0);
        s.pose = item.value("pose", 0.0);
        const fs::path mask_path = fs::path(dir) / index_name("msk", idx);
        if (fs::exists(mask_path)) {
            int mh = 0, mw = 0;
            s.ct.mask = read_png_mask(mask_path.string(), mh, mw);
            s.mr.mask = s.ct.mask;
            if (mh != s.ct.h || mw != s.ct.w)
                throw FormatError("mask dimensions differ from slice: " + mask_path.string());
        }
        if (h < 0) {
            h = s.ct.h;
            w = s.ct.w;
        } else if (s.ct.h != h || s.ct.w != w) {
            throw FormatError("mixed slice dimensions in " + dir);
        }
        if (s.mr.h != s.ct.h || s.mr.w != s.ct.w || s.labels.h != s.ct.h || s.labels.w != s.ct.w)
            throw FormatError("ct/mr/label dimensions disagree in " + dir);
        samples.push_back(std::move(s));
    }
    return samples;
}

std::vector<ImageGrid> load_slices(const std::string& dir, Modality modality) {
    const json meta = load_meta(dir);
    const char* prefix = (modality == Modality::CT || modality == Modality::SynthCT) ? "ct" : "mr";
    std::vector<ImageGrid> slices;
    int h = -1, w = -1;
    for (const auto& item : meta["samples"]) {
        const int idx = item.at("index").get<int>();
        ImageGrid g = read_png16((fs::path(dir) / index_name(prefix, idx)).string(), modality);
        const fs::path mask_path = fs::path(dir) / index_name("msk", idx);
        if (fs::exists(mask_path)) {
            int mh = 0, mw = 0;
            g.mask = read_png_mask(mask_path.string(), mh, mw);
        }
        if (h < 0) {
            h = g.h;
            w = g.w;
        } else if (g.h != h || g.w != w) {
            throw FormatError("mixed slice dimensions in " + dir);
        }
        slices.push_back(std::move(g));
    }
    return slices;
}

void save_slices(const std::string& dir, const std::vector<ImageGrid>& slices) {
    fs::create_directories(dir);
    json meta;
    meta["format_version"] = 1;
    meta["class_names"] = phantom_class_names();
    json items = json::array();
    for (std::size_t i = 0; i < slices.size(); ++i) {
        const int idx = static_cast<int>(i);
        const char* prefix =
            (slices[i].modality == Modality::CT || slices[i].modality == Modality::SynthCT) ? "ct"
                                                                                            : "mr";
        write_png16((fs::path(dir) / index_name(prefix, idx)).string(), slices[i]);
        if (slices[i].has_mask())
            write_png_mask((fs::path(dir) / index_name("msk", idx)).string(), slices[i].mask,
                           slices[i].h, slices[i].w);
        json item;
        item["index"] = idx;
        item["subject_id"] = 0;
        item["seed"] = 0;
        item["pose"] = 0.0;
        item["modality"] = to_string(slices[i].modality);
        items.push_back(item);
    }
    meta["samples"] = items;
    std::ofstream out(fs::path(dir) / "meta.json");
    out << meta.dump(2) << "\n";
}

}  // namespace cyclegc
