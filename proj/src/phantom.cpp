#include "cyclegc/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace cyclegc {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Texture carrier frequencies per muscle structure, drawn once per subject.
struct TextureParams {
    double fx[3], fy[3], phase[3];
};

double clamp255(double v) { return std::min(255.0, std::max(0.0, v)); }

struct SceneExtras {
    std::vector<TextureParams> tex;  // parallel to scene.structures
};

// Stored alongside the scene; regenerated deterministically from the seed so
// PhantomScene itself stays a plain value type.
TextureParams draw_texture(Rng& rng) {
    TextureParams t{};
    for (int i = 0; i < 3; ++i) {
        t.fx[i] = rng.uniform(3.0, 8.0) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
        t.fy[i] = rng.uniform(3.0, 8.0) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
        t.phase[i] = rng.uniform(0.0, 2.0 * kPi);
    }
    return t;
}

void rotate_about(double& x, double& y, double cx, double cy, double rad) {
    const double dx = x - cx, dy = y - cy;
    const double c = std::cos(rad), s = std::sin(rad);
    x = cx + c * dx - s * dy;
    y = cy + s * dx + c * dy;
}

double max_radius(const ShapeDesc& s) {
    const double wob = 1.0 + std::abs(s.wobble_amp[0]) + std::abs(s.wobble_amp[1]);
    return std::max(s.rx, s.ry) * wob;
}

// Pushes same-tissue shapes apart so bone/bone and muscle/muscle boundaries
// never meet; cross-tissue contact keeps high contrast and is allowed.
void separate(ShapeDesc& a, ShapeDesc& b, double margin) {
    const double need = max_radius(a) + max_radius(b) + margin;
    double dx = b.cx - a.cx, dy = b.cy - a.cy;
    double d = std::sqrt(dx * dx + dy * dy);
    if (d >= need) return;
    if (d < 1e-9) {
        dx = 1.0;
        dy = 0.0;
        d = 1.0;
    }
    const double push = 0.5 * (need - d);
    a.cx -= push * dx / d;
    a.cy -= push * dy / d;
    b.cx += push * dx / d;
    b.cy += push * dy / d;
}

void clamp_inside(ShapeDesc& s) {
    const double r = max_radius(s);
    s.cx = std::min(1.0 - 0.02 - r, std::max(0.02 + r, s.cx));
    s.cy = std::min(1.0 - 0.02 - r, std::max(0.02 + r, s.cy));
}

SceneExtras scene_extras(std::uint64_t subject_seed) {
    Rng rng(mix_seed(subject_seed, 0x7e37));
    SceneExtras ex;
    ex.tex.resize(4);
    for (auto& t : ex.tex) t = draw_texture(rng);
    return ex;
}

}  // namespace

bool ShapeDesc::contains(double u, double v) const {
    double x = u, y = v;
    rotate_about(x, y, cx, cy, -theta);
    const double a = (x - cx) / rx;
    const double b = (y - cy) / ry;
    const double rho = std::sqrt(a * a + b * b);
    if (rho > 1.4) return false;
    const double phi = std::atan2(b, a);
    const double lim = 1.0 + wobble_amp[0] * std::cos(2.0 * phi + wobble_phase[0]) +
                       wobble_amp[1] * std::cos(3.0 * phi + wobble_phase[1]);
    return rho <= lim;
}

std::vector<std::string> phantom_class_names() {
    return {"background", "bone_a", "bone_b", "muscle_a", "muscle_b"};
}

PhantomScene make_scene(std::uint64_t subject_seed, double pose_jitter, int sample_index) {
    if (pose_jitter < 0.0) throw std::invalid_argument("make_scene: pose_jitter must be >= 0");

    Rng rng(mix_seed(subject_seed, 0xA11CE));
    PhantomScene scene;
    scene.subject_seed = subject_seed;
    scene.class_names = phantom_class_names();
    scene.ct_background = 20.0 + rng.uniform(-4.0, 4.0);
    scene.mr_background = 10.0 + rng.uniform(-3.0, 3.0);

    auto draw_shape = [&](double cx0, double cy0, double rlo, double rhi, double wob) {
        ShapeDesc s;
        s.cx = cx0 + rng.uniform(-0.03, 0.03);
        s.cy = cy0 + rng.uniform(-0.03, 0.03);
        s.rx = rng.uniform(rlo, rhi);
        s.ry = rng.uniform(rlo, rhi);
        s.theta = rng.uniform(0.0, kPi);
        s.wobble_amp[0] = rng.uniform(-wob, wob);
        s.wobble_amp[1] = rng.uniform(-wob * 0.6, wob * 0.6);
        s.wobble_phase[0] = rng.uniform(0.0, 2.0 * kPi);
        s.wobble_phase[1] = rng.uniform(0.0, 2.0 * kPi);
        return s;
    };

    // Paint order: muscles first, bones on top. Intensity palette keeps every
    // touching class pair at high contrast in both modalities.
    PhantomStructure muscle_a;
    muscle_a.class_id = 3;
    muscle_a.shape = draw_shape(0.32, 0.68, 0.10, 0.14, 0.10);
    muscle_a.ct_intensity = 110.0 + rng.uniform(-6.0, 6.0);
    muscle_a.mr_intensity = 190.0 + rng.uniform(-8.0, 8.0);
    muscle_a.texture_amplitude = rng.uniform(6.0, 9.0);

    PhantomStructure muscle_b;
    muscle_b.class_id = 4;
    muscle_b.shape = draw_shape(0.70, 0.70, 0.09, 0.12, 0.10);
    muscle_b.ct_intensity = 90.0 + rng.uniform(-6.0, 6.0);
    muscle_b.mr_intensity = 160.0 + rng.uniform(-8.0, 8.0);
    muscle_b.texture_amplitude = rng.uniform(6.0, 9.0);

    PhantomStructure bone_a;
    bone_a.class_id = 1;
    bone_a.shape = draw_shape(0.30, 0.36, 0.08, 0.12, 0.06);
    bone_a.ct_intensity = 230.0 + rng.uniform(-8.0, 8.0);
    bone_a.mr_intensity = 60.0 + rng.uniform(-5.0, 5.0);

    PhantomStructure bone_b;
    bone_b.class_id = 2;
    bone_b.shape = draw_shape(0.72, 0.38, 0.07, 0.11, 0.06);
    bone_b.ct_intensity = 200.0 + rng.uniform(-8.0, 8.0);
    bone_b.mr_intensity = 75.0 + rng.uniform(-5.0, 5.0);

    // MR bias surface coefficients for {u, v, u^2, v^2, uv} about the center.
    for (int i = 0; i < 5; ++i) scene.bias_coeff[i] = rng.uniform(-1.0, 1.0);

    // Pose draw keyed by (subject, sample); zero jitter keeps the rest pose.
    Rng pose_rng(mix_seed(subject_seed, 0x90513, static_cast<std::uint64_t>(sample_index)));
    scene.pose = pose_jitter == 0.0 ? 0.0 : pose_jitter * pose_rng.normal();
    const double tx = pose_jitter == 0.0 ? 0.0 : 0.004 * pose_jitter * pose_rng.normal();
    const double ty = pose_jitter == 0.0 ? 0.0 : 0.004 * pose_jitter * pose_rng.normal();
    const double rad = scene.pose * kPi / 180.0;

    auto apply_pose = [&](ShapeDesc& s, double deform_sigma) {
        rotate_about(s.cx, s.cy, 0.5, 0.5, rad);
        s.theta += rad;
        s.cx += tx;
        s.cy += ty;
        if (deform_sigma > 0.0 && pose_jitter > 0.0) {
            s.cx += deform_sigma * pose_rng.normal();
            s.cy += deform_sigma * pose_rng.normal();
        }
    };
    apply_pose(muscle_a.shape, 0.002 * pose_jitter);
    apply_pose(muscle_b.shape, 0.002 * pose_jitter);
    apply_pose(bone_a.shape, 0.0);
    apply_pose(bone_b.shape, 0.0);

    separate(muscle_a.shape, muscle_b.shape, 0.03);
    separate(bone_a.shape, bone_b.shape, 0.03);
    clamp_inside(muscle_a.shape);
    clamp_inside(muscle_b.shape);
    clamp_inside(bone_a.shape);
    clamp_inside(bone_b.shape);
    // Clamping can re-introduce contact in extreme poses; one more pass wins.
    separate(muscle_a.shape, muscle_b.shape, 0.03);
    separate(bone_a.shape, bone_b.shape, 0.03);

    scene.structures = {muscle_a, muscle_b, bone_a, bone_b};
    return scene;
}

PhantomSample generate_phantom(std::uint64_t subject_seed, std::pair<int, int> size,
                               double pose_jitter, int sample_index) {
    const int h = size.first, w = size.second;
    if (h < 32 || w < 32)
        throw std::invalid_argument("generate_phantom: size must be at least 32x32");
    if (pose_jitter < 0.0)
        throw std::invalid_argument("generate_phantom: pose_jitter must be >= 0");

    const PhantomScene scene = make_scene(subject_seed, pose_jitter, sample_index);
    const SceneExtras extras = scene_extras(subject_seed);

    PhantomSample out;
    out.subject_id = static_cast<int>(subject_seed);
    out.pose = scene.pose;
    out.ct = ImageGrid(h, w, Modality::CT);
    out.mr = ImageGrid(h, w, Modality::MR);
    out.labels = LabelGrid(h, w, scene.class_names);

    // Normalized bias surface with +-20% amplitude.
    const double* bc = scene.bias_coeff;
    const double bias_norm = 0.5 * std::abs(bc[0]) + 0.5 * std::abs(bc[1]) +
                             0.25 * std::abs(bc[2]) + 0.25 * std::abs(bc[3]) +
                             0.25 * std::abs(bc[4]) + 1e-9;

    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const double u = (c + 0.5) / w;
            const double v = (r + 0.5) / h;
            double ct_val = scene.ct_background;
            double mr_val = scene.mr_background;
            int cls = 0;
            int tex_idx = -1;
            for (std::size_t i = 0; i < scene.structures.size(); ++i) {
                const auto& st = scene.structures[i];
                if (st.shape.contains(u, v)) {
                    ct_val = st.ct_intensity;
                    mr_val = st.mr_intensity;
                    cls = st.class_id;
                    tex_idx = st.texture_amplitude > 0.0 ? static_cast<int>(i) : -1;
                }
            }
            if (tex_idx >= 0) {
                const auto& st = scene.structures[tex_idx];
                const auto& t = extras.tex[tex_idx];
                double tex = 0.0;
                for (int i = 0; i < 3; ++i)
                    tex += std::sin(2.0 * kPi * (t.fx[i] * u + t.fy[i] * v) + t.phase[i]);
                mr_val += st.texture_amplitude * tex / 3.0;
            }
            const double du = u - 0.5, dv = v - 0.5;
            const double bias = (bc[0] * du + bc[1] * dv + bc[2] * du * du + bc[3] * dv * dv +
                                 bc[4] * du * dv) / bias_norm;
            mr_val *= 1.0 + 0.2 * bias;
            out.ct.at(r, c) = ct_val;
            out.mr.at(r, c) = mr_val;
            out.labels.at(r, c) = cls;
        }
    }

    // Sensor noise: CT sigma = 2, MR sigma = 1, seeded per (subject, sample).
    Rng noise(mix_seed(subject_seed, 0x4015E, static_cast<std::uint64_t>(sample_index)));
    for (std::size_t i = 0; i < out.ct.px.size(); ++i) {
        out.ct.px[i] = clamp255(out.ct.px[i] + 2.0 * noise.normal());
        out.mr.px[i] = clamp255(out.mr.px[i] + 1.0 * noise.normal());
    }
    return out;
}

UnpairedSplit make_unpaired_split(int n_subjects, std::uint64_t split_seed,
                                  const SplitOptions& opts) {
    if (n_subjects < 3)
        throw std::invalid_argument(
            "make_unpaired_split: need at least 3 subjects for disjoint CT/MR/test groups");

    std::vector<int> ids(static_cast<std::size_t>(n_subjects));
    std::iota(ids.begin(), ids.end(), 0);
    Rng rng(mix_seed(split_seed, 0x5117));
    rng.shuffle(ids);

    int n_test = std::max(1, n_subjects / 5);
    int remain = n_subjects - n_test;
    int n_ct = std::max(1, (2 * remain + 2) / 3);
    if (remain - n_ct < 1) n_ct = remain - 1;
    const int n_mr = remain - n_ct;

    UnpairedSplit split;
    split.ct_subjects.assign(ids.begin(), ids.begin() + n_ct);
    split.mr_subjects.assign(ids.begin() + n_ct, ids.begin() + n_ct + n_mr);
    split.test_subjects.assign(ids.begin() + n_ct + n_mr, ids.end());

    auto subject_sample = [&](int id, int slice) {
        PhantomSample s = generate_phantom(mix_seed(split_seed, 0x5CE9E, static_cast<std::uint64_t>(id)),
                                           opts.size, opts.pose_jitter, slice);
        s.subject_id = id;
        return s;
    };

    for (int id : split.ct_subjects)
        for (int k = 0; k < opts.slices_per_subject; ++k) {
            PhantomSample s = subject_sample(id, k);
            split.ct_train.push_back(s.ct);
            split.ct_train_samples.push_back(std::move(s));
        }
    for (int id : split.mr_subjects)
        for (int k = 0; k < opts.slices_per_subject; ++k)
            split.mr_train.push_back(subject_sample(id, k).mr);
    for (int id : split.test_subjects)
        for (int k = 0; k < opts.test_slices_per_subject; ++k)
            split.paired_test.push_back(subject_sample(id, k));

    if (opts.max_ct_slices >= 0 && static_cast<int>(split.ct_train.size()) > opts.max_ct_slices) {
        split.ct_train.resize(static_cast<std::size_t>(opts.max_ct_slices));
        split.ct_train_samples.resize(static_cast<std::size_t>(opts.max_ct_slices));
    }
    if (opts.max_mr_slices >= 0 && static_cast<int>(split.mr_train.size()) > opts.max_mr_slices)
        split.mr_train.resize(static_cast<std::size_t>(opts.max_mr_slices));
    return split;
}

}  // namespace cyclegc
