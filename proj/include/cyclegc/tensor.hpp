#pragma once

#include <cstddef>
#include <vector>

#include "cyclegc/image.hpp"

namespace cyclegc {

/// Dense CHW tensor of doubles. Batches are handled as std::vector<Tensor>;
/// the trainer's default batch size is 1 and per-image GEMMs are already
/// large enough to saturate the BLAS.
struct Tensor {
    int c = 0, h = 0, w = 0;
    std::vector<double> v;

    Tensor() = default;
    Tensor(int channels, int height, int width, double fill = 0.0)
        : c(channels), h(height), w(width),
          v(static_cast<std::size_t>(channels) * height * width, fill) {}

    std::size_t size() const { return v.size(); }
    std::size_t plane() const { return static_cast<std::size_t>(h) * w; }

    double* channel(int ci) { return v.data() + ci * plane(); }
    const double* channel(int ci) const { return v.data() + ci * plane(); }

    double& at(int ci, int y, int x) { return v[ci * plane() + static_cast<std::size_t>(y) * w + x]; }
    double at(int ci, int y, int x) const {
        return v[ci * plane() + static_cast<std::size_t>(y) * w + x];
    }

    bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }
};

/// [0,255] image -> single-channel tensor in the internal [-1,1] range.
Tensor image_to_tensor(const ImageGrid& g);

/// Internal-range tensor -> [0,255] image with the given modality tag.
ImageGrid tensor_to_image(const Tensor& t, Modality modality);

}  // namespace cyclegc
