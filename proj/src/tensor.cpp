#include "cyclegc/tensor.hpp"

#include "cyclegc/imaging.hpp"

namespace cyclegc {

Tensor image_to_tensor(const ImageGrid& g) {
    Tensor t(1, g.h, g.w);
    for (std::size_t i = 0; i < g.px.size(); ++i) t.v[i] = to_internal(g.px[i]);
    return t;
}

ImageGrid tensor_to_image(const Tensor& t, Modality modality) {
    ImageGrid g(t.h, t.w, modality);
    for (std::size_t i = 0; i < g.px.size(); ++i) {
        double v = to_external(t.v[i]);
        g.px[i] = v < 0.0 ? 0.0 : (v > 255.0 ? 255.0 : v);
    }
    return g;
}

}  // namespace cyclegc
