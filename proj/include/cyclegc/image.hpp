#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cyclegc/common.hpp"

namespace cyclegc {

enum class Modality { CT, MR, SynthCT, SynthMR };

std::string to_string(Modality m);
Modality modality_from_string(const std::string& s);

/// 2D scalar intensity grid, the currency of every operation in this toolkit.
/// Pixels are stored row-major in [0, 255] once normalized. The optional mask
/// marks pixels that participate in metric evaluation; empty means all valid.
struct ImageGrid {
    int h = 0;
    int w = 0;
    std::vector<double> px;
    Modality modality = Modality::CT;
    std::vector<std::uint8_t> mask;            // empty or h*w entries (0/1)
    std::pair<double, double> intensity_range{0.0, 255.0};  // declared raw source range

    ImageGrid() = default;
    ImageGrid(int height, int width, Modality mod, double fill = 0.0)
        : h(height), w(width), px(static_cast<std::size_t>(height) * width, fill), modality(mod) {}

    double& at(int r, int c) { return px[static_cast<std::size_t>(r) * w + c]; }
    double at(int r, int c) const { return px[static_cast<std::size_t>(r) * w + c]; }

    bool has_mask() const { return !mask.empty(); }
    bool valid_at(int r, int c) const {
        return mask.empty() || mask[static_cast<std::size_t>(r) * w + c] != 0;
    }
    std::size_t size() const { return px.size(); }
};

/// 2D integer class map aligned with an ImageGrid. Class 0 is background.
struct LabelGrid {
    int h = 0;
    int w = 0;
    std::vector<int> classes;
    std::vector<std::string> class_names;  // size C; names[0] is background

    LabelGrid() = default;
    LabelGrid(int height, int width, std::vector<std::string> names)
        : h(height), w(width), classes(static_cast<std::size_t>(height) * width, 0),
          class_names(std::move(names)) {}

    int& at(int r, int c) { return classes[static_cast<std::size_t>(r) * w + c]; }
    int at(int r, int c) const { return classes[static_cast<std::size_t>(r) * w + c]; }
    int num_classes() const { return static_cast<int>(class_names.size()); }
};

}  // namespace cyclegc
